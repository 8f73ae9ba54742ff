#pragma once

// Training configuration, learning-rate schedule and the supervised loop with
// early stopping on validation Hits@1.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <istream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "twirgcn/encoders.hpp"
#include "twirgcn/error.hpp"
#include "twirgcn/evaluator.hpp"
#include "twirgcn/kg.hpp"
#include "twirgcn/model.hpp"
#include "twirgcn/optim.hpp"

namespace twirgcn {

enum class EmbeddingInit { kRandom, kTComplex, kFile };
enum class OptimizerKind { kAdam, kSgd };

struct TrainingConfig {
  std::size_t layers = 2;
  std::size_t batch_size_train = 32;
  std::size_t batch_size_valid = 5;
  double learning_rate = 4e-5;
  double lr_decay_factor = 0.4;
  std::size_t lr_decay_every_epochs = 10;
  double score_scale = 30.0;
  double c_d = 3.0;
  EdgeWeighting weighting_variant = EdgeWeighting::kAverage;
  bool gating_enabled = true;
  std::size_t patience = 10;
  std::size_t max_epochs = 100;
  std::uint64_t seed = 7;
  EmbeddingInit embedding_init = EmbeddingInit::kRandom;
  std::string embeddings_path;  // checkpoint for EmbeddingInit::kFile
  std::size_t dim = 64;
  std::size_t bases = 8;
  std::size_t pretrain_epochs = 20;
  bool year_token_prior = true;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  bool freeze_embeddings = false;
  std::size_t workers = 1;  // validation threads

  void validate() const {
    auto fail = [](const std::string& why) { throw ConfigError(why); };
    if (layers < 1) fail("layers must be at least 1");
    if (batch_size_train < 1) fail("batch_size_train must be at least 1");
    if (batch_size_valid < 1) fail("batch_size_valid must be at least 1");
    if (!(learning_rate > 0) || !std::isfinite(learning_rate)) fail("learning_rate must be positive");
    if (!(lr_decay_factor > 0) || lr_decay_factor > 1) fail("lr_decay_factor must lie in (0, 1]");
    if (lr_decay_every_epochs < 1) fail("lr_decay_every_epochs must be at least 1");
    if (!(score_scale > 0)) fail("score_scale must be positive");
    if (!(c_d > 0)) fail("c_d must be positive");
    if (patience < 1) fail("patience must be at least 1");
    if (max_epochs < 1) fail("max_epochs must be at least 1");
    if (dim < 2 || dim % 2) fail("dim must be even and at least 2");
    if (bases < 1) fail("bases must be at least 1");
    if (workers < 1) fail("workers must be at least 1");
    if (embedding_init == EmbeddingInit::kFile && embeddings_path.empty())
      fail("embedding_init=file needs embeddings_path");
  }

  ModelConfig model_config() const {
    ModelConfig m;
    m.dim = dim;
    m.layers = layers;
    m.bases = bases;
    m.c_d = c_d;
    m.score_scale = score_scale;
    m.weighting = weighting_variant;
    m.gating = gating_enabled;
    m.year_token_prior = year_token_prior;
    return m;
  }
};

inline std::string_view to_string(EmbeddingInit e) {
  switch (e) {
    case EmbeddingInit::kRandom: return "random";
    case EmbeddingInit::kTComplex: return "tcomplex";
    case EmbeddingInit::kFile: return "file";
  }
  return "random";
}

namespace detail {

template <class T>
T parse_number(const std::string& key, const std::string& value) {
  std::istringstream in(value);
  T out{};
  in >> out;
  if (in.fail() || !in.eof()) throw ConfigError("invalid value '" + value + "' for " + key);
  if constexpr (std::is_unsigned_v<T>)
    if (!value.empty() && value[0] == '-') throw ConfigError("invalid value '" + value + "' for " + key);
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("invalid value '" + value + "' for " + key);
}

}  // namespace detail

inline void apply_setting(TrainingConfig& c, const std::string& key, const std::string& value) {
  using detail::parse_number;
  if (key == "layers") c.layers = parse_number<std::size_t>(key, value);
  else if (key == "batch_size_train") c.batch_size_train = parse_number<std::size_t>(key, value);
  else if (key == "batch_size_valid") c.batch_size_valid = parse_number<std::size_t>(key, value);
  else if (key == "learning_rate") c.learning_rate = parse_number<double>(key, value);
  else if (key == "lr_decay_factor") c.lr_decay_factor = parse_number<double>(key, value);
  else if (key == "lr_decay_every_epochs") c.lr_decay_every_epochs = parse_number<std::size_t>(key, value);
  else if (key == "score_scale") c.score_scale = parse_number<double>(key, value);
  else if (key == "c_d") c.c_d = parse_number<double>(key, value);
  else if (key == "weighting_variant") {
    auto w = parse_weighting(value);
    if (!w) throw ConfigError("invalid value '" + value + "' for weighting_variant");
    c.weighting_variant = *w;
  } else if (key == "gating_enabled") c.gating_enabled = detail::parse_bool(key, value);
  else if (key == "patience") c.patience = parse_number<std::size_t>(key, value);
  else if (key == "max_epochs") c.max_epochs = parse_number<std::size_t>(key, value);
  else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, value);
  else if (key == "embedding_init") {
    if (value == "random") c.embedding_init = EmbeddingInit::kRandom;
    else if (value == "tcomplex") c.embedding_init = EmbeddingInit::kTComplex;
    else if (value == "file") c.embedding_init = EmbeddingInit::kFile;
    else throw ConfigError("invalid value '" + value + "' for embedding_init");
  } else if (key == "embeddings_path") c.embeddings_path = value;
  else if (key == "dim") c.dim = parse_number<std::size_t>(key, value);
  else if (key == "bases") c.bases = parse_number<std::size_t>(key, value);
  else if (key == "pretrain_epochs") c.pretrain_epochs = parse_number<std::size_t>(key, value);
  else if (key == "year_token_prior") c.year_token_prior = detail::parse_bool(key, value);
  else if (key == "optimizer") {
    if (value == "adam") c.optimizer = OptimizerKind::kAdam;
    else if (value == "sgd") c.optimizer = OptimizerKind::kSgd;
    else throw ConfigError("invalid value '" + value + "' for optimizer");
  } else if (key == "freeze_embeddings") c.freeze_embeddings = detail::parse_bool(key, value);
  else if (key == "workers") c.workers = parse_number<std::size_t>(key, value);
  else throw ConfigError("unknown config key '" + key + "'");
}

// `key = value` lines; '#' starts a comment.
inline TrainingConfig parse_config(std::istream& in, TrainingConfig base = {}) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string{};
      return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    apply_setting(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  base.validate();
  return base;
}

inline nlohmann::json config_to_json(const TrainingConfig& c) {
  return {{"layers", c.layers},
          {"batch_size_train", c.batch_size_train},
          {"batch_size_valid", c.batch_size_valid},
          {"learning_rate", c.learning_rate},
          {"lr_decay_factor", c.lr_decay_factor},
          {"lr_decay_every_epochs", c.lr_decay_every_epochs},
          {"score_scale", c.score_scale},
          {"c_d", c.c_d},
          {"weighting_variant", std::string(to_string(c.weighting_variant))},
          {"gating_enabled", c.gating_enabled},
          {"patience", c.patience},
          {"max_epochs", c.max_epochs},
          {"seed", c.seed},
          {"embedding_init", std::string(to_string(c.embedding_init))},
          {"embeddings_path", c.embeddings_path},
          {"dim", c.dim},
          {"bases", c.bases},
          {"pretrain_epochs", c.pretrain_epochs},
          {"year_token_prior", c.year_token_prior},
          {"optimizer", c.optimizer == OptimizerKind::kAdam ? "adam" : "sgd"},
          {"freeze_embeddings", c.freeze_embeddings}};
}

// Learning rate used for the training epoch that follows `completed` epochs.
inline double learning_rate_at(const TrainingConfig& c, std::size_t completed) {
  const auto decays = static_cast<double>(completed / c.lr_decay_every_epochs);
  return c.learning_rate * std::pow(c.lr_decay_factor, decays);
}

// ---- model construction --------------------------------------------------------------

inline EmbeddingStore initial_embeddings(const TrainingConfig& c, const Dataset& d) {
  switch (c.embedding_init) {
    case EmbeddingInit::kRandom: return init_random(d.kg, c.dim, c.seed);
    case EmbeddingInit::kTComplex: return pretrain_tcomplex(d.kg, c.dim, c.pretrain_epochs, c.seed).store;
    case EmbeddingInit::kFile: {
      auto loaded = load_embeddings(c.embeddings_path, c.embeddings_path + ".vocab");
      if (loaded.store.dim() != c.dim)
        throw ConfigError("embedding file dimension " + std::to_string(loaded.store.dim()) +
                          " differs from dim " + std::to_string(c.dim));
      return align_embeddings(loaded, d.kg, d.vocab, init_random(d.kg, c.dim, c.seed));
    }
  }
  return init_random(d.kg, c.dim, c.seed);
}

inline TwiRGCN initial_model(const TrainingConfig& c, const Dataset& d, EmbeddingStore store) {
  c.validate();
  TwiRGCN m = make_model(c.model_config(), ModelVocab::from_dataset(d), std::move(store),
                         c.seed ^ 0x5bd1e9955bd1e995ULL);
  m.set_trainable(c.freeze_embeddings);
  return m;
}

inline TwiRGCN initial_model(const TrainingConfig& c, const Dataset& d) {
  return initial_model(c, d, initial_embeddings(c, d));
}

// ---- training loop -------------------------------------------------------------------

struct EpochRecord {
  std::size_t epoch = 0;  // 0 is the evaluation before any update
  double learning_rate = 0.0;
  double train_loss = 0.0;
  double valid_loss = 0.0;
  double valid_hits1 = 0.0;
  bool improved = false;
};

inline nlohmann::json epoch_to_json(const EpochRecord& e) {
  return {{"epoch", e.epoch},           {"learning_rate", e.learning_rate},
          {"train_loss", e.train_loss}, {"valid_loss", e.valid_loss},
          {"valid_hits1", e.valid_hits1}, {"improved", e.improved}};
}

inline constexpr const char* kEpochLogHeader =
    "epoch\ttrain_loss\tvalid_hits1\tlearning_rate\tvalid_loss\timproved";

// One tab-separated epoch log line, full precision, no trailing newline.
inline std::string epoch_to_tsv(const EpochRecord& e) {
  std::ostringstream out;
  out << std::setprecision(17) << e.epoch << '\t' << e.train_loss << '\t' << e.valid_hits1 << '\t'
      << e.learning_rate << '\t' << e.valid_loss << '\t' << (e.improved ? 1 : 0);
  return out.str();
}

struct TrainResult {
  std::vector<EpochRecord> log;
  std::size_t best_epoch = 0;
  double best_valid_hits1 = 0.0;
  bool stopped_early = false;
  bool aborted = false;
  std::string abort_reason;
  std::size_t skipped_batches = 0;  // batches with no answerable question
};

class Trainer {
 public:
  Trainer(TrainingConfig config, TwiRGCN& model, const std::vector<PreparedQuestion>& train,
          const std::vector<PreparedQuestion>& valid)
      : cfg_(std::move(config)), model_(model), train_(train), valid_(valid),
        params_(model.params.tensors()), adam_(params_), rng_(cfg_.seed ^ 0x2545f4914f6cdd1dULL) {
    cfg_.validate();
    TWIRGCN_REQUIRE(!train_.empty(), "no training questions");
  }

  // Mean loss over training questions with a gold candidate, no update.
  double train_loss() const {
    std::vector<double> losses(train_.size(), 0.0);
    std::vector<char> has(train_.size(), 0);
    parallel_for(train_.size(), cfg_.workers, [&](std::size_t i) {
      Tape tape(false);
      auto r = forward(tape, model_, train_[i]);
      if (r.loss) {
        losses[i] = r.loss->item();
        has[i] = 1;
      }
    });
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < losses.size(); ++i)
      if (has[i]) {
        sum += losses[i];
        ++n;
      }
    return n ? sum / static_cast<double>(n) : 0.0;
  }

  // One optimizer step on a batch; returns the batch mean loss.
  double update_step(const std::vector<std::size_t>& batch, double lr) {
    zero_grads(params_);
    std::size_t with_gold = 0;
    for (auto i : batch) with_gold += train_[i].gold.empty() ? 0 : 1;
    if (with_gold == 0) {
      ++skipped_batches_;
      return 0.0;
    }
    double sum = 0.0;
    for (auto i : batch) {
      if (train_[i].gold.empty()) continue;
      Tape tape;
      auto r = forward(tape, model_, train_[i]);
      const double l = r.loss->item();
      if (!std::isfinite(l)) throw TrainingError("non-finite loss on question " + train_[i].id);
      sum += l;
      tape.backward(*r.loss, 1.0 / static_cast<double>(with_gold));
    }
    require_finite_grads(params_);
    if (cfg_.optimizer == OptimizerKind::kAdam) adam_.step(lr);
    else sgd_step(params_, lr);
    for (Tensor* t : params_)
      for (double v : t->values)
        if (!std::isfinite(v)) throw TrainingError("non-finite parameter after update");
    return sum / static_cast<double>(with_gold);
  }

  // One pass over the shuffled training set; returns the mean batch loss.
  double run_epoch(double lr) {
    std::vector<std::size_t> order(train_.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng_);
    double sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg_.batch_size_train) {
      std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(b),
                                     order.begin() + static_cast<std::ptrdiff_t>(
                                                         std::min(order.size(), b + cfg_.batch_size_train)));
      sum += update_step(batch, lr);
      ++batches;
    }
    return batches ? sum / static_cast<double>(batches) : 0.0;
  }

  TrainResult train(const std::function<void(const EpochRecord&)>& on_epoch = {}) {
    TrainResult res;
    auto record = [&](EpochRecord e) {
      res.log.push_back(e);
      if (on_epoch) on_epoch(e);
    };

    EpochRecord e0;
    e0.learning_rate = learning_rate_at(cfg_, 0);
    e0.train_loss = train_loss();
    auto v0 = score_split(model_, valid_, cfg_.workers);
    e0.valid_loss = v0.loss;
    e0.valid_hits1 = v0.hits1;
    e0.improved = true;
    record(e0);
    res.best_valid_hits1 = v0.hits1;
    double best_loss = v0.loss;
    auto best = snapshot(model_);
    std::size_t since_best = 0;

    for (std::size_t epoch = 1; epoch <= cfg_.max_epochs; ++epoch) {
      EpochRecord e;
      e.epoch = epoch;
      e.learning_rate = learning_rate_at(cfg_, epoch - 1);
      try {
        e.train_loss = run_epoch(e.learning_rate);
      } catch (const TrainingError& err) {
        res.aborted = true;
        res.abort_reason = err.what();
        break;
      }
      auto v = score_split(model_, valid_, cfg_.workers);
      e.valid_loss = v.loss;
      e.valid_hits1 = v.hits1;
      e.improved = v.hits1 > res.best_valid_hits1 ||
                   (v.hits1 == res.best_valid_hits1 && v.loss < best_loss);
      record(e);
      if (e.improved) {
        res.best_valid_hits1 = v.hits1;
        best_loss = v.loss;
        res.best_epoch = epoch;
        best = snapshot(model_);
        since_best = 0;
      } else if (++since_best >= cfg_.patience) {
        res.stopped_early = true;
        break;
      }
    }
    restore(model_, best);
    res.skipped_batches = skipped_batches_;
    return res;
  }

 private:
  TrainingConfig cfg_;
  TwiRGCN& model_;
  const std::vector<PreparedQuestion>& train_;
  const std::vector<PreparedQuestion>& valid_;
  std::vector<Tensor*> params_;
  Adam adam_;
  std::mt19937_64 rng_;
  std::size_t skipped_batches_ = 0;
};

// Model plus prepared splits for one dataset.
struct TrainingRun {
  TwiRGCN model;
  std::vector<PreparedQuestion> train, valid, test;
  TrainResult result;
};

inline TrainingRun train_model(const TrainingConfig& cfg, const Dataset& d, EmbeddingStore store,
                               const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  TrainingRun run;
  run.model = initial_model(cfg, d, std::move(store));
  run.train = prepare_questions(d.train, d.vocab, run.model);
  run.valid = prepare_questions(d.valid, d.vocab, run.model);
  run.test = prepare_questions(d.test, d.vocab, run.model);
  Trainer t(cfg, run.model, run.train, run.valid);
  run.result = t.train(on_epoch);
  return run;
}

inline TrainingRun train_model(const TrainingConfig& cfg, const Dataset& d,
                               const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  return train_model(cfg, d, initial_embeddings(cfg, d), on_epoch);
}

}  // namespace twirgcn
