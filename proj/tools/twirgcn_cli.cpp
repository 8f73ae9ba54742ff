// twirgcn: generate | pretrain | train | eval | analyze | ablate
//
// Exit status: 0 success, 1 runtime failure, 2 usage error. Failures print
// one line "error: code=<code> message=<text>" on stderr.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "twirgcn/ablation.hpp"
#include "twirgcn/encoders.hpp"
#include "twirgcn/evaluator.hpp"
#include "twirgcn/io.hpp"
#include "twirgcn/kg.hpp"
#include "twirgcn/model.hpp"
#include "twirgcn/synthgen.hpp"
#include "twirgcn/trainer.hpp"

namespace fs = std::filesystem;
using namespace twirgcn;

namespace {

struct UsageError : Error {
  explicit UsageError(const std::string& what) : Error("usage", what) {}
};

constexpr int kRuntimeFailure = 1;
constexpr int kUsageFailure = 2;

const char* const kConfigKeys[] = {
    "layers",        "batch_size_train", "batch_size_valid", "learning_rate", "lr_decay_factor",
    "lr_decay_every_epochs", "score_scale", "c_d",           "weighting_variant", "gating_enabled",
    "patience",      "max_epochs",       "embedding_init",   "embeddings_path", "dim",
    "bases",         "pretrain_epochs",  "optimizer",        "freeze_embeddings",
    "year_token_prior"};

std::string require_file(const std::string& path) {
  if (!fs::is_regular_file(path)) throw UsageError("no such file: " + path);
  return path;
}

std::string require_dataset(const std::string& dir) {
  for (const char* f : {"train.jsonl", "valid.jsonl", "test.jsonl"}) require_file(dir + "/" + f);
  return dir;
}

// Output directory: --out, else $TWIRGCN_OUTPUT_ROOT/<subcommand>, else runs/<subcommand>.
std::string prepare_output(std::string out, const std::string& sub, bool force) {
  if (out.empty()) {
    const char* root = std::getenv("TWIRGCN_OUTPUT_ROOT");
    out = (fs::path(root && *root ? root : "runs") / sub).string();
  }
  if (fs::exists(out) && !fs::is_directory(out)) throw UsageError(out + " exists and is not a directory");
  if (fs::exists(out) && !fs::is_empty(out) && !force)
    throw UsageError("output directory " + out + " is not empty; pass --force to overwrite");
  fs::create_directories(out);
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("io", "cannot write " + path);
  out << text;
}

// Config snapshot, seed and input hashes for one invocation.
void write_manifest(const std::string& dir, const std::string& sub, std::uint64_t seed,
                    const nlohmann::json& config, const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs) {
  nlohmann::json in = nlohmann::json::object();
  for (const auto& p : inputs) in[p] = io::file_hash(p);
  nlohmann::json j = {{"subcommand", sub}, {"seed", seed}, {"config", config},
                      {"inputs", in},      {"outputs", outputs}};
  write_text(dir + "/manifest.json", j.dump(2) + "\n");
}

std::vector<std::string> dataset_inputs(const std::string& dir) {
  return {dir + "/train.jsonl", dir + "/valid.jsonl", dir + "/test.jsonl"};
}

const std::vector<QuestionInstance>& split_of(const Dataset& d, const std::string& split) {
  if (split == "train") return d.train;
  if (split == "valid") return d.valid;
  if (split == "test") return d.test;
  throw UsageError("unknown split '" + split + "'");
}

// Training flags: `--<key> value` for every TrainingConfig key.
struct ConfigFlags {
  std::string config_path;
  std::map<std::string, std::string> values;
  std::uint64_t seed = 7;
  std::size_t workers = 1;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "key = value training config file");
    app->add_option("--seed", seed, "seed for every random draw");
    app->add_option("--workers", workers, "evaluation threads")->check(CLI::PositiveNumber);
    for (const char* key : kConfigKeys) app->add_option(std::string("--") + key, values[key]);
  }

  // Flag > config file > default.
  TrainingConfig resolve() const {
    TrainingConfig c;
    if (!config_path.empty()) {
      std::ifstream in(require_file(config_path));
      c = parse_config(in);
    }
    for (const auto& [k, v] : values)
      if (!v.empty()) apply_setting(c, k, v);
    c.seed = seed;
    c.workers = workers;
    c.validate();
    return c;
  }
};

int run(int argc, char** argv) {
  CLI::App app{"Temporally weighted RGCN for temporal KG question answering"};
  app.require_subcommand(1, 1);
  std::string out;
  bool force = false;
  auto common = [&](CLI::App* s) {
    s->add_option("--out", out, "output directory");
    s->add_flag("--force", force, "overwrite a non-empty output directory");
  };

  // generate
  auto* gen = app.add_subcommand("generate", "write a synthetic temporal KG question dataset");
  common(gen);
  WorldSpec ws;
  GenerationOptions go;
  std::uint64_t gen_seed = 7;
  gen->add_option("--seed", gen_seed);
  gen->add_option("--per-category", go.per_category);
  gen->add_option("--max-ordinal", go.max_ordinal);
  gen->add_option("--positions", ws.positions);
  gen->add_option("--holders", ws.holders_per_position);
  gen->add_option("--min-tenure", ws.min_tenure);
  gen->add_option("--athletes", ws.athletes);
  gen->add_option("--teams", ws.teams);
  gen->add_option("--awards", ws.awards);
  gen->add_option("--first-year", ws.first_year);
  gen->add_option("--last-year", ws.last_year);

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "TComplEx embeddings for the background KG");
  common(pre);
  std::string data;
  std::size_t pre_dim = 64, pre_epochs = 20;
  std::uint64_t pre_seed = 7;
  pre->add_option("--data", data)->required();
  pre->add_option("--dim", pre_dim);
  pre->add_option("--epochs", pre_epochs);
  pre->add_option("--seed", pre_seed);

  // train
  auto* tr = app.add_subcommand("train", "train a TwiRGCN model");
  common(tr);
  ConfigFlags train_flags;
  tr->add_option("--data", data)->required();
  train_flags.attach(tr);

  // eval
  auto* ev = app.add_subcommand("eval", "rank candidates and compute metrics");
  common(ev);
  ConfigFlags eval_flags;
  std::string model_path, split = "test";
  std::size_t top_k = 10;
  bool untrained = false;
  ev->add_option("--data", data)->required();
  ev->add_option("--model", model_path, "model checkpoint");
  ev->add_flag("--untrained", untrained, "evaluate a freshly initialized model instead");
  ev->add_option("--split", split);
  ev->add_option("--top-k", top_k)->check(CLI::Range(3, 100000));
  eval_flags.attach(ev);

  // analyze
  auto* an = app.add_subcommand("analyze", "question-time probe, confusion and overlap reports");
  common(an);
  std::string preds_path, compare_path;
  std::size_t an_workers = 1;
  an->add_option("--data", data)->required();
  an->add_option("--model", model_path)->required();
  an->add_option("--predictions", preds_path)->required();
  an->add_option("--compare", compare_path, "second prediction file for overlap counts");
  an->add_option("--split", split);
  an->add_option("--workers", an_workers);

  // ablate
  auto* ab = app.add_subcommand("ablate", "paired gated / fixed-mixing runs");
  common(ab);
  ConfigFlags ablate_flags;
  ab->add_option("--data", data)->required();
  ablate_flags.attach(ab);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: code=usage message=" << e.what() << "\n";
    return kUsageFailure;
  }

  if (gen->parsed()) {
    ws.seed = gen_seed;
    go.seed = gen_seed;
    const auto dir = prepare_output(out, "generate", force);
    auto world = generate_world(ws);
    auto qs = generate_questions(world, go);
    auto files = write_generated(dir, world, qs, go);
    write_manifest(dir, "generate", gen_seed, {{"world", ws.to_json()}, {"questions", go.to_json()}}, {},
                   files);
    std::cout << "wrote " << qs.train.size() << "/" << qs.valid.size() << "/" << qs.test.size()
              << " questions to " << dir << "\n";
    if (qs.skipped) std::cout << "skipped " << qs.skipped << " unsatisfiable templates\n";
  } else if (pre->parsed()) {
    auto d = load_dataset(require_dataset(data));
    const auto dir = prepare_output(out, "pretrain", force);
    auto res = pretrain_tcomplex(d.kg, pre_dim, pre_epochs, pre_seed);
    save_embeddings(dir + "/embeddings.bin", res.store, d.kg);
    save_vocab_sidecar(dir + "/embeddings.bin.vocab", d.kg, d.vocab);
    nlohmann::json losses = res.epoch_losses;
    write_text(dir + "/pretrain_log.json", losses.dump() + "\n");
    write_manifest(dir, "pretrain", pre_seed, {{"dim", pre_dim}, {"epochs", pre_epochs}},
                   dataset_inputs(data), {"embeddings.bin", "embeddings.bin.vocab", "pretrain_log.json"});
    std::cout << "wrote " << dir << "/embeddings.bin\n";
  } else if (tr->parsed()) {
    auto cfg = train_flags.resolve();
    auto d = load_dataset(require_dataset(data));
    if (cfg.embedding_init == EmbeddingInit::kFile) require_file(cfg.embeddings_path);
    const auto dir = prepare_output(out, "train", force);
    std::ofstream log(dir + "/epochs.tsv", std::ios::binary);
    log << kEpochLogHeader << "\n";
    auto run = train_model(cfg, d, [&](const EpochRecord& e) {
      log << epoch_to_tsv(e) << "\n";
      log.flush();
      std::cout << "epoch " << e.epoch << " lr " << e.learning_rate << " train_loss " << e.train_loss
                << " valid_hits1 " << e.valid_hits1 << "\n";
    });
    if (run.result.skipped_batches)
      std::cerr << "warning: skipped " << run.result.skipped_batches
                << " training batches without an answerable question\n";
    save_model(dir + "/model.bin", run.model);
    nlohmann::json summary = {{"best_epoch", run.result.best_epoch},
                              {"best_valid_hits1", run.result.best_valid_hits1},
                              {"stopped_early", run.result.stopped_early},
                              {"aborted", run.result.aborted},
                              {"abort_reason", run.result.abort_reason}};
    write_text(dir + "/summary.json", summary.dump(2) + "\n");
    auto inputs = dataset_inputs(data);
    if (cfg.embedding_init == EmbeddingInit::kFile) inputs.push_back(cfg.embeddings_path);
    write_manifest(dir, "train", cfg.seed, config_to_json(cfg), inputs,
                   {"model.bin", "epochs.tsv", "summary.json"});
    if (run.result.aborted) throw TrainingError(run.result.abort_reason);
  } else if (ev->parsed()) {
    if (untrained == !model_path.empty()) throw UsageError("eval needs exactly one of --model or --untrained");
    auto d = load_dataset(require_dataset(data));
    const auto& qs = split_of(d, split);
    std::optional<TwiRGCN> model;
    TrainingConfig cfg = eval_flags.resolve();
    if (untrained) model = initial_model(cfg, d);
    else model = load_model(require_file(model_path));
    const auto dir = prepare_output(out, "eval", force);
    auto prepared = prepare_questions(qs, d.vocab, *model);
    auto preds = predict_all(*model, prepared, top_k, cfg.workers);
    {
      std::ofstream p(dir + "/predictions.jsonl", std::ios::binary);
      write_predictions(p, preds);
    }
    auto metrics = compute_metrics(preds, gold_records(qs, d.vocab));
    auto j = metrics_to_json(metrics);
    j["candidates"] = model->vocab.num_candidates();
    write_text(dir + "/metrics.json", j.dump(2) + "\n");
    write_text(dir + "/metrics.txt", metrics_table(metrics));
    std::cout << metrics_table(metrics);
    auto inputs = dataset_inputs(data);
    if (!untrained) inputs.push_back(model_path);
    nlohmann::json c = {{"split", split}, {"top_k", top_k}, {"untrained", untrained}};
    if (untrained) c["training"] = config_to_json(cfg);
    write_manifest(dir, "eval", cfg.seed, c, inputs, {"predictions.jsonl", "metrics.json", "metrics.txt"});
  } else if (an->parsed()) {
    auto d = load_dataset(require_dataset(data));
    const auto& qs = split_of(d, split);
    auto model = load_model(require_file(model_path));
    std::ifstream pin(require_file(preds_path));
    auto preds = read_predictions(pin);
    const auto dir = prepare_output(out, "analyze", force);
    auto golds = gold_records(qs, d.vocab);
    MetricsReport m = compute_metrics(preds, golds);
    m.probe = question_time_probe(model, qs);
    if (m.probe->count == 0) std::cerr << "warning: no question in the split names a year; probe is empty\n";
    std::vector<std::string> inputs = dataset_inputs(data);
    inputs.push_back(model_path);
    inputs.push_back(preds_path);
    if (!compare_path.empty()) {
      std::ifstream cin_(require_file(compare_path));
      m.overlap = prediction_overlap(preds, read_predictions(cin_), golds);
      inputs.push_back(compare_path);
    }
    write_text(dir + "/analysis.json", metrics_to_json(m).dump(2) + "\n");
    write_text(dir + "/analysis.txt", metrics_table(m));
    std::cout << metrics_table(m);
    write_manifest(dir, "analyze", 0, {{"split", split}}, inputs, {"analysis.json", "analysis.txt"});
  } else if (ab->parsed()) {
    auto cfg = ablate_flags.resolve();
    auto d = load_dataset(require_dataset(data));
    const auto dir = prepare_output(out, "ablate", force);
    auto rep = run_ablation(cfg, d, initial_embeddings(cfg, d));
    write_text(dir + "/ablation.json", ablation_to_json(rep).dump(2) + "\n");
    write_text(dir + "/ablation.txt", ablation_table(rep));
    std::cout << ablation_table(rep);
    write_manifest(dir, "ablate", cfg.seed, config_to_json(cfg), dataset_inputs(data),
                   {"ablation.json", "ablation.txt"});
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const Error& e) {
    std::cerr << "error: code=" << e.code() << " message=" << e.what() << "\n";
    return e.code() == "usage" || e.code() == "config" ? kUsageFailure : kRuntimeFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: code=internal message=" << e.what() << "\n";
    return kRuntimeFailure;
  }
}
