#pragma once

// Question encoding (q_B), question-time projection (q_t), and the entity/time
// embedding store with its random and TComplEx initializers.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "twirgcn/error.hpp"
#include "twirgcn/io.hpp"
#include "twirgcn/kg.hpp"
#include "twirgcn/optim.hpp"
#include "twirgcn/tensor.hpp"

namespace twirgcn {

inline constexpr const char* kUnkToken = "<unk>";

// Token ids for the question encoder. Id 0 is the UNK token; the rest come
// from the train split in first-seen order.
class TokenVocabulary {
 public:
  TokenVocabulary() { intern(kUnkToken); }

  static TokenVocabulary from_questions(const std::vector<QuestionInstance>& train) {
    TokenVocabulary v;
    for (const auto& q : train)
      for (const auto& tok : q.tokens) v.intern(tok);
    return v;
  }
  static TokenVocabulary from_list(const std::vector<std::string>& tokens) {
    TWIRGCN_REQUIRE(!tokens.empty() && tokens.front() == kUnkToken,
                    "token list must start with the UNK token");
    TokenVocabulary v;
    for (std::size_t i = 1; i < tokens.size(); ++i) v.intern(tokens[i]);
    return v;
  }

  std::size_t id(const std::string& tok) const {
    auto it = index_.find(tok);
    return it == index_.end() ? 0 : it->second;
  }
  // Empty input encodes as a single UNK.
  std::vector<std::size_t> ids(const std::vector<std::string>& toks) const {
    std::vector<std::size_t> out;
    for (const auto& t : toks) out.push_back(id(t));
    if (out.empty()) out.push_back(0);
    return out;
  }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  void intern(const std::string& tok) {
    if (index_.count(tok)) return;
    index_.emplace(tok, tokens_.size());
    tokens_.push_back(tok);
  }
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline void fill_normal(Tensor& t, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : t.values) v = dist(rng);
}

inline Tensor normal_tensor(Shape shape, double stddev, std::mt19937_64& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  fill_normal(t, stddev, rng);
  return t;
}

// Mean-of-token-embeddings encoder followed by a learned projection.
struct QuestionEncoderParams {
  Tensor token_table;  // |vocab| x d_q
  Tensor projection;   // d_q x d_q

  std::size_t dim() const { return projection.shape.at(0); }

  static QuestionEncoderParams init(std::size_t vocab_size, std::size_t dq, std::mt19937_64& rng) {
    QuestionEncoderParams p;
    p.token_table = normal_tensor({vocab_size, dq}, 1.0 / std::sqrt(static_cast<double>(dq)), rng);
    p.projection = normal_tensor({dq, dq}, 1.0 / std::sqrt(static_cast<double>(dq)), rng);
    return p;
  }
};

// q_B = projection * mean(token embeddings).
inline Var encode_question(Tape& tape, QuestionEncoderParams& enc,
                           const std::vector<std::size_t>& token_ids) {
  std::vector<std::size_t> ids = token_ids.empty() ? std::vector<std::size_t>{0} : token_ids;
  Var tokens = gather_rows(tape.param(enc.token_table), std::move(ids));
  return matmul(tape.param(enc.projection), mean(tokens, 0));
}

// q_t = W_tq * q_B.
inline Var question_time(Var w_tq, Var q_b) { return matmul(w_tq, q_b); }

enum class EmbeddingProvenance : std::uint32_t { kRandom = 0, kPretrained = 1 };

// Entity rows follow BackgroundKG::entities, with one trailing UNK row; time
// rows cover [min_year, max_year].
struct EmbeddingStore {
  Tensor entities;  // (|E| + 1) x d
  Tensor times;     // |T| x d
  EmbeddingProvenance provenance = EmbeddingProvenance::kRandom;

  std::size_t dim() const { return entities.shape.at(1); }
  std::size_t num_entities() const { return entities.shape.at(0) - 1; }
  std::size_t unk_row() const { return entities.shape.at(0) - 1; }
  std::size_t num_times() const { return times.shape.at(0); }

  bool all_finite() const {
    for (const Tensor* t : {&entities, &times})
      for (double v : t->values)
        if (!std::isfinite(v)) return false;
    return true;
  }
};

// Gaussian rows with mean 0 and standard deviation 1/sqrt(d).
inline EmbeddingStore init_random(const BackgroundKG& kg, std::size_t d, std::uint64_t seed) {
  TWIRGCN_REQUIRE(d > 0 && d % 2 == 0, "embedding dimension must be even and positive");
  std::mt19937_64 rng(seed);
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  EmbeddingStore s;
  s.entities = normal_tensor({kg.entities.size() + 1, d}, sd, rng);
  s.times = normal_tensor({kg.num_times(), d}, sd, rng);
  s.provenance = EmbeddingProvenance::kRandom;
  return s;
}

// ---- TComplEx ------------------------------------------------------------------

// Complex tables stored as separate real and imaginary halves (d/2 columns).
struct TComplexParams {
  Tensor ent_re, ent_im;    // (|E| + 1) x d/2, last row UNK
  Tensor rel_re, rel_im;    // |R| x d/2
  Tensor time_re, time_im;  // |T| x d/2

  std::vector<Tensor*> tensors() {
    return {&ent_re, &ent_im, &rel_re, &rel_im, &time_re, &time_im};
  }
  std::size_t rank() const { return ent_re.shape.at(1); }
  std::size_t num_candidates() const { return ent_re.shape.at(0) - 1; }
};

// One (subject, relation, object, year) training instant, as table rows.
struct TemporalTriple {
  std::size_t subject, relation, object, time;
  auto operator<=>(const TemporalTriple&) const = default;
};

// Yearly instants of an interval, at most `cap` of them, evenly spaced with
// both endpoints kept.
inline std::vector<Year> interval_instants(Year start, Year end, std::size_t cap = 16) {
  TWIRGCN_REQUIRE(start <= end && cap >= 2, "bad interval or instant cap");
  const auto len = static_cast<std::size_t>(end - start) + 1;
  std::vector<Year> out;
  if (len <= cap) {
    for (Year y = start; y <= end; ++y) out.push_back(y);
    return out;
  }
  for (std::size_t i = 0; i < cap; ++i) {
    const double frac = static_cast<double>(i) / static_cast<double>(cap - 1);
    const auto y = static_cast<Year>(std::lround(start + frac * (end - start)));
    if (out.empty() || out.back() != y) out.push_back(y);
  }
  return out;
}

inline std::vector<TemporalTriple> expand_instants(const BackgroundKG& kg, std::size_t cap = 16) {
  std::vector<TemporalTriple> out;
  for (const auto& f : kg.facts) {
    const auto s = kg.entity_row(f.subject), o = kg.entity_row(f.object);
    const auto r = kg.relation_row(f.relation);
    TWIRGCN_REQUIRE(s && o && r, "background fact outside its own vocabulary");
    for (Year y : interval_instants(f.start, f.end, cap))
      out.push_back({*s, *r, *o, *kg.time_row(y)});
  }
  return out;
}

// Re(<a, b, conj(c)>) for complex vectors given as real/imaginary spans.
inline double complex_trilinear(std::span<const double> a_re, std::span<const double> a_im,
                                std::span<const double> b_re, std::span<const double> b_im,
                                std::span<const double> c_re, std::span<const double> c_im) {
  double s = 0.0;
  for (std::size_t k = 0; k < a_re.size(); ++k) {
    const double ab_re = a_re[k] * b_re[k] - a_im[k] * b_im[k];
    const double ab_im = a_re[k] * b_im[k] + a_im[k] * b_re[k];
    s += ab_re * c_re[k] + ab_im * c_im[k];
  }
  return s;
}

// score(s, r, o, t) = Re(<u_s, v_r * w_t, conj(u_o)>).
inline double tcomplex_score(const TComplexParams& p, const TemporalTriple& x) {
  const std::size_t h = p.rank();
  std::vector<double> rt_re(h), rt_im(h);
  auto rr = p.rel_re.row(x.relation), ri = p.rel_im.row(x.relation);
  auto tr = p.time_re.row(x.time), ti = p.time_im.row(x.time);
  for (std::size_t k = 0; k < h; ++k) {
    rt_re[k] = rr[k] * tr[k] - ri[k] * ti[k];
    rt_im[k] = rr[k] * ti[k] + ri[k] * tr[k];
  }
  return complex_trilinear(p.ent_re.row(x.subject), p.ent_im.row(x.subject), rt_re, rt_im,
                           p.ent_re.row(x.object), p.ent_im.row(x.object));
}

// Scores of every candidate object for a batch of queries: (b x |E|).
inline Var tcomplex_object_scores(Tape& tape, TComplexParams& p,
                                  const std::vector<TemporalTriple>& batch) {
  std::vector<std::size_t> s, r, t;
  for (const auto& x : batch) {
    s.push_back(x.subject);
    r.push_back(x.relation);
    t.push_back(x.time);
  }
  Var ere = tape.param(p.ent_re), eim = tape.param(p.ent_im);
  Var sre = gather_rows(ere, s), sim = gather_rows(eim, s);
  Var rre = gather_rows(tape.param(p.rel_re), r), rim = gather_rows(tape.param(p.rel_im), r);
  Var tre = gather_rows(tape.param(p.time_re), t), tim = gather_rows(tape.param(p.time_im), t);
  // (s * r) * t, complex elementwise
  Var sr_re = sub(mul(sre, rre), mul(sim, rim));
  Var sr_im = add(mul(sre, rim), mul(sim, rre));
  Var q_re = sub(mul(sr_re, tre), mul(sr_im, tim));
  Var q_im = add(mul(sr_re, tim), mul(sr_im, tre));
  std::vector<std::size_t> cand(p.num_candidates());
  std::iota(cand.begin(), cand.end(), std::size_t{0});
  Var cre = gather_rows(ere, cand), cim = gather_rows(eim, cand);
  return add(matmul_nt(q_re, cre), matmul_nt(q_im, cim));
}

// Raw object-completion Hits@1 by exhaustive scoring of every candidate.
inline double tcomplex_completion_hits1(const TComplexParams& p,
                                        const std::vector<TemporalTriple>& triples) {
  if (triples.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& x : triples) {
    std::size_t best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t o = 0; o < p.num_candidates(); ++o) {
      TemporalTriple y = x;
      y.object = o;
      const double sc = tcomplex_score(p, y);
      if (sc > best_score) {
        best_score = sc;
        best = o;
      }
    }
    hits += best == x.object ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(triples.size());
}

struct PretrainOptions {
  double learning_rate = 0.1;  // Adagrad
  std::size_t batch_size = 128;
  double l2 = 0.0;
  std::size_t max_instants = 16;
};

struct PretrainResult {
  EmbeddingStore store;
  TComplexParams params;
  std::vector<double> epoch_losses;
};

namespace detail {

inline void split_halves(const Tensor& full, Tensor& re, Tensor& im) {
  const std::size_t n = full.shape.at(0), d = full.shape.at(1), h = d / 2;
  re = Tensor::zeros({n, h}, true);
  im = Tensor::zeros({n, h}, true);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < h; ++k) {
      re.at(i, k) = full.at(i, k);
      im.at(i, k) = full.at(i, h + k);
    }
}

inline Tensor join_halves(const Tensor& re, const Tensor& im) {
  const std::size_t n = re.shape.at(0), h = re.shape.at(1);
  Tensor full = Tensor::zeros({n, 2 * h});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < h; ++k) {
      full.at(i, k) = re.at(i, k);
      full.at(i, h + k) = im.at(i, k);
    }
  return full;
}

}  // namespace detail

// Trains TComplEx on the background KG with multiclass log-loss over objects.
// Initial tables are drawn exactly as init_random draws them, so zero epochs
// reproduces init_random under the same seed. Returned entity and time rows are
// [real | imaginary].
inline PretrainResult pretrain_tcomplex(const BackgroundKG& kg, std::size_t d, std::size_t epochs,
                                        std::uint64_t seed, const PretrainOptions& opt = {}) {
  TWIRGCN_REQUIRE(!kg.facts.empty(), "pretraining needs a non-empty background KG");
  EmbeddingStore init = init_random(kg, d, seed);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));

  PretrainResult res;
  TComplexParams& p = res.params;
  detail::split_halves(init.entities, p.ent_re, p.ent_im);
  detail::split_halves(init.times, p.time_re, p.time_im);
  Tensor rel = normal_tensor({kg.relations.size(), d}, sd, rng);
  detail::split_halves(rel, p.rel_re, p.rel_im);

  std::vector<TemporalTriple> data = expand_instants(kg, opt.max_instants);
  Adagrad optimizer(p.tensors());
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    std::shuffle(data.begin(), data.end(), rng);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t off = 0; off < data.size(); off += opt.batch_size) {
      std::vector<TemporalTriple> batch(
          data.begin() + static_cast<std::ptrdiff_t>(off),
          data.begin() + static_cast<std::ptrdiff_t>(std::min(data.size(), off + opt.batch_size)));
      std::vector<std::size_t> targets;
      for (const auto& x : batch) targets.push_back(x.object);
      Tape tape;
      Var loss = softmax_cross_entropy_rows(tcomplex_object_scores(tape, p, batch), targets);
      if (!std::isfinite(loss.item()))
        throw TrainingError("TComplEx pretraining diverged at epoch " + std::to_string(epoch) +
                            " (loss " + std::to_string(loss.item()) + ")");
      tape.backward(loss);
      if (opt.l2 > 0.0)
        for (Tensor* t : p.tensors())
          for (std::size_t i = 0; i < t->values.size(); ++i) t->grad[i] += opt.l2 * t->values[i];
      optimizer.step(opt.learning_rate);
      zero_grads(p.tensors());
      total += loss.item();
      ++batches;
    }
    res.epoch_losses.push_back(total / static_cast<double>(std::max<std::size_t>(batches, 1)));
  }

  res.store.entities = detail::join_halves(p.ent_re, p.ent_im);
  res.store.times = detail::join_halves(p.time_re, p.time_im);
  res.store.provenance = epochs == 0 ? EmbeddingProvenance::kRandom : EmbeddingProvenance::kPretrained;
  if (!res.store.all_finite()) throw TrainingError("TComplEx pretraining produced non-finite rows");
  return res;
}

// ---- embedding checkpoint ---------------------------------------------------------

inline constexpr char kEmbeddingMagic[8] = {'T', 'W', 'E', 'M', 'B', 'E', 'D', '1'};
inline constexpr std::uint32_t kEmbeddingVersion = 1;

// Binary layout: magic, version, provenance, d, entity rows (incl. UNK), time
// rows, min_year, max_year, then entity rows and time rows as f64.
inline void save_embeddings(const std::string& path, const EmbeddingStore& s,
                            const BackgroundKG& kg) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write " + path);
  io::Writer w(out);
  w.bytes({kEmbeddingMagic, 8});
  w.pod<std::uint32_t>(kEmbeddingVersion);
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(s.provenance));
  w.pod<std::uint64_t>(s.dim());
  w.pod<std::uint64_t>(s.entities.shape[0]);
  w.pod<std::uint64_t>(s.times.shape[0]);
  w.pod<std::int32_t>(kg.min_year);
  w.pod<std::int32_t>(kg.max_year);
  w.doubles(s.entities.values);
  w.doubles(s.times.values);
}

// Sidecar mapping embedding rows back to names.
inline void save_vocab_sidecar(const std::string& path, const BackgroundKG& kg,
                               const Vocabulary& vocab) {
  std::ofstream out(path);
  if (!out) throw CheckpointError("cannot write " + path);
  out << "#twirgcn-vocab\t1\n";
  out << "years\t" << kg.min_year << '\t' << kg.max_year << '\n';
  for (std::size_t i = 0; i < kg.entities.size(); ++i)
    out << "entity\t" << i << '\t' << vocab.name(kg.entities[i]) << '\n';
  out << "entity\t" << kg.entities.size() << '\t' << kUnkToken << '\n';
  for (std::size_t i = 0; i < kg.relations.size(); ++i)
    out << "relation\t" << i << '\t' << vocab.name(kg.relations[i]) << '\n';
}

struct LoadedEmbeddings {
  EmbeddingStore store;
  Year min_year = 0, max_year = 0;
  std::vector<std::string> entity_names;  // row order, UNK last
};

inline LoadedEmbeddings load_embeddings(const std::string& path, const std::string& sidecar) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path);
  io::Reader r(in);
  if (r.bytes(8) != std::string(kEmbeddingMagic, 8)) throw CheckpointError("bad embedding magic");
  if (r.pod<std::uint32_t>() != kEmbeddingVersion)
    throw CheckpointError("unsupported embedding version");
  LoadedEmbeddings out;
  out.store.provenance = static_cast<EmbeddingProvenance>(r.pod<std::uint32_t>());
  const auto d = r.pod<std::uint64_t>();
  const auto ne = r.pod<std::uint64_t>();
  const auto nt = r.pod<std::uint64_t>();
  out.min_year = r.pod<std::int32_t>();
  out.max_year = r.pod<std::int32_t>();
  if (d == 0 || ne == 0 || nt != static_cast<std::uint64_t>(out.max_year - out.min_year) + 1)
    throw CheckpointError("inconsistent embedding header");
  out.store.entities = Tensor({ne, d}, r.doubles(ne * d));
  out.store.times = Tensor({nt, d}, r.doubles(nt * d));

  std::ifstream side(sidecar);
  if (!side) throw CheckpointError("cannot open " + sidecar);
  std::string line;
  out.entity_names.assign(ne, "");
  while (std::getline(side, line)) {
    const auto f = detail::split_tabs(line);
    if (f.size() == 3 && f[0] == "entity") {
      const auto row = std::stoull(std::string(f[1]));
      if (row >= ne) throw CheckpointError("sidecar row out of range");
      out.entity_names[row] = std::string(f[2]);
    }
  }
  return out;
}

// Re-indexes a loaded store onto `kg`'s rows by name. Entities or years the
// file does not cover keep the rows of `fallback`.
inline EmbeddingStore align_embeddings(const LoadedEmbeddings& src, const BackgroundKG& kg,
                                       const Vocabulary& vocab, EmbeddingStore fallback) {
  TWIRGCN_REQUIRE(src.store.dim() == fallback.dim(), "embedding file dimension mismatch");
  std::unordered_map<std::string, std::size_t> rows;
  for (std::size_t i = 0; i < src.entity_names.size(); ++i) rows[src.entity_names[i]] = i;
  const std::size_t d = fallback.dim();
  for (std::size_t i = 0; i < kg.entities.size(); ++i) {
    auto it = rows.find(vocab.name(kg.entities[i]));
    if (it == rows.end()) continue;
    std::copy_n(src.store.entities.row(it->second).begin(), d, fallback.entities.row(i).begin());
  }
  if (auto it = rows.find(kUnkToken); it != rows.end())
    std::copy_n(src.store.entities.row(it->second).begin(), d,
                fallback.entities.row(fallback.unk_row()).begin());
  for (std::size_t t = 0; t < kg.num_times(); ++t) {
    const Year y = kg.year_at(t);
    if (y < src.min_year || y > src.max_year) continue;
    std::copy_n(src.store.times.row(static_cast<std::size_t>(y - src.min_year)).begin(), d,
                fallback.times.row(t).begin());
  }
  fallback.provenance = src.store.provenance;
  return fallback;
}

}  // namespace twirgcn
