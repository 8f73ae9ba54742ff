#pragma once

// TwiRGCN: relational graph convolution whose messages are scaled by a
// question-dependent temporal edge weight, pooled into entity and time
// predictions that are mixed by an answer-type gate and scored against every
// entity and time embedding.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "twirgcn/encoders.hpp"
#include "twirgcn/error.hpp"
#include "twirgcn/io.hpp"
#include "twirgcn/kg.hpp"
#include "twirgcn/tensor.hpp"

namespace twirgcn {

enum class EdgeWeighting : std::uint32_t { kAverage = 0, kInterval = 1 };

inline std::string_view to_string(EdgeWeighting w) {
  return w == EdgeWeighting::kAverage ? "average" : "interval";
}

inline std::optional<EdgeWeighting> parse_weighting(std::string_view s) {
  if (s == "average") return EdgeWeighting::kAverage;
  if (s == "interval") return EdgeWeighting::kInterval;
  return std::nullopt;
}

struct ModelConfig {
  std::size_t dim = 64;  // d, also d_q
  std::size_t layers = 2;
  std::size_t bases = 8;
  double c_d = 3.0;
  double score_scale = 30.0;
  EdgeWeighting weighting = EdgeWeighting::kAverage;
  bool gating = true;
  bool year_token_prior = true;
};

// Names behind every parameter row, persisted with the model.
class ModelVocab {
 public:
  ModelVocab() = default;
  ModelVocab(std::vector<std::string> entities, std::vector<std::string> relations,
             TokenVocabulary tokens, Year min_year, Year max_year)
      : entities_(std::move(entities)),
        relations_(std::move(relations)),
        tokens_(std::move(tokens)),
        min_year_(min_year),
        max_year_(max_year) {
    TWIRGCN_REQUIRE(min_year_ <= max_year_, "empty year range");
    for (std::size_t i = 0; i < entities_.size(); ++i) entity_index_[entities_[i]] = i;
    for (std::size_t i = 0; i < relations_.size(); ++i) relation_index_[relations_[i]] = i;
  }

  static ModelVocab from_dataset(const Dataset& d) {
    std::vector<std::string> ents, rels;
    for (EntityId e : d.kg.entities) ents.push_back(d.vocab.name(e));
    for (RelationId r : d.kg.relations) rels.push_back(d.vocab.name(r));
    return ModelVocab(std::move(ents), std::move(rels), TokenVocabulary::from_questions(d.train),
                      d.kg.min_year, d.kg.max_year);
  }

  std::optional<std::size_t> entity_row(const std::string& name) const {
    auto it = entity_index_.find(name);
    if (it == entity_index_.end()) return std::nullopt;
    return it->second;
  }
  std::optional<std::size_t> relation_row(const std::string& name) const {
    auto it = relation_index_.find(name);
    if (it == relation_index_.end()) return std::nullopt;
    return it->second;
  }
  std::optional<std::size_t> time_row(Year y) const {
    if (y < min_year_ || y > max_year_) return std::nullopt;
    return static_cast<std::size_t>(y - min_year_);
  }
  std::size_t clamped_time_row(Year y) const {
    return static_cast<std::size_t>(std::clamp(y, min_year_, max_year_) - min_year_);
  }

  const std::vector<std::string>& entities() const { return entities_; }
  const std::vector<std::string>& relations() const { return relations_; }
  const TokenVocabulary& tokens() const { return tokens_; }
  Year min_year() const { return min_year_; }
  Year max_year() const { return max_year_; }
  std::size_t num_entities() const { return entities_.size(); }
  std::size_t num_times() const { return static_cast<std::size_t>(max_year_ - min_year_) + 1; }
  std::size_t num_candidates() const { return num_entities() + num_times(); }
  // Forward and inverse direction for each relation plus an UNK relation.
  std::size_t num_relation_params() const { return 2 * (relations_.size() + 1); }
  std::size_t unk_relation_row() const { return relations_.size(); }

  std::uint64_t hash() const {
    std::vector<std::string> all;
    all.push_back("entities");
    all.insert(all.end(), entities_.begin(), entities_.end());
    all.push_back("relations");
    all.insert(all.end(), relations_.begin(), relations_.end());
    all.push_back("tokens");
    all.insert(all.end(), tokens_.tokens().begin(), tokens_.tokens().end());
    all.push_back(std::to_string(min_year_) + ":" + std::to_string(max_year_));
    return io::hash_strings(all);
  }

 private:
  std::vector<std::string> entities_, relations_;
  TokenVocabulary tokens_;
  Year min_year_ = 0, max_year_ = 0;
  std::unordered_map<std::string, std::size_t> entity_index_, relation_index_;
};

// Per-layer relation weights W_r = sum_b a_{r,b} V_b, plus the self-loop W_0.
struct LayerParameters {
  Tensor bases;         // B x (d*d), row b is V_b flattened row-major
  Tensor coefficients;  // num_relation_params x B
  Tensor self_loop;     // d x d

  std::size_t dim() const { return self_loop.shape.at(0); }
  std::size_t num_bases() const { return bases.shape.at(0); }

  Tensor materialize(std::size_t relation_param) const {
    const std::size_t d = dim(), nb = num_bases();
    TWIRGCN_REQUIRE(relation_param < coefficients.shape.at(0), "relation index out of range");
    Tensor w = Tensor::zeros({d, d});
    for (std::size_t b = 0; b < nb; ++b) {
      const double a = coefficients.at(relation_param, b);
      for (std::size_t k = 0; k < d * d; ++k) w.values[k] += a * bases.values[b * d * d + k];
    }
    return w;
  }

  static LayerParameters init(std::size_t relation_params, std::size_t d, std::size_t nb,
                              std::mt19937_64& rng) {
    TWIRGCN_REQUIRE(nb >= 1, "basis count must be at least 1");
    const double sd = 1.0 / std::sqrt(static_cast<double>(d));
    LayerParameters p;
    p.bases = normal_tensor({nb, d * d}, sd, rng);
    p.coefficients = normal_tensor({relation_params, nb}, 1.0 / std::sqrt(static_cast<double>(nb)), rng);
    p.self_loop = normal_tensor({d, d}, sd, rng);
    return p;
  }
};

struct PredictionHeadParams {
  Tensor w_tq;  // d x d_q
  Tensor w_v;   // d_q
  Tensor w_d;   // d x d_q
  double c_d = 3.0;
  double score_scale = 30.0;
};

struct ModelParameters {
  EmbeddingStore store;
  QuestionEncoderParams encoder;
  std::vector<LayerParameters> layers;
  PredictionHeadParams head;

  // Stable names; checkpoints and optimizers iterate in this order.
  std::vector<std::pair<std::string, Tensor*>> named() {
    std::vector<std::pair<std::string, Tensor*>> out = {
        {"store.entities", &store.entities},
        {"store.times", &store.times},
        {"encoder.tokens", &encoder.token_table},
        {"encoder.projection", &encoder.projection},
    };
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      out.emplace_back(p + "bases", &layers[l].bases);
      out.emplace_back(p + "coefficients", &layers[l].coefficients);
      out.emplace_back(p + "self_loop", &layers[l].self_loop);
    }
    out.emplace_back("head.w_tq", &head.w_tq);
    out.emplace_back("head.w_v", &head.w_v);
    out.emplace_back("head.w_d", &head.w_d);
    return out;
  }

  std::vector<Tensor*> tensors() {
    std::vector<Tensor*> out;
    for (auto& [name, t] : named()) out.push_back(t);
    return out;
  }
};

struct TwiRGCN {
  ModelConfig config;
  ModelVocab vocab;
  ModelParameters params;

  void set_trainable(bool freeze_embeddings) {
    for (auto& [name, t] : params.named()) {
      const bool is_store = name.rfind("store.", 0) == 0;
      t->set_requires_grad(!(is_store && freeze_embeddings));
    }
  }
};

// A token made only of digits, optionally signed, read as a year.
inline std::optional<Year> parse_year_token(const std::string& tok) {
  const std::size_t b = !tok.empty() && tok[0] == '-' ? 1 : 0;
  if (tok.size() <= b || tok.size() - b > 4) return std::nullopt;
  for (std::size_t i = b; i < tok.size(); ++i)
    if (tok[i] < '0' || tok[i] > '9') return std::nullopt;
  return static_cast<Year>(std::stoi(tok));
}

// Stands in for a language model's sense of numerals: year tokens start at the
// time row of their year, and the projection and W_tq start at identity, so q_t
// begins as the token mean and its nearest time row is the question year.
inline void apply_year_token_prior(TwiRGCN& m) {
  const std::size_t d = m.config.dim;
  const auto& tokens = m.vocab.tokens().tokens();
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    auto y = parse_year_token(tokens[i]);
    if (!y) continue;
    if (auto row = m.vocab.time_row(*y))
      for (std::size_t k = 0; k < d; ++k)
        m.params.encoder.token_table.at(i, k) = m.params.store.times.at(*row, k);
  }
  m.params.encoder.projection = Tensor::zeros({d, d}, true);
  m.params.head.w_tq = Tensor::zeros({d, d}, true);
  for (std::size_t k = 0; k < d; ++k) {
    m.params.encoder.projection.at(k, k) = 1.0;
    m.params.head.w_tq.at(k, k) = 1.0;
  }
}

// Builds a model around an initialized store. w_v starts at zero so the gate
// opens at exactly 0.5.
inline TwiRGCN make_model(const ModelConfig& cfg, ModelVocab vocab, EmbeddingStore store,
                          std::uint64_t seed) {
  TWIRGCN_REQUIRE(cfg.layers >= 1, "at least one convolution layer is required");
  TWIRGCN_REQUIRE(cfg.c_d > 0 && cfg.score_scale > 0, "c_d and score_scale must be positive");
  TWIRGCN_REQUIRE(store.dim() == cfg.dim, "embedding store dimension differs from model dimension");
  TWIRGCN_REQUIRE(store.num_entities() == vocab.num_entities() &&
                      store.num_times() == vocab.num_times(),
                  "embedding store does not cover the model vocabulary");
  std::mt19937_64 rng(seed);
  TwiRGCN m;
  m.config = cfg;
  const std::size_t d = cfg.dim;
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  m.params.store = std::move(store);
  m.params.encoder = QuestionEncoderParams::init(vocab.tokens().size(), d, rng);
  for (std::size_t l = 0; l < cfg.layers; ++l)
    m.params.layers.push_back(LayerParameters::init(vocab.num_relation_params(), d, cfg.bases, rng));
  m.params.head.w_tq = normal_tensor({d, d}, sd, rng);
  m.params.head.w_d = normal_tensor({d, d}, sd, rng);
  m.params.head.w_v = Tensor::zeros({d});
  m.params.head.c_d = cfg.c_d;
  m.params.head.score_scale = cfg.score_scale;
  m.vocab = std::move(vocab);
  if (cfg.year_token_prior) apply_year_token_prior(m);
  m.set_trainable(false);
  return m;
}

// ---- question graph --------------------------------------------------------------

struct DirectedEdge {
  std::size_t src = 0, dst = 0;
  std::size_t relation_param = 0;
  std::size_t fact = 0;  // index into the per-fact edge weights
};

// A question subgraph resolved to parameter rows. Every fact sends a message
// object <- subject under relation 2r and subject <- object under 2r+1.
struct QuestionGraph {
  std::size_t num_nodes = 0;
  std::vector<std::size_t> node_rows;        // entity-table row per local node
  std::vector<std::size_t> fact_start_rows;  // time-table rows per fact
  std::vector<std::size_t> fact_end_rows;
  std::vector<DirectedEdge> edges;
  std::vector<std::size_t> time_rows;  // unique times of the subgraph, ascending

  std::size_t num_facts() const { return fact_start_rows.size(); }
};

struct PreparedQuestion {
  std::string id;
  Category category = Category::kExplicit;
  QuestionGraph graph;
  std::vector<std::size_t> token_ids;
  std::vector<std::size_t> gold;  // candidate indices: entities first, then times
};

inline QuestionGraph build_question_graph(const QuestionSubgraph& g, const Vocabulary& names,
                                          const ModelVocab& vocab, std::size_t unk_entity_row) {
  QuestionGraph out;
  out.num_nodes = g.nodes.size();
  std::map<EntityId, std::size_t> local;
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    local[g.nodes[i]] = i;
    out.node_rows.push_back(vocab.entity_row(names.name(g.nodes[i])).value_or(unk_entity_row));
  }
  for (std::size_t f = 0; f < g.edges.size(); ++f) {
    const auto& e = g.edges[f];
    out.fact_start_rows.push_back(vocab.clamped_time_row(e.start));
    out.fact_end_rows.push_back(vocab.clamped_time_row(e.end));
    const std::size_t r =
        vocab.relation_row(names.name(e.relation)).value_or(vocab.unk_relation_row());
    const std::size_t s = local.at(e.subject), o = local.at(e.object);
    out.edges.push_back({s, o, 2 * r, f});
    out.edges.push_back({o, s, 2 * r + 1, f});
  }
  std::vector<std::size_t> trows;
  for (Year y : g.times) trows.push_back(vocab.clamped_time_row(y));
  std::sort(trows.begin(), trows.end());
  trows.erase(std::unique(trows.begin(), trows.end()), trows.end());
  out.time_rows = std::move(trows);
  return out;
}

inline PreparedQuestion prepare_question(const QuestionInstance& q, const Vocabulary& names,
                                         const TwiRGCN& model) {
  PreparedQuestion p;
  p.id = q.id;
  p.category = q.category;
  p.graph = build_question_graph(q.subgraph, names, model.vocab, model.params.store.unk_row());
  p.token_ids = model.vocab.tokens().ids(q.tokens);
  for (const auto& a : q.gold_answers) {
    if (a.is_entity()) {
      if (auto r = model.vocab.entity_row(names.name(a.entity_id()))) p.gold.push_back(*r);
    } else if (auto t = model.vocab.time_row(a.year())) {
      p.gold.push_back(model.vocab.num_entities() + *t);
    }
  }
  std::sort(p.gold.begin(), p.gold.end());
  p.gold.erase(std::unique(p.gold.begin(), p.gold.end()), p.gold.end());
  return p;
}

inline std::vector<PreparedQuestion> prepare_questions(const std::vector<QuestionInstance>& qs,
                                                       const Vocabulary& names,
                                                       const TwiRGCN& model) {
  std::vector<PreparedQuestion> out;
  out.reserve(qs.size());
  for (const auto& q : qs) out.push_back(prepare_question(q, names, model));
  return out;
}

// ---- model pieces ------------------------------------------------------------------

// cos((h_st + h_et) / 2, q_t)
inline Var edge_weight_average(Var h_st, Var h_et, Var q_t) {
  return cosine_similarity(scale(add(h_st, h_et), 0.5), q_t);
}

// (cos(h_st, q_t) + cos(h_et, q_t)) / 2
inline Var edge_weight_interval(Var h_st, Var h_et, Var q_t) {
  return scale(add(cosine_similarity(h_st, q_t), cosine_similarity(h_et, q_t)), 0.5);
}

// Row-wise edge weights for F facts given (F x d) start and end embeddings.
inline Var edge_weights(Var starts, Var ends, Var q_t, EdgeWeighting w) {
  if (w == EdgeWeighting::kAverage) return row_cosine(scale(add(starts, ends), 0.5), q_t);
  return scale(add(row_cosine(starts, q_t), row_cosine(ends, q_t)), 0.5);
}

// One temporally weighted convolution:
//   h_i' = relu(W_0 h_i + sum_r sum_{j in N_i^r} m_(i,r,j) W_r h_j / |N_i^r|)
// `h` is (n x d); `m` holds one weight per fact.
inline Var conv_layer(Tape& tape, const QuestionGraph& g, Var h, Var m, LayerParameters& layer) {
  const std::size_t n = g.num_nodes, d = layer.dim();
  TWIRGCN_REQUIRE(h.shape() == (Shape{n, d}), "conv_layer: hidden state shape mismatch");
  TWIRGCN_REQUIRE(m.shape() == Shape{g.num_facts()}, "conv_layer: one edge weight per fact");

  Var out = matmul_nt(h, tape.param(layer.self_loop));
  if (g.edges.empty()) return relu(out);

  // |N_i^r|: incoming edges of node i under relation parameter r.
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> in_degree;
  for (const auto& e : g.edges) ++in_degree[{e.dst, e.relation_param}];

  std::map<std::size_t, std::vector<std::size_t>> by_relation;
  for (std::size_t k = 0; k < g.edges.size(); ++k) by_relation[g.edges[k].relation_param].push_back(k);

  Var bases = tape.param(layer.bases);
  Var coeffs = tape.param(layer.coefficients);
  for (const auto& [rel, edge_ids] : by_relation) {
    Var w_r = reshape(matmul(gather_rows(coeffs, {rel}), bases), {d, d});
    std::vector<std::size_t> src, dst, fact;
    std::vector<double> inv_deg;
    for (std::size_t k : edge_ids) {
      const auto& e = g.edges[k];
      src.push_back(e.src);
      dst.push_back(e.dst);
      fact.push_back(e.fact);
      inv_deg.push_back(1.0 / static_cast<double>(in_degree.at({e.dst, rel})));
    }
    const std::size_t ne = edge_ids.size();
    Var coef = mul(gather_rows(m, fact), tape.constant({ne}, std::move(inv_deg)));
    Var msgs = scale_rows(matmul_nt(gather_rows(h, src), w_r), coef);
    out = add(out, scatter_add_rows(msgs, std::move(dst), n));
  }
  return relu(out);
}

struct PooledPredictions {
  Var h_vq;  // mean of final node states
  Var h_tq;  // mean of the embeddings of the subgraph's unique times
};

inline PooledPredictions pool_predictions(const QuestionGraph& g, Var h_final, Var time_table) {
  std::vector<std::size_t> keys(g.num_nodes);
  std::iota(keys.begin(), keys.end(), std::size_t{0});
  TWIRGCN_REQUIRE(!g.time_rows.empty(), "subgraph without times");
  return {pooled_mean(h_final, keys), mean(gather_rows(time_table, g.time_rows), 0)};
}

// p_vq = sigmoid(w_v . q_B)
inline Var gate(Var w_v, Var q_b) { return sigmoid(dot(w_v, q_b)); }

// d_q = (p_vq h_vq + (1 - p_vq) h_tq + W_d q_B) / c_d. With gating disabled the
// mix is fixed at 0.5 / 0.5.
inline Var predict(Var q_b, Var h_vq, Var h_tq, Var p_vq, Var w_d, double c_d, bool gating_enabled) {
  Tape& tape = *q_b.tape();
  Var p = gating_enabled ? p_vq : tape.scalar(0.5);
  Var p_t = affine(p, -1.0, 1.0);
  Var mix = add(add(scale_by(h_vq, p), scale_by(h_tq, p_t)), matmul(w_d, q_b));
  return scale(mix, 1.0 / c_d);
}

// score_scale * cos(d_q, c) for every entity (UNK row excluded) then every time.
inline Var score_candidates(Var d_q, Var entity_table, Var time_table, std::size_t num_entities,
                            double score_scale) {
  Var ent = row_cosine(entity_table, d_q);
  if (ent.shape()[0] != num_entities) {
    std::vector<std::size_t> keep(num_entities);
    std::iota(keep.begin(), keep.end(), std::size_t{0});
    ent = gather_rows(ent, std::move(keep));
  }
  return scale(concat({ent, row_cosine(time_table, d_q)}), score_scale);
}

struct ForwardResult {
  Var q_b, q_t;
  Var edge_weights;  // per fact
  std::vector<Var> hidden;  // h^(0) .. h^(L)
  Var h_vq, h_tq;
  Var gate;  // p_vq
  Var d_q;
  Var logits;
  std::optional<Var> loss;  // present when the question has a gold candidate
};

inline ForwardResult forward(Tape& tape, TwiRGCN& model, const PreparedQuestion& q) {
  auto& P = model.params;
  const auto& g = q.graph;
  ForwardResult r;
  r.q_b = encode_question(tape, P.encoder, q.token_ids);
  r.q_t = question_time(tape.param(P.head.w_tq), r.q_b);

  Var times = tape.param(P.store.times);
  Var ents = tape.param(P.store.entities);
  r.edge_weights = edge_weights(gather_rows(times, g.fact_start_rows),
                                gather_rows(times, g.fact_end_rows), r.q_t, model.config.weighting);
  for (double w : r.edge_weights.value())
    TWIRGCN_REQUIRE(w >= -1.0 && w <= 1.0, "edge weight outside [-1, 1]");

  r.hidden.push_back(gather_rows(ents, g.node_rows));
  for (auto& layer : P.layers) r.hidden.push_back(conv_layer(tape, g, r.hidden.back(), r.edge_weights, layer));

  auto pooled = pool_predictions(g, r.hidden.back(), times);
  r.h_vq = pooled.h_vq;
  r.h_tq = pooled.h_tq;
  r.gate = gate(tape.param(P.head.w_v), r.q_b);
  r.d_q = predict(r.q_b, r.h_vq, r.h_tq, r.gate, tape.param(P.head.w_d), P.head.c_d,
                  model.config.gating);
  r.logits = score_candidates(r.d_q, ents, times, model.vocab.num_entities(), P.head.score_scale);
  if (!q.gold.empty()) r.loss = softmax_cross_entropy(r.logits, q.gold);
  return r;
}

// ---- checkpoint ---------------------------------------------------------------------

inline constexpr char kModelMagic[8] = {'T', 'W', 'R', 'G', 'C', 'N', 'C', 'K'};
inline constexpr std::uint32_t kModelVersion = 1;

inline void save_model(std::ostream& out, TwiRGCN& m) {
  io::Writer w(out);
  w.bytes({kModelMagic, 8});
  w.pod<std::uint32_t>(kModelVersion);
  w.pod<std::uint64_t>(m.config.dim);
  w.pod<std::uint64_t>(m.config.layers);
  w.pod<std::uint64_t>(m.config.bases);
  w.pod<double>(m.config.c_d);
  w.pod<double>(m.config.score_scale);
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(m.config.weighting));
  w.pod<std::uint8_t>(m.config.gating ? 1 : 0);
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(m.params.store.provenance));
  w.strings(m.vocab.entities());
  w.strings(m.vocab.relations());
  w.strings(m.vocab.tokens().tokens());
  w.pod<std::int32_t>(m.vocab.min_year());
  w.pod<std::int32_t>(m.vocab.max_year());
  w.pod<std::uint64_t>(m.vocab.hash());
  auto named = m.params.named();
  w.pod<std::uint64_t>(named.size());
  for (auto& [name, t] : named) {
    w.str(name);
    w.tensor(*t);
  }
}

inline void save_model(const std::string& path, TwiRGCN& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write " + path);
  save_model(out, m);
}

inline TwiRGCN load_model(std::istream& in) {
  io::Reader r(in);
  if (r.bytes(8) != std::string(kModelMagic, 8)) throw CheckpointError("not a model checkpoint");
  if (r.pod<std::uint32_t>() != kModelVersion) throw CheckpointError("unsupported checkpoint version");
  ModelConfig cfg;
  cfg.dim = r.pod<std::uint64_t>();
  cfg.layers = r.pod<std::uint64_t>();
  cfg.bases = r.pod<std::uint64_t>();
  cfg.c_d = r.pod<double>();
  cfg.score_scale = r.pod<double>();
  const auto wt = r.pod<std::uint32_t>();
  if (wt > 1) throw CheckpointError("unknown weighting variant tag");
  cfg.weighting = static_cast<EdgeWeighting>(wt);
  cfg.gating = r.pod<std::uint8_t>() != 0;
  const auto provenance = static_cast<EmbeddingProvenance>(r.pod<std::uint32_t>());
  auto ents = r.strings();
  auto rels = r.strings();
  auto toks = r.strings();
  const Year lo = r.pod<std::int32_t>(), hi = r.pod<std::int32_t>();
  const auto stored_hash = r.pod<std::uint64_t>();
  ModelVocab vocab(std::move(ents), std::move(rels), TokenVocabulary::from_list(toks), lo, hi);
  if (vocab.hash() != stored_hash) throw CheckpointError("checkpoint vocabulary hash mismatch");

  EmbeddingStore placeholder;
  placeholder.entities = Tensor::zeros({vocab.num_entities() + 1, cfg.dim});
  placeholder.times = Tensor::zeros({vocab.num_times(), cfg.dim});
  TwiRGCN m = make_model(cfg, std::move(vocab), std::move(placeholder), 0);
  m.params.store.provenance = provenance;
  auto named = m.params.named();
  const auto count = r.pod<std::uint64_t>();
  if (count != named.size()) throw CheckpointError("checkpoint tensor count mismatch");
  for (auto& [name, t] : named) {
    if (r.str() != name) throw CheckpointError("checkpoint tensor order mismatch at " + name);
    Tensor loaded = r.tensor();
    if (loaded.shape != t->shape) throw CheckpointError("checkpoint shape mismatch for " + name);
    t->values = std::move(loaded.values);
  }
  m.set_trainable(false);
  return m;
}

inline TwiRGCN load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path);
  return load_model(in);
}

// Deep copy of parameter values (the trainer's best-checkpoint snapshot).
inline std::vector<std::vector<double>> snapshot(TwiRGCN& m) {
  std::vector<std::vector<double>> out;
  for (Tensor* t : m.params.tensors()) out.push_back(t->values);
  return out;
}

inline void restore(TwiRGCN& m, const std::vector<std::vector<double>>& snap) {
  auto ts = m.params.tensors();
  TWIRGCN_REQUIRE(ts.size() == snap.size(), "snapshot does not match model");
  for (std::size_t i = 0; i < ts.size(); ++i) ts[i]->values = snap[i];
}

}  // namespace twirgcn
