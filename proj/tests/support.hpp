#pragma once

// Fixtures and plain-loop reimplementations shared by the unit tests and the
// acceptance runner.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "twirgcn/evaluator.hpp"
#include "twirgcn/model.hpp"

namespace twirgcn::testing {

// Two explicit questions over a five-node subgraph: Mayor, Ann, Bob, Cy, Town.
inline Dataset five_node_dataset() {
  const char* text =
      R"({"id":"a","text":"Who held Mayor in 1945?","category":"explicit","facts":[["Ann","held","Mayor",1940,1948],["Bob","held","Mayor",1949,1960],["Cy","held","Mayor",1961,1970],["Mayor","seat_of","Town",1940,1970]],"answers":[{"kind":"entity","value":"Ann"}]})"
      "\n"
      R"({"id":"b","text":"Who held Mayor in 1965?","category":"explicit","facts":[["Ann","held","Mayor",1940,1948],["Bob","held","Mayor",1949,1960],["Cy","held","Mayor",1961,1970],["Mayor","seat_of","Town",1940,1970]],"answers":[{"kind":"entity","value":"Cy"}]})";
  Dataset d;
  std::istringstream in(text);
  d.train = read_questions(in, d.vocab);
  d.valid = d.train;
  d.test = d.train;
  d.kg = build_background_kg(d.train, d.vocab);
  return d;
}

inline TwiRGCN small_model(const Dataset& d, std::size_t dim, std::uint64_t seed,
                           ModelConfig cfg = {}) {
  cfg.dim = dim;
  cfg.bases = std::min<std::size_t>(cfg.bases, 3);
  return make_model(cfg, ModelVocab::from_dataset(d), init_random(d.kg, dim, seed), seed + 1);
}

// Random question graph with forward and inverse directed edges per fact, as
// build_question_graph lays them out.
inline QuestionGraph random_graph(std::mt19937_64& rng, std::size_t max_nodes,
                                  std::size_t relations, std::size_t entities, std::size_t times) {
  std::uniform_int_distribution<std::size_t> nodes_dist(1, max_nodes);
  QuestionGraph g;
  g.num_nodes = nodes_dist(rng);
  std::uniform_int_distribution<std::size_t> node(0, g.num_nodes - 1), ent(0, entities - 1),
      time(0, times - 1), rel(0, relations), facts(1, 3 * g.num_nodes);
  for (std::size_t i = 0; i < g.num_nodes; ++i) g.node_rows.push_back(ent(rng));
  const std::size_t nf = facts(rng);
  for (std::size_t f = 0; f < nf; ++f) {
    std::size_t a = time(rng), b = time(rng);
    if (a > b) std::swap(a, b);
    g.fact_start_rows.push_back(a);
    g.fact_end_rows.push_back(b);
    const std::size_t s = node(rng), o = node(rng), r = rel(rng);
    g.edges.push_back({s, o, 2 * r, f});
    g.edges.push_back({o, s, 2 * r + 1, f});
  }
  for (std::size_t f = 0; f < nf; ++f) {
    g.time_rows.push_back(g.fact_start_rows[f]);
    g.time_rows.push_back(g.fact_end_rows[f]);
  }
  std::sort(g.time_rows.begin(), g.time_rows.end());
  g.time_rows.erase(std::unique(g.time_rows.begin(), g.time_rows.end()), g.time_rows.end());
  return g;
}

using Matrix = std::vector<std::vector<double>>;

// Node-by-node convolution written directly from the update rule, with W_r
// rebuilt from its bases coefficient by coefficient.
inline Matrix conv_per_node(const QuestionGraph& g, const Matrix& h, const std::vector<double>& m,
                            const LayerParameters& layer) {
  const std::size_t d = layer.dim(), nb = layer.num_bases();
  auto w_rel = [&](std::size_t r, std::size_t a, std::size_t b) {
    double w = 0.0;
    for (std::size_t k = 0; k < nb; ++k)
      w += layer.coefficients.values[r * nb + k] * layer.bases.values[k * d * d + a * d + b];
    return w;
  };
  Matrix out(g.num_nodes, std::vector<double>(d, 0.0));
  for (std::size_t i = 0; i < g.num_nodes; ++i) {
    std::vector<double> acc(d, 0.0);
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b) acc[a] += layer.self_loop.values[a * d + b] * h[i][b];
    const std::size_t relation_params = layer.coefficients.shape[0];
    for (std::size_t r = 0; r < relation_params; ++r) {
      std::vector<const DirectedEdge*> in;
      for (const auto& e : g.edges)
        if (e.dst == i && e.relation_param == r) in.push_back(&e);
      for (const DirectedEdge* e : in)
        for (std::size_t a = 0; a < d; ++a) {
          double wh = 0.0;
          for (std::size_t b = 0; b < d; ++b) wh += w_rel(r, a, b) * h[e->src][b];
          acc[a] += m[e->fact] * wh / static_cast<double>(in.size());
        }
    }
    for (std::size_t a = 0; a < d; ++a) out[i][a] = std::max(0.0, acc[a]);
  }
  return out;
}

// Years placed on a quarter circle: (cos t, sin t) with t proportional to the
// year's offset, so cosine similarity falls as years move apart.
inline std::vector<double> line_year(Year y, Year origin = 1800, double span = 300.0) {
  const double t = (std::numbers::pi / 2.0) * static_cast<double>(y - origin) / span;
  return {std::cos(t), std::sin(t)};
}

// Ten hand-scored questions with two prediction files; expected_metrics.json
// holds the values worked out by hand.
struct GoldenFixture {
  std::vector<GoldRecord> golds;
  std::vector<Prediction> predictions, compare;
  nlohmann::json expected;
};

inline GoldenFixture load_golden(const std::string& dir) {
  GoldenFixture f;
  Vocabulary v;
  f.golds = gold_records(load_questions(dir + "/questions.jsonl", v), v);
  std::ifstream p(dir + "/predictions.jsonl"), c(dir + "/compare.jsonl"), e(dir + "/expected_metrics.json");
  f.predictions = read_predictions(p);
  f.compare = read_predictions(c);
  f.expected = nlohmann::json::parse(e);
  return f;
}

inline MetricsReport golden_report(const GoldenFixture& f) {
  MetricsReport m = compute_metrics(f.predictions, f.golds);
  m.overlap = prediction_overlap(f.predictions, f.compare, f.golds);
  return m;
}

}  // namespace twirgcn::testing
