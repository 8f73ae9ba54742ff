#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "support.hpp"
#include "twirgcn/grad_check.hpp"
#include "twirgcn/model.hpp"

using namespace twirgcn;
using namespace twirgcn::testing;

namespace {

std::vector<double> random_vec(std::mt19937_64& rng, std::size_t d) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(d);
  for (double& x : v) x = n(rng);
  return v;
}

double weight(EdgeWeighting w, const std::vector<double>& s, const std::vector<double>& e,
              const std::vector<double>& q) {
  Tape t(false);
  const Shape sh{s.size()};
  Var vs = t.constant(sh, s), ve = t.constant(sh, e), vq = t.constant(sh, q);
  return (w == EdgeWeighting::kAverage ? edge_weight_average(vs, ve, vq)
                                       : edge_weight_interval(vs, ve, vq))
      .item();
}

double plain_cos(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

}  // namespace

TEST(EdgeWeights, MatchTheirDefinitions) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    auto s = random_vec(rng, 6), e = random_vec(rng, 6), q = random_vec(rng, 6);
    std::vector<double> mid(6);
    for (int k = 0; k < 6; ++k) mid[k] = (s[k] + e[k]) / 2.0;
    EXPECT_NEAR(weight(EdgeWeighting::kAverage, s, e, q), plain_cos(mid, q), 1e-13);
    EXPECT_NEAR(weight(EdgeWeighting::kInterval, s, e, q), (plain_cos(s, q) + plain_cos(e, q)) / 2.0,
                1e-13);
  }
}

TEST(EdgeWeights, RangeSwapInvarianceAndDegenerateAgreement) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 1000; ++trial) {
    auto s = random_vec(rng, 5), e = random_vec(rng, 5), q = random_vec(rng, 5);
    for (auto w : {EdgeWeighting::kAverage, EdgeWeighting::kInterval}) {
      const double m = weight(w, s, e, q);
      EXPECT_GE(m, -1.0);
      EXPECT_LE(m, 1.0);
      EXPECT_EQ(m, weight(w, e, s, q));
    }
    EXPECT_EQ(weight(EdgeWeighting::kAverage, s, s, q), weight(EdgeWeighting::kInterval, s, s, q));
  }
}

TEST(EdgeWeights, OverlappingEdgeOutweighsDistantEdgeOnLineYears) {
  for (auto w : {EdgeWeighting::kAverage, EdgeWeighting::kInterval}) {
    const auto q = line_year(2010);
    const double near = weight(w, line_year(2008), line_year(2012), q);
    const double far = weight(w, line_year(1950), line_year(1960), q);
    EXPECT_GT(near, far) << to_string(w);
  }
}

TEST(EdgeWeights, ZeroQuestionTimeGivesZeroWeight) {
  EXPECT_EQ(weight(EdgeWeighting::kAverage, {1, 0}, {0, 1}, {0, 0}), 0.0);
  EXPECT_EQ(weight(EdgeWeighting::kInterval, {1, 0}, {0, 1}, {0, 0}), 0.0);
}

TEST(ConvLayer, MatchesPerNodeOracleOnRandomGraphs) {
  std::mt19937_64 rng(3);
  const std::size_t d = 4, relations = 3, entities = 25, times = 12;
  for (int trial = 0; trial < 50; ++trial) {
    QuestionGraph g = random_graph(rng, 20, relations, entities, times);
    LayerParameters layer = LayerParameters::init(2 * (relations + 1), d, 3, rng);
    Tensor h = normal_tensor({g.num_nodes, d}, 1.0, rng);
    std::vector<double> m;
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (std::size_t f = 0; f < g.num_facts(); ++f) m.push_back(u(rng));

    Tape tape(false);
    Var out = conv_layer(tape, g, tape.constant(h), tape.constant({m.size()}, m), layer);
    Matrix hm(g.num_nodes, std::vector<double>(d));
    for (std::size_t i = 0; i < g.num_nodes; ++i)
      for (std::size_t k = 0; k < d; ++k) hm[i][k] = h.at(i, k);
    const Matrix expect = conv_per_node(g, hm, m, layer);
    for (std::size_t i = 0; i < g.num_nodes; ++i)
      for (std::size_t k = 0; k < d; ++k) EXPECT_NEAR(out.value()[i * d + k], expect[i][k], 1e-12);
  }
}

TEST(ConvLayer, ZeroEdgeWeightsLeaveOnlyTheSelfLoop) {
  std::mt19937_64 rng(4);
  QuestionGraph g = random_graph(rng, 8, 2, 10, 5);
  LayerParameters layer = LayerParameters::init(6, 3, 2, rng);
  Tensor h = normal_tensor({g.num_nodes, 3}, 1.0, rng);
  Tape t(false);
  Var out = conv_layer(t, g, t.constant(h), t.constant({g.num_facts()}, std::vector<double>(g.num_facts(), 0.0)),
                       layer);
  for (std::size_t i = 0; i < g.num_nodes; ++i)
    for (std::size_t a = 0; a < 3; ++a) {
      double s = 0;
      for (std::size_t b = 0; b < 3; ++b) s += layer.self_loop.at(a, b) * h.at(i, b);
      EXPECT_NEAR(out.value()[i * 3 + a], std::max(0.0, s), 1e-14);
    }
}

TEST(Model, GateStartsAtExactlyOneHalfAndMatchesFixedMixing) {
  auto d = five_node_dataset();
  ModelConfig gated, fixed;
  fixed.gating = false;
  auto a = small_model(d, 6, 5, gated);
  auto b = small_model(d, 6, 5, fixed);
  auto pa = prepare_question(d.train[0], d.vocab, a);
  auto pb = prepare_question(d.train[0], d.vocab, b);
  Tape ta(false), tb(false);
  auto ra = forward(ta, a, pa);
  auto rb = forward(tb, b, pb);
  EXPECT_EQ(ra.gate.item(), 0.5);
  EXPECT_EQ(ra.loss->item(), rb.loss->item());
  EXPECT_EQ(ra.logits.value(), rb.logits.value());
}

TEST(Model, CandidatesAreEntitiesThenTimesWithoutUnk) {
  auto d = five_node_dataset();
  auto m = small_model(d, 6, 1);
  auto p = prepare_question(d.train[0], d.vocab, m);
  Tape t(false);
  auto r = forward(t, m, p);
  EXPECT_EQ(r.logits.shape(), Shape{m.vocab.num_candidates()});
  EXPECT_EQ(m.vocab.num_entities(), 5u);
  EXPECT_EQ(m.vocab.num_times(), 31u);
  EXPECT_EQ(p.gold, (std::vector<std::size_t>{*m.vocab.entity_row("Ann")}));
  for (double x : r.logits.value()) EXPECT_LE(std::abs(x), m.config.score_scale + 1e-9);
}

TEST(Model, UnknownNamesFallBackToUnkRows) {
  auto d = five_node_dataset();
  auto m = small_model(d, 6, 1);
  QuestionInstance q = d.train[0];
  Vocabulary& v = d.vocab;
  q.subgraph = make_subgraph({{v.entity("Zed"), v.relation("never_seen"), v.entity("Mayor"), 1950, 1952}});
  auto p = prepare_question(q, v, m);
  const auto zed = std::find(q.subgraph.nodes.begin(), q.subgraph.nodes.end(), v.entity("Zed"));
  EXPECT_EQ(p.graph.node_rows[zed - q.subgraph.nodes.begin()], m.params.store.unk_row());
  EXPECT_EQ(p.graph.edges[0].relation_param, 2 * m.vocab.unk_relation_row());
  EXPECT_TRUE(p.gold.size() == 1);
}

TEST(Model, FullLossGradientPassesFiniteDifferences) {
  auto d = five_node_dataset();
  ModelConfig cfg;
  cfg.layers = 2;
  cfg.year_token_prior = false;
  auto m = small_model(d, 4, 9, cfg);
  std::mt19937_64 rng(10);
  fill_normal(m.params.head.w_v, 0.5, rng);
  auto p = prepare_question(d.train[0], d.vocab, m);
  ASSERT_EQ(p.graph.num_nodes, 5u);
  auto f = [&](Tape& t) { return *forward(t, m, p).loss; };
  EXPECT_LE(grad_check(f, m.params.tensors()), 1e-4);
}

TEST(Model, YearTokenPriorPutsQuestionTimeOnTheYearRow) {
  auto d = five_node_dataset();
  ModelConfig cfg;
  cfg.year_token_prior = true;
  auto m = small_model(d, 6, 2, cfg);
  PreparedQuestion p = prepare_question(d.train[0], d.vocab, m);
  p.token_ids = m.vocab.tokens().ids({"1945"});
  Tape t(false);
  auto r = forward(t, m, p);
  const auto row = *m.vocab.time_row(1945);
  for (std::size_t k = 0; k < 6; ++k) EXPECT_DOUBLE_EQ(r.q_t.value()[k], m.params.store.times.at(row, k));
}

TEST(Model, YearTokensParseOnlyPlainIntegers) {
  EXPECT_EQ(parse_year_token("1945"), 1945);
  EXPECT_EQ(parse_year_token("-300"), -300);
  EXPECT_FALSE(parse_year_token("1945s").has_value());
  EXPECT_FALSE(parse_year_token("12345").has_value());
  EXPECT_FALSE(parse_year_token("-").has_value());
}

TEST(Checkpoint, RoundTripReproducesLogits) {
  auto d = five_node_dataset();
  auto m = small_model(d, 6, 3);
  std::stringstream buf;
  save_model(buf, m);
  auto back = load_model(buf);
  auto p = prepare_question(d.train[1], d.vocab, m);
  Tape a(false), b(false);
  EXPECT_EQ(forward(a, m, p).logits.value(), forward(b, back, p).logits.value());
  EXPECT_EQ(back.config.weighting, m.config.weighting);
}

TEST(Checkpoint, CorruptionIsCheckpointError) {
  auto d = five_node_dataset();
  auto m = small_model(d, 6, 3);
  std::stringstream buf;
  save_model(buf, m);
  std::string bytes = buf.str();
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  std::stringstream s1(bad_magic);
  EXPECT_THROW(load_model(s1), CheckpointError);
  std::stringstream s2(bytes.substr(0, bytes.size() / 2));
  EXPECT_THROW(load_model(s2), CheckpointError);
}
