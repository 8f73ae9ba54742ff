#include <gtest/gtest.h>

#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "support.hpp"
#include "twirgcn/evaluator.hpp"
#include "twirgcn/trainer.hpp"

using namespace twirgcn;
using namespace twirgcn::testing;

namespace {

const std::string kGolden = std::string(TWIRGCN_TEST_DATA) + "/golden";

Candidate ent(const std::string& name, double score = 0.0) {
  Candidate c;
  c.entity = name;
  c.score = score;
  return c;
}

Candidate when(Year y, double score = 0.0) {
  Candidate c;
  c.kind = AnswerKind::kTime;
  c.year = y;
  c.score = score;
  return c;
}

GoldRecord gold(const std::string& id, Category cat, std::vector<Candidate> answers) {
  return {id, cat, std::move(answers)};
}

Prediction pred(const std::string& id, std::vector<Candidate> ranked) {
  return {id, std::move(ranked), std::nullopt};
}

}  // namespace

TEST(Golden, ReportMatchesHandComputedValuesExactly) {
  auto f = load_golden(kGolden);
  ASSERT_EQ(f.golds.size(), 10u);
  EXPECT_EQ(metrics_to_json(golden_report(f)), f.expected);
}

TEST(Golden, GoldNinetyTwoPredictedNinetyIsMissAtOneAndHitAtThree) {
  auto f = load_golden(kGolden);
  std::vector<Prediction> one;
  for (const auto& p : f.predictions)
    if (p.id == "t1") one.push_back(p);
  ASSERT_EQ(one.at(0).ranked.at(0).year, 1990);
  EXPECT_EQ(hits_with_tolerance(one, f.golds, 0).rate, 0.0);
  EXPECT_EQ(hits_with_tolerance(one, f.golds, 1).rate, 0.0);
  EXPECT_EQ(hits_with_tolerance(one, f.golds, 3).rate, 1.0);
}

TEST(Golden, PredictionFileRoundTrips) {
  auto f = load_golden(kGolden);
  std::ostringstream out;
  write_predictions(out, f.predictions);
  std::istringstream in(out.str());
  auto back = read_predictions(in);
  std::ostringstream again;
  write_predictions(again, back);
  EXPECT_EQ(again.str(), out.str());
  EXPECT_NE(out.str().find(R"("value":1990)"), std::string::npos);
}

TEST(HitsAtK, PrefixMembershipAndArithmetic) {
  std::vector<GoldRecord> g = {gold("a", Category::kExplicit, {ent("X")}),
                               gold("b", Category::kExplicit, {ent("Y")})};
  std::vector<Prediction> p = {pred("a", {ent("X"), ent("Z"), ent("W")}),
                               pred("b", {ent("Z"), ent("W"), ent("Y")})};
  EXPECT_EQ(hits_at_k(p, g, 1).overall, 0.5);
  EXPECT_EQ(hits_at_k(p, g, 2).overall, 0.5);
  EXPECT_EQ(hits_at_k(p, g, 3).overall, 1.0);
  EXPECT_THROW(hits_at_k(p, g, 4), EvaluationError);
}

TEST(HitsAtK, MissingGoldListsTheIds) {
  std::vector<GoldRecord> g = {gold("a", Category::kExplicit, {ent("X")})};
  std::vector<Prediction> p = {pred("a", {ent("X")}), pred("zz", {ent("X")}), pred("yy", {ent("X")})};
  try {
    hits_at_k(p, g, 1);
    FAIL() << "expected an evaluation error";
  } catch (const EvaluationError& e) {
    EXPECT_NE(std::string(e.what()).find("zz, yy"), std::string::npos) << e.what();
  }
}

TEST(HitsAtK, TimeGoldDoesNotMatchEntityWithSameText) {
  auto g = gold("a", Category::kTemporal, {when(1950)});
  EXPECT_TRUE(g.matches(when(1950)));
  EXPECT_FALSE(g.matches(when(1951)));
  EXPECT_FALSE(g.matches(ent("1950")));
}

TEST(Tolerance, EntityTopOneIsAMissAtAnyWindow) {
  std::vector<GoldRecord> g = {gold("a", Category::kTemporal, {when(1950)})};
  std::vector<Prediction> p = {pred("a", {ent("X"), when(1950), when(1951)})};
  for (Year w : {0, 1, 3, 100}) EXPECT_EQ(hits_with_tolerance(p, g, w).rate, 0.0);
}

TEST(Confusion, OneOfFourEntityQuestionsAnsweredWithATime) {
  std::vector<GoldRecord> g;
  std::vector<Prediction> p;
  for (int i = 0; i < 4; ++i) {
    const std::string id = "q" + std::to_string(i);
    g.push_back(gold(id, Category::kExplicit, {ent("X")}));
    p.push_back(pred(id, {i == 0 ? when(1900) : ent("Y")}));
  }
  auto c = answer_type_confusion(p, g);
  EXPECT_EQ(c.entity_as_time, 0.25);
  EXPECT_EQ(c.time_as_entity, 0.0);
}

TEST(Overlap, SelfComparisonAndDisjointSets) {
  auto f = load_golden(kGolden);
  auto self = prediction_overlap(f.predictions, f.predictions, f.golds);
  EXPECT_EQ(self.overall.only_a, 0u);
  EXPECT_EQ(self.overall.only_b, 0u);

  std::vector<GoldRecord> g;
  std::vector<Prediction> a, b;
  for (int i = 0; i < 9; ++i) {
    const std::string id = "q" + std::to_string(i);
    g.push_back(gold(id, Category::kOrdinal, {ent("X")}));
    a.push_back(pred(id, {ent(i < 3 ? "X" : "N")}));
    b.push_back(pred(id, {ent(i >= 3 && i < 7 ? "X" : "N")}));
  }
  auto o = prediction_overlap(a, b, g);
  EXPECT_EQ(o.overall.both, 0u);
  EXPECT_EQ(o.overall.only_a, 3u);
  EXPECT_EQ(o.overall.only_b, 4u);
  EXPECT_EQ(o.overall.neither, 9u - 7u);
}

TEST(Overlap, IdMismatchListsSymmetricDifference) {
  std::vector<GoldRecord> g = {gold("a", Category::kExplicit, {ent("X")}),
                               gold("b", Category::kExplicit, {ent("X")}),
                               gold("c", Category::kExplicit, {ent("X")})};
  std::vector<Prediction> a = {pred("a", {ent("X")}), pred("b", {ent("X")})};
  std::vector<Prediction> b = {pred("a", {ent("X")}), pred("c", {ent("X")})};
  try {
    prediction_overlap(a, b, g);
    FAIL() << "expected an evaluation error";
  } catch (const EvaluationError& e) {
    EXPECT_NE(std::string(e.what()).find("b, c"), std::string::npos) << e.what();
  }
}

TEST(Properties, MonotoneInKAndWindowAndConsistentAcrossCategories) {
  std::mt19937_64 rng(5);
  const std::vector<Category> cats(kAllCategories.begin(), kAllCategories.end());
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<GoldRecord> g;
    std::vector<Prediction> p;
    for (int i = 0; i < 30; ++i) {
      const std::string id = std::to_string(i);
      const Category c = cats[rng() % cats.size()];
      const bool time_q = rng() % 2;
      g.push_back(gold(id, c, {time_q ? when(1950 + static_cast<Year>(rng() % 6)) : ent("E" + std::to_string(rng() % 4))}));
      std::vector<Candidate> ranked;
      for (int k = 0; k < 5; ++k)
        ranked.push_back(rng() % 2 ? when(1950 + static_cast<Year>(rng() % 6)) : ent("E" + std::to_string(rng() % 4)));
      p.push_back(pred(id, ranked));
    }
    double prev = -1.0;
    for (std::size_t k = 1; k <= 5; ++k) {
      auto h = hits_at_k(p, g, k);
      EXPECT_GE(h.overall, prev);
      prev = h.overall;
      double weighted = 0.0;
      std::size_t total = 0;
      for (const auto& [c, cr] : h.by_category) {
        weighted += cr.rate * static_cast<double>(cr.count);
        total += cr.count;
      }
      EXPECT_EQ(total, h.count);
      EXPECT_NEAR(weighted / static_cast<double>(total), h.overall, 1e-12);
    }
    prev = -1.0;
    for (Year w : {0, 1, 2, 3, 5, 10}) {
      const double r = hits_with_tolerance(p, g, w).rate;
      EXPECT_GE(r, prev);
      prev = r;
    }
    auto o = prediction_overlap(p, p, g);
    std::size_t sum = 0;
    for (const auto& [c, n] : o.by_category) sum += n.total();
    EXPECT_EQ(sum, p.size());
  }
}

TEST(YearExtraction, PlainYearsBcAndExclusions) {
  EXPECT_EQ(extract_year("Who held Mayor in 1945?"), 1945);
  EXPECT_EQ(extract_year("Who ruled Rome in 44 BC?"), -44);
  EXPECT_EQ(extract_year("Who ruled in 300 BCE and later?"), -300);
  EXPECT_EQ(extract_year("Who led in 300 BC before 1200?"), -300);
  EXPECT_EQ(extract_year("Between 1200 and 300 BC"), 1200);
  EXPECT_FALSE(extract_year("Who held Mayor right before Ann?").has_value());
  EXPECT_FALSE(extract_year("Who scored 250 goals?").has_value());
  EXPECT_FALSE(extract_year("Code 12345 only").has_value());
  EXPECT_FALSE(extract_year("In 2500 maybe").has_value());
  EXPECT_EQ(extract_year("From 999 to 1066"), 1066);
}

TEST(Probe, QuestionsWithoutYearsAreExcluded) {
  auto d = five_node_dataset();
  auto m = small_model(d, 6, 3);
  auto qs = d.train;
  qs[1].text = "Who held Mayor last?";
  auto r = question_time_probe(m, qs);
  EXPECT_EQ(r.count, 1u);
  qs[0].text = "Who held Mayor first?";
  EXPECT_EQ(question_time_probe(m, qs).count, 0u);
}

TEST(Probe, YearTokenPriorGivesExactProbeBeforeTraining) {
  auto d = five_node_dataset();
  ModelConfig cfg;
  cfg.year_token_prior = true;
  auto m = small_model(d, 16, 4, cfg);
  std::vector<QuestionInstance> qs = {d.train[0]};
  qs[0].tokens = {"1945"};
  auto r = question_time_probe(m, qs);
  ASSERT_EQ(r.count, 1u);
  EXPECT_EQ(r.median_abs_diff, 0.0);
  EXPECT_EQ(r.exact, 1.0);
}

TEST(Predict, RanksAreNonIncreasingAndParallelMatchesSerial) {
  auto d = five_node_dataset();
  auto m = small_model(d, 6, 3);
  auto qs = prepare_questions(d.train, d.vocab, m);
  auto serial = predict_all(m, qs, 5, 1);
  auto parallel = predict_all(m, qs, 5, 3);
  std::ostringstream a, b;
  write_predictions(a, serial);
  write_predictions(b, parallel);
  EXPECT_EQ(a.str(), b.str());
  for (const auto& p : serial) {
    ASSERT_EQ(p.ranked.size(), 5u);
    for (std::size_t i = 1; i < p.ranked.size(); ++i) EXPECT_GE(p.ranked[i - 1].score, p.ranked[i].score);
    ASSERT_TRUE(p.gate.has_value());
    EXPECT_EQ(*p.gate, 0.5);
  }
}

TEST(Predict, MalformedPredictionLineNamesItsLine) {
  std::istringstream in("{\"id\":\"a\",\"ranked\":[]}\n{\"id\":\"b\",\"ranked\":[{\"kind\":\"entity\"}]}\n");
  try {
    read_predictions(in);
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
}
