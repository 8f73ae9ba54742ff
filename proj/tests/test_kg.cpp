#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "twirgcn/kg.hpp"

using namespace twirgcn;

namespace {

const char* kQuestionLine =
    R"({"id":"q1","text":"Who held Mayor in 1945?","category":"explicit",)"
    R"("facts":[["Ann","position_held","Mayor",1940,1948],["Bob","position_held","Mayor",1949,1960],)"
    R"(["Ann","position_held","Mayor",1940,1948]],"answers":[{"kind":"entity","value":"Ann"}]})";

std::string replace(std::string s, const std::string& from, const std::string& to) {
  s.replace(s.find(from), from.size(), to);
  return s;
}

}  // namespace

TEST(Facts, ParsesTabSeparatedRecordsSkippingCommentsAndBlanks) {
  std::istringstream in("# header\nAnn\tposition_held\tMayor\t1940\t1948\n\nBob\tposition_held\tMayor\t1949\t1960\r\n");
  Vocabulary v;
  auto facts = read_facts(in, v);
  ASSERT_EQ(facts.size(), 2u);
  EXPECT_EQ(v.name(facts[1].subject), "Bob");
  EXPECT_EQ(facts[1].end, 1960);
  EXPECT_EQ(facts[0].relation, facts[1].relation);
}

TEST(Facts, FourFieldLineNamesItsLineNumber) {
  std::istringstream in("Ann\tposition_held\tMayor\t1940\t1948\nAnn\tposition_held\tMayor\t1940\n");
  Vocabulary v;
  try {
    read_facts(in, v);
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
}

TEST(Facts, StartAfterEndIsRejected) {
  std::istringstream in("Ann\tposition_held\tMayor\t1950\t1948\n");
  Vocabulary v;
  EXPECT_THROW(read_facts(in, v), ParseError);
}

TEST(Facts, NonIntegerYearIsRejected) {
  std::istringstream in("Ann\tposition_held\tMayor\t19x0\t1948\n");
  Vocabulary v;
  EXPECT_THROW(read_facts(in, v), ParseError);
}

TEST(Facts, WriteReadRoundTrip) {
  Vocabulary v;
  std::vector<TemporalFact> facts = {{v.entity("A"), v.relation("r"), v.entity("B"), -300, -250},
                                     {v.entity("B"), v.relation("s"), v.entity("C"), 2000, 2000}};
  std::ostringstream out;
  write_facts(out, facts, v);
  std::istringstream in(out.str());
  Vocabulary v2;
  auto back = read_facts(in, v2);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(v2.name(back[0].subject), "A");
  EXPECT_EQ(back[0].start, -300);
  std::ostringstream again;
  write_facts(again, back, v2);
  EXPECT_EQ(again.str(), out.str());
}

TEST(Subgraph, DuplicateFactsAreDroppedAndNodesIncludeBothEnds) {
  Vocabulary v;
  std::istringstream in(kQuestionLine);
  auto qs = read_questions(in, v);
  ASSERT_EQ(qs.size(), 1u);
  const auto& g = qs[0].subgraph;
  EXPECT_EQ(g.edges.size(), 2u);
  EXPECT_EQ(g.nodes.size(), 3u);
  EXPECT_EQ(g.times, (std::vector<Year>{1940, 1948, 1949, 1960}));
  EXPECT_TRUE(g.contains(v.entity("Mayor")));
  EXPECT_EQ(qs[0].tokens, (std::vector<std::string>{"who", "held", "mayor", "in", "1945"}));
}

TEST(Subgraph, EmptyEdgeListIsContractError) {
  EXPECT_THROW(make_subgraph({}), ContractError);
}

TEST(Questions, MalformedRecordsAreRejected) {
  const std::vector<std::string> bad = {
      replace(kQuestionLine, R"("category":"explicit")", R"("category":"counting")"),
      replace(kQuestionLine, R"("answers":[{"kind":"entity","value":"Ann"}])", R"("answers":[])"),
      replace(kQuestionLine, R"("id":"q1",)", ""),
      replace(kQuestionLine, R"(1949,1960)", R"(1961,1960)"),
      replace(kQuestionLine, R"("kind":"entity")", R"("kind":"quantity")"),
      "{not json",
  };
  for (const auto& line : bad) {
    Vocabulary v;
    std::istringstream in(line);
    EXPECT_THROW(read_questions(in, v), ParseError) << line;
  }
}

TEST(Questions, JsonRoundTripPreservesEverything) {
  Vocabulary v;
  std::istringstream in(kQuestionLine);
  auto qs = read_questions(in, v);
  std::ostringstream out;
  write_questions(out, qs, v);
  Vocabulary v2;
  std::istringstream in2(out.str());
  auto back = read_questions(in2, v2);
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].text, qs[0].text);
  EXPECT_EQ(back[0].category, qs[0].category);
  EXPECT_EQ(back[0].subgraph.edges.size(), qs[0].subgraph.edges.size());
  std::ostringstream again;
  write_questions(again, back, v2);
  EXPECT_EQ(again.str(), out.str());
}

TEST(Questions, TimeAnswersAndDuplicateAnswersCollapse) {
  const std::string line = replace(kQuestionLine, R"([{"kind":"entity","value":"Ann"}])",
                                   R"([{"kind":"time","value":1940},{"kind":"time","value":1940}])");
  Vocabulary v;
  std::istringstream in(line);
  auto q = read_questions(in, v).at(0);
  ASSERT_EQ(q.gold_answers.size(), 1u);
  EXPECT_TRUE(q.gold_answers[0].is_time());
  EXPECT_EQ(q.gold_answers[0].year(), 1940);
  EXPECT_TRUE(q.has_time_answer());
  EXPECT_FALSE(q.has_entity_answer());
}

TEST(BackgroundKG, UnionOfTrainSubgraphsWithContiguousYears) {
  Vocabulary v;
  std::istringstream in(std::string(kQuestionLine) + "\n" +
                        replace(replace(kQuestionLine, "q1", "q2"), "1949,1960", "1949,1975"));
  auto qs = read_questions(in, v);
  auto kg = build_background_kg(qs, v);
  EXPECT_EQ(kg.facts.size(), 3u);
  EXPECT_EQ(kg.min_year, 1940);
  EXPECT_EQ(kg.max_year, 1975);
  EXPECT_EQ(kg.num_times(), 36u);
  EXPECT_EQ(kg.time_row(1975), 35u);
  EXPECT_FALSE(kg.time_row(1976).has_value());
  EXPECT_EQ(kg.entity_row(v.entity("Ann")), 0u);
  EXPECT_EQ(kg.entity_row(v.entity("Mayor")), 2u);
}

TEST(BackgroundKG, IndependentOfTrainOrder) {
  std::mt19937_64 rng(9);
  std::vector<std::string> lines;
  for (int i = 0; i < 12; ++i) {
    const std::string who = "P" + std::to_string(i);
    lines.push_back(R"({"id":"q)" + std::to_string(i) + R"(","text":"When?","category":"temporal","facts":[[")" +
                    who + R"(","held","Office",)" + std::to_string(1900 + 3 * i) + "," +
                    std::to_string(1902 + 3 * i) + R"(],["Office","in","Land",1900,1900]],"answers":[{"kind":"time","value":)" +
                    std::to_string(1900 + 3 * i) + "}]}");
  }
  auto canon = [&](std::vector<std::string> ls) {
    std::string text;
    for (const auto& l : ls) text += l + "\n";
    std::istringstream in(text);
    Vocabulary v;
    auto qs = read_questions(in, v);
    return canonical_form(build_background_kg(qs, v), v);
  };
  const auto base = canon(lines);
  for (int trial = 0; trial < 10; ++trial) {
    std::shuffle(lines.begin(), lines.end(), rng);
    EXPECT_EQ(canon(lines), base);
  }
}

TEST(BackgroundKG, EmptyTrainSplitIsConfigError) {
  Vocabulary v;
  EXPECT_THROW(build_background_kg({}, v), ConfigError);
}

TEST(BackgroundKG, UnseenEntitiesAndOutOfRangeYearsAreReported) {
  Vocabulary v;
  std::istringstream train(kQuestionLine);
  auto qs = read_questions(train, v);
  auto kg = build_background_kg(qs, v);
  std::istringstream test(replace(replace(kQuestionLine, "Bob", "Cy"), "1949,1960", "1949,1999"));
  auto q = read_questions(test, v).at(0);
  auto unseen = unseen_entities(q, kg);
  ASSERT_EQ(unseen.size(), 1u);
  EXPECT_EQ(v.name(unseen[0]), "Cy");
  EXPECT_EQ(out_of_range_years(q, kg), (std::vector<Year>{1999}));
}

TEST(AnswerRecall, CountsQuestionsWithAReachableGold) {
  Vocabulary v;
  std::istringstream in(std::string(kQuestionLine) + "\n" +
                        replace(kQuestionLine, R"("value":"Ann")", R"("value":"Zed")"));
  auto qs = read_questions(in, v);
  EXPECT_DOUBLE_EQ(answer_recall(qs), 0.5);
}

TEST(Category, NamesRoundTrip) {
  for (Category c : kAllCategories) EXPECT_EQ(parse_category(to_string(c)), c);
  EXPECT_FALSE(parse_category("quantity").has_value());
}
