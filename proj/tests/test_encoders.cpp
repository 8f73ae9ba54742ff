#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <cstdio>
#include <filesystem>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "twirgcn/encoders.hpp"
#include "twirgcn/grad_check.hpp"

using namespace twirgcn;

namespace {

struct SmallKG {
  Vocabulary vocab;
  std::vector<QuestionInstance> train;
  BackgroundKG kg;
};

SmallKG small_kg() {
  const char* text =
      R"({"id":"a","text":"Who held Mayor in 1945?","category":"explicit","facts":[["Ann","held","Mayor",1940,1948],["Bob","held","Mayor",1949,1960]],"answers":[{"kind":"entity","value":"Ann"}]})"
      "\n"
      R"({"id":"b","text":"When did Cy play for Reds?","category":"temporal","facts":[["Cy","plays_for","Reds",1950,1953],["Cy","award","Cup",1951,1951]],"answers":[{"kind":"time","value":1950}]})";
  SmallKG s;
  std::istringstream in(text);
  s.train = read_questions(in, s.vocab);
  s.kg = build_background_kg(s.train, s.vocab);
  return s;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("twirgcn_test_" + name)).string();
}

}  // namespace

TEST(TokenVocabulary, UnknownTokensMapToReservedRow) {
  auto s = small_kg();
  auto v = TokenVocabulary::from_questions(s.train);
  EXPECT_EQ(v.id(kUnkToken), 0u);
  EXPECT_EQ(v.id("never_seen"), 0u);
  EXPECT_NE(v.id("mayor"), 0u);
  EXPECT_EQ(v.ids({}), (std::vector<std::size_t>{0}));
  // First-seen order, so the same train split gives the same ids.
  EXPECT_EQ(v.tokens()[1], "who");
}

TEST(QuestionEncoder, QbIsProjectionOfTokenMean) {
  std::mt19937_64 rng(1);
  auto enc = QuestionEncoderParams::init(5, 4, rng);
  Tape t;
  Var q = encode_question(t, enc, {1, 3, 3});
  std::vector<double> mean(4, 0.0);
  for (std::size_t id : {1, 3, 3})
    for (std::size_t j = 0; j < 4; ++j) mean[j] += enc.token_table.at(id, j) / 3.0;
  for (std::size_t i = 0; i < 4; ++i) {
    double expect = 0.0;
    for (std::size_t j = 0; j < 4; ++j) expect += enc.projection.at(i, j) * mean[j];
    EXPECT_NEAR(q.value()[i], expect, 1e-14);
  }
}

TEST(QuestionEncoder, GradientsPassFiniteDifferences) {
  std::mt19937_64 rng(2);
  auto enc = QuestionEncoderParams::init(6, 5, rng);
  Tensor w_tq = normal_tensor({5, 5}, 0.4, rng);
  Tensor target = normal_tensor({5}, 1.0, rng);
  auto f = [&](Tape& t) {
    Var q_b = encode_question(t, enc, {2, 0, 5, 2});
    return cosine_similarity(question_time(t.param(w_tq), q_b), t.constant(target));
  };
  EXPECT_LE(grad_check(f, {&enc.token_table, &enc.projection, &w_tq}), 1e-4);
}

TEST(EmbeddingStore, RandomInitShapesAndDeterminism) {
  auto s = small_kg();
  auto a = init_random(s.kg, 8, 42);
  auto b = init_random(s.kg, 8, 42);
  auto c = init_random(s.kg, 8, 43);
  EXPECT_EQ(a.entities.shape, (Shape{s.kg.entities.size() + 1, 8}));
  EXPECT_EQ(a.times.shape, (Shape{s.kg.num_times(), 8}));
  EXPECT_EQ(a.unk_row(), s.kg.entities.size());
  EXPECT_EQ(a.provenance, EmbeddingProvenance::kRandom);
  EXPECT_EQ(a.entities.values, b.entities.values);
  EXPECT_NE(a.entities.values, c.entities.values);
  EXPECT_THROW(init_random(s.kg, 7, 1), ContractError);
}

TEST(EmbeddingStore, RandomRowsHaveTheDocumentedScale) {
  auto s = small_kg();
  auto a = init_random(s.kg, 256, 3);
  double sq = 0.0;
  for (double v : a.times.values) sq += v * v;
  const double sd = std::sqrt(sq / static_cast<double>(a.times.values.size()));
  EXPECT_NEAR(sd, 1.0 / 16.0, 0.005);
}

TEST(TComplex, ZeroEpochsReproducesRandomInit) {
  auto s = small_kg();
  auto r = pretrain_tcomplex(s.kg, 8, 0, 11);
  auto init = init_random(s.kg, 8, 11);
  EXPECT_EQ(r.store.entities.values, init.entities.values);
  EXPECT_EQ(r.store.times.values, init.times.values);
  EXPECT_EQ(r.store.provenance, EmbeddingProvenance::kRandom);
}

TEST(TComplex, ScoreMatchesComplexArithmetic) {
  std::mt19937_64 rng(4);
  TComplexParams p;
  p.ent_re = normal_tensor({3, 2}, 1.0, rng);
  p.ent_im = normal_tensor({3, 2}, 1.0, rng);
  p.rel_re = normal_tensor({1, 2}, 1.0, rng);
  p.rel_im = normal_tensor({1, 2}, 1.0, rng);
  p.time_re = normal_tensor({2, 2}, 1.0, rng);
  p.time_im = normal_tensor({2, 2}, 1.0, rng);
  TemporalTriple x{0, 0, 1, 1};
  double expect = 0.0;
  for (std::size_t k = 0; k < 2; ++k) {
    std::complex<double> u(p.ent_re.at(0, k), p.ent_im.at(0, k));
    std::complex<double> v(p.rel_re.at(0, k), p.rel_im.at(0, k));
    std::complex<double> w(p.time_re.at(1, k), p.time_im.at(1, k));
    std::complex<double> o(p.ent_re.at(1, k), p.ent_im.at(1, k));
    expect += (u * v * w * std::conj(o)).real();
  }
  EXPECT_NEAR(tcomplex_score(p, x), expect, 1e-12);
  Tape t;
  auto scores = tcomplex_object_scores(t, p, {x});
  EXPECT_EQ(scores.shape(), (Shape{1, 2}));
  EXPECT_NEAR(scores.value()[1], expect, 1e-12);
}

TEST(TComplex, IntervalInstantsAreCappedWithEndpointsKept) {
  EXPECT_EQ(interval_instants(1990, 1993), (std::vector<Year>{1990, 1991, 1992, 1993}));
  auto capped = interval_instants(1900, 1999, 16);
  EXPECT_EQ(capped.size(), 16u);
  EXPECT_EQ(capped.front(), 1900);
  EXPECT_EQ(capped.back(), 1999);
  EXPECT_TRUE(std::is_sorted(capped.begin(), capped.end()));
}

TEST(TComplex, PretrainingLowersTheLoss) {
  auto s = small_kg();
  auto r = pretrain_tcomplex(s.kg, 8, 10, 5);
  ASSERT_EQ(r.epoch_losses.size(), 10u);
  EXPECT_LT(r.epoch_losses.back(), r.epoch_losses.front());
  EXPECT_EQ(r.store.provenance, EmbeddingProvenance::kPretrained);
  EXPECT_TRUE(r.store.all_finite());
}

TEST(EmbeddingCheckpoint, SaveLoadAlignRoundTrip) {
  auto s = small_kg();
  auto store = pretrain_tcomplex(s.kg, 8, 3, 9).store;
  const auto path = temp_path("emb.bin");
  save_embeddings(path, store, s.kg);
  save_vocab_sidecar(path + ".vocab", s.kg, s.vocab);
  auto loaded = load_embeddings(path, path + ".vocab");
  EXPECT_EQ(loaded.store.entities.values, store.entities.values);
  EXPECT_EQ(loaded.store.times.values, store.times.values);
  EXPECT_EQ(loaded.store.provenance, EmbeddingProvenance::kPretrained);
  auto aligned = align_embeddings(loaded, s.kg, s.vocab, init_random(s.kg, 8, 1));
  EXPECT_EQ(aligned.entities.values, store.entities.values);
  EXPECT_EQ(aligned.times.values, store.times.values);
  std::remove(path.c_str());
  std::remove((path + ".vocab").c_str());
}

TEST(EmbeddingCheckpoint, TruncatedFileIsCheckpointError) {
  auto s = small_kg();
  auto store = init_random(s.kg, 8, 1);
  const auto path = temp_path("trunc.bin");
  save_embeddings(path, store, s.kg);
  save_vocab_sidecar(path + ".vocab", s.kg, s.vocab);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 16);
  EXPECT_THROW(load_embeddings(path, path + ".vocab"), CheckpointError);
  std::remove(path.c_str());
  std::remove((path + ".vocab").c_str());
}
