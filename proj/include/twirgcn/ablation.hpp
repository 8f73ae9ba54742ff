#pragma once

// Paired gated / fixed-mixing training runs from one initialization.

#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "twirgcn/evaluator.hpp"
#include "twirgcn/trainer.hpp"

namespace twirgcn {

inline constexpr const char* kGatedColumn = "with gating";
inline constexpr const char* kFixedColumn = "w/o gating";

struct AblationArm {
  std::string name;
  double epoch0_train_loss = 0.0;
  TrainResult result;
  MetricsReport test;
  std::vector<Prediction> predictions;
};

struct AblationReport {
  AblationArm gated, fixed;
  double hits1_delta = 0.0;  // gated minus fixed, signed
  std::map<Category, double> category_delta;
  OverlapReport overlap;  // a = gated, b = fixed

  bool epoch0_identical() const { return gated.epoch0_train_loss == fixed.epoch0_train_loss; }
};

// Both arms share the embedding store and the parameter seed, so with w_v at
// zero their epoch-0 passes are the same computation.
inline AblationReport run_ablation(TrainingConfig cfg, const Dataset& d, const EmbeddingStore& store,
                                   std::size_t top_k = 3) {
  AblationReport rep;
  const auto golds = gold_records(d.test, d.vocab);
  auto run_arm = [&](bool gating, AblationArm& arm) {
    cfg.gating_enabled = gating;
    arm.name = gating ? kGatedColumn : kFixedColumn;
    auto run = train_model(cfg, d, store);
    arm.result = run.result;
    arm.epoch0_train_loss = run.result.log.front().train_loss;
    arm.predictions = predict_all(run.model, run.test, top_k, cfg.workers);
    arm.test = compute_metrics(arm.predictions, golds);
  };
  run_arm(true, rep.gated);
  run_arm(false, rep.fixed);
  const HitsReport& g1 = rep.gated.test.hits.front();
  const HitsReport& f1 = rep.fixed.test.hits.front();
  rep.hits1_delta = g1.overall - f1.overall;
  for (Category c : kAllCategories)
    rep.category_delta[c] = g1.by_category.at(c).rate - f1.by_category.at(c).rate;
  rep.overlap = prediction_overlap(rep.gated.predictions, rep.fixed.predictions, golds);
  return rep;
}

inline nlohmann::json ablation_to_json(const AblationReport& r) {
  auto arm = [](const AblationArm& a) {
    nlohmann::json log = nlohmann::json::array();
    for (const auto& e : a.result.log) log.push_back(epoch_to_json(e));
    return nlohmann::json{{"epoch0_train_loss", a.epoch0_train_loss},
                          {"best_epoch", a.result.best_epoch},
                          {"best_valid_hits1", a.result.best_valid_hits1},
                          {"test", metrics_to_json(a.test)},
                          {"epochs", log}};
  };
  nlohmann::json cat = nlohmann::json::object();
  for (const auto& [c, v] : r.category_delta) cat[std::string(to_string(c))] = v;
  return {{"columns", {kGatedColumn, kFixedColumn}},
          {kGatedColumn, arm(r.gated)},
          {kFixedColumn, arm(r.fixed)},
          {"epoch0_identical", r.epoch0_identical()},
          {"hits1_delta", r.hits1_delta},
          {"category_delta", cat},
          {"overlap", overlap_to_json(r.overlap, "only_with_gating", "only_without_gating")}};
}

// Side-by-side Hits@1 table.
inline std::string ablation_table(const AblationReport& r) {
  std::ostringstream o;
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-12s %12s %12s %10s\n", "", kGatedColumn, kFixedColumn, "delta");
  o << buf;
  const HitsReport& g1 = r.gated.test.hits.front();
  const HitsReport& f1 = r.fixed.test.hits.front();
  std::snprintf(buf, sizeof buf, "%-12s %12.4f %12.4f %+10.4f\n", "overall", g1.overall, f1.overall,
                r.hits1_delta);
  o << buf;
  for (Category c : kAllCategories) {
    std::snprintf(buf, sizeof buf, "%-12s %12.4f %12.4f %+10.4f\n", std::string(to_string(c)).c_str(),
                  g1.by_category.at(c).rate, f1.by_category.at(c).rate, r.category_delta.at(c));
    o << buf;
  }
  return o.str();
}

}  // namespace twirgcn
