#pragma once

// Ranked predictions, Hits@k per category, time tolerance, answer-type
// confusion, the question-time probe and ablation overlap.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <istream>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "twirgcn/error.hpp"
#include "twirgcn/kg.hpp"
#include "twirgcn/model.hpp"

namespace twirgcn {

struct Candidate {
  AnswerKind kind = AnswerKind::kEntity;
  std::string entity;  // entity name when kind is kEntity
  Year year = 0;       // when kind is kTime
  double score = 0.0;

  bool same_answer(const Candidate& o) const {
    return kind == o.kind && (kind == AnswerKind::kEntity ? entity == o.entity : year == o.year);
  }
};

struct Prediction {
  std::string id;
  std::vector<Candidate> ranked;  // non-increasing score
  std::optional<double> gate;
};

struct GoldRecord {
  std::string id;
  Category category = Category::kExplicit;
  std::vector<Candidate> answers;

  bool wants_entity() const {
    return std::any_of(answers.begin(), answers.end(),
                       [](const Candidate& c) { return c.kind == AnswerKind::kEntity; });
  }
  bool wants_time() const {
    return std::any_of(answers.begin(), answers.end(),
                       [](const Candidate& c) { return c.kind == AnswerKind::kTime; });
  }
  bool matches(const Candidate& c) const {
    return std::any_of(answers.begin(), answers.end(),
                       [&](const Candidate& g) { return g.same_answer(c); });
  }
};

inline GoldRecord gold_record(const QuestionInstance& q, const Vocabulary& vocab) {
  GoldRecord g{q.id, q.category, {}};
  for (const auto& a : q.gold_answers) {
    if (a.is_entity())
      g.answers.push_back({AnswerKind::kEntity, vocab.name(a.entity_id()), 0, 0.0});
    else
      g.answers.push_back({AnswerKind::kTime, {}, a.year(), 0.0});
  }
  return g;
}

inline std::vector<GoldRecord> gold_records(const std::vector<QuestionInstance>& qs,
                                            const Vocabulary& vocab) {
  std::vector<GoldRecord> out;
  for (const auto& q : qs) out.push_back(gold_record(q, vocab));
  return out;
}

// ---- prediction ------------------------------------------------------------------------

inline Candidate candidate_at(const ModelVocab& v, std::size_t index, double score) {
  if (index < v.num_entities()) return {AnswerKind::kEntity, v.entities()[index], 0, score};
  return {AnswerKind::kTime, {}, v.min_year() + static_cast<Year>(index - v.num_entities()), score};
}

// Ties break toward the lower candidate index.
inline Prediction predict_question(TwiRGCN& model, const PreparedQuestion& q, std::size_t top_k) {
  TWIRGCN_REQUIRE(top_k >= 1, "top_k must be positive");
  Tape tape(false);
  auto r = forward(tape, model, q);
  const auto& s = r.logits.value();
  std::vector<std::size_t> order(s.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t k = std::min(top_k, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::size_t a, std::size_t b) { return s[a] > s[b] || (s[a] == s[b] && a < b); });
  Prediction p;
  p.id = q.id;
  p.gate = model.config.gating ? r.gate.item() : 0.5;
  for (std::size_t i = 0; i < k; ++i) p.ranked.push_back(candidate_at(model.vocab, order[i], s[order[i]]));
  return p;
}

// Worker threads take interleaved slices; results land in input order so the
// output does not depend on the worker count.
template <class Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline std::vector<Prediction> predict_all(TwiRGCN& model, const std::vector<PreparedQuestion>& qs,
                                           std::size_t top_k, std::size_t workers = 1) {
  std::vector<Prediction> out(qs.size());
  parallel_for(qs.size(), workers, [&](std::size_t i) { out[i] = predict_question(model, qs[i], top_k); });
  return out;
}

struct SplitScore {
  double hits1 = 0.0;
  double loss = 0.0;  // mean over questions with a gold candidate
  std::size_t questions = 0;
};

// Hits@1 and loss straight from candidate indices; used for validation.
inline SplitScore score_split(TwiRGCN& model, const std::vector<PreparedQuestion>& qs,
                              std::size_t workers = 1) {
  std::vector<double> hit(qs.size(), 0.0), loss(qs.size(), 0.0);
  std::vector<char> has_loss(qs.size(), 0);
  parallel_for(qs.size(), workers, [&](std::size_t i) {
    Tape tape(false);
    auto r = forward(tape, model, qs[i]);
    const auto& s = r.logits.value();
    const auto best = static_cast<std::size_t>(std::max_element(s.begin(), s.end()) - s.begin());
    hit[i] = std::binary_search(qs[i].gold.begin(), qs[i].gold.end(), best) ? 1.0 : 0.0;
    if (r.loss) {
      loss[i] = r.loss->item();
      has_loss[i] = 1;
    }
  });
  SplitScore out;
  out.questions = qs.size();
  std::size_t n_loss = 0;
  for (std::size_t i = 0; i < qs.size(); ++i) {
    out.hits1 += hit[i];
    if (has_loss[i]) {
      out.loss += loss[i];
      ++n_loss;
    }
  }
  if (!qs.empty()) out.hits1 /= static_cast<double>(qs.size());
  if (n_loss) out.loss /= static_cast<double>(n_loss);
  return out;
}

// ---- prediction files ----------------------------------------------------------------

inline nlohmann::json candidate_to_json(const Candidate& c) {
  nlohmann::json j = {{"kind", std::string(to_string(c.kind))}};
  if (c.kind == AnswerKind::kEntity) j["value"] = c.entity;
  else j["value"] = c.year;
  j["score"] = c.score;
  return j;
}

inline Candidate candidate_from_json(const nlohmann::json& j) {
  Candidate c;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "entity") {
    c.kind = AnswerKind::kEntity;
    c.entity = j.at("value").get<std::string>();
  } else if (kind == "time") {
    c.kind = AnswerKind::kTime;
    c.year = j.at("value").get<Year>();
  } else {
    throw ParseError("unknown candidate kind '" + kind + "'");
  }
  c.score = j.value("score", 0.0);
  return c;
}

inline void write_predictions(std::ostream& out, const std::vector<Prediction>& ps) {
  for (const auto& p : ps) {
    nlohmann::json j = {{"id", p.id}, {"ranked", nlohmann::json::array()}};
    for (const auto& c : p.ranked) j["ranked"].push_back(candidate_to_json(c));
    if (p.gate) j["gate"] = *p.gate;
    out << j.dump() << "\n";
  }
}

inline std::vector<Prediction> read_predictions(std::istream& in) {
  std::vector<Prediction> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      Prediction p;
      p.id = j.at("id").get<std::string>();
      for (const auto& c : j.at("ranked")) p.ranked.push_back(candidate_from_json(c));
      if (j.contains("gate")) p.gate = j["gate"].get<double>();
      out.push_back(std::move(p));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("predictions line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

// ---- metrics -------------------------------------------------------------------------

namespace detail {

inline std::vector<std::pair<const Prediction*, const GoldRecord*>> align(
    const std::vector<Prediction>& preds, const std::vector<GoldRecord>& golds) {
  std::map<std::string, const GoldRecord*> by_id;
  for (const auto& g : golds) by_id[g.id] = &g;
  std::vector<std::pair<const Prediction*, const GoldRecord*>> out;
  std::vector<std::string> missing;
  for (const auto& p : preds) {
    auto it = by_id.find(p.id);
    if (it == by_id.end()) missing.push_back(p.id);
    else out.emplace_back(&p, it->second);
  }
  if (!missing.empty()) {
    std::string list;
    for (std::size_t i = 0; i < missing.size(); ++i) list += (i ? ", " : "") + missing[i];
    throw EvaluationError("predictions without gold answers: " + list);
  }
  return out;
}

}  // namespace detail

struct CategoryRate {
  double rate = 0.0;
  std::size_t count = 0;
};

struct HitsReport {
  std::size_t k = 1;
  double overall = 0.0;
  std::size_t count = 0;
  std::map<Category, CategoryRate> by_category;  // every category, possibly with count 0
};

inline HitsReport hits_at_k(const std::vector<Prediction>& preds,
                            const std::vector<GoldRecord>& golds, std::size_t k) {
  TWIRGCN_REQUIRE(k >= 1, "k must be positive");
  HitsReport r;
  r.k = k;
  for (Category c : kAllCategories) r.by_category[c] = {};
  std::size_t hits = 0;
  std::map<Category, std::size_t> cat_hits;
  for (auto [p, g] : detail::align(preds, golds)) {
    if (p->ranked.size() < k)
      throw EvaluationError("prediction " + p->id + " has fewer than " + std::to_string(k) +
                            " candidates");
    bool hit = false;
    for (std::size_t i = 0; i < k && !hit; ++i) hit = g->matches(p->ranked[i]);
    ++r.count;
    ++r.by_category[g->category].count;
    if (hit) {
      ++hits;
      ++cat_hits[g->category];
    }
  }
  if (r.count) r.overall = static_cast<double>(hits) / static_cast<double>(r.count);
  for (auto& [c, cr] : r.by_category)
    if (cr.count) cr.rate = static_cast<double>(cat_hits[c]) / static_cast<double>(cr.count);
  return r;
}

struct ToleranceReport {
  Year window = 0;
  double rate = 0.0;
  std::size_t count = 0;  // questions with a time gold answer
};

// A time question counts when its top-1 is a year within `window` of some gold year.
inline ToleranceReport hits_with_tolerance(const std::vector<Prediction>& preds,
                                           const std::vector<GoldRecord>& golds, Year window) {
  TWIRGCN_REQUIRE(window >= 0, "tolerance window must be non-negative");
  ToleranceReport r;
  r.window = window;
  std::size_t hits = 0;
  for (auto [p, g] : detail::align(preds, golds)) {
    if (!g->wants_time()) continue;
    ++r.count;
    if (p->ranked.empty() || p->ranked[0].kind != AnswerKind::kTime) continue;
    const Year y = p->ranked[0].year;
    for (const auto& a : g->answers)
      if (a.kind == AnswerKind::kTime && std::abs(a.year - y) <= window) {
        ++hits;
        break;
      }
  }
  if (r.count) r.rate = static_cast<double>(hits) / static_cast<double>(r.count);
  return r;
}

struct ConfusionReport {
  double entity_as_time = 0.0;  // entity-gold questions whose top-1 is a time
  double time_as_entity = 0.0;
  std::size_t entity_questions = 0, time_questions = 0;
};

inline ConfusionReport answer_type_confusion(const std::vector<Prediction>& preds,
                                             const std::vector<GoldRecord>& golds) {
  ConfusionReport r;
  std::size_t e_wrong = 0, t_wrong = 0;
  for (auto [p, g] : detail::align(preds, golds)) {
    if (p->ranked.empty()) continue;
    const auto top = p->ranked[0].kind;
    if (g->wants_entity() && !g->wants_time()) {
      ++r.entity_questions;
      if (top == AnswerKind::kTime) ++e_wrong;
    } else if (g->wants_time() && !g->wants_entity()) {
      ++r.time_questions;
      if (top == AnswerKind::kEntity) ++t_wrong;
    }
  }
  if (r.entity_questions) r.entity_as_time = static_cast<double>(e_wrong) / static_cast<double>(r.entity_questions);
  if (r.time_questions) r.time_as_entity = static_cast<double>(t_wrong) / static_cast<double>(r.time_questions);
  return r;
}

// First year mentioned in the question text. "300 BC" style mentions (1-4
// digits) are negative years; bare numbers must be standalone 3-4 digit tokens
// within [1000, 2100].
inline std::optional<Year> extract_year(const std::string& text) {
  static const std::regex bc(R"(\b(\d{1,4})\s*(BC|BCE|B\.C\.)(?![A-Za-z]))", std::regex::icase);
  static const std::regex plain(R"(\b(\d{3,4})\b)");
  std::optional<std::pair<std::ptrdiff_t, Year>> best;
  std::vector<std::ptrdiff_t> bc_starts;
  for (std::sregex_iterator it(text.begin(), text.end(), bc), end; it != end; ++it) {
    bc_starts.push_back(it->position(1));
    if (!best) best = {{it->position(0), -std::stoi((*it)[1].str())}};
  }
  for (std::sregex_iterator it(text.begin(), text.end(), plain), end; it != end; ++it) {
    const std::ptrdiff_t pos = it->position(1);
    if (best && pos >= best->first) break;
    if (std::find(bc_starts.begin(), bc_starts.end(), pos) != bc_starts.end()) continue;
    const Year y = std::stoi((*it)[1].str());
    if (y < 1000 || y > 2100) continue;
    best = {{pos, y}};
    break;
  }
  if (!best) return std::nullopt;
  return best->second;
}

struct ProbeReport {
  std::size_t count = 0;
  double median_abs_diff = 0.0;
  double exact = 0.0;
  double within_5 = 0.0;
  double within_20 = 0.0;
  std::vector<Year> diffs;  // |argmax year - mentioned year| per probed question
};

// Nearest time embedding (cosine) to q_t for every question that names a year
// inside the time table.
inline ProbeReport question_time_probe(TwiRGCN& model, const std::vector<QuestionInstance>& qs) {
  ProbeReport r;
  Tape tape(false);
  Var times = tape.param(model.params.store.times);
  Var w_tq = tape.param(model.params.head.w_tq);
  for (const auto& q : qs) {
    auto y = extract_year(q.text);
    if (!y || !model.vocab.time_row(*y)) continue;
    Var q_b = encode_question(tape, model.params.encoder, model.vocab.tokens().ids(q.tokens));
    Var q_t = question_time(w_tq, q_b);
    const auto& c = row_cosine(times, q_t).value();
    const auto best = static_cast<std::size_t>(std::max_element(c.begin(), c.end()) - c.begin());
    r.diffs.push_back(std::abs(model.vocab.min_year() + static_cast<Year>(best) - *y));
  }
  r.count = r.diffs.size();
  if (r.count == 0) return r;
  auto sorted = r.diffs;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  r.median_abs_diff = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  auto frac = [&](Year lim) {
    return static_cast<double>(std::count_if(sorted.begin(), sorted.end(), [&](Year d) { return d <= lim; })) /
           static_cast<double>(n);
  };
  r.exact = frac(0);
  r.within_5 = frac(5);
  r.within_20 = frac(20);
  return r;
}

struct OverlapCounts {
  std::size_t both = 0, only_a = 0, only_b = 0, neither = 0;
  std::size_t total() const { return both + only_a + only_b + neither; }
};

struct OverlapReport {
  OverlapCounts overall;
  std::map<Category, OverlapCounts> by_category;  // every category
};

// Hits@1 agreement between two prediction sets over the same question ids.
inline OverlapReport prediction_overlap(const std::vector<Prediction>& a,
                                        const std::vector<Prediction>& b,
                                        const std::vector<GoldRecord>& golds) {
  std::map<std::string, const Prediction*> a_by_id, b_by_id;
  for (const auto& p : a) a_by_id[p.id] = &p;
  for (const auto& p : b) b_by_id[p.id] = &p;
  std::vector<std::string> diff;
  for (const auto& [id, p] : a_by_id)
    if (!b_by_id.count(id)) diff.push_back(id);
  for (const auto& [id, p] : b_by_id)
    if (!a_by_id.count(id)) diff.push_back(id);
  if (!diff.empty()) {
    std::sort(diff.begin(), diff.end());
    std::string list;
    for (std::size_t i = 0; i < diff.size(); ++i) list += (i ? ", " : "") + diff[i];
    throw EvaluationError("prediction files cover different questions: " + list);
  }
  OverlapReport out;
  for (Category c : kAllCategories) out.by_category[c] = {};
  for (auto [pa, g] : detail::align(a, golds)) {
    const Prediction* pb = b_by_id.at(pa->id);
    const bool ha = !pa->ranked.empty() && g->matches(pa->ranked[0]);
    const bool hb = !pb->ranked.empty() && g->matches(pb->ranked[0]);
    for (OverlapCounts* o : {&out.by_category[g->category], &out.overall}) {
      if (ha && hb) ++o->both;
      else if (ha) ++o->only_a;
      else if (hb) ++o->only_b;
      else ++o->neither;
    }
  }
  return out;
}

inline nlohmann::json overlap_to_json(const OverlapReport& r, const std::string& a = "only_a",
                                      const std::string& b = "only_b") {
  auto counts = [&](const OverlapCounts& n) {
    return nlohmann::json{{"both", n.both}, {a, n.only_a}, {b, n.only_b}, {"neither", n.neither}};
  };
  nlohmann::json cats = nlohmann::json::object();
  for (const auto& [c, n] : r.by_category) cats[std::string(to_string(c))] = counts(n);
  return {{"overall", counts(r.overall)}, {"by_category", cats}};
}

// ---- report ----------------------------------------------------------------------------

struct MetricsReport {
  std::vector<HitsReport> hits;            // k = 1, 2, 3
  std::vector<ToleranceReport> tolerance;  // windows 0, 1, 3
  ConfusionReport confusion;
  std::optional<ProbeReport> probe;
  std::optional<OverlapReport> overlap;
};

inline MetricsReport compute_metrics(const std::vector<Prediction>& preds,
                                     const std::vector<GoldRecord>& golds) {
  MetricsReport m;
  for (std::size_t k : {1, 2, 3}) m.hits.push_back(hits_at_k(preds, golds, k));
  for (Year w : {0, 1, 3}) m.tolerance.push_back(hits_with_tolerance(preds, golds, w));
  m.confusion = answer_type_confusion(preds, golds);
  return m;
}

inline nlohmann::json hits_to_json(const HitsReport& h) {
  nlohmann::json cats = nlohmann::json::object();
  for (const auto& [c, cr] : h.by_category)
    cats[std::string(to_string(c))] = {{"rate", cr.rate}, {"count", cr.count}};
  return {{"k", h.k}, {"overall", h.overall}, {"count", h.count}, {"by_category", cats}};
}

inline nlohmann::json metrics_to_json(const MetricsReport& m) {
  nlohmann::json j;
  j["hits"] = nlohmann::json::array();
  for (const auto& h : m.hits) j["hits"].push_back(hits_to_json(h));
  j["time_tolerance"] = nlohmann::json::array();
  for (const auto& t : m.tolerance)
    j["time_tolerance"].push_back({{"window", t.window}, {"rate", t.rate}, {"count", t.count}});
  j["answer_type_confusion"] = {{"entity_as_time", m.confusion.entity_as_time},
                                {"time_as_entity", m.confusion.time_as_entity},
                                {"entity_questions", m.confusion.entity_questions},
                                {"time_questions", m.confusion.time_questions}};
  if (m.probe)
    j["question_time_probe"] = {{"count", m.probe->count},
                                {"median_abs_diff", m.probe->median_abs_diff},
                                {"exact", m.probe->exact},
                                {"within_5", m.probe->within_5},
                                {"within_20", m.probe->within_20}};
  if (m.overlap) j["overlap"] = overlap_to_json(*m.overlap);
  return j;
}

inline std::string metrics_table(const MetricsReport& m) {
  std::ostringstream o;
  char buf[160];
  auto row = [&](const std::string& name, double v, std::size_t n) {
    std::snprintf(buf, sizeof buf, "%-28s %8.4f  (n=%zu)\n", name.c_str(), v, n);
    o << buf;
  };
  for (const auto& h : m.hits) {
    const std::string name = "hits@" + std::to_string(h.k);
    row(name, h.overall, h.count);
    for (const auto& [c, cr] : h.by_category) row("  " + name + " " + std::string(to_string(c)), cr.rate, cr.count);
  }
  for (const auto& t : m.tolerance) row("time hits@1 +-" + std::to_string(t.window), t.rate, t.count);
  row("entity answered as time", m.confusion.entity_as_time, m.confusion.entity_questions);
  row("time answered as entity", m.confusion.time_as_entity, m.confusion.time_questions);
  if (m.probe) {
    row("probe median |diff|", m.probe->median_abs_diff, m.probe->count);
    row("probe exact", m.probe->exact, m.probe->count);
    row("probe within 5", m.probe->within_5, m.probe->count);
    row("probe within 20", m.probe->within_20, m.probe->count);
  }
  if (m.overlap) {
    auto line = [&](const std::string& name, const OverlapCounts& n) {
      std::snprintf(buf, sizeof buf, "overlap %-20s both=%zu only_a=%zu only_b=%zu neither=%zu\n",
                    name.c_str(), n.both, n.only_a, n.only_b, n.neither);
      o << buf;
    };
    line("overall", m.overlap->overall);
    for (const auto& [c, n] : m.overlap->by_category) line(std::string(to_string(c)), n);
  }
  return o.str();
}

}  // namespace twirgcn
