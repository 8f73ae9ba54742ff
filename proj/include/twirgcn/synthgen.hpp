#pragma once

// Deterministic toy temporal KGs (office holders, team stints, awards) and
// four-category question sets whose gold answers come from an exhaustive
// symbolic oracle.

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "twirgcn/error.hpp"
#include "twirgcn/kg.hpp"

namespace twirgcn {

struct WorldSpec {
  std::size_t positions = 20;
  std::size_t holders_per_position = 8;
  std::size_t min_tenure = 12;
  std::size_t athletes = 60;
  std::size_t teams = 16;
  std::size_t awards = 10;
  std::size_t max_stints = 3;        // plays_for stints per athlete
  std::size_t awards_per_award = 12; // distinct years each award is given
  Year first_year = 1900;
  Year last_year = 1999;
  std::uint64_t seed = 7;

  std::size_t width() const { return static_cast<std::size_t>(last_year - first_year) + 1; }

  void validate() const {
    if (last_year < first_year || width() < 30)
      throw GenerationError("year range must span at least 30 years");
    if (positions == 0 || holders_per_position == 0 || min_tenure == 0)
      throw GenerationError("world needs at least one position, holder and tenure year");
    if (holders_per_position * min_tenure > width())
      throw GenerationError("infeasible world: " + std::to_string(holders_per_position) +
                            " holders with minimum tenure " + std::to_string(min_tenure) +
                            " do not fit in " + std::to_string(width()) + " years");
    if (awards > 0 && awards_per_award > width())
      throw GenerationError("infeasible world: more award years than years in range");
    if (athletes > 0 && teams == 0) throw GenerationError("athletes need at least one team");
  }

  nlohmann::json to_json() const {
    return {{"positions", positions},   {"holders_per_position", holders_per_position},
            {"min_tenure", min_tenure}, {"athletes", athletes},
            {"teams", teams},           {"awards", awards},
            {"max_stints", max_stints}, {"awards_per_award", awards_per_award},
            {"first_year", first_year}, {"last_year", last_year},
            {"seed", seed}};
  }
};

inline constexpr const char* kPositionHeld = "position_held";
inline constexpr const char* kPlaysFor = "plays_for";
inline constexpr const char* kAwardReceived = "award_received";

struct World {
  WorldSpec spec;
  Vocabulary vocab;
  std::vector<TemporalFact> facts;
  std::vector<EntityId> positions;
  std::vector<EntityId> people;
  RelationId position_held, plays_for, award_received;
};

// Splits [first, last] into `n` consecutive tenures of at least `min_len` years.
inline std::vector<std::pair<Year, Year>> partition_tenures(Year first, Year last, std::size_t n,
                                                            std::size_t min_len,
                                                            std::mt19937_64& rng) {
  const auto width = static_cast<std::size_t>(last - first) + 1;
  if (n * min_len > width) throw GenerationError("infeasible tenure partition");
  const std::size_t extra = width - n * min_len;
  std::uniform_int_distribution<std::size_t> cut(0, extra);
  std::vector<std::size_t> cuts(n > 0 ? n - 1 : 0);
  for (auto& c : cuts) c = cut(rng);
  std::sort(cuts.begin(), cuts.end());
  cuts.insert(cuts.begin(), 0);
  cuts.push_back(extra);
  std::vector<std::pair<Year, Year>> out;
  Year start = first;
  for (std::size_t i = 0; i < n; ++i) {
    const auto len = static_cast<Year>(min_len + cuts[i + 1] - cuts[i]);
    out.emplace_back(start, start + len - 1);
    start += len;
  }
  return out;
}

inline World generate_world(const WorldSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  World w;
  w.spec = spec;
  w.position_held = w.vocab.relation(kPositionHeld);
  w.plays_for = w.vocab.relation(kPlaysFor);
  w.award_received = w.vocab.relation(kAwardReceived);

  std::size_t next_person = 0;
  auto new_person = [&] {
    EntityId e = w.vocab.entity("Person_" + std::to_string(next_person++));
    w.people.push_back(e);
    return e;
  };

  for (std::size_t p = 0; p < spec.positions; ++p) {
    EntityId pos = w.vocab.entity("Position_" + std::to_string(p));
    w.positions.push_back(pos);
    for (auto [s, e] : partition_tenures(spec.first_year, spec.last_year,
                                         spec.holders_per_position, spec.min_tenure, rng))
      w.facts.push_back({new_person(), w.position_held, pos, s, e});
  }

  std::vector<EntityId> teams;
  for (std::size_t t = 0; t < spec.teams; ++t)
    teams.push_back(w.vocab.entity("Team_" + std::to_string(t)));
  std::uniform_int_distribution<Year> year(spec.first_year, spec.last_year);
  for (std::size_t a = 0; a < spec.athletes; ++a) {
    EntityId person = new_person();
    const std::size_t stints = 1 + std::uniform_int_distribution<std::size_t>(
                                       0, std::max<std::size_t>(spec.max_stints, 1) - 1)(rng);
    Year start = year(rng);
    std::uniform_int_distribution<std::size_t> team(0, teams.size() - 1);
    std::uniform_int_distribution<Year> len(1, 8);
    for (std::size_t k = 0; k < stints && start <= spec.last_year; ++k) {
      const Year end = std::min<Year>(spec.last_year, start + len(rng));
      w.facts.push_back({person, w.plays_for, teams[team(rng)], start, end});
      start = end + 1;
    }
  }

  std::uniform_int_distribution<std::size_t> anyone(0, w.people.size() - 1);
  for (std::size_t a = 0; a < spec.awards; ++a) {
    EntityId award = w.vocab.entity("Award_" + std::to_string(a));
    std::set<Year> years;
    while (years.size() < spec.awards_per_award) years.insert(year(rng));
    for (Year y : years) w.facts.push_back({w.people[anyone(rng)], w.award_received, award, y, y});
  }
  return w;
}

// ---- templates and oracle -------------------------------------------------------------

enum class Template { kExplicitIn, kImplicitBefore, kImplicitAfter, kTemporalWhen, kOrdinalKth };

inline Category category_of(Template t) {
  switch (t) {
    case Template::kExplicitIn: return Category::kExplicit;
    case Template::kImplicitBefore:
    case Template::kImplicitAfter: return Category::kImplicit;
    case Template::kTemporalWhen: return Category::kTemporal;
    case Template::kOrdinalKth: return Category::kOrdinal;
  }
  return Category::kExplicit;
}

struct TemplateInstance {
  Template kind = Template::kExplicitIn;
  EntityId position;
  EntityId anchor;  // the person named in implicit and temporal questions
  Year year = 0;    // explicit questions
  std::size_t k = 0;  // ordinal questions, 1-based
  auto operator<=>(const TemplateInstance&) const = default;
};

inline std::string ordinal_word(std::size_t k) {
  static const std::array<const char*, 10> words = {"first",   "second", "third", "fourth",
                                                    "fifth",   "sixth",  "seventh", "eighth",
                                                    "ninth",   "tenth"};
  TWIRGCN_REQUIRE(k >= 1 && k <= words.size(), "ordinal out of range");
  return words[k - 1];
}

inline std::string question_text(const TemplateInstance& t, const Vocabulary& v) {
  const std::string& pos = v.name(t.position);
  switch (t.kind) {
    case Template::kExplicitIn: return "Who held " + pos + " in " + std::to_string(t.year) + "?";
    case Template::kImplicitBefore:
      return "Who held " + pos + " right before " + v.name(t.anchor) + "?";
    case Template::kImplicitAfter:
      return "Who held " + pos + " right after " + v.name(t.anchor) + "?";
    case Template::kTemporalWhen: return "When did " + v.name(t.anchor) + " hold " + pos + "?";
    case Template::kOrdinalKth: return "Who was the " + ordinal_word(t.k) + " holder of " + pos + "?";
  }
  return {};
}

// Ground truth by exhaustive scan over every fact; no indexes.
inline std::vector<Answer> oracle_answer(const TemplateInstance& t,
                                         const std::vector<TemporalFact>& facts,
                                         RelationId held) {
  auto holds = [&](const TemporalFact& f) { return f.relation == held && f.object == t.position; };
  std::set<Answer> out;
  switch (t.kind) {
    case Template::kExplicitIn:
      for (const auto& f : facts)
        if (holds(f) && f.start <= t.year && t.year <= f.end) out.insert(Answer::entity(f.subject));
      break;
    case Template::kImplicitBefore:
    case Template::kImplicitAfter: {
      const bool before = t.kind == Template::kImplicitBefore;
      for (const auto& anchor : facts) {
        if (!holds(anchor) || anchor.subject != t.anchor) continue;
        for (const auto& h : facts) {
          if (!holds(h) || h.subject == t.anchor) continue;
          const bool on_side = before ? h.end < anchor.start : h.start > anchor.end;
          if (!on_side) continue;
          bool adjacent = true;
          for (const auto& g : facts) {
            if (!holds(g) || g.subject == t.anchor) continue;
            const bool between = before ? (g.end < anchor.start && g.end > h.end)
                                        : (g.start > anchor.end && g.start < h.start);
            if (between) {
              adjacent = false;
              break;
            }
          }
          if (adjacent) out.insert(Answer::entity(h.subject));
        }
      }
      break;
    }
    case Template::kTemporalWhen:
      for (const auto& f : facts)
        if (holds(f) && f.subject == t.anchor)
          for (Year y = f.start; y <= f.end; ++y) out.insert(Answer::time(y));
      break;
    case Template::kOrdinalKth:
      for (const auto& f : facts) {
        if (!holds(f)) continue;
        std::size_t earlier = 0;
        for (const auto& g : facts)
          if (holds(g) && g.start < f.start) ++earlier;
        if (earlier + 1 == t.k) out.insert(Answer::entity(f.subject));
      }
      break;
  }
  return {out.begin(), out.end()};
}

struct GenerationOptions {
  std::size_t per_category = 1000;
  std::size_t max_ordinal = 3;
  std::size_t min_distractors = 5;
  std::size_t max_distractors = 15;
  double train_fraction = 0.7;
  double valid_fraction = 0.15;
  std::uint64_t seed = 7;

  nlohmann::json to_json() const {
    return {{"per_category", per_category},       {"max_ordinal", max_ordinal},
            {"min_distractors", min_distractors}, {"max_distractors", max_distractors},
            {"train_fraction", train_fraction},   {"valid_fraction", valid_fraction},
            {"seed", seed}};
  }
};

struct GeneratedQuestion {
  QuestionInstance question;
  TemplateInstance instance;
};

struct GeneratedDataset {
  std::vector<GeneratedQuestion> train, valid, test;
  std::map<Category, std::size_t> per_category;
  std::size_t skipped = 0;
};

namespace detail {

// Every instantiable template, in a fixed order.
inline std::map<Category, std::vector<TemplateInstance>> template_pool(const World& w,
                                                                      std::size_t max_ordinal) {
  std::map<Category, std::vector<TemplateInstance>> pool;
  for (EntityId pos : w.positions) {
    std::vector<const TemporalFact*> tenures;
    for (const auto& f : w.facts)
      if (f.relation == w.position_held && f.object == pos) tenures.push_back(&f);
    std::sort(tenures.begin(), tenures.end(),
              [](auto* a, auto* b) { return a->start < b->start; });
    for (Year y = w.spec.first_year; y <= w.spec.last_year; ++y)
      pool[Category::kExplicit].push_back({Template::kExplicitIn, pos, {}, y, 0});
    for (std::size_t i = 0; i < tenures.size(); ++i) {
      if (i > 0) pool[Category::kImplicit].push_back({Template::kImplicitBefore, pos, tenures[i]->subject, 0, 0});
      if (i + 1 < tenures.size())
        pool[Category::kImplicit].push_back({Template::kImplicitAfter, pos, tenures[i]->subject, 0, 0});
      pool[Category::kTemporal].push_back({Template::kTemporalWhen, pos, tenures[i]->subject, 0, 0});
    }
    for (std::size_t k = 1; k <= std::min(max_ordinal, tenures.size()); ++k)
      pool[Category::kOrdinal].push_back({Template::kOrdinalKth, pos, {}, 0, k});
  }
  return pool;
}

}  // namespace detail

// Subgraph: every fact mentioning the question's position or person, plus
// distractors drawn from facts that share an entity with those.
inline std::vector<TemporalFact> question_facts(const TemplateInstance& t, const World& w,
                                                const GenerationOptions& opt,
                                                std::mt19937_64& rng) {
  std::set<EntityId> focus = {t.position};
  if (t.kind == Template::kImplicitBefore || t.kind == Template::kImplicitAfter ||
      t.kind == Template::kTemporalWhen)
    focus.insert(t.anchor);
  std::vector<TemporalFact> core;
  std::set<TemporalFact> chosen;
  std::set<EntityId> nodes;
  for (const auto& f : w.facts)
    if (focus.count(f.subject) || focus.count(f.object)) {
      core.push_back(f);
      chosen.insert(f);
      nodes.insert(f.subject);
      nodes.insert(f.object);
    }
  // Widen by one hop at a time until the pool can supply the minimum.
  std::vector<TemporalFact> pool;
  for (std::size_t before = 0;;) {
    pool.clear();
    for (const auto& f : w.facts)
      if (!chosen.count(f) && (nodes.count(f.subject) || nodes.count(f.object))) pool.push_back(f);
    if (pool.size() >= opt.min_distractors || nodes.size() == before) break;
    before = nodes.size();
    for (const auto& f : pool) {
      nodes.insert(f.subject);
      nodes.insert(f.object);
    }
  }
  std::shuffle(pool.begin(), pool.end(), rng);
  const std::size_t want =
      std::uniform_int_distribution<std::size_t>(opt.min_distractors, opt.max_distractors)(rng);
  for (std::size_t i = 0; i < std::min(want, pool.size()); ++i) core.push_back(pool[i]);
  return core;
}

inline GeneratedDataset generate_questions(const World& w, const GenerationOptions& opt) {
  TWIRGCN_REQUIRE(opt.train_fraction > 0 && opt.valid_fraction >= 0 &&
                      opt.train_fraction + opt.valid_fraction < 1.0,
                  "split fractions must leave room for a test split");
  TWIRGCN_REQUIRE(opt.min_distractors <= opt.max_distractors, "distractor range is empty");
  std::mt19937_64 rng(opt.seed);
  auto pool = detail::template_pool(w, opt.max_ordinal);

  GeneratedDataset out;
  std::vector<GeneratedQuestion> all;
  for (Category c : kAllCategories) {
    auto& instances = pool[c];
    if (instances.empty()) continue;
    // Distinct instances first; cycle through fresh shuffles once exhausted.
    std::vector<TemplateInstance> order;
    while (order.size() < opt.per_category) {
      auto round = instances;
      std::shuffle(round.begin(), round.end(), rng);
      order.insert(order.end(), round.begin(), round.end());
    }
    order.resize(opt.per_category);
    for (const auto& t : order) {
      auto gold = oracle_answer(t, w.facts, w.position_held);
      if (gold.empty()) {
        ++out.skipped;
        continue;
      }
      GeneratedQuestion g;
      g.instance = t;
      g.question.text = question_text(t, w.vocab);
      g.question.tokens = tokenize(g.question.text);
      g.question.category = c;
      g.question.subgraph = make_subgraph(question_facts(t, w, opt, rng));
      g.question.gold_answers = std::move(gold);
      all.push_back(std::move(g));
      ++out.per_category[c];
    }
  }

  for (const auto& g : all) {
    if (answer_recall({g.question}) != 1.0)
      throw GenerationError("generated question without a reachable gold answer: " + g.question.text);
    if (category_of(g.instance.kind) != g.question.category)
      throw GenerationError("category does not match template family");
  }

  std::shuffle(all.begin(), all.end(), rng);
  for (std::size_t i = 0; i < all.size(); ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "q%05zu", i);
    all[i].question.id = buf;
  }
  const auto n = all.size();
  const auto n_train = static_cast<std::size_t>(static_cast<double>(n) * opt.train_fraction);
  const auto n_valid = static_cast<std::size_t>(static_cast<double>(n) * opt.valid_fraction);
  out.train.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.valid.assign(all.begin() + static_cast<std::ptrdiff_t>(n_train),
                   all.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid));
  out.test.assign(all.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid), all.end());
  return out;
}

inline std::vector<QuestionInstance> questions_of(const std::vector<GeneratedQuestion>& gs) {
  std::vector<QuestionInstance> out;
  for (const auto& g : gs) out.push_back(g.question);
  return out;
}

inline std::string_view to_string(Template t) {
  switch (t) {
    case Template::kExplicitIn: return "explicit_in";
    case Template::kImplicitBefore: return "implicit_before";
    case Template::kImplicitAfter: return "implicit_after";
    case Template::kTemporalWhen: return "temporal_when";
    case Template::kOrdinalKth: return "ordinal_kth";
  }
  return "explicit_in";
}

inline nlohmann::json template_to_json(const GeneratedQuestion& g, const Vocabulary& v) {
  nlohmann::json j = {{"id", g.question.id},
                      {"template", std::string(to_string(g.instance.kind))},
                      {"position", v.name(g.instance.position)}};
  if (g.instance.kind == Template::kExplicitIn) j["year"] = g.instance.year;
  if (g.instance.kind == Template::kOrdinalKth) j["k"] = g.instance.k;
  if (g.instance.kind != Template::kExplicitIn && g.instance.kind != Template::kOrdinalKth)
    j["anchor"] = v.name(g.instance.anchor);
  return j;
}

// Writes facts.tsv, {train,valid,test}.jsonl, templates.jsonl and
// generation.json into `dir`; returns the file names written.
inline std::vector<std::string> write_generated(const std::string& dir, const World& w,
                                                const GeneratedDataset& g,
                                                const GenerationOptions& opt) {
  auto open = [&](const std::string& name) {
    std::ofstream out(dir + "/" + name, std::ios::binary);
    if (!out) throw GenerationError("cannot write " + dir + "/" + name);
    return out;
  };
  {
    auto out = open("facts.tsv");
    write_facts(out, w.facts, w.vocab);
  }
  const std::pair<const char*, const std::vector<GeneratedQuestion>*> splits[] = {
      {"train.jsonl", &g.train}, {"valid.jsonl", &g.valid}, {"test.jsonl", &g.test}};
  for (auto [name, qs] : splits) {
    auto out = open(name);
    write_questions(out, questions_of(*qs), w.vocab);
  }
  {
    auto out = open("templates.jsonl");
    for (auto [name, qs] : splits)
      for (const auto& q : *qs) out << template_to_json(q, w.vocab).dump() << "\n";
  }
  {
    nlohmann::json counts = nlohmann::json::object();
    for (const auto& [c, n] : g.per_category) counts[std::string(to_string(c))] = n;
    nlohmann::json j = {{"world", w.spec.to_json()},
                        {"questions", opt.to_json()},
                        {"facts", w.facts.size()},
                        {"entities", w.vocab.entities.size()},
                        {"per_category", counts},
                        {"skipped", g.skipped},
                        {"splits", {{"train", g.train.size()}, {"valid", g.valid.size()}, {"test", g.test.size()}}}};
    auto out = open("generation.json");
    out << j.dump(2) << "\n";
  }
  return {"facts.tsv", "train.jsonl", "valid.jsonl", "test.jsonl", "templates.jsonl", "generation.json"};
}

// The in-memory equivalent of writing the splits and loading them back.
inline Dataset to_dataset(const World& w, const GeneratedDataset& g) {
  Dataset d;
  d.vocab = w.vocab;
  d.train = questions_of(g.train);
  d.valid = questions_of(g.valid);
  d.test = questions_of(g.test);
  d.kg = build_background_kg(d.train, d.vocab);
  return d;
}

}  // namespace twirgcn
