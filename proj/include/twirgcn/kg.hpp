#pragma once

// Temporal knowledge graph data model: facts, question subgraphs, the
// background KG built from the training split, and the on-disk text formats.

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <compare>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "twirgcn/error.hpp"

namespace twirgcn {

using Year = std::int32_t;

struct EntityId {
  std::uint32_t value = 0;
  auto operator<=>(const EntityId&) const = default;
};

struct RelationId {
  std::uint32_t value = 0;
  auto operator<=>(const RelationId&) const = default;
};

// String <-> dense id, first-seen order.
class Interner {
 public:
  std::uint32_t intern(std::string_view name) {
    auto it = index_.find(std::string(name));
    if (it != index_.end()) return it->second;
    const auto id = static_cast<std::uint32_t>(names_.size());
    names_.emplace_back(name);
    index_.emplace(names_.back(), id);
    return id;
  }
  std::optional<std::uint32_t> find(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  const std::string& name(std::uint32_t id) const {
    TWIRGCN_REQUIRE(id < names_.size(), "interner: id out of range");
    return names_[id];
  }
  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::uint32_t> index_;
};

struct Vocabulary {
  Interner entities;
  Interner relations;

  EntityId entity(std::string_view name) { return {entities.intern(name)}; }
  RelationId relation(std::string_view name) { return {relations.intern(name)}; }
  const std::string& name(EntityId e) const { return entities.name(e.value); }
  const std::string& name(RelationId r) const { return relations.name(r.value); }
};

struct TemporalFact {
  EntityId subject;
  RelationId relation;
  EntityId object;
  Year start = 0;
  Year end = 0;
  auto operator<=>(const TemporalFact&) const = default;
};

enum class Category { kExplicit, kImplicit, kTemporal, kOrdinal };

inline constexpr std::array<Category, 4> kAllCategories = {
    Category::kExplicit, Category::kImplicit, Category::kTemporal, Category::kOrdinal};

inline std::string_view to_string(Category c) {
  switch (c) {
    case Category::kExplicit: return "explicit";
    case Category::kImplicit: return "implicit";
    case Category::kTemporal: return "temporal";
    case Category::kOrdinal: return "ordinal";
  }
  return "?";
}

inline std::optional<Category> parse_category(std::string_view s) {
  for (Category c : kAllCategories)
    if (to_string(c) == s) return c;
  return std::nullopt;
}

enum class AnswerKind { kEntity, kTime };

inline std::string_view to_string(AnswerKind k) {
  return k == AnswerKind::kEntity ? "entity" : "time";
}

// An answer is either an entity id or a year; `value` holds whichever `kind`
// says.
struct Answer {
  AnswerKind kind = AnswerKind::kEntity;
  std::int64_t value = 0;

  static Answer entity(EntityId e) { return {AnswerKind::kEntity, e.value}; }
  static Answer time(Year y) { return {AnswerKind::kTime, y}; }
  bool is_entity() const { return kind == AnswerKind::kEntity; }
  bool is_time() const { return kind == AnswerKind::kTime; }
  EntityId entity_id() const {
    TWIRGCN_REQUIRE(is_entity(), "answer is not an entity");
    return {static_cast<std::uint32_t>(value)};
  }
  Year year() const {
    TWIRGCN_REQUIRE(is_time(), "answer is not a time");
    return static_cast<Year>(value);
  }
  auto operator<=>(const Answer&) const = default;
};

struct QuestionSubgraph {
  std::vector<EntityId> nodes;        // sorted, unique
  std::vector<RelationId> relations;  // sorted, unique
  std::vector<Year> times;            // sorted, unique
  std::vector<TemporalFact> edges;    // deduplicated, input order kept

  bool contains(EntityId e) const { return std::binary_search(nodes.begin(), nodes.end(), e); }
  bool contains(Year y) const { return std::binary_search(times.begin(), times.end(), y); }
};

// Builds V_q, R_q, T_q from an edge list, dropping duplicate facts.
inline QuestionSubgraph make_subgraph(const std::vector<TemporalFact>& facts) {
  if (facts.empty()) throw ContractError("question subgraph must have at least one edge");
  QuestionSubgraph g;
  std::set<TemporalFact> seen;
  std::set<EntityId> nodes;
  std::set<RelationId> rels;
  std::set<Year> times;
  for (const auto& f : facts) {
    TWIRGCN_REQUIRE(f.start <= f.end, "fact with start > end");
    if (!seen.insert(f).second) continue;
    g.edges.push_back(f);
    nodes.insert(f.subject);
    nodes.insert(f.object);
    rels.insert(f.relation);
    times.insert(f.start);
    times.insert(f.end);
  }
  g.nodes.assign(nodes.begin(), nodes.end());
  g.relations.assign(rels.begin(), rels.end());
  g.times.assign(times.begin(), times.end());
  return g;
}

struct QuestionInstance {
  std::string id;
  std::string text;
  std::vector<std::string> tokens;
  Category category = Category::kExplicit;
  QuestionSubgraph subgraph;
  std::vector<Answer> gold_answers;

  bool has_entity_answer() const {
    return std::any_of(gold_answers.begin(), gold_answers.end(),
                       [](const Answer& a) { return a.is_entity(); });
  }
  bool has_time_answer() const {
    return std::any_of(gold_answers.begin(), gold_answers.end(),
                       [](const Answer& a) { return a.is_time(); });
  }
};

// Lowercased alphanumeric/underscore runs; everything else separates.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || c == '_') {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

struct BackgroundKG {
  std::vector<TemporalFact> facts;     // deduplicated union, first-seen order
  std::vector<EntityId> entities;      // ascending name
  std::vector<RelationId> relations;   // ascending name
  Year min_year = 0;
  Year max_year = 0;

  // Contiguous time vocabulary [min_year, max_year].
  std::size_t num_times() const { return static_cast<std::size_t>(max_year - min_year) + 1; }
  Year year_at(std::size_t row) const { return min_year + static_cast<Year>(row); }
  bool in_range(Year y) const { return y >= min_year && y <= max_year; }
  std::optional<std::size_t> time_row(Year y) const {
    if (!in_range(y)) return std::nullopt;
    return static_cast<std::size_t>(y - min_year);
  }

  std::optional<std::size_t> entity_row(EntityId e) const {
    auto it = entity_index_.find(e);
    if (it == entity_index_.end()) return std::nullopt;
    return it->second;
  }
  std::optional<std::size_t> relation_row(RelationId r) const {
    auto it = relation_index_.find(r);
    if (it == relation_index_.end()) return std::nullopt;
    return it->second;
  }

  // Rebuilds the row lookups after `entities` or `relations` change.
  void reindex() {
    entity_index_.clear();
    relation_index_.clear();
    for (std::size_t i = 0; i < entities.size(); ++i) entity_index_[entities[i]] = i;
    for (std::size_t i = 0; i < relations.size(); ++i) relation_index_[relations[i]] = i;
  }

 private:
  std::map<EntityId, std::size_t> entity_index_;
  std::map<RelationId, std::size_t> relation_index_;
};

// Rows are ordered by name so the layout does not depend on id assignment.
inline BackgroundKG build_background_kg(const std::vector<QuestionInstance>& train,
                                        const Vocabulary& vocab) {
  if (train.empty()) throw ConfigError("cannot build a background KG from an empty train split");
  BackgroundKG kg;
  std::set<TemporalFact> seen;
  std::set<EntityId> ents;
  std::set<RelationId> rels;
  bool first = true;
  for (const auto& q : train) {
    for (const auto& f : q.subgraph.edges) {
      if (!seen.insert(f).second) continue;
      kg.facts.push_back(f);
      ents.insert(f.subject);
      ents.insert(f.object);
      rels.insert(f.relation);
      if (first) {
        kg.min_year = f.start;
        kg.max_year = f.end;
        first = false;
      }
      kg.min_year = std::min(kg.min_year, f.start);
      kg.max_year = std::max(kg.max_year, f.end);
    }
  }
  if (first) throw ConfigError("train split has no facts");
  kg.entities.assign(ents.begin(), ents.end());
  kg.relations.assign(rels.begin(), rels.end());
  std::sort(kg.entities.begin(), kg.entities.end(),
            [&](EntityId a, EntityId b) { return vocab.name(a) < vocab.name(b); });
  std::sort(kg.relations.begin(), kg.relations.end(),
            [&](RelationId a, RelationId b) { return vocab.name(a) < vocab.name(b); });
  kg.reindex();
  return kg;
}

// Entities of `q` (subgraph nodes and gold answers) that have no row in `kg`.
inline std::vector<EntityId> unseen_entities(const QuestionInstance& q, const BackgroundKG& kg) {
  std::set<EntityId> out;
  for (EntityId e : q.subgraph.nodes)
    if (!kg.entity_row(e)) out.insert(e);
  for (const auto& a : q.gold_answers)
    if (a.is_entity() && !kg.entity_row(a.entity_id())) out.insert(a.entity_id());
  return {out.begin(), out.end()};
}

inline std::vector<Year> out_of_range_years(const QuestionInstance& q, const BackgroundKG& kg) {
  std::vector<Year> out;
  for (Year y : q.subgraph.times)
    if (!kg.in_range(y)) out.push_back(y);
  return out;
}

// Fraction of questions whose subgraph contains at least one gold answer.
inline double answer_recall(const std::vector<QuestionInstance>& qs) {
  if (qs.empty()) return 0.0;
  std::size_t hit = 0;
  for (const auto& q : qs) {
    const bool ok = std::any_of(q.gold_answers.begin(), q.gold_answers.end(), [&](const Answer& a) {
      return a.is_entity() ? q.subgraph.contains(a.entity_id()) : q.subgraph.contains(a.year());
    });
    hit += ok ? 1 : 0;
  }
  return static_cast<double>(hit) / static_cast<double>(qs.size());
}

// ---- text formats -------------------------------------------------------------

namespace detail {

inline std::optional<Year> parse_year(std::string_view s) {
  Year y{};
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), y);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty()) return std::nullopt;
  return y;
}

inline std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    const auto tab = line.find('\t', pos);
    out.push_back(line.substr(pos, tab == std::string_view::npos ? line.npos : tab - pos));
    if (tab == std::string_view::npos) break;
    pos = tab + 1;
  }
  return out;
}

inline std::string strip_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

}  // namespace detail

// Parses one `subject\trelation\tobject\tstart\tend` record.
inline TemporalFact parse_fact_line(std::string_view line, Vocabulary& vocab, std::size_t lineno) {
  const auto fields = detail::split_tabs(line);
  auto fail = [&](const std::string& why) {
    return ParseError("line " + std::to_string(lineno) + ": " + why);
  };
  if (fields.size() != 5)
    throw fail("expected 5 tab-separated fields, got " + std::to_string(fields.size()));
  for (std::size_t i = 0; i < 3; ++i)
    if (fields[i].empty()) throw fail("empty name field");
  const auto start = detail::parse_year(fields[3]);
  const auto end = detail::parse_year(fields[4]);
  if (!start || !end) throw fail("year is not an integer");
  if (*start > *end) throw fail("start year after end year");
  return {vocab.entity(fields[0]), vocab.relation(fields[1]), vocab.entity(fields[2]), *start, *end};
}

inline std::vector<TemporalFact> read_facts(std::istream& in, Vocabulary& vocab) {
  std::vector<TemporalFact> facts;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = detail::strip_cr(std::move(line));
    if (line.empty() || line.front() == '#') continue;
    facts.push_back(parse_fact_line(line, vocab, lineno));
  }
  return facts;
}

inline std::vector<TemporalFact> load_facts(const std::string& path, Vocabulary& vocab) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open facts file " + path);
  return read_facts(in, vocab);
}

inline void write_facts(std::ostream& out, const std::vector<TemporalFact>& facts,
                        const Vocabulary& vocab) {
  for (const auto& f : facts)
    out << vocab.name(f.subject) << '\t' << vocab.name(f.relation) << '\t' << vocab.name(f.object)
        << '\t' << f.start << '\t' << f.end << '\n';
}

inline nlohmann::json answer_to_json(const Answer& a, const Vocabulary& vocab) {
  nlohmann::json j;
  j["kind"] = std::string(to_string(a.kind));
  if (a.is_entity())
    j["value"] = vocab.name(a.entity_id());
  else
    j["value"] = a.year();
  return j;
}

inline nlohmann::json question_to_json(const QuestionInstance& q, const Vocabulary& vocab) {
  nlohmann::json j;
  j["id"] = q.id;
  j["text"] = q.text;
  j["category"] = std::string(to_string(q.category));
  auto facts = nlohmann::json::array();
  for (const auto& f : q.subgraph.edges)
    facts.push_back({vocab.name(f.subject), vocab.name(f.relation), vocab.name(f.object), f.start,
                     f.end});
  j["facts"] = std::move(facts);
  auto answers = nlohmann::json::array();
  for (const auto& a : q.gold_answers) answers.push_back(answer_to_json(a, vocab));
  j["answers"] = std::move(answers);
  return j;
}

inline QuestionInstance question_from_json(const nlohmann::json& j, Vocabulary& vocab,
                                           std::size_t lineno) {
  auto fail = [&](const std::string& why) {
    return ParseError("question line " + std::to_string(lineno) + ": " + why);
  };
  if (!j.is_object()) throw fail("record is not a JSON object");
  for (const char* key : {"id", "text", "category", "facts", "answers"})
    if (!j.contains(key)) throw fail(std::string("missing key '") + key + "'");

  QuestionInstance q;
  try {
    q.id = j.at("id").get<std::string>();
    q.text = j.at("text").get<std::string>();
    const auto cat = j.at("category").get<std::string>();
    const auto parsed = parse_category(cat);
    if (!parsed) throw fail("unsupported category '" + cat + "'");
    q.category = *parsed;

    const auto& facts = j.at("facts");
    if (!facts.is_array() || facts.empty()) throw fail("record has no subgraph facts");
    std::vector<TemporalFact> edges;
    for (const auto& f : facts) {
      if (!f.is_array() || f.size() != 5) throw fail("fact must be a 5-element array");
      const Year s = f[3].get<Year>();
      const Year e = f[4].get<Year>();
      if (s > e) throw fail("fact with start year after end year");
      edges.push_back({vocab.entity(f[0].get<std::string>()),
                       vocab.relation(f[1].get<std::string>()),
                       vocab.entity(f[2].get<std::string>()), s, e});
    }
    q.subgraph = make_subgraph(edges);

    const auto& answers = j.at("answers");
    if (!answers.is_array() || answers.empty()) throw fail("empty answer set");
    std::set<Answer> seen;
    for (const auto& a : answers) {
      const auto kind = a.at("kind").get<std::string>();
      Answer ans;
      if (kind == "entity")
        ans = Answer::entity(vocab.entity(a.at("value").get<std::string>()));
      else if (kind == "time")
        ans = Answer::time(a.at("value").get<Year>());
      else
        throw fail("unknown answer kind '" + kind + "'");
      if (seen.insert(ans).second) q.gold_answers.push_back(ans);
    }
  } catch (const nlohmann::json::exception& e) {
    throw fail(e.what());
  }
  q.tokens = tokenize(q.text);
  return q;
}

inline std::vector<QuestionInstance> read_questions(std::istream& in, Vocabulary& vocab) {
  std::vector<QuestionInstance> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = detail::strip_cr(std::move(line));
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("question line " + std::to_string(lineno) + ": " + e.what());
    }
    out.push_back(question_from_json(j, vocab, lineno));
  }
  return out;
}

inline std::vector<QuestionInstance> load_questions(const std::string& path, Vocabulary& vocab) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open questions file " + path);
  return read_questions(in, vocab);
}

inline void write_questions(std::ostream& out, const std::vector<QuestionInstance>& qs,
                            const Vocabulary& vocab) {
  for (const auto& q : qs) out << question_to_json(q, vocab).dump() << '\n';
}

// Name-sorted text rendering of a background KG; equal for any ordering of the
// train split.
inline std::string canonical_form(const BackgroundKG& kg, const Vocabulary& vocab) {
  std::vector<std::string> lines;
  for (const auto& f : kg.facts) {
    std::ostringstream os;
    write_facts(os, {f}, vocab);
    lines.push_back(os.str());
  }
  std::sort(lines.begin(), lines.end());
  std::vector<std::string> ents, rels;
  for (auto e : kg.entities) ents.push_back(vocab.name(e));
  for (auto r : kg.relations) rels.push_back(vocab.name(r));
  std::sort(ents.begin(), ents.end());
  std::sort(rels.begin(), rels.end());
  std::ostringstream os;
  os << "#years\t" << kg.min_year << '\t' << kg.max_year << '\n';
  for (const auto& e : ents) os << "#entity\t" << e << '\n';
  for (const auto& r : rels) os << "#relation\t" << r << '\n';
  for (const auto& l : lines) os << l;
  return os.str();
}

// A loaded split directory. The train split is read first so its names take
// the lowest ids; the background KG is built from it before valid/test load.
struct Dataset {
  Vocabulary vocab;
  std::vector<QuestionInstance> train, valid, test;
  BackgroundKG kg;
};

inline Dataset load_dataset(const std::string& dir) {
  Dataset d;
  d.train = load_questions(dir + "/train.jsonl", d.vocab);
  d.kg = build_background_kg(d.train, d.vocab);
  d.valid = load_questions(dir + "/valid.jsonl", d.vocab);
  d.test = load_questions(dir + "/test.jsonl", d.vocab);
  return d;
}

}  // namespace twirgcn
