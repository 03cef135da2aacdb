#pragma once

// Factorial stimulus experiments: factors, items, condition keys, loading,
// validation, tokenization and lexicon coverage.

#include <cctype>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "wordpref/error.hpp"
#include "wordpref/util.hpp"

namespace wordpref {

enum class FactorScope { within_item, between_item };

inline std::string_view to_string(FactorScope s) {
  return s == FactorScope::within_item ? "within_item" : "between_item";
}

struct Factor {
  std::string name;
  std::vector<std::string> levels;
  FactorScope scope = FactorScope::within_item;
  bool is_order_factor = false;

  bool has_level(std::string_view level) const {
    return std::find(levels.begin(), levels.end(), level) != levels.end();
  }
  bool operator==(const Factor&) const = default;
};

struct Item {
  std::string id;
  std::map<std::string, std::string> group_levels;  // between-item factor -> level
  std::map<std::string, std::string> cells;         // condition key -> sentence
  std::map<std::string, std::string> metadata;
  bool operator==(const Item&) const = default;
};

// One assignment of a level to every within-item factor, in declared order.
struct Condition {
  std::vector<std::pair<std::string, std::string>> assignments;

  std::string key() const {
    std::string out;
    for (std::size_t i = 0; i < assignments.size(); ++i) {
      if (i) out += '|';
      out += assignments[i].second;
    }
    return out;
  }
  const std::string& level_of(std::string_view factor) const {
    for (const auto& [f, l] : assignments)
      if (f == factor) return l;
    throw SchemaError("condition has no factor '" + std::string(factor) + "'");
  }
  bool operator==(const Condition&) const = default;
};

class Experiment {
 public:
  std::string name;
  std::vector<Factor> factors;
  std::vector<Item> items;

  bool operator==(const Experiment&) const = default;

  const Factor* find_factor(std::string_view n) const {
    for (const auto& f : factors)
      if (f.name == n) return &f;
    return nullptr;
  }
  const Factor& factor(std::string_view n) const {
    if (auto* f = find_factor(n)) return *f;
    throw SchemaError("unknown factor '" + std::string(n) + "'");
  }
  const Factor& order_factor() const {
    for (const auto& f : factors)
      if (f.is_order_factor) return f;
    throw SchemaError("experiment declares no order factor");
  }
  std::vector<const Factor*> within_factors() const {
    std::vector<const Factor*> out;
    for (const auto& f : factors)
      if (f.scope == FactorScope::within_item) out.push_back(&f);
    return out;
  }
  std::vector<const Factor*> between_factors() const {
    std::vector<const Factor*> out;
    for (const auto& f : factors)
      if (f.scope == FactorScope::between_item) out.push_back(&f);
    return out;
  }

  // Every cell of the within-item grid; the first declared factor varies
  // slowest.
  std::vector<Condition> conditions() const {
    std::vector<Condition> out{Condition{}};
    for (const Factor* f : within_factors()) {
      std::vector<Condition> next;
      for (const auto& c : out)
        for (const auto& lvl : f->levels) {
          Condition d = c;
          d.assignments.emplace_back(f->name, lvl);
          next.push_back(std::move(d));
        }
      out = std::move(next);
    }
    return out;
  }
  std::vector<std::string> condition_keys() const {
    std::vector<std::string> out;
    for (const auto& c : conditions()) out.push_back(c.key());
    return out;
  }

  Condition parse_condition_key(std::string_view key) const {
    auto parts = split_on(key, '|');
    auto within = within_factors();
    if (parts.size() != within.size())
      throw SchemaError("condition key '" + std::string(key) + "' has " +
                        std::to_string(parts.size()) + " levels, expected " +
                        std::to_string(within.size()));
    Condition c;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      if (!within[i]->has_level(parts[i]))
        throw SchemaError("condition key '" + std::string(key) +
                          "': level '" + std::string(parts[i]) +
                          "' is not declared for factor '" + within[i]->name +
                          "'");
      c.assignments.emplace_back(within[i]->name, std::string(parts[i]));
    }
    return c;
  }

  const Item* find_item(std::string_view id) const {
    for (const auto& it : items)
      if (it.id == id) return &it;
    return nullptr;
  }
};

// ---------------------------------------------------------------------------
// serialization

inline nlohmann::ordered_json to_json(const Experiment& exp) {
  nlohmann::ordered_json j;
  j["name"] = exp.name;
  j["factors"] = nlohmann::ordered_json::array();
  for (const auto& f : exp.factors) {
    j["factors"].push_back({{"name", f.name},
                            {"levels", f.levels},
                            {"scope", std::string(to_string(f.scope))},
                            {"is_order_factor", f.is_order_factor}});
  }
  j["items"] = nlohmann::ordered_json::array();
  for (const auto& it : exp.items) {
    nlohmann::ordered_json ji;
    ji["id"] = it.id;
    if (!it.group_levels.empty()) ji["group_levels"] = it.group_levels;
    if (!it.metadata.empty()) ji["metadata"] = it.metadata;
    nlohmann::ordered_json cells = nlohmann::ordered_json::object();
    // Grid order first so files read naturally, then anything off-grid.
    std::set<std::string> done;
    for (const auto& key : exp.condition_keys()) {
      auto c = it.cells.find(key);
      if (c != it.cells.end()) {
        cells[key] = c->second;
        done.insert(key);
      }
    }
    for (const auto& [k, v] : it.cells)
      if (!done.count(k)) cells[k] = v;
    ji["cells"] = std::move(cells);
    j["items"].push_back(std::move(ji));
  }
  return j;
}

inline std::string serialize_experiment(const Experiment& exp) {
  return to_json(exp).dump(2) + "\n";
}

namespace detail {

inline std::map<std::string, std::string> string_map(const nlohmann::json& j,
                                                     const std::string& what) {
  std::map<std::string, std::string> out;
  if (j.is_null()) return out;
  if (!j.is_object()) throw ParseError(what + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!it.value().is_string())
      throw ParseError(what + "." + it.key() + " must be a string");
    out[it.key()] = it.value().get<std::string>();
  }
  return out;
}

inline void check_factors(const Experiment& exp) {
  std::set<std::string> names;
  int order_count = 0;
  for (const auto& f : exp.factors) {
    if (f.name.empty()) throw SchemaError("factor with empty name");
    if (!names.insert(f.name).second)
      throw SchemaError("duplicate factor '" + f.name + "'");
    if (f.levels.size() < 2)
      throw SchemaError("factor '" + f.name + "' needs at least 2 levels");
    std::set<std::string> lv;
    for (const auto& l : f.levels) {
      if (l.empty()) throw SchemaError("factor '" + f.name + "' has an empty level");
      if (l.find('|') != std::string::npos)
        throw SchemaError("level '" + l + "' contains the key separator '|'");
      if (!lv.insert(l).second)
        throw SchemaError("factor '" + f.name + "' repeats level '" + l + "'");
    }
    if (f.is_order_factor) {
      ++order_count;
      if (f.scope != FactorScope::within_item)
        throw SchemaError("order factor '" + f.name + "' must be within_item");
    }
  }
  if (order_count != 1)
    throw SchemaError("exactly one factor must be the order factor, found " +
                      std::to_string(order_count));
}

}  // namespace detail

// Parses the experiment object model. Besides malformed input this rejects
// condition keys naming undeclared levels, duplicate item ids and items whose
// cells do not cover the within-item grid.
inline Experiment parse_experiment(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("experiment: ") + e.what());
  }
  Experiment exp;
  try {
    exp.name = j.value("name", std::string());
    for (const auto& jf : j.at("factors")) {
      Factor f;
      f.name = jf.at("name").get<std::string>();
      f.levels = jf.at("levels").get<std::vector<std::string>>();
      const auto scope = jf.value("scope", std::string("within_item"));
      if (scope == "within_item")
        f.scope = FactorScope::within_item;
      else if (scope == "between_item")
        f.scope = FactorScope::between_item;
      else
        throw ParseError("factor '" + f.name + "': unknown scope '" + scope + "'");
      f.is_order_factor = jf.value("is_order_factor", false);
      exp.factors.push_back(std::move(f));
    }
    detail::check_factors(exp);

    std::set<std::string> ids;
    for (const auto& ji : j.at("items")) {
      Item it;
      it.id = ji.at("id").is_string() ? ji.at("id").get<std::string>()
                                      : ji.at("id").dump();
      if (!ids.insert(it.id).second)
        throw SchemaError("duplicate item id '" + it.id + "'");
      it.group_levels = detail::string_map(ji.value("group_levels", nlohmann::json()),
                                           "item " + it.id + " group_levels");
      it.metadata = detail::string_map(ji.value("metadata", nlohmann::json()),
                                       "item " + it.id + " metadata");
      it.cells = detail::string_map(ji.at("cells"), "item " + it.id + " cells");
      for (const auto& [gf, _] : it.group_levels) {
        const Factor* f = exp.find_factor(gf);
        if (!f || f->scope != FactorScope::between_item)
          throw SchemaError("item '" + it.id + "' assigns unknown between-item factor '" +
                            gf + "'");
      }
      for (const auto& [key, _] : it.cells) {
        try {
          exp.parse_condition_key(key);
        } catch (const SchemaError& e) {
          throw SchemaError("item '" + it.id + "': " + e.what());
        }
      }
      for (const auto& key : exp.condition_keys())
        if (!it.cells.count(key))
          throw SchemaError("item '" + it.id + "' is missing cell '" + key + "'");
      exp.items.push_back(std::move(it));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("experiment: ") + e.what());
  }
  return exp;
}

inline Experiment load_experiment(const std::string& path) {
  return parse_experiment(read_file(path));
}

// ---------------------------------------------------------------------------
// validation

struct Finding {
  std::string item_id;
  std::string cell_key;  // empty when the finding is about the item itself
  std::string message;
};

struct ValidationReport {
  std::vector<Finding> findings;
  std::vector<Finding> warnings;  // informational; do not affect is_clean
  bool is_clean() const { return findings.empty(); }
};

inline ValidationReport validate(const Experiment& exp) {
  ValidationReport rep;
  const auto keys = exp.condition_keys();
  const std::set<std::string> grid(keys.begin(), keys.end());
  for (const auto& it : exp.items) {
    for (const auto& k : keys)
      if (!it.cells.count(k)) rep.findings.push_back({it.id, k, "missing cell"});
    std::map<std::string, std::string> seen;  // sentence -> first key
    for (const auto& [k, sentence] : it.cells) {
      if (!grid.count(k)) rep.findings.push_back({it.id, k, "extra cell"});
      if (trim(sentence).empty()) {
        rep.findings.push_back({it.id, k, "empty sentence"});
        continue;
      }
      auto [pos, fresh] = seen.emplace(std::string(trim(sentence)), k);
      if (!fresh)
        rep.warnings.push_back(
            {it.id, k, "duplicate sentence (same as cell '" + pos->second + "')"});
    }
    for (const Factor* f : exp.between_factors()) {
      auto g = it.group_levels.find(f->name);
      if (g == it.group_levels.end())
        rep.findings.push_back({it.id, "", "no level for between-item factor '" + f->name + "'"});
      else if (!f->has_level(g->second))
        rep.findings.push_back({it.id, "", "undeclared level '" + g->second +
                                               "' for factor '" + f->name + "'"});
    }
    for (const auto& [gf, lvl] : it.group_levels) {
      const Factor* f = exp.find_factor(gf);
      if (!f || f->scope != FactorScope::between_item)
        rep.findings.push_back({it.id, "", "unknown between-item factor '" + gf + "'"});
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// tokenization

enum class Scheme { whitespace, punct_split_lowercase };

inline std::string_view scheme_id(Scheme s) {
  return s == Scheme::whitespace ? "whitespace" : "punct-split+lowercase";
}

inline Scheme parse_scheme(std::string_view id) {
  if (id == "whitespace") return Scheme::whitespace;
  if (id == "punct-split+lowercase") return Scheme::punct_split_lowercase;
  throw UsageError("unknown tokenization scheme '" + std::string(id) + "'");
}

struct TokenSequence {
  std::vector<std::string> tokens;
  std::string scheme_id;
  bool operator==(const TokenSequence&) const = default;
};

inline bool is_ascii_punct(char c) {
  return std::ispunct(static_cast<unsigned char>(c)) != 0 &&
         static_cast<unsigned char>(c) < 0x80;
}

inline TokenSequence tokenize(std::string_view sentence, Scheme scheme) {
  TokenSequence out;
  out.scheme_id = std::string(scheme_id(scheme));
  for (auto& word : split_whitespace(sentence)) {
    if (scheme == Scheme::whitespace) {
      out.tokens.push_back(std::move(word));
      continue;
    }
    for (auto& c : word)
      if (static_cast<unsigned char>(c) < 0x80)
        c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    std::size_t b = 0, e = word.size();
    while (b < e && is_ascii_punct(word[b])) ++b;
    while (e > b && is_ascii_punct(word[e - 1])) --e;
    for (std::size_t i = 0; i < b; ++i) out.tokens.emplace_back(1, word[i]);
    if (e > b) out.tokens.push_back(word.substr(b, e - b));
    for (std::size_t i = e; i < word.size(); ++i) out.tokens.emplace_back(1, word[i]);
  }
  return out;
}

// Drops trailing ASCII punctuation (e.g. the final period) from a sentence.
inline std::string strip_final_punct(std::string_view sentence) {
  auto s = trim(sentence);
  while (!s.empty() && (is_ascii_punct(s.back()) || is_space(s.back())))
    s.remove_suffix(1);
  return std::string(s);
}

// ---------------------------------------------------------------------------
// lexicon coverage

struct CellCoverage {
  std::string item_id;
  std::string cell_key;
  std::size_t n_tokens = 0;
  std::vector<std::string> oov;
};

struct CoverageReport {
  std::vector<CellCoverage> cells;
  std::size_t total_tokens = 0;
  std::size_t oov_tokens = 0;
  double oov_rate() const {
    return total_tokens == 0 ? 0.0
                             : static_cast<double>(oov_tokens) / static_cast<double>(total_tokens);
  }
};

template <typename Lexicon>
CoverageReport vocabulary_coverage(const Experiment& exp, const Lexicon& lexicon,
                                   Scheme scheme = Scheme::punct_split_lowercase) {
  CoverageReport rep;
  for (const auto& it : exp.items)
    for (const auto& key : exp.condition_keys()) {
      auto c = it.cells.find(key);
      if (c == it.cells.end()) continue;
      CellCoverage cc{it.id, key, 0, {}};
      for (const auto& tok : tokenize(c->second, scheme).tokens) {
        ++cc.n_tokens;
        if (!lexicon.count(tok)) cc.oov.push_back(tok);
      }
      rep.total_tokens += cc.n_tokens;
      rep.oov_tokens += cc.oov.size();
      rep.cells.push_back(std::move(cc));
    }
  return rep;
}

}  // namespace wordpref
