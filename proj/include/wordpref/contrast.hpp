#pragma once

// Contrast specifications and the per-cell values (surprisal totals or mean
// ratings) that contrasts are computed from.

#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "wordpref/error.hpp"
#include "wordpref/scoring.hpp"
#include "wordpref/stimuli.hpp"
#include "wordpref/util.hpp"

namespace wordpref {

struct Moderator {
  std::string factor;
  std::string level1;  // m1 in I = (c(m1,base) - c(m1,variant)) - (c(m2,base) - c(m2,variant))
  std::string level2;
  bool operator==(const Moderator&) const = default;
};

struct ContrastSpec {
  std::string name;
  std::string order_factor;
  std::string base;
  std::string variant;
  std::optional<Moderator> moderator;
  std::optional<std::string> grouping;
  // Pins other within-item factors to one level; unnamed ones are averaged.
  std::map<std::string, std::string> fixed;

  std::string label() const { return order_factor + ":" + variant + "-" + base; }
  ContrastSpec swapped() const {
    ContrastSpec s = *this;
    std::swap(s.base, s.variant);
    return s;
  }
  bool operator==(const ContrastSpec&) const = default;
};

inline void check_contrast(const Experiment& exp, const ContrastSpec& spec) {
  auto need_level = [&](const Factor& f, const std::string& level, const char* what) {
    if (!f.has_level(level))
      throw SchemaError("contrast '" + spec.name + "': " + what + " level '" + level +
                        "' is not a level of factor '" + f.name + "'");
  };
  const Factor* order = exp.find_factor(spec.order_factor);
  if (!order) throw SchemaError("contrast '" + spec.name + "': unknown order factor '" + spec.order_factor + "'");
  if (!order->is_order_factor)
    throw SchemaError("contrast '" + spec.name + "': factor '" + spec.order_factor + "' is not the order factor");
  need_level(*order, spec.base, "base");
  need_level(*order, spec.variant, "variant");
  if (spec.base == spec.variant) throw SchemaError("contrast '" + spec.name + "': base and variant are the same level");
  if (spec.moderator) {
    const auto& m = *spec.moderator;
    const Factor* f = exp.find_factor(m.factor);
    if (!f) throw SchemaError("contrast '" + spec.name + "': unknown moderating factor '" + m.factor + "'");
    if (f->scope != FactorScope::within_item || f->is_order_factor)
      throw SchemaError("contrast '" + spec.name + "': moderating factor must be a within-item factor other than the order factor");
    need_level(*f, m.level1, "moderator");
    need_level(*f, m.level2, "moderator");
    if (m.level1 == m.level2) throw SchemaError("contrast '" + spec.name + "': moderator levels are the same");
  }
  if (spec.grouping) {
    const Factor* g = exp.find_factor(*spec.grouping);
    if (!g) throw SchemaError("contrast '" + spec.name + "': unknown grouping factor '" + *spec.grouping + "'");
    if (g->is_order_factor || (spec.moderator && g->name == spec.moderator->factor))
      throw SchemaError("contrast '" + spec.name + "': grouping factor must differ from the order and moderating factors");
  }
  for (const auto& [fname, level] : spec.fixed) {
    const Factor* f = exp.find_factor(fname);
    if (!f) throw SchemaError("contrast '" + spec.name + "': unknown fixed factor '" + fname + "'");
    if (f->scope != FactorScope::within_item || f->is_order_factor ||
        (spec.moderator && fname == spec.moderator->factor) || (spec.grouping && fname == *spec.grouping))
      throw SchemaError("contrast '" + spec.name + "': factor '" + fname + "' cannot be fixed");
    need_level(*f, level, "fixed");
  }
}

inline nlohmann::ordered_json to_json(const ContrastSpec& s) {
  nlohmann::ordered_json j;
  j["name"] = s.name;
  j["order_factor"] = s.order_factor;
  j["base"] = s.base;
  j["variant"] = s.variant;
  if (s.moderator)
    j["moderator"] = {{"factor", s.moderator->factor}, {"levels", {s.moderator->level1, s.moderator->level2}}};
  if (s.grouping) j["grouping"] = *s.grouping;
  if (!s.fixed.empty()) j["fixed"] = s.fixed;
  return j;
}

inline ContrastSpec contrast_from_json(const nlohmann::json& j) {
  auto str = [&](const nlohmann::json& o, const char* key) -> std::string {
    if (!o.contains(key) || !o[key].is_string())
      throw ParseError(std::string("contrast spec needs string field '") + key + "'");
    return o[key].get<std::string>();
  };
  if (!j.is_object()) throw ParseError("contrast spec must be an object");
  ContrastSpec s;
  s.order_factor = str(j, "order_factor");
  s.base = str(j, "base");
  s.variant = str(j, "variant");
  s.name = j.contains("name") && j["name"].is_string() ? j["name"].get<std::string>() : s.label();
  if (j.contains("moderator")) {
    const auto& m = j["moderator"];
    if (!m.is_object() || !m.contains("levels") || !m["levels"].is_array() || m["levels"].size() != 2 ||
        !m["levels"][0].is_string() || !m["levels"][1].is_string())
      throw ParseError("contrast moderator needs 'factor' and exactly two 'levels'");
    s.moderator = Moderator{str(m, "factor"), m["levels"][0].get<std::string>(), m["levels"][1].get<std::string>()};
  }
  if (j.contains("grouping")) s.grouping = str(j, "grouping");
  if (j.contains("fixed")) {
    if (!j["fixed"].is_object()) throw ParseError("contrast 'fixed' must map factor names to levels");
    for (const auto& [k, v] : j["fixed"].items()) {
      if (!v.is_string()) throw ParseError("contrast 'fixed' level for '" + k + "' must be a string");
      s.fixed[k] = v.get<std::string>();
    }
  }
  return s;
}

// Accepts a single spec object or {"contrasts": [spec, ...]}.
inline std::vector<ContrastSpec> parse_contrast_specs(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("contrast spec: ") + e.what());
  }
  std::vector<ContrastSpec> out;
  if (j.is_object() && j.contains("contrasts")) {
    if (!j["contrasts"].is_array()) throw ParseError("'contrasts' must be an array");
    for (const auto& c : j["contrasts"]) out.push_back(contrast_from_json(c));
  } else {
    out.push_back(contrast_from_json(j));
  }
  if (out.empty()) throw ParseError("no contrasts given");
  return out;
}

inline std::vector<ContrastSpec> load_contrast_specs(const std::string& path) {
  return parse_contrast_specs(read_file(path));
}

// Condition keys whose values are averaged for one (order level, moderator
// level) cell of the contrast. `extra` pins further factors (strata).
inline std::vector<std::string> contrast_cell_keys(const Experiment& exp, const ContrastSpec& spec,
                                                   const std::string& order_level,
                                                   const std::optional<std::string>& moderator_level,
                                                   const std::map<std::string, std::string>& extra = {}) {
  std::vector<std::vector<std::string>> choices;
  for (const auto& f : exp.factors) {
    if (f.scope != FactorScope::within_item) continue;
    if (f.name == spec.order_factor) choices.push_back({order_level});
    else if (spec.moderator && f.name == spec.moderator->factor && moderator_level) choices.push_back({*moderator_level});
    else if (auto it = extra.find(f.name); it != extra.end()) choices.push_back({it->second});
    else if (auto it2 = spec.fixed.find(f.name); it2 != spec.fixed.end()) choices.push_back({it2->second});
    else choices.push_back(f.levels);
  }
  std::vector<std::string> keys = {""};
  for (const auto& levels : choices) {
    std::vector<std::string> next;
    for (const auto& prefix : keys)
      for (const auto& l : levels) next.push_back(prefix.empty() ? l : prefix + "|" + l);
    keys = std::move(next);
  }
  return keys;
}

// ---------------------------------------------------------------------------
// cell values

struct CellValues {
  std::string source_id;
  std::string units;            // "bits" or "rating"
  bool higher_is_better = false;  // ratings: higher is better; surprisal: lower is
  std::map<std::pair<std::string, std::string>, double> raw;
  // Optional demeaned cell values, used for interval estimation only.
  std::map<std::pair<std::string, std::string>, double> spread;

  bool has_spread() const { return !spread.empty(); }

  std::optional<double> get(const std::string& item, const std::string& cond, bool use_spread = false) const {
    const auto& m = use_spread ? spread : raw;
    auto it = m.find({item, cond});
    if (it == m.end()) return std::nullopt;
    return it->second;
  }

  // Mean over the listed keys, or nullopt if any is missing.
  std::optional<double> average(const std::string& item, const std::vector<std::string>& keys,
                                bool use_spread = false) const {
    double sum = 0.0;
    for (const auto& k : keys) {
      auto v = get(item, k, use_spread);
      if (!v) return std::nullopt;
      sum += *v;
    }
    return sum / static_cast<double>(keys.size());
  }
};

inline CellValues cells_from_surprisal(const SurprisalTable& table) {
  CellValues c;
  c.source_id = table.backend_id;
  c.units = "bits";
  c.higher_is_better = false;
  for (const auto& r : table.rows) c.raw[{r.item_id, r.condition_key}] = r.total_bits;
  return c;
}

// ---------------------------------------------------------------------------
// preferences

struct PreferenceRow {
  std::string source_id;
  std::string item_id;
  std::map<std::string, std::string> levels;  // moderator and grouping levels
  std::string contrast;
  double value = 0.0;  // v(variant) - v(base)
  double spread_value = std::numeric_limits<double>::quiet_NaN();
};

struct PreferenceTable {
  std::vector<PreferenceRow> rows;
  std::vector<std::string> excluded_items;  // "<item>: <reason>"
};

// v(variant) - v(base) per item and moderator level, other within-item
// factors averaged or fixed. With `strict`, a missing cell throws;
// otherwise the item is excluded and listed.
inline PreferenceTable preferences(const Experiment& exp, const CellValues& cells, const ContrastSpec& spec,
                                   bool strict) {
  check_contrast(exp, spec);
  std::vector<std::optional<std::string>> mod_levels = {std::nullopt};
  if (spec.moderator) mod_levels = {spec.moderator->level1, spec.moderator->level2};
  PreferenceTable out;
  for (const auto& item : exp.items) {
    std::vector<PreferenceRow> rows;
    std::string missing;
    for (const auto& ml : mod_levels) {
      const auto base_keys = contrast_cell_keys(exp, spec, spec.base, ml);
      const auto var_keys = contrast_cell_keys(exp, spec, spec.variant, ml);
      auto b = cells.average(item.id, base_keys), v = cells.average(item.id, var_keys);
      if (!b || !v) {
        for (const auto* keys : {&base_keys, &var_keys})
          for (const auto& k : *keys)
            if (!cells.get(item.id, k) && missing.empty()) missing = sentence_id(item.id, k);
        break;
      }
      PreferenceRow row;
      row.source_id = cells.source_id;
      row.item_id = item.id;
      row.contrast = spec.label();
      if (ml) row.levels[spec.moderator->factor] = *ml;
      if (spec.grouping) {
        if (auto g = item.group_levels.find(*spec.grouping); g != item.group_levels.end())
          row.levels[*spec.grouping] = g->second;
      }
      row.value = *v - *b;
      if (cells.has_spread()) {
        auto bs = cells.average(item.id, base_keys, true), vs = cells.average(item.id, var_keys, true);
        if (bs && vs) row.spread_value = *vs - *bs;
      }
      rows.push_back(std::move(row));
    }
    if (!missing.empty()) {
      if (strict) throw SchemaError("source '" + cells.source_id + "' has no value for cell " + missing);
      out.excluded_items.push_back(item.id + ": no data for cell " + missing);
      continue;
    }
    for (auto& r : rows) out.rows.push_back(std::move(r));
  }
  return out;
}

}  // namespace wordpref
