#pragma once

// Order preferences, the per-item interaction contrast and its tests,
// cross-source comparisons and stratified (three-way) analyses.

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "wordpref/contrast.hpp"
#include "wordpref/error.hpp"
#include "wordpref/scoring.hpp"
#include "wordpref/stats.hpp"
#include "wordpref/util.hpp"

namespace wordpref {

inline constexpr std::string_view kAnalysisTag = "per_item_contrast";

// S(variant) - S(base) in bits per item and moderator level; positive means
// the base order is preferred. A missing cell throws.
inline PreferenceTable order_preference(const Experiment& exp, const SurprisalTable& table, const ContrastSpec& spec) {
  return preferences(exp, cells_from_surprisal(table), spec, true);
}

struct ItemInteraction {
  std::string item_id;
  double d1 = 0.0;  // c(m1, base) - c(m1, variant)
  double d2 = 0.0;  // c(m2, base) - c(m2, variant)
  double value = 0.0;  // d1 - d2
  double spread_value = std::numeric_limits<double>::quiet_NaN();
};

struct ItemInteractions {
  std::vector<ItemInteraction> items;
  std::vector<std::string> excluded_items;
};

// c is the cost of a cell: surprisal as is, ratings negated. Items missing
// any needed cell are excluded and listed.
inline ItemInteractions item_interactions(const Experiment& exp, const CellValues& cells, const ContrastSpec& spec) {
  if (!spec.moderator) throw SchemaError("contrast '" + spec.name + "' has no moderating factor; interaction needs one");
  auto prefs = preferences(exp, cells, spec, false);
  const double sign = cells.higher_is_better ? 1.0 : -1.0;
  ItemInteractions out;
  out.excluded_items = prefs.excluded_items;
  const auto& mf = spec.moderator->factor;
  for (std::size_t i = 0; i + 1 < prefs.rows.size(); i += 2) {
    const auto& r1 = prefs.rows[i];
    const auto& r2 = prefs.rows[i + 1];
    if (r1.item_id != r2.item_id || r1.levels.at(mf) != spec.moderator->level1 || r2.levels.at(mf) != spec.moderator->level2)
      throw Error("internal: preference rows out of order");
    ItemInteraction it;
    it.item_id = r1.item_id;
    it.d1 = sign * r1.value;
    it.d2 = sign * r2.value;
    it.value = it.d1 - it.d2;
    if (!std::isnan(r1.spread_value) && !std::isnan(r2.spread_value))
      it.spread_value = sign * r1.spread_value - sign * r2.spread_value;
    out.items.push_back(it);
  }
  return out;
}

// Interaction statistic from the four cell costs of one item, in the order
// (m1 base, m1 variant, m2 base, m2 variant).
inline double interaction_value(double m1_base, double m1_variant, double m2_base, double m2_variant) {
  return (m1_base - m1_variant) - (m2_base - m2_variant);
}

inline stats::Interval contrast_ci(std::span<const double> values, double level = 0.95) {
  return stats::t_interval(values, level);
}

inline stats::TTest t_test_one_sample(std::span<const double> values) { return stats::t_test_one_sample(values); }

// Sign-flip null: each item's d1 and d2 are negated independently with
// probability 1/2 (swapping base and variant within that moderator level).
// Replicate r draws from its own counter-derived stream, so the result does
// not depend on the thread count.
inline double permutation_test(std::span<const ItemInteraction> items, int n_perm, std::uint64_t seed,
                               unsigned threads = 1) {
  if (n_perm < 1) throw UsageError("permutation test needs n_perm >= 1");
  if (items.empty()) throw InsufficientData("permutation test needs at least one item");
  double observed = 0.0;
  for (const auto& it : items) observed += it.value;
  observed /= static_cast<double>(items.size());
  const double threshold = std::fabs(observed) * (1.0 - 1e-12);

  std::vector<char> extreme(static_cast<std::size_t>(n_perm), 0);
  parallel_for(extreme.size(), threads, [&](std::size_t r) {
    std::uint64_t state = derive_seed(seed, "perm", r);
    std::uint64_t bits = 0;
    int left = 0;
    auto flip = [&] {
      if (left == 0) {
        state += 0x9E3779B97F4A7C15ULL;
        bits = splitmix64(state);
        left = 64;
      }
      const bool b = bits & 1u;
      bits >>= 1;
      --left;
      return b;
    };
    double sum = 0.0;
    for (const auto& it : items) {
      const double a = flip() ? -it.d1 : it.d1;
      const double b = flip() ? -it.d2 : it.d2;
      sum += a - b;
    }
    const double m = sum / static_cast<double>(items.size());
    extreme[r] = std::fabs(m) >= threshold;
  });
  std::size_t count = 0;
  for (char e : extreme) count += static_cast<std::size_t>(e);
  return (1.0 + static_cast<double>(count)) / (1.0 + static_cast<double>(n_perm));
}

struct InteractionOptions {
  double level = 0.95;
  int n_perm = 0;  // 0 skips the permutation test
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

struct InteractionResult {
  std::string source_id;
  std::string units;
  std::string contrast;
  std::string stratum;  // "factor=level" inside a stratified analysis
  std::vector<ItemInteraction> items;
  std::vector<std::string> excluded_items;
  double mean = std::numeric_limits<double>::quiet_NaN();
  std::optional<stats::Interval> ci;
  std::optional<stats::TTest> test;
  std::optional<double> p_perm;
  bool insufficient_items = false;
  bool demeaned_spread = false;  // interval/test spread from demeaned values

  std::size_t n_items() const { return items.size(); }
  std::vector<double> values() const {
    std::vector<double> v;
    for (const auto& it : items) v.push_back(it.value);
    return v;
  }
  const ItemInteraction* find(std::string_view item) const {
    for (const auto& it : items)
      if (it.item_id == item) return &it;
    return nullptr;
  }
};

namespace detail {

// Test of mean = 0 where the spread may come from a different (demeaned)
// version of the values than the point estimate.
inline stats::TTest centred_t_test(double centre, std::span<const double> spread) {
  stats::TTest r;
  r.df = static_cast<double>(spread.size() - 1);
  if (stats::zero_spread(spread)) {
    r.zero_variance = true;
    const bool zero = std::fabs(centre) <= 1e-13 * std::max(1.0, std::fabs(centre));
    r.t = zero ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), centre);
    r.p = zero ? 1.0 : 0.0;
    return r;
  }
  r.t = centre / (stats::sd(spread) / std::sqrt(static_cast<double>(spread.size())));
  r.p = stats::t_two_sided_p(r.t, r.df);
  return r;
}

inline void fill_tests(InteractionResult& res, const InteractionOptions& opt) {
  const auto values = res.values();
  res.mean = values.empty() ? std::numeric_limits<double>::quiet_NaN() : stats::mean(values);
  if (values.size() < 2) {
    res.insufficient_items = true;
    return;
  }
  std::vector<double> spread;
  for (const auto& it : res.items)
    if (!std::isnan(it.spread_value)) spread.push_back(it.spread_value);
  if (spread.size() == values.size()) {
    res.demeaned_spread = true;
    res.ci = stats::t_interval(res.mean, spread, opt.level);
    res.test = centred_t_test(res.mean, spread);
  } else {
    res.ci = stats::t_interval(values, opt.level);
    res.test = stats::t_test_one_sample(values);
  }
  if (opt.n_perm > 0) res.p_perm = permutation_test(res.items, opt.n_perm, opt.seed, opt.threads);
}

}  // namespace detail

inline InteractionResult interaction(const Experiment& exp, const CellValues& cells, const ContrastSpec& spec,
                                     const InteractionOptions& opt = {}) {
  auto ii = item_interactions(exp, cells, spec);
  InteractionResult res;
  res.source_id = cells.source_id;
  res.units = cells.units;
  res.contrast = spec.name;
  res.items = std::move(ii.items);
  res.excluded_items = std::move(ii.excluded_items);
  detail::fill_tests(res, opt);
  return res;
}

inline InteractionResult interaction(const Experiment& exp, const SurprisalTable& table, const ContrastSpec& spec,
                                     const InteractionOptions& opt = {}) {
  return interaction(exp, cells_from_surprisal(table), spec, opt);
}

inline double permutation_test(const Experiment& exp, const SurprisalTable& table, const ContrastSpec& spec,
                               int n_perm, std::uint64_t seed, unsigned threads = 1) {
  auto ii = item_interactions(exp, cells_from_surprisal(table), spec);
  return permutation_test(ii.items, n_perm, seed, threads);
}

struct ModelComparison {
  std::string source_a;
  std::string source_b;
  std::vector<std::string> item_ids;
  std::vector<double> differences;  // I_a - I_b
  double mean_difference = 0.0;
  stats::TTest test;
  std::optional<stats::Interval> ci;
};

// Paired test of I^A - I^B over the items both results contain.
inline ModelComparison compare_models(const InteractionResult& a, const InteractionResult& b, double level = 0.95) {
  ModelComparison mc;
  mc.source_a = a.source_id;
  mc.source_b = b.source_id;
  for (const auto& it : a.items)
    if (const auto* other = b.find(it.item_id)) {
      mc.item_ids.push_back(it.item_id);
      mc.differences.push_back(it.value - other->value);
    }
  if (mc.differences.size() < 2)
    throw InsufficientData("comparing '" + a.source_id + "' with '" + b.source_id + "': fewer than 2 shared items");
  mc.mean_difference = stats::mean(mc.differences);
  mc.test = stats::t_test_one_sample(mc.differences);
  mc.ci = stats::t_interval(mc.differences, level);
  return mc;
}

struct StratumComparison {
  std::string level_a;
  std::string level_b;
  double difference = 0.0;  // mean I in stratum a minus stratum b
  bool paired = false;      // within-item grouping: paired over items
  std::optional<stats::TTest> test;
};

struct StratifiedResult {
  std::string factor;
  std::vector<std::string> levels;
  std::vector<InteractionResult> strata;
  std::vector<StratumComparison> comparisons;  // first level against each other level
};

// Runs the interaction separately within each level of the grouping factor
// and compares strata means. A between-item grouping factor compares
// independent item sets (Welch); a within-item one pins the factor per
// stratum and pairs items.
inline StratifiedResult stratified_interaction(const Experiment& exp, const CellValues& cells, const ContrastSpec& spec,
                                               const InteractionOptions& opt = {}) {
  check_contrast(exp, spec);
  if (!spec.grouping) throw SchemaError("contrast '" + spec.name + "' has no grouping factor");
  const Factor& g = exp.factor(*spec.grouping);
  StratifiedResult out;
  out.factor = g.name;
  out.levels = g.levels;
  const bool within = g.scope == FactorScope::within_item;
  for (std::size_t li = 0; li < g.levels.size(); ++li) {
    const auto& level = g.levels[li];
    ContrastSpec sub = spec;
    sub.grouping.reset();
    Experiment part = exp;
    if (within) {
      sub.fixed[g.name] = level;
    } else {
      part.items.clear();
      for (const auto& it : exp.items)
        if (auto f = it.group_levels.find(g.name); f != it.group_levels.end() && f->second == level)
          part.items.push_back(it);
    }
    InteractionOptions o = opt;
    o.seed = derive_seed(opt.seed, "stratum", li);
    auto res = interaction(part, cells, sub, o);
    res.stratum = g.name + "=" + level;
    out.strata.push_back(std::move(res));
  }
  for (std::size_t k = 1; k < out.strata.size(); ++k) {
    const auto& a = out.strata[0];
    const auto& b = out.strata[k];
    StratumComparison c;
    c.level_a = g.levels[0];
    c.level_b = g.levels[k];
    c.paired = within;
    c.difference = a.mean - b.mean;
    try {
      if (within) {
        auto mc = compare_models(a, b, opt.level);
        c.difference = mc.mean_difference;
        c.test = mc.test;
      } else {
        auto va = a.values(), vb = b.values();
        c.test = stats::welch_t_test(va, vb);
      }
    } catch (const InsufficientData&) {
    }
    out.comparisons.push_back(c);
  }
  return out;
}

// ---------------------------------------------------------------------------
// serialization

namespace detail {

inline nlohmann::ordered_json num(double v) {
  if (std::isnan(v)) return nullptr;
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

inline nlohmann::ordered_json test_json(const stats::TTest& t) {
  return {{"t", num(t.t)}, {"df", num(t.df)}, {"p", num(t.p)}, {"zero_variance", t.zero_variance}};
}

}  // namespace detail

inline nlohmann::ordered_json to_json(const InteractionResult& r) {
  nlohmann::ordered_json j;
  j["source_id"] = r.source_id;
  j["units"] = r.units;
  j["contrast"] = r.contrast;
  if (!r.stratum.empty()) j["stratum"] = r.stratum;
  j["n_items"] = r.n_items();
  j["mean"] = detail::num(r.mean);
  if (r.ci) j["ci"] = {{"low", detail::num(r.ci->low)}, {"high", detail::num(r.ci->high)}};
  else j["ci"] = nullptr;
  j["test"] = r.test ? detail::test_json(*r.test) : nlohmann::ordered_json(nullptr);
  j["p_perm"] = r.p_perm ? detail::num(*r.p_perm) : nlohmann::ordered_json(nullptr);
  j["insufficient_items"] = r.insufficient_items;
  j["spread"] = r.demeaned_spread ? "demeaned" : "raw";
  j["excluded_items"] = r.excluded_items;
  auto items = nlohmann::ordered_json::array();
  for (const auto& it : r.items) {
    nlohmann::ordered_json ij{{"item_id", it.item_id}, {"I", it.value}, {"d1", it.d1}, {"d2", it.d2}};
    if (!std::isnan(it.spread_value)) ij["I_demeaned"] = it.spread_value;
    items.push_back(ij);
  }
  j["items"] = items;
  return j;
}

inline nlohmann::ordered_json to_json(const ModelComparison& m) {
  nlohmann::ordered_json j;
  j["source_a"] = m.source_a;
  j["source_b"] = m.source_b;
  j["n_items"] = m.item_ids.size();
  j["mean_difference"] = m.mean_difference;
  j["test"] = detail::test_json(m.test);
  if (m.ci) j["ci"] = {{"low", detail::num(m.ci->low)}, {"high", detail::num(m.ci->high)}};
  return j;
}

inline nlohmann::ordered_json to_json(const StratifiedResult& s) {
  nlohmann::ordered_json j;
  j["factor"] = s.factor;
  auto strata = nlohmann::ordered_json::array();
  for (const auto& r : s.strata) strata.push_back(to_json(r));
  j["strata"] = strata;
  auto comps = nlohmann::ordered_json::array();
  for (const auto& c : s.comparisons) {
    nlohmann::ordered_json cj{{"level_a", c.level_a}, {"level_b", c.level_b},
                              {"difference", detail::num(c.difference)},
                              {"method", c.paired ? "paired_t" : "welch_t"}};
    cj["test"] = c.test ? detail::test_json(*c.test) : nlohmann::ordered_json(nullptr);
    comps.push_back(cj);
  }
  j["comparisons"] = comps;
  return j;
}

}  // namespace wordpref
