#pragma once

// Human acceptability ratings: CSV ingestion, subject filtering and per-cell
// means for preference and interaction analysis.

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "wordpref/contrast.hpp"
#include "wordpref/error.hpp"
#include "wordpref/stimuli.hpp"
#include "wordpref/util.hpp"

namespace wordpref {

inline constexpr std::string_view kRatingsHeader =
    "subject_id,native_speaker,comprehension_accuracy,item_id,condition_key,rating";

struct SubjectInfo {
  bool native_speaker = true;
  double comprehension_accuracy = 1.0;
  bool operator==(const SubjectInfo&) const = default;
};

struct Rating {
  std::string subject_id;
  std::string item_id;
  std::string condition_key;
  int rating = 0;
  bool operator==(const Rating&) const = default;
};

struct RatingsTable {
  std::vector<Rating> rows;
  std::map<std::string, SubjectInfo> subjects;
  bool operator==(const RatingsTable&) const = default;
};

// RFC 4180 style records: comma separated, double-quoted fields may hold
// commas, newlines and doubled quotes.
inline std::vector<std::vector<std::string>> parse_csv(std::string_view text, const std::string& origin = "<csv>") {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> rec;
  std::string field;
  bool quoted = false, field_started = false;
  std::size_t line = 1;
  auto end_field = [&] {
    rec.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_record = [&] {
    end_field();
    if (!(rec.size() == 1 && rec[0].empty())) records.push_back(std::move(rec));
    rec.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        if (c == '\n') ++line;
        field += c;
      }
      continue;
    }
    if (c == '"') {
      if (field_started || !field.empty())
        throw ParseError(origin + ":" + std::to_string(line) + ": stray quote inside unquoted field");
      quoted = true;
      field_started = true;
    } else if (c == ',') {
      end_field();
    } else if (c == '\n') {
      end_record();
      ++line;
    } else if (c == '\r') {
      continue;
    } else {
      field += c;
    }
  }
  if (quoted) throw ParseError(origin + ": unterminated quoted field");
  if (field_started || !field.empty() || !rec.empty()) end_record();
  if (!text.empty() && text.substr(0, 3) == "\xEF\xBB\xBF" && !records.empty() && !records[0].empty())
    records[0][0].erase(0, 3);
  return records;
}

inline bool parse_bool_field(std::string_view s, bool& out) {
  std::string v(trim(s));
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char ch) { return std::tolower(ch); });
  if (v == "true" || v == "1" || v == "yes") return (out = true), true;
  if (v == "false" || v == "0" || v == "no") return (out = false), true;
  return false;
}

// With an experiment, item ids and condition keys are checked against it.
inline RatingsTable parse_ratings(std::string_view text, const Experiment* exp = nullptr,
                                  const std::string& origin = "<ratings>") {
  auto records = parse_csv(text, origin);
  if (records.empty()) throw ParseError(origin + ": empty ratings file");
  if (join(records[0], ",") != kRatingsHeader)
    throw ParseError(origin + ": expected header '" + std::string(kRatingsHeader) + "'");
  std::set<std::string> keys;
  if (exp)
    for (const auto& k : exp->condition_keys()) keys.insert(k);

  RatingsTable rt;
  std::set<std::tuple<std::string, std::string, std::string>> seen;
  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& f = records[r];
    const std::string where = origin + ": record " + std::to_string(r) + ": ";
    if (f.size() != 6) throw ParseError(where + "expected 6 fields, got " + std::to_string(f.size()));
    Rating row;
    row.subject_id = std::string(trim(f[0]));
    row.item_id = std::string(trim(f[3]));
    row.condition_key = std::string(trim(f[4]));
    SubjectInfo info;
    if (!parse_bool_field(f[1], info.native_speaker))
      throw ParseError(where + "native_speaker '" + f[1] + "' is not a boolean");
    if (!parse_double(trim(f[2]), info.comprehension_accuracy))
      throw ParseError(where + "comprehension_accuracy '" + f[2] + "' is not a number");
    if (!(info.comprehension_accuracy >= 0.0 && info.comprehension_accuracy <= 1.0))
      throw ValidationError(where + "comprehension_accuracy " + f[2] + " outside [0, 1]");
    long long rating = 0;
    if (!parse_int(trim(f[5]), rating)) throw ParseError(where + "rating '" + f[5] + "' is not an integer");
    if (rating < 1 || rating > 5)
      throw ValidationError(where + "rating " + std::to_string(rating) + " outside 1-5");
    row.rating = static_cast<int>(rating);
    if (row.subject_id.empty() || row.item_id.empty()) throw ValidationError(where + "empty subject_id or item_id");
    if (exp) {
      if (!exp->find_item(row.item_id)) throw SchemaError(where + "unknown item '" + row.item_id + "'");
      if (!keys.count(row.condition_key))
        throw SchemaError(where + "unknown condition key '" + row.condition_key + "'");
    }
    if (!seen.emplace(row.subject_id, row.item_id, row.condition_key).second)
      throw ValidationError(where + "duplicate rating for (" + row.subject_id + ", " + row.item_id + ", " +
                            row.condition_key + ")");
    auto [it, inserted] = rt.subjects.emplace(row.subject_id, info);
    if (!inserted && !(it->second == info))
      throw ValidationError(where + "subject '" + row.subject_id + "' has inconsistent metadata");
    rt.rows.push_back(std::move(row));
  }
  return rt;
}

inline RatingsTable load_ratings(const std::string& path, const Experiment* exp = nullptr) {
  return parse_ratings(read_file(path), exp, path);
}

struct FilterReport {
  double min_accuracy = 0.8;
  bool require_native = true;
  std::size_t subjects_in = 0;
  std::size_t subjects_kept = 0;
  std::size_t subjects_dropped = 0;
  std::size_t rows_in = 0;
  std::size_t rows_retained = 0;
  std::size_t rows_dropped = 0;
  std::vector<std::string> dropped_subjects;
};

struct FilteredRatings {
  RatingsTable table;
  FilterReport report;
};

// Keeps subjects with accuracy >= min_accuracy and, if required, native
// speakers.
inline FilteredRatings filter_subjects(const RatingsTable& rt, double min_accuracy = 0.8,
                                       bool require_native = true) {
  FilteredRatings out;
  auto& rep = out.report;
  rep.min_accuracy = min_accuracy;
  rep.require_native = require_native;
  rep.subjects_in = rt.subjects.size();
  rep.rows_in = rt.rows.size();
  for (const auto& [id, info] : rt.subjects) {
    const bool keep = info.comprehension_accuracy >= min_accuracy && (!require_native || info.native_speaker);
    if (keep) out.table.subjects.emplace(id, info);
    else rep.dropped_subjects.push_back(id);
  }
  for (const auto& r : rt.rows)
    if (out.table.subjects.count(r.subject_id)) out.table.rows.push_back(r);
  rep.subjects_kept = out.table.subjects.size();
  rep.subjects_dropped = rep.dropped_subjects.size();
  rep.rows_retained = out.table.rows.size();
  rep.rows_dropped = rep.rows_in - rep.rows_retained;
  return out;
}

struct HumanOptions {
  bool demean = true;   // fill the spread values used for intervals
  bool zscore = false;  // standardize each subject's ratings first
  std::string source_id = "human";
};

// Per (item, condition) mean rating. The spread map holds the same means
// after removing each subject's and each item's mean (grand mean added
// back).
inline CellValues cells_from_ratings(const RatingsTable& rt, const HumanOptions& opt = {}) {
  std::vector<double> value(rt.rows.size());
  for (std::size_t i = 0; i < rt.rows.size(); ++i) value[i] = rt.rows[i].rating;

  auto group_means = [&](auto key_of) {
    std::map<std::string, std::pair<double, std::size_t>> acc;
    for (std::size_t i = 0; i < rt.rows.size(); ++i) {
      auto& a = acc[key_of(rt.rows[i])];
      a.first += value[i];
      ++a.second;
    }
    std::map<std::string, double> out;
    for (const auto& [k, a] : acc) out[k] = a.first / static_cast<double>(a.second);
    return out;
  };
  auto subject_of = [](const Rating& r) { return r.subject_id; };
  auto item_of = [](const Rating& r) { return r.item_id; };

  if (opt.zscore) {
    auto m = group_means(subject_of);
    std::map<std::string, std::pair<double, std::size_t>> ss;
    for (std::size_t i = 0; i < rt.rows.size(); ++i) {
      const double d = value[i] - m[rt.rows[i].subject_id];
      ss[rt.rows[i].subject_id].first += d * d;
      ++ss[rt.rows[i].subject_id].second;
    }
    for (std::size_t i = 0; i < rt.rows.size(); ++i) {
      const auto& [sum, n] = ss[rt.rows[i].subject_id];
      const double sdv = n > 1 ? std::sqrt(sum / static_cast<double>(n - 1)) : 0.0;
      const double d = value[i] - m[rt.rows[i].subject_id];
      value[i] = sdv > 0.0 ? d / sdv : 0.0;
    }
  }

  CellValues cells;
  cells.source_id = opt.source_id;
  cells.units = opt.zscore ? "rating_z" : "rating";
  cells.higher_is_better = true;

  auto cell_means = [&](const std::vector<double>& v) {
    std::map<std::pair<std::string, std::string>, std::pair<double, std::size_t>> acc;
    for (std::size_t i = 0; i < rt.rows.size(); ++i) {
      auto& a = acc[{rt.rows[i].item_id, rt.rows[i].condition_key}];
      a.first += v[i];
      ++a.second;
    }
    std::map<std::pair<std::string, std::string>, double> out;
    for (const auto& [k, a] : acc) out[k] = a.first / static_cast<double>(a.second);
    return out;
  };
  cells.raw = cell_means(value);

  if (opt.demean && !rt.rows.empty()) {
    auto ms = group_means(subject_of);
    auto mi = group_means(item_of);
    double grand = 0.0;
    for (double v : value) grand += v;
    grand /= static_cast<double>(value.size());
    std::vector<double> dm(value.size());
    for (std::size_t i = 0; i < value.size(); ++i)
      dm[i] = value[i] - ms[rt.rows[i].subject_id] - mi[rt.rows[i].item_id] + grand;
    cells.spread = cell_means(dm);
  }
  return cells;
}

// Per item and moderator level: mean rating(variant) - mean rating(base).
// Items lacking a needed cell are excluded and listed.
inline PreferenceTable human_preferences(const RatingsTable& rt, const Experiment& exp, const ContrastSpec& spec,
                                         const HumanOptions& opt = {}) {
  return preferences(exp, cells_from_ratings(rt, opt), spec, false);
}

}  // namespace wordpref
