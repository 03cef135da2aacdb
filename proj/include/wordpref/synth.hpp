#pragma once

// Seeded synthetic data: a heavy-NP-style template corpus with controlled
// shift probabilities, a matched 2x2 experiment, synthetic surprisal tables
// with a planted interaction, and synthetic ratings.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "wordpref/contrast.hpp"
#include "wordpref/error.hpp"
#include "wordpref/ratings.hpp"
#include "wordpref/scoring.hpp"
#include "wordpref/stimuli.hpp"
#include "wordpref/util.hpp"

namespace wordpref {

struct SyntheticSource {
  std::string backend_id = "synthetic";
  double interaction = 3.0;  // bits added on top of the base cells
  double noise_sd = 1.0;
};

struct SyntheticRatings {
  int n_subjects = 64;
  int n_low_accuracy = 5;  // accuracy drawn below 0.8
  int n_nonnative = 4;
  double subject_sd = 0.8;
  double item_sd = 0.3;
  double noise_sd = 0.7;
  std::map<std::string, double> cell_means = {
      {"std|short", 4.2}, {"shifted|short", 2.6}, {"std|long", 3.6}, {"shifted|long", 3.5}};
  bool latin_square = true;  // each subject sees one condition per item
};

struct SyntheticSpec {
  std::uint64_t seed = 1;
  int n_items = 40;
  // Length effect only. An order main effect makes the sign-flip
  // permutation null conservative.
  std::map<std::string, double> base_surprisal = {
      {"std|short", 50.0}, {"shifted|short", 50.0}, {"std|long", 62.0}, {"shifted|long", 62.0}};
  std::vector<SyntheticSource> sources = {SyntheticSource{}};
  int n_sentences = 50000;  // training corpus size; 0 skips the corpus
  double p_shift_long = 0.8;
  double p_shift_short = 0.1;
  double p_long = 0.5;
  std::optional<SyntheticRatings> ratings;
};

inline const std::vector<std::string>& synth_condition_keys() {
  static const std::vector<std::string> keys = {"std|short", "std|long", "shifted|short", "shifted|long"};
  return keys;
}

inline void check_synthetic_spec(const SyntheticSpec& s) {
  auto prob = [](double p, const char* what) {
    if (!(p >= 0.0 && p <= 1.0)) throw ValidationError(std::string(what) + " must lie in [0, 1]");
  };
  prob(s.p_shift_long, "p_shift_long");
  prob(s.p_shift_short, "p_shift_short");
  prob(s.p_long, "p_long");
  if (s.n_items < 1) throw ValidationError("n_items must be at least 1");
  if (s.n_sentences < 0) throw ValidationError("n_sentences must be non-negative");
  for (const auto& k : synth_condition_keys())
    if (!s.base_surprisal.count(k)) throw ValidationError("base_surprisal is missing cell '" + k + "'");
  std::set<std::string> ids;
  for (const auto& src : s.sources) {
    if (!(src.noise_sd >= 0.0)) throw ValidationError("noise_sd must be non-negative");
    if (!std::isfinite(src.interaction)) throw ValidationError("interaction must be finite");
    if (src.backend_id.empty() || !ids.insert(src.backend_id).second)
      throw ValidationError("source backend ids must be non-empty and unique");
  }
  if (s.ratings) {
    const auto& r = *s.ratings;
    if (r.n_subjects < 1 || r.n_low_accuracy < 0 || r.n_nonnative < 0 ||
        r.n_low_accuracy + r.n_nonnative > r.n_subjects)
      throw ValidationError("ratings subject counts are inconsistent");
    if (!(r.subject_sd >= 0.0) || !(r.item_sd >= 0.0) || !(r.noise_sd >= 0.0))
      throw ValidationError("ratings standard deviations must be non-negative");
    for (const auto& k : synth_condition_keys())
      if (!r.cell_means.count(k)) throw ValidationError("ratings cell_means is missing cell '" + k + "'");
  }
}

inline SyntheticSpec parse_synthetic_spec(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("synthetic spec: ") + e.what());
  }
  if (!j.is_object()) throw ParseError("synthetic spec must be an object");
  SyntheticSpec s;
  try {
    if (j.contains("seed")) s.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("n_items")) s.n_items = j["n_items"].get<int>();
    if (j.contains("n_sentences")) s.n_sentences = j["n_sentences"].get<int>();
    if (j.contains("p_shift_long")) s.p_shift_long = j["p_shift_long"].get<double>();
    if (j.contains("p_shift_short")) s.p_shift_short = j["p_shift_short"].get<double>();
    if (j.contains("p_long")) s.p_long = j["p_long"].get<double>();
    if (j.contains("base_surprisal"))
      s.base_surprisal = j["base_surprisal"].get<std::map<std::string, double>>();
    if (j.contains("sources")) {
      s.sources.clear();
      for (const auto& src : j["sources"]) {
        SyntheticSource o;
        if (src.contains("backend_id")) o.backend_id = src["backend_id"].get<std::string>();
        if (src.contains("interaction")) o.interaction = src["interaction"].get<double>();
        if (src.contains("noise_sd")) o.noise_sd = src["noise_sd"].get<double>();
        s.sources.push_back(o);
      }
    }
    if (j.contains("ratings") && !j["ratings"].is_null()) {
      const auto& r = j["ratings"];
      SyntheticRatings o;
      if (r.contains("n_subjects")) o.n_subjects = r["n_subjects"].get<int>();
      if (r.contains("n_low_accuracy")) o.n_low_accuracy = r["n_low_accuracy"].get<int>();
      if (r.contains("n_nonnative")) o.n_nonnative = r["n_nonnative"].get<int>();
      if (r.contains("subject_sd")) o.subject_sd = r["subject_sd"].get<double>();
      if (r.contains("item_sd")) o.item_sd = r["item_sd"].get<double>();
      if (r.contains("noise_sd")) o.noise_sd = r["noise_sd"].get<double>();
      if (r.contains("cell_means")) o.cell_means = r["cell_means"].get<std::map<std::string, double>>();
      if (r.contains("latin_square")) o.latin_square = r["latin_square"].get<bool>();
      s.ratings = o;
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("synthetic spec: ") + e.what());
  }
  check_synthetic_spec(s);
  return s;
}

inline nlohmann::ordered_json to_json(const SyntheticSpec& s) {
  nlohmann::ordered_json j;
  j["seed"] = s.seed;
  j["n_items"] = s.n_items;
  j["n_sentences"] = s.n_sentences;
  j["p_shift_long"] = s.p_shift_long;
  j["p_shift_short"] = s.p_shift_short;
  j["p_long"] = s.p_long;
  j["base_surprisal"] = s.base_surprisal;
  auto srcs = nlohmann::ordered_json::array();
  for (const auto& o : s.sources)
    srcs.push_back({{"backend_id", o.backend_id}, {"interaction", o.interaction}, {"noise_sd", o.noise_sd}});
  j["sources"] = srcs;
  if (s.ratings) {
    const auto& r = *s.ratings;
    j["ratings"] = {{"n_subjects", r.n_subjects}, {"n_low_accuracy", r.n_low_accuracy},
                    {"n_nonnative", r.n_nonnative}, {"subject_sd", r.subject_sd},
                    {"item_sd", r.item_sd},         {"noise_sd", r.noise_sd},
                    {"cell_means", r.cell_means},   {"latin_square", r.latin_square}};
  }
  return j;
}

// ---------------------------------------------------------------------------
// templates

namespace synth_lexicon {

inline const std::vector<std::string> subjects = {
    "the publisher", "the editor", "kim", "the committee", "my neighbor", "the teacher", "a reporter",
    "the manager", "our team", "the author", "the officer", "the student", "sam", "the doctor"};
inline const std::vector<std::string> verbs = {
    "announced", "sent", "brought", "described", "mentioned", "offered", "showed",
    "delivered", "returned", "explained", "presented", "introduced", "found", "carried"};
inline const std::vector<std::string> determiners = {"a", "the", "this", "one"};
inline const std::vector<std::string> nouns = {
    "book", "letter", "plan", "report", "gift", "story", "idea", "proposal", "package",
    "photo", "song", "map", "recipe", "tool", "paper", "result", "chair", "lamp"};
inline const std::vector<std::string> adjectives = {
    "new", "old", "long", "strange", "detailed", "beautiful", "expensive", "famous",
    "small", "careful", "secret", "simple", "heavy", "bright"};
inline const std::vector<std::string> pps = {
    "on thursday", "to the editor", "at the meeting", "in the morning", "to my brother",
    "after lunch", "for the class", "during the trip", "to the office", "before dinner",
    "at the station", "to her friend"};

}  // namespace synth_lexicon

struct SentenceParts {
  std::string subject, verb, det, noun, adj1, adj2, pp;
};

inline SentenceParts draw_parts(Rng& rng) {
  using namespace synth_lexicon;
  SentenceParts p;
  p.subject = rng.pick(subjects);
  p.verb = rng.pick(verbs);
  p.det = rng.pick(determiners);
  p.noun = rng.pick(nouns);
  p.adj1 = rng.pick(adjectives);
  do p.adj2 = rng.pick(adjectives);
  while (p.adj2 == p.adj1);
  p.pp = rng.pick(pps);
  return p;
}

inline std::string realize(const SentenceParts& p, bool shifted, bool long_np) {
  const std::string np = long_np ? p.det + " " + p.adj1 + " " + p.noun : p.det + " " + p.noun;
  std::string s = p.subject + " " + p.verb + " " + (shifted ? p.pp + " " + np : np + " " + p.pp) + ".";
  s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  return s;
}

inline std::vector<std::string> synth_corpus(const SyntheticSpec& spec) {
  Rng rng(derive_seed(spec.seed, "corpus", 0));
  std::vector<std::string> out;
  out.reserve(static_cast<std::size_t>(spec.n_sentences));
  for (int i = 0; i < spec.n_sentences; ++i) {
    const auto parts = draw_parts(rng);
    const bool long_np = rng.bernoulli(spec.p_long);
    const bool shifted = rng.bernoulli(long_np ? spec.p_shift_long : spec.p_shift_short);
    out.push_back(realize(parts, shifted, long_np));
  }
  return out;
}

inline Experiment synth_experiment(const SyntheticSpec& spec) {
  Experiment exp;
  exp.name = "synthetic_heavy_np";
  exp.factors = {{"order", {"std", "shifted"}, FactorScope::within_item, true},
                 {"np_length", {"short", "long"}, FactorScope::within_item, false}};
  Rng rng(derive_seed(spec.seed, "items", 0));
  for (int i = 0; i < spec.n_items; ++i) {
    const auto parts = draw_parts(rng);
    Item it;
    it.id = "item" + std::to_string(i + 1);
    it.cells["std|short"] = realize(parts, false, false);
    it.cells["shifted|short"] = realize(parts, true, false);
    it.cells["std|long"] = realize(parts, false, true);
    it.cells["shifted|long"] = realize(parts, true, true);
    exp.items.push_back(std::move(it));
  }
  return exp;
}

// Moderator levels ordered (long, short): a penalty for shifting short NPs
// then gives a positive interaction.
inline ContrastSpec synth_contrast() {
  ContrastSpec s;
  s.name = "heavy_np";
  s.order_factor = "order";
  s.base = "std";
  s.variant = "shifted";
  s.moderator = Moderator{"np_length", "long", "short"};
  return s;
}

// Cell cost = base + item offset + noise, plus the planted interaction on
// (short, shifted). Totals sit on a 1/1024 grid and are split over tokens on
// the same grid, so sums and differences of cells are exact.
inline SurprisalTable synth_surprisals(const SyntheticSpec& spec, const Experiment& exp, std::size_t source_index) {
  const auto& src = spec.sources.at(source_index);
  Rng rng(derive_seed(spec.seed, "source:" + src.backend_id, source_index));
  auto grid = [](double x) { return std::round(x * 1024.0) / 1024.0; };
  SurprisalTable t;
  t.backend_id = src.backend_id;
  t.eos_included = false;
  const auto keys = exp.condition_keys();
  for (const auto& it : exp.items) {
    const double offset = grid(rng.uniform(0.0, 10.0));
    for (const auto& k : keys) {
      double total = grid(spec.base_surprisal.at(k)) + offset + grid(src.noise_sd * rng.normal());
      if (k == "shifted|short") total += grid(src.interaction);
      total = std::max(total, 0.0);
      SurprisalRow row;
      row.backend_id = src.backend_id;
      row.item_id = it.id;
      row.condition_key = k;
      row.detail.sentence_id = sentence_id(it.id, k);
      row.detail.tokens = tokenize(it.cells.at(k), Scheme::punct_split_lowercase).tokens;
      const std::size_t n = row.detail.tokens.size();
      const double share = std::floor(total / static_cast<double>(n) * 1024.0) / 1024.0;
      row.detail.surprisal_bits.assign(n, share);
      row.detail.surprisal_bits.back() = total - share * static_cast<double>(n - 1);
      row.total_bits = total_surprisal(row.detail);
      t.rows.push_back(std::move(row));
    }
  }
  return t;
}

inline RatingsTable synth_ratings(const SyntheticSpec& spec, const Experiment& exp) {
  const auto& r = spec.ratings.value();
  Rng rng(derive_seed(spec.seed, "ratings", 0));
  RatingsTable rt;
  std::vector<double> item_effect;
  for (std::size_t i = 0; i < exp.items.size(); ++i) item_effect.push_back(r.item_sd * rng.normal());
  const auto keys = exp.condition_keys();
  for (int s = 0; s < r.n_subjects; ++s) {
    char id[16];
    std::snprintf(id, sizeof(id), "s%02d", s + 1);
    SubjectInfo info;
    if (s < r.n_low_accuracy) {
      info.comprehension_accuracy = 0.5 + 0.05 * static_cast<double>(rng.below(6));  // 0.50 .. 0.75
    } else {
      info.comprehension_accuracy = 0.8 + 0.05 * static_cast<double>(rng.below(5));  // 0.80 .. 1.00
      info.native_speaker = s >= r.n_low_accuracy + r.n_nonnative;
    }
    rt.subjects[id] = info;
    const double subj = r.subject_sd * rng.normal();
    for (std::size_t i = 0; i < exp.items.size(); ++i) {
      std::vector<std::string> shown;
      if (r.latin_square) shown.push_back(keys[(static_cast<std::size_t>(s) + i) % keys.size()]);
      else shown = keys;
      for (const auto& k : shown) {
        const double latent = r.cell_means.at(k) + subj + item_effect[i] + r.noise_sd * rng.normal();
        const int rating = static_cast<int>(std::lround(std::clamp(latent, 1.0, 5.0)));
        rt.rows.push_back({id, exp.items[i].id, k, rating});
      }
    }
  }
  return rt;
}

inline std::string ratings_csv(const RatingsTable& rt) {
  std::ostringstream out;
  out << kRatingsHeader << '\n';
  for (const auto& row : rt.rows) {
    const auto& info = rt.subjects.at(row.subject_id);
    out << row.subject_id << ',' << (info.native_speaker ? "true" : "false") << ','
        << format_double(info.comprehension_accuracy) << ',' << row.item_id << ',' << row.condition_key << ','
        << row.rating << '\n';
  }
  return out.str();
}

}  // namespace wordpref
