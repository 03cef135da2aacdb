// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails.

#include <unistd.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>

#include "kn_oracle.hpp"
#include "wordpref/analysis.hpp"
#include "wordpref/commands.hpp"
#include "wordpref/ngram.hpp"
#include "wordpref/ratings.hpp"
#include "wordpref/report.hpp"
#include "wordpref/synth.hpp"
#include "xml_check.hpp"

using namespace wordpref;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

const fs::path& work_dir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / ("wordpref_acceptance_" + std::to_string(::getpid()));
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string wpath(const std::string& name) { return (work_dir() / name).string(); }

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(4);
  s << v;
  return s.str();
}

// ---------------------------------------------------------------------------

std::vector<std::vector<std::string>> tokens_of(std::initializer_list<const char*> lines) {
  std::vector<std::vector<std::string>> out;
  for (auto* l : lines) out.push_back(split_whitespace(l));
  return out;
}

NgramModel train_tokens(const std::vector<std::vector<std::string>>& s, int order) {
  CountOptions o;
  o.order = order;
  o.scheme = Scheme::whitespace;
  auto counts = count_tokenized(s, o);
  return build_model(counts, estimate_discounts(counts));
}

Outcome a1_oracle() {
  const std::vector<std::vector<std::vector<std::string>>> corpora = {
      tokens_of({"a b", "a b", "a c"}),
      tokens_of({"the cat sat", "the dog sat", "a cat ran", "dog"}),
      tokens_of({"x y x y z", "y x", "z z z y", "x y z", "y y x z x", "x"}),
  };
  double worst = 0.0;
  std::size_t checked = 0;
  for (const auto& corpus : corpora)
    for (int order : {2, 3}) {
      auto model = train_tokens(corpus, order);
      kn_oracle::Oracle oracle(corpus, order);
      std::vector<std::string> symbols(oracle.vocab().begin(), oracle.vocab().end());
      symbols.push_back("<s>");
      symbols.push_back("never-seen");
      std::vector<std::vector<std::string>> contexts{{}}, frontier{{}};
      for (int len = 1; len < order; ++len) {
        std::vector<std::vector<std::string>> next;
        for (const auto& c : frontier)
          for (const auto& s : symbols) {
            auto d = c;
            d.push_back(s);
            next.push_back(d);
          }
        contexts.insert(contexts.end(), next.begin(), next.end());
        frontier = std::move(next);
      }
      for (const auto& ctx : contexts)
        for (const auto& w : oracle.vocab()) {
          worst = std::max(worst, std::fabs(model.prob(w, ctx) - oracle.prob(w, ctx)));
          ++checked;
        }
    }
  return {worst <= 1e-9, std::to_string(checked) + " probabilities, max |diff| " + fmt(worst)};
}

// Shared by A2 and A3: a 100k-token synthetic corpus, order 5.
const NgramModel& a2_model() {
  static const NgramModel model = [] {
    SyntheticSpec spec;
    spec.seed = 202;
    spec.n_sentences = 100;
    const auto probe = synth_corpus(spec);
    std::size_t tokens = 0;
    for (const auto& s : probe) tokens += tokenize(s, Scheme::punct_split_lowercase).tokens.size();
    spec.n_sentences = static_cast<int>(std::ceil(100000.0 * 100.0 / static_cast<double>(tokens)));
    std::string text;
    for (const auto& s : synth_corpus(spec)) text += s + "\n";
    std::istringstream in(text);
    CountOptions o;
    o.order = 5;
    return train_model(in, o);
  }();
  return model;
}

std::vector<std::vector<std::string>> sampled_contexts(const NgramModel& model, std::size_t n, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.seed = seed;
  spec.n_sentences = static_cast<int>(n);
  Rng rng(derive_seed(seed, "contexts", 0));
  const auto lex = model.predictable();
  std::vector<std::vector<std::string>> out;
  for (const auto& s : synth_corpus(spec)) {
    auto toks = tokenize(s, Scheme::punct_split_lowercase).tokens;
    std::vector<std::string> padded(4, std::string(kBos));
    padded.insert(padded.end(), toks.begin(), toks.end());
    const std::size_t end = 4 + rng.below(toks.size());
    std::vector<std::string> ctx(padded.begin() + static_cast<std::ptrdiff_t>(end - 4),
                                 padded.begin() + static_cast<std::ptrdiff_t>(end));
    if (out.size() % 4 == 3) ctx[rng.below(4)] = lex[rng.below(lex.size())];  // some unseen histories
    if (out.size() % 10 == 9) ctx[3] = "never-seen-token";
    out.push_back(ctx);
  }
  return out;
}

Outcome a2_normalization() {
  const auto& model = a2_model();
  double worst = 0.0;
  const auto contexts = sampled_contexts(model, 200, 31);
  for (const auto& ctx : contexts) worst = std::max(worst, std::fabs(probability_mass(model, ctx) - 1.0));
  return {worst <= 1e-9 && contexts.size() == 200,
          std::to_string(contexts.size()) + " contexts, max |sum - 1| " + fmt(worst) + ", " +
              std::to_string(model.predictable().size()) + " predictable tokens"};
}

Outcome a3_arpa() {
  const auto& model = a2_model();
  std::stringstream arpa;
  write_arpa(model, arpa);
  const auto back = read_arpa(arpa);
  double worst = 0.0;
  std::size_t n = 0;
  const auto lex = model.predictable();
  for (const auto& ctx : sampled_contexts(model, 300, 47))
    for (const auto& w : lex) {
      const double a = log10_to_bits(model.log10_prob(w, ctx));
      const double b = log10_to_bits(back.log10_prob(w, ctx));
      worst = std::max(worst, std::fabs(a - b));
      ++n;
    }
  auto fixture = read_arpa(std::string(WORDPREF_TEST_DATA) + "/unigram.arpa");
  std::vector<std::string> none;
  const double bits = log10_to_bits(fixture.log10_prob("a", none));
  return {worst <= 1e-6 && bits == 1.0,
          std::to_string(n) + " queries, max |diff| " + fmt(worst) + " bits; fixture p(a) -> " + format_double(bits) +
              " bit"};
}

Outcome a4_algebra() {
  Experiment exp;
  exp.factors = {{"order", {"std", "shifted"}, FactorScope::within_item, true},
                 {"np_length", {"short", "long"}, FactorScope::within_item, false}};
  for (int i = 0; i < 25; ++i) {
    Item it;
    it.id = "i" + std::to_string(i);
    for (const auto& k : exp.condition_keys()) it.cells[k] = "w";
    exp.items.push_back(it);
  }
  ContrastSpec spec = synth_contrast();
  Rng rng(404);
  // Values and constants on a 1/256 grid, where additions are exact.
  auto draw = [&](double span) { return static_cast<double>(rng.below(static_cast<std::uint64_t>(span * 256))) / 256.0; };
  std::size_t mismatches = 0, compared = 0;
  for (int trial = 0; trial < 200; ++trial) {
    CellValues cells;
    cells.source_id = "m";
    cells.units = "bits";
    for (const auto& it : exp.items)
      for (const auto& k : exp.condition_keys()) cells.raw[{it.id, k}] = draw(120.0);
    const auto base = item_interactions(exp, cells, spec).items;

    CellValues shifted = cells;
    const double level_c = draw(30.0) - 15.0;
    for (auto& [key, v] : shifted.raw) {
      v += static_cast<double>(std::hash<std::string>{}(key.first) % 4096) / 256.0;  // per item
      if (key.second.ends_with("|long")) v += level_c;                            // per moderator level
      else v += static_cast<double>(std::hash<std::string>{}(key.first + "#") % 512) / 256.0;
    }
    const auto moved = item_interactions(exp, shifted, spec).items;
    for (std::size_t i = 0; i < base.size(); ++i, ++compared)
      if (base[i].value != moved[i].value) ++mismatches;

    auto p = preferences(exp, cells, spec, true);
    auto q = preferences(exp, cells, spec.swapped(), true);
    for (std::size_t i = 0; i < p.rows.size(); ++i, ++compared)
      if (p.rows[i].value != -q.rows[i].value) ++mismatches;
  }
  return {mismatches == 0, std::to_string(compared) + " exact comparisons, " + std::to_string(mismatches) + " mismatches"};
}

// ---------------------------------------------------------------------------
// A5: synth -> train -> score -> analyze through the command functions.

struct PipelineResult {
  double mean = std::numeric_limits<double>::quiet_NaN();
  double p_t = std::numeric_limits<double>::quiet_NaN();
  double p_perm = std::numeric_limits<double>::quiet_NaN();
  std::string analysis_dir;
  std::string error;
};

PipelineResult run_pipeline(const std::string& tag, std::uint64_t seed, double p_long, double p_short) {
  PipelineResult r;
  std::ostringstream sink, err;
  const std::string dir = wpath(tag);
  const std::string spec_path = wpath(tag + "_spec.json");
  nlohmann::json spec{{"seed", seed},           {"n_items", 40},          {"n_sentences", 50000},
                      {"p_shift_long", p_long}, {"p_shift_short", p_short}};
  write_file(spec_path, spec.dump());

  SynthArgs sa;
  sa.spec = spec_path;
  sa.out = dir + "/synth";
  TrainArgs ta;
  ta.corpus = dir + "/synth/corpus.txt";
  ta.order = 5;
  ta.out = dir + "/model.arpa";
  ScoreArgs sc;
  sc.experiment = dir + "/synth/experiment.json";
  sc.arpa = ta.out;
  sc.out = dir + "/ngram5.tsv";
  AnalyzeArgs an;
  an.experiment = sc.experiment;
  an.surprisals = {sc.out};
  an.spec = dir + "/synth/contrast.json";
  an.seed = seed;
  an.n_perm = 10000;
  an.out = dir + "/analysis";
  if (cmd_synth(sa, sink, err) || cmd_train(ta, sink, err) || cmd_score(sc, sink, err) || cmd_analyze(an, sink, err)) {
    r.error = err.str();
    return r;
  }
  auto j = nlohmann::json::parse(read_file(an.out + "/interaction_heavy_np_ngram5.json"));
  r.mean = j["mean"].get<double>();
  r.p_t = j["test"]["p"].get<double>();
  r.p_perm = j["p_perm"].get<double>();
  r.analysis_dir = an.out;
  return r;
}

std::string a5_dir;

Outcome a5_planted() {
  const auto start = std::chrono::steady_clock::now();
  auto planted = run_pipeline("planted", 1, 0.8, 0.1);
  if (!planted.error.empty()) return {false, "planted run failed: " + planted.error};
  a5_dir = planted.analysis_dir;
  const bool planted_ok = planted.mean > 0.0 && planted.p_t < 0.01 && planted.p_perm < 0.01;

  int calm = 0;
  double mean_sum = 0.0;
  for (int s = 0; s < 20; ++s) {
    auto null = run_pipeline("null" + std::to_string(s), 1000 + static_cast<std::uint64_t>(s), 0.5, 0.5);
    if (!null.error.empty()) return {false, "null run failed: " + null.error};
    if (null.p_perm >= 0.05) ++calm;
    mean_sum += null.mean;
    fs::remove_all(wpath("null" + std::to_string(s)));
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const bool ok = planted_ok && calm >= 18 && secs < 120.0;
  return {ok, "planted mean I " + fmt(planted.mean) + " bits, p_t " + fmt(planted.p_t) + ", p_perm " +
                  fmt(planted.p_perm) + "; null p_perm >= 0.05 in " + std::to_string(calm) +
                  "/20 seeds (mean I " + fmt(mean_sum / 20.0) + "); " + fmt(secs) + " s"};
}

Outcome a6_calibration() {
  SyntheticSpec spec;
  spec.n_sentences = 0;
  spec.base_surprisal = {{"std|short", 40.0}, {"shifted|short", 40.0}, {"std|long", 40.0}, {"shifted|long", 40.0}};
  spec.sources = {SyntheticSource{"noise", 0.0, 1.0}};
  int hits = 0;
  for (int r = 0; r < 200; ++r) {
    spec.seed = derive_seed(6, "perm-null", static_cast<std::uint64_t>(r));
    auto exp = synth_experiment(spec);
    auto t = synth_surprisals(spec, exp, 0);
    if (permutation_test(exp, t, synth_contrast(), 2000, spec.seed) < 0.05) ++hits;
  }
  const double fp = hits / 200.0;

  Rng rng(derive_seed(6, "coverage", 0));
  int covered = 0;
  for (int r = 0; r < 500; ++r) {
    std::vector<double> v(20);
    for (auto& x : v) x = 1.5 + 2.0 * rng.normal();
    auto ci = contrast_ci(v);
    if (ci.low <= 1.5 && 1.5 <= ci.high) ++covered;
  }
  const double coverage = covered / 500.0;

  std::vector<double> ramp{1.0, 2.0, 3.0};
  const double p = t_test_one_sample(ramp).p;
  const bool ok = fp >= 0.02 && fp <= 0.09 && coverage >= 0.93 && coverage <= 0.97 && std::fabs(p - 0.0742) <= 1e-3;
  return {ok, "permutation false-positive rate " + fmt(fp) + ", CI coverage " + fmt(coverage) + ", p{1,2,3} " +
                  format_double(p)};
}

Outcome a7_ratings() {
  SyntheticSpec spec;
  spec.seed = 77;
  spec.n_sentences = 0;
  SyntheticRatings r;
  r.n_low_accuracy = 9;
  r.n_nonnative = 0;
  spec.ratings = r;
  auto exp = synth_experiment(spec);
  auto rt = parse_ratings(ratings_csv(synth_ratings(spec, exp)), &exp);
  std::size_t below = 0;
  for (const auto& [id, info] : rt.subjects)
    if (info.comprehension_accuracy < 0.8) ++below;
  auto f = filter_subjects(rt, 0.8, true);
  bool ok = rt.subjects.size() == 64 && below == 9 && f.report.subjects_kept == 55;
  std::string detail = std::to_string(rt.subjects.size()) + " subjects, " + std::to_string(below) +
                       " below 0.8, retained " + std::to_string(f.report.subjects_kept);

  // preference fixtures
  Experiment one;
  one.factors = exp.factors;
  one.items = {exp.items[0]};
  const auto& id = one.items[0].id;
  ContrastSpec plain;
  plain.name = "order";
  plain.order_factor = "order";
  plain.base = "std";
  plain.variant = "shifted";
  plain.fixed["np_length"] = "short";
  RatingsTable equal;
  equal.subjects["s"] = {};
  for (const auto& k : one.condition_keys()) equal.rows.push_back({"s", id, k, 3});
  RatingsTable two;
  two.subjects["A"] = {};
  two.subjects["B"] = {};
  two.rows = {{"A", id, "std|short", 5}, {"A", id, "shifted|short", 2}, {"B", id, "std|short", 4}, {"B", id, "shifted|short", 3}};
  const double p0 = human_preferences(equal, one, plain).rows.at(0).value;
  const double p2 = human_preferences(two, one, plain).rows.at(0).value;
  ok = ok && p0 == 0.0 && p2 == -2.0;
  detail += "; fixtures " + format_double(p0) + " and " + format_double(p2);
  return {ok, detail};
}

Outcome a8_report() {
  if (a5_dir.empty()) return {false, "no A5 analysis to report on"};
  ReportArgs ra;
  ra.in = a5_dir;
  ra.out = wpath("report");
  std::ostringstream sink, err;
  if (cmd_report(ra, sink, err) != 0) return {false, "report failed: " + err.str()};

  auto rows = parse_csv(read_file(ra.out + "/report.csv"));
  bool ok = !rows.empty() && join(rows[0], ",") == kReportColumns && rows.size() == 3;
  std::map<std::pair<std::string, std::string>, double> csv_mean;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    double m = 0, lo = 0, hi = 0;
    long long n = 0;
    ok = ok && rows[i].size() == 8 && parse_double(rows[i][4], m) && parse_double(rows[i][5], lo) &&
         parse_double(rows[i][6], hi) && parse_int(rows[i][7], n) && lo <= m && m <= hi && n == 40;
    csv_mean[{rows[i][2], rows[i][0]}] = m;
  }
  std::unique_ptr<xmlcheck::Node> root;
  try {
    root = xmlcheck::parse(read_file(ra.out + "/heavy_np.svg"));
  } catch (const std::exception& e) {
    return {false, std::string("SVG not well-formed: ") + e.what()};
  }
  double zero = 0, scale = 0;
  for (const auto* g : root->all("g"))
    if (g->attrs.count("class") && g->attrs.at("class") == "plot") {
      zero = std::stod(g->attr("data-zero-y"));
      scale = std::stod(g->attr("data-px-per-unit"));
    }
  std::size_t bars = 0;
  double worst = 0.0;
  for (const auto* r : root->all("rect")) {
    if (!r->attrs.count("class") || r->attrs.at("class") != "bar") continue;
    ++bars;
    auto it = csv_mean.find({r->attr("data-group"), r->attr("data-source")});
    if (it == csv_mean.end() || scale <= 0) {
      ok = false;
      continue;
    }
    const double y = std::stod(r->attr("y")), h = std::stod(r->attr("height"));
    const double drawn = (y < zero - 1e-6 ? h : -h) / scale;
    worst = std::max(worst, std::fabs(drawn - it->second));
    double labelled = 0;
    ok = ok && parse_double(r->attr("data-value"), labelled) && labelled == it->second;
  }
  // Coordinates carry three decimals: half a thousandth of a pixel per edge.
  ok = ok && bars == csv_mean.size() && worst <= 1e-3 / scale;
  return {ok, std::to_string(rows.size() - 1) + " CSV rows, " + std::to_string(bars) +
                  " bars, max |bar - CSV| " + fmt(worst) + " units"};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"A1 KN oracle equivalence", a1_oracle},   {"A2 normalization", a2_normalization},
      {"A3 ARPA round-trip", a3_arpa},           {"A4 interaction algebra", a4_algebra},
      {"A5 planted effect end-to-end", a5_planted}, {"A6 statistical calibration", a6_calibration},
      {"A7 ratings pipeline", a7_ratings},       {"A8 figure pipeline", a8_report},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (std::string(name).starts_with("A1") && secs >= 5.0) o.pass = false;
    if (std::string(name).starts_with("A2") && secs >= 30.0) o.pass = false;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << " [" << fmt(secs) << " s]: " << o.detail << std::endl;
    if (!o.pass) ++failed;
  }
  fs::remove_all(work_dir());
  std::cout << (failed ? std::to_string(failed) + " criteria failed" : "all criteria passed") << std::endl;
  return failed ? 1 : 0;
}
