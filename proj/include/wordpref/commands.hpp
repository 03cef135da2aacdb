#pragma once

// Subcommands of the wordpref tool. Each returns a process exit status:
// 0 success, 1 data or validation error, 2 usage error, 3 internal error.

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "wordpref/analysis.hpp"
#include "wordpref/contrast.hpp"
#include "wordpref/error.hpp"
#include "wordpref/manifest.hpp"
#include "wordpref/ngram.hpp"
#include "wordpref/ratings.hpp"
#include "wordpref/report.hpp"
#include "wordpref/scoring.hpp"
#include "wordpref/stimuli.hpp"
#include "wordpref/synth.hpp"
#include "wordpref/util.hpp"

namespace wordpref {

namespace fs = std::filesystem;

enum ExitCode : int { kExitOk = 0, kExitData = 1, kExitUsage = 2, kExitInternal = 3 };

inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const UsageError*>(&e)) return kExitUsage;
  if (dynamic_cast<const ParseError*>(&e) || dynamic_cast<const SchemaError*>(&e) ||
      dynamic_cast<const ValidationError*>(&e) || dynamic_cast<const ProtocolError*>(&e) ||
      dynamic_cast<const BackendError*>(&e) || dynamic_cast<const IoError*>(&e) ||
      dynamic_cast<const InsufficientData*>(&e))
    return kExitData;
  return kExitInternal;
}

inline int guarded(const char* command, std::ostream& err, const std::function<void()>& body) {
  try {
    body();
    return kExitOk;
  } catch (const std::exception& e) {
    const int code = exit_code_for(e);
    err << "wordpref " << command << ": " << (code == kExitInternal ? "internal error: " : "error: ") << e.what()
        << '\n';
    return code;
  }
}

// Ids become parts of file names.
inline std::string file_safe(std::string_view s) {
  std::string out;
  for (char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '.') ? c : '_';
  return out.empty() ? "_" : out;
}

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory: " + dir);
}

inline std::string join_path(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string corpus;
  int order = 5;
  std::string scheme = "punct-split+lowercase";
  long long min_count = 1;
  std::string out;
  std::vector<std::string> argv;
};

inline int cmd_train(const TrainArgs& a, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return guarded("train", err, [&] {
    if (a.order < 1) throw UsageError("--order must be at least 1");
    if (a.min_count < 1) throw UsageError("--min-count must be at least 1");
    if (a.corpus.empty() || a.out.empty()) throw UsageError("train needs --corpus and --out");
    RunManifest m;
    m.command = "train";
    m.arguments = a.argv;
    m.started = utc_timestamp();
    CountOptions opt;
    opt.order = a.order;
    opt.scheme = parse_scheme(a.scheme);
    opt.min_count = static_cast<std::uint64_t>(a.min_count);
    auto counts = count_ngrams_file(a.corpus, opt);
    if (counts.empty()) throw ValidationError("empty corpus: " + a.corpus);
    auto discounts = estimate_discounts(counts);
    for (const auto& w : discounts.warnings) err << "warning: " << w << '\n';
    auto model = build_model(counts, discounts);
    write_arpa(model, a.out);

    out << "vocabulary size: " << model.lexicon().size() << '\n';
    for (int k = 1; k <= model.order(); ++k) out << k << "-grams: " << model.table(k).size() << '\n';

    m.add_input(a.corpus);
    m.add_output(a.out);
    m.scheme_id = model.scheme_id();
    m.extra["order"] = a.order;
    m.extra["min_count"] = a.min_count;
    auto dj = nlohmann::ordered_json::array();
    for (int k = 1; k <= model.order(); ++k) {
      const auto& d = discounts.at_order(k);
      dj.push_back({{"order", k}, {"d1", d.d1}, {"d2", d.d2}, {"d3plus", d.d3plus}, {"fallback", d.fallback}});
    }
    m.extra["discounts"] = dj;
    m.finished = utc_timestamp();
    write_manifest(a.out + ".manifest.json", m);
  });
}

// ---------------------------------------------------------------------------
// score

struct ScoreArgs {
  std::string experiment;
  std::string arpa;
  std::string external_file;
  std::string external_cmd;
  std::string backend_id;  // default derived from the backend
  bool include_eos = true;
  bool strip_final_punct = false;
  unsigned threads = 1;
  std::string out;
  std::vector<std::string> argv;
};

inline void require_clean(const Experiment& exp, const std::string& path) {
  auto rep = validate(exp);
  if (rep.is_clean()) return;
  std::string msg = path + ": experiment is not clean:";
  std::size_t shown = 0;
  for (const auto& f : rep.findings) {
    if (shown++ == 5) {
      msg += " ...";
      break;
    }
    msg += " [" + f.item_id + (f.cell_key.empty() ? "" : " " + f.cell_key) + ": " + f.message + "]";
  }
  throw SchemaError(msg);
}

inline int cmd_score(const ScoreArgs& a, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return guarded("score", err, [&] {
    const int chosen = !a.arpa.empty() + !a.external_file.empty() + !a.external_cmd.empty();
    if (chosen != 1) throw UsageError("score needs exactly one of --arpa, --external-file, --external-cmd");
    if (a.experiment.empty() || a.out.empty()) throw UsageError("score needs --experiment and --out");
    if (a.threads < 1) throw UsageError("--threads must be at least 1");
    RunManifest m;
    m.command = "score";
    m.arguments = a.argv;
    m.started = utc_timestamp();
    auto exp = load_experiment(a.experiment);
    require_clean(exp, a.experiment);
    m.add_input(a.experiment);

    ScoreOptions opt;
    opt.threads = a.threads;
    opt.strip_final_punct = a.strip_final_punct;
    ScoringRun run;
    if (!a.arpa.empty()) {
      auto model = std::make_shared<const NgramModel>(read_arpa(a.arpa));
      const std::string id = a.backend_id.empty() ? "ngram" + std::to_string(model->order()) : a.backend_id;
      NativeNgramBackend backend(model, id, a.include_eos);
      run = score_experiment(backend, exp, opt);
      m.add_input(a.arpa);
    } else if (!a.external_cmd.empty()) {
      ExternalProcessBackend backend(a.external_cmd, a.backend_id.empty() ? "external" : a.backend_id,
                                     a.include_eos);
      run = score_experiment(backend, exp, opt);
      m.extra["external_cmd"] = a.external_cmd;
    } else {
      run.started = utc_timestamp();
      run.table = ingest_external_file(a.external_file, exp);
      if (!a.backend_id.empty() && a.backend_id != run.table.backend_id)
        throw SchemaError("surprisal file declares backend_id '" + run.table.backend_id + "', not '" +
                          a.backend_id + "'");
      run.scheme_id = "external";
      run.finished = utc_timestamp();
      m.add_input(a.external_file);
    }

    std::ofstream f(a.out, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write file: " + a.out);
    write_surprisal_table(f, run.table);
    f.close();
    if (!f) throw IoError("write failed: " + a.out);

    out << "scored " << run.table.rows.size() << " sentences with backend '" << run.table.backend_id << "'\n";
    m.backend_ids = {run.table.backend_id};
    m.scheme_id = run.scheme_id;
    m.extra["eos_included"] = run.table.eos_included;
    if (run.coverage) {
      out << "OOV tokens: " << run.coverage->oov_tokens << " of " << run.coverage->total_tokens << '\n';
      auto oov = nlohmann::ordered_json::array();
      for (const auto& c : run.coverage->cells)
        if (!c.oov.empty()) oov.push_back({{"item_id", c.item_id}, {"condition_key", c.cell_key}, {"oov", c.oov}});
      m.extra["oov"] = {{"tokens", run.coverage->total_tokens}, {"oov_tokens", run.coverage->oov_tokens},
                        {"cells", oov}};
    }
    m.add_output(a.out);
    m.started = run.started;
    m.finished = run.finished;
    write_manifest(a.out + ".manifest.json", m);
  });
}

// ---------------------------------------------------------------------------
// analyze

struct AnalyzeArgs {
  std::string experiment;
  std::vector<std::string> surprisals;
  std::string ratings;
  std::string spec;
  std::uint64_t seed = 0;
  int n_perm = 10000;
  double level = 0.95;
  double min_accuracy = 0.8;
  bool require_native = true;
  unsigned threads = 1;
  std::string out;
  std::vector<std::string> argv;
};

namespace detail {

inline std::string preference_csv(const PreferenceTable& pt, const ContrastSpec& spec) {
  std::ostringstream s;
  std::vector<std::string> level_cols;
  if (spec.moderator) level_cols.push_back(spec.moderator->factor);
  if (spec.grouping) level_cols.push_back(*spec.grouping);
  s << "source,item_id";
  for (const auto& c : level_cols) s << ',' << csv_field(c);
  s << ",contrast,preference\n";
  for (const auto& r : pt.rows) {
    s << csv_field(r.source_id) << ',' << csv_field(r.item_id);
    for (const auto& c : level_cols) {
      auto f = r.levels.find(c);
      s << ',' << (f == r.levels.end() ? "" : csv_field(f->second));
    }
    s << ',' << csv_field(r.contrast) << ',' << format_double(r.value) << '\n';
  }
  return s.str();
}

struct Source {
  std::string id;
  CellValues cells;
  bool human = false;
};

}  // namespace detail

inline int cmd_analyze(const AnalyzeArgs& a, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return guarded("analyze", err, [&] {
    if (a.experiment.empty() || a.spec.empty() || a.out.empty())
      throw UsageError("analyze needs --experiment, --spec and --out");
    if (a.surprisals.empty() && a.ratings.empty()) throw UsageError("analyze needs --surprisals and/or --ratings");
    if (a.n_perm < 0) throw UsageError("--n-perm must be non-negative");
    if (!(a.level > 0.0 && a.level < 1.0)) throw UsageError("--level must lie in (0, 1)");
    if (a.threads < 1) throw UsageError("--threads must be at least 1");

    RunManifest m;
    m.command = "analyze";
    m.arguments = a.argv;
    m.started = utc_timestamp();
    m.seed = a.seed;
    auto exp = load_experiment(a.experiment);
    m.add_input(a.experiment);
    auto specs = load_contrast_specs(a.spec);
    m.add_input(a.spec);
    for (const auto& s : specs) check_contrast(exp, s);

    std::vector<detail::Source> sources;
    std::set<std::string> ids;
    std::string scheme_note;
    for (const auto& path : a.surprisals) {
      auto table = ingest_external_file(path, exp);
      if (table.backend_id == "human" || !ids.insert(table.backend_id).second)
        throw SchemaError("incompatible surprisal tables: backend_id '" + table.backend_id + "' is used twice");
      m.add_input(path);
      m.backend_ids.push_back(table.backend_id);
      sources.push_back({table.backend_id, cells_from_surprisal(table), false});
    }

    ensure_dir(a.out);
    nlohmann::ordered_json summary;
    summary["analysis"] = kAnalysisTag;
    summary["experiment"] = exp.name;
    summary["backend_ids"] = m.backend_ids;
    summary["seed"] = a.seed;
    summary["n_perm"] = a.n_perm;
    summary["level"] = a.level;

    std::vector<std::string> written;
    auto emit = [&](const std::string& name, const std::string& content) {
      const auto path = join_path(a.out, name);
      write_file(path, content);
      written.push_back(path);
    };

    if (!a.ratings.empty()) {
      auto rt = load_ratings(a.ratings, &exp);
      m.add_input(a.ratings);
      auto filtered = filter_subjects(rt, a.min_accuracy, a.require_native);
      const auto& rep = filtered.report;
      out << "ratings: kept " << rep.subjects_kept << " of " << rep.subjects_in << " subjects (" << rep.rows_retained
          << " of " << rep.rows_in << " ratings)\n";
      nlohmann::ordered_json fj{{"min_accuracy", rep.min_accuracy},
                                {"require_native", rep.require_native},
                                {"subjects_in", rep.subjects_in},
                                {"subjects_kept", rep.subjects_kept},
                                {"subjects_dropped", rep.subjects_dropped},
                                {"rows_in", rep.rows_in},
                                {"rows_retained", rep.rows_retained},
                                {"rows_dropped", rep.rows_dropped},
                                {"dropped_subjects", rep.dropped_subjects}};
      emit("ratings_filter.json", fj.dump(2) + "\n");
      summary["ratings_filter"] = fj;
      if (rep.subjects_kept == 0)
        throw ValidationError("no subjects retained after filtering (min accuracy " + format_double(a.min_accuracy) +
                              (a.require_native ? ", native speakers only)" : ")"));
      sources.push_back({"human", cells_from_ratings(filtered.table), true});
    }

    auto contrasts = nlohmann::ordered_json::array();
    auto figures = nlohmann::ordered_json::array();
    for (const auto& spec : specs) {
      nlohmann::ordered_json cj;
      cj["spec"] = to_json(spec);
      auto results = nlohmann::ordered_json::array();
      auto stratified = nlohmann::ordered_json::array();
      std::vector<InteractionResult> model_results;
      FigureData model_fig{spec.name, spec.name + ": " + spec.label(), "bits", {}};
      FigureData human_fig{spec.name + "_human", spec.name + " (human ratings): " + spec.label(), "rating", {}};

      // Strata for bar charts: one pass over all items, or one per grouping level.
      struct Part {
        std::string level;
        Experiment exp;
        ContrastSpec spec;
      };
      std::vector<Part> parts;
      if (spec.grouping) {
        const Factor& g = exp.factor(*spec.grouping);
        for (const auto& level : g.levels) {
          Part p{level, exp, spec};
          p.spec.grouping.reset();
          if (g.scope == FactorScope::within_item) {
            p.spec.fixed[g.name] = level;
          } else {
            p.exp.items.clear();
            for (const auto& it : exp.items)
              if (auto f = it.group_levels.find(g.name); f != it.group_levels.end() && f->second == level)
                p.exp.items.push_back(it);
          }
          parts.push_back(std::move(p));
        }
      } else {
        parts.push_back({"all", exp, spec});
      }

      for (const auto& src : sources) {
        const std::string stem = file_safe(spec.name) + "_" + file_safe(src.id);
        auto prefs = preferences(exp, src.cells, spec, !src.human);
        emit("preferences_" + stem + ".csv", detail::preference_csv(prefs, spec));
        auto& fig = src.human ? human_fig : model_fig;
        for (const auto& p : parts) {
          auto pp = preferences(p.exp, src.cells, p.spec, !src.human);
          auto bars = summarize_preferences(pp, p.spec, src.id, fig.name, p.level, a.level);
          fig.bars.insert(fig.bars.end(), bars.begin(), bars.end());
        }
        if (!spec.moderator) continue;

        InteractionOptions opt;
        opt.level = a.level;
        opt.n_perm = a.n_perm;
        opt.seed = derive_seed(a.seed, "interaction:" + spec.name + ":" + src.id);
        opt.threads = a.threads;
        auto res = interaction(exp, src.cells, spec, opt);
        auto rj = to_json(res);
        emit("interaction_" + stem + ".json", rj.dump(2) + "\n");
        results.push_back(rj);
        out << spec.name << " [" << src.id << "] mean I = " << format_double(res.mean) << ' ' << res.units;
        if (res.ci) out << ", CI [" << format_double(res.ci->low) << ", " << format_double(res.ci->high) << "]";
        if (res.test) out << ", t(" << res.test->df << ") = " << format_double(res.test->t) << ", p = " << res.test->p;
        if (res.p_perm) out << ", p_perm = " << *res.p_perm;
        if (res.insufficient_items) out << " (insufficient items)";
        out << ", n = " << res.n_items() << '\n';
        if (!src.human) model_results.push_back(std::move(res));

        if (spec.grouping) {
          auto sr = stratified_interaction(exp, src.cells, spec, opt);
          auto sj = to_json(sr);
          sj["source_id"] = src.id;
          emit("stratified_" + stem + ".json", sj.dump(2) + "\n");
          stratified.push_back(sj);
        }
      }

      auto comps = nlohmann::ordered_json::array();
      for (std::size_t i = 0; i < model_results.size(); ++i)
        for (std::size_t k = i + 1; k < model_results.size(); ++k) {
          const auto& ra = model_results[i];
          const auto& rb = model_results[k];
          nlohmann::ordered_json mj;
          try {
            mj = to_json(compare_models(ra, rb, a.level));
          } catch (const InsufficientData& e) {
            mj = {{"source_a", ra.source_id}, {"source_b", rb.source_id}, {"error", e.what()}};
          }
          emit("comparison_" + file_safe(spec.name) + "_" + file_safe(ra.source_id) + "_vs_" +
                   file_safe(rb.source_id) + ".json",
               mj.dump(2) + "\n");
          comps.push_back(mj);
        }
      cj["interactions"] = results;
      cj["comparisons"] = comps;
      if (spec.grouping) cj["stratified"] = stratified;
      contrasts.push_back(cj);
      if (!model_fig.bars.empty()) figures.push_back(to_json(model_fig));
      if (!human_fig.bars.empty()) figures.push_back(to_json(human_fig));
    }
    summary["contrasts"] = contrasts;
    summary["figures"] = figures;
    emit("analysis.json", summary.dump(2) + "\n");

    for (const auto& p : written) m.add_output(p);
    m.extra["analysis"] = kAnalysisTag;
    m.extra["n_perm"] = a.n_perm;
    m.finished = utc_timestamp();
    write_manifest(join_path(a.out, "manifest.json"), m);
  });
}

// ---------------------------------------------------------------------------
// report

struct ReportArgs {
  std::string in;
  std::string out;
  std::string format = "csv,svg";
  std::vector<std::string> argv;
};

inline std::vector<FigureData> load_figures(const std::string& dir) {
  if (!fs::is_directory(dir)) throw IoError("analysis dir does not exist: " + dir);
  if (fs::is_empty(dir)) throw ValidationError("empty analysis dir: " + dir);
  const auto path = join_path(dir, "analysis.json");
  if (!fs::exists(path)) throw ValidationError("analysis dir has no analysis.json: " + dir);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  std::vector<FigureData> figs;
  if (j.contains("figures"))
    for (const auto& f : j["figures"]) figs.push_back(figure_from_json(f));
  if (figs.empty()) throw ValidationError("analysis has no figure data: " + path);
  return figs;
}

inline int cmd_report(const ReportArgs& a, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return guarded("report", err, [&] {
    if (a.in.empty() || a.out.empty()) throw UsageError("report needs --in and --out");
    bool csv = false, svg = false;
    for (auto f : split_on(a.format, ',')) {
      f = trim(f);
      if (f == "csv") csv = true;
      else if (f == "svg") svg = true;
      else throw UsageError("unknown report format '" + std::string(f) + "'");
    }
    if (!csv && !svg) throw UsageError("--format names no output");
    RunManifest m;
    m.command = "report";
    m.arguments = a.argv;
    m.started = utc_timestamp();
    auto figs = load_figures(a.in);
    m.add_input(join_path(a.in, "analysis.json"));
    ensure_dir(a.out);
    if (csv) {
      const auto path = join_path(a.out, "report.csv");
      write_file(path, report_csv(figs));
      m.add_output(path);
      out << "wrote " << path << '\n';
    }
    if (svg)
      for (const auto& f : figs) {
        const auto path = join_path(a.out, file_safe(f.name) + ".svg");
        write_file(path, render_svg(f));
        m.add_output(path);
        out << "wrote " << path << '\n';
      }
    m.finished = utc_timestamp();
    write_manifest(join_path(a.out, "manifest.json"), m);
  });
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
  std::string spec;  // optional; defaults otherwise
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> argv;
};

inline int cmd_synth(const SynthArgs& a, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return guarded("synth", err, [&] {
    if (a.out.empty()) throw UsageError("synth needs --out");
    RunManifest m;
    m.command = "synth";
    m.arguments = a.argv;
    m.started = utc_timestamp();
    SyntheticSpec spec;
    if (!a.spec.empty()) {
      spec = parse_synthetic_spec(read_file(a.spec));
      m.add_input(a.spec);
    }
    if (a.seed) spec.seed = *a.seed;
    check_synthetic_spec(spec);
    m.seed = spec.seed;
    ensure_dir(a.out);
    auto emit = [&](const std::string& name, const std::string& content) {
      const auto path = join_path(a.out, name);
      write_file(path, content);
      m.add_output(path);
    };

    emit("synth_spec.json", to_json(spec).dump(2) + "\n");
    if (spec.n_sentences > 0) {
      std::string corpus;
      for (const auto& s : synth_corpus(spec)) corpus += s + "\n";
      emit("corpus.txt", corpus);
    }
    auto exp = synth_experiment(spec);
    emit("experiment.json", serialize_experiment(exp));
    emit("contrast.json", to_json(synth_contrast()).dump(2) + "\n");
    for (std::size_t i = 0; i < spec.sources.size(); ++i) {
      std::ostringstream tsv;
      write_surprisal_table(tsv, synth_surprisals(spec, exp, i));
      emit("surprisals_" + file_safe(spec.sources[i].backend_id) + ".tsv", tsv.str());
      m.backend_ids.push_back(spec.sources[i].backend_id);
    }
    if (spec.ratings) emit("ratings.csv", ratings_csv(synth_ratings(spec, exp)));
    out << "wrote synthetic data for " << spec.n_items << " items";
    if (spec.n_sentences > 0) out << " and a " << spec.n_sentences << "-sentence corpus";
    out << " to " << a.out << '\n';
    m.scheme_id = std::string(scheme_id(Scheme::punct_split_lowercase));
    m.finished = utc_timestamp();
    write_manifest(join_path(a.out, "manifest.json"), m);
  });
}

}  // namespace wordpref
