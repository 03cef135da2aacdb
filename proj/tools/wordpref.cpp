#include <CLI11.hpp>

#include <iostream>

#include "wordpref/commands.hpp"

using namespace wordpref;

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);

  CLI::App app{"Word-order preferences of language models and people"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train a modified Kneser-Ney n-gram model and write ARPA");
  t->add_option("--corpus", train.corpus, "Training text, one sentence per line")->required();
  t->add_option("--order", train.order, "N-gram order")->capture_default_str();
  t->add_option("--scheme", train.scheme, "Tokenization: punct-split+lowercase or whitespace")->capture_default_str();
  t->add_option("--min-count", train.min_count, "Rarer tokens become <unk>")->capture_default_str();
  t->add_option("--out", train.out, "ARPA output path")->required();

  ScoreArgs score;
  auto* s = app.add_subcommand("score", "Score every sentence of an experiment");
  s->add_option("--experiment", score.experiment, "Experiment JSON")->required();
  auto* arpa = s->add_option("--arpa", score.arpa, "Native n-gram model");
  auto* file = s->add_option("--external-file", score.external_file, "Precomputed surprisal TSV");
  auto* cmd = s->add_option("--external-cmd", score.external_cmd, "Scorer command speaking the line protocol");
  arpa->excludes(file)->excludes(cmd);
  file->excludes(cmd);
  s->add_option("--backend-id", score.backend_id, "Backend id recorded in the output");
  s->add_flag("--include-eos,!--no-include-eos", score.include_eos, "Add the end-of-sentence term (default on)");
  s->add_flag("--strip-final-punct", score.strip_final_punct, "Drop sentence-final punctuation before scoring");
  s->add_option("--threads", score.threads, "Worker threads")->capture_default_str();
  s->add_option("--out", score.out, "Surprisal TSV output path")->required();

  AnalyzeArgs analyze;
  auto* a = app.add_subcommand("analyze", "Preferences, interactions and comparisons");
  a->add_option("--experiment", analyze.experiment, "Experiment JSON")->required();
  a->add_option("--surprisals", analyze.surprisals, "Surprisal TSV files, one per source");
  a->add_option("--ratings", analyze.ratings, "Human ratings CSV");
  a->add_option("--spec", analyze.spec, "Contrast spec JSON")->required();
  a->add_option("--seed", analyze.seed, "Master seed")->capture_default_str();
  a->add_option("--n-perm", analyze.n_perm, "Permutation replicates (0 skips the test)")->capture_default_str();
  a->add_option("--level", analyze.level, "Confidence level")->capture_default_str();
  a->add_option("--min-accuracy", analyze.min_accuracy, "Comprehension accuracy needed to keep a subject")
      ->capture_default_str();
  a->add_flag("--require-native,!--allow-nonnative", analyze.require_native, "Keep native speakers only (default on)");
  a->add_option("--threads", analyze.threads, "Worker threads")->capture_default_str();
  a->add_option("--out", analyze.out, "Output directory")->required();

  ReportArgs report;
  auto* r = app.add_subcommand("report", "Figure CSV and SVG from an analysis directory");
  r->add_option("--in", report.in, "Analysis directory")->required();
  r->add_option("--out", report.out, "Output directory")->required();
  r->add_option("--format", report.format, "Comma-separated: csv, svg")->capture_default_str();

  SynthArgs synth;
  std::uint64_t synth_seed = 0;
  auto* y = app.add_subcommand("synth", "Synthetic corpus, experiment, surprisals and ratings");
  y->add_option("--spec", synth.spec, "Synthetic spec JSON (defaults when omitted)");
  auto* seed_opt = y->add_option("--seed", synth_seed, "Overrides the spec seed");
  y->add_option("--out", synth.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  if (*t) {
    train.argv = args;
    return cmd_train(train);
  }
  if (*s) {
    score.argv = args;
    return cmd_score(score);
  }
  if (*a) {
    analyze.argv = args;
    return cmd_analyze(analyze);
  }
  if (*r) {
    report.argv = args;
    return cmd_report(report);
  }
  if (*y) {
    synth.argv = args;
    if (*seed_opt) synth.seed = synth_seed;
    return cmd_synth(synth);
  }
  return kExitUsage;
}
