#pragma once

// Per-token and per-sentence surprisal under interchangeable backends, the
// external surprisal TSV format and the line-delimited scorer protocol.

#include <fcntl.h>
#include <signal.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ctime>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "wordpref/error.hpp"
#include "wordpref/ngram.hpp"
#include "wordpref/stimuli.hpp"
#include "wordpref/util.hpp"

namespace wordpref {

enum class BackendKind { native_ngram, external_file, external_process };

inline std::string_view to_string(BackendKind k) {
  switch (k) {
    case BackendKind::native_ngram: return "native-ngram";
    case BackendKind::external_file: return "external-file";
    case BackendKind::external_process: return "external-process";
  }
  return "?";
}

// `<item_id>::<condition_key>`
inline std::string sentence_id(std::string_view item_id, std::string_view condition_key) {
  return std::string(item_id) + "::" + std::string(condition_key);
}

inline std::pair<std::string, std::string> split_sentence_id(std::string_view sid) {
  auto pos = sid.rfind("::");
  if (pos == std::string_view::npos)
    throw SchemaError("sentence id '" + std::string(sid) + "' is not <item_id>::<condition_key>");
  return {std::string(sid.substr(0, pos)), std::string(sid.substr(pos + 2))};
}

struct PerTokenSurprisals {
  std::string sentence_id;
  std::vector<std::string> tokens;
  std::vector<double> surprisal_bits;
  bool operator==(const PerTokenSurprisals&) const = default;
};

// Sum in token order; the order is part of the contract so totals are
// reproducible to the last bit.
inline double total_surprisal(const PerTokenSurprisals& pts) {
  double total = 0.0;
  for (double s : pts.surprisal_bits) total += s;
  return total;
}

inline double total_surprisal(std::span<const double> bits) {
  double total = 0.0;
  for (double s : bits) total += s;
  return total;
}

// Values must be finite, non-negative and aligned with the tokens.
inline void validate_surprisals(const PerTokenSurprisals& pts) {
  if (pts.tokens.size() != pts.surprisal_bits.size())
    throw ProtocolError("sentence '" + pts.sentence_id + "': " + std::to_string(pts.tokens.size()) +
                        " tokens but " + std::to_string(pts.surprisal_bits.size()) +
                        " surprisal values");
  for (std::size_t i = 0; i < pts.surprisal_bits.size(); ++i) {
    const double v = pts.surprisal_bits[i];
    if (!std::isfinite(v))
      throw ProtocolError("sentence '" + pts.sentence_id + "' token " + std::to_string(i) +
                          ": non-finite surprisal");
    if (v < 0.0)
      throw ProtocolError("sentence '" + pts.sentence_id + "' token " + std::to_string(i) +
                          ": negative surprisal " + format_double(v));
  }
}

inline double log10_to_bits(double log10_prob) {
  return std::max(0.0, -log10_prob / std::log10(2.0));
}

// ---------------------------------------------------------------------------
// backends

class ScoringBackend {
 public:
  virtual ~ScoringBackend() = default;
  virtual const std::string& backend_id() const = 0;
  virtual BackendKind kind() const = 0;
  virtual bool eos_included() const = 0;
  // Tokenization scheme for native backends; "external" otherwise.
  virtual std::string scheme_id() const { return "external"; }
  // Safe to call score() concurrently.
  virtual bool concurrent() const { return false; }
  virtual PerTokenSurprisals score(std::string_view sentence_id, std::string_view text) = 0;
};

class NativeNgramBackend final : public ScoringBackend {
 public:
  NativeNgramBackend(std::shared_ptr<const NgramModel> model, std::string backend_id,
                     bool include_eos = true)
      : model_(std::move(model)), id_(std::move(backend_id)), include_eos_(include_eos),
        scheme_(parse_scheme(model_->scheme_id())) {}

  const std::string& backend_id() const override { return id_; }
  BackendKind kind() const override { return BackendKind::native_ngram; }
  bool eos_included() const override { return include_eos_; }
  std::string scheme_id() const override { return model_->scheme_id(); }
  bool concurrent() const override { return true; }
  const NgramModel& model() const { return *model_; }

  PerTokenSurprisals score(std::string_view sid, std::string_view text) override {
    PerTokenSurprisals out;
    out.sentence_id = std::string(sid);
    out.tokens = tokenize(text, scheme_).tokens;
    std::vector<std::string> context(static_cast<std::size_t>(model_->order() - 1),
                                     std::string(kBos));
    for (const auto& tok : out.tokens) {
      out.surprisal_bits.push_back(log10_to_bits(model_->log10_prob(tok, context)));
      if (!context.empty()) {
        context.erase(context.begin());
        context.push_back(tok);
      }
    }
    if (include_eos_) {
      out.surprisal_bits.push_back(log10_to_bits(model_->log10_prob(kEos, context)));
      out.tokens.emplace_back(kEos);
    }
    return out;
  }

 private:
  std::shared_ptr<const NgramModel> model_;
  std::string id_;
  bool include_eos_;
  Scheme scheme_;
};

// ---------------------------------------------------------------------------
// external surprisal TSV

inline constexpr std::string_view kTsvColumns = "sentence_id\ttoken_index\ttoken\tsurprisal_bits";

namespace detail {

inline std::string escape_field(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (c == '\\') out += "\\\\";
    else if (c == '\t') out += "\\t";
    else if (c == '\n') out += "\\n";
    else if (c == '\r') out += "\\r";
    else out += c;
  }
  return out;
}

inline std::string unescape_field(std::string_view s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '\\' && i + 1 < s.size()) {
      char n = s[++i];
      out += n == 't' ? '\t' : n == 'n' ? '\n' : n == 'r' ? '\r' : n;
    } else {
      out += s[i];
    }
  }
  return out;
}

}  // namespace detail

struct SurprisalFile {
  std::string backend_id;
  bool eos_included = false;
  std::vector<PerTokenSurprisals> sentences;  // file order
};

// Parses the external surprisal TSV. Checks the header, contiguous token
// indices and the value range; experiment coverage is checked by the
// ingester.
inline SurprisalFile parse_surprisal_tsv(std::istream& in, const std::string& origin = "<tsv>") {
  SurprisalFile file;
  std::string line;
  std::size_t lineno = 0;
  auto where = [&] { return origin + ":" + std::to_string(lineno) + ": "; };
  bool have_meta = false, have_columns = false;
  std::map<std::string, std::size_t> index;  // sentence id -> position
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      for (const auto& kv : split_whitespace(std::string_view(line).substr(1))) {
        auto eq = kv.find('=');
        if (eq == std::string::npos) continue;
        auto key = kv.substr(0, eq), val = kv.substr(eq + 1);
        if (key == "backend_id") file.backend_id = val;
        if (key == "eos_included") {
          if (val != "true" && val != "false")
            throw ParseError(where() + "eos_included must be true or false");
          file.eos_included = val == "true";
          have_meta = true;
        }
      }
      continue;
    }
    if (!have_columns) {
      if (line != kTsvColumns)
        throw ParseError(where() + "expected column header '" + std::string(kTsvColumns) + "'");
      have_columns = true;
      continue;
    }
    auto f = split_on(line, '\t');
    if (f.size() != 4) throw ParseError(where() + "expected 4 tab-separated fields");
    std::string sid = detail::unescape_field(f[0]);
    long long idx = 0;
    if (!parse_int(f[1], idx) || idx < 0) throw ParseError(where() + "bad token_index '" + std::string(f[1]) + "'");
    double bits = 0.0;
    if (!parse_double(f[3], bits)) throw ParseError(where() + "non-numeric surprisal '" + std::string(f[3]) + "'");
    if (!std::isfinite(bits)) throw ValidationError(where() + "non-finite surprisal for '" + sid + "'");
    if (bits < 0.0) throw ValidationError(where() + "negative surprisal " + std::string(f[3]) + " for '" + sid + "'");

    auto it = index.find(sid);
    if (it == index.end()) {
      if (idx != 0)
        throw ValidationError(where() + "token-count mismatch for '" + sid +
                              "': first token_index is " + std::to_string(idx));
      index.emplace(sid, file.sentences.size());
      file.sentences.push_back({sid, {}, {}});
      it = index.find(sid);
    } else if (it->second + 1 != file.sentences.size()) {
      throw ValidationError(where() + "duplicate cell '" + sid + "' (rows are not contiguous)");
    }
    auto& pts = file.sentences[it->second];
    if (static_cast<std::size_t>(idx) != pts.tokens.size()) {
      if (static_cast<std::size_t>(idx) < pts.tokens.size())
        throw ValidationError(where() + "duplicate cell '" + sid + "' (token_index " +
                              std::to_string(idx) + " repeated)");
      throw ValidationError(where() + "token-count mismatch for '" + sid + "': token_index " +
                            std::to_string(idx) + " after " + std::to_string(pts.tokens.size()) +
                            " tokens");
    }
    pts.tokens.push_back(detail::unescape_field(f[2]));
    pts.surprisal_bits.push_back(bits);
  }
  if (!have_columns) throw ParseError(origin + ": missing column header");
  if (!have_meta) throw ParseError(origin + ": missing '#backend_id=... eos_included=...' header");
  if (file.backend_id.empty()) throw ParseError(origin + ": empty backend_id");
  return file;
}

inline void write_surprisal_tsv(std::ostream& out, const std::string& backend_id, bool eos_included,
                                std::span<const PerTokenSurprisals> sentences) {
  out << "#backend_id=" << backend_id << " eos_included=" << (eos_included ? "true" : "false")
      << '\n';
  out << kTsvColumns << '\n';
  for (const auto& pts : sentences)
    for (std::size_t i = 0; i < pts.tokens.size(); ++i)
      out << detail::escape_field(pts.sentence_id) << '\t' << i << '\t'
          << detail::escape_field(pts.tokens[i]) << '\t' << format_double(pts.surprisal_bits[i])
          << '\n';
}

class ExternalFileBackend final : public ScoringBackend {
 public:
  explicit ExternalFileBackend(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open surprisal file: " + path);
    file_ = parse_surprisal_tsv(in, path);
    for (std::size_t i = 0; i < file_.sentences.size(); ++i)
      by_id_.emplace(file_.sentences[i].sentence_id, i);
  }

  const std::string& backend_id() const override { return file_.backend_id; }
  BackendKind kind() const override { return BackendKind::external_file; }
  bool eos_included() const override { return file_.eos_included; }
  bool concurrent() const override { return true; }
  const SurprisalFile& file() const { return file_; }

  PerTokenSurprisals score(std::string_view sid, std::string_view) override {
    auto it = by_id_.find(std::string(sid));
    if (it == by_id_.end())
      throw SchemaError("surprisal file has no rows for missing cell '" + std::string(sid) + "'");
    return file_.sentences[it->second];
  }

 private:
  SurprisalFile file_;
  std::map<std::string, std::size_t> by_id_;
};

// ---------------------------------------------------------------------------
// external process protocol

inline std::string protocol_request(std::string_view sid, std::string_view text) {
  nlohmann::json j;
  j["id"] = sid;
  j["text"] = text;
  return j.dump();
}

inline std::string protocol_response(const PerTokenSurprisals& pts) {
  nlohmann::json j;
  j["id"] = pts.sentence_id;
  j["tokens"] = pts.tokens;
  j["surprisal_bits"] = pts.surprisal_bits;
  return j.dump();
}

// Parses and validates one response line against the request id.
inline PerTokenSurprisals parse_protocol_response(std::string_view line, std::string_view expected_id) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception&) {
    throw ProtocolError("malformed response line for '" + std::string(expected_id) + "'");
  }
  PerTokenSurprisals pts;
  if (!j.is_object() || !j.contains("id") || !j["id"].is_string() || !j.contains("tokens") ||
      !j["tokens"].is_array() || !j.contains("surprisal_bits") || !j["surprisal_bits"].is_array())
    throw ProtocolError("response for '" + std::string(expected_id) +
                        "' needs string id and arrays tokens, surprisal_bits");
  pts.sentence_id = j["id"].get<std::string>();
  if (pts.sentence_id != expected_id)
    throw ProtocolError("response id '" + pts.sentence_id + "' does not match request '" +
                        std::string(expected_id) + "'");
  for (const auto& t : j["tokens"]) {
    if (!t.is_string()) throw ProtocolError("non-string token in response for '" + pts.sentence_id + "'");
    pts.tokens.push_back(t.get<std::string>());
  }
  for (const auto& v : j["surprisal_bits"]) {
    if (!v.is_number()) throw ProtocolError("non-numeric surprisal in response for '" + pts.sentence_id + "'");
    pts.surprisal_bits.push_back(v.get<double>());
  }
  validate_surprisals(pts);
  return pts;
}

// Runs `command` through /bin/sh and talks to it over its stdin/stdout, one
// request and one response per line. Requests are strictly serialized.
class ExternalProcessBackend final : public ScoringBackend {
 public:
  ExternalProcessBackend(const std::string& command, std::string backend_id, bool eos_included)
      : id_(std::move(backend_id)), eos_(eos_included) {
    ::signal(SIGPIPE, SIG_IGN);
    int to_child[2], from_child[2];
    if (::pipe(to_child) != 0 || ::pipe(from_child) != 0)
      throw BackendError("pipe() failed for scorer process");
    pid_ = ::fork();
    if (pid_ < 0) throw BackendError("fork() failed for scorer process");
    if (pid_ == 0) {
      ::dup2(to_child[0], STDIN_FILENO);
      ::dup2(from_child[1], STDOUT_FILENO);
      ::close(to_child[0]);
      ::close(to_child[1]);
      ::close(from_child[0]);
      ::close(from_child[1]);
      ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
      ::_exit(127);
    }
    ::close(to_child[0]);
    ::close(from_child[1]);
    write_fd_ = to_child[1];
    read_ = ::fdopen(from_child[0], "r");
    if (!read_) {
      shutdown();
      throw BackendError("fdopen() failed for scorer process");
    }
  }

  ExternalProcessBackend(const ExternalProcessBackend&) = delete;
  ExternalProcessBackend& operator=(const ExternalProcessBackend&) = delete;
  ~ExternalProcessBackend() override { shutdown(); }

  const std::string& backend_id() const override { return id_; }
  BackendKind kind() const override { return BackendKind::external_process; }
  bool eos_included() const override { return eos_; }

  PerTokenSurprisals score(std::string_view sid, std::string_view text) override {
    if (dead_) throw BackendError("scorer process '" + id_ + "' is no longer running");
    std::string req = protocol_request(sid, text) + "\n";
    std::size_t off = 0;
    while (off < req.size()) {
      ssize_t n = ::write(write_fd_, req.data() + off, req.size() - off);
      if (n <= 0) {
        dead_ = true;
        throw BackendError("scorer process '" + id_ + "' died (write failed) at '" + std::string(sid) + "'");
      }
      off += static_cast<std::size_t>(n);
    }
    std::string line;
    for (;;) {
      int c = std::fgetc(read_);
      if (c == EOF) {
        dead_ = true;
        throw BackendError("scorer process '" + id_ + "' exited before answering '" + std::string(sid) + "'");
      }
      if (c == '\n') break;
      line += static_cast<char>(c);
    }
    try {
      return parse_protocol_response(line, sid);
    } catch (const ProtocolError&) {
      shutdown();
      throw;
    }
  }

 private:
  void shutdown() {
    dead_ = true;
    if (write_fd_ >= 0) {
      ::close(write_fd_);
      write_fd_ = -1;
    }
    if (read_) {
      std::fclose(read_);
      read_ = nullptr;
    }
    if (pid_ > 0) {
      int status = 0;
      // The child sees EOF on stdin; give it a moment, then make sure.
      for (int i = 0; i < 50; ++i) {
        if (::waitpid(pid_, &status, WNOHANG) == pid_) {
          pid_ = -1;
          return;
        }
        ::usleep(10000);
      }
      ::kill(pid_, SIGKILL);
      ::waitpid(pid_, &status, 0);
      pid_ = -1;
    }
  }

  std::string id_;
  bool eos_;
  pid_t pid_ = -1;
  int write_fd_ = -1;
  FILE* read_ = nullptr;
  bool dead_ = false;
};

// Serves the protocol on the given streams with any backend, one response
// per request line. Used to put a native model behind the process protocol.
inline int serve_protocol(ScoringBackend& backend, std::istream& in, std::ostream& out) {
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    nlohmann::json req;
    try {
      req = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      return 1;
    }
    if (!req.is_object() || !req.contains("id") || !req.contains("text") || !req["id"].is_string() ||
        !req["text"].is_string())
      return 1;
    auto pts = backend.score(req["id"].get<std::string>(), req["text"].get<std::string>());
    out << protocol_response(pts) << '\n' << std::flush;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// tables

struct SurprisalRow {
  std::string backend_id;
  std::string item_id;
  std::string condition_key;
  double total_bits = 0.0;
  PerTokenSurprisals detail;
};

struct SurprisalTable {
  std::string backend_id;
  bool eos_included = true;
  std::vector<SurprisalRow> rows;  // experiment item order, then grid order

  const SurprisalRow* find(std::string_view item, std::string_view cond) const {
    for (const auto& r : rows)
      if (r.item_id == item && r.condition_key == cond) return &r;
    return nullptr;
  }
  double total(std::string_view item, std::string_view cond) const {
    if (auto* r = find(item, cond)) return r->total_bits;
    throw SchemaError("surprisal table '" + backend_id + "' has no cell " + sentence_id(item, cond));
  }
  std::vector<PerTokenSurprisals> details() const {
    std::vector<PerTokenSurprisals> out;
    for (const auto& r : rows) out.push_back(r.detail);
    return out;
  }
};

inline std::string utc_timestamp() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct ScoreOptions {
  bool strip_final_punct = false;
  unsigned threads = 1;
};

struct ScoringRun {
  SurprisalTable table;
  std::string scheme_id;
  std::string started;
  std::string finished;
  std::optional<CoverageReport> coverage;  // native backends only
};

inline PerTokenSurprisals score_sentence(ScoringBackend& backend, std::string_view sid,
                                         std::string_view sentence) {
  auto pts = backend.score(sid, sentence);
  validate_surprisals(pts);
  return pts;
}

// Scores every (item, condition) of a clean experiment. The first failing
// sentence aborts the run; the error names its item and condition.
inline ScoringRun score_experiment(ScoringBackend& backend, const Experiment& exp,
                                   const ScoreOptions& opt = {}) {
  ScoringRun run;
  run.started = utc_timestamp();
  run.scheme_id = backend.scheme_id();
  run.table.backend_id = backend.backend_id();
  run.table.eos_included = backend.eos_included();

  const auto keys = exp.condition_keys();
  for (const auto& it : exp.items)
    for (const auto& k : keys) {
      SurprisalRow row;
      row.backend_id = backend.backend_id();
      row.item_id = it.id;
      row.condition_key = k;
      run.table.rows.push_back(std::move(row));
    }

  auto score_row = [&](std::size_t i) {
    auto& row = run.table.rows[i];
    const Item& item = *exp.find_item(row.item_id);
    auto cell = item.cells.find(row.condition_key);
    const std::string sid = sentence_id(row.item_id, row.condition_key);
    try {
      if (cell == item.cells.end()) throw SchemaError("missing cell");
      const std::string text = opt.strip_final_punct ? strip_final_punct(cell->second) : cell->second;
      row.detail = score_sentence(backend, sid, text);
      row.total_bits = total_surprisal(row.detail);
    } catch (const ProtocolError& e) {
      throw ProtocolError("item '" + row.item_id + "' condition '" + row.condition_key + "': " + e.what());
    } catch (const BackendError& e) {
      throw BackendError("item '" + row.item_id + "' condition '" + row.condition_key + "': " + e.what());
    } catch (const SchemaError& e) {
      throw SchemaError("item '" + row.item_id + "' condition '" + row.condition_key + "': " + e.what());
    }
  };
  parallel_for(run.table.rows.size(), backend.concurrent() ? opt.threads : 1u, score_row);

  if (auto* native = dynamic_cast<NativeNgramBackend*>(&backend))
    run.coverage = vocabulary_coverage(exp, native->model().lexicon(),
                                       parse_scheme(native->model().scheme_id()));
  run.finished = utc_timestamp();
  return run;
}

// Builds a table from parsed file rows. Every experiment cell must appear
// exactly once; rows for unknown cells are rejected. Totals are recomputed
// from the per-token values.
inline SurprisalTable table_from_file(const SurprisalFile& file, const Experiment& exp) {
  std::map<std::string, const PerTokenSurprisals*> by_id;
  for (const auto& pts : file.sentences) {
    if (!by_id.emplace(pts.sentence_id, &pts).second)
      throw ValidationError("duplicate cell '" + pts.sentence_id + "'");
  }
  SurprisalTable table;
  table.backend_id = file.backend_id;
  table.eos_included = file.eos_included;
  const auto keys = exp.condition_keys();
  std::set<std::string> expected;
  for (const auto& it : exp.items)
    for (const auto& k : keys) {
      const auto sid = sentence_id(it.id, k);
      expected.insert(sid);
      auto f = by_id.find(sid);
      if (f == by_id.end()) throw SchemaError("surprisal file is missing cell '" + sid + "'");
      SurprisalRow row;
      row.backend_id = file.backend_id;
      row.item_id = it.id;
      row.condition_key = k;
      row.detail = *f->second;
      row.total_bits = total_surprisal(row.detail);
      table.rows.push_back(std::move(row));
    }
  for (const auto& [sid, _] : by_id)
    if (!expected.count(sid))
      throw SchemaError("surprisal file has cell '" + sid + "' that the experiment does not define");
  return table;
}

inline SurprisalTable ingest_external_file(const std::string& path, const Experiment& exp) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open surprisal file: " + path);
  return table_from_file(parse_surprisal_tsv(in, path), exp);
}

inline void write_surprisal_table(std::ostream& out, const SurprisalTable& table) {
  auto d = table.details();
  write_surprisal_tsv(out, table.backend_id, table.eos_included, d);
}

}  // namespace wordpref
