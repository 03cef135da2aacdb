#pragma once

// Interpolated modified Kneser-Ney n-gram models: counting, discount
// estimation, model construction, querying and ARPA text interop.
//
// N-grams are keyed by their tokens joined with single spaces. Tokens never
// contain whitespace, so the key is unambiguous and a k-gram's suffix is the
// substring after its first space.

#include <cmath>
#include <istream>
#include <map>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "wordpref/error.hpp"
#include "wordpref/stimuli.hpp"
#include "wordpref/util.hpp"

namespace wordpref {

inline constexpr std::string_view kBos = "<s>";
inline constexpr std::string_view kEos = "</s>";
inline constexpr std::string_view kUnk = "<unk>";

// ARPA spelling of log10(0), used for the start symbol.
inline constexpr double kLog10Zero = -99.0;
inline constexpr double kUnkFloor = 1e-10;
inline constexpr double kDiscountMax = 2.999;
inline constexpr double kFallbackDiscount = 0.75;

inline bool is_reserved(std::string_view tok) {
  return tok == kBos || tok == kEos || tok == kUnk;
}

struct StringHash {
  using is_transparent = void;
  std::size_t operator()(std::string_view s) const noexcept {
    return std::hash<std::string_view>{}(s);
  }
};

template <typename V>
using StringMap = std::unordered_map<std::string, V, StringHash, std::equal_to<>>;

namespace detail {

inline std::string_view ngram_suffix(std::string_view g) {
  auto sp = g.find(' ');
  return sp == std::string_view::npos ? std::string_view() : g.substr(sp + 1);
}
inline std::string_view ngram_prefix(std::string_view g) {
  auto sp = g.rfind(' ');
  return sp == std::string_view::npos ? std::string_view() : g.substr(0, sp);
}
inline std::string_view ngram_last(std::string_view g) {
  auto sp = g.rfind(' ');
  return sp == std::string_view::npos ? g : g.substr(sp + 1);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// counting

struct CountTable {
  int order = 0;
  std::string scheme_id;
  // counts[k-1] holds k-grams. The top order holds raw occurrence counts;
  // lower orders hold continuation counts (distinct left extensions).
  std::vector<StringMap<std::uint64_t>> counts;
  std::set<std::string> vocabulary;

  bool empty() const { return counts.empty() || counts.back().empty(); }

  const StringMap<std::uint64_t>& at_order(int k) const { return counts.at(k - 1); }

  std::uint64_t count(std::string_view ngram) const {
    int k = 1 + static_cast<int>(std::count(ngram.begin(), ngram.end(), ' '));
    if (k < 1 || k > order) return 0;
    auto& m = counts[k - 1];
    auto it = m.find(ngram);
    return it == m.end() ? 0 : it->second;
  }

  // Rebuilds lower orders and the vocabulary from the top-order counts.
  void finalize() {
    for (int k = order - 1; k >= 1; --k) {
      auto& lower = counts[k - 1];
      lower.clear();
      for (const auto& [g, c] : counts[k]) {
        auto suffix = detail::ngram_suffix(g);
        auto it = lower.find(suffix);
        if (it == lower.end())
          lower.emplace(std::string(suffix), 1);
        else
          ++it->second;
      }
    }
    vocabulary.clear();
    if (empty()) return;
    for (const auto& [w, _] : counts[0]) vocabulary.insert(w);
    vocabulary.insert(std::string(kBos));
    vocabulary.insert(std::string(kEos));
    vocabulary.insert(std::string(kUnk));
  }

  // Adds another shard's raw counts. Continuation counts are recomputed, so
  // merging shards equals counting the concatenated corpus.
  void merge(const CountTable& other) {
    if (other.order != order)
      throw Error("cannot merge count tables of order " + std::to_string(order) +
                  " and " + std::to_string(other.order));
    if (!other.empty() && !empty() && other.scheme_id != scheme_id)
      throw Error("cannot merge count tables with different tokenization schemes");
    if (scheme_id.empty()) scheme_id = other.scheme_id;
    for (const auto& [g, c] : other.counts.back()) counts.back()[g] += c;
    finalize();
  }

  bool operator==(const CountTable& o) const {
    return order == o.order && counts == o.counts && vocabulary == o.vocabulary;
  }
};

struct CountOptions {
  int order = 5;
  Scheme scheme = Scheme::punct_split_lowercase;
  std::uint64_t min_count = 1;  // rarer tokens are replaced by <unk>
};

// Counts already-tokenized sentences. Each sentence is padded with
// (order - 1) start symbols and one end symbol.
inline CountTable count_tokenized(std::span<const std::vector<std::string>> sentences,
                                  const CountOptions& opt) {
  if (opt.order < 1) throw UsageError("n-gram order must be >= 1");
  CountTable table;
  table.order = opt.order;
  table.scheme_id = std::string(scheme_id(opt.scheme));
  table.counts.resize(opt.order);

  StringMap<std::uint64_t> freq;
  if (opt.min_count > 1)
    for (const auto& s : sentences)
      for (const auto& t : s) ++freq[t];

  auto& top = table.counts.back();
  std::string padded;
  std::vector<std::size_t> starts;
  for (const auto& sentence : sentences) {
    if (sentence.empty()) continue;
    padded.clear();
    starts.clear();
    auto push = [&](std::string_view tok) {
      if (!padded.empty()) padded += ' ';
      starts.push_back(padded.size());
      padded += tok;
    };
    for (int i = 0; i < opt.order - 1; ++i) push(kBos);
    for (const auto& t : sentence) {
      if (opt.min_count > 1 && freq[t] < opt.min_count)
        push(kUnk);
      else
        push(t);
    }
    push(kEos);
    const std::size_t n = starts.size();
    for (std::size_t end = static_cast<std::size_t>(opt.order - 1); end < n; ++end) {
      const std::size_t b = starts[end + 1 - static_cast<std::size_t>(opt.order)];
      const std::size_t e = end + 1 < n ? starts[end + 1] - 1 : padded.size();
      std::string_view g(padded.data() + b, e - b);
      auto it = top.find(g);
      if (it == top.end())
        top.emplace(std::string(g), 1);
      else
        ++it->second;
    }
  }
  table.finalize();
  return table;
}

// One sentence per line. Blank lines are skipped.
inline CountTable count_ngrams(std::istream& corpus, const CountOptions& opt) {
  if (opt.order < 1) throw UsageError("n-gram order must be >= 1");
  std::vector<std::vector<std::string>> sentences;
  std::string line;
  while (std::getline(corpus, line)) {
    auto toks = tokenize(line, opt.scheme).tokens;
    if (!toks.empty()) sentences.push_back(std::move(toks));
  }
  if (corpus.bad()) throw IoError("error reading corpus");
  return count_tokenized(sentences, opt);
}

inline CountTable count_ngrams_file(const std::string& path, const CountOptions& opt) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open corpus: " + path);
  return count_ngrams(in, opt);
}

// ---------------------------------------------------------------------------
// discounts

struct OrderDiscount {
  double d1 = kFallbackDiscount;
  double d2 = kFallbackDiscount;
  double d3plus = kFallbackDiscount;
  bool fallback = false;

  double for_count(std::uint64_t c) const {
    if (c == 0) return 0.0;
    if (c == 1) return d1;
    if (c == 2) return d2;
    return d3plus;
  }
};

struct Discounts {
  std::vector<OrderDiscount> per_order;  // index k-1
  std::vector<std::string> warnings;

  const OrderDiscount& at_order(int k) const { return per_order.at(k - 1); }
};

// Closed-form estimate from counts-of-counts:
//   Y = n1/(n1+2 n2), D1 = 1-2Y n2/n1, D2 = 2-3Y n3/n2, D3+ = 3-4Y n4/n3
// capped at kDiscountMax. Zero n1, n2 or n3 makes the estimate undefined,
// and a negative D2 or D3+ (counts-of-counts far from the usual decay, as in
// templated corpora) would leave contexts with no mass for unseen words;
// both select the fixed fallback discount.
inline OrderDiscount discounts_from_counts_of_counts(std::uint64_t n1, std::uint64_t n2,
                                                     std::uint64_t n3, std::uint64_t n4,
                                                     int order = 0,
                                                     std::vector<std::string>* warnings = nullptr) {
  auto warn = [&](const std::string& msg) {
    if (warnings) warnings->push_back("order " + std::to_string(order) + ": " + msg);
  };
  auto fallback = [&](const std::string& why) {
    OrderDiscount d;
    d.fallback = true;
    warn(why + "; using fixed discount " + format_double(kFallbackDiscount));
    return d;
  };
  if (n1 == 0 || n2 == 0 || n3 == 0)
    return fallback("degenerate counts-of-counts (n1=" + std::to_string(n1) + ", n2=" + std::to_string(n2) +
                    ", n3=" + std::to_string(n3) + ")");
  const double N1 = static_cast<double>(n1), N2 = static_cast<double>(n2),
               N3 = static_cast<double>(n3), N4 = static_cast<double>(n4);
  const double y = N1 / (N1 + 2.0 * N2);
  double raw[3] = {1.0 - 2.0 * y * N2 / N1, 2.0 - 3.0 * y * N3 / N2, 3.0 - 4.0 * y * N4 / N3};
  const char* names[3] = {"D1", "D2", "D3+"};
  for (int i = 0; i < 3; ++i)
    if (raw[i] < 0.0) return fallback(std::string("negative ") + names[i] + "=" + format_double(raw[i]));
  for (int i = 0; i < 3; ++i) {
    if (raw[i] > kDiscountMax) {
      warn(std::string(names[i]) + "=" + format_double(raw[i]) + " clamped to " +
           format_double(kDiscountMax));
      raw[i] = kDiscountMax;
    }
  }
  OrderDiscount d;
  d.d1 = raw[0];
  d.d2 = raw[1];
  d.d3plus = raw[2];
  return d;
}

inline Discounts estimate_discounts(const CountTable& counts) {
  Discounts out;
  for (int k = 1; k <= counts.order; ++k) {
    std::uint64_t n[5] = {0, 0, 0, 0, 0};
    for (const auto& [_, c] : counts.at_order(k))
      if (c >= 1 && c <= 4) ++n[c];
    out.per_order.push_back(
        discounts_from_counts_of_counts(n[1], n[2], n[3], n[4], k, &out.warnings));
  }
  return out;
}

// ---------------------------------------------------------------------------
// model

struct NgramEntry {
  double log10_prob = 0.0;
  double log10_backoff = 0.0;
  bool has_backoff = false;
};

class NgramModel {
 public:
  using Table = StringMap<NgramEntry>;

  NgramModel(int order, std::vector<Table> tables, std::string scheme)
      : order_(order), tables_(std::move(tables)), scheme_id_(std::move(scheme)) {
    if (order_ < 1 || static_cast<int>(tables_.size()) != order_)
      throw Error("model tables do not match order " + std::to_string(order_));
    auto& uni = tables_[0];
    if (!uni.count(kUnk)) uni.emplace(std::string(kUnk), NgramEntry{std::log10(kUnkFloor)});
    for (const auto& [w, _] : uni)
      if (!is_reserved(w)) lexicon_.insert(w);
  }

  int order() const { return order_; }
  const std::string& scheme_id() const { return scheme_id_; }
  const Table& table(int k) const { return tables_.at(k - 1); }

  // Tokens with their own unigram entry, reserved symbols excluded.
  const std::set<std::string>& lexicon() const { return lexicon_; }
  bool known(std::string_view tok) const { return tables_[0].count(tok) && tok != kBos; }

  // Every token that can be predicted: the lexicon plus </s> and <unk>.
  std::vector<std::string> predictable() const {
    std::vector<std::string> out(lexicon_.begin(), lexicon_.end());
    if (tables_[0].count(kEos)) out.emplace_back(kEos);
    out.emplace_back(kUnk);
    return out;
  }

  // log10 p(word | context) by the backoff recursion. Only the last
  // (order - 1) context tokens matter; unknown tokens map to <unk>, and so
  // does <s> when asked for as a predicted word.
  double log10_prob(std::string_view word, std::span<const std::string> context) const {
    const std::string_view w = known(word) ? word : kUnk;
    const std::size_t n_ctx =
        std::min<std::size_t>(context.size(), static_cast<std::size_t>(order_ - 1));
    std::vector<std::string_view> ctx;
    ctx.reserve(n_ctx);
    for (std::size_t i = context.size() - n_ctx; i < context.size(); ++i) {
      std::string_view t = context[i];
      ctx.push_back(tables_[0].count(t) ? t : kUnk);
    }
    double backoff = 0.0;
    std::string key, hist;
    for (std::size_t n = n_ctx + 1; n-- > 0;) {
      hist.clear();
      for (std::size_t i = ctx.size() - n; i < ctx.size(); ++i) {
        if (!hist.empty()) hist += ' ';
        hist += ctx[i];
      }
      key = hist;
      if (!key.empty()) key += ' ';
      key += w;
      const auto& t = tables_[n];
      if (auto it = t.find(key); it != t.end()) return backoff + it->second.log10_prob;
      if (n > 0) {
        const auto& h = tables_[n - 1];
        if (auto it = h.find(hist); it != h.end() && it->second.has_backoff)
          backoff += it->second.log10_backoff;
      }
    }
    throw Error("model has no unigram entry for <unk>");
  }

  double prob(std::string_view word, std::span<const std::string> context) const {
    return std::pow(10.0, log10_prob(word, context));
  }

  // Stored n-grams that carry a backoff weight, as token lists.
  std::vector<std::vector<std::string>> contexts() const {
    std::vector<std::vector<std::string>> out;
    for (int k = 1; k < order_; ++k)
      for (const auto& [g, e] : tables_[k - 1])
        if (e.has_backoff) out.push_back(split_whitespace(g));
    std::sort(out.begin(), out.end());
    return out;
  }

  std::size_t size(int k) const { return tables_.at(k - 1).size(); }

 private:
  int order_;
  std::vector<Table> tables_;
  std::string scheme_id_;
  std::set<std::string> lexicon_;
};

// Interpolated modified Kneser-Ney:
//   p_k(w|h) = max(a(hw) - D_k(a(hw)), 0) / sum_x a(hx) + gamma(h) p_{k-1}(w|h')
//   gamma(h) = (D1 N1(h.) + D2 N2(h.) + D3+ N3+(h.)) / sum_x a(hx)
// The unigram level gives its discounted mass to <unk>. Probabilities of
// stored n-grams are written out fully interpolated and gamma(h) becomes the
// backoff weight of h, so the backoff recursion reproduces the interpolated
// distribution exactly.
inline NgramModel build_model(const CountTable& counts, const Discounts& discounts) {
  if (counts.empty()) throw ValidationError("empty corpus: no n-grams to estimate");
  if (static_cast<int>(discounts.per_order.size()) != counts.order)
    throw Error("discounts do not cover every order");
  const int order = counts.order;

  struct ContextStats {
    double total = 0.0;
    double discounted = 0.0;  // sum of applied discounts
  };

  std::vector<NgramModel::Table> tables(order);
  // Linear probabilities of the previous order, used for interpolation.
  StringMap<double> lower_prob;

  {  // unigrams
    const auto& d = discounts.at_order(1);
    ContextStats st;
    for (const auto& [w, a] : counts.at_order(1)) {
      st.total += static_cast<double>(a);
      st.discounted += std::min(d.for_count(a), static_cast<double>(a));
    }
    for (const auto& [w, a] : counts.at_order(1)) {
      const double ad = static_cast<double>(a);
      lower_prob[w] = std::max(ad - d.for_count(a), 0.0) / st.total;
    }
    double& unk = lower_prob[std::string(kUnk)];
    unk = std::max(unk + st.discounted / st.total, kUnkFloor);
    for (const auto& [w, p] : lower_prob) tables[0][w] = NgramEntry{std::log10(p)};
    if (order > 1) tables[0][std::string(kBos)] = NgramEntry{kLog10Zero};
  }

  for (int k = 2; k <= order; ++k) {
    const auto& d = discounts.at_order(k);
    const auto& grams = counts.at_order(k);
    StringMap<ContextStats> ctx_stats;
    for (const auto& [g, a] : grams) {
      auto& st = ctx_stats[std::string(detail::ngram_prefix(g))];
      st.total += static_cast<double>(a);
      st.discounted += std::min(d.for_count(a), static_cast<double>(a));
    }
    StringMap<double> cur_prob;
    for (const auto& [g, a] : grams) {
      const auto& st = ctx_stats.find(detail::ngram_prefix(g))->second;
      auto lower = lower_prob.find(detail::ngram_suffix(g));
      if (lower == lower_prob.end())
        throw Error("count table is missing the suffix of '" + g + "'");
      const double ad = static_cast<double>(a);
      const double p = std::max(ad - d.for_count(a), 0.0) / st.total +
                       st.discounted / st.total * lower->second;
      cur_prob[g] = p;
      tables[k - 1][g] = NgramEntry{std::log10(p)};
    }
    auto& hist_table = tables[k - 2];
    for (const auto& [h, st] : ctx_stats) {
      auto it = hist_table.find(h);
      if (it == hist_table.end()) {
        // Only runs of start symbols are contexts without being n-grams.
        it = hist_table.emplace(h, NgramEntry{kLog10Zero}).first;
      }
      it->second.log10_backoff = std::log10(st.discounted / st.total);
      it->second.has_backoff = true;
    }
    lower_prob = std::move(cur_prob);
  }
  return NgramModel(order, std::move(tables), counts.scheme_id);
}

inline NgramModel train_model(std::istream& corpus, const CountOptions& opt,
                              Discounts* discounts_out = nullptr) {
  auto counts = count_ngrams(corpus, opt);
  if (counts.empty()) throw ValidationError("empty corpus");
  auto d = estimate_discounts(counts);
  auto model = build_model(counts, d);
  if (discounts_out) *discounts_out = std::move(d);
  return model;
}

// ---------------------------------------------------------------------------
// ARPA text format

inline constexpr std::string_view kArpaSchemeTag = "wordpref-scheme:";

inline void write_arpa(const NgramModel& model, std::ostream& out) {
  out << kArpaSchemeTag << ' ' << model.scheme_id() << "\n\n";
  out << "\\data\\\n";
  for (int k = 1; k <= model.order(); ++k)
    out << "ngram " << k << '=' << model.size(k) << '\n';
  for (int k = 1; k <= model.order(); ++k) {
    out << "\n\\" << k << "-grams:\n";
    std::vector<std::pair<std::string_view, const NgramEntry*>> rows;
    for (const auto& [g, e] : model.table(k)) rows.emplace_back(g, &e);
    std::sort(rows.begin(), rows.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    for (const auto& [g, e] : rows) {
      out << format_double(e->log10_prob) << '\t' << g;
      if (e->has_backoff && k < model.order()) out << '\t' << format_double(e->log10_backoff);
      out << '\n';
    }
  }
  out << "\n\\end\\\n";
}

inline void write_arpa(const NgramModel& model, const std::string& path) {
  std::ostringstream ss;
  write_arpa(model, ss);
  write_file(path, ss.str());
}

// Reads ARPA text. Files written by other toolkits are accepted; the
// tokenization scheme is taken from a leading "wordpref-scheme:" line when
// present and from `default_scheme` otherwise.
inline NgramModel read_arpa(std::istream& in,
                            std::string_view default_scheme = "punct-split+lowercase") {
  std::string scheme(default_scheme);
  std::string line;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& msg) -> ParseError {
    return ParseError("ARPA line " + std::to_string(lineno) + ": " + msg);
  };
  auto next = [&]() -> bool {
    if (!std::getline(in, line)) return false;
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
  };

  bool found_data = false;
  while (next()) {
    auto t = trim(line);
    if (starts_with(t, kArpaSchemeTag)) scheme = std::string(trim(t.substr(kArpaSchemeTag.size())));
    if (t == "\\data\\") {
      found_data = true;
      break;
    }
  }
  if (!found_data) throw ParseError("ARPA: no \\data\\ header");

  std::map<int, long long> declared;
  while (next()) {
    auto t = trim(line);
    if (t.empty()) {
      if (declared.empty()) continue;
      break;
    }
    if (!starts_with(t, "ngram ")) {
      if (starts_with(t, "\\")) break;
      throw fail("expected 'ngram k=count', got '" + std::string(t) + "'");
    }
    auto eq = t.find('=');
    long long k = 0, c = 0;
    if (eq == std::string_view::npos || !parse_int(t.substr(6, eq - 6), k) ||
        !parse_int(t.substr(eq + 1), c) || k < 1 || c < 0)
      throw fail("malformed count line '" + std::string(t) + "'");
    if (declared.count(static_cast<int>(k))) throw fail("order " + std::to_string(k) + " declared twice");
    declared[static_cast<int>(k)] = c;
  }
  if (declared.empty()) throw ParseError("ARPA: \\data\\ section declares no n-gram orders");
  const int order = declared.rbegin()->first;
  for (int k = 1; k <= order; ++k)
    if (!declared.count(k))
      throw ParseError("ARPA: \\data\\ section skips order " + std::to_string(k));

  std::vector<NgramModel::Table> tables(order);
  int expected = 1;
  bool ended = false;
  // `line` may already hold the first section header.
  bool have_line = starts_with(trim(line), "\\");
  while (have_line || next()) {
    have_line = false;
    auto t = trim(line);
    if (t.empty()) continue;
    if (t == "\\end\\") {
      ended = true;
      break;
    }
    long long k = 0;
    if (!(starts_with(t, "\\") && t.size() > 8 && t.substr(t.size() - 7) == "-grams:" &&
          parse_int(t.substr(1, t.size() - 8), k)))
      throw fail("expected a section header, got '" + std::string(t) + "'");
    if (k > order)
      throw fail("section \\" + std::to_string(k) + "-grams: exceeds declared order " +
                 std::to_string(order));
    if (k != expected)
      throw fail("expected section \\" + std::to_string(expected) + "-grams:, got \\" +
                 std::to_string(k) + "-grams:");
    auto& table = tables[k - 1];
    long long seen = 0;
    while (next()) {
      auto row = trim(line);
      if (row.empty()) break;
      if (starts_with(row, "\\")) {
        have_line = true;
        break;
      }
      auto fields = split_whitespace(row);
      const auto nf = static_cast<long long>(fields.size());
      if (nf != k + 1 && nf != k + 2)
        throw fail("expected " + std::to_string(k) + " tokens in a " + std::to_string(k) +
                   "-gram entry, got '" + std::string(row) + "'");
      NgramEntry e;
      if (!parse_double(fields[0], e.log10_prob))
        throw fail("non-numeric probability '" + fields[0] + "'");
      if (e.log10_prob > 0.0) throw fail("log10 probability above 0: " + fields[0]);
      if (nf == k + 2) {
        if (!parse_double(fields.back(), e.log10_backoff))
          throw fail("non-numeric backoff '" + fields.back() + "'");
        e.has_backoff = true;
      }
      std::string key;
      for (long long i = 1; i <= k; ++i) {
        if (i > 1) key += ' ';
        key += fields[i];
      }
      if (!table.emplace(std::move(key), e).second) throw fail("duplicate n-gram");
      ++seen;
    }
    if (seen != declared[static_cast<int>(k)])
      throw ParseError("ARPA: \\" + std::to_string(k) + "-grams: has " + std::to_string(seen) +
                       " entries but \\data\\ declares " +
                       std::to_string(declared[static_cast<int>(k)]));
    ++expected;
  }
  if (expected <= order)
    throw ParseError("ARPA: missing \\" + std::to_string(expected) + "-grams: section (\\data\\ declares order " +
                     std::to_string(order) + ")");
  if (!ended) throw ParseError("ARPA: missing \\end\\ marker");
  return NgramModel(order, std::move(tables), scheme);
}

inline NgramModel read_arpa(const std::string& path,
                            std::string_view default_scheme = "punct-split+lowercase") {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open ARPA file: " + path);
  return read_arpa(in, default_scheme);
}

// ---------------------------------------------------------------------------
// checks

// sum_w p(w | context) over every predictable token.
inline double probability_mass(const NgramModel& model, std::span<const std::string> context) {
  double total = 0.0;
  for (const auto& w : model.predictable()) total += model.prob(w, context);
  return total;
}

}  // namespace wordpref
