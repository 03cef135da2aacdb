#include <gtest/gtest.h>

#include <sstream>

#include "kn_oracle.hpp"
#include "wordpref/ngram.hpp"

using namespace wordpref;

namespace {

const std::string kData = WORDPREF_TEST_DATA;

std::vector<std::vector<std::string>> sentences(std::initializer_list<const char*> lines) {
  std::vector<std::vector<std::string>> out;
  for (auto* l : lines) out.push_back(split_whitespace(l));
  return out;
}

CountOptions opts(int order) {
  CountOptions o;
  o.order = order;
  o.scheme = Scheme::whitespace;
  return o;
}

NgramModel train(const std::vector<std::vector<std::string>>& s, int order) {
  auto counts = count_tokenized(s, opts(order));
  return build_model(counts, estimate_discounts(counts));
}

// Every context of length 0..order-1 over the vocabulary, <s> and one unseen
// token.
std::vector<std::vector<std::string>> all_contexts(const std::set<std::string>& vocab, int order) {
  std::vector<std::string> symbols(vocab.begin(), vocab.end());
  symbols.push_back("<s>");
  symbols.push_back("never-seen");
  std::vector<std::vector<std::string>> out{{}};
  std::vector<std::vector<std::string>> frontier{{}};
  for (int len = 1; len < order; ++len) {
    std::vector<std::vector<std::string>> next;
    for (const auto& c : frontier)
      for (const auto& s : symbols) {
        auto d = c;
        d.push_back(s);
        next.push_back(d);
      }
    out.insert(out.end(), next.begin(), next.end());
    frontier = std::move(next);
  }
  return out;
}

void expect_matches_oracle(const std::vector<std::vector<std::string>>& corpus, int order) {
  auto model = train(corpus, order);
  kn_oracle::Oracle oracle(corpus, order);
  std::size_t checked = 0;
  for (const auto& ctx : all_contexts(oracle.vocab(), order)) {
    for (const auto& w : oracle.vocab()) {
      ASSERT_NEAR(model.prob(w, ctx), oracle.prob(w, ctx), 1e-9)
          << "w=" << w << " ctx=" << join(ctx, " ");
      ++checked;
    }
    ASSERT_NEAR(model.prob("never-seen", ctx), oracle.prob("never-seen", ctx), 1e-9);
  }
  EXPECT_GT(checked, 0u);
}

}  // namespace

TEST(CountNgrams, ThreeLineCorpusBigrams) {
  auto t = count_tokenized(sentences({"a b", "a b", "a c"}), opts(2));
  EXPECT_EQ(t.count("a b"), 2u);
  EXPECT_EQ(t.count("a c"), 1u);
  EXPECT_EQ(t.count("<s> a"), 3u);
  EXPECT_EQ(t.count("b </s>"), 2u);
  // continuation counts: distinct predecessors
  EXPECT_EQ(t.count("b"), 1u);
  EXPECT_EQ(t.count("a"), 1u);
  EXPECT_EQ(t.count("</s>"), 2u);
  EXPECT_EQ(t.count("<s>"), 0u);
}

TEST(CountNgrams, EmptyCorpus) {
  std::istringstream in("");
  auto t = count_ngrams(in, opts(3));
  EXPECT_TRUE(t.empty());
  EXPECT_TRUE(t.vocabulary.empty());
}

TEST(CountNgrams, UnigramOrder) {
  auto t = count_tokenized(sentences({"a a a"}), opts(1));
  EXPECT_EQ(t.count("a"), 3u);
  EXPECT_EQ(t.count("</s>"), 1u);
  EXPECT_EQ(t.at_order(1).size(), 2u);
}

TEST(CountNgrams, OrderBelowOneIsRejected) {
  std::istringstream in("a b");
  EXPECT_THROW(count_ngrams(in, opts(0)), UsageError);
}

TEST(CountNgrams, MinCountMapsRareTokensToUnk) {
  auto o = opts(2);
  o.min_count = 2;
  auto t = count_tokenized(sentences({"a b", "a c"}), o);
  EXPECT_EQ(t.count("a <unk>"), 2u);
  EXPECT_EQ(t.count("a b"), 0u);
  EXPECT_FALSE(t.vocabulary.count("b"));
}

TEST(CountNgrams, SuffixesOfStoredNgramsExist) {
  auto t = count_tokenized(sentences({"x y z x", "y y z", "z x y"}), opts(4));
  for (int k = 2; k <= 4; ++k)
    for (const auto& [g, c] : t.at_order(k)) {
      EXPECT_GE(c, 1u);
      EXPECT_GE(t.count(detail::ngram_suffix(g)), 1u) << g;
    }
}

TEST(CountNgrams, ShardMergeEqualsSinglePass) {
  auto corpus = sentences({"the cat sat", "the dog sat", "a cat ran", "the cat sat",
                           "a dog sat down", "dog", "the the the"});
  for (int order : {1, 2, 3, 5}) {
    auto whole = count_tokenized(corpus, opts(order));
    Rng rng(static_cast<std::uint64_t>(order));
    for (int trial = 0; trial < 10; ++trial) {
      const std::size_t k = 1 + rng.below(corpus.size());
      std::vector<std::vector<std::vector<std::string>>> shards(k);
      for (const auto& s : corpus) shards[rng.below(k)].push_back(s);
      CountTable merged = count_tokenized(shards[0], opts(order));
      for (std::size_t i = 1; i < k; ++i) merged.merge(count_tokenized(shards[i], opts(order)));
      EXPECT_EQ(merged, whole) << "order " << order << " shards " << k;
    }
  }
}

TEST(Discounts, ClosedForm) {
  auto d = discounts_from_counts_of_counts(3, 1, 1, 1);
  EXPECT_FALSE(d.fallback);
  EXPECT_NEAR(d.d1, 0.6, 1e-12);
  EXPECT_NEAR(d.d2, 0.2, 1e-12);
  EXPECT_NEAR(d.d3plus, 0.6, 1e-12);
}

TEST(Discounts, DegenerateFallsBack) {
  std::vector<std::string> warnings;
  auto d = discounts_from_counts_of_counts(0, 4, 2, 1, 2, &warnings);
  EXPECT_TRUE(d.fallback);
  EXPECT_EQ(d.d1, 0.75);
  EXPECT_EQ(d.d2, 0.75);
  EXPECT_EQ(d.d3plus, 0.75);
  EXPECT_EQ(warnings.size(), 1u);
}

TEST(Discounts, AllOnesWithinClamp) {
  std::vector<std::string> warnings;
  auto d = discounts_from_counts_of_counts(1, 1, 1, 1, 3, &warnings);
  EXPECT_NEAR(d.d1, 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(d.d2, 1.0, 1e-12);
  EXPECT_NEAR(d.d3plus, 5.0 / 3.0, 1e-12);  // below the 2.999 ceiling
  EXPECT_TRUE(warnings.empty());
}

TEST(Discounts, ClampedAtCeiling) {
  std::vector<std::string> warnings;
  auto d = discounts_from_counts_of_counts(5, 2, 1, 0, 2, &warnings);
  EXPECT_EQ(d.d3plus, kDiscountMax);
  EXPECT_EQ(warnings.size(), 1u);
}

TEST(Discounts, NegativeEstimateFallsBack) {
  // n3 much larger than n2 drives D2 below zero.
  std::vector<std::string> warnings;
  auto d = discounts_from_counts_of_counts(10, 2, 20, 1, 3, &warnings);
  EXPECT_TRUE(d.fallback);
  EXPECT_EQ(d.d2, 0.75);
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("negative D2"), std::string::npos);
}

// Heavily templated text gives counts-of-counts where the closed form goes
// negative; every query must still have a finite log probability.
TEST(BuildModel, TemplatedCorpusStaysFinite) {
  std::vector<std::string> lines;
  const char* adj[] = {"new", "old", "red", "big"};
  const char* noun[] = {"book", "map", "lamp"};
  const char* pp[] = {"in the morning", "to the office", "on monday"};
  for (int i = 0; i < 400; ++i) {
    std::string np = std::string("a ") + adj[i % 4] + " " + adj[(i / 4) % 4] + " " + noun[i % 3];
    lines.push_back(i % 2 ? "kim sent " + np + " " + pp[i % 3] : "kim sent " + std::string(pp[(i / 3) % 3]) + " " + np);
  }
  std::vector<std::vector<std::string>> toks;
  for (const auto& l : lines) toks.push_back(split_whitespace(l));
  auto discounts = estimate_discounts(count_tokenized(toks, opts(5)));
  bool fell_back = false;
  for (const auto& d : discounts.per_order) fell_back |= d.fallback;
  EXPECT_TRUE(fell_back);
  auto model = train(toks, 5);
  const auto vocab = model.predictable();
  for (const auto& ctx : model.contexts())
    for (const auto& w : vocab) ASSERT_TRUE(std::isfinite(model.log10_prob(w, ctx))) << w;
}

TEST(BuildModel, NormalizesForThreeLineCorpus) {
  auto m = train(sentences({"a b", "a b", "a c"}), 2);
  std::vector<std::string> ctx = {"a"};
  double sum = 0;
  for (auto w : {"a", "b", "c", "</s>", "<unk>"}) sum += m.prob(w, ctx);
  EXPECT_NEAR(sum, 1.0, 1e-9);
}

TEST(BuildModel, SingleSentenceUnigram) {
  auto m = train(sentences({"a"}), 1);
  std::vector<std::string> none;
  EXPECT_NEAR(m.prob("a", none) + m.prob("</s>", none) + m.prob("<unk>", none), 1.0, 1e-9);
}

TEST(BuildModel, EmptyCountsRejected) {
  CountTable empty;
  empty.order = 2;
  empty.counts.resize(2);
  EXPECT_THROW(build_model(empty, Discounts{}), Error);
}

// Ten-token corpus, order 2. Expected values were produced once by the
// brute-force oracle in kn_oracle.hpp and frozen here.
TEST(BuildModel, TenTokenFixture) {
  auto corpus = sentences({"the cat sat", "the dog sat", "a cat ran", "dog"});
  auto m = train(corpus, 2);
  struct Row {
    const char* ctx;
    const char* w;
    double p;
  };
  const Row rows[] = {
      {"<s>", "the", 0.34375},
      {"<s>", "a", 0.09375},
      {"<s>", "dog", 0.078125},
      {"the", "cat", 0.14583333333333331},
      {"the", "dog", 0.14583333333333331},
      {"cat", "sat", 0.14583333333333331},
      {"cat", "ran", 0.16666666666666666},
      {"sat", "</s>", 0.62503125000000004},
      {"dog", "sat", 0.14583333333333331},
      {"dog", "</s>", 0.12506249999999999},
      {"ran", "cat", 0.020833333333333329},
      {"the", "<unk>", 0.56243750000000003},
      {"a", "cat", 0.27083333333333331},
      {"<s>", "<unk>", 0.421828125},
  };
  kn_oracle::Oracle oracle(corpus, 2);
  for (const auto& r : rows) {
    std::vector<std::string> ctx = {r.ctx};
    EXPECT_NEAR(oracle.prob(r.w, ctx), r.p, 1e-12) << r.ctx << " " << r.w;
    EXPECT_NEAR(m.prob(r.w, ctx), r.p, 1e-9) << r.ctx << " " << r.w;
  }
}

TEST(BuildModel, MatchesOracleOnToyCorpora) {
  const std::vector<std::vector<std::vector<std::string>>> corpora = {
      sentences({"a b", "a b", "a c"}),
      sentences({"the cat sat", "the dog sat", "a cat ran", "dog"}),
      sentences({"x y x y z", "y x", "z z z y", "x y z", "y y x z x", "x"}),
  };
  for (const auto& c : corpora)
    for (int order : {1, 2, 3}) expect_matches_oracle(c, order);
}

// Random corpora of at most 50 tokens.
TEST(BuildModelProperty, OracleEquivalence) {
  Rng rng(2024);
  const std::vector<std::string> words = {"a", "b", "c", "d", "e"};
  for (int trial = 0; trial < 25; ++trial) {
    std::vector<std::vector<std::string>> corpus;
    std::size_t tokens = 0;
    const auto n_sent = 1 + rng.below(10);
    for (std::uint64_t s = 0; s < n_sent && tokens < 45; ++s) {
      std::vector<std::string> sent;
      const auto len = 1 + rng.below(6);
      for (std::uint64_t i = 0; i < len && tokens < 50; ++i, ++tokens)
        sent.push_back(words[rng.below(1 + rng.below(words.size()))]);
      corpus.push_back(sent);
    }
    const int order = 1 + static_cast<int>(rng.below(3));
    expect_matches_oracle(corpus, order);
  }
}

TEST(BuildModelProperty, NormalizationOverStoredContexts) {
  Rng rng(5);
  std::vector<std::vector<std::string>> corpus;
  const std::vector<std::string> words = {"w0", "w1", "w2", "w3", "w4", "w5", "w6", "w7", "w8", "w9"};
  for (int s = 0; s < 400; ++s) {
    std::vector<std::string> sent;
    const auto len = 1 + rng.below(12);
    for (std::uint64_t i = 0; i < len; ++i) sent.push_back(words[rng.below(1 + rng.below(10))]);
    corpus.push_back(sent);
  }
  auto m = train(corpus, 4);
  auto contexts = m.contexts();
  ASSERT_GT(contexts.size(), 200u);
  for (int i = 0; i < 200; ++i) {
    const auto& ctx = contexts[rng.below(contexts.size())];
    EXPECT_NEAR(probability_mass(m, ctx), 1.0, 1e-9) << join(ctx, " ");
  }
  for (int k = 1; k <= m.order(); ++k)
    for (const auto& [g, e] : m.table(k)) {
      if (detail::ngram_last(g) == kBos) continue;
      EXPECT_LE(e.log10_prob, 0.0);
      EXPECT_TRUE(std::isfinite(e.log10_prob));
      if (e.has_backoff) {
        EXPECT_TRUE(std::isfinite(e.log10_backoff));
      }
    }
}

TEST(Prob, DeterministicContinuationIsArgmax) {
  std::vector<std::vector<std::string>> corpus;
  for (int i = 0; i < 50; ++i) corpus.push_back({"a", "b"});
  for (int i = 0; i < 20; ++i) corpus.push_back({"c", "d", "e"});
  for (int i = 0; i < 20; ++i) corpus.push_back({"e", "a", "b", "c"});
  for (int order : {2, 3}) {
    auto m = train(corpus, order);
    // Full-length contexts, as a scorer would pass them.
    for (auto ctx : {std::vector<std::string>{"<s>", "a"}, std::vector<std::string>{"e", "a"}}) {
      const double pb = m.prob("b", ctx);
      for (const auto& w : m.predictable()) {
        if (w != "b") {
          EXPECT_LT(m.prob(w, ctx), pb) << w << " order " << order;
        }
      }
    }
  }
}

TEST(Prob, OovEqualsUnknownSymbol) {
  auto m = train(sentences({"a b", "a b", "a c"}), 2);
  std::vector<std::string> ctx = {"a"};
  EXPECT_EQ(m.prob("zebra", ctx), m.prob("<unk>", ctx));
  std::vector<std::string> long_ctx = {"q", "r", "s", "a"};
  EXPECT_EQ(m.prob("b", long_ctx), m.prob("b", ctx));
}

// p(b|a) never decreases as "a b" becomes more frequent with the rest of the
// corpus fixed. The guarantee needs a discount that does not grow with the
// count (for count-dependent discounts the step from D2 to D3+ can outweigh
// the extra count), so the discounts here are held constant and <= 1.
TEST(BuildModelProperty, MonotoneEvidenceFixedDiscounts) {
  auto base = sentences({"a c", "a d", "a c d", "b a", "c d", "d a c", "a e", "e b"});
  const OrderDiscount sets[] = {{0.5, 0.5, 0.5, false}, {0.75, 0.75, 0.75, true}, {1.0, 1.0, 1.0, false}};
  for (const auto& od : sets)
    for (int order : {2, 3}) {
      Discounts d;
      d.per_order.assign(static_cast<std::size_t>(order), od);
      double prev = 0.0;
      for (int n = 0; n <= 12; ++n) {
        auto corpus = base;
        for (int i = 0; i < n; ++i) corpus.push_back({"a", "b"});
        auto m = build_model(count_tokenized(corpus, opts(order)), d);
        std::vector<std::string> ctx = {"<s>", "a"};
        const double p = m.prob("b", ctx);
        EXPECT_GE(p, prev - 1e-12) << "order " << order << " n=" << n;
        prev = p;
      }
    }
}

// Same property with discounts re-estimated each time, on a corpus large
// enough that counts-of-counts are stable.
TEST(BuildModelProperty, MonotoneEvidenceReestimated) {
  Rng rng(99);
  std::vector<std::vector<std::string>> base;
  std::vector<std::string> words;
  for (int i = 0; i < 20000; ++i) words.push_back("w" + std::to_string(i));
  words.push_back("a");
  for (int s = 0; s < 4000; ++s) {
    std::vector<std::string> sent;
    const auto len = 2 + rng.below(6);
    // log-uniform index: a long tail of rare words at every order
    for (std::uint64_t i = 0; i < len; ++i) {
      const auto idx = static_cast<std::size_t>(std::exp(rng.uniform() * std::log(static_cast<double>(words.size()))));
      sent.push_back(words[std::min(idx, words.size()) - 1]);
    }
    base.push_back(sent);
  }
  for (int order : {2, 3}) {
    // from n = 1: before that "b" is out of vocabulary and scores as <unk>
    double prev = 0.0;
    for (int n = 1; n <= 30; ++n) {
      auto corpus = base;
      for (int i = 0; i < n; ++i) corpus.push_back({"a", "b"});
      auto counts = count_tokenized(corpus, opts(order));
      auto d = estimate_discounts(counts);
      for (const auto& od : d.per_order) ASSERT_FALSE(od.fallback) << "order " << order << " n=" << n << " " << join(d.warnings, "; ");
      auto m = build_model(counts, d);
      std::vector<std::string> ctx = {"<s>", "a"};
      const double p = m.prob("b", ctx);
      EXPECT_GE(p, prev - 1e-12) << "order " << order << " n=" << n;
      prev = p;
    }
  }
}

TEST(Arpa, HandWrittenUnigram) {
  auto m = read_arpa(kData + "/unigram.arpa");
  std::vector<std::string> none;
  EXPECT_EQ(m.order(), 1);
  EXPECT_EQ(m.prob("a", none), 0.5);
  EXPECT_NEAR(probability_mass(m, none), 1.0, 1e-12);
}

TEST(Arpa, MissingSectionNamesOrder) {
  try {
    read_arpa(kData + "/missing_section.arpa");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("\\5-grams:"), std::string::npos) << e.what();
  }
}

TEST(Arpa, MalformedInputs) {
  auto parse = [](const std::string& s) {
    std::istringstream in(s);
    return read_arpa(in);
  };
  EXPECT_THROW(parse("no header here\n"), ParseError);
  EXPECT_THROW(parse("\\data\\\nngram 1=1\n\n\\1-grams:\nabc\ta\n\n\\end\\\n"), ParseError);
  EXPECT_THROW(parse("\\data\\\nngram 1=2\n\n\\1-grams:\n-1\ta\n\n\\end\\\n"), ParseError);
  EXPECT_THROW(parse("\\data\\\nngram 1=1\n\n\\1-grams:\n-1\ta\n\n\\2-grams:\n-1\ta a\n\n\\end\\\n"),
               ParseError);
  EXPECT_THROW(parse("\\data\\\nngram 1=1\n\n\\1-grams:\n-1\ta b\n\n\\end\\\n"), ParseError);
  EXPECT_THROW(parse("\\data\\\nngram 1=1\n\n\\1-grams:\n-1\ta\n"), ParseError);
}

TEST(Arpa, RoundTripPreservesQueries) {
  auto corpus = sentences({"x y x y z", "y x", "z z z y", "x y z", "y y x z x", "x"});
  auto m = train(corpus, 3);
  std::stringstream buf;
  write_arpa(m, buf);
  auto back = read_arpa(buf);
  EXPECT_EQ(back.order(), 3);
  EXPECT_EQ(back.scheme_id(), m.scheme_id());
  for (const auto& ctx : all_contexts({"x", "y", "z"}, 3))
    for (auto w : {"x", "y", "z", "</s>", "<unk>", "q"})
      EXPECT_NEAR(back.log10_prob(w, ctx), m.log10_prob(w, ctx), 1e-12);
}

TEST(Arpa, ExternalStyleSingleStartSymbol) {
  // Toolkits that pad with a single <s> store "<s> a" at order 2 only.
  const std::string text =
      "\\data\\\nngram 1=4\nngram 2=2\nngram 3=1\n\n"
      "\\1-grams:\n-99\t<s>\t-0.2\n-0.5\ta\t-0.1\n-0.4\t</s>\n-1.0\t<unk>\n\n"
      "\\2-grams:\n-0.1\t<s> a\t-0.05\n-0.3\ta </s>\n\n"
      "\\3-grams:\n-0.01\t<s> a </s>\n\n\\end\\\n";
  std::istringstream in(text);
  auto m = read_arpa(in);
  std::vector<std::string> ctx = {"<s>", "<s>"};
  EXPECT_NEAR(m.log10_prob("a", ctx), -0.1, 1e-12);
  std::vector<std::string> ctx2 = {"<s>", "a"};
  EXPECT_NEAR(m.log10_prob("</s>", ctx2), -0.01, 1e-12);
  std::vector<std::string> ctx3 = {"a", "a"};
  // backoff(a) + p(a)
  EXPECT_NEAR(m.log10_prob("a", ctx3), -0.1 + -0.5, 1e-12);
}
