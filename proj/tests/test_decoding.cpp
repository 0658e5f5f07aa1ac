// Beam search vs brute-force enumeration, ensemble averaging laws, corpus
// decoding determinism.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>
#include <vector>

#include "ape/decode.hpp"
#include "ape/train.hpp"

using namespace ape;

namespace {

// Deterministic pseudo-random next-token tables keyed on the prefix: a fixed
// "model" without any transformer underneath.
class HashScorer : public StepScorer {
 public:
  HashScorer(std::uint64_t seed, std::int32_t vocab) : seed_(seed), vocab_(vocab) {}

  std::int32_t vocab_size() const override { return vocab_; }

  std::vector<double> log_probs(std::span<const std::int32_t> prefix) override {
    std::uint64_t h = seed_ * 0x9e3779b97f4a7c15ull + 0x2545f4914f6cdd1dull;
    for (auto id : prefix) {
      h ^= static_cast<std::uint64_t>(id) + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    }
    Rng rng(h);
    std::vector<double> logits(static_cast<std::size_t>(vocab_));
    for (auto& v : logits) v = rng.uniform(-3.0, 3.0);
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double z = 0;
    for (double v : logits) z += std::exp(v - mx);
    const double lse = mx + std::log(z);
    for (auto& v : logits) v -= lse;
    return logits;
  }

 private:
  std::uint64_t seed_;
  std::int32_t vocab_;
};

// Fixed two-step table: position 0 and position 1 distributions, hand-set.
class TableScorer : public StepScorer {
 public:
  explicit TableScorer(std::map<std::vector<std::int32_t>, std::vector<double>> table)
      : table_(std::move(table)) {}
  std::int32_t vocab_size() const override { return 3; }
  std::vector<double> log_probs(std::span<const std::int32_t> prefix) override {
    std::vector<std::int32_t> key(prefix.begin(), prefix.end());
    auto it = table_.find(key);
    if (it == table_.end()) return {std::log(1.0), std::log(1e-30), std::log(1e-30)};
    std::vector<double> lp;
    for (double p : it->second) lp.push_back(std::log(p));
    return lp;
  }

 private:
  std::map<std::vector<std::int32_t>, std::vector<double>> table_;
};

const std::vector<std::int32_t> no_forbidden;

}  // namespace

TEST_CASE("beam=1 equals greedy argmax decoding") {
  for (std::uint64_t seed = 1; seed <= 25; ++seed) {
    HashScorer scorer(seed, 5);
    auto beam1 = beam_search(scorer, /*eos=*/0, no_forbidden, 1, 6);

    // explicit greedy loop
    std::vector<std::int32_t> greedy;
    double gscore = 0;
    for (int step = 0; step < 6; ++step) {
      auto lp = scorer.log_probs(greedy);
      std::int32_t best = 0;
      for (std::int32_t i = 1; i < 5; ++i) {
        if (lp[static_cast<std::size_t>(i)] > lp[static_cast<std::size_t>(best)]) best = i;
      }
      greedy.push_back(best);
      gscore += lp[static_cast<std::size_t>(best)];
      if (best == 0) break;
    }
    CHECK(beam1.tokens == greedy);
    CHECK(beam1.score == doctest::Approx(gscore).epsilon(1e-12));
  }
}

TEST_CASE("two-step hand-set distributions match exhaustive enumeration") {
  // eos = 0. At the start, token 1 looks best; after token 2 the model is
  // nearly certain about eos, so the best complete path is [2, 0].
  std::map<std::vector<std::int32_t>, std::vector<double>> table;
  table[{}] = {0.10, 0.50, 0.40};        // start
  table[{1}] = {0.30, 0.35, 0.35};       // after token 1
  table[{2}] = {0.90, 0.05, 0.05};       // after token 2
  TableScorer scorer(table);

  auto best = brute_force_best(scorer, 0, no_forbidden, 2);
  // by hand: [0] = 0.10; [1,0] = 0.5*0.3 = 0.15; [2,0] = 0.4*0.9 = 0.36
  CHECK(best.tokens == std::vector<std::int32_t>{2, 0});
  CHECK(best.score == doctest::Approx(std::log(0.36)).epsilon(1e-12));

  auto beam = beam_search(scorer, 0, no_forbidden, 9, 2);
  CHECK(beam.tokens == best.tokens);
  CHECK(beam.score == doctest::Approx(best.score).epsilon(1e-12));
}

TEST_CASE("beam search with an exhaustive budget equals brute force") {
  Rng meta(99);
  for (int instance = 0; instance < 50; ++instance) {
    const std::int32_t vocab = static_cast<std::int32_t>(3 + meta.below(4));  // 3..6
    const std::int64_t max_len = static_cast<std::int64_t>(2 + meta.below(3));  // 2..4
    HashScorer scorer(1000 + static_cast<std::uint64_t>(instance), vocab);
    std::int64_t budget = 1;
    for (std::int64_t i = 0; i < max_len; ++i) budget *= vocab;
    auto exact = brute_force_best(scorer, 0, no_forbidden, max_len);
    auto beam = beam_search(scorer, 0, no_forbidden, budget, max_len);
    REQUIRE(!exact.tokens.empty());
    CHECK(beam.tokens == exact.tokens);
    CHECK(beam.score == doctest::Approx(exact.score).epsilon(1e-12));
  }
}

TEST_CASE("beam scores are monotone and dominate greedy") {
  // dominance is compared on finished results: an unfinished fallback has
  // not paid its EOS cost and would make the comparison meaningless
  int compared = 0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    HashScorer scorer(seed, 6);
    auto b1 = beam_search(scorer, 0, no_forbidden, 1, 30);
    auto b4 = beam_search(scorer, 0, no_forbidden, 4, 30);
    CHECK(b1.score <= 0.0);  // sums of log-probabilities
    CHECK(b4.score <= 0.0);
    if (!b1.finished || !b4.finished) continue;
    ++compared;
    CHECK(b4.score >= b1.score - 1e-12);  // wider beams never score worse
  }
  CHECK(compared >= 90);
}

TEST_CASE("output carries no forbidden ids and one terminal EOS at most") {
  const std::vector<std::int32_t> forbidden{3, 4};
  for (std::uint64_t seed = 70; seed < 90; ++seed) {
    HashScorer scorer(seed, 6);
    auto hyp = beam_search(scorer, 0, forbidden, 4, 5);
    std::int64_t eos_count = 0;
    for (std::size_t i = 0; i < hyp.tokens.size(); ++i) {
      CHECK(hyp.tokens[i] != 3);
      CHECK(hyp.tokens[i] != 4);
      if (hyp.tokens[i] == 0) {
        ++eos_count;
        CHECK(i + 1 == hyp.tokens.size());  // terminal only
      }
    }
    CHECK(eos_count <= 1);
  }
}

// ---------------------------------------------------------------- ensemble

TEST_CASE("ensemble of identical members equals the single model") {
  std::vector<double> p{0.2, 0.5, 0.3};
  auto lp = ensemble_log_probs({p, p, p, p, p});
  for (std::size_t i = 0; i < p.size(); ++i) {
    CHECK(lp[i] == doctest::Approx(std::log(p[i])).epsilon(1e-6));
  }
}

TEST_CASE("ensemble averages probabilities arithmetically") {
  auto lp = ensemble_log_probs({{1.0, 0.0}, {0.0, 1.0}});
  CHECK(std::exp(lp[0]) == doctest::Approx(0.5));
  CHECK(std::exp(lp[1]) == doctest::Approx(0.5));
}

TEST_CASE("averaged ensemble distribution sums to one") {
  Rng rng(7);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<std::vector<double>> members;
    for (int m = 0; m < 3; ++m) {
      std::vector<double> p(8);
      double z = 0;
      for (auto& v : p) {
        v = rng.uniform(0.0, 1.0);
        z += v;
      }
      for (auto& v : p) v /= z;
      members.push_back(std::move(p));
    }
    auto lp = ensemble_log_probs(members);
    double total = 0;
    for (double v : lp) total += std::exp(v);
    CHECK(std::abs(total - 1.0) < 1e-6);
  }
}

TEST_CASE("ensemble rejects vocab-size disagreement") {
  CHECK_THROWS_AS(ensemble_log_probs({{0.5, 0.5}, {1.0, 0.0, 0.0}}), DataError);
}

// ------------------------------------------------------ transformer-backed

namespace {

ModelConfig tiny_config(std::int64_t vocab) {
  ModelConfig cfg;
  cfg.n_layers = 1;
  cfg.d_model = 8;
  cfg.d_ffn = 16;
  cfg.n_heads = 2;
  cfg.dropout = 0.0;
  cfg.max_positions = 64;
  cfg.vocab_size = vocab;
  return cfg;
}

}  // namespace

TEST_CASE("transformer ensemble scorer: beam equals brute force; masks hold") {
  const std::int64_t vocab = 6;  // specials + tokens 4,5; nothing disallowed here
  std::vector<char> allowed(6, 1);
  allowed[5] = 0;  // token 5 never appears in PE output
  Model<float> m1(tiny_config(vocab), allowed, Rng(1));
  Model<float> m2(tiny_config(vocab), allowed, Rng(2));
  std::vector<const Model<float>*> models{&m1, &m2};

  std::vector<std::int32_t> src{1, 4, 5, 2}, mt{1, 4, 2};
  EnsembleScorer<float> scorer(models, src, mt);
  auto lp = scorer.log_probs({});
  CHECK(lp.size() == 6);
  CHECK(lp[5] == -std::numeric_limits<double>::infinity());  // bias-masked token

  const std::vector<std::int32_t> forbidden{Vocabulary::pad_id, Vocabulary::bos_id};
  auto exact = brute_force_best(scorer, Vocabulary::eos_id, forbidden, 3);
  auto beam = beam_search(scorer, Vocabulary::eos_id, forbidden, 6 * 6 * 6, 3);
  CHECK(beam.tokens == exact.tokens);
  for (auto tok : beam.tokens) CHECK(tok != 5);
}

TEST_CASE("decode_corpus is deterministic, thread-stable, and joins subwords") {
  const std::vector<std::string> side{"aa@@ bb cc", "bb cc", "aa@@ cc dd"};
  auto vocab = build_vocabulary({&side}, side);
  std::vector<char> allowed = vocab.pe_allowed();
  Model<float> model(tiny_config(vocab.size()), allowed, Rng(5));
  std::vector<const Model<float>*> models{&model};

  const std::vector<std::string> src{"aa@@ bb", "cc dd"};
  const std::vector<std::string> mt{"bb cc", "aa@@ cc"};
  DecodeOptions opts;
  opts.beam = 2;
  opts.max_len_margin = 4;

  auto out1 = decode_corpus(models, vocab, src, mt, opts);
  auto out2 = decode_corpus(models, vocab, src, mt, opts);
  CHECK(out1 == out2);

  DecodeOptions threaded = opts;
  threaded.threads = 2;
  CHECK(decode_corpus(models, vocab, src, mt, threaded) == out1);

  for (const auto& line : out1) {
    CHECK(line.find("@@") == std::string::npos);  // markers joined away
    CHECK(line.find("<pad>") == std::string::npos);
  }

  CHECK_THROWS_AS(decode_corpus(models, vocab, {""}, {"bb"}, opts), DataError);
  CHECK_THROWS_AS(decode_corpus(models, vocab, {"bb", "cc"}, {"bb"}, opts), DataError);
}
