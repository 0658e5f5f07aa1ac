// Tensor engine: frozen hand oracles, finite-difference gradient checks, and
// the stochastic-op laws.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <vector>

#include "ape/autodiff.hpp"
#include "ape/gradcheck.hpp"
#include "ape/rng.hpp"
#include "ape/tensor.hpp"

using namespace ape;

namespace {

Tensor<double> random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0,
                             bool requires_grad = false) {
  Tensor<double> t(std::move(s), requires_grad);
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace

// ---------------------------------------------------------------- matmul ---

TEST_CASE("matmul identity and hand arithmetic") {
  Graph<double> g(false);
  auto a = Tensor<double>::from({2, 2}, {1, 2, 3, 4});
  auto eye = Tensor<double>::from({2, 2}, {1, 0, 0, 1});
  CHECK(g.matmul(a, eye).values() == std::vector<double>{1, 2, 3, 4});

  auto row = Tensor<double>::from({1, 2}, {1, 2});
  auto col = Tensor<double>::from({2, 1}, {3, 4});
  CHECK(g.matmul(row, col).item() == doctest::Approx(11.0));  // 1*3 + 2*4
}

TEST_CASE("matmul rejects mismatched shapes naming both") {
  Graph<double> g(false);
  auto a = Tensor<double>::zeros({2, 3});
  auto b = Tensor<double>::zeros({4, 2});
  try {
    g.matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[4,2]") != std::string::npos);
  }
}

TEST_CASE("matmul gradient matches central differences") {
  Rng rng(3);
  auto b = random_tensor({4, 2}, rng);
  auto x = random_tensor({3, 4}, rng, -1, 1, true);
  const double err_a = grad_check(
      [&](Graph<double>& g, Tensor<double>& t) { return g.sum(g.matmul(t, b)); }, x);
  CHECK(err_a < 1e-4);

  auto a = random_tensor({3, 4}, rng);
  auto y = random_tensor({4, 2}, rng, -1, 1, true);
  const double err_b = grad_check(
      [&](Graph<double>& g, Tensor<double>& t) { return g.sum(g.matmul(a, t)); }, y);
  CHECK(err_b < 1e-4);
}

TEST_CASE("batched matmul broadcasts a 2-d rhs") {
  Rng rng(5);
  auto a = random_tensor({2, 3, 4}, rng, -1, 1, true);
  auto b = random_tensor({4, 5}, rng, -1, 1, true);
  Graph<double> g;
  auto out = g.matmul(a, b);
  REQUIRE(out.shape() == Shape{2, 3, 5});
  // same result as slicing the batch by hand
  Graph<double> g2(false);
  for (int i = 0; i < 2; ++i) {
    auto slice = Tensor<double>::from(
        {3, 4}, std::vector<double>(a.data() + i * 12, a.data() + (i + 1) * 12));
    auto ref = g2.matmul(slice, b);
    for (int j = 0; j < 15; ++j) CHECK(out.at(i * 15 + j) == doctest::Approx(ref.at(j)));
  }
  const double err = grad_check_many(
      [&](Graph<double>& gg) { return gg.sum(gg.matmul(a, b)); }, {&a, &b});
  CHECK(err < 1e-4);
}

// --------------------------------------------------------------- softmax ---

TEST_CASE("softmax frozen values") {
  Graph<double> g(false);
  auto sym = g.softmax(Tensor<double>::from({2}, {0, 0}), 0);
  CHECK(sym.at(0) == doctest::Approx(0.5));
  CHECK(sym.at(1) == doctest::Approx(0.5));

  auto s = g.softmax(Tensor<double>::from({3}, {1, 2, 3}), 0);
  CHECK(s.at(0) == doctest::Approx(0.09003).epsilon(1e-5));
  CHECK(s.at(1) == doctest::Approx(0.24473).epsilon(1e-5));
  CHECK(s.at(2) == doctest::Approx(0.66524).epsilon(1e-5));

  // the masked-logit limit used by the classifier bias
  auto masked = g.softmax(Tensor<double>::from({2}, {0.0, -1e32}), 0);
  CHECK(masked.at(0) == 1.0);
  CHECK(masked.at(1) == 0.0);

  auto inf = g.softmax(
      Tensor<double>::from({2}, {0.0, -std::numeric_limits<double>::infinity()}), 0);
  CHECK(inf.at(0) == 1.0);
  CHECK(inf.at(1) == 0.0);
}

TEST_CASE("softmax slices sum to one under large magnitudes") {
  Rng rng(17);
  Graph<double> g(false);
  for (int rep = 0; rep < 20; ++rep) {
    auto x = random_tensor({4, 7}, rng, -1e4, 1e4);
    auto y = g.softmax(x, 1);
    for (int r = 0; r < 4; ++r) {
      double s = 0;
      for (int c = 0; c < 7; ++c) {
        const double p = y.at(r * 7 + c);
        CHECK(p >= 0.0);
        s += p;
      }
      CHECK(std::abs(s - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("softmax along a non-trailing axis") {
  Graph<double> g(false);
  auto x = Tensor<double>::from({2, 2}, {0, 10, 0, 10});  // axis 0: columns equal
  auto y = g.softmax(x, 0);
  for (int i = 0; i < 4; ++i) CHECK(y.at(i) == doctest::Approx(0.5));
}

TEST_CASE("softmax gradient") {
  Rng rng(23);
  auto w = random_tensor({3, 5}, rng);
  auto x = random_tensor({3, 5}, rng, -2, 2, true);
  const double err = grad_check(
      [&](Graph<double>& g, Tensor<double>& t) { return g.sum(g.mul(g.softmax(t, 1), w)); }, x);
  CHECK(err < 1e-4);
}

// ------------------------------------------------------------ layer norm ---

TEST_CASE("layer_norm frozen values") {
  Graph<double> g(false);
  auto gain = Tensor<double>::from({2}, {1, 1});
  auto bias = Tensor<double>::from({2}, {0, 0});
  auto out = g.layer_norm(Tensor<double>::from({1, 2}, {1, 3}), gain, bias, 0.0);
  CHECK(out.at(0) == doctest::Approx(-1.0));  // mean 2, population stdev 1
  CHECK(out.at(1) == doctest::Approx(1.0));

  // constant row maps to zero before gain/bias
  auto gain4 = Tensor<double>::from({4}, {2, 2, 2, 2});
  auto bias4 = Tensor<double>::from({4}, {0.5, 0.5, 0.5, 0.5});
  auto flat = g.layer_norm(Tensor<double>::full({1, 4}, 3.25), gain4, bias4, 1e-5);
  for (int i = 0; i < 4; ++i) CHECK(flat.at(i) == doctest::Approx(0.5));
}

TEST_CASE("layer_norm gradient") {
  Rng rng(29);
  auto w = random_tensor({4, 6}, rng);
  auto gain = random_tensor({6}, rng, 0.5, 1.5, true);
  auto bias = random_tensor({6}, rng, -0.2, 0.2, true);
  auto x = random_tensor({4, 6}, rng, -2, 2, true);
  const double err = grad_check_many(
      [&](Graph<double>& g) {
        return g.sum(g.mul(g.layer_norm(x, gain, bias, 1e-5), w));
      },
      {&x, &gain, &bias});
  CHECK(err < 1e-4);
}

// ------------------------------------------------------------- attention ---

TEST_CASE("attention identity cases") {
  Graph<double> g(false);
  // one query equal to the one key: softmax over a single score is 1
  auto q = Tensor<double>::from({1, 1, 3}, {0.3, -0.7, 1.1});
  auto v = Tensor<double>::from({1, 1, 3}, {5, 6, 7});
  auto out = g.attention(q, q, v, nullptr);
  for (int i = 0; i < 3; ++i) CHECK(out.at(i) == doctest::Approx(v.at(i)));

  // two keys with the second masked off: output is value row 1 exactly
  auto k2 = Tensor<double>::from({1, 2, 2}, {1, 0, 0, 1});
  auto v2 = Tensor<double>::from({1, 2, 2}, {10, 20, 30, 40});
  auto q2 = Tensor<double>::from({1, 1, 2}, {0.2, 0.4});
  auto mask = Tensor<double>::from({2}, {0.0, -std::numeric_limits<double>::infinity()});
  auto picked = g.attention(q2, k2, v2, &mask);
  CHECK(picked.at(0) == 10.0);
  CHECK(picked.at(1) == 20.0);
}

TEST_CASE("attention equals the brute-force per-head loop") {
  Rng rng(31);
  const int heads = 2, lq = 3, lk = 4, dh = 5;
  auto q = random_tensor({heads, lq, dh}, rng);
  auto k = random_tensor({heads, lk, dh}, rng);
  auto v = random_tensor({heads, lk, dh}, rng);
  Graph<double> g(false);
  auto out = g.attention(q, k, v, nullptr);

  // independent oracle: per-head, per-query scalar loops
  for (int h = 0; h < heads; ++h) {
    for (int i = 0; i < lq; ++i) {
      std::vector<double> score(lk);
      double mx = -1e300;
      for (int j = 0; j < lk; ++j) {
        double s = 0;
        for (int d = 0; d < dh; ++d) s += q.at((h * lq + i) * dh + d) * k.at((h * lk + j) * dh + d);
        score[j] = s / std::sqrt(double(dh));
        mx = std::max(mx, score[j]);
      }
      double z = 0;
      for (int j = 0; j < lk; ++j) z += std::exp(score[j] - mx);
      for (int d = 0; d < dh; ++d) {
        double acc = 0;
        for (int j = 0; j < lk; ++j) {
          acc += std::exp(score[j] - mx) / z * v.at((h * lk + j) * dh + d);
        }
        CHECK(out.at((h * lq + i) * dh + d) == doctest::Approx(acc).epsilon(1e-10));
      }
    }
  }
}

TEST_CASE("attention gradient through all inputs") {
  Rng rng(37);
  auto q = random_tensor({2, 2, 3}, rng, -1, 1, true);
  auto k = random_tensor({2, 3, 3}, rng, -1, 1, true);
  auto v = random_tensor({2, 3, 3}, rng, -1, 1, true);
  auto w = random_tensor({2, 2, 3}, rng);
  const double err = grad_check_many(
      [&](Graph<double>& g) { return g.sum(g.mul(g.attention(q, k, v, nullptr), w)); },
      {&q, &k, &v});
  CHECK(err < 1e-4);
}

// --------------------------------------------------------------- dropout ---

TEST_CASE("dropout identities") {
  Rng rng(41);
  Graph<double> g(false);
  auto x = random_tensor({50}, rng);
  auto same_p0 = g.dropout(x, 0.0, true, rng);
  CHECK(same_p0.shares_storage_with(x));  // bitwise identity
  auto same_eval = g.dropout(x, 0.7, false, rng);
  CHECK(same_eval.shares_storage_with(x));
  CHECK_THROWS_AS(g.dropout(x, 1.0, true, rng), ConfigError);
  CHECK_THROWS_AS(g.dropout(x, -0.1, true, rng), ConfigError);
}

TEST_CASE("dropout keeps the mean and zeroes the right fraction") {
  Rng rng(43);
  Graph<double> g(false);
  auto ones = Tensor<double>::full({100000}, 1.0);
  auto out = g.dropout(ones, 0.5, true, rng);
  double sum = 0;
  std::int64_t zeros = 0;
  for (auto v : out.values()) {
    sum += v;
    if (v == 0.0) ++zeros;
  }
  CHECK(std::abs(sum / 1e5 - 1.0) < 0.02);
  CHECK(std::abs(double(zeros) / 1e5 - 0.5) < 0.01);
}

TEST_CASE("dropout backward uses the sampled mask") {
  Rng rng(47);
  Graph<double> g;
  auto x = Tensor<double>::full({1000}, 2.0, true);
  auto out = g.dropout(x, 0.25, true, rng);
  auto loss = g.sum(out);
  g.backward(loss);
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    if (out.at(i) == 0.0) {
      CHECK(x.grad()[i] == 0.0);
    } else {
      CHECK(x.grad()[i] == doctest::Approx(1.0 / 0.75));
    }
  }
}

// -------------------------------------------------------- adaptive noise ---

TEST_CASE("adaptive noise hand example and zero-strength identity") {
  Graph<double> g(false);
  auto x = Tensor<double>::from({2, 2}, {1, -1, 2, 0});
  CHECK(mean_abs(x) == doctest::Approx(1.0));

  auto ones = Tensor<double>::full({2, 2}, 1.0);
  auto noised = g.add_adaptive_noise(x, 0.2, ones);
  CHECK(noised.at(0) == doctest::Approx(1.2));
  CHECK(noised.at(1) == doctest::Approx(-0.8));
  CHECK(noised.at(2) == doctest::Approx(2.2));
  CHECK(noised.at(3) == doctest::Approx(0.2));

  auto same = g.add_adaptive_noise(x, 0.0, ones);
  CHECK(same.shares_storage_with(x));  // bitwise identity at strength 0

  CHECK_THROWS_AS(g.add_adaptive_noise(x, -0.5, ones), ConfigError);
}

TEST_CASE("adaptive noise backward is the identity") {
  Rng rng(53);
  auto x = random_tensor({3, 4}, rng, -2, 2, true);
  auto noise = random_tensor({3, 4}, rng);
  Graph<double> g;
  auto w = random_tensor({3, 4}, rng);
  auto loss = g.sum(g.mul(g.add_adaptive_noise(x, 0.7, noise), w));
  g.backward(loss);
  // d(loss)/dx must equal w exactly: the noise scale is a constant
  for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(x.grad()[i] == doctest::Approx(w.at(i)));
}

TEST_CASE("mean_abs scales exactly with power-of-two input scaling") {
  Rng rng(59);
  auto x = random_tensor({37}, rng, -3, 3);
  auto x2 = x.clone();
  for (auto& v : x2.values()) v *= 2.0;
  CHECK(mean_abs(x2) == 2.0 * mean_abs(x));  // exact in IEEE arithmetic
}

// ------------------------------------------------------------- embedding ---

TEST_CASE("embedding lookup, shared-storage gradient, id range error") {
  auto table = Tensor<double>::from({3, 2}, {0, 1, 10, 11, 20, 21}, true);
  Graph<double> g;
  std::vector<std::int32_t> ids{2, 0, 2};
  auto out = g.embedding(table, ids);
  CHECK(out.shape() == Shape{3, 2});
  CHECK(out.at(0) == 20.0);
  CHECK(out.at(5) == 21.0);

  auto loss = g.sum(out);
  g.backward(loss);
  CHECK(table.grad()[0] == 1.0);  // row 0 used once
  CHECK(table.grad()[2] == 0.0);  // row 1 unused
  CHECK(table.grad()[4] == 2.0);  // row 2 used twice

  std::vector<std::int32_t> bad{3};
  CHECK_THROWS_AS(g.embedding(table, bad), VocabError);
}

// --------------------------------------------------- smoothed cross entropy

TEST_CASE("smoothed cross entropy: uniform prediction costs ln K for any eps") {
  // 4 allowed non-pad tokens, pad and the disallowed one driven to -1e32
  const std::vector<char> allowed{1, 1, 1, 1, 1, 0};
  auto logits = Tensor<double>::from({1, 6}, {-1e32, 0, 0, 0, 0, -1e32});
  std::vector<std::int32_t> t{2};
  Graph<double> g(false);
  for (double eps : {0.0, 0.1, 0.4}) {
    auto r = g.smoothed_cross_entropy(logits, t, eps, allowed, 0);
    CHECK(r.tokens == 1);
    CHECK(r.loss_sum.item() == doctest::Approx(std::log(4.0)).epsilon(1e-9));
  }
}

TEST_CASE("smoothed cross entropy: frozen smoothing arithmetic") {
  // eps=0.1, K=4 allowed: q = [0.9, 0.0333.., 0.0333.., 0.0333..] gold-first
  const std::vector<char> allowed{1, 1, 1, 1, 1};  // id 0 is PAD
  auto logits = Tensor<double>::from({1, 5}, {-1e32, 0.7, -0.3, 1.9, 0.2});
  std::vector<std::int32_t> t{1};
  Graph<double> g(false);
  auto r = g.smoothed_cross_entropy(logits, t, 0.1, allowed, 0);

  // independent arithmetic: q built by hand, log-softmax via direct formula
  const double row[5] = {-1e32, 0.7, -0.3, 1.9, 0.2};
  double z = 0;
  for (double v : row) z += std::exp(v - 1.9);
  const double lse = 1.9 + std::log(z);
  const double q[5] = {0.0, 0.9, 0.1 / 3, 0.1 / 3, 0.1 / 3};
  double expect = 0;
  for (int i = 0; i < 5; ++i) expect -= q[i] * (row[i] - lse);
  CHECK(r.loss_sum.item() == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("smoothed cross entropy edge cases") {
  const std::vector<char> allowed{1, 1, 1, 0};
  Graph<double> g(false);

  // eps=0 with a near-one-hot prediction drives the loss to zero
  auto sharp = Tensor<double>::from({1, 4}, {-50, 60, -50, -1e32});
  std::vector<std::int32_t> gold{1};
  CHECK(g.smoothed_cross_entropy(sharp, gold, 0.0, allowed, 0).loss_sum.item() <
        1e-12);

  // PAD targets are skipped
  std::vector<std::int32_t> pads{0};
  auto skip = g.smoothed_cross_entropy(sharp, pads, 0.1, allowed, 0);
  CHECK(skip.tokens == 0);
  CHECK(skip.loss_sum.item() == 0.0);

  // disallowed gold token is a corpus/vocabulary mismatch
  std::vector<std::int32_t> badgold{3};
  CHECK_THROWS_AS(g.smoothed_cross_entropy(sharp, badgold, 0.1, allowed, 0), DataError);
}

TEST_CASE("smoothed cross entropy assigns zero mass to disallowed tokens") {
  // leave the disallowed logit finite: its softmax probability is > 0, so a
  // zero gradient there can only come from q == p... instead verify via the
  // gradient identity d/dlogit = p - q: at the disallowed index it must equal
  // p exactly (q = 0).
  const std::vector<char> allowed{1, 1, 0, 1};
  auto logits = Tensor<double>::from({1, 4}, {0.1, 0.4, 0.9, -0.2}, true);
  std::vector<std::int32_t> t{1};
  Graph<double> g;
  auto r = g.smoothed_cross_entropy(logits, t, 0.2, allowed, 0);
  g.backward(r.loss_sum);

  double z = 0;
  for (int i = 0; i < 4; ++i) z += std::exp(logits.at(i));
  const double p_disallowed = std::exp(logits.at(2)) / z;
  CHECK(logits.grad()[2] == doctest::Approx(p_disallowed).epsilon(1e-12));
}

TEST_CASE("smoothed cross entropy gradient vs finite differences") {
  Rng rng(61);
  const std::vector<char> allowed{1, 1, 1, 1, 0, 1};
  std::vector<std::int32_t> targets{1, 3, 5};
  auto x = random_tensor({3, 6}, rng, -2, 2, true);
  const double err = grad_check(
      [&](Graph<double>& g, Tensor<double>& t) {
        return g.smoothed_cross_entropy(t, targets, 0.1, allowed, 0).loss_sum;
      },
      x);
  CHECK(err < 1e-4);
}

// ------------------------------------------------------------ tape basics ---

TEST_CASE("grad_check on sum has near-zero error") {
  Rng rng(67);
  auto x = random_tensor({4, 3}, rng, -1, 1, true);
  const double err =
      grad_check([](Graph<double>& g, Tensor<double>& t) { return g.sum(t); }, x);
  CHECK(err < 1e-8);
}

TEST_CASE("backward of a sum of two graphs equals the sum of separate backwards") {
  Rng rng(71);
  auto base = random_tensor({20}, rng, 0.2, 2.0);

  auto x1 = base.clone();
  x1.set_requires_grad(true);
  Graph<double> g;
  auto joint = g.add(g.scale(g.sum(g.relu(x1)), 0.7), g.sum(x1));
  g.backward(joint);

  auto x2 = base.clone();
  x2.set_requires_grad(true);
  Graph<double> ga, gb;
  auto la = ga.scale(ga.sum(ga.relu(x2)), 0.7);
  auto lb = gb.sum(x2);
  ga.backward(la);
  gb.backward(lb);

  for (std::int64_t i = 0; i < base.numel(); ++i) CHECK(x1.grad()[i] == x2.grad()[i]);
}

TEST_CASE("backward with a scaled seed matches scaling the loss") {
  Rng rng(73);
  auto x = random_tensor({8}, rng, -1, 1, true);
  Graph<double> g;
  auto loss = g.sum(g.relu(x));
  g.backward(loss, 0.25);
  auto y = x.clone();
  y.set_requires_grad(true);
  y.zero_grad();
  Graph<double> g2;
  auto loss2 = g2.scale(g2.sum(g2.relu(y)), 0.25);
  g2.backward(loss2);
  for (std::int64_t i = 0; i < 8; ++i) CHECK(x.grad()[i] == doctest::Approx(y.grad()[i]));
}

TEST_CASE("remaining ops pass finite-difference checks") {
  Rng rng(79);
  auto w3 = random_tensor({2, 3, 4}, rng);

  auto x1 = random_tensor({2, 3, 4}, rng, 0.3, 2.0, true);  // away from relu kink
  CHECK(grad_check([&](Graph<double>& g, Tensor<double>& t) {
          return g.sum(g.mul(g.relu(t), w3));
        }, x1) < 1e-4);

  auto x2 = random_tensor({2, 3, 4}, rng, -1, 1, true);
  auto wt = random_tensor({2, 4, 3}, rng);
  CHECK(grad_check([&](Graph<double>& g, Tensor<double>& t) {
          return g.sum(g.mul(g.transpose_last2(t), wt));
        }, x2) < 1e-4);

  auto x3 = random_tensor({4, 6}, rng, -1, 1, true);
  auto wh = random_tensor({4, 6}, rng);
  CHECK(grad_check([&](Graph<double>& g, Tensor<double>& t) {
          return g.sum(g.mul(g.merge_heads(g.split_heads(t, 3)), wh));
        }, x3) < 1e-4);

  auto v = random_tensor({5}, rng, -1, 1, true);
  auto rows = random_tensor({3, 5}, rng);
  auto wr = random_tensor({3, 5}, rng);
  CHECK(grad_check([&](Graph<double>& g, Tensor<double>& t) {
          return g.sum(g.mul(g.add_rowvec(rows, t), wr));
        }, v) < 1e-4);
}
