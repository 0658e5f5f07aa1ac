// Multi-source transformer: embedding/positional behavior, masking,
// causality, tied classifier, adaptive noise statistics, gradient integrity.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "ape/gradcheck.hpp"
#include "ape/model.hpp"

using namespace ape;

namespace {

ModelConfig toy_config(std::int64_t layers = 2, std::int64_t vocab = 12) {
  ModelConfig cfg;
  cfg.n_layers = layers;
  cfg.d_model = 8;
  cfg.d_ffn = 16;
  cfg.n_heads = 2;
  cfg.dropout = 0.1;
  cfg.max_positions = 32;
  cfg.vocab_size = vocab;
  return cfg;
}

// ids >= 8 are never-in-PE tokens
std::vector<char> toy_allowed(std::int64_t vocab = 12) {
  std::vector<char> allowed(static_cast<std::size_t>(vocab), 1);
  for (std::size_t i = 8; i < allowed.size(); ++i) allowed[i] = 0;
  return allowed;
}

template <class T>
Model<T> toy_model(std::uint64_t seed = 11, std::int64_t layers = 2, std::int64_t vocab = 12) {
  return Model<T>(toy_config(layers, vocab), toy_allowed(vocab), Rng(seed));
}

const std::vector<char> no_pads;

}  // namespace

TEST_CASE("config validation") {
  ModelConfig bad = toy_config();
  bad.d_model = 9;  // not divisible by 2 heads
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  ModelConfig neg = toy_config();
  neg.vocab_size = 0;
  CHECK_THROWS_AS(neg.validate(), ConfigError);
}

TEST_CASE("positional encoding at position zero is sin(0)/cos(0)") {
  auto model = toy_model<double>();
  // zero out one embedding row so embed() returns the positional term alone
  auto& emb = model.params().at("embedding");
  for (std::int64_t i = 0; i < 8; ++i) emb.at(5 * 8 + i) = 0.0;
  Graph<double> g(false);
  std::vector<std::int32_t> ids{5};
  auto row = model.embed(g, ids, false, nullptr);
  for (std::int64_t i = 0; i < 8; i += 2) {
    CHECK(row.at(i) == doctest::Approx(0.0));  // sin(0)
    CHECK(row.at(i + 1) == doctest::Approx(1.0));  // cos(0)
  }
}

TEST_CASE("same token at two positions differs only by the positional term") {
  auto model = toy_model<double>();
  Graph<double> g(false);
  std::vector<std::int32_t> ids{7, 7};
  auto rows = model.embed(g, ids, false, nullptr);

  // difference must be independent of the token identity
  std::vector<std::int32_t> other{3, 3};
  auto rows2 = model.embed(g, other, false, nullptr);
  for (std::int64_t i = 0; i < 8; ++i) {
    const double d1 = rows.at(8 + i) - rows.at(i);
    const double d2 = rows2.at(8 + i) - rows2.at(i);
    CHECK(d1 == doctest::Approx(d2).epsilon(1e-12));
  }
}

TEST_CASE("embed shape and id/width limits") {
  auto model = toy_model<double>();
  Graph<double> g(false);
  std::vector<std::int32_t> ids{1, 2, 3, 4, 5};
  CHECK(model.embed(g, ids, false, nullptr).shape() == Shape{5, 8});
  std::vector<std::int32_t> bad{99};
  CHECK_THROWS_AS(model.embed(g, bad, false, nullptr), VocabError);
  std::vector<std::int32_t> too_long(40, 1);
  CHECK_THROWS_AS(model.embed(g, too_long, false, nullptr), DimensionError);
}

TEST_CASE("encoder output shapes") {
  auto model = toy_model<double>();
  Graph<double> g(false);
  std::vector<std::int32_t> src{1, 4, 5, 2};
  std::vector<std::int32_t> mt{1, 6, 2};
  auto src_repr = model.encode_source(g, src, no_pads, false, nullptr);
  CHECK(src_repr.shape() == Shape{4, 8});
  auto mt_repr = model.encode_mt(g, mt, no_pads, src_repr, no_pads, false, nullptr);
  CHECK(mt_repr.shape() == Shape{3, 8});
  std::vector<std::int32_t> prefix{1, 7, 7};
  auto states = model.decode_states(g, prefix, src_repr, no_pads, mt_repr, no_pads, false,
                                    nullptr);
  CHECK(states.shape() == Shape{3, 8});
}

TEST_CASE("a zero-layer stack returns the embedded input") {
  auto model = toy_model<double>(21, 0);
  Graph<double> g(false);
  std::vector<std::int32_t> ids{1, 3, 2};
  auto enc = model.encode_source(g, ids, no_pads, false, nullptr);
  auto emb = model.embed(g, ids, false, nullptr);
  for (std::int64_t i = 0; i < emb.numel(); ++i) CHECK(enc.at(i) == emb.at(i));
}

TEST_CASE("PAD-only tail never leaks into non-PAD encoder outputs") {
  auto model = toy_model<double>();
  Graph<double> g(false);
  std::vector<std::int32_t> trimmed{1, 4, 5, 2};
  auto ref = model.encode_source(g, trimmed, no_pads, false, nullptr);

  std::vector<std::int32_t> padded{1, 4, 5, 2, 0, 0};
  std::vector<char> mask{0, 0, 0, 0, 1, 1};
  auto out = model.encode_source(g, padded, mask, false, nullptr);
  for (std::int64_t i = 0; i < ref.numel(); ++i) {
    CHECK(out.at(i) == doctest::Approx(ref.at(i)).epsilon(1e-12));
  }

  // swapping the ids under the PAD positions changes nothing
  std::vector<std::int32_t> padded2{1, 4, 5, 2, 7, 3};
  auto out2 = model.encode_source(g, padded2, mask, false, nullptr);
  for (std::int64_t i = 0; i < ref.numel(); ++i) CHECK(out2.at(i) == out.at(i));
}

TEST_CASE("zeroed cross-attention projection makes the MT encoder ignore the source") {
  auto model = toy_model<double>(31, 1);
  for (const char* name : {"mt_enc.l0.cross.wo"}) {
    auto& t = model.params().at(name);
    for (auto& v : t.values()) v = 0.0;
  }
  Graph<double> g(false);
  std::vector<std::int32_t> src_a{1, 3, 2}, src_b{1, 6, 7, 2}, mt{1, 5, 2};
  auto ra = model.encode_source(g, src_a, no_pads, false, nullptr);
  auto rb = model.encode_source(g, src_b, no_pads, false, nullptr);
  auto ma = model.encode_mt(g, mt, no_pads, ra, no_pads, false, nullptr);
  auto mb = model.encode_mt(g, mt, no_pads, rb, no_pads, false, nullptr);
  for (std::int64_t i = 0; i < ma.numel(); ++i) CHECK(ma.at(i) == doctest::Approx(mb.at(i)));
}

TEST_CASE("gradient reaches source-encoder parameters through the MT encoder") {
  auto model = toy_model<double>(33, 1);
  Graph<double> g;
  std::vector<std::int32_t> src{1, 4, 2}, mt{1, 6, 5, 2};
  auto src_repr = model.encode_source(g, src, no_pads, false, nullptr);
  auto mt_repr = model.encode_mt(g, mt, no_pads, src_repr, no_pads, false, nullptr);
  auto loss = g.sum(mt_repr);
  g.backward(loss);
  const auto& wq = model.params().at("src_enc.l0.self.wq");
  double norm = 0;
  for (std::int64_t i = 0; i < wq.numel(); ++i) norm += std::abs(wq.grad()[i]);
  CHECK(norm > 0.0);
}

TEST_CASE("decoder states are causal") {
  auto model = toy_model<double>();
  Graph<double> g(false);
  std::vector<std::int32_t> src{1, 3, 2}, mt{1, 4, 2};
  auto src_repr = model.encode_source(g, src, no_pads, false, nullptr);
  auto mt_repr = model.encode_mt(g, mt, no_pads, src_repr, no_pads, false, nullptr);

  std::vector<std::int32_t> p1{1, 5, 6, 7};
  std::vector<std::int32_t> p2{1, 5, 3, 4};  // diverges after position 1
  auto s1 = model.decode_states(g, p1, src_repr, no_pads, mt_repr, no_pads, false, nullptr);
  auto s2 = model.decode_states(g, p2, src_repr, no_pads, mt_repr, no_pads, false, nullptr);
  for (std::int64_t pos = 0; pos < 2; ++pos) {
    for (std::int64_t i = 0; i < 8; ++i) {
      CHECK(s1.at(pos * 8 + i) == doctest::Approx(s2.at(pos * 8 + i)).epsilon(1e-12));
    }
  }
}

TEST_CASE("classifier ties to the embedding storage and masks disallowed tokens") {
  auto model = toy_model<float>();
  Graph<float> g(false);
  std::vector<std::int32_t> src{1, 3, 2}, mt{1, 4, 2}, prefix{1, 5};
  auto src_repr = model.encode_source(g, src, no_pads, false, nullptr);
  auto mt_repr = model.encode_mt(g, mt, no_pads, src_repr, no_pads, false, nullptr);
  auto states = model.decode_states(g, prefix, src_repr, no_pads, mt_repr, no_pads, false,
                                    nullptr);
  auto logits = model.logits(g, states);
  CHECK(logits.shape() == Shape{2, 12});

  // at 32-bit the disallowed probability is exactly zero
  auto probs = g.softmax(logits, -1);
  for (std::int64_t pos = 0; pos < 2; ++pos) {
    for (std::int64_t tok = 8; tok < 12; ++tok) CHECK(probs.at(pos * 12 + tok) == 0.0f);
  }

  // mutating E moves both the lookup and the classifier column
  auto before = logits.at(3);
  auto& emb = model.params().at("embedding");
  for (std::int64_t i = 0; i < 8; ++i) emb.at(3 * 8 + i) += 1.0f;
  auto logits2 = model.logits(g, states);
  CHECK(logits2.at(3) != before);
  Graph<float> g2(false);
  std::vector<std::int32_t> tok3{3};
  auto row = g2.embedding(emb, tok3);
  CHECK(row.shares_storage_with(emb) == false);  // copy, but from updated storage
  CHECK(row.at(0) == emb.at(3 * 8));
}

TEST_CASE("bias mask survives re-application after parameter mutation") {
  auto model = toy_model<float>();
  auto& bias = model.params().at("classifier_bias");
  for (std::int64_t i = 0; i < bias.numel(); ++i) bias.at(i) = 0.5f;
  model.apply_bias_mask();
  for (std::int64_t i = 0; i < 12; ++i) {
    if (i >= 8) {
      CHECK(bias.at(i) == static_cast<float>(kBiasMaskValue));
    } else {
      CHECK(bias.at(i) == 0.5f);
    }
  }
}

TEST_CASE("identical seeds give identical parameters") {
  auto a = toy_model<double>(77);
  auto b = toy_model<double>(77);
  for (const auto& [name, t] : a.params().tensors) {
    CHECK(t.values() == b.params().at(name).values());
  }
}

// ---------------------------------------------------------- noise (model) ---

TEST_CASE("noise perturbation statistics match the configured distribution") {
  Rng rng(99);
  Tensor<double> x({1000, 1000});
  for (auto& v : x.values()) v = rng.uniform(-3.0, 3.0);
  const double m = mean_abs(x);
  Graph<double> g(false);

  NoiseConfig gauss{0.2, NoiseDistribution::gaussian};
  auto n = sample_noise_like(x, gauss, rng);
  auto out = g.add_adaptive_noise(x, gauss.strength, n);
  double sum = 0, sumsq = 0;
  const double count = double(x.numel());
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    const double d = out.at(i) - x.at(i);
    sum += d;
    sumsq += d * d;
  }
  const double mean = sum / count;
  const double std = std::sqrt(sumsq / count - mean * mean);
  CHECK(std::abs(std - gauss.strength * m) < 0.02 * gauss.strength * m);
  // zero-mean noise: the expected perturbation is 0 within 3 standard errors
  CHECK(std::abs(mean) < 3.0 * std / std::sqrt(count));

  NoiseConfig uni{0.2, NoiseDistribution::uniform};
  Rng rng_u(1234);
  auto nu = sample_noise_like(x, uni, rng_u);
  auto out_u = g.add_adaptive_noise(x, uni.strength, nu);
  double sum_u = 0, sumsq_u = 0;
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    const double d = out_u.at(i) - x.at(i);
    sum_u += d;
    sumsq_u += d * d;
  }
  const double mean_u = sum_u / count;
  const double std_u = std::sqrt(sumsq_u / count - mean_u * mean_u);
  // uniform [-1,1] has standard deviation 1/sqrt(3)
  CHECK(std::abs(std_u - uni.strength * m / std::sqrt(3.0)) <
        0.02 * uni.strength * m / std::sqrt(3.0));
  CHECK(std::abs(mean_u) < 3.0 * std_u / std::sqrt(count));
}

TEST_CASE("noise scale m doubles exactly when the combined embedding doubles") {
  auto model = toy_model<double>();
  Graph<double> g(false);
  std::vector<std::int32_t> ids{1, 5, 7, 2};
  auto combined = model.embed(g, ids, false, nullptr);
  const double m1 = mean_abs(combined);
  auto doubled = g.scale(combined, 2.0);
  CHECK(mean_abs(doubled) == 2.0 * m1);  // exact: power-of-two scaling
}

// ------------------------------------------------------- gradient integrity

TEST_CASE("full-model gradient check on a small joint forward") {
  // one layer here keeps the unit test quick; the acceptance suite runs the
  // full two-layer configuration
  auto model = toy_model<double>(55, 1);
  model.params().zero_grad();
  std::vector<std::int32_t> src{1, 4, 2}, mt{1, 6, 5, 2}, pe{1, 7, 3, 2};
  std::vector<std::int32_t> prefix(pe.begin(), pe.end() - 1);
  std::vector<std::int32_t> targets(pe.begin() + 1, pe.end());

  auto loss_fn = [&](Graph<double>& g) {
    auto src_repr = model.encode_source(g, src, no_pads, false, nullptr);
    auto mt_repr = model.encode_mt(g, mt, no_pads, src_repr, no_pads, false, nullptr);
    auto states = model.decode_states(g, prefix, src_repr, no_pads, mt_repr, no_pads, false,
                                      nullptr);
    auto ce = g.smoothed_cross_entropy(model.logits(g, states), targets, 0.1,
                                       model.pe_allowed(), Vocabulary::pad_id);
    return g.scale(ce.loss_sum, 1.0 / double(ce.tokens));
  };
  const double err = grad_check_many(loss_fn, model.params().leaves(), 1e-5);
  CHECK(err < 1e-3);
}
