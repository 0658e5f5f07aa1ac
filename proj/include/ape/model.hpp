#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ape/autodiff.hpp"
#include "ape/rng.hpp"
#include "ape/tensor.hpp"
#include "ape/vocab.hpp"

namespace ape {

// Classifier bias value that zeroes a token's probability outright.
inline constexpr double kBiasMaskValue = -1e32;
inline constexpr double kLayerNormEps = 1e-6;

struct ModelConfig {
  std::int64_t n_layers = 6;
  std::int64_t d_model = 512;
  std::int64_t d_ffn = 2048;
  std::int64_t n_heads = 8;
  double dropout = 0.1;
  std::int64_t max_positions = 1024;
  std::int64_t vocab_size = 0;

  void validate() const {
    if (n_layers < 0 || d_model <= 0 || d_ffn <= 0 || n_heads <= 0 || max_positions <= 0 ||
        vocab_size <= 0) {
      throw ConfigError("model dimensions must be positive");
    }
    if (d_model % n_heads != 0) {
      throw ConfigError("d_model (" + std::to_string(d_model) + ") not divisible by n_heads (" +
                        std::to_string(n_heads) + ")");
    }
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0,1)");
  }
};

enum class NoiseDistribution { gaussian, uniform };

struct NoiseConfig {
  double strength = 0.2;
  NoiseDistribution distribution = NoiseDistribution::gaussian;

  void validate() const {
    if (strength < 0.0) throw ConfigError("noise strength must be >= 0");
  }
};

// Noise matrix for the de-noising input path: standard Gaussian or
// uniform [-1, 1], elementwise.
template <class T>
Tensor<T> sample_noise_like(const Tensor<T>& x, const NoiseConfig& cfg, Rng& rng) {
  Tensor<T> n(x.shape());
  if (cfg.distribution == NoiseDistribution::gaussian) {
    for (auto& v : n.values()) v = static_cast<T>(rng.gaussian());
  } else {
    for (auto& v : n.values()) v = static_cast<T>(rng.uniform(-1.0, 1.0));
  }
  return n;
}

// Named parameter set. The shared token embedding doubles as the classifier
// weight (one storage); everything else is per-layer attention/FFN/layer-norm
// weights plus the classifier bias.
template <class T>
struct Parameters {
  std::map<std::string, Tensor<T>> tensors;

  Tensor<T>& at(const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw Error("unknown parameter: " + name);
    return it->second;
  }
  const Tensor<T>& at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw Error("unknown parameter: " + name);
    return it->second;
  }

  void set_requires_grad(bool on) {
    for (auto& [_, t] : tensors) t.set_requires_grad(on);
  }
  void zero_grad() {
    for (auto& [_, t] : tensors) t.zero_grad();
  }
  std::vector<Tensor<T>*> leaves() {
    std::vector<Tensor<T>*> out;
    out.reserve(tensors.size());
    for (auto& [_, t] : tensors) out.push_back(&t);
    return out;
  }
};

// The multi-source transformer: a source encoder (self-attention stack), an
// MT encoder whose layers also cross-attend to the encoded source, and a
// decoder attending to both, with tied embeddings and a bias-masked
// classifier. All entry points are per sentence; sequences arrive with their
// BOS/EOS delimiters and a PAD flag per position (1 = PAD).
template <class T>
class Model {
 public:
  Model(ModelConfig cfg, std::vector<char> pe_allowed, Rng init_rng)
      : cfg_(cfg), pe_allowed_(std::move(pe_allowed)) {
    cfg_.validate();
    if (static_cast<std::int64_t>(pe_allowed_.size()) != cfg_.vocab_size) {
      throw ConfigError("pe_allowed size " + std::to_string(pe_allowed_.size()) +
                        " vs vocab_size " + std::to_string(cfg_.vocab_size));
    }
    init_parameters(init_rng);
    build_positional();
    apply_bias_mask();
  }

  Model(ModelConfig cfg, std::vector<char> pe_allowed, Parameters<T> params)
      : cfg_(cfg), pe_allowed_(std::move(pe_allowed)), params_(std::move(params)) {
    cfg_.validate();
    build_positional();
    params_.set_requires_grad(true);
    apply_bias_mask();
  }

  const ModelConfig& config() const { return cfg_; }
  Parameters<T>& params() { return params_; }
  const Parameters<T>& params() const { return params_; }
  const std::vector<char>& pe_allowed() const { return pe_allowed_; }

  // Token lookup scaled by sqrt(d_model) plus sinusoidal positions, then
  // dropout under training: the "combined embedding" the noise op perturbs.
  Tensor<T> embed(Graph<T>& g, std::span<const std::int32_t> ids, bool training,
                  Rng* rng) const {
    const std::int64_t len = static_cast<std::int64_t>(ids.size());
    if (len > cfg_.max_positions) {
      throw DimensionError("sequence length " + std::to_string(len) + " exceeds max_positions " +
                           std::to_string(cfg_.max_positions));
    }
    auto emb = g.scale(g.embedding(params_.at("embedding"), ids),
                       static_cast<T>(std::sqrt(double(cfg_.d_model))));
    Tensor<T> pos({len, cfg_.d_model});
    const T* src = positional_.data();
    std::copy(src, src + len * cfg_.d_model, pos.data());
    emb = g.add(emb, pos);
    if (training) emb = g.dropout(emb, cfg_.dropout, true, *rng);
    return emb;
  }

  Tensor<T> encode_source(Graph<T>& g, std::span<const std::int32_t> ids,
                          std::span<const char> pad_mask, bool training, Rng* rng) const {
    auto x = embed(g, ids, training, rng);
    const auto mask = additive_pad_mask(pad_mask);
    for (std::int64_t l = 0; l < cfg_.n_layers; ++l) {
      const std::string p = "src_enc.l" + std::to_string(l);
      x = sublayer(g, p + ".self_ln", x,
                   attn(g, p + ".self", x, x, mask ? &*mask : nullptr), training, rng);
      x = sublayer(g, p + ".ffn_ln", x, ffn(g, p + ".ffn", x), training, rng);
    }
    return x;
  }

  // MT-side encoding from token ids.
  Tensor<T> encode_mt(Graph<T>& g, std::span<const std::int32_t> ids,
                      std::span<const char> pad_mask, const Tensor<T>& src_repr,
                      std::span<const char> src_pad_mask, bool training, Rng* rng) const {
    return encode_mt_embedded(g, embed(g, ids, training, rng), pad_mask, src_repr, src_pad_mask,
                              training, rng);
  }

  // Same stack over an already-embedded input (the de-noising path feeds the
  // perturbed PE embedding here).
  Tensor<T> encode_mt_embedded(Graph<T>& g, Tensor<T> x, std::span<const char> pad_mask,
                               const Tensor<T>& src_repr, std::span<const char> src_pad_mask,
                               bool training, Rng* rng) const {
    check_pairing(src_repr, src_pad_mask);
    const auto own_mask = additive_pad_mask(pad_mask);
    const auto src_mask = additive_pad_mask(src_pad_mask);
    for (std::int64_t l = 0; l < cfg_.n_layers; ++l) {
      const std::string p = "mt_enc.l" + std::to_string(l);
      x = sublayer(g, p + ".self_ln", x,
                   attn(g, p + ".self", x, x, own_mask ? &*own_mask : nullptr), training, rng);
      x = sublayer(g, p + ".cross_ln", x,
                   attn(g, p + ".cross", x, src_repr, src_mask ? &*src_mask : nullptr), training,
                   rng);
      x = sublayer(g, p + ".ffn_ln", x, ffn(g, p + ".ffn", x), training, rng);
    }
    return x;
  }

  // Decoder states over a BOS-led prefix: causal self-attention, then
  // cross-attention to the source and the MT representations, then FFN.
  Tensor<T> decode_states(Graph<T>& g, std::span<const std::int32_t> prefix,
                          const Tensor<T>& src_repr, std::span<const char> src_pad_mask,
                          const Tensor<T>& mt_repr, std::span<const char> mt_pad_mask,
                          bool training, Rng* rng) const {
    check_pairing(src_repr, src_pad_mask);
    check_pairing(mt_repr, mt_pad_mask);
    auto x = embed(g, prefix, training, rng);
    const auto causal = causal_mask(static_cast<std::int64_t>(prefix.size()));
    const auto src_mask = additive_pad_mask(src_pad_mask);
    const auto mt_mask = additive_pad_mask(mt_pad_mask);
    for (std::int64_t l = 0; l < cfg_.n_layers; ++l) {
      const std::string p = "dec.l" + std::to_string(l);
      x = sublayer(g, p + ".self_ln", x, attn(g, p + ".self", x, x, &causal), training, rng);
      x = sublayer(g, p + ".src_ln", x,
                   attn(g, p + ".src", x, src_repr, src_mask ? &*src_mask : nullptr), training,
                   rng);
      x = sublayer(g, p + ".mt_ln", x,
                   attn(g, p + ".mt", x, mt_repr, mt_mask ? &*mt_mask : nullptr), training, rng);
      x = sublayer(g, p + ".ffn_ln", x, ffn(g, p + ".ffn", x), training, rng);
    }
    return x;
  }

  // dec_out * E^T + bias; the tied weight is the embedding storage itself.
  Tensor<T> logits(Graph<T>& g, Tensor<T> dec_out) const {
    return g.add_rowvec(g.matmul(dec_out, g.transpose_last2(params_.at("embedding"))),
                        params_.at("classifier_bias"));
  }

  // Forces the classifier bias of never-in-PE tokens to the mask value.
  // Called at construction and again after every optimizer step and average.
  void apply_bias_mask() {
    auto& bias = params_.at("classifier_bias");
    for (std::int64_t i = 0; i < bias.numel(); ++i) {
      if (!pe_allowed_[static_cast<std::size_t>(i)]) bias.at(i) = static_cast<T>(kBiasMaskValue);
    }
  }

 private:
  static void check_pairing(const Tensor<T>& repr, std::span<const char> pad_mask) {
    if (!pad_mask.empty() &&
        static_cast<std::int64_t>(pad_mask.size()) != repr.dim(0)) {
      throw DimensionError("pad mask length " + std::to_string(pad_mask.size()) +
                           " does not pair with representation rows " +
                           std::to_string(repr.dim(0)));
    }
  }

  // [Lk] additive mask: 0 where attendable, -inf at PAD keys. Empty pad span
  // (or no PADs) yields no mask at all.
  std::optional<Tensor<T>> additive_pad_mask(std::span<const char> pad) const {
    bool any = false;
    for (char c : pad) any = any || c != 0;
    if (!any) return std::nullopt;
    Tensor<T> m({static_cast<std::int64_t>(pad.size())});
    for (std::size_t i = 0; i < pad.size(); ++i) {
      m.at(static_cast<std::int64_t>(i)) =
          pad[i] ? -std::numeric_limits<T>::infinity() : T(0);
    }
    return m;
  }

  static Tensor<T> causal_mask(std::int64_t len) {
    Tensor<T> m({len, len});
    for (std::int64_t i = 0; i < len; ++i) {
      for (std::int64_t j = i + 1; j < len; ++j) {
        m.at(i * len + j) = -std::numeric_limits<T>::infinity();
      }
    }
    return m;
  }

  // Multi-head attention; queries from x, keys/values from kv. Projections
  // are bias-free as in the base transformer.
  Tensor<T> attn(Graph<T>& g, const std::string& p, const Tensor<T>& x, const Tensor<T>& kv,
                 const Tensor<T>* mask) const {
    auto q = g.matmul(x, params_.at(p + ".wq"));
    auto k = g.matmul(kv, params_.at(p + ".wk"));
    auto v = g.matmul(kv, params_.at(p + ".wv"));
    auto heads = g.attention(g.split_heads(q, cfg_.n_heads), g.split_heads(k, cfg_.n_heads),
                             g.split_heads(v, cfg_.n_heads), mask);
    return g.matmul(g.merge_heads(heads), params_.at(p + ".wo"));
  }

  Tensor<T> ffn(Graph<T>& g, const std::string& p, const Tensor<T>& x) const {
    auto h = g.relu(g.add_rowvec(g.matmul(x, params_.at(p + ".w1")), params_.at(p + ".b1")));
    return g.add_rowvec(g.matmul(h, params_.at(p + ".w2")), params_.at(p + ".b2"));
  }

  // Post-norm residual: LayerNorm(x + Dropout(Sublayer(x))).
  Tensor<T> sublayer(Graph<T>& g, const std::string& ln, Tensor<T> x, Tensor<T> sub,
                     bool training, Rng* rng) const {
    if (training) sub = g.dropout(sub, cfg_.dropout, true, *rng);
    return g.layer_norm(g.add(x, sub), params_.at(ln + ".gain"), params_.at(ln + ".bias"),
                        static_cast<T>(kLayerNormEps));
  }

  void glorot(Tensor<T>& w, std::int64_t fan_in, std::int64_t fan_out, Rng& rng) {
    const double bound = std::sqrt(6.0 / double(fan_in + fan_out));
    for (auto& v : w.values()) v = static_cast<T>(rng.uniform(-bound, bound));
  }

  void add_proj(const std::string& w_name, const std::string& b_name, std::int64_t in,
                std::int64_t out, Rng& rng) {
    Tensor<T> w({in, out}, true);
    glorot(w, in, out, rng);
    params_.tensors.emplace(w_name, std::move(w));
    params_.tensors.emplace(b_name, Tensor<T>({out}, true));
  }

  void add_layer_norm(const std::string& prefix) {
    params_.tensors.emplace(prefix + ".gain", Tensor<T>::full({cfg_.d_model}, T(1), true));
    params_.tensors.emplace(prefix + ".bias", Tensor<T>({cfg_.d_model}, true));
  }

  void add_attention(const std::string& prefix, Rng& rng) {
    for (const char* w : {".wq", ".wk", ".wv", ".wo"}) {
      Tensor<T> t({cfg_.d_model, cfg_.d_model}, true);
      glorot(t, cfg_.d_model, cfg_.d_model, rng);
      params_.tensors.emplace(prefix + w, std::move(t));
    }
  }

  void add_ffn(const std::string& prefix, Rng& rng) {
    add_proj(prefix + ".w1", prefix + ".b1", cfg_.d_model, cfg_.d_ffn, rng);
    add_proj(prefix + ".w2", prefix + ".b2", cfg_.d_ffn, cfg_.d_model, rng);
  }

  void init_parameters(Rng& rng) {
    Tensor<T> emb({cfg_.vocab_size, cfg_.d_model}, true);
    glorot(emb, cfg_.vocab_size, cfg_.d_model, rng);
    params_.tensors.emplace("embedding", std::move(emb));
    params_.tensors.emplace("classifier_bias", Tensor<T>({cfg_.vocab_size}, true));

    for (std::int64_t l = 0; l < cfg_.n_layers; ++l) {
      const std::string sl = "src_enc.l" + std::to_string(l);
      add_attention(sl + ".self", rng);
      add_layer_norm(sl + ".self_ln");
      add_ffn(sl + ".ffn", rng);
      add_layer_norm(sl + ".ffn_ln");

      const std::string ml = "mt_enc.l" + std::to_string(l);
      add_attention(ml + ".self", rng);
      add_layer_norm(ml + ".self_ln");
      add_attention(ml + ".cross", rng);
      add_layer_norm(ml + ".cross_ln");
      add_ffn(ml + ".ffn", rng);
      add_layer_norm(ml + ".ffn_ln");

      const std::string dl = "dec.l" + std::to_string(l);
      add_attention(dl + ".self", rng);
      add_layer_norm(dl + ".self_ln");
      add_attention(dl + ".src", rng);
      add_layer_norm(dl + ".src_ln");
      add_attention(dl + ".mt", rng);
      add_layer_norm(dl + ".mt_ln");
      add_ffn(dl + ".ffn", rng);
      add_layer_norm(dl + ".ffn_ln");
    }
  }

  void build_positional() {
    positional_ = Tensor<T>({cfg_.max_positions, cfg_.d_model});
    for (std::int64_t pos = 0; pos < cfg_.max_positions; ++pos) {
      for (std::int64_t i = 0; i < cfg_.d_model; i += 2) {
        const double angle = double(pos) / std::pow(10000.0, double(i) / double(cfg_.d_model));
        positional_.at(pos * cfg_.d_model + i) = static_cast<T>(std::sin(angle));
        if (i + 1 < cfg_.d_model) {
          positional_.at(pos * cfg_.d_model + i + 1) = static_cast<T>(std::cos(angle));
        }
      }
    }
  }

  ModelConfig cfg_;
  std::vector<char> pe_allowed_;
  Parameters<T> params_;
  Tensor<T> positional_;
};

}  // namespace ape
