#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "ape/kernels.hpp"
#include "ape/rng.hpp"
#include "ape/tensor.hpp"

namespace ape {

// Reverse-mode tape. Ops execute eagerly; when recording and at least one
// input carries requires_grad, a backward closure is pushed. backward() walks
// the tape once in reverse execution order, which is a valid topological
// order by construction. Gradients accumulate (+=) into shared grad buffers,
// so backwards of separate graphs over the same leaves sum up.
//
// Contract: one thread per graph. Parameters may be shared read-only across
// graphs on different threads.
template <class T>
class Graph {
 public:
  explicit Graph(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }
  std::size_t size() const { return tape_.size(); }

  // Seeds d(loss)/d(loss) = seed and runs the tape backwards, each recorded
  // op exactly once.
  void backward(Tensor<T>& loss, T seed = T(1)) {
    if (loss.numel() != 1) {
      throw DimensionError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    }
    if (!loss.requires_grad()) {
      throw Error("backward: loss does not require grad (graph not recording?)");
    }
    loss.grad()[0] += seed;
    for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) (*it)();
  }

  // ------------------------------------------------------------- basics ---

  Tensor<T> add(Tensor<T> a, Tensor<T> b) {
    if (a.shape() != b.shape()) {
      throw DimensionError("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                           shape_str(b.shape()));
    }
    Tensor<T> out = make_out(a.shape(), want(a) || want(b));
    kern::table<T>().add(a.data(), b.data(), out.data(), n(out));
    if (out.requires_grad()) {
      record([a, b, out]() mutable {
        if (a.requires_grad()) kern::table<T>().axpy(T(1), out.grad(), a.grad(), n(out));
        if (b.requires_grad()) kern::table<T>().axpy(T(1), out.grad(), b.grad(), n(out));
      });
    }
    return out;
  }

  Tensor<T> mul(Tensor<T> a, Tensor<T> b) {
    if (a.shape() != b.shape()) {
      throw DimensionError("mul: shape mismatch " + shape_str(a.shape()) + " vs " +
                           shape_str(b.shape()));
    }
    Tensor<T> out = make_out(a.shape(), want(a) || want(b));
    kern::table<T>().mul(a.data(), b.data(), out.data(), n(out));
    if (out.requires_grad()) {
      record([a, b, out]() mutable {
        const T* g = out.grad();
        if (a.requires_grad()) {
          T* da = a.grad();
          const T* bv = b.data();
          for (std::int64_t i = 0; i < out.numel(); ++i) da[i] += g[i] * bv[i];
        }
        if (b.requires_grad()) {
          T* db = b.grad();
          const T* av = a.data();
          for (std::int64_t i = 0; i < out.numel(); ++i) db[i] += g[i] * av[i];
        }
      });
    }
    return out;
  }

  // x[..., n] + v[n], v broadcast over rows.
  Tensor<T> add_rowvec(Tensor<T> x, Tensor<T> v) {
    if (v.rank() != 1 || x.rank() < 1 || x.dim(x.rank() - 1) != v.dim(0)) {
      throw DimensionError("add_rowvec: " + shape_str(x.shape()) + " vs " + shape_str(v.shape()));
    }
    const std::int64_t cols = v.dim(0);
    const std::int64_t rows = x.numel() / cols;
    Tensor<T> out = make_out(x.shape(), want(x) || want(v));
    for (std::int64_t r = 0; r < rows; ++r) {
      kern::table<T>().add(x.data() + r * cols, v.data(), out.data() + r * cols,
                           static_cast<std::size_t>(cols));
    }
    if (out.requires_grad()) {
      record([x, v, out, rows, cols]() mutable {
        if (x.requires_grad()) kern::table<T>().axpy(T(1), out.grad(), x.grad(), n(out));
        if (v.requires_grad()) {
          for (std::int64_t r = 0; r < rows; ++r) {
            kern::table<T>().axpy(T(1), out.grad() + r * cols, v.grad(),
                                  static_cast<std::size_t>(cols));
          }
        }
      });
    }
    return out;
  }

  Tensor<T> scale(Tensor<T> x, T alpha) {
    Tensor<T> out = make_out(x.shape(), want(x));
    kern::table<T>().scale(x.data(), alpha, out.data(), n(out));
    if (out.requires_grad()) {
      record([x, out, alpha]() mutable {
        kern::table<T>().axpy(alpha, out.grad(), x.grad(), n(out));
      });
    }
    return out;
  }

  Tensor<T> sum(Tensor<T> x) {
    Tensor<T> out = make_out({1}, want(x));
    out.data()[0] = kern::table<T>().sum(x.data(), n(x));
    if (out.requires_grad()) {
      record([x, out]() mutable {
        const T g = out.grad()[0];
        T* dx = x.grad();
        for (std::int64_t i = 0; i < x.numel(); ++i) dx[i] += g;
      });
    }
    return out;
  }

  Tensor<T> relu(Tensor<T> x) {
    Tensor<T> out = make_out(x.shape(), want(x));
    kern::table<T>().relu(x.data(), out.data(), n(out));
    if (out.requires_grad()) {
      record([x, out]() mutable {
        kern::table<T>().relu_grad(x.data(), out.grad(), x.grad(), n(out));
      });
    }
    return out;
  }

  // ------------------------------------------------------------- matmul ---

  // a[..,m,k] * b[..,k,n]. Rank combinations: 2x2, 3x3 (equal batch), and
  // 3x2 (b broadcast over the batch, gradients summed back).
  Tensor<T> matmul(Tensor<T> a, Tensor<T> b) {
    const auto bad = [&]() {
      throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " vs " +
                           shape_str(b.shape()));
    };
    if (a.rank() < 2 || b.rank() < 2 || a.rank() > 3 || b.rank() > 3) bad();
    if (b.rank() == 3 && a.rank() == 2) bad();
    const std::int64_t m = a.dim(a.rank() - 2);
    const std::int64_t k = a.dim(a.rank() - 1);
    if (b.dim(b.rank() - 2) != k) bad();
    const std::int64_t nn = b.dim(b.rank() - 1);
    const std::int64_t batch = a.rank() == 3 ? a.dim(0) : 1;
    if (a.rank() == 3 && b.rank() == 3 && b.dim(0) != batch) bad();
    const bool b_batched = b.rank() == 3;

    Shape out_shape = a.rank() == 3 ? Shape{batch, m, nn} : Shape{m, nn};
    Tensor<T> out = make_out(out_shape, want(a) || want(b));
    const auto& kt = kern::table<T>();
    for (std::int64_t i = 0; i < batch; ++i) {
      kt.matmul_nn(a.data() + i * m * k, b.data() + (b_batched ? i * k * nn : 0),
                   out.data() + i * m * nn, m, k, nn, false);
    }
    if (out.requires_grad()) {
      record([a, b, out, batch, m, k, nn, b_batched]() mutable {
        const auto& kt2 = kern::table<T>();
        for (std::int64_t i = 0; i < batch; ++i) {
          const T* dc = out.grad() + i * m * nn;
          if (a.requires_grad()) {
            // da = dc * b^T
            kt2.matmul_nt(dc, b.data() + (b_batched ? i * k * nn : 0), a.grad() + i * m * k, m,
                          nn, k, true);
          }
          if (b.requires_grad()) {
            // db = a^T * dc
            kt2.matmul_tn(a.data() + i * m * k, dc, b.grad() + (b_batched ? i * k * nn : 0), k,
                          m, nn, true);
          }
        }
      });
    }
    return out;
  }

  // Swaps the last two axes (materialized).
  Tensor<T> transpose_last2(Tensor<T> x) {
    if (x.rank() < 2) throw DimensionError("transpose: rank < 2, " + shape_str(x.shape()));
    Shape s = x.shape();
    std::swap(s[s.size() - 1], s[s.size() - 2]);
    const std::int64_t r = x.dim(x.rank() - 2);
    const std::int64_t c = x.dim(x.rank() - 1);
    const std::int64_t batch = x.numel() / (r * c);
    Tensor<T> out = make_out(s, want(x));
    for (std::int64_t bi = 0; bi < batch; ++bi) {
      const T* src = x.data() + bi * r * c;
      T* dst = out.data() + bi * r * c;
      for (std::int64_t i = 0; i < r; ++i) {
        for (std::int64_t j = 0; j < c; ++j) dst[j * r + i] = src[i * c + j];
      }
    }
    if (out.requires_grad()) {
      record([x, out, batch, r, c]() mutable {
        for (std::int64_t bi = 0; bi < batch; ++bi) {
          const T* g = out.grad() + bi * r * c;
          T* dx = x.grad() + bi * r * c;
          for (std::int64_t i = 0; i < r; ++i) {
            for (std::int64_t j = 0; j < c; ++j) dx[i * c + j] += g[j * r + i];
          }
        }
      });
    }
    return out;
  }

  // [L, H*dh] -> [H, L, dh]
  Tensor<T> split_heads(Tensor<T> x, std::int64_t heads) {
    if (x.rank() != 2 || x.dim(1) % heads != 0) {
      throw DimensionError("split_heads: shape " + shape_str(x.shape()) + " with " +
                           std::to_string(heads) + " heads");
    }
    const std::int64_t len = x.dim(0), dh = x.dim(1) / heads;
    Tensor<T> out = make_out({heads, len, dh}, want(x));
    for (std::int64_t h = 0; h < heads; ++h) {
      for (std::int64_t l = 0; l < len; ++l) {
        const T* src = x.data() + l * heads * dh + h * dh;
        T* dst = out.data() + (h * len + l) * dh;
        for (std::int64_t d = 0; d < dh; ++d) dst[d] = src[d];
      }
    }
    if (out.requires_grad()) {
      record([x, out, heads, len, dh]() mutable {
        for (std::int64_t h = 0; h < heads; ++h) {
          for (std::int64_t l = 0; l < len; ++l) {
            const T* g = out.grad() + (h * len + l) * dh;
            T* dx = x.grad() + l * heads * dh + h * dh;
            for (std::int64_t d = 0; d < dh; ++d) dx[d] += g[d];
          }
        }
      });
    }
    return out;
  }

  // [H, L, dh] -> [L, H*dh]
  Tensor<T> merge_heads(Tensor<T> x) {
    if (x.rank() != 3) throw DimensionError("merge_heads: shape " + shape_str(x.shape()));
    const std::int64_t heads = x.dim(0), len = x.dim(1), dh = x.dim(2);
    Tensor<T> out = make_out({len, heads * dh}, want(x));
    for (std::int64_t h = 0; h < heads; ++h) {
      for (std::int64_t l = 0; l < len; ++l) {
        const T* src = x.data() + (h * len + l) * dh;
        T* dst = out.data() + l * heads * dh + h * dh;
        for (std::int64_t d = 0; d < dh; ++d) dst[d] = src[d];
      }
    }
    if (out.requires_grad()) {
      record([x, out, heads, len, dh]() mutable {
        for (std::int64_t h = 0; h < heads; ++h) {
          for (std::int64_t l = 0; l < len; ++l) {
            const T* g = out.grad() + l * heads * dh + h * dh;
            T* dx = x.grad() + (h * len + l) * dh;
            for (std::int64_t d = 0; d < dh; ++d) dx[d] += g[d];
          }
        }
      });
    }
    return out;
  }

  // ------------------------------------------------------- nonlinearity ---

  // Max-subtracted softmax along `axis`. -inf logits map to probability 0;
  // a slice that is entirely -inf comes back as all zeros.
  Tensor<T> softmax(Tensor<T> x, std::int64_t axis) {
    if (axis < 0) axis += x.rank();
    if (axis < 0 || axis >= x.rank()) {
      throw DimensionError("softmax: axis " + std::to_string(axis) + " for shape " +
                           shape_str(x.shape()));
    }
    const std::int64_t len = x.dim(axis);
    std::int64_t inner = 1;
    for (std::int64_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
    const std::int64_t outer = x.numel() / (len * inner);

    Tensor<T> out = make_out(x.shape(), want(x));
    const T neg_inf = -std::numeric_limits<T>::infinity();
    for (std::int64_t o = 0; o < outer; ++o) {
      for (std::int64_t in = 0; in < inner; ++in) {
        const T* xs = x.data() + o * len * inner + in;
        T* ys = out.data() + o * len * inner + in;
        T m = neg_inf;
        for (std::int64_t i = 0; i < len; ++i) {
          const T v = xs[i * inner];
          if (v > m) m = v;
        }
        if (m == neg_inf) {
          for (std::int64_t i = 0; i < len; ++i) ys[i * inner] = T(0);
          continue;
        }
        T z = 0;
        for (std::int64_t i = 0; i < len; ++i) {
          const T e = std::exp(xs[i * inner] - m);
          ys[i * inner] = e;
          z += e;
        }
        const T invz = T(1) / z;
        for (std::int64_t i = 0; i < len; ++i) ys[i * inner] *= invz;
      }
    }
    if (out.requires_grad()) {
      record([x, out, outer, len, inner]() mutable {
        for (std::int64_t o = 0; o < outer; ++o) {
          for (std::int64_t in = 0; in < inner; ++in) {
            const T* ys = out.data() + o * len * inner + in;
            const T* gy = out.grad() + o * len * inner + in;
            T* gx = x.grad() + o * len * inner + in;
            T dotv = 0;
            for (std::int64_t i = 0; i < len; ++i) dotv += gy[i * inner] * ys[i * inner];
            for (std::int64_t i = 0; i < len; ++i) {
              gx[i * inner] += ys[i * inner] * (gy[i * inner] - dotv);
            }
          }
        }
      });
    }
    return out;
  }

  // Per-last-dim normalization: (x - mean) / sqrt(var + eps) * gain + bias,
  // variance with 1/D.
  Tensor<T> layer_norm(Tensor<T> x, Tensor<T> gain, Tensor<T> bias, T eps) {
    const std::int64_t d = x.dim(x.rank() - 1);
    if (gain.numel() != d || bias.numel() != d) {
      throw DimensionError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" +
                           shape_str(bias.shape()) + " vs last dim " + std::to_string(d));
    }
    const std::int64_t rows = x.numel() / d;
    Tensor<T> out = make_out(x.shape(), want(x) || want(gain) || want(bias));
    // normalized values are kept for backward
    auto xhat = std::make_shared<std::vector<T>>(static_cast<std::size_t>(x.numel()));
    auto inv_std = std::make_shared<std::vector<T>>(static_cast<std::size_t>(rows));
    for (std::int64_t r = 0; r < rows; ++r) {
      const T* xs = x.data() + r * d;
      T mu = kern::table<T>().sum(xs, static_cast<std::size_t>(d)) / T(d);
      T var = 0;
      for (std::int64_t i = 0; i < d; ++i) {
        const T c = xs[i] - mu;
        var += c * c;
      }
      var /= T(d);
      const T inv = T(1) / std::sqrt(var + eps);
      (*inv_std)[static_cast<std::size_t>(r)] = inv;
      T* hs = xhat->data() + r * d;
      T* ys = out.data() + r * d;
      for (std::int64_t i = 0; i < d; ++i) {
        hs[i] = (xs[i] - mu) * inv;
        ys[i] = hs[i] * gain.data()[i] + bias.data()[i];
      }
    }
    if (out.requires_grad()) {
      record([x, gain, bias, out, xhat, inv_std, rows, d]() mutable {
        for (std::int64_t r = 0; r < rows; ++r) {
          const T* gy = out.grad() + r * d;
          const T* hs = xhat->data() + r * d;
          if (gain.requires_grad()) {
            T* gg = gain.grad();
            for (std::int64_t i = 0; i < d; ++i) gg[i] += gy[i] * hs[i];
          }
          if (bias.requires_grad()) {
            T* gb = bias.grad();
            for (std::int64_t i = 0; i < d; ++i) gb[i] += gy[i];
          }
          if (x.requires_grad()) {
            const T inv = (*inv_std)[static_cast<std::size_t>(r)];
            T mean_dh = 0, mean_dh_h = 0;
            for (std::int64_t i = 0; i < d; ++i) {
              const T dh = gy[i] * gain.data()[i];
              mean_dh += dh;
              mean_dh_h += dh * hs[i];
            }
            mean_dh /= T(d);
            mean_dh_h /= T(d);
            T* gx = x.grad() + r * d;
            for (std::int64_t i = 0; i < d; ++i) {
              const T dh = gy[i] * gain.data()[i];
              gx[i] += inv * (dh - mean_dh - hs[i] * mean_dh_h);
            }
          }
        }
      });
    }
    return out;
  }

  // Inverted dropout; identity (same handle, bit for bit) outside training
  // or at p == 0.
  Tensor<T> dropout(Tensor<T> x, double p, bool training, Rng& rng) {
    if (p < 0.0 || p >= 1.0) {
      throw ConfigError("dropout probability must be in [0,1), got " + std::to_string(p));
    }
    if (!training || p == 0.0) return x;
    auto mask = std::make_shared<std::vector<T>>(static_cast<std::size_t>(x.numel()));
    const T keep_scale = T(1.0 / (1.0 - p));
    for (auto& mv : *mask) mv = rng.bernoulli(p) ? T(0) : keep_scale;
    Tensor<T> out = make_out(x.shape(), want(x));
    kern::table<T>().mul(x.data(), mask->data(), out.data(), n(out));
    if (out.requires_grad()) {
      record([x, out, mask]() mutable {
        const T* g = out.grad();
        const T* mv = mask->data();
        T* dx = x.grad();
        for (std::int64_t i = 0; i < x.numel(); ++i) dx[i] += g[i] * mv[i];
      });
    }
    return out;
  }

  // ------------------------------------------------------------ lookups ---

  Tensor<T> embedding(Tensor<T> table, std::span<const std::int32_t> ids) {
    if (table.rank() != 2) {
      throw DimensionError("embedding: table must be [V,d], got " + shape_str(table.shape()));
    }
    const std::int64_t v = table.dim(0), d = table.dim(1);
    for (auto id : ids) {
      if (id < 0 || id >= v) {
        throw VocabError("token id " + std::to_string(id) + " outside vocabulary of size " +
                         std::to_string(v));
      }
    }
    const std::int64_t len = static_cast<std::int64_t>(ids.size());
    Tensor<T> out = make_out({len, d}, want(table));
    for (std::int64_t l = 0; l < len; ++l) {
      const T* src = table.data() + static_cast<std::int64_t>(ids[l]) * d;
      T* dst = out.data() + l * d;
      for (std::int64_t i = 0; i < d; ++i) dst[i] = src[i];
    }
    if (out.requires_grad()) {
      std::vector<std::int32_t> idv(ids.begin(), ids.end());
      record([table, out, idv = std::move(idv), d]() mutable {
        for (std::size_t l = 0; l < idv.size(); ++l) {
          kern::table<T>().axpy(T(1), out.grad() + static_cast<std::int64_t>(l) * d,
                                table.grad() + static_cast<std::int64_t>(idv[l]) * d,
                                static_cast<std::size_t>(d));
        }
      });
    }
    return out;
  }

  // --------------------------------------------------------------- misc ---

  // x + additive mask, mask broadcast from [Lk] or [Lq,Lk] over the leading
  // axes of x. The mask is a constant (no gradient).
  Tensor<T> add_mask(Tensor<T> x, const Tensor<T>& mask) {
    const std::int64_t lk = x.dim(x.rank() - 1);
    std::int64_t mrows;
    if (mask.rank() == 1 && mask.dim(0) == lk) {
      mrows = 1;
    } else if (mask.rank() == 2 && x.rank() >= 2 && mask.dim(1) == lk &&
               mask.dim(0) == x.dim(x.rank() - 2)) {
      mrows = mask.dim(0);
    } else {
      throw DimensionError("add_mask: mask " + shape_str(mask.shape()) + " does not broadcast to " +
                           shape_str(x.shape()));
    }
    Tensor<T> out = make_out(x.shape(), want(x));
    const std::int64_t rows = x.numel() / lk;
    for (std::int64_t r = 0; r < rows; ++r) {
      const T* ms = mask.data() + (mrows == 1 ? 0 : (r % mrows) * lk);
      kern::table<T>().add(x.data() + r * lk, ms, out.data() + r * lk,
                           static_cast<std::size_t>(lk));
    }
    if (out.requires_grad()) {
      record([x, out]() mutable {
        kern::table<T>().axpy(T(1), out.grad(), x.grad(), n(out));
      });
    }
    return out;
  }

  // x + strength * mean(|x|) * noise, noise a same-shape constant. The scale
  // mean(|x|) is treated as a constant: backward is the identity. strength 0
  // returns the input handle untouched.
  Tensor<T> add_adaptive_noise(Tensor<T> x, double strength, const Tensor<T>& noise) {
    if (strength < 0.0) {
      throw ConfigError("noise strength must be >= 0, got " + std::to_string(strength));
    }
    if (strength == 0.0) return x;
    if (noise.shape() != x.shape()) {
      throw DimensionError("noise shape " + shape_str(noise.shape()) + " vs input " +
                           shape_str(x.shape()));
    }
    const T m = mean_abs(x);
    Tensor<T> out = make_out(x.shape(), want(x));
    kern::table<T>().scale(noise.data(), static_cast<T>(strength) * m, out.data(), n(out));
    kern::table<T>().add(out.data(), x.data(), out.data(), n(out));
    if (out.requires_grad()) {
      record([x, out]() mutable {
        kern::table<T>().axpy(T(1), out.grad(), x.grad(), n(out));
      });
    }
    return out;
  }

  // Label-smoothed cross entropy over a restricted support, summed over the
  // non-PAD positions. Gold gets 1-eps; eps is spread uniformly over the
  // remaining allowed non-PAD tokens. Tokens outside `allowed` get zero
  // target mass. Positions whose target is PAD are skipped entirely.
  struct CeResult {
    Tensor<T> loss_sum;      // scalar
    std::int64_t tokens = 0; // non-PAD target positions
  };

  CeResult smoothed_cross_entropy(Tensor<T> logits, std::span<const std::int32_t> targets,
                                  double eps, const std::vector<char>& allowed,
                                  std::int32_t pad_id) {
    if (logits.rank() != 2) {
      throw DimensionError("cross entropy: logits must be [P,V], got " + shape_str(logits.shape()));
    }
    const std::int64_t pcount = logits.dim(0), v = logits.dim(1);
    if (static_cast<std::int64_t>(targets.size()) != pcount) {
      throw DimensionError("cross entropy: " + std::to_string(targets.size()) + " targets for " +
                           std::to_string(pcount) + " positions");
    }
    if (static_cast<std::int64_t>(allowed.size()) != v) {
      throw DimensionError("cross entropy: allowed mask size " + std::to_string(allowed.size()) +
                           " vs vocab " + std::to_string(v));
    }
    std::int64_t k_allowed = 0;  // allowed tokens excluding PAD
    for (std::int64_t i = 0; i < v; ++i) {
      if (allowed[static_cast<std::size_t>(i)] && i != pad_id) ++k_allowed;
    }

    T total = 0;
    std::int64_t tokens = 0;
    for (std::int64_t p = 0; p < pcount; ++p) {
      const std::int32_t gold = targets[static_cast<std::size_t>(p)];
      if (gold == pad_id) continue;
      if (gold < 0 || gold >= v) {
        throw VocabError("target id " + std::to_string(gold) + " outside vocabulary");
      }
      if (!allowed[static_cast<std::size_t>(gold)]) {
        throw DataError("gold token " + std::to_string(gold) +
                        " is not allowed in post-editing output (corpus/vocab mismatch)");
      }
      ++tokens;
      const T* row = logits.data() + p * v;
      const T m = kern::table<T>().max(row, static_cast<std::size_t>(v));
      T z = 0;
      for (std::int64_t i = 0; i < v; ++i) z += std::exp(row[i] - m);
      const T lse = m + std::log(z);
      const bool smooth = eps > 0.0 && k_allowed > 1;
      const T gold_w = smooth ? T(1.0 - eps) : T(1);
      total -= gold_w * (row[gold] - lse);
      if (smooth) {
        const T other_w = T(eps) / T(k_allowed - 1);
        T rest = 0;
        for (std::int64_t i = 0; i < v; ++i) {
          if (allowed[static_cast<std::size_t>(i)] && i != pad_id && i != gold) {
            rest += row[i] - lse;
          }
        }
        total -= other_w * rest;
      }
    }

    CeResult res;
    res.tokens = tokens;
    res.loss_sum = make_out({1}, want(logits));
    res.loss_sum.data()[0] = total;
    if (res.loss_sum.requires_grad()) {
      Tensor<T> loss = res.loss_sum;
      std::vector<std::int32_t> tgt(targets.begin(), targets.end());
      std::vector<char> allow = allowed;
      const double eps_c = eps;
      record([logits, loss, tgt = std::move(tgt), allow = std::move(allow), eps_c, pad_id,
              v, k_allowed]() mutable {
        const T g = loss.grad()[0];
        if (g == T(0)) return;
        std::vector<T> prob(static_cast<std::size_t>(v));
        for (std::size_t p = 0; p < tgt.size(); ++p) {
          const std::int32_t gold = tgt[p];
          if (gold == pad_id) continue;
          const T* row = logits.data() + static_cast<std::int64_t>(p) * v;
          T* grow = logits.grad() + static_cast<std::int64_t>(p) * v;
          const T m = kern::table<T>().max(row, static_cast<std::size_t>(v));
          T z = 0;
          for (std::int64_t i = 0; i < v; ++i) {
            prob[static_cast<std::size_t>(i)] = std::exp(row[i] - m);
            z += prob[static_cast<std::size_t>(i)];
          }
          const T invz = T(1) / z;
          const bool smooth = eps_c > 0.0 && k_allowed > 1;
          const T gold_w = smooth ? T(1.0 - eps_c) : T(1);
          const T other_w = smooth ? T(eps_c) / T(k_allowed - 1) : T(0);
          for (std::int64_t i = 0; i < v; ++i) {
            T q = 0;
            if (i == gold) {
              q = gold_w;
            } else if (smooth && allow[static_cast<std::size_t>(i)] && i != pad_id) {
              q = other_w;
            }
            grow[i] += g * (prob[static_cast<std::size_t>(i)] * invz - q);
          }
        }
      });
    }
    return res;
  }

  // Scaled dot-product attention over per-head tensors:
  //   softmax(q k^T / sqrt(dh) + mask) v
  // q [H,Lq,dh], k/v [H,Lk,dh]; optional additive mask [Lk] or [Lq,Lk].
  Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                      const Tensor<T>* mask) {
    if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3 || q.dim(0) != k.dim(0) ||
        q.dim(0) != v.dim(0) || q.dim(2) != k.dim(2) || k.dim(1) != v.dim(1)) {
      throw DimensionError("attention: q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) +
                           ", v " + shape_str(v.shape()));
    }
    const T inv_sqrt_dh = T(1) / std::sqrt(static_cast<T>(q.dim(2)));
    Tensor<T> scores = scale(matmul(q, transpose_last2(k)), inv_sqrt_dh);
    if (mask != nullptr) scores = add_mask(scores, *mask);
    return matmul(softmax(scores, -1), v);
  }

 private:
  bool want(const Tensor<T>& t) const { return recording_ && t.requires_grad(); }

  Tensor<T> make_out(Shape s, bool needs_grad) { return Tensor<T>(std::move(s), needs_grad); }

  void record(std::function<void()> fn) { tape_.push_back(std::move(fn)); }

  static std::size_t n(const Tensor<T>& t) { return static_cast<std::size_t>(t.numel()); }

  bool recording_;
  std::vector<std::function<void()>> tape_;
};

// Mean absolute value over all elements (the Eq-style adaptive noise scale).
template <class T>
T mean_abs(const Tensor<T>& x) {
  if (x.numel() == 0) return T(0);
  return kern::table<T>().abs_sum(x.data(), static_cast<std::size_t>(x.numel())) /
         static_cast<T>(x.numel());
}

}  // namespace ape
