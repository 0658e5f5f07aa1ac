#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "ape/checkpoint.hpp"
#include "ape/corpus.hpp"
#include "ape/model.hpp"

namespace ape {

struct TrainConfig {
  double label_smoothing = 0.1;
  double lambda = 0.5;  // joint weight: 1 trains APE only, 0 de-noising only
  NoiseConfig noise;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.98;
  double adam_eps = 1e-9;
  std::int64_t warmup_steps = 8000;
  std::int64_t save_interval = 1500;
  std::int64_t keep_last = 20;
  std::int64_t average_window = 5;
  std::int64_t epochs = 8;
  std::int64_t batch_pe_tokens = 25000;
  std::uint64_t seed = 1;

  void validate() const {
    if (lambda < 0.0 || lambda > 1.0) throw ConfigError("lambda must lie in [0,1]");
    if (label_smoothing < 0.0 || label_smoothing >= 1.0) {
      throw ConfigError("label_smoothing must lie in [0,1)");
    }
    if (warmup_steps < 1 || save_interval < 1 || keep_last < 1 || average_window < 1 ||
        epochs < 1 || batch_pe_tokens < 1) {
      throw ConfigError("training counts must be positive");
    }
    noise.validate();
  }
};

// Inverse-square-root schedule with linear warmup:
//   d_model^-0.5 * min(step^-0.5, step * warmup^-1.5)
inline double lr_at(std::int64_t step, std::int64_t d_model, std::int64_t warmup) {
  if (step < 1) throw ConfigError("lr_at: step must be >= 1");
  return std::pow(double(d_model), -0.5) *
         std::min(std::pow(double(step), -0.5), double(step) * std::pow(double(warmup), -1.5));
}

// Eq-style convex combination of the two task losses.
template <class T>
T joint_loss(T loss_ape, T loss_denoise, T lambda) {
  return lambda * loss_ape + (T(1) - lambda) * loss_denoise;
}

// Bias-corrected Adam over a named parameter set.
template <class T>
struct AdamState {
  std::map<std::string, std::pair<std::vector<T>, std::vector<T>>> moments;
  std::int64_t step = 0;
};

template <class T>
void adam_update(Parameters<T>& params, AdamState<T>& state, double lr, double beta1,
                 double beta2, double eps) {
  state.step += 1;
  const double bc1 = 1.0 - std::pow(beta1, double(state.step));
  const double bc2 = 1.0 - std::pow(beta2, double(state.step));
  for (auto& [name, t] : params.tensors) {
    auto& [m, v] = state.moments[name];
    if (m.empty()) {
      m.assign(static_cast<std::size_t>(t.numel()), T(0));
      v.assign(static_cast<std::size_t>(t.numel()), T(0));
    }
    const T* g = t.grad();
    T* p = t.data();
    for (std::int64_t i = 0; i < t.numel(); ++i) {
      const std::size_t s = static_cast<std::size_t>(i);
      m[s] = static_cast<T>(beta1 * m[s] + (1.0 - beta1) * g[i]);
      v[s] = static_cast<T>(beta2 * v[s] + (1.0 - beta2) * double(g[i]) * double(g[i]));
      const double mhat = m[s] / bc1;
      const double vhat = v[s] / bc2;
      p[i] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + eps));
    }
  }
}

// Per-purpose random streams. Derivations are keyed on the step, so a run
// that skips one pass consumes nothing from the other's stream.
inline Rng ape_pass_rng(std::uint64_t seed, std::int64_t step) {
  return Rng(seed).derive(0xA9Eull, static_cast<std::uint64_t>(step));
}
inline Rng denoise_pass_rng(std::uint64_t seed, std::int64_t step) {
  return Rng(seed).derive(0xD317ull, static_cast<std::uint64_t>(step));
}
inline Rng init_rng(std::uint64_t seed) { return Rng(seed).derive(0x1217ull); }
inline std::uint64_t epoch_shuffle_seed(std::uint64_t seed, std::int64_t epoch) {
  return Rng(seed).derive(0x5AFull, static_cast<std::uint64_t>(epoch)).seed();
}

template <class T>
struct StepLosses {
  Tensor<T> joint;            // scalar on the graph
  double loss_ape = 0.0;      // per-token means (0 when the pass is skipped)
  double loss_denoise = 0.0;
  std::int64_t tokens = 0;
};

// Builds the training loss for one batch on the given graph. Both passes run
// on the same triples: the APE pass feeds (src, mt -> MT encoder, pe), the
// de-noising pass feeds (src, noised pe embedding -> MT encoder, pe). At the
// lambda endpoints the unused pass is not constructed at all, which keeps
// lambda=1 runs bit-identical to a trainer without the de-noising path.
template <class T>
StepLosses<T> build_step_losses(Graph<T>& g, Model<T>& model, const std::vector<Triple>& triples,
                                const TrainConfig& cfg, std::int64_t step_index, bool training) {
  const std::vector<char> no_pads;
  const auto& allowed = model.pe_allowed();

  const bool run_ape = cfg.lambda > 0.0;
  const bool run_dn = cfg.lambda < 1.0;

  Rng rng_ape = ape_pass_rng(cfg.seed, step_index);
  Rng rng_dn = denoise_pass_rng(cfg.seed, step_index);

  StepLosses<T> out;
  Tensor<T> ape_sum, dn_sum;
  std::int64_t ape_tokens = 0, dn_tokens = 0;

  for (const auto& t : triples) {
    std::vector<std::int32_t> prefix(t.pe.begin(), t.pe.end() - 1);
    std::vector<std::int32_t> targets(t.pe.begin() + 1, t.pe.end());

    if (run_ape) {
      auto src_repr = model.encode_source(g, t.src, no_pads, training, &rng_ape);
      auto mt_repr = model.encode_mt(g, t.mt, no_pads, src_repr, no_pads, training, &rng_ape);
      auto states =
          model.decode_states(g, prefix, src_repr, no_pads, mt_repr, no_pads, training, &rng_ape);
      auto ce = g.smoothed_cross_entropy(model.logits(g, states), targets, cfg.label_smoothing,
                                         allowed, Vocabulary::pad_id);
      ape_sum = ape_tokens == 0 ? ce.loss_sum : g.add(ape_sum, ce.loss_sum);
      ape_tokens += ce.tokens;
    }
    if (run_dn) {
      auto src_repr = model.encode_source(g, t.src, no_pads, training, &rng_dn);
      auto pe_emb = model.embed(g, t.pe, training, &rng_dn);
      auto noised = g.add_adaptive_noise(pe_emb, cfg.noise.strength,
                                         sample_noise_like(pe_emb, cfg.noise, rng_dn));
      auto mt_repr =
          model.encode_mt_embedded(g, noised, no_pads, src_repr, no_pads, training, &rng_dn);
      auto states =
          model.decode_states(g, prefix, src_repr, no_pads, mt_repr, no_pads, training, &rng_dn);
      auto ce = g.smoothed_cross_entropy(model.logits(g, states), targets, cfg.label_smoothing,
                                         allowed, Vocabulary::pad_id);
      dn_sum = dn_tokens == 0 ? ce.loss_sum : g.add(dn_sum, ce.loss_sum);
      dn_tokens += ce.tokens;
    }
  }

  Tensor<T> loss_ape, loss_dn;
  if (run_ape) {
    loss_ape = g.scale(ape_sum, T(1) / T(ape_tokens));
    out.loss_ape = loss_ape.item();
    out.tokens = ape_tokens;
  }
  if (run_dn) {
    loss_dn = g.scale(dn_sum, T(1) / T(dn_tokens));
    out.loss_denoise = loss_dn.item();
    if (!run_ape) out.tokens = dn_tokens;
  }

  if (run_ape && run_dn) {
    out.joint = g.add(g.scale(loss_ape, static_cast<T>(cfg.lambda)),
                      g.scale(loss_dn, static_cast<T>(1.0 - cfg.lambda)));
  } else if (run_ape) {
    out.joint = loss_ape;
  } else {
    out.joint = loss_dn;
  }
  return out;
}

struct StepReport {
  std::int64_t step = 0;
  double lr = 0.0;
  double loss_ape = 0.0;
  double loss_denoise = 0.0;
  double joint = 0.0;
};

// One optimizer step on one batch: forward/backward for both passes, a single
// Adam update, bias mask re-applied.
template <class T>
StepReport train_step(Model<T>& model, const Batch& batch, AdamState<T>& opt,
                      const TrainConfig& cfg) {
  const std::int64_t step_index = opt.step + 1;
  model.params().zero_grad();

  Graph<T> g;
  auto losses = build_step_losses(g, model, batch.triples, cfg, step_index, true);

  StepReport rep;
  rep.step = step_index;
  rep.loss_ape = losses.loss_ape;
  rep.loss_denoise = losses.loss_denoise;
  rep.joint = losses.joint.item();
  if (!std::isfinite(rep.joint)) {
    throw DivergenceError("non-finite loss at step " + std::to_string(step_index) +
                          " (ape=" + std::to_string(rep.loss_ape) +
                          ", denoise=" + std::to_string(rep.loss_denoise) + ")");
  }
  g.backward(losses.joint);

  rep.lr = lr_at(step_index, model.config().d_model, cfg.warmup_steps);
  adam_update(model.params(), opt, rep.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
  model.apply_bias_mask();
  return rep;
}

// Mean-NLL perplexity of pe given (src, mt): dropout and noise off, label
// smoothing off.
template <class T>
double validation_perplexity(const Model<T>& model, const std::vector<Triple>& dev) {
  if (dev.empty()) throw DataError("validation: empty dev set");
  const std::vector<char> no_pads;
  Graph<T> g(false);
  double total_nll = 0.0;
  std::int64_t total_tokens = 0;
  for (const auto& t : dev) {
    std::vector<std::int32_t> prefix(t.pe.begin(), t.pe.end() - 1);
    std::vector<std::int32_t> targets(t.pe.begin() + 1, t.pe.end());
    auto src_repr = model.encode_source(g, t.src, no_pads, false, nullptr);
    auto mt_repr = model.encode_mt(g, t.mt, no_pads, src_repr, no_pads, false, nullptr);
    auto states =
        model.decode_states(g, prefix, src_repr, no_pads, mt_repr, no_pads, false, nullptr);
    auto ce = g.smoothed_cross_entropy(model.logits(g, states), targets, 0.0,
                                       model.pe_allowed(), Vocabulary::pad_id);
    total_nll += double(ce.loss_sum.item());
    total_tokens += ce.tokens;
  }
  return std::exp(total_nll / double(total_tokens));
}

struct TrainResult {
  std::int64_t steps = 0;
  double best_perplexity = std::numeric_limits<double>::infinity();
  std::int64_t best_epoch = -1;
};

// Epoch loop: shuffle, batch, step; a checkpoint (and a loss-log line) every
// save_interval steps; the lowest-dev-perplexity epoch snapshot is kept
// separately.
template <class T>
TrainResult train_loop(Model<T>& model, const std::vector<Triple>& train,
                       const std::vector<Triple>& dev, const TrainConfig& cfg,
                       CheckpointStore* store, const std::string& config_digest,
                       std::ostream* loss_log, std::ostream* progress = nullptr) {
  cfg.validate();
  AdamState<T> opt;
  TrainResult result;
  for (std::int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto batches =
        make_batches(train, cfg.batch_pe_tokens, epoch_shuffle_seed(cfg.seed, epoch));
    for (const auto& batch : batches) {
      const auto rep = train_step(model, batch, opt, cfg);
      result.steps = rep.step;
      if (rep.step % cfg.save_interval == 0) {
        if (store != nullptr) {
          store->save(model.params(), CheckpointMeta{rep.step, epoch, config_digest});
        }
        if (loss_log != nullptr) {
          (*loss_log) << rep.step << '\t' << rep.lr << '\t' << rep.loss_ape << '\t'
                      << rep.loss_denoise << '\t' << rep.joint << '\n';
          loss_log->flush();
        }
      }
    }
    if (!dev.empty()) {
      const double ppl = validation_perplexity(model, dev);
      if (progress != nullptr) {
        (*progress) << "epoch " << epoch << ": dev perplexity " << ppl << "\n";
      }
      if (ppl < result.best_perplexity) {
        result.best_perplexity = ppl;
        result.best_epoch = epoch;
        if (store != nullptr) {
          store->save_best(model.params(), CheckpointMeta{result.steps, epoch, config_digest});
        }
      }
    }
  }
  return result;
}

}  // namespace ape
