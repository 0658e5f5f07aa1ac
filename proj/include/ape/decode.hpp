#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ape/bpe.hpp"
#include "ape/model.hpp"
#include "ape/vocab.hpp"

namespace ape {

// Partial decode: generated tokens (BOS excluded), raw accumulated
// log-probability, no length normalization anywhere.
struct BeamHypothesis {
  std::vector<std::int32_t> tokens;
  double score = 0.0;
  bool finished = false;
};

// Next-token distribution for a generated prefix. Implemented by the
// transformer ensemble and by table-driven toy scorers in tests.
class StepScorer {
 public:
  virtual ~StepScorer() = default;
  virtual std::int32_t vocab_size() const = 0;
  // log P(token | prefix) for every token id; prefix excludes BOS.
  virtual std::vector<double> log_probs(std::span<const std::int32_t> prefix) = 0;
};

// log of the arithmetic mean of member probability vectors.
std::vector<double> ensemble_log_probs(const std::vector<std::vector<double>>& member_probs);

// Standard beam search: each live hypothesis expands with its `beam` best
// next tokens, the `beam` best children overall survive; EOS-terminated ones
// are set aside. Stops once `beam` hypotheses have finished or `max_len`
// tokens were generated; returns the best finished hypothesis, falling back
// to the best live one. Ties break to the lexicographically smaller
// sequence. `forbidden` ids (PAD, BOS) are never generated.
BeamHypothesis beam_search(StepScorer& scorer, std::int32_t eos_id,
                           std::span<const std::int32_t> forbidden, std::int64_t beam,
                           std::int64_t max_len);

// Exhaustive argmax over all EOS-terminated sequences up to max_len; the
// test oracle for beam_search.
BeamHypothesis brute_force_best(StepScorer& scorer, std::int32_t eos_id,
                                std::span<const std::int32_t> forbidden, std::int64_t max_len);

// Scores next tokens with an averaged ensemble of transformers over one
// (source, mt) pair. Encoders run once; the decoder re-runs per prefix.
template <class T>
class EnsembleScorer : public StepScorer {
 public:
  EnsembleScorer(std::vector<const Model<T>*> models, std::span<const std::int32_t> src_ids,
                 std::span<const std::int32_t> mt_ids)
      : models_(std::move(models)) {
    if (models_.empty()) throw ConfigError("ensemble needs at least one model");
    vocab_size_ = static_cast<std::int32_t>(models_.front()->config().vocab_size);
    for (const auto* m : models_) {
      if (m->config().vocab_size != vocab_size_) {
        throw DataError("ensemble members disagree on vocabulary size: " +
                        std::to_string(m->config().vocab_size) + " vs " +
                        std::to_string(vocab_size_));
      }
    }
    const std::vector<char> no_pads;
    for (const auto* m : models_) {
      Graph<T> g(false);
      auto src_repr = m->encode_source(g, src_ids, no_pads, false, nullptr);
      auto mt_repr = m->encode_mt(g, mt_ids, no_pads, src_repr, no_pads, false, nullptr);
      src_reprs_.push_back(std::move(src_repr));
      mt_reprs_.push_back(std::move(mt_repr));
    }
  }

  std::int32_t vocab_size() const override { return vocab_size_; }

  std::vector<double> log_probs(std::span<const std::int32_t> prefix) override {
    const std::vector<char> no_pads;
    std::vector<std::int32_t> input;
    input.reserve(prefix.size() + 1);
    input.push_back(Vocabulary::bos_id);
    input.insert(input.end(), prefix.begin(), prefix.end());

    std::vector<std::vector<double>> member_probs;
    member_probs.reserve(models_.size());
    for (std::size_t m = 0; m < models_.size(); ++m) {
      Graph<T> g(false);
      auto states = models_[m]->decode_states(g, input, src_reprs_[m], no_pads, mt_reprs_[m],
                                              no_pads, false, nullptr);
      auto probs = g.softmax(models_[m]->logits(g, states), -1);
      const std::int64_t last = (states.dim(0) - 1) * vocab_size_;
      std::vector<double> row(static_cast<std::size_t>(vocab_size_));
      for (std::int32_t i = 0; i < vocab_size_; ++i) {
        row[static_cast<std::size_t>(i)] = double(probs.at(last + i));
      }
      member_probs.push_back(std::move(row));
    }
    return ensemble_log_probs(member_probs);
  }

 private:
  std::vector<const Model<T>*> models_;
  std::vector<Tensor<T>> src_reprs_;
  std::vector<Tensor<T>> mt_reprs_;
  std::int32_t vocab_size_ = 0;
};

struct DecodeOptions {
  std::int64_t beam = 4;
  std::int64_t max_len_margin = 50;  // max_len = mt content length + margin
  int threads = 1;
};

// Decodes parallel source/MT lines into post-edited text (subword markers
// joined). Empty input lines are rejected. Deterministic, and parallel over
// sentences when threads > 1.
std::vector<std::string> decode_corpus(const std::vector<const Model<float>*>& models,
                                       const Vocabulary& vocab,
                                       const std::vector<std::string>& src_lines,
                                       const std::vector<std::string>& mt_lines,
                                       const DecodeOptions& opts);

}  // namespace ape
