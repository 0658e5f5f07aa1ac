#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ape/vocab.hpp"

namespace ape {

// One training example as id sequences, each BOS ... EOS delimited.
struct Triple {
  std::vector<std::int32_t> src;
  std::vector<std::int32_t> mt;
  std::vector<std::int32_t> pe;
};

// Parallel token lines, pre-encoding.
struct TextTriple {
  std::string src;
  std::string mt;
  std::string pe;
};

// Length-filters (any side over max_len subword tokens drops the triple),
// replicates the real triples `upsample` times, appends synthetic ones once.
// The name arguments only feed error messages.
std::vector<TextTriple> prepare_triples(
    const std::vector<std::string>& src, const std::vector<std::string>& mt,
    const std::vector<std::string>& pe, std::int64_t max_len, std::int64_t upsample,
    const std::vector<std::string>* syn_src, const std::vector<std::string>* syn_mt,
    const std::vector<std::string>* syn_pe, const std::string& name_src = "src",
    const std::string& name_mt = "mt", const std::string& name_pe = "pe");

// Text to ids with BOS/EOS delimiters; unknown subwords become <unk>.
Triple encode_triple(const TextTriple& t, const Vocabulary& vocab);
std::vector<Triple> encode_triples(const std::vector<TextTriple>& ts, const Vocabulary& vocab);

// A padded batch. Row-major [rows, cols] matrices with PAD fill; the mask is
// true exactly at PAD positions.
struct BatchSide {
  std::vector<std::int32_t> ids;
  std::vector<char> pad_mask;
  std::int64_t rows = 0;
  std::int64_t cols = 0;

  std::int32_t at(std::int64_t r, std::int64_t c) const {
    return ids[static_cast<std::size_t>(r * cols + c)];
  }
};

struct Batch {
  std::vector<Triple> triples;
  BatchSide src;
  BatchSide mt;
  BatchSide pe;
  std::int64_t pe_tokens = 0;  // non-PAD entries of the pe matrix
};

// Greedy accumulation until the batch holds at least `min_pe_tokens` unpadded
// post-editing tokens; the epoch tail may come up short. When `shuffle_seed`
// is set the triples are permuted first (pass seed+epoch for fresh orderings).
std::vector<Batch> make_batches(std::vector<Triple> triples, std::int64_t min_pe_tokens,
                                std::optional<std::uint64_t> shuffle_seed);

}  // namespace ape
