#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ape {

// Corpus-level case-sensitive BLEU, multi-bleu conventions: clipped n-gram
// counts up to 4-grams pooled over the corpus, geometric mean, brevity
// penalty min(1, exp(1 - r/h)), no smoothing — any zero precision zeroes the
// score. Multi-reference capable (closest reference length, ties shorter).
struct BleuReport {
  double bleu = 0.0;             // percent
  double precisions[4] = {0, 0, 0, 0};
  double brevity_penalty = 0.0;
  double ratio = 0.0;            // hyp_len / ref_len
  std::int64_t hyp_len = 0;
  std::int64_t ref_len = 0;
};

// Translation edit rate: (ins + del + sub + block shifts) / reference length,
// shifts found greedily (the move that cuts the remaining word-level edit
// distance the most, one point each). Shifted blocks must match a contiguous
// reference span; block size capped at 10, move distance unbounded.
struct TerReport {
  double ter = 0.0;  // percent
  std::int64_t edits = 0;
  std::int64_t shifts = 0;
  std::int64_t ref_len = 0;
};

using TokenLines = std::vector<std::vector<std::string>>;

BleuReport corpus_bleu(const TokenLines& hyps, const TokenLines& refs);
BleuReport corpus_bleu_multi(const TokenLines& hyps, const std::vector<TokenLines>& ref_sets);

TerReport corpus_ter(const TokenLines& hyps, const TokenLines& refs, bool with_shifts = true);

// Tokenizes raw lines on whitespace (case preserved).
TokenLines tokenize_lines(const std::vector<std::string>& lines);

// "BLEU = 57.89, 100.0/75.0/66.7/50.0 (BP=0.819, ratio=0.833, hyp_len=5, ref_len=6)"
std::string format_bleu(const BleuReport& r);
// "TER = 25.00"
std::string format_ter(const TerReport& r);

}  // namespace ape
