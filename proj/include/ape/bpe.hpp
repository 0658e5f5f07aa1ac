#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace ape {

// Joint byte-pair encoding learned over whitespace-tokenized words. Merges
// never cross word boundaries; a non-final subword carries the continuation
// marker ("xx@@"), word end is implicit at the last subword. The frequency
// table counts marker-decorated subwords over the training corpus and backs
// the vocabulary-threshold filter of apply_bpe.
struct BpeModel {
  std::vector<std::pair<std::string, std::string>> merges;
  std::string marker = "@@";
  std::unordered_map<std::string, std::int64_t> subword_frequencies;

  // merged symbol -> the pair that formed it (first creation wins);
  // rebuilt on load, used to revert subwords under the threshold.
  std::unordered_map<std::string, std::pair<std::string, std::string>> merge_parts;
};

// Greedy most-frequent-pair merging, `n_merges` rounds or until no pair
// occurs twice. Ties break to the lexicographically smallest pair.
BpeModel learn_bpe(const std::vector<std::string>& lines, std::size_t n_merges);

// Character split, merges replayed in learned order, then subwords whose
// decorated frequency falls under `threshold` are recursively re-split into
// their merge parts. Single characters always stand.
std::vector<std::string> apply_bpe_word(const std::string& word, const BpeModel& model,
                                        std::int64_t threshold);

// Word-by-word application over a token line, memoized via `cache`.
std::string apply_bpe_line(const std::string& line, const BpeModel& model, std::int64_t threshold,
                           std::unordered_map<std::string, std::string>& cache);

// Model file ("#bpe-v1", one merge per line) plus sibling "<path>.freq"
// frequency table ("subword<TAB>count").
void save_bpe(const BpeModel& model, const std::string& path);
BpeModel load_bpe(const std::string& path);

// Undoes BPE segmentation: "xx@@ yy" -> "xxyy".
std::string join_subwords(const std::vector<std::string>& subwords, const std::string& marker);

}  // namespace ape
