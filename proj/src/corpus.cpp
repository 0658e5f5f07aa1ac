#include "ape/corpus.hpp"

#include <algorithm>
#include <random>

#include "ape/errors.hpp"
#include "ape/textio.hpp"

namespace ape {

namespace {

std::int64_t token_count(const std::string& line) {
  return static_cast<std::int64_t>(split_tokens(line).size());
}

void append_filtered(std::vector<TextTriple>& out, const std::vector<std::string>& src,
                     const std::vector<std::string>& mt, const std::vector<std::string>& pe,
                     std::int64_t max_len, std::int64_t copies) {
  std::vector<TextTriple> kept;
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (token_count(src[i]) > max_len || token_count(mt[i]) > max_len ||
        token_count(pe[i]) > max_len) {
      continue;
    }
    kept.push_back({src[i], mt[i], pe[i]});
  }
  for (std::int64_t c = 0; c < copies; ++c) out.insert(out.end(), kept.begin(), kept.end());
}

}  // namespace

std::vector<TextTriple> prepare_triples(
    const std::vector<std::string>& src, const std::vector<std::string>& mt,
    const std::vector<std::string>& pe, std::int64_t max_len, std::int64_t upsample,
    const std::vector<std::string>* syn_src, const std::vector<std::string>* syn_mt,
    const std::vector<std::string>* syn_pe, const std::string& name_src,
    const std::string& name_mt, const std::string& name_pe) {
  if (max_len < 1) throw ConfigError("max_len must be >= 1");
  if (upsample < 1) throw ConfigError("upsample factor must be >= 1");
  if (src.size() != mt.size() || src.size() != pe.size()) {
    throw DataError("line counts differ: " + name_src + "=" + std::to_string(src.size()) + ", " +
                    name_mt + "=" + std::to_string(mt.size()) + ", " + name_pe + "=" +
                    std::to_string(pe.size()));
  }
  const bool has_syn = syn_src != nullptr;
  if (has_syn && (syn_mt == nullptr || syn_pe == nullptr ||
                  syn_src->size() != syn_mt->size() || syn_src->size() != syn_pe->size())) {
    throw DataError("synthetic sides are missing or their line counts differ");
  }

  std::vector<TextTriple> out;
  append_filtered(out, src, mt, pe, max_len, upsample);
  if (has_syn) append_filtered(out, *syn_src, *syn_mt, *syn_pe, max_len, 1);
  return out;
}

Triple encode_triple(const TextTriple& t, const Vocabulary& vocab) {
  const auto wrap = [&](const std::string& line) {
    std::vector<std::int32_t> ids;
    ids.push_back(Vocabulary::bos_id);
    for (auto id : vocab.encode(line)) ids.push_back(id);
    ids.push_back(Vocabulary::eos_id);
    return ids;
  };
  return Triple{wrap(t.src), wrap(t.mt), wrap(t.pe)};
}

std::vector<Triple> encode_triples(const std::vector<TextTriple>& ts, const Vocabulary& vocab) {
  std::vector<Triple> out;
  out.reserve(ts.size());
  for (const auto& t : ts) out.push_back(encode_triple(t, vocab));
  return out;
}

namespace {

BatchSide pad_side(const std::vector<Triple>& triples,
                   const std::vector<std::int32_t> Triple::*side) {
  BatchSide out;
  out.rows = static_cast<std::int64_t>(triples.size());
  out.cols = 0;
  for (const auto& t : triples) {
    out.cols = std::max(out.cols, static_cast<std::int64_t>((t.*side).size()));
  }
  out.ids.assign(static_cast<std::size_t>(out.rows * out.cols), Vocabulary::pad_id);
  out.pad_mask.assign(static_cast<std::size_t>(out.rows * out.cols), 1);
  for (std::int64_t r = 0; r < out.rows; ++r) {
    const auto& seq = triples[static_cast<std::size_t>(r)].*side;
    for (std::size_t c = 0; c < seq.size(); ++c) {
      out.ids[static_cast<std::size_t>(r * out.cols) + c] = seq[c];
      out.pad_mask[static_cast<std::size_t>(r * out.cols) + c] = 0;
    }
  }
  return out;
}

Batch finish_batch(std::vector<Triple>&& triples) {
  Batch b;
  b.triples = std::move(triples);
  b.src = pad_side(b.triples, &Triple::src);
  b.mt = pad_side(b.triples, &Triple::mt);
  b.pe = pad_side(b.triples, &Triple::pe);
  b.pe_tokens = 0;
  for (const auto& t : b.triples) b.pe_tokens += static_cast<std::int64_t>(t.pe.size());
  return b;
}

}  // namespace

std::vector<Batch> make_batches(std::vector<Triple> triples, std::int64_t min_pe_tokens,
                                std::optional<std::uint64_t> shuffle_seed) {
  if (triples.empty()) throw DataError("make_batches: no triples");
  if (min_pe_tokens < 1) throw ConfigError("min_pe_tokens must be >= 1");
  if (shuffle_seed) {
    std::mt19937_64 engine(*shuffle_seed);
    std::shuffle(triples.begin(), triples.end(), engine);
  }
  std::vector<Batch> batches;
  std::vector<Triple> current;
  std::int64_t tokens = 0;
  for (auto& t : triples) {
    tokens += static_cast<std::int64_t>(t.pe.size());
    current.push_back(std::move(t));
    if (tokens >= min_pe_tokens) {
      batches.push_back(finish_batch(std::move(current)));
      current.clear();
      tokens = 0;
    }
  }
  if (!current.empty()) batches.push_back(finish_batch(std::move(current)));
  return batches;
}

}  // namespace ape
