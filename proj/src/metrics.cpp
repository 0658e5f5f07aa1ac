#include "ape/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

#include "ape/errors.hpp"
#include "ape/textio.hpp"

namespace ape {

namespace {

constexpr int kMaxOrder = 4;
constexpr std::int64_t kMaxShiftBlock = 10;

using Tokens = std::vector<std::string>;

std::map<Tokens, std::int64_t> ngram_counts(const Tokens& words, int n) {
  std::map<Tokens, std::int64_t> counts;
  if (static_cast<int>(words.size()) < n) return counts;
  for (std::size_t i = 0; i + n <= words.size(); ++i) {
    counts[Tokens(words.begin() + i, words.begin() + i + n)] += 1;
  }
  return counts;
}

std::int64_t levenshtein(const Tokens& a, const Tokens& b) {
  const std::size_t n = a.size(), m = b.size();
  std::vector<std::int64_t> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = static_cast<std::int64_t>(j);
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<std::int64_t>(i);
    for (std::size_t j = 1; j <= m; ++j) {
      const std::int64_t subst = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, subst});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

bool block_matches_reference(const Tokens& ref, const Tokens& hyp, std::size_t start,
                             std::size_t len) {
  if (ref.size() < len) return false;
  for (std::size_t r = 0; r + len <= ref.size(); ++r) {
    bool match = true;
    for (std::size_t i = 0; i < len; ++i) {
      if (ref[r + i] != hyp[start + i]) {
        match = false;
        break;
      }
    }
    if (match) return true;
  }
  return false;
}

// One greedy round: the single block move with the largest distance
// reduction, scanned in deterministic order. Returns true when applied.
bool apply_best_shift(Tokens& hyp, const Tokens& ref, std::int64_t& distance) {
  std::int64_t best = distance;
  Tokens best_hyp;
  const std::size_t n = hyp.size();
  for (std::size_t start = 0; start < n; ++start) {
    const std::size_t max_len =
        std::min<std::size_t>(static_cast<std::size_t>(kMaxShiftBlock), n - start);
    for (std::size_t len = 1; len <= max_len; ++len) {
      if (!block_matches_reference(ref, hyp, start, len)) continue;
      Tokens rest;
      rest.reserve(n - len);
      rest.insert(rest.end(), hyp.begin(), hyp.begin() + start);
      rest.insert(rest.end(), hyp.begin() + start + len, hyp.end());
      for (std::size_t pos = 0; pos <= rest.size(); ++pos) {
        if (pos == start) continue;  // no-op move
        Tokens moved;
        moved.reserve(n);
        moved.insert(moved.end(), rest.begin(), rest.begin() + pos);
        moved.insert(moved.end(), hyp.begin() + start, hyp.begin() + start + len);
        moved.insert(moved.end(), rest.begin() + pos, rest.end());
        const std::int64_t d = levenshtein(moved, ref);
        if (d < best) {
          best = d;
          best_hyp = std::move(moved);
        }
      }
    }
  }
  if (best < distance) {
    hyp = std::move(best_hyp);
    distance = best;
    return true;
  }
  return false;
}

}  // namespace

TokenLines tokenize_lines(const std::vector<std::string>& lines) {
  TokenLines out;
  out.reserve(lines.size());
  for (const auto& l : lines) out.push_back(split_tokens(l));
  return out;
}

BleuReport corpus_bleu_multi(const TokenLines& hyps, const std::vector<TokenLines>& ref_sets) {
  if (ref_sets.empty()) throw DataError("bleu: no reference corpus");
  for (const auto& refs : ref_sets) {
    if (refs.size() != hyps.size()) {
      throw DataError("bleu: hypothesis has " + std::to_string(hyps.size()) +
                      " lines but a reference has " + std::to_string(refs.size()));
    }
  }

  std::int64_t correct[kMaxOrder] = {0, 0, 0, 0};
  std::int64_t total[kMaxOrder] = {0, 0, 0, 0};
  BleuReport rep;
  for (std::size_t s = 0; s < hyps.size(); ++s) {
    const auto& hyp = hyps[s];
    const std::int64_t hlen = static_cast<std::int64_t>(hyp.size());
    rep.hyp_len += hlen;

    // closest reference length; ties to the shorter one
    std::int64_t closest = -1;
    for (const auto& refs : ref_sets) {
      const std::int64_t rlen = static_cast<std::int64_t>(refs[s].size());
      if (closest < 0 || std::abs(rlen - hlen) < std::abs(closest - hlen) ||
          (std::abs(rlen - hlen) == std::abs(closest - hlen) && rlen < closest)) {
        closest = rlen;
      }
    }
    rep.ref_len += closest;

    for (int n = 1; n <= kMaxOrder; ++n) {
      auto hyp_counts = ngram_counts(hyp, n);
      std::map<Tokens, std::int64_t> clip;
      for (const auto& refs : ref_sets) {
        for (const auto& [gram, count] : ngram_counts(refs[s], n)) {
          auto it = clip.find(gram);
          if (it == clip.end()) {
            clip.emplace(gram, count);
          } else {
            it->second = std::max(it->second, count);
          }
        }
      }
      for (const auto& [gram, count] : hyp_counts) {
        auto it = clip.find(gram);
        if (it != clip.end()) correct[n - 1] += std::min(count, it->second);
        total[n - 1] += count;
      }
    }
  }

  double log_sum = 0.0;
  bool any_zero = false;
  for (int n = 0; n < kMaxOrder; ++n) {
    rep.precisions[n] = total[n] > 0 ? double(correct[n]) / double(total[n]) : 0.0;
    if (rep.precisions[n] <= 0.0) {
      any_zero = true;
    } else {
      log_sum += std::log(rep.precisions[n]);
    }
  }
  rep.brevity_penalty =
      rep.hyp_len == 0
          ? 0.0
          : std::min(1.0, std::exp(1.0 - double(rep.ref_len) / double(rep.hyp_len)));
  rep.ratio = rep.ref_len > 0 ? double(rep.hyp_len) / double(rep.ref_len) : 0.0;
  rep.bleu = any_zero || rep.hyp_len == 0
                 ? 0.0
                 : 100.0 * rep.brevity_penalty * std::exp(log_sum / kMaxOrder);
  return rep;
}

BleuReport corpus_bleu(const TokenLines& hyps, const TokenLines& refs) {
  return corpus_bleu_multi(hyps, {refs});
}

TerReport corpus_ter(const TokenLines& hyps, const TokenLines& refs, bool with_shifts) {
  if (hyps.size() != refs.size()) {
    throw DataError("ter: hypothesis has " + std::to_string(hyps.size()) +
                    " lines but reference has " + std::to_string(refs.size()));
  }
  TerReport rep;
  for (std::size_t s = 0; s < hyps.size(); ++s) {
    const auto& ref = refs[s];
    if (ref.empty()) throw DataError("ter: empty reference at line " + std::to_string(s + 1));
    Tokens hyp = hyps[s];
    std::int64_t distance = levenshtein(hyp, ref);
    std::int64_t shifts = 0;
    if (with_shifts) {
      while (distance > 0 && apply_best_shift(hyp, ref, distance)) ++shifts;
    }
    rep.edits += distance + shifts;
    rep.shifts += shifts;
    rep.ref_len += static_cast<std::int64_t>(ref.size());
  }
  rep.ter = rep.ref_len > 0 ? 100.0 * double(rep.edits) / double(rep.ref_len) : 0.0;
  return rep;
}

std::string format_bleu(const BleuReport& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "BLEU = %.2f, %.1f/%.1f/%.1f/%.1f (BP=%.3f, ratio=%.3f, hyp_len=%lld, "
                "ref_len=%lld)",
                r.bleu, 100.0 * r.precisions[0], 100.0 * r.precisions[1], 100.0 * r.precisions[2],
                100.0 * r.precisions[3], r.brevity_penalty, r.ratio,
                static_cast<long long>(r.hyp_len), static_cast<long long>(r.ref_len));
  return buf;
}

std::string format_ter(const TerReport& r) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "TER = %.2f", r.ter);
  return buf;
}

}  // namespace ape
