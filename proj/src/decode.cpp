#include "ape/decode.hpp"

#include <algorithm>
#include <atomic>
#include <limits>
#include <thread>

#include "ape/errors.hpp"
#include "ape/textio.hpp"

namespace ape {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

bool sequence_less(const std::vector<std::int32_t>& a, const std::vector<std::int32_t>& b) {
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

// score-descending, lexicographic tie-break
bool better(const BeamHypothesis& a, const BeamHypothesis& b) {
  if (a.score != b.score) return a.score > b.score;
  return sequence_less(a.tokens, b.tokens);
}

}  // namespace

std::vector<double> ensemble_log_probs(const std::vector<std::vector<double>>& member_probs) {
  if (member_probs.empty()) throw DataError("ensemble: no members");
  const std::size_t v = member_probs.front().size();
  for (const auto& p : member_probs) {
    if (p.size() != v) {
      throw DataError("ensemble members disagree on vocabulary size: " +
                      std::to_string(p.size()) + " vs " + std::to_string(v));
    }
  }
  std::vector<double> out(v);
  const double inv = 1.0 / double(member_probs.size());
  for (std::size_t i = 0; i < v; ++i) {
    double acc = 0.0;
    for (const auto& p : member_probs) acc += p[i];
    out[i] = std::log(acc * inv);
  }
  return out;
}

BeamHypothesis beam_search(StepScorer& scorer, std::int32_t eos_id,
                           std::span<const std::int32_t> forbidden, std::int64_t beam,
                           std::int64_t max_len) {
  if (beam < 1) throw ConfigError("beam size must be >= 1");
  if (max_len < 1) throw ConfigError("max_len must be >= 1");
  const std::int32_t v = scorer.vocab_size();

  std::vector<BeamHypothesis> live{BeamHypothesis{}};
  std::vector<BeamHypothesis> finished;

  for (std::int64_t step = 0; step < max_len; ++step) {
    std::vector<BeamHypothesis> candidates;
    candidates.reserve(live.size() * static_cast<std::size_t>(beam));
    for (const auto& hyp : live) {
      auto lp = scorer.log_probs(hyp.tokens);
      if (static_cast<std::int32_t>(lp.size()) != v) {
        throw DataError("scorer returned " + std::to_string(lp.size()) + " log-probs for vocab " +
                        std::to_string(v));
      }
      for (auto f : forbidden) lp[static_cast<std::size_t>(f)] = kNegInf;

      // per-hypothesis beam-best next tokens (ids ascending on ties)
      std::vector<std::int32_t> ids(static_cast<std::size_t>(v));
      for (std::int32_t i = 0; i < v; ++i) ids[static_cast<std::size_t>(i)] = i;
      const auto take = std::min<std::size_t>(static_cast<std::size_t>(beam), ids.size());
      std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(take), ids.end(),
                        [&](std::int32_t a, std::int32_t b) {
                          const double la = lp[static_cast<std::size_t>(a)];
                          const double lb = lp[static_cast<std::size_t>(b)];
                          if (la != lb) return la > lb;
                          return a < b;
                        });
      for (std::size_t i = 0; i < take; ++i) {
        const std::int32_t tok = ids[i];
        if (lp[static_cast<std::size_t>(tok)] == kNegInf) continue;
        BeamHypothesis child;
        child.tokens = hyp.tokens;
        child.tokens.push_back(tok);
        child.score = hyp.score + lp[static_cast<std::size_t>(tok)];
        child.finished = tok == eos_id;
        candidates.push_back(std::move(child));
      }
    }
    if (candidates.empty()) break;
    std::sort(candidates.begin(), candidates.end(), better);

    // the beam best children overall survive; finished ones are set aside
    // into a pool of the best `beam` finished hypotheses
    std::vector<BeamHypothesis> next_live;
    std::size_t taken = 0;
    for (auto& c : candidates) {
      if (taken == static_cast<std::size_t>(beam)) break;
      ++taken;
      if (c.finished) {
        finished.push_back(std::move(c));
      } else {
        next_live.push_back(std::move(c));
      }
    }
    if (finished.size() > static_cast<std::size_t>(beam)) {
      std::sort(finished.begin(), finished.end(), better);
      finished.resize(static_cast<std::size_t>(beam));
    }
    live = std::move(next_live);
    if (live.empty()) break;
    // scores only decrease as tokens append, so once the best finished
    // hypothesis outscores every live one no continuation can overtake it
    if (!finished.empty()) {
      const auto& best_fin =
          *std::min_element(finished.begin(), finished.end(),
                            [](const auto& a, const auto& b) { return better(a, b); });
      if (best_fin.score >= live.front().score) break;
    }
  }

  if (!finished.empty()) {
    return *std::min_element(finished.begin(), finished.end(),
                             [](const auto& a, const auto& b) { return better(a, b); });
  }
  if (!live.empty()) {
    return *std::min_element(live.begin(), live.end(),
                             [](const auto& a, const auto& b) { return better(a, b); });
  }
  return BeamHypothesis{};  // everything forbidden: empty fallback
}

namespace {

void enumerate(StepScorer& scorer, std::int32_t eos_id, const std::vector<char>& banned,
               std::vector<std::int32_t>& prefix, double score, std::int64_t max_len,
               BeamHypothesis& best) {
  if (static_cast<std::int64_t>(prefix.size()) >= max_len) return;
  const auto lp = scorer.log_probs(prefix);
  for (std::int32_t tok = 0; tok < static_cast<std::int32_t>(lp.size()); ++tok) {
    if (banned[static_cast<std::size_t>(tok)]) continue;
    const double s = score + lp[static_cast<std::size_t>(tok)];
    if (s == kNegInf) continue;
    prefix.push_back(tok);
    if (tok == eos_id) {
      BeamHypothesis cand{prefix, s, true};
      if (best.tokens.empty() || better(cand, best)) best = std::move(cand);
    } else {
      enumerate(scorer, eos_id, banned, prefix, s, max_len, best);
    }
    prefix.pop_back();
  }
}

}  // namespace

BeamHypothesis brute_force_best(StepScorer& scorer, std::int32_t eos_id,
                                std::span<const std::int32_t> forbidden, std::int64_t max_len) {
  std::vector<char> banned(static_cast<std::size_t>(scorer.vocab_size()), 0);
  for (auto f : forbidden) banned[static_cast<std::size_t>(f)] = 1;
  BeamHypothesis best;
  std::vector<std::int32_t> prefix;
  enumerate(scorer, eos_id, banned, prefix, 0.0, max_len, best);
  return best;
}

std::vector<std::string> decode_corpus(const std::vector<const Model<float>*>& models,
                                       const Vocabulary& vocab,
                                       const std::vector<std::string>& src_lines,
                                       const std::vector<std::string>& mt_lines,
                                       const DecodeOptions& opts) {
  if (src_lines.size() != mt_lines.size()) {
    throw DataError("decode: src has " + std::to_string(src_lines.size()) + " lines, mt has " +
                    std::to_string(mt_lines.size()));
  }
  const std::vector<std::int32_t> forbidden{Vocabulary::pad_id, Vocabulary::bos_id};
  std::vector<std::string> out(src_lines.size());

  auto decode_one = [&](std::size_t i) {
    const auto src_toks = vocab.encode(src_lines[i]);
    const auto mt_toks = vocab.encode(mt_lines[i]);
    if (src_toks.empty() || mt_toks.empty()) {
      throw DataError("decode: empty src or mt at line " + std::to_string(i + 1));
    }
    std::vector<std::int32_t> src{Vocabulary::bos_id};
    src.insert(src.end(), src_toks.begin(), src_toks.end());
    src.push_back(Vocabulary::eos_id);
    std::vector<std::int32_t> mt{Vocabulary::bos_id};
    mt.insert(mt.end(), mt_toks.begin(), mt_toks.end());
    mt.push_back(Vocabulary::eos_id);

    EnsembleScorer<float> scorer(models, src, mt);
    const auto max_len = static_cast<std::int64_t>(mt_toks.size()) + opts.max_len_margin;
    auto hyp = beam_search(scorer, Vocabulary::eos_id, forbidden, opts.beam, max_len);

    std::vector<std::string> subwords;
    for (auto tok : hyp.tokens) {
      if (tok != Vocabulary::eos_id) subwords.push_back(vocab.token(tok));
    }
    out[i] = join_subwords(subwords, "@@");
  };

  const int threads = std::max(1, opts.threads);
  if (threads == 1 || src_lines.size() < 2) {
    for (std::size_t i = 0; i < src_lines.size(); ++i) decode_one(i);
  } else {
    std::vector<std::thread> pool;
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
    for (int t = 0; t < threads; ++t) {
      pool.emplace_back([&, t]() {
        try {
          for (std::size_t i = next.fetch_add(1); i < src_lines.size(); i = next.fetch_add(1)) {
            decode_one(i);
          }
        } catch (...) {
          errors[static_cast<std::size_t>(t)] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  return out;
}

}  // namespace ape
