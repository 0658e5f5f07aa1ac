#include "ape/bpe.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "ape/errors.hpp"
#include "ape/textio.hpp"

namespace ape {

namespace {

using SymbolWord = std::vector<std::string>;

// Replaces every adjacent (left,right) occurrence, scanning left to right.
void merge_in_word(SymbolWord& word, const std::string& left, const std::string& right) {
  SymbolWord out;
  out.reserve(word.size());
  std::size_t i = 0;
  while (i < word.size()) {
    if (i + 1 < word.size() && word[i] == left && word[i + 1] == right) {
      out.push_back(left + right);
      i += 2;
    } else {
      out.push_back(std::move(word[i]));
      ++i;
    }
  }
  word = std::move(out);
}

void record_merge_parts(BpeModel& model) {
  model.merge_parts.clear();
  for (const auto& [l, r] : model.merges) {
    model.merge_parts.emplace(l + r, std::make_pair(l, r));
  }
}

void emit_checked(const std::string& symbol, bool final_pos, const BpeModel& model,
                  std::int64_t threshold, std::vector<std::string>& out) {
  const std::string decorated = final_pos ? symbol : symbol + model.marker;
  if (threshold > 0 && utf8_length(symbol) > 1) {
    auto fit = model.subword_frequencies.find(decorated);
    const std::int64_t freq = fit == model.subword_frequencies.end() ? 0 : fit->second;
    if (freq < threshold) {
      auto pit = model.merge_parts.find(symbol);
      if (pit != model.merge_parts.end()) {
        emit_checked(pit->second.first, false, model, threshold, out);
        emit_checked(pit->second.second, final_pos, model, threshold, out);
        return;
      }
      // not splittable: emitted as-is even though it is rare
    }
  }
  out.push_back(decorated);
}

}  // namespace

BpeModel learn_bpe(const std::vector<std::string>& lines, std::size_t n_merges) {
  std::unordered_map<std::string, std::int64_t> word_counts;
  for (const auto& line : lines) {
    for (auto& tok : split_tokens(line)) word_counts[tok] += 1;
  }
  if (word_counts.empty()) throw DataError("learn_bpe: empty corpus");

  // deterministic word order
  std::vector<std::pair<std::string, std::int64_t>> words(word_counts.begin(), word_counts.end());
  std::sort(words.begin(), words.end());
  std::vector<SymbolWord> symbols;
  symbols.reserve(words.size());
  for (const auto& [w, _] : words) symbols.push_back(utf8_chars(w));

  BpeModel model;
  for (std::size_t round = 0; round < n_merges; ++round) {
    // full recount each round; corpora at this scale keep it cheap
    std::map<std::pair<std::string, std::string>, std::int64_t> pair_counts;
    for (std::size_t wi = 0; wi < symbols.size(); ++wi) {
      const auto& syms = symbols[wi];
      const std::int64_t freq = words[wi].second;
      for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
        pair_counts[{syms[i], syms[i + 1]}] += freq;
      }
    }
    std::int64_t best_count = 0;
    const std::pair<std::string, std::string>* best = nullptr;
    for (const auto& [pair, count] : pair_counts) {
      // std::map iterates pairs in lexicographic order, so the first count
      // maximum is also the lexicographically smallest tie
      if (count > best_count) {
        best_count = count;
        best = &pair;
      }
    }
    if (best == nullptr || best_count < 2) break;  // no pair repeats
    model.merges.push_back(*best);
    for (auto& syms : symbols) {
      if (syms.size() > 1) merge_in_word(syms, best->first, best->second);
    }
  }

  record_merge_parts(model);

  for (std::size_t wi = 0; wi < symbols.size(); ++wi) {
    const auto& syms = symbols[wi];
    for (std::size_t i = 0; i < syms.size(); ++i) {
      const bool final_pos = i + 1 == syms.size();
      model.subword_frequencies[final_pos ? syms[i] : syms[i] + model.marker] += words[wi].second;
    }
  }
  return model;
}

std::vector<std::string> apply_bpe_word(const std::string& word, const BpeModel& model,
                                        std::int64_t threshold) {
  if (threshold < 0) throw ConfigError("bpe threshold must be >= 0");
  SymbolWord syms = utf8_chars(word);
  for (const auto& [l, r] : model.merges) {
    if (syms.size() < 2) break;
    merge_in_word(syms, l, r);
  }
  std::vector<std::string> out;
  out.reserve(syms.size());
  for (std::size_t i = 0; i < syms.size(); ++i) {
    emit_checked(syms[i], i + 1 == syms.size(), model, threshold, out);
  }
  return out;
}

std::string apply_bpe_line(const std::string& line, const BpeModel& model, std::int64_t threshold,
                           std::unordered_map<std::string, std::string>& cache) {
  std::string out;
  for (const auto& word : split_tokens(line)) {
    auto it = cache.find(word);
    if (it == cache.end()) {
      it = cache.emplace(word, join_tokens(apply_bpe_word(word, model, threshold))).first;
    }
    if (!out.empty()) out += ' ';
    out += it->second;
  }
  return out;
}

void save_bpe(const BpeModel& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "#bpe-v1\n";
  for (const auto& [l, r] : model.merges) out << l << ' ' << r << '\n';
  if (!out) throw IoError("write failed for " + path);

  std::ofstream freq(path + ".freq");
  if (!freq) throw IoError("cannot write " + path + ".freq");
  std::vector<std::pair<std::string, std::int64_t>> rows(model.subword_frequencies.begin(),
                                                         model.subword_frequencies.end());
  std::sort(rows.begin(), rows.end());
  for (const auto& [sub, count] : rows) freq << sub << '\t' << count << '\n';
  if (!freq) throw IoError("write failed for " + path + ".freq");
}

BpeModel load_bpe(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != "#bpe-v1") {
    throw DataError(path + ": missing #bpe-v1 header");
  }
  BpeModel model;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto sp = line.find(' ');
    if (sp == std::string::npos || sp == 0 || sp + 1 >= line.size()) {
      throw DataError(path + ": malformed merge line: " + line);
    }
    model.merges.emplace_back(line.substr(0, sp), line.substr(sp + 1));
  }
  record_merge_parts(model);

  std::ifstream freq(path + ".freq");
  if (!freq) throw IoError("cannot open " + path + ".freq");
  while (std::getline(freq, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw DataError(path + ".freq: malformed line: " + line);
    model.subword_frequencies[line.substr(0, tab)] =
        std::stoll(line.substr(tab + 1));
  }
  return model;
}

std::string join_subwords(const std::vector<std::string>& subwords, const std::string& marker) {
  std::string out;
  bool glue = false;
  for (const auto& sub : subwords) {
    if (!glue && !out.empty()) out += ' ';
    if (sub.size() >= marker.size() &&
        sub.compare(sub.size() - marker.size(), marker.size(), marker) == 0) {
      out += sub.substr(0, sub.size() - marker.size());
      glue = true;
    } else {
      out += sub;
      glue = false;
    }
  }
  return out;
}

}  // namespace ape
