#include "ape/vocab.hpp"

#include <algorithm>
#include <fstream>

#include "ape/errors.hpp"
#include "ape/textio.hpp"

namespace ape {

const std::vector<std::string>& Vocabulary::special_tokens() {
  static const std::vector<std::string> specials{"<pad>", "<bos>", "<eos>", "<unk>"};
  return specials;
}

Vocabulary::Vocabulary(std::vector<std::string> tokens, std::vector<char> pe_allowed)
    : tokens_(std::move(tokens)), pe_allowed_(std::move(pe_allowed)) {
  if (tokens_.size() < static_cast<std::size_t>(n_specials)) {
    throw DataError("vocabulary must start with the four special tokens");
  }
  for (std::int32_t i = 0; i < n_specials; ++i) {
    if (tokens_[static_cast<std::size_t>(i)] != special_tokens()[static_cast<std::size_t>(i)]) {
      throw DataError("vocabulary specials out of order: got " +
                      tokens_[static_cast<std::size_t>(i)]);
    }
  }
  if (pe_allowed_.size() != tokens_.size()) {
    throw DataError("pe_allowed size does not match vocabulary size");
  }
  for (std::int32_t i = 0; i < n_specials; ++i) pe_allowed_[static_cast<std::size_t>(i)] = 1;
  index_.reserve(tokens_.size());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<std::int32_t>(i)).second) {
      throw DataError("duplicate vocabulary token: " + tokens_[i]);
    }
  }
}

std::int32_t Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? unk_id : it->second;
}

const std::string& Vocabulary::token(std::int32_t tid) const {
  if (tid < 0 || tid >= size()) {
    throw VocabError("token id " + std::to_string(tid) + " outside vocabulary of size " +
                     std::to_string(size()));
  }
  return tokens_[static_cast<std::size_t>(tid)];
}

std::vector<std::int32_t> Vocabulary::encode(const std::string& line) const {
  std::vector<std::int32_t> ids;
  for (const auto& tok : split_tokens(line)) ids.push_back(id(tok));
  return ids;
}

std::string Vocabulary::decode(const std::vector<std::int32_t>& ids) const {
  std::vector<std::string> toks;
  for (auto tid : ids) {
    if (tid >= n_specials) toks.push_back(token(tid));
  }
  return join_tokens(toks);
}

Vocabulary build_vocabulary(const std::vector<const std::vector<std::string>*>& sides,
                            const std::vector<std::string>& pe_lines) {
  std::unordered_map<std::string, std::int64_t> counts;
  for (const auto* side : sides) {
    for (const auto& line : *side) {
      for (auto& tok : split_tokens(line)) counts[tok] += 1;
    }
  }
  std::vector<std::pair<std::string, std::int64_t>> rows(counts.begin(), counts.end());
  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  std::vector<std::string> tokens = Vocabulary::special_tokens();
  tokens.reserve(tokens.size() + rows.size());
  for (auto& [tok, _] : rows) tokens.push_back(tok);

  std::unordered_map<std::string, char> on_pe_side;
  for (const auto& line : pe_lines) {
    for (auto& tok : split_tokens(line)) on_pe_side[tok] = 1;
  }
  std::vector<char> pe_allowed(tokens.size(), 0);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i < static_cast<std::size_t>(Vocabulary::n_specials) || on_pe_side.count(tokens[i])) {
      pe_allowed[i] = 1;
    }
  }
  return Vocabulary(std::move(tokens), std::move(pe_allowed));
}

void save_vocabulary(const Vocabulary& vocab, const std::string& path) {
  write_lines(path, vocab.tokens());
  std::ofstream pe(path + ".pe_allowed");
  if (!pe) throw IoError("cannot write " + path + ".pe_allowed");
  for (std::int32_t i = 0; i < vocab.size(); ++i) pe << (vocab.allowed(i) ? '1' : '0') << '\n';
  if (!pe) throw IoError("write failed for " + path + ".pe_allowed");
}

Vocabulary load_vocabulary(const std::string& path) {
  auto tokens = read_lines(path);
  auto marks = read_lines(path + ".pe_allowed");
  if (marks.size() != tokens.size()) {
    throw DataError(path + ".pe_allowed has " + std::to_string(marks.size()) + " lines for " +
                    std::to_string(tokens.size()) + " tokens");
  }
  std::vector<char> pe_allowed(tokens.size(), 0);
  for (std::size_t i = 0; i < marks.size(); ++i) {
    if (marks[i] != "0" && marks[i] != "1") {
      throw DataError(path + ".pe_allowed: expected 0/1, got " + marks[i]);
    }
    pe_allowed[i] = marks[i] == "1" ? 1 : 0;
  }
  return Vocabulary(std::move(tokens), std::move(pe_allowed));
}

}  // namespace ape
