#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace ape {

// Shared subword vocabulary over the source, MT and PE sides. pe_allowed
// marks tokens that may appear in post-editing output: exactly the specials
// plus every token observed on the PE side of the prepared training corpus.
class Vocabulary {
 public:
  static constexpr std::int32_t pad_id = 0;
  static constexpr std::int32_t bos_id = 1;
  static constexpr std::int32_t eos_id = 2;
  static constexpr std::int32_t unk_id = 3;
  static constexpr std::int32_t n_specials = 4;

  Vocabulary() = default;
  Vocabulary(std::vector<std::string> tokens, std::vector<char> pe_allowed);

  std::int32_t size() const { return static_cast<std::int32_t>(tokens_.size()); }

  // id lookup; unknown strings map to unk_id
  std::int32_t id(const std::string& token) const;
  const std::string& token(std::int32_t id) const;

  bool allowed(std::int32_t id) const { return pe_allowed_[static_cast<std::size_t>(id)] != 0; }
  const std::vector<char>& pe_allowed() const { return pe_allowed_; }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<std::int32_t> encode(const std::string& line) const;  // no BOS/EOS
  std::string decode(const std::vector<std::int32_t>& ids) const;   // skips specials

  static const std::vector<std::string>& special_tokens();

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> index_;
  std::vector<char> pe_allowed_;
};

// One shared vocabulary over every side, ordered by descending corpus
// frequency (ties lexicographic), specials first. `pe_lines` alone decides
// pe_allowed.
Vocabulary build_vocabulary(const std::vector<const std::vector<std::string>*>& sides,
                            const std::vector<std::string>& pe_lines);

// One token per line, line number = id, specials first. The PE-allowed marks
// ride in a sibling "<path>.pe_allowed" (0/1 per line).
void save_vocabulary(const Vocabulary& vocab, const std::string& path);
Vocabulary load_vocabulary(const std::string& path);

}  // namespace ape
