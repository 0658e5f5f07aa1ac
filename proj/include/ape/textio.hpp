#pragma once

#include <string>
#include <vector>

namespace ape {

// Whole-file line IO for corpus data (UTF-8, one sentence per line).
std::vector<std::string> read_lines(const std::string& path);
void write_lines(const std::string& path, const std::vector<std::string>& lines);

// Whitespace tokenization; consecutive separators collapse.
std::vector<std::string> split_tokens(const std::string& line);
std::string join_tokens(const std::vector<std::string>& tokens);

// Splits a UTF-8 string into codepoint-sized chunks.
std::vector<std::string> utf8_chars(const std::string& s);
std::size_t utf8_length(const std::string& s);

}  // namespace ape
