#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

// Small string utilities shared by the prompt builders and response parsers.
namespace stagecraft::text {

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);

// CRLF and lone CR become LF; trailing spaces/tabs on each line are dropped.
std::string normalize_newlines(std::string_view s);

std::vector<std::string> split_lines(std::string_view s);
std::size_t word_count(std::string_view s);

// Splits prose into sentences at ., ! or ? (optionally followed by closing
// quotes or brackets) followed by whitespace. Blank-line breaks also split.
std::vector<std::string> split_sentences(std::string_view prose);

bool contains_icase(std::string_view haystack, std::string_view needle);

// Replaces every `{key}` with vars[key]; unknown placeholders stay verbatim.
std::string render(std::string_view tmpl, const std::map<std::string, std::string>& vars);

// Lowercase hex SHA-256 of the bytes of `data`.
std::string sha256_hex(std::string_view data);

}  // namespace stagecraft::text
