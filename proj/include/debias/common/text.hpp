#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace debias::text {

// ASCII-only case folding; non-ASCII bytes (UTF-8) pass through untouched.
std::string lower(std::string_view s);
bool iequals(std::string_view a, std::string_view b);

std::string_view trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char delim);
std::vector<std::string> split_whitespace(std::string_view s);
std::string join(const std::vector<std::string>& parts, std::string_view sep);

// Collapses runs of whitespace into single spaces and trims the ends.
std::string normalize_space(std::string_view s);

bool starts_with_vowel(std::string_view word);

}  // namespace debias::text
