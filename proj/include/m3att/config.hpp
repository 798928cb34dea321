#pragma once

// key=value text files: one pair per line, '#' starts a comment, surrounding
// whitespace is ignored.

#include <filesystem>
#include <map>
#include <string>

namespace m3att {

std::map<std::string, std::string> parse_key_values(const std::string& text);
std::map<std::string, std::string> read_key_values(const std::filesystem::path& path);

double parse_real(const std::string& key, const std::string& value);
long long parse_integer(const std::string& key, const std::string& value);
bool parse_bool(const std::string& key, const std::string& value);

}  // namespace m3att
