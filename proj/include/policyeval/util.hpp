#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace policyeval::util {

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);
bool iequals(std::string_view a, std::string_view b);
bool icontains(std::string_view haystack, std::string_view needle);
std::string replace_all(std::string s, std::string_view from, std::string_view to);
std::vector<std::string> split_lines(std::string_view text);

// Fixed-precision decimal rendering; reports rely on this being stable.
std::string format_double(double v, int precision = 6);

std::uint64_t fnv1a64(std::string_view data);

// Hex digest of the SHA-256 of `data`.
std::string sha256_hex(std::string_view data);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view content);
void append_line(const std::filesystem::path& path, std::string_view line);

// Calls `fn` once per non-empty line with its zero-based line number.
void for_each_line(const std::filesystem::path& path,
                   const std::function<void(std::size_t, std::string_view)>& fn);

std::string utc_timestamp();

// Filesystem-safe token for artifact names (alnum kept, rest mapped to '-').
std::string sanitize_token(std::string_view s);

} // namespace policyeval::util
