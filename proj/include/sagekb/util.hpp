#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace sagekb {

using TimePoint = std::chrono::system_clock::time_point;
using Clock = std::function<TimePoint()>;

Clock system_clock();
/// A clock frozen at `at`; used wherever output must be reproducible.
Clock fixed_clock(TimePoint at);

std::string to_rfc3339(TimePoint t);
TimePoint from_rfc3339(std::string_view text);

std::string sha256_hex(std::string_view data);

/// FNV-1a, 64 bit. Stable across platforms and processes.
std::uint64_t stable_hash64(std::string_view data);

std::string_view trim_view(std::string_view s);
std::string trim(std::string_view s);
std::string to_lower(std::string_view s);
/// Trims and collapses internal whitespace runs into single spaces.
std::string collapse_whitespace(std::string_view s);

std::vector<std::string> split_lines(std::string_view s);
std::vector<std::string> split_whitespace(std::string_view s);
std::string join(const std::vector<std::string>& parts, std::string_view sep);

/// Lowercase ASCII alphanumerics with single '-' separators.
std::string slugify(std::string_view s);

/// Largest prefix length <= cap that does not split a UTF-8 sequence.
std::size_t utf8_floor(std::string_view s, std::size_t cap);

/// Strips list decorations such as "- ", "* ", "1. ", "2) " from a line.
std::string strip_list_marker(std::string_view line);

/// Runs fn(i) for i in [0, n) on at most `limit` threads. The first
/// exception thrown by any call is rethrown after all workers stop.
void parallel_for(std::size_t n, std::size_t limit,
                  const std::function<void(std::size_t)>& fn);

}  // namespace sagekb
