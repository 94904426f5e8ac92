#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ltc {

namespace fs = std::filesystem;

std::string sha256_hex(std::string_view data);
std::string sha1_hex(std::string_view data);
/// Raw 20-byte SHA-1 digest.
std::string sha1_raw(std::string_view data);

std::string read_file(const fs::path& path);
/// Writes through a sibling temporary file and renames it into place.
void write_file_atomic(const fs::path& path, std::string_view content);
void append_line(const fs::path& path, std::string_view line);

std::string_view trim(std::string_view s);
std::vector<std::string> split_lines(std::string_view text);
std::vector<std::string> split(std::string_view s, char sep);
std::string join(std::span<const std::string> parts, std::string_view sep);
bool contains_word(std::string_view haystack, std::string_view word);
std::string to_lower(std::string_view s);

/// Formats as RFC 3339 UTC (`2024-01-02T03:04:05Z`).
std::string format_utc(std::int64_t unix_seconds);
std::int64_t now_unix();

/// Timestamp plus a short random suffix, e.g. `20240102T030405Z-7f3a`.
std::string make_run_id();

/// Seeded generator whose draws are identical across standard libraries
/// (std::uniform_int_distribution is implementation-defined).
class StableRng {
public:
    explicit StableRng(std::uint64_t seed) : engine_(seed) {}
    /// Uniform integer in [0, bound).
    std::uint64_t below(std::uint64_t bound);

    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::swap(items[i - 1], items[below(i)]);
        }
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace ltc
