#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <functional>
#include <mutex>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace forge {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Hashing

[[nodiscard]] std::string sha256_hex(std::string_view data);
[[nodiscard]] std::uint64_t fnv1a64(std::string_view data) noexcept;

// Derives an independent seed for a named substream. Depends only on the
// arguments, so results never depend on scheduling or iteration order.
[[nodiscard]] std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream) noexcept;

// ---------------------------------------------------------------------------
// Seeded randomness
//
// std::mt19937_64 is fully specified by the standard; distributions are not,
// so bounded draws and shuffles are implemented here to keep outputs identical
// across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    // Uniform integer in [0, bound). bound must be > 0.
    std::uint64_t below(std::uint64_t bound);

    // Uniform real in [0, 1).
    double uniform();

    // Standard normal via Box-Muller.
    double normal();

    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    std::mt19937_64 engine_;
};

// ---------------------------------------------------------------------------
// Files

[[nodiscard]] std::string read_text(const fs::path& path);

// Write-to-temp-then-rename. Parent directories are created.
void write_text_atomic(const fs::path& path, std::string_view content);

void write_json_atomic(const fs::path& path, const json& value);
[[nodiscard]] json read_json(const fs::path& path);

// One compact JSON object per line, terminated by '\n'.
[[nodiscard]] std::string to_jsonl(std::span<const json> records);
void write_jsonl_atomic(const fs::path& path, std::span<const json> records);

// Parses every non-blank line. Throws InputError with the line number.
[[nodiscard]] std::vector<json> read_jsonl(const fs::path& path);

// Digest over the relative paths and contents of the given files or
// directories (directories are walked recursively in sorted order).
[[nodiscard]] std::string digest_paths(const fs::path& root, std::span<const fs::path> relative);

[[nodiscard]] std::string trim(std::string_view s);

// Truncates to at most `budget` bytes on a UTF-8 boundary and appends
// `marker` when anything was cut. Returns true through `truncated`.
[[nodiscard]] std::string truncate_utf8(std::string_view s, std::size_t budget,
                                        std::string_view marker, bool* truncated = nullptr);

// ---------------------------------------------------------------------------
// Concurrency

// Runs fn(i) for i in [0, n) on up to `workers` threads. The first exception
// thrown by any task is rethrown after all threads have joined.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

}  // namespace forge
