// SPDX-License-Identifier: Apache-2.0
//
// Shared error types, JSONL helpers, hashing and string utilities.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace dialcot {

using json = nlohmann::json;

/// A documented precondition of an operation was violated by the caller.
class PreconditionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Input data does not satisfy a schema or a domain invariant.
class SchemaError : public std::runtime_error {
public:
    SchemaError(const std::string& message, std::size_t line = 0)
        : std::runtime_error(line ? message + " (line " + std::to_string(line) + ")" : message),
          line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Filesystem or serialization failure.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// strings

std::string trim(std::string_view s);
std::vector<std::string> split_lines(std::string_view s);
bool starts_with_ci(std::string_view s, std::string_view prefix);
std::string to_lower(std::string_view s);
std::string join(const std::vector<std::string>& parts, std::string_view sep);

/// Replaces CR/LF runs with a single space.
std::string flatten_newlines(std::string_view s);

// ---------------------------------------------------------------------------
// hashing

std::string sha256_hex(std::string_view data);
std::string sha256_file(const std::filesystem::path& path);

/// 64-bit FNV-1a, used for feature hashing.
constexpr std::uint64_t fnv1a(std::string_view data, std::uint64_t seed = 0xcbf29ce484222325ULL) {
    std::uint64_t h = seed;
    for (char c : data) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

// ---------------------------------------------------------------------------
// files

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

/// Calls `fn(line_number, record)` for each non-blank line. Parse errors carry the line number.
void for_each_jsonl(const std::filesystem::path& path,
                    const std::function<void(std::size_t, const json&)>& fn);
std::vector<json> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path, const std::vector<json>& records);

/// Appends one line and flushes it to stable storage before returning.
void append_line_durable(const std::filesystem::path& path, std::string_view line);

// ---------------------------------------------------------------------------
// deterministic randomness

/// Fisher-Yates over a 64-bit Mersenne twister. Unlike std::shuffle the permutation
/// is fixed across standard library implementations.
template <class T>
void stable_shuffle(std::vector<T>& items, std::uint64_t seed);

}  // namespace dialcot

#include <random>

namespace dialcot {

template <class T>
void stable_shuffle(std::vector<T>& items, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (std::size_t i = items.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(items[i - 1], items[j]);
    }
}

}  // namespace dialcot
