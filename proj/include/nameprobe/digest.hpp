#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace nameprobe {

// Lowercase hex SHA-256 of `data`.
std::string sha256_hex(std::string_view data);

// Stateless 64-bit mixer (splitmix64 finalizer).
std::uint64_t mix64(std::uint64_t x);

// Sub-seed for item `index` of a stream seeded with `seed`.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

}  // namespace nameprobe
