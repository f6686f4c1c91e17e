#pragma once

#include <cstdint>
#include <span>
#include <string_view>

namespace memcap {

/// FNV-1a over raw bytes, chainable through `seed`.
std::uint64_t fnv1a64(std::span<const std::byte> bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64(std::string_view text, std::uint64_t seed = 0xcbf29ce484222325ULL);

std::uint64_t splitmix64(std::uint64_t x);

/// Sub-seed for job `index` of stream `stream`. Independent of evaluation order,
/// so serial and parallel runs draw identical per-job randomness.
std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view stream, std::uint64_t index);

}  // namespace memcap
