#pragma once

#include <cstdint>
#include <string_view>

namespace succlab {

/// Child seed for a labeled random stream: splitmix64 of root ^ FNV-1a(label).
std::uint64_t derive_seed(std::uint64_t root, std::string_view label);

/// splitmix64 finalizer; mixes extra integer coordinates into a seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t value);

}  // namespace succlab
