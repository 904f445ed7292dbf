// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "dssvae/tensor.hpp"

namespace dssvae {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Independent generator for a named consumer ("init", "dropout",
/// "sampling", "shuffle", ...) derived from one master seed. Adding or
/// removing a consumer never shifts another consumer's draws.
inline Rng named_stream(std::uint64_t master_seed, std::string_view name) {
  return Rng(splitmix64(master_seed ^ splitmix64(fnv1a64(name))));
}

inline Tensor standard_normal(std::size_t rows, std::size_t cols, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor t(rows, cols);
  for (double& v : t.data()) v = normal(rng);
  return t;
}

inline Tensor uniform(std::size_t rows, std::size_t cols, double lo, double hi, Rng& rng) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(rows, cols);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

}  // namespace dssvae
