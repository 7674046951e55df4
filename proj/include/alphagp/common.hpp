#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace alphagp {

/// Bad caller input: dimension mismatches, malformed schemas, invalid
/// configuration. Maps to CLI exit code 2.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Numerical breakdown: NaN/Inf in a solver, indefinite matrix after jitter,
/// non-positive Ritz values. Maps to CLI exit code 3.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Deterministic RNG substream: the same (seed, stream) pair always yields the
/// same generator, independent of how many other streams were drawn.
inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  std::seed_seq seq{seed, stream, std::uint64_t{0x9e3779b97f4a7c15ULL}};
  return std::mt19937_64(seq);
}

}  // namespace alphagp
