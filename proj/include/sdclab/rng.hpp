#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>

namespace sdclab {

/// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t x) noexcept;

/// Counter-based stream: the i-th draw is a hash of (key, i), so any
/// sub-stream can be reconstructed from its key alone.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t key) noexcept : key_(mix64(key)) {}

  /// Key for an independent child stream, e.g. derive(seed, {instance_id}).
  static std::uint64_t derive(std::uint64_t seed, std::initializer_list<std::uint64_t> path) noexcept;

  std::uint64_t next_u64() noexcept;
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept;
  /// Uniform integer in [0, n) by rejection, n >= 1.
  std::uint64_t uniform_index(std::uint64_t n) noexcept;
  /// Standard normal via Box-Muller (one output per two uniforms).
  double normal() noexcept;

  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace sdclab
