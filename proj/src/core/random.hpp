#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace handover {

// Deterministic random stream. Single owner; never share across threads.
class RandomSource {
 public:
  explicit RandomSource(std::uint64_t seed);

  std::uint64_t seed() const noexcept { return seed_; }

  double uniform(double lo, double hi);
  double normal();
  std::uint64_t next_u64();

  // Independent child stream keyed by `stream`; does not advance this source.
  RandomSource derive(std::uint64_t stream) const;

  // Engine state as text, for checkpointing.
  std::string state() const;
  void restore(const std::string& state);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

RandomSource seeded_rng(std::uint64_t seed);

std::uint64_t splitmix64(std::uint64_t x) noexcept;

}  // namespace handover
