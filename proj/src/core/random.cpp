#include "core/random.hpp"

#include <cmath>
#include <sstream>

#include "core/error.hpp"

namespace handover {

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

RandomSource::RandomSource(std::uint64_t seed) : seed_(seed), engine_(splitmix64(seed)) {}

double RandomSource::uniform(double lo, double hi) {
  // 53-bit mantissa draw; avoids implementation-defined distribution objects.
  const double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * u;
}

double RandomSource::normal() {
  // Marsaglia polar method without caching, so the stream position is the
  // only state.
  for (;;) {
    const double u = uniform(-1.0, 1.0);
    const double v = uniform(-1.0, 1.0);
    const double s = u * u + v * v;
    if (s > 0.0 && s < 1.0) {
      return u * std::sqrt(-2.0 * std::log(s) / s);
    }
  }
}

std::uint64_t RandomSource::next_u64() { return engine_(); }

RandomSource RandomSource::derive(std::uint64_t stream) const {
  return RandomSource(splitmix64(seed_ ^ splitmix64(stream + 0x632be59bd9b4e019ULL)));
}

std::string RandomSource::state() const {
  std::ostringstream out;
  out << seed_ << ' ' << engine_;
  return out.str();
}

void RandomSource::restore(const std::string& state) {
  std::istringstream in(state);
  std::uint64_t seed = 0;
  std::mt19937_64 engine;
  if (!(in >> seed >> engine)) {
    fail(ErrorCode::InvalidArgument, "malformed random-source state");
  }
  seed_ = seed;
  engine_ = engine;
}

RandomSource seeded_rng(std::uint64_t seed) { return RandomSource(seed); }

}  // namespace handover
