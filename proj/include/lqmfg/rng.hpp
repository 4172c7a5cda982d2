#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace lqmfg {

/// Noise channels. Each (seed, replication, agent, channel) owns an independent stream.
enum class Channel : std::uint32_t {
  individual = 0,   // W^i, drives the state
  observation = 1,  // W_bar^i, drives the observation (and the state through sigma_bar)
  common = 2,       // W^0, one per replication
  particle = 3,     // reference particle clouds
  probe = 4,        // random directions and controls in probes
};

inline constexpr std::uint64_t kSharedAgent = ~std::uint64_t{0};

/// splitmix64 finalizer.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

/// Standard normal stream keyed by (seed, replication, agent, channel).
///
/// The key is hashed into the engine seed, so results do not depend on which thread or in
/// which order the streams are consumed.
class NormalStream {
 public:
  NormalStream(std::uint64_t seed, std::uint64_t replication, std::uint64_t agent, Channel channel) {
    std::uint64_t h = mix64(seed ^ 0x6c716d66u);
    h = mix64(h ^ replication);
    h = mix64(h ^ agent);
    h = mix64(h ^ static_cast<std::uint64_t>(channel));
    engine_.seed(h);
  }

  double operator()() { return dist_(engine_); }

  /// Brownian increment over a step of length h, written to out[0..dim). The step is split into
  /// `substeps` pieces drawn in the same order as on a grid refined by that factor, so a coarse
  /// path is the exact aggregate of the fine one.
  void increment(double h, int substeps, double* out, int dim) {
    for (int c = 0; c < dim; ++c) out[c] = 0.0;
    for (int j = 0; j < substeps; ++j)
      for (int c = 0; c < dim; ++c) out[c] += dist_(engine_);
    const double scale = std::sqrt(h / substeps);
    for (int c = 0; c < dim; ++c) out[c] *= scale;
  }

  double increment(double h, int substeps) {
    double v;
    increment(h, substeps, &v, 1);
    return v;
  }

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> dist_;
};

}  // namespace lqmfg
