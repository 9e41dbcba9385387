#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace spinfilter {

/// Streams partition the counter space so that independent uses of the
/// same seed never share draws.
enum class Stream : std::uint32_t {
  signal = 1,
  observation = 2,
  prior = 3,
  resample = 4,
  torus = 5,
  quantum = 6,
  convolution = 7,
  initial = 8,
};

/// Philox4x32-10 counter-based generator (Salmon et al., SC'11).
/// Every draw is a pure function of (key, counter); no hidden state.
class Philox4x32 {
 public:
  using Counter = std::array<std::uint32_t, 4>;

  constexpr explicit Philox4x32(std::uint64_t key)
      : key_{static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32)} {}

  [[nodiscard]] constexpr Counter operator()(Counter ctr) const {
    std::array<std::uint32_t, 2> k = key_;
    for (int round = 0; round < 10; ++round) {
      ctr = single_round(ctr, k);
      k[0] += kWeyl0;
      k[1] += kWeyl1;
    }
    return ctr;
  }

 private:
  static constexpr std::uint32_t kMul0 = 0xD2511F53u;
  static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

  static constexpr Counter single_round(const Counter& c, const std::array<std::uint32_t, 2>& k) {
    const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * c[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * c[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
    const auto lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
    const auto lo1 = static_cast<std::uint32_t>(p1);
    return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
  }

  std::array<std::uint32_t, 2> key_;
};

constexpr std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// Counter-based source of uniforms and normals keyed by
/// (seed, stream, index, site, step). Draws do not depend on call order,
/// which makes every parallel schedule produce identical numbers.
class CounterRng {
 public:
  constexpr explicit CounterRng(std::uint64_t seed = 0) : seed_(seed), gen_(splitmix64(seed)) {}

  [[nodiscard]] constexpr std::uint64_t seed() const { return seed_; }

  /// Independent generator for a sub-experiment (replica, chain, ...).
  [[nodiscard]] constexpr CounterRng fork(std::uint64_t tag) const {
    return CounterRng(splitmix64(seed_ ^ splitmix64(tag + 0x632BE59BD9B4E019ull)));
  }

  /// Uniform on the open interval (0, 1).
  [[nodiscard]] double uniform(Stream stream, std::uint32_t index, std::uint32_t site,
                               std::uint32_t step) const {
    const auto out = gen_({static_cast<std::uint32_t>(stream), index, site, step});
    return to_open_unit(out[0], out[1]);
  }

  /// Standard normal via Box-Muller on one Philox block.
  [[nodiscard]] double normal(Stream stream, std::uint32_t index, std::uint32_t site,
                              std::uint32_t step) const {
    return normal_pair(stream, index, site, step)[0];
  }

  [[nodiscard]] std::array<double, 2> normal_pair(Stream stream, std::uint32_t index,
                                                  std::uint32_t site, std::uint32_t step) const {
    const auto out = gen_({static_cast<std::uint32_t>(stream) | 0x80000000u, index, site, step});
    const double u1 = to_open_unit(out[0], out[1]);
    const double u2 = to_open_unit(out[2], out[3]);
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    return {r * std::cos(theta), r * std::sin(theta)};
  }

 private:
  static constexpr double to_open_unit(std::uint32_t a, std::uint32_t b) {
    const std::uint64_t bits = ((static_cast<std::uint64_t>(a) << 32) | b) >> 11;
    return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
  }

  std::uint64_t seed_;
  Philox4x32 gen_;
};

/// Sequential reader of normals along the step axis for one (stream, index,
/// site). Consumes both Box-Muller outputs: step 2k and 2k+1 share a block.
class NormalSequence {
 public:
  NormalSequence(const CounterRng& rng, Stream stream, std::uint32_t index, std::uint32_t site)
      : rng_(&rng), stream_(stream), index_(index), site_(site) {}

  double at(std::uint32_t step) {
    const std::uint32_t block = step >> 1;
    if (block != cached_block_ || !valid_) {
      pair_ = rng_->normal_pair(stream_, index_, site_, block);
      cached_block_ = block;
      valid_ = true;
    }
    return pair_[step & 1u];
  }

 private:
  const CounterRng* rng_;
  Stream stream_;
  std::uint32_t index_;
  std::uint32_t site_;
  std::uint32_t cached_block_ = 0;
  bool valid_ = false;
  std::array<double, 2> pair_{};
};

/// Normal at `step` consistent with NormalSequence.
inline double sequence_normal(const CounterRng& rng, Stream stream, std::uint32_t index,
                              std::uint32_t site, std::uint32_t step) {
  return rng.normal_pair(stream, index, site, step >> 1)[step & 1u];
}

}  // namespace spinfilter
