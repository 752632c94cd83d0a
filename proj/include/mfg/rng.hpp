#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>

namespace mfg::rng {

/// Philox4x32-10 counter-based generator (Salmon et al., SC'11). The
/// output is a pure function of (counter, key), so any stream position can
/// be produced independently of the others.
struct Philox4x32 {
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static Counter generate(Counter ctr, Key key) {
    constexpr std::uint32_t kMul0 = 0xD2511F53u;
    constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
    constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
    constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
    for (int round = 0; round < 10; ++round) {
      const std::uint64_t p0 = std::uint64_t{kMul0} * ctr[0];
      const std::uint64_t p1 = std::uint64_t{kMul1} * ctr[2];
      const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
      const auto lo0 = static_cast<std::uint32_t>(p0);
      const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
      const auto lo1 = static_cast<std::uint32_t>(p1);
      ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
      key[0] += kWeyl0;
      key[1] += kWeyl1;
    }
    return ctr;
  }
};

/// Uniform in (0, 1) from the top 53 bits of a 64-bit word.
inline double to_open_unit(std::uint64_t bits) {
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

/// Standard normal variates for one (replication, agent, step) cell of a
/// seeded experiment. Distinct cells never share counters.
inline void standard_normals(std::uint64_t seed, std::uint32_t replication,
                             std::uint32_t agent, std::uint32_t step,
                             std::span<double> out) {
  const Philox4x32::Key key{static_cast<std::uint32_t>(seed),
                            static_cast<std::uint32_t>(seed >> 32)};
  std::size_t filled = 0;
  for (std::uint32_t block = 0; filled < out.size(); ++block) {
    const auto w = Philox4x32::generate({step, block, agent, replication}, key);
    const double u1 = to_open_unit((std::uint64_t{w[0]} << 32) | w[1]);
    const double u2 = to_open_unit((std::uint64_t{w[2]} << 32) | w[3]);
    // Box-Muller
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    out[filled++] = radius * std::cos(angle);
    if (filled < out.size()) out[filled++] = radius * std::sin(angle);
  }
}

}  // namespace mfg::rng
