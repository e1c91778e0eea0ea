#pragma once

#include <array>
#include <cstdint>

namespace volterra::rng {

// Philox4x32-10 counter-based generator. Output depends only on (key, counter).
class Philox4x32 {
 public:
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  explicit Philox4x32(std::uint64_t seed)
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)} {}

  Counter operator()(Counter ctr) const;

 private:
  Key key_;
};

// Two independent N(0,1) draws addressed by (seed, stream, path, block).
std::array<double, 2> normal_pair(const Philox4x32& gen, std::uint64_t path, std::uint32_t block,
                                  std::uint32_t stream);

}  // namespace volterra::rng
