#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace mfd {

using PhiloxCounter = std::array<std::uint32_t, 4>;
using PhiloxKey = std::array<std::uint32_t, 2>;

/// Philox4x32 with 10 rounds (Salmon et al., Random123).
PhiloxCounter philox4x32_10(PhiloxCounter counter, PhiloxKey key);

/// Stateless generator addressed by (seed, stream, row, col).
///
/// Every draw is a pure function of its coordinates, so path j of a batch
/// is identical whatever the batch size, and draws can be generated in
/// any order.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0) noexcept
      : seed_(seed), stream_(stream) {}

  /// Uniform on the open interval (0, 1).
  double uniform(std::uint64_t row, std::uint64_t col) const noexcept;
  /// Standard normal via Box-Muller on one Philox block.
  double normal(std::uint64_t row, std::uint64_t col) const noexcept;

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream() const noexcept { return stream_; }

 private:
  PhiloxCounter block(std::uint64_t row, std::uint64_t col) const noexcept;

  std::uint64_t seed_;
  std::uint64_t stream_;
};

/// 64-bit FNV-1a, used to derive stream ids from parameter names.
std::uint64_t stream_id(std::string_view name) noexcept;

}  // namespace mfd
