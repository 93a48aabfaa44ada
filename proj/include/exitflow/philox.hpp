#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace exitflow {

/// Philox4x32-10 counter-based generator (Salmon et al., SC'11). The output
/// is a pure function of (counter, key), so any path or step can be
/// regenerated independently of evaluation order.
class Philox4x32 {
 public:
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static Counter generate(Counter ctr, Key key) {
    for (int round = 0; round < 10; ++round) {
      if (round > 0) {
        key[0] += kWeyl0;
        key[1] += kWeyl1;
      }
      const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * ctr[0];
      const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * ctr[2];
      const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
      const auto lo0 = static_cast<std::uint32_t>(p0);
      const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
      const auto lo1 = static_cast<std::uint32_t>(p1);
      ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    }
    return ctr;
  }

 private:
  static constexpr std::uint32_t kMul0 = 0xD2511F53u;
  static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
};

/// Purposes of independent substreams of one path.
enum class StreamTag : std::uint32_t { wiener = 0, initial_state = 1, uniform_start = 2 };

/// Deterministic stream of uniforms and standard normals for one path,
/// keyed by (seed, path index, tag). Value k of the stream depends only on
/// those keys and k.
class PathStream {
 public:
  PathStream(std::uint64_t seed, std::uint64_t path, StreamTag tag)
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
        path_(path), tag_(static_cast<std::uint32_t>(tag)) {}

  /// Uniform on the open interval (0, 1).
  double uniform() {
    if (lane_ == 4) refill();
    return to_unit(block_[lane_++]);
  }

  /// Standard normal by Box-Muller on consecutive uniform pairs.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

 private:
  static double to_unit(std::uint32_t v) { return (static_cast<double>(v) + 0.5) * 2.3283064365386963e-10; }

  void refill() {
    const Philox4x32::Counter ctr{static_cast<std::uint32_t>(block_index_),
                                  static_cast<std::uint32_t>(block_index_ >> 32) ^ (tag_ << 28),
                                  static_cast<std::uint32_t>(path_), static_cast<std::uint32_t>(path_ >> 32)};
    block_ = Philox4x32::generate(ctr, key_);
    ++block_index_;
    lane_ = 0;
  }

  Philox4x32::Key key_;
  std::uint64_t path_;
  std::uint32_t tag_;
  std::uint64_t block_index_ = 0;
  Philox4x32::Counter block_{};
  int lane_ = 4;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace exitflow
