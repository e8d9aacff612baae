#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

namespace dynperc {

/// SplitMix64 finalizer; a bijection on 64-bit words.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Philox4x32-10 block function (Salmon et al., SC'11).
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key) noexcept;

/// Purpose tags used as the last label of derived stream keys.
enum class Purpose : std::uint64_t {
  environment = 0x656e76,
  walk = 0x77616c6b,
  trial = 0x7472,
  trajectory = 0x7472616a,
  evolving = 0x65766f,
  instance = 0x696e7374,
};

/// Master seed plus an ordered label path. Keys whose label lists differ
/// collide with probability about 2^-64 (random-function model of the mix).
struct StreamKey {
  std::uint64_t master_seed = 0;
  std::vector<std::uint64_t> labels;

  StreamKey child(std::uint64_t label) const;
  StreamKey child(Purpose p) const { return child(static_cast<std::uint64_t>(p)); }

  /// 64-bit Philox key for this label path.
  std::uint64_t hashed() const;
};

/// 64-bit key derived from a parent key and one more label.
constexpr std::uint64_t derive_key(std::uint64_t parent, std::uint64_t label) noexcept {
  return mix64(parent ^ mix64(label ^ 0xd1b54a32d192ed03ULL));
}

/// Uniform in [0,1) addressed by (key, index) without any sequential state.
double unit_uniform(std::uint64_t key, std::uint64_t index) noexcept;

/// Counter-based stream: Philox4x32-10 over a 128-bit counter.
/// Single-owner; copies are independent replays of the same sequence.
class Stream {
 public:
  explicit Stream(std::uint64_t key) noexcept : key_(key) {}

  std::uint64_t key() const { return key_; }

  std::uint32_t next_u32() noexcept;
  std::uint64_t next_u64() noexcept;

  /// Uniform in [0,1) with 53 random bits.
  double uniform01() noexcept;
  /// Uniform in (0,1].
  double uniform_open0() noexcept { return 1.0 - uniform01(); }

  double exponential(double rate);
  std::uint64_t poisson(double mean);
  bool bernoulli(double q);
  /// Uniform on {0, ..., n-1} (Lemire's unbiased multiply-shift).
  std::uint64_t uniform_int(std::uint64_t n);

 private:
  void refill() noexcept;

  std::uint64_t key_;
  std::uint64_t counter_lo_ = 0;
  std::uint64_t counter_hi_ = 0;
  std::array<std::uint32_t, 4> buffer_{};
  int used_ = 4;
};

Stream derive_stream(const StreamKey& key);

}  // namespace dynperc
