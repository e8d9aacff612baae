#include "dynperc/random.hpp"

#include <cmath>
#include <stdexcept>

namespace dynperc {

namespace {

constexpr std::uint32_t kMul0 = 0xD2511F53u;
constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi,
                    std::uint32_t& lo) noexcept {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

double poisson_inversion(Stream& s, double mean) {
  const double u = s.uniform01();
  double term = std::exp(-mean);
  double cdf = term;
  std::uint64_t k = 0;
  while (u >= cdf && k < 1000) {
    ++k;
    term *= mean / static_cast<double>(k);
    cdf += term;
  }
  return static_cast<double>(k);
}

// Transformed rejection with squeeze (Hormann 1993, "PTRS").
double poisson_ptrs(Stream& s, double mean) {
  const double slam = std::sqrt(mean);
  const double loglam = std::log(mean);
  const double b = 0.931 + 2.53 * slam;
  const double a = -0.059 + 0.02483 * b;
  const double inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
  const double vr = 0.9277 - 3.6224 / (b - 2);
  while (true) {
    const double u = s.uniform01() - 0.5;
    const double v = s.uniform01();
    const double us = 0.5 - std::fabs(u);
    const double k = std::floor((2 * a / us + b) * u + mean + 0.43);
    if (us >= 0.07 && v <= vr) return k;
    if (k < 0 || (us < 0.013 && v > us)) continue;
    if (std::log(v) + std::log(inv_alpha) - std::log(a / (us * us) + b) <=
        -mean + k * loglam - std::lgamma(k + 1)) {
      return k;
    }
  }
}

}  // namespace

std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr,
                                        std::array<std::uint32_t, 2> key) noexcept {
  for (int round = 0; round < 10; ++round) {
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kMul0, ctr[0], hi0, lo0);
    mulhilo(kMul1, ctr[2], hi1, lo1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kWeyl0;
    key[1] += kWeyl1;
  }
  return ctr;
}

StreamKey StreamKey::child(std::uint64_t label) const {
  StreamKey out = *this;
  out.labels.push_back(label);
  return out;
}

std::uint64_t StreamKey::hashed() const {
  std::uint64_t h = mix64(master_seed ^ 0x243f6a8885a308d3ULL);
  for (std::uint64_t label : labels) h = derive_key(h, label);
  return h;
}

double unit_uniform(std::uint64_t key, std::uint64_t index) noexcept {
  const auto out = philox4x32(
      {static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), 0u, 0u},
      {static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32)});
  const std::uint64_t bits = (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

void Stream::refill() noexcept {
  buffer_ = philox4x32(
      {static_cast<std::uint32_t>(counter_lo_), static_cast<std::uint32_t>(counter_lo_ >> 32),
       static_cast<std::uint32_t>(counter_hi_), static_cast<std::uint32_t>(counter_hi_ >> 32)},
      {static_cast<std::uint32_t>(key_), static_cast<std::uint32_t>(key_ >> 32)});
  if (++counter_lo_ == 0) ++counter_hi_;
  used_ = 0;
}

std::uint32_t Stream::next_u32() noexcept {
  if (used_ == 4) refill();
  return buffer_[static_cast<std::size_t>(used_++)];
}

std::uint64_t Stream::next_u64() noexcept {
  const std::uint64_t hi = next_u32();
  return (hi << 32) | next_u32();
}

double Stream::uniform01() noexcept {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Stream::exponential(double rate) {
  if (!(rate > 0.0)) throw std::domain_error("exponential: rate must be > 0");
  return -std::log(uniform_open0()) / rate;
}

std::uint64_t Stream::poisson(double mean) {
  if (!(mean >= 0.0) || !std::isfinite(mean)) {
    throw std::domain_error("poisson: mean must be finite and >= 0");
  }
  if (mean == 0.0) return 0;
  const double k = mean <= 10.0 ? poisson_inversion(*this, mean) : poisson_ptrs(*this, mean);
  return static_cast<std::uint64_t>(k);
}

bool Stream::bernoulli(double q) {
  if (!(q >= 0.0 && q <= 1.0)) throw std::domain_error("bernoulli: q must lie in [0,1]");
  return uniform01() < q;
}

std::uint64_t Stream::uniform_int(std::uint64_t n) {
  if (n == 0) throw std::domain_error("uniform_int: n must be >= 1");
  unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * n;
  auto low = static_cast<std::uint64_t>(m);
  if (low < n) {
    const std::uint64_t threshold = (0 - n) % n;
    while (low < threshold) {
      m = static_cast<unsigned __int128>(next_u64()) * n;
      low = static_cast<std::uint64_t>(m);
    }
  }
  return static_cast<std::uint64_t>(m >> 64);
}

Stream derive_stream(const StreamKey& key) { return Stream(key.hashed()); }

}  // namespace dynperc
