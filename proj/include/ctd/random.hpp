#pragma once

#include <array>
#include <cstdint>
#include <limits>

// Philox4x64-10 counter-based generator (Salmon et al., Random123). Each
// (key, counter) pair maps to four independent 64-bit words, so disjoint
// counter ranges give reproducible, non-overlapping parallel streams.

namespace ctd {

__extension__ using uint128_t = unsigned __int128;

class Philox4x64 {
 public:
  using result_type = std::uint64_t;
  using Counter = std::array<std::uint64_t, 4>;
  using Key = std::array<std::uint64_t, 2>;

  // Stream `stream` of generator `seed`: key = {seed, 0}, counter word 2 = stream.
  explicit Philox4x64(std::uint64_t seed = 0, std::uint64_t stream = 0) : key_{seed, 0}, ctr_{0, 0, stream, 0} {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    if (idx_ == 4) {
      block_ = block(ctr_, key_);
      increment();
      idx_ = 0;
    }
    return block_[idx_++];
  }

  static Counter block(Counter ctr, Key key) {
    for (int r = 0; r < 10; ++r) {
      if (r > 0) {
        key[0] += kWeyl0;
        key[1] += kWeyl1;
      }
      ctr = round(ctr, key);
    }
    return ctr;
  }

 private:
  static constexpr std::uint64_t kMul0 = 0xD2E7470EE14C6C93ULL;
  static constexpr std::uint64_t kMul1 = 0xCA5A826395121157ULL;
  static constexpr std::uint64_t kWeyl0 = 0x9E3779B97F4A7C15ULL;
  static constexpr std::uint64_t kWeyl1 = 0xBB67AE8584CAA73BULL;

  static Counter round(const Counter& c, const Key& k) {
    const uint128_t p0 = static_cast<uint128_t>(kMul0) * c[0];
    const uint128_t p1 = static_cast<uint128_t>(kMul1) * c[2];
    const auto hi0 = static_cast<std::uint64_t>(p0 >> 64);
    const auto lo0 = static_cast<std::uint64_t>(p0);
    const auto hi1 = static_cast<std::uint64_t>(p1 >> 64);
    const auto lo1 = static_cast<std::uint64_t>(p1);
    return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
  }

  void increment() {
    if (++ctr_[0] != 0) return;
    if (++ctr_[1] != 0) return;
    if (++ctr_[3] != 0) return;  // word 2 carries the stream id
  }

  Key key_;
  Counter ctr_;
  Counter block_{};
  int idx_ = 4;
};

}  // namespace ctd
