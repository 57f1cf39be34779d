#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace rmtlab {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// A seeded random stream. Substreams are derived from the parent key and a
/// counter only, never from the parent's engine state, so the stream handed
/// to trial k is the same no matter how many draws other trials made.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : key_(splitmix64(seed)), engine_(key_) {}

  [[nodiscard]] RngStream substream(std::uint64_t counter) const {
    return RngStream(Key{splitmix64(key_ ^ splitmix64(counter + 0x632be59bd9b4e019ULL))});
  }

  [[nodiscard]] RngStream substream(std::initializer_list<std::uint64_t> path) const {
    RngStream s = *this;
    for (auto c : path) s = s.substream(c);
    return s;
  }

  [[nodiscard]] std::uint64_t key() const noexcept { return key_; }

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  bool coin() { return (engine_() >> 63) != 0; }

  std::mt19937_64& engine() noexcept { return engine_; }

 private:
  struct Key {
    std::uint64_t value;
  };
  explicit RngStream(Key k) : key_(k.value), engine_(key_) {}

  std::uint64_t key_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace rmtlab
