#pragma once

#include <cmath>
#include <cstdint>

namespace mfgi {

// splitmix64, used to expand (master seed, stream id) into generator state.
inline uint64_t splitmix64_next(uint64_t& s) {
  uint64_t z = (s += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Derives an independent master seed for a sub-study (one per population
// size, say) so that distinct studies do not share random number streams
// unless common random numbers are requested explicitly.
inline uint64_t derive_seed(uint64_t master, uint64_t tag) {
  uint64_t s = master ^ (tag * 0xd1342543de82ef95ull);
  return splitmix64_next(s);
}

// xoshiro256++ stream keyed by (master seed, stream index). Replication
// streams are mutually independent and insensitive to execution order, so
// parallel Monte Carlo reproduces bit-identically at any thread count.
class Rng {
 public:
  Rng(uint64_t master_seed, uint64_t stream) {
    uint64_t s = master_seed ^ (0x9e3779b97f4a7c15ull * (stream + 1));
    for (auto& w : state_) w = splitmix64_next(s);
  }

  uint64_t next() {
    const uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform on [0, 1), 53-bit resolution.
  double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Strictly positive exponential variate; keeps event times strictly increasing.
  double exponential(double rate) {
    const double u = (static_cast<double>(next() >> 11) + 0.5) * 0x1.0p-53;  // in (0, 1)
    return -std::log(u) / rate;
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  uint64_t state_[4];
};

}  // namespace mfgi
