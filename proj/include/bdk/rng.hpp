#pragma once

#include <cstdint>
#include <random>

namespace bdk {

using Engine = std::mt19937_64;

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Mixes a master seed with an index (trial, chain, stream id) into a
// decorrelated child seed.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) noexcept {
  return splitmix64(splitmix64(master) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

// Named streams; every consumer of randomness owns exactly one.
enum class Stream : std::uint64_t {
  TeacherInit = 1,
  TeacherMinibatch = 2,
  TeacherNoise = 3,
  StudentInit = 4,
  StudentData = 5,
  Hmc = 6,
  Split = 7,
  DataGen = 8,
};

inline Engine make_engine(std::uint64_t seed, Stream stream) {
  return Engine(derive_seed(seed, static_cast<std::uint64_t>(stream)));
}

// Standard normal draws from an owned engine.
class GaussianSource {
 public:
  explicit GaussianSource(Engine engine) : engine_(std::move(engine)) {}
  double operator()() { return dist_(engine_); }

 private:
  Engine engine_;
  std::normal_distribution<double> dist_{0.0, 1.0};
};

}  // namespace bdk
