#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace vsid {

// Named RNG streams derived from one experiment seed.
enum class Stream : std::uint32_t { Data = 1, Gumbel = 2, Init = 3, Synth = 4, Eval = 5 };

// mt19937_64 with hand-written variate transforms, so sequences do not depend on
// the standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);
  Rng(std::uint64_t seed, Stream stream);

  std::uint64_t next_u64() { return engine_(); }
  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  // Uniform on (0, 1), clamped away from both ends by 1e-12.
  double uniform_open();
  double normal();
  // Standard Gumbel(0, 1) draw.
  double gumbel();
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  std::string state() const;
  void set_state(const std::string& text);

  friend bool operator==(const Rng& a, const Rng& b) {
    return a.engine_ == b.engine_ && a.has_spare_ == b.has_spare_ && a.spare_ == b.spare_;
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// -log(-log(u)) with u clamped to [1e-12, 1 - 1e-12].
double gumbel_from_uniform(double u);

}  // namespace vsid
