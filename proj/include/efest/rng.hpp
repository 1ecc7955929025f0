#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace efest {

/// Seeded generator used for every stochastic choice in the toolkit.
///
/// Raw bits come from std::mt19937_64, whose output sequence is fixed by the
/// C++ standard. The conversions to doubles, bounded integers and normals are
/// done here rather than through <random> distributions, whose algorithms are
/// implementation-defined, so a given seed yields the same stream on every
/// platform:
///   uniform01()  = (next() >> 11) * 2^-53
///   below(n)     = rejection sampling on the top bits
///   normal()     = Box-Muller, one fresh pair per call (no caching)
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  double uniform01();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }
  std::uint64_t below(std::uint64_t n);
  double normal();

  /// Fisher-Yates, drawing j = below(i + 1) for i from n-1 down to 1.
  template <class T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

/// Derives an independent stream seed from (run seed, round index, purpose).
/// Resumed runs re-derive the same seeds, so streams never fork.
std::uint64_t derive_seed(std::uint64_t run_seed, std::uint64_t round, std::string_view purpose);

}  // namespace efest
