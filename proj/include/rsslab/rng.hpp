#pragma once
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace rsslab {

// Portable seeded stream. std::mt19937_64 and std::seed_seq are specified
// bit-for-bit by the standard; the std distributions are not, so doubles,
// bounded ints and shuffles are derived by hand below.
//
// A run seed fans out into independent streams by id:
enum Stream : std::uint64_t {
  kStakeStream = 0,
  kCostStream = 1,
  kScanStream = 2,
  kSampleStream = 3,
  kTrialStreamBase = 0x100,  // + trial index
};

class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed),
                      static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream),
                      static_cast<std::uint32_t>(stream >> 32)};
    eng_.seed(seq);
  }

  std::uint64_t next() { return eng_(); }

  // [0,1), 53 random bits
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // unbiased integer in [0, n)
  std::uint64_t below(std::uint64_t n) {
    if (n <= 1) return 0;
    std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do x = eng_();
    while (x >= limit);
    return x % n;
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i)
      std::swap(v[i - 1], v[below(i)]);
  }

  std::vector<int> permutation(int n) {
    std::vector<int> p(n);
    for (int i = 0; i < n; ++i) p[i] = i;
    shuffle(p);
    return p;
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace rsslab
