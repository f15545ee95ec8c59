#pragma once
#include <stdexcept>
#include <string>

#include "errors.hpp"

namespace rsslab {

struct GameParams {
  int n = 100;
  int k = 10;
  double R = 1.0;
  double alpha = 0.0;

  double beta() const { return 1.0 / k; }

  void validate() const {
    if (n < 2) throw std::invalid_argument("n must be >= 2");
    if (k < 1) throw std::invalid_argument("k must be >= 1");
    if (k >= n) throw std::invalid_argument("k must be < n");
    if (!(R > 0)) throw std::invalid_argument("R must be > 0");
    if (!(alpha >= 0)) throw std::invalid_argument("alpha must be >= 0");
  }

  static GameParams make(int n, int k, double R = 1.0, double alpha = 0.0) {
    GameParams p{n, k, R, alpha};
    p.validate();
    return p;
  }
};

}  // namespace rsslab
