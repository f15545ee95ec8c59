#pragma once
#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace rsslab {

// Upper truncated Pareto law on [theta, T].
struct ParetoTail {
  double shape = 2.0;
  double theta = 1.0;
  double T = 1e6;
  long n_agents = 100;

  // theta == T is accepted as a point mass (useful for equal-stake tests)
  bool degenerate() const { return theta == T; }

  void validate() const {
    if (!(shape > 0)) throw std::invalid_argument("pareto shape must be > 0");
    if (!(theta > 0)) throw std::invalid_argument("pareto theta must be > 0");
    if (!(T >= theta)) throw std::invalid_argument("pareto T must be >= theta");
    if (n_agents < 1) throw std::invalid_argument("pareto n_agents must be >= 1");
  }
};

inline double truncated_pareto_cdf(double x, const ParetoTail& t) {
  if (!(x >= t.theta && x <= t.T))
    throw std::domain_error("truncated_pareto_cdf: x outside [theta, T]");
  if (t.degenerate()) return 1.0;
  if (x == t.T) return 1.0;
  double num = -std::expm1(t.shape * std::log(t.theta / x));
  double den = -std::expm1(t.shape * std::log(t.theta / t.T));
  return num / den;
}

inline double sample_truncated_pareto(double u, const ParetoTail& t) {
  if (!(u >= 0 && u < 1))
    throw std::domain_error("sample_truncated_pareto: u outside [0,1)");
  if (t.degenerate()) return t.theta;
  double mass = -std::expm1(t.shape * std::log(t.theta / t.T));
  double x = t.theta / std::pow(1.0 - u * mass, 1.0 / t.shape);
  return std::min(x, t.T);
}

}  // namespace rsslab
