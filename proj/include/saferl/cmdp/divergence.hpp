#pragma once

#include <cmath>
#include <vector>

#include "saferl/core/errors.hpp"

namespace saferl::cmdp {

inline void require_distribution(const std::vector<double>& p, const char* who) {
  double sum = 0.0;
  for (double v : p) {
    if (!std::isfinite(v) || v < -1e-12) throw ValidationError(std::string(who) + ": entries must be non-negative");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ValidationError(std::string(who) + ": distribution does not sum to 1");
}

// Total variation distance (1/2) * sum |p - q|.
inline double tv_distance(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw DimensionError("tv_distance: size mismatch");
  require_distribution(p, "tv_distance");
  require_distribution(q, "tv_distance");
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) acc += std::abs(p[i] - q[i]);
  return 0.5 * acc;
}

// Jensen-Shannon divergence (natural log), symmetric, bounded by ln 2.
inline double js_divergence(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw DimensionError("js_divergence: size mismatch");
  require_distribution(p, "js_divergence");
  require_distribution(q, "js_divergence");
  double js = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    double m = 0.5 * (p[i] + q[i]);
    if (p[i] > 0.0) js += 0.5 * p[i] * std::log(p[i] / m);
    if (q[i] > 0.0) js += 0.5 * q[i] * std::log(q[i] / m);
  }
  return std::max(js, 0.0);
}

}  // namespace saferl::cmdp
