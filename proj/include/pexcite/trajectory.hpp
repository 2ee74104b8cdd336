#pragma once

#include <cstddef>
#include <cstdio>
#include <string>
#include <vector>

#include "pexcite/linalg.hpp"

namespace pexcite {

struct Snapshot {
  std::size_t iteration = 0;
  Vector params;
};

struct LossRecord {
  std::size_t iteration = 0;
  double loss = 0.0;
  double param_norm = 0.0;
  double grad_norm = 0.0;
};

struct Trajectory {
  std::vector<Snapshot> snapshots;
  std::vector<LossRecord> curve;
  // layer boundaries inside a flat parameter vector, used to split directions per layer
  std::vector<std::size_t> layer_sizes;
};

inline std::string loss_curve_csv(const Trajectory& t) {
  std::string s = "iteration,loss,param_norm\n";
  char buf[96];
  for (const auto& r : t.curve) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", r.iteration, r.loss, r.param_norm);
    s += buf;
  }
  return s;
}

enum class DirectionStatus { converged, not_converged, no_divergence };

struct DirectionResult {
  DirectionStatus status = DirectionStatus::not_converged;
  bool converged() const { return status == DirectionStatus::converged; }
  Vector direction;                 // last snapshot / its norm
  std::vector<Vector> per_layer;    // same, split by layer_sizes
  double max_recent_change = 0.0;   // over the last 10 successive pairs
  double growth = 0.0;              // last norm / first norm
};

inline DirectionResult direction_convergence(const Trajectory& t, double change_tol = 1e-4, std::size_t window = 10,
                                             double min_growth = 10.0) {
  DirectionResult r;
  const auto& s = t.snapshots;
  if (s.size() < 2) return r;
  auto unit = [](const Vector& v) {
    double n = norm2(v);
    return n > 0 ? scale(1.0 / n, v) : v;
  };
  const double n0 = norm2(s.front().params);
  const double n1 = norm2(s.back().params);
  r.growth = n0 > 0 ? n1 / n0 : kInf;
  r.direction = unit(s.back().params);
  std::size_t k = 0;
  for (auto len : t.layer_sizes) {
    r.per_layer.emplace_back(r.direction.begin() + k, r.direction.begin() + k + len);
    k += len;
  }
  const std::size_t first = s.size() > window ? s.size() - window - 1 : 0;
  for (std::size_t i = first; i + 1 < s.size(); ++i)
    r.max_recent_change = std::max(r.max_recent_change, norm2(sub(unit(s[i + 1].params), unit(s[i].params))));
  // norms still increasing over the window?
  const double nw = norm2(s[first].params);
  const bool diverging = r.growth >= min_growth && (n1 - nw) > 1e-3 * n1;
  if (!diverging) {
    r.status = DirectionStatus::no_divergence;
    return r;
  }
  r.status = (s.size() > window && r.max_recent_change <= change_tol) ? DirectionStatus::converged
                                                                        : DirectionStatus::not_converged;
  return r;
}

}  // namespace pexcite
