#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pexcite/errors.hpp"
#include "pexcite/linalg.hpp"
#include "pexcite/optim.hpp"

namespace pexcite {

struct RegConfig {
  double p = 2.0;
  double m = 2.0;
  double lambda = 0.0;
  double epsilon = 0.0;
  double q() const { return dual_exponent(p); }
};

struct SolverOptions {
  double tol = 1e-10;
  std::size_t max_iters = 500000;
  int max_halvings = 40;
};

struct SolveResult {
  Vector w;
  double objective = 0.0;
  double residual = 0.0;  // gradient-mapping norm
  std::size_t iterations = 0;
  bool converged = false;
};

namespace detail {

template <class F>
double bisect_increasing(F h, double lo, double hi) {
  for (int it = 0; it < 300 && hi > lo; ++it) {
    double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    (h(mid) > 0 ? hi : lo) = mid;
  }
  return 0.5 * (lo + hi);
}

inline Vector soft_threshold(const Vector& v, double tau) {
  Vector w(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) w[i] = std::copysign(std::max(std::abs(v[i]) - tau, 0.0), v[i]);
  return w;
}

}  // namespace detail

inline bool has_closed_prox(double p) { return p == 1.0 || p == 2.0 || std::isinf(p); }

// argmin_w 1/2 ||w - v||^2 + c ||w||_p^m, for p in {1, 2, inf}
inline Vector prox_norm_power(const Vector& v, double c, double p, double m) {
  if (c <= 0.0) return v;
  const double vmax = pnorm(v, kInf);
  if (vmax == 0.0) return v;
  if (p == 2.0) {
    const double nv = norm2(v);
    double s;
    if (m == 1.0) s = std::max(0.0, nv - c);
    else if (m == 2.0) s = nv / (1.0 + 2.0 * c);
    else s = detail::bisect_increasing([&](double s) { return s + c * m * std::pow(s, m - 1.0) - nv; }, 0.0, nv);
    return scale(s / nv, v);
  }
  if (p == 1.0) {
    if (m == 1.0) return detail::soft_threshold(v, c);
    double tau = detail::bisect_increasing(
        [&](double t) { return t - c * m * std::pow(pnorm(detail::soft_threshold(v, t), 1.0), m - 1.0); }, 0.0, vmax);
    return detail::soft_threshold(v, tau);
  }
  if (std::isinf(p)) {
    auto dphi = [&](double s) {
      double acc = 0.0;
      for (double x : v) acc += std::max(std::abs(x) - s, 0.0);
      return -acc + c * m * (m == 1.0 ? 1.0 : std::pow(s, m - 1.0));
    };
    if (dphi(0.0) >= 0.0) return Vector(v.size(), 0.0);
    double s = detail::bisect_increasing(dphi, 0.0, vmax);
    Vector w(v);
    for (auto& x : w) x = std::clamp(x, -s, s);
    return w;
  }
  throw ContractError("prox_norm_power: no closed form for this exponent");
}

// Gradient of ||w||_p^m, zero at w = 0.
inline Vector norm_power_grad(const Vector& w, double p, double m) {
  const double nw = pnorm(w, p);
  Vector g(w.size(), 0.0);
  if (nw == 0.0) return g;
  for (std::size_t i = 0; i < w.size(); ++i)
    g[i] = m * std::pow(nw, m - p) * std::copysign(std::pow(std::abs(w[i]), p - 1.0), w[i]);
  return g;
}

inline double residual_sq(const Matrix& X, const Vector& y, const Vector& w) {
  Vector r = sub(matvec(X, w), y);
  return dot(r, r);
}

inline double regularized_objective(const Matrix& X, const Vector& y, const Vector& w, double lambda, double p, double m) {
  return residual_sq(X, y, w) + (lambda > 0 ? lambda * std::pow(pnorm(w, p), m) : 0.0);
}

// Accelerated proximal gradient with backtracking and adaptive restart.
inline SolveResult solve_regularized(const Matrix& X, const Vector& y, double lambda, double p, double m,
                                     const SolverOptions& opt = {}, const Vector* warm = nullptr) {
  check_exponent(p);
  if (lambda < 0) throw ContractError("lambda must be nonnegative");
  if (m < 1) throw ContractError("m must be >= 1");
  if (X.rows() != y.size()) throw ShapeError("X and y disagree on the number of points");
  const std::size_t n = X.cols();
  const bool prox = has_closed_prox(p) || lambda == 0.0;
  auto smooth = [&](const Vector& w) {
    double f = residual_sq(X, y, w);
    if (!prox) f += lambda * std::pow(pnorm(w, p), m);
    return f;
  };
  auto grad = [&](const Vector& w) {
    Vector g = scale(2.0, matvec_t(X, sub(matvec(X, w), y)));
    if (!prox) g = axpy(lambda, norm_power_grad(w, p, m), g);
    return g;
  };
  auto prox_step = [&](const Vector& v, double L) {
    return prox ? prox_norm_power(v, lambda / L, p, m) : v;
  };
  auto total = [&](const Vector& w) { return regularized_objective(X, y, w, lambda, p, m); };
  double L = std::max(2.0 * lambda_max(gram(X)), 1e-12);
  SolveResult r;
  Vector w = warm ? *warm : Vector(n, 0.0);
  if (w.size() != n) throw ShapeError("warm start has wrong length");
  Vector z = w;
  double theta = 1.0, Fw = total(w);
  for (r.iterations = 0; r.iterations < opt.max_iters; ++r.iterations) {
    const Vector gz = grad(z);
    const double fz = smooth(z);
    Vector wn;
    for (int halvings = 0;; ++halvings) {
      wn = prox_step(axpy(-1.0 / L, gz, z), L);
      Vector dz = sub(wn, z);
      if (smooth(wn) <= fz + dot(gz, dz) + 0.5 * L * dot(dz, dz) + 1e-14 * std::abs(fz)) break;
      if (halvings >= opt.max_halvings) throw DivergenceError("step halving limit reached", r.iterations);
      L *= 2.0;
    }
    const double Fn = total(wn);
    // gradient mapping at the new iterate
    const Vector gw = grad(wn);
    r.residual = L * norm2(sub(wn, prox_step(axpy(-1.0 / L, gw, wn), L)));
    // restart only when momentum was active; a plain step is accepted (rounding near the optimum)
    if (Fn > Fw && theta > 1.0) {
      theta = 1.0;
      z = w;
      continue;
    }
    const double theta_n = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * theta * theta));
    z = axpy((theta - 1.0) / theta_n, sub(wn, w), wn);
    theta = theta_n;
    w = std::move(wn);
    Fw = Fn;
    if (r.residual <= opt.tol) {
      r.converged = true;
      break;
    }
  }
  r.w = w;
  r.objective = Fw;
  return r;
}

struct InnerExtremes {
  double min = 0.0, max = 0.0;
  Vector d_min, d_max;
};

// argmax_{||d||_q <= 1} w^T d
inline Vector dual_aligned(const Vector& w, double q) {
  const double p = dual_exponent(q);
  Vector d(w.size(), 0.0);
  const double nw = pnorm(w, p);
  if (nw == 0.0) return d;
  if (std::isinf(q)) {
    for (std::size_t i = 0; i < w.size(); ++i) d[i] = w[i] > 0 ? 1.0 : (w[i] < 0 ? -1.0 : 0.0);
  } else if (q == 1.0) {
    std::size_t k = 0;
    for (std::size_t i = 0; i < w.size(); ++i)
      if (std::abs(w[i]) > std::abs(w[k])) k = i;
    d[k] = w[k] > 0 ? 1.0 : -1.0;
  } else {
    for (std::size_t i = 0; i < w.size(); ++i) d[i] = std::copysign(std::pow(std::abs(w[i]) / nw, p - 1.0), w[i]);
  }
  return d;
}

inline InnerExtremes inner_extremes(const Vector& w, const Vector& x, double eps, double q) {
  InnerExtremes e;
  const double base = dot(w, x), spread = eps * pnorm(w, dual_exponent(q));
  e.min = base - spread;
  e.max = base + spread;
  e.d_max = scale(eps, dual_aligned(w, q));
  e.d_min = scale(-1.0, e.d_max);
  return e;
}

// sum (y - w^T x)^2 + eps^2 ||w||_p^2, the reduced inflated problem as printed
inline double inflated_objective_reduced(const Matrix& X, const Vector& y, const Vector& w, double eps, double p) {
  return regularized_objective(X, y, w, eps * eps, p, 2.0);
}

// Literal inflated objective with explicit extremal perturbations. Equals the reduced
// objective plus (N - 1) eps^2 ||w||_p^2 for N points.
inline double inflated_objective_direct(const Matrix& X, const Vector& y, const Vector& w, double eps, double p) {
  const double q = dual_exponent(p);
  double s = 0.0;
  for (std::size_t i = 0; i < X.rows(); ++i) {
    Vector x = X.row(i);
    InnerExtremes e = inner_extremes(w, x, eps, q);
    const double lo = dot(w, add(x, e.d_min)), hi = dot(w, add(x, e.d_max));
    s += 0.5 * (y[i] - lo) * (y[i] - lo) + 0.5 * (y[i] - hi) * (y[i] - hi);
  }
  return s;
}

inline SolveResult solve_inflated(const Matrix& X, const Vector& y, double eps, double p, const SolverOptions& opt = {},
                                  const Vector* warm = nullptr) {
  if (eps < 0) throw ContractError("epsilon must be nonnegative");
  return solve_regularized(X, y, eps * eps, p, 2.0, opt, warm);
}

struct EquivalenceResult {
  double p = 2.0, m = 2.0;
  double lambda = 0.0, epsilon = 0.0;
  Vector w_regularized, w_inflated;
  double residual = 0.0;  // relative solution gap
  std::size_t bisection_steps = 0;
  bool analytic = false;
};

namespace detail {
inline double rel_gap(const Vector& a, const Vector& b) { return norm2(sub(a, b)) / std::max(1.0, norm2(b)); }

// Root of norm(param) = target, norm nonincreasing in param >= 0.
template <class NormAt>
double match_norm(NormAt norm_at, double target, std::size_t& steps, const char* what) {
  double lo = 0.0, hi = 1.0;
  int grow = 0;
  while (norm_at(hi) > target * (1 + 1e-12)) {
    lo = hi;
    hi *= 2.0;
    if (++grow > 200)
      throw RangeError(std::string("no bracketing ") + what + " found: norm stays above " + std::to_string(target) +
                       " up to " + std::to_string(hi));
  }
  for (steps = 0; steps < 200; ++steps) {
    double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    double nm = norm_at(mid);
    if (std::abs(nm - target) <= 1e-12 * std::max(target, 1e-300)) return mid;
    (nm > target ? lo : hi) = mid;
    if (hi - lo <= 1e-15 * hi) break;
  }
  return 0.5 * (lo + hi);
}
}  // namespace detail

inline EquivalenceResult equivalent_lambda(double eps, double p, double m, const Matrix& X, const Vector& y,
                                           const SolverOptions& opt = {}) {
  EquivalenceResult r;
  r.p = p;
  r.m = m;
  r.epsilon = eps;
  SolveResult wi = solve_inflated(X, y, eps, p, opt);
  r.w_inflated = wi.w;
  if (eps == 0.0 || (p == 2.0 && m == 2.0)) {
    r.analytic = true;
    r.lambda = eps * eps;
  } else {
    const double target = pnorm(wi.w, p);
    Vector warm = wi.w;
    r.lambda = detail::match_norm(
        [&](double lam) {
          SolveResult s = solve_regularized(X, y, lam, p, m, opt, &warm);
          warm = s.w;
          return pnorm(s.w, p);
        },
        target, r.bisection_steps, "lambda");
  }
  r.w_regularized = solve_regularized(X, y, r.lambda, p, m, opt, &r.w_inflated).w;
  r.residual = detail::rel_gap(r.w_inflated, r.w_regularized);
  return r;
}

inline EquivalenceResult equivalent_epsilon(double lambda, double p, double m, const Matrix& X, const Vector& y,
                                            const SolverOptions& opt = {}) {
  EquivalenceResult r;
  r.p = p;
  r.m = m;
  r.lambda = lambda;
  SolveResult wr = solve_regularized(X, y, lambda, p, m, opt);
  r.w_regularized = wr.w;
  if (lambda == 0.0 || (p == 2.0 && m == 2.0)) {
    r.analytic = true;
    r.epsilon = std::sqrt(lambda);
  } else {
    const double target = pnorm(wr.w, p);
    Vector warm = wr.w;
    r.epsilon = detail::match_norm(
        [&](double e) {
          SolveResult s = solve_inflated(X, y, e, p, opt, &warm);
          warm = s.w;
          return pnorm(s.w, p);
        },
        target, r.bisection_steps, "epsilon");
  }
  r.w_inflated = solve_inflated(X, y, r.epsilon, p, opt, &r.w_regularized).w;
  r.residual = detail::rel_gap(r.w_inflated, r.w_regularized);
  return r;
}

struct ScanResult {
  Vector scales;
  Vector values;
  bool strictly_decreasing = false;
  bool separable_after_inflation = false;
  double lower_bound = 0.0;  // smallest value seen
};

// Eq. (11) objective at w.
inline double robust_logistic_objective(const std::vector<Vector>& A, const std::vector<Vector>& B, const Vector& w,
                                        double eps, double q) {
  const double e = eps * pnorm(w, q);
  double s = 0.0;
  for (const auto& x : A) {
    const double t = dot(w, x);
    s += 0.5 * (softplus(-t - e) + softplus(-t + e));
  }
  for (const auto& x : B) {
    const double t = dot(w, x);
    s += 0.5 * (softplus(t + e) + softplus(t - e));
  }
  return s;
}

inline ScanResult robust_logistic_scan(const std::vector<Vector>& A, const std::vector<Vector>& B, double eps, double q,
                                       const Vector& direction, const Vector& scales) {
  ScanResult r;
  r.scales = scales;
  const double e = eps * pnorm(direction, q);
  double minA = kInf, maxB = -kInf;
  for (const auto& x : A) minA = std::min(minA, dot(direction, x));
  for (const auto& x : B) maxB = std::max(maxB, dot(direction, x));
  r.separable_after_inflation = minA - e > 0 && maxB + e < 0;
  r.strictly_decreasing = true;
  r.lower_bound = kInf;
  for (double s : scales) {
    double v = robust_logistic_objective(A, B, scale(s, direction), eps, q);
    if (!r.values.empty() && !(v < r.values.back())) r.strictly_decreasing = false;
    r.values.push_back(v);
    r.lower_bound = std::min(r.lower_bound, v);
  }
  return r;
}

// Spectral-norm variant: d_i = eps * top right singular vector of W.
inline Vector top_right_singular_vector(const Matrix& W) {
  EigenDecomposition ed = sym_eig(gram(W));
  return ed.vectors.col(0);
}

inline double spectral_norm(const Matrix& W) { return singular_values(W)[0]; }

inline double corollary3_regularized_objective(const Matrix& X, const Matrix& Y, const Matrix& W, double lambda) {
  double s = 0.0;
  for (std::size_t i = 0; i < X.rows(); ++i) {
    Vector r = sub(Y.row(i), matvec(W, X.row(i)));
    s += dot(r, r);
  }
  const double sn = spectral_norm(W);
  return s + lambda * sn * sn;
}

inline double corollary3_inflated_objective(const Matrix& X, const Matrix& Y, const Matrix& W, double eps) {
  const Vector d = scale(eps, top_right_singular_vector(W));
  double s = 0.0;
  for (std::size_t i = 0; i < X.rows(); ++i) {
    Vector x = X.row(i), y = Y.row(i);
    Vector r1 = sub(y, matvec(W, add(x, d))), r2 = sub(y, matvec(W, sub(x, d)));
    s += dot(r1, r1) + dot(r2, r2);
  }
  return s;
}

inline nlohmann::json to_json(const EquivalenceResult& r) {
  return {{"p", std::isinf(r.p) ? nlohmann::json("inf") : nlohmann::json(r.p)},
          {"m", r.m},
          {"epsilon", r.epsilon},
          {"lambda", r.lambda},
          {"w_regularized", r.w_regularized},
          {"w_inflated", r.w_inflated},
          {"residual", r.residual},
          {"analytic", r.analytic},
          {"bisection_steps", r.bisection_steps}};
}

}  // namespace pexcite
