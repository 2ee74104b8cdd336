#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "pexcite/data.hpp"
#include "pexcite/errors.hpp"
#include "pexcite/linalg.hpp"
#include "pexcite/net.hpp"
#include "pexcite/optim.hpp"
#include "pexcite/trajectory.hpp"

namespace pexcite {

// One sample point inside every face of the arrangement {V_k x + b_k = 0} (input dim 1 or 2).
inline std::vector<Vector> arrangement_samples(const Matrix& V, const Vector& b) {
  const std::size_t n = V.cols();
  std::vector<Vector> out;
  if (n == 1) {
    std::vector<double> t;
    for (std::size_t k = 0; k < V.rows(); ++k)
      if (V(k, 0) != 0.0) t.push_back(-b[k] / V(k, 0));
    std::sort(t.begin(), t.end());
    t.erase(std::unique(t.begin(), t.end()), t.end());
    if (t.empty()) return {{0.0}};
    const double span = std::max(1.0, t.back() - t.front());
    out.push_back({t.front() - span});
    out.push_back({t.back() + span});
    for (std::size_t i = 0; i + 1 < t.size(); ++i) out.push_back({0.5 * (t[i] + t[i + 1])});
    return out;
  }
  if (n != 2) throw ContractError("arrangement_samples: input dimension must be 1 or 2");
  struct Line {
    double a0, a1, c, na;
  };
  std::vector<Line> lines;
  for (std::size_t k = 0; k < V.rows(); ++k) {
    double na = std::hypot(V(k, 0), V(k, 1));
    if (na > 0) lines.push_back({V(k, 0), V(k, 1), b[k], na});
  }
  if (lines.empty()) return {{0.0, 0.0}};
  auto dist = [](const Line& l, double x, double y) { return std::abs(l.a0 * x + l.a1 * y + l.c) / l.na; };
  for (std::size_t k = 0; k < lines.size(); ++k) {
    const Line& L = lines[k];
    const double px = -L.c * L.a0 / (L.na * L.na), py = -L.c * L.a1 / (L.na * L.na);
    const double tx = -L.a1 / L.na, ty = L.a0 / L.na;
    std::vector<double> s;
    for (std::size_t l = 0; l < lines.size(); ++l) {
      if (l == k) continue;
      const Line& M = lines[l];
      const double den = M.a0 * tx + M.a1 * ty;
      if (std::abs(den) <= 1e-14 * M.na) continue;
      s.push_back(-(M.a0 * px + M.a1 * py + M.c) / den);
    }
    std::sort(s.begin(), s.end());
    std::vector<double> pos;
    if (s.empty()) {
      pos.push_back(0.0);
    } else {
      const double span = std::max(1.0, s.back() - s.front());
      pos.push_back(s.front() - span);
      pos.push_back(s.back() + span);
      for (std::size_t i = 0; i + 1 < s.size(); ++i)
        if (s[i + 1] > s[i]) pos.push_back(0.5 * (s[i] + s[i + 1]));
    }
    for (double t : pos) {
      const double x = px + t * tx, y = py + t * ty;
      double rho = 1.0;
      for (std::size_t l = 0; l < lines.size(); ++l) {
        if (l == k) continue;
        double dl = dist(lines[l], x, y);
        if (dl > 0) rho = std::min(rho, 0.5 * dl);
      }
      const double nx = L.a0 / L.na, ny = L.a1 / L.na;
      out.push_back({x + rho * nx, y + rho * ny});
      out.push_back({x - rho * nx, y - rho * ny});
    }
  }
  return out;
}

struct ActiveCount {
  std::size_t count = 0;
  bool exact = false;
};

inline ActiveCount n_active_max(const Network& net, const Dataset* data = nullptr, std::size_t probes = 100000,
                                std::uint64_t seed = 0) {
  const TwoLayer T = TwoLayer::from(net);
  ActiveCount r;
  auto count = [&](const Vector& x) {
    auto p = T.pattern(x);
    r.count = std::max<std::size_t>(r.count, std::count(p.begin(), p.end(), 1));
  };
  if (data)
    for (const auto& x : data->points) count(x);
  if (T.V.cols() <= 2) {
    for (const auto& x : arrangement_samples(T.V, T.b)) count(x);
    r.exact = true;
    return r;
  }
  double sc = 1.0;
  for (std::size_t k = 0; k < T.V.rows(); ++k) {
    double nv = norm2(T.V.row(k));
    if (nv > 0) sc = std::max(sc, std::abs(T.b[k]) / nv);
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> ud(-2.0, 2.0);
  for (std::size_t i = 0; i < probes; ++i) {
    Vector x(T.V.cols());
    for (auto& v : x) v = nd(rng);
    count(scale(sc * std::pow(10.0, ud(rng)), x));
  }
  return r;
}

inline double thm1_formula(double delta, double mu_bar, double lambda_low, double b_inf, double n_active) {
  return n_active * std::sqrt(2.0 / (delta * lambda_low)) *
         (2.0 * mu_bar * b_inf / lambda_low + std::sqrt(std::abs(2.0 / delta - b_inf * b_inf) / lambda_low));
}

struct Thm1Report {
  double delta = 0.0;
  double lambda_low = 0.0;
  double mu_bar = 0.0;
  double b_inf = 0.0;
  std::size_t n_active_max = 0;
  bool n_active_exact = false;
  bool defined = false;
  std::string note;
  double bound = kInf;
};

inline Thm1Report thm1_bound(const Network& net, const Dataset& data, double delta) {
  if (!(delta > 0)) throw ContractError("step size must be positive");
  const TwoLayer T = TwoLayer::from(net);
  const std::size_t n = T.V.cols();
  Thm1Report r;
  r.delta = delta;
  r.b_inf = pnorm(T.b, kInf);
  r.lambda_low = kInf;
  bool empty_node = false;
  for (std::size_t k = 0; k < T.width(); ++k) {
    Matrix S(n, n);
    Vector m(n, 0.0);
    std::size_t cnt = 0;
    for (const auto& x : data.points) {
      if (dot(T.V.row(k), x) + T.b[k] <= 0.0) continue;
      ++cnt;
      for (std::size_t p = 0; p < n; ++p) {
        m[p] += x[p];
        for (std::size_t q = 0; q < n; ++q) S(p, q) += x[p] * x[q];
      }
    }
    if (cnt == 0) empty_node = true;
    r.lambda_low = std::min(r.lambda_low, cnt ? lambda_min(S) : 0.0);
    r.mu_bar = std::max(r.mu_bar, norm2(m));
  }
  auto na = n_active_max(net, &data);
  r.n_active_max = na.count;
  r.n_active_exact = na.exact;
  r.note = "activation sets use strict inequality V_k x + b_k > 0";
  if (empty_node || !(r.lambda_low > 1e-14)) {
    r.defined = false;
    r.note += empty_node ? "; some activation set is empty" : "; lambda_low is zero";
    return r;
  }
  r.defined = true;
  r.bound = thm1_formula(delta, r.mu_bar, r.lambda_low, r.b_inf, static_cast<double>(r.n_active_max));
  return r;
}

inline double corollary1_margin(double Delta, double L) {
  if (!(Delta > 0) || !(L > 0)) throw ContractError("corollary1_margin needs positive inputs");
  return Delta / (2.0 * L);
}

// Wolfe's minimum-norm-point method over conv(atoms), atoms supplied by a linear oracle.
struct Atom {
  Vector p;
  std::size_t a = 0, b = 0;
  bool same(const Atom& o) const { return a == o.a && b == o.b; }
};

struct MinNormResult {
  Vector x;
  std::vector<Atom> corral;
  Vector weights;
  std::size_t iterations = 0;
  bool converged = false;
  double gap = 0.0;
};

inline MinNormResult wolfe_min_norm(const std::function<Atom(const Vector&)>& lmo, Atom start,
                                    std::size_t max_iter = 100000, double tol = 1e-10) {
  MinNormResult r;
  r.corral = {start};
  r.weights = {1.0};
  r.x = start.p;
  double scale2 = dot(start.p, start.p);
  auto combine = [&] {
    Vector x(r.x.size(), 0.0);
    for (std::size_t i = 0; i < r.corral.size(); ++i) x = axpy(r.weights[i], r.corral[i].p, x);
    r.x = x;
  };
  for (r.iterations = 0; r.iterations < max_iter; ++r.iterations) {
    Atom q = lmo(r.x);
    scale2 = std::max(scale2, dot(q.p, q.p));
    const double xx = dot(r.x, r.x);
    r.gap = xx - dot(r.x, q.p);
    if (r.gap <= tol * tol * scale2 || xx <= 1e-30 * scale2) {
      r.converged = true;
      break;
    }
    bool dup = false;
    for (const auto& c : r.corral) dup = dup || c.same(q);
    if (dup) {
      r.converged = r.gap <= tol * scale2;
      break;
    }
    r.corral.push_back(q);
    r.weights.push_back(0.0);
    for (;;) {
      const std::size_t k = r.corral.size();
      Matrix A(k + 1, k + 1);
      Vector rhs(k + 1, 0.0);
      for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < k; ++j) A(i, j) = dot(r.corral[i].p, r.corral[j].p);
        A(i, i) += 1e-15 * scale2;
        A(i, k) = A(k, i) = 1.0;
      }
      rhs[k] = 1.0;
      Vector alpha = solve(A, rhs);
      alpha.resize(k);
      bool positive = true;
      for (double a : alpha) positive = positive && a > 1e-14;
      if (positive) {
        r.weights = alpha;
        break;
      }
      double theta = 1.0;
      for (std::size_t i = 0; i < k; ++i)
        if (alpha[i] <= 1e-14) {
          double den = r.weights[i] - alpha[i];
          if (den > 0) theta = std::min(theta, r.weights[i] / den);
        }
      for (std::size_t i = 0; i < k; ++i) r.weights[i] = theta * alpha[i] + (1 - theta) * r.weights[i];
      std::vector<Atom> keep;
      Vector kw;
      for (std::size_t i = 0; i < k; ++i)
        if (r.weights[i] > 1e-14) keep.push_back(r.corral[i]), kw.push_back(r.weights[i]);
      if (keep.empty()) {
        keep.push_back(r.corral.back());
        kw.push_back(1.0);
      }
      double s = std::accumulate(kw.begin(), kw.end(), 0.0);
      for (auto& w : kw) w /= s;
      r.corral = std::move(keep);
      r.weights = std::move(kw);
      if (r.corral.size() == 1) break;
    }
    combine();
  }
  return r;
}

struct SvmResult {
  double gamma_opt = 0.0;
  Vector w;  // scaled so that min_A <w,a> - max_B <w,b> = 2
  double b = 0.0;
  Vector u, v;  // nearest hull points
  double kkt_residual = 0.0;
  std::size_t iterations = 0;
};

namespace detail {
inline void check_sets(const std::vector<Vector>& A, const std::vector<Vector>& B) {
  if (A.empty() || B.empty()) throw ContractError("both point sets must be nonempty");
  const std::size_t n = A[0].size();
  for (const auto* s : {&A, &B})
    for (const auto& x : *s)
      if (x.size() != n) throw ShapeError("point sets must share a dimension");
}
inline double data_scale2(const std::vector<Vector>& A, const std::vector<Vector>& B) {
  double s = 1e-300;
  for (const auto* set : {&A, &B})
    for (const auto& x : *set) s = std::max(s, dot(x, x));
  return s;
}
}  // namespace detail

inline SvmResult svm_hard_margin(const std::vector<Vector>& A, const std::vector<Vector>& B) {
  detail::check_sets(A, B);
  auto lmo = [&](const Vector& x) {
    std::size_t ia = 0, ib = 0;
    double best_a = kInf, best_b = -kInf;
    for (std::size_t i = 0; i < A.size(); ++i)
      if (double s = dot(x, A[i]); s < best_a) best_a = s, ia = i;
    for (std::size_t j = 0; j < B.size(); ++j)
      if (double s = dot(x, B[j]); s > best_b) best_b = s, ib = j;
    return Atom{sub(A[ia], B[ib]), ia, ib};
  };
  MinNormResult m = wolfe_min_norm(lmo, Atom{sub(A[0], B[0]), 0, 0});
  const double D = norm2(m.x);
  if (D <= 1e-9 * std::sqrt(detail::data_scale2(A, B))) throw SeparabilityError("point sets are not linearly separable");
  SvmResult r;
  r.iterations = m.iterations;
  r.gamma_opt = 0.5 * D;
  r.w = scale(2.0 / (D * D), m.x);
  Vector alpha(A.size(), 0.0), beta(B.size(), 0.0);
  r.u.assign(A[0].size(), 0.0);
  r.v.assign(A[0].size(), 0.0);
  for (std::size_t i = 0; i < m.corral.size(); ++i) {
    alpha[m.corral[i].a] += m.weights[i];
    beta[m.corral[i].b] += m.weights[i];
  }
  double min_a = kInf, max_b = -kInf;
  for (std::size_t i = 0; i < A.size(); ++i) {
    min_a = std::min(min_a, dot(r.w, A[i]));
    r.u = axpy(alpha[i], A[i], r.u);
  }
  for (std::size_t j = 0; j < B.size(); ++j) {
    max_b = std::max(max_b, dot(r.w, B[j]));
    r.v = axpy(beta[j], B[j], r.v);
  }
  r.b = -0.5 * (min_a + max_b);
  double slack = 0.0;
  for (std::size_t i = 0; i < A.size(); ++i) slack += alpha[i] * (dot(r.w, A[i]) - min_a);
  for (std::size_t j = 0; j < B.size(); ++j) slack += beta[j] * (max_b - dot(r.w, B[j]));
  r.kkt_residual = std::max(0.0, 2.0 - (min_a - max_b)) + slack;
  return r;
}

// Max-margin separator of the bias-augmented points [x; 1], the limit direction of logistic GD.
struct AugmentedSvm {
  Vector w;
  double b = 0.0;
};

inline AugmentedSvm augmented_svm(const std::vector<Vector>& A, const std::vector<Vector>& B) {
  detail::check_sets(A, B);
  std::vector<Vector> atoms;
  for (const auto& x : A) {
    Vector t = x;
    t.push_back(1.0);
    atoms.push_back(t);
  }
  for (const auto& x : B) {
    Vector t = scale(-1.0, x);
    t.push_back(-1.0);
    atoms.push_back(t);
  }
  auto lmo = [&](const Vector& x) {
    std::size_t best = 0;
    double bv = kInf;
    for (std::size_t i = 0; i < atoms.size(); ++i)
      if (double s = dot(x, atoms[i]); s < bv) bv = s, best = i;
    return Atom{atoms[best], best, 0};
  };
  MinNormResult m = wolfe_min_norm(lmo, Atom{atoms[0], 0, 0});
  const double n2 = dot(m.x, m.x);
  if (n2 <= 1e-18 * (1.0 + detail::data_scale2(A, B)))
    throw SeparabilityError("augmented point sets are not separable");
  Vector z = scale(1.0 / n2, m.x);
  AugmentedSvm r;
  r.b = z.back();
  z.pop_back();
  r.w = z;
  return r;
}

struct MarginAnalysis {
  Vector w_bar;
  double B = 0.0;
  std::vector<std::size_t> I_sup, J_sup;
  std::vector<Vector> r;
  Vector delta;
  double gamma_opt = 0.0;
  double thm2_bound = 0.0;
  std::optional<double> cor2_bound;
  std::string mode;  // "subspace", "half_space" or "none"
  double bound = 0.0;
  double achieved_margin = 0.0;   // 1 / ||w_bar||
  double geometric_margin = 0.0;  // min_n y_n (<w_bar, x_n> + B) / ||w_bar||
};

inline MarginAnalysis thm2_bound(const Vector& w, double b, const Dataset& data, double sup_tol = 1e-3,
                                 double null_tol = 1e-6) {
  std::vector<std::size_t> I, J;
  for (std::size_t i = 0; i < data.size(); ++i) (data.labels[i] == 1 ? I : J).push_back(i);
  if (I.empty() || J.empty()) throw ContractError("thm2_bound needs both classes");
  double minI = kInf, maxJ = -kInf;
  for (auto i : I) minI = std::min(minI, dot(w, data.points[i]));
  for (auto j : J) maxJ = std::max(maxJ, dot(w, data.points[j]));
  if (!(minI + b > 0) || !(maxJ + b < 0)) throw SeparabilityError("classifier does not separate the data");
  SvmResult svm = svm_hard_margin(data.class_points(1), data.class_points(-1));
  MarginAnalysis r;
  r.gamma_opt = svm.gamma_opt;
  const double c = 2.0 / (minI - maxJ);
  r.w_bar = scale(c, w);
  r.B = c * b;
  const std::size_t n = w.size();
  Vector fm(data.size());
  double mI = kInf, mJ = kInf;
  for (std::size_t i = 0; i < data.size(); ++i) {
    fm[i] = data.labels[i] * (dot(r.w_bar, data.points[i]) + r.B);
    (data.labels[i] == 1 ? mI : mJ) = std::min(data.labels[i] == 1 ? mI : mJ, fm[i]);
  }
  for (auto i : I)
    if (fm[i] - mI <= sup_tol * std::max(std::abs(mI), 1.0)) r.I_sup.push_back(i);
  for (auto j : J)
    if (fm[j] - mJ <= sup_tol * std::max(std::abs(mJ), 1.0)) r.J_sup.push_back(j);
  std::vector<Vector> S;
  for (auto i : r.I_sup) S.push_back(data.points[i]);
  for (auto j : r.J_sup) S.push_back(data.points[j]);
  Vector mean(n, 0.0);
  for (const auto& x : S) mean = add(mean, x);
  mean = scale(1.0 / S.size(), mean);
  Matrix C(n, n);
  for (const auto& x : S) {
    Vector d = sub(x, mean);
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = 0; q < n; ++q) C(p, q) += d[p] * d[q];
  }
  EigenDecomposition ed = sym_eig(C);
  const double s1 = std::sqrt(std::max(ed.values[0], 0.0));
  double sum_d2 = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double sk = std::sqrt(std::max(ed.values[k], 0.0));
    if (sk <= null_tol * s1) {
      Vector rk = ed.vectors.col(k);
      r.r.push_back(rk);
      r.delta.push_back(dot(rk, mean));
      sum_d2 += r.delta.back() * r.delta.back();
    }
  }
  const double penalty = r.B * r.B * sum_d2;
  r.thm2_bound = penalty == 0.0 ? r.gamma_opt : 1.0 / std::sqrt(1.0 / (r.gamma_opt * r.gamma_opt) + penalty);
  r.mode = r.r.empty() ? "none" : "subspace";
  r.bound = r.thm2_bound;
  if (r.r.empty() && r.B != 0.0) {
    // one-sided condition along principal directions of the supports
    double cor_sum = 0.0;
    std::vector<Vector> rs;
    Vector ds;
    for (std::size_t k = 0; k < n; ++k) {
      Vector e = ed.vectors.col(k);
      double best = 0.0;
      Vector best_r;
      for (double sgn : {1.0, -1.0}) {
        Vector rk = scale(sgn, e);
        double hi = kInf, lo = -kInf;
        for (auto i : r.I_sup) hi = std::min(hi, dot(rk, data.points[i]));
        for (auto j : r.J_sup) lo = std::max(lo, dot(rk, data.points[j]));
        if (lo > hi) continue;
        double d = r.B > 0 ? (hi > 0 ? hi : 0.0) : (lo < 0 ? lo : 0.0);
        if (std::abs(d) > std::abs(best)) best = d, best_r = rk;
      }
      if (best != 0.0) {
        rs.push_back(best_r);
        ds.push_back(best);
        cor_sum += best * best;
      }
    }
    if (cor_sum > 0) {
      r.cor2_bound = 1.0 / (std::abs(r.B) * std::sqrt(cor_sum));
      r.r = rs;
      r.delta = ds;
      r.mode = "half_space";
      r.bound = std::min(r.thm2_bound, *r.cor2_bound);
    }
  }
  const double nw = norm2(r.w_bar);
  r.achieved_margin = 1.0 / nw;
  r.geometric_margin = kInf;
  for (double f : fm) r.geometric_margin = std::min(r.geometric_margin, f / nw);
  return r;
}

struct Thm3Report {
  std::size_t n_sup = 0;
  std::size_t n_sup_max = 0;
  std::size_t n_node_min = 0;
  bool n_sup_exact = true;
  bool n_node_exact = false;
  double lambda_low = 0.0;
  bool void_bound = false;
  double bound = kInf;
  double scale_factor = 1.0;
  double balance_residual = 0.0;
  std::vector<std::size_t> supports;
  Network scaled;
};

namespace detail {
using Bits = std::vector<std::uint64_t>;
inline void bit_set(Bits& b, std::size_t i) { b[i / 64] |= std::uint64_t{1} << (i % 64); }
inline bool covers(const std::vector<const Bits*>& sets, const Bits& all) {
  for (std::size_t w = 0; w < all.size(); ++w) {
    std::uint64_t u = 0;
    for (auto* s : sets) u |= (*s)[w];
    if (u != all[w]) return false;
  }
  return true;
}
}  // namespace detail

inline Thm3Report thm3_bound(const Network& net, const Dataset& data, double sup_tol = 1e-3) {
  TwoLayer T = TwoLayer::from(net);
  if (T.W.rows() != 1) throw ArchitectureError("thm3_bound needs a scalar output");
  for (double c : T.c)
    if (c != 0.0) throw ArchitectureError("thm3_bound needs a network without output bias");
  auto f = [&](const Vector& x) {
    Vector z = matvec(T.V, x);
    double s = 0.0;
    for (std::size_t k = 0; k < z.size(); ++k) s += T.W(0, k) * std::max(z[k] + T.b[k], 0.0);
    return s;
  };
  double m = kInf;
  for (std::size_t i = 0; i < data.size(); ++i) m = std::min(m, data.labels[i] * f(data.points[i]));
  if (!(m > 0)) throw ContractError("thm3_bound: the direction misclassifies some point");
  Thm3Report r;
  const double wn = frobenius_norm(T.W), vn = frobenius_norm(T.V), bn = norm2(T.b);
  r.balance_residual = (wn * wn - vn * vn - bn * bn) / (wn * wn + vn * vn + bn * bn);
  r.scale_factor = 1.0 / std::sqrt(m);
  for (auto* a : {&T.W.data(), &T.V.data(), &T.b})
    for (auto& v : *a) v *= r.scale_factor;
  r.scaled = net;
  r.scaled.layer(0).set_weight_matrix(T.V);
  if (r.scaled.layer(0).use_bias()) r.scaled.layer(0).bias() = T.b;
  r.scaled.layer(1).set_weight_matrix(T.W);
  for (std::size_t i = 0; i < data.size(); ++i)
    if (data.labels[i] * f(data.points[i]) <= 1.0 + sup_tol) r.supports.push_back(i);
  r.n_sup = r.supports.size();
  const std::size_t width = T.width(), words = (r.n_sup + 63) / 64;
  std::vector<detail::Bits> sets(width, detail::Bits(words, 0));
  detail::Bits all(words, 0);
  r.lambda_low = kInf;
  const std::size_t n = T.V.cols();
  for (std::size_t k = 0; k < width; ++k) {
    std::vector<Vector> cols;
    for (std::size_t s = 0; s < r.n_sup; ++s) {
      const Vector& x = data.points[r.supports[s]];
      if (dot(T.V.row(k), x) + T.b[k] > 0.0) {
        detail::bit_set(sets[k], s);
        cols.push_back(scale(data.labels[r.supports[s]], x));
      }
    }
    r.n_sup_max = std::max(r.n_sup_max, cols.size());
    if (cols.empty()) continue;
    Matrix G(cols.size(), cols.size());
    for (std::size_t p = 0; p < cols.size(); ++p)
      for (std::size_t q = 0; q < cols.size(); ++q) G(p, q) = dot(cols[p], cols[q]);
    r.lambda_low = std::min(r.lambda_low, cols.size() > n ? 0.0 : lambda_min(G));
  }
  for (std::size_t s = 0; s < r.n_sup; ++s) detail::bit_set(all, s);
  if (r.n_sup == 0) return r;
  // minimum number of nodes whose activation sets cover all supports
  if (width <= 20) {
    r.n_node_exact = true;
    bool found = false;
    for (std::size_t size = 1; size <= width && !found; ++size) {
      std::vector<std::size_t> idx(size);
      std::iota(idx.begin(), idx.end(), 0);
      for (;;) {
        std::vector<const detail::Bits*> chosen;
        for (auto i : idx) chosen.push_back(&sets[i]);
        if (detail::covers(chosen, all)) {
          r.n_node_min = size;
          found = true;
          break;
        }
        std::size_t i = size;
        while (i > 0 && idx[i - 1] == width - size + i - 1) --i;
        if (i == 0) break;
        ++idx[i - 1];
        for (std::size_t j = i; j < size; ++j) idx[j] = idx[j - 1] + 1;
      }
    }
  } else {
    detail::Bits covered(words, 0);
    std::vector<const detail::Bits*> chosen;
    while (!detail::covers({&covered}, all)) {
      std::size_t best = 0, gain = 0;
      for (std::size_t k = 0; k < width; ++k) {
        std::size_t g = 0;
        for (std::size_t w = 0; w < words; ++w) g += std::popcount(sets[k][w] & ~covered[w]);
        if (g > gain) gain = g, best = k;
      }
      if (gain == 0) break;
      for (std::size_t w = 0; w < words; ++w) covered[w] |= sets[best][w];
      ++r.n_node_min;
    }
  }
  if (!(r.lambda_low > 1e-12)) {
    r.void_bound = true;
    r.bound = kInf;
    return r;
  }
  r.bound = r.n_node_min * std::sqrt(static_cast<double>(r.n_sup_max)) / std::sqrt(r.lambda_low);
  return r;
}

struct LayerRank {
  Vector singular_values;
  std::size_t rank = 0;
  double ratio = 0.0;  // sigma_2 / sigma_1
};

struct RankProfile {
  std::vector<LayerRank> layers;
};

inline RankProfile rank_profile(const std::vector<Matrix>& mats, double threshold = 1e-6) {
  RankProfile p;
  for (const auto& M : mats) {
    LayerRank l;
    l.singular_values = singular_values(M);
    l.rank = numerical_rank(l.singular_values, threshold);
    if (l.singular_values.size() > 1 && l.singular_values[0] > 0)
      l.ratio = l.singular_values[1] / l.singular_values[0];
    p.layers.push_back(std::move(l));
  }
  return p;
}

inline std::vector<Matrix> weight_matrices(const Network& net) {
  std::vector<Matrix> m;
  for (const auto& l : net.layers()) m.push_back(l.weight_matrix());
  return m;
}

struct StabilityReport {
  double lambda_f1 = 0.0;
  double lambda_f4 = 0.0;
  double grad_norm = 0.0;
  bool at_equilibrium = false;
  std::string warning;
};

namespace detail {
// Largest eigenvalue of a symmetric PSD operator on R^dim.
inline double power_iteration(const std::function<Vector(const Vector&)>& op, std::size_t dim,
                              std::size_t max_iter = 200000, double tol = 1e-14) {
  std::mt19937_64 rng(12345);
  std::normal_distribution<double> nd;
  Vector x(dim);
  for (auto& v : x) v = nd(rng);
  x = scale(1.0 / norm2(x), x);
  double lam = 0.0;
  for (std::size_t it = 0; it < max_iter; ++it) {
    Vector y = op(x);
    double nl = dot(x, y);
    double ny = norm2(y);
    if (ny == 0.0) return 0.0;
    x = scale(1.0 / ny, y);
    if (it > 10 && std::abs(nl - lam) <= tol * std::abs(nl)) return nl;
    lam = nl;
  }
  return lam;
}
}  // namespace detail

inline StabilityReport stability_check(const Network& net, const Dataset& data, double delta, TargetPair tp = {}) {
  const TwoLayer T = TwoLayer::from(net);
  const std::size_t r = T.width(), n = T.V.cols(), m = T.W.rows();
  std::vector<Vector> act;
  std::vector<ActivationPattern> pat;
  for (const auto& x : data.points) {
    Vector z = matvec(T.V, x);
    Vector a(r);
    ActivationPattern p(r);
    for (std::size_t k = 0; k < r; ++k) {
      p[k] = z[k] + T.b[k] > 0.0;
      a[k] = p[k] ? z[k] + T.b[k] : 0.0;
    }
    act.push_back(a);
    pat.push_back(p);
  }
  auto f1 = [&](const Vector& v) {
    Matrix dW(m, r, v);
    Matrix out(m, r);
    for (const auto& a : act) {
      Vector wa = matvec(dW, a);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t k = 0; k < r; ++k) out(i, k) += delta * wa[i] * a[k];
    }
    return out.data();
  };
  const Matrix WtW = gram(T.W);
  auto f4 = [&](const Vector& v) {
    Matrix dV(r, n, v);
    Matrix out(r, n);
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto& x = data.points[i];
      Vector g = matvec(dV, x);
      for (std::size_t k = 0; k < r; ++k)
        if (!pat[i][k]) g[k] = 0.0;
      Vector h = matvec(WtW, g);
      for (std::size_t k = 0; k < r; ++k) {
        if (!pat[i][k]) continue;
        for (std::size_t j = 0; j < n; ++j) out(k, j) += delta * h[k] * x[j];
      }
    }
    return out.data();
  };
  StabilityReport s;
  s.lambda_f1 = detail::power_iteration(f1, m * r);
  s.lambda_f4 = detail::power_iteration(f4, r * n);
  s.grad_norm = norm2(full_batch_objective(net, data, LossKind::squared_error, regression_targets(data, tp), 0.0).grad);
  s.at_equilibrium = s.grad_norm <= 1e-8;
  if (!s.at_equilibrium) s.warning = "network is not at an equilibrium (gradient norm above 1e-8)";
  return s;
}

inline nlohmann::json to_json(const Thm1Report& r) {
  return {{"delta", r.delta},          {"lambda_low", r.lambda_low},
          {"mu_bar", r.mu_bar},        {"b_inf", r.b_inf},
          {"n_active_max", r.n_active_max}, {"n_active_exact", r.n_active_exact},
          {"defined", r.defined},      {"bound", r.defined ? nlohmann::json(r.bound) : nlohmann::json(nullptr)},
          {"note", r.note}};
}

inline nlohmann::json to_json(const MarginAnalysis& r) {
  nlohmann::json j = {{"w_bar", r.w_bar},
                      {"B", r.B},
                      {"I_sup", r.I_sup},
                      {"J_sup", r.J_sup},
                      {"r", r.r},
                      {"delta", r.delta},
                      {"gamma_opt", r.gamma_opt},
                      {"thm2_bound", r.thm2_bound},
                      {"mode", r.mode},
                      {"bound", r.bound},
                      {"achieved_margin", r.achieved_margin},
                      {"geometric_margin", r.geometric_margin}};
  j["cor2_bound"] = r.cor2_bound ? nlohmann::json(*r.cor2_bound) : nlohmann::json(nullptr);
  return j;
}

inline nlohmann::json to_json(const Thm3Report& r) {
  return {{"n_sup", r.n_sup},
          {"n_sup_max", r.n_sup_max},
          {"n_sup_exact", r.n_sup_exact},
          {"n_node_min", r.n_node_min},
          {"n_node_exact", r.n_node_exact},
          {"lambda_low", std::isfinite(r.lambda_low) ? nlohmann::json(r.lambda_low) : nlohmann::json(nullptr)},
          {"void", r.void_bound},
          {"bound", r.void_bound ? nlohmann::json(nullptr) : nlohmann::json(r.bound)},
          {"scale_factor", r.scale_factor},
          {"balance_residual", r.balance_residual},
          {"supports", r.supports}};
}

inline nlohmann::json to_json(const RankProfile& p) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& l : p.layers)
    j.push_back({{"singular_values", l.singular_values}, {"rank", l.rank}, {"ratio", l.ratio}});
  return j;
}

inline nlohmann::json to_json(const StabilityReport& s) {
  return {{"lambda_f1", s.lambda_f1},
          {"lambda_f4", s.lambda_f4},
          {"grad_norm", s.grad_norm},
          {"at_equilibrium", s.at_equilibrium},
          {"warning", s.warning}};
}

}  // namespace pexcite
