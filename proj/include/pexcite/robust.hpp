#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <random>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "pexcite/bounds.hpp"
#include "pexcite/data.hpp"
#include "pexcite/errors.hpp"
#include "pexcite/linalg.hpp"
#include "pexcite/net.hpp"
#include "pexcite/optim.hpp"

namespace pexcite {

// label(x) = +1 iff orientation * (f(x) - threshold) > 0
struct ScalarClassifier {
  Network net;
  double threshold = 0.0;
  int orientation = 1;

  static ScalarClassifier logistic(Network net) { return {std::move(net), 0.0, 1}; }

  // Threshold halfway into the gap between the two classes' outputs, or the target midpoint
  // when the classes overlap.
  static ScalarClassifier squared_error(Network net, const Dataset& data, TargetPair tp = {}) {
    if (net.output_dim() != 1) throw ArchitectureError("scalar output required");
    ScalarClassifier c{std::move(net), 0.5 * (tp.positive + tp.negative), tp.positive > tp.negative ? 1 : -1};
    double lo_max = -kInf, hi_min = kInf;  // low-target class max, high-target class min
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double f = c.net.scalar(data.points[i]);
      const bool low = (data.labels[i] == 1) == (tp.positive < tp.negative);
      if (low) lo_max = std::max(lo_max, f);
      else hi_min = std::min(hi_min, f);
    }
    const double gap = hi_min - lo_max;
    if (gap > 0 && std::isfinite(gap)) c.threshold = lo_max + gap / 2;
    return c;
  }

  double score(std::span<const double> x) const { return orientation * (net.scalar(x) - threshold); }
  int predict(std::span<const double> x) const { return score(x) > 0 ? 1 : -1; }
  // positive iff correctly classified
  double signed_score(std::span<const double> x, int label) const { return label * score(x); }
  Vector signed_grad(std::span<const double> x, int label) const {
    const double up = label * orientation;
    return net.input_gradient(x, std::span<const double>(&up, 1));
  }
};

struct AttackConfig {
  double eps_max = 0.5;
  std::size_t steps = 40;
  std::size_t bisect_iters = 12;
  std::size_t restarts = 1;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

struct AttackResult {
  bool found = false;
  Vector delta;
  double best = kInf;  // lowest signed score seen
};

// Sign-gradient descent on the signed score inside the l-inf ball of radius eps.
inline AttackResult pgd_attack(const ScalarClassifier& clf, std::span<const double> x, int label, double eps,
                               std::size_t steps, std::mt19937_64& rng, std::size_t restarts = 1,
                               const Vector* warm = nullptr) {
  AttackResult r;
  const std::size_t n = x.size();
  r.delta.assign(n, 0.0);
  std::vector<Vector> starts{Vector(n, 0.0)};
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  for (std::size_t k = 0; k < restarts; ++k) {
    Vector s(n);
    for (auto& v : s) v = eps * U(rng);
    starts.push_back(std::move(s));
  }
  if (warm) {
    Vector s(*warm);
    for (auto& v : s) v = std::clamp(v, -eps, eps);
    starts.push_back(std::move(s));
  }
  const double alpha = steps ? 2.0 * eps / static_cast<double>(steps) : 0.0;
  Vector xp(n);
  for (const auto& s : starts) {
    Vector d = s;
    for (std::size_t k = 0;; ++k) {
      for (std::size_t i = 0; i < n; ++i) xp[i] = x[i] + d[i];
      const double v = clf.signed_score(xp, label);
      if (v < r.best) {
        r.best = v;
        r.delta = d;
      }
      if (v <= 0) {
        r.found = true;
        return r;
      }
      if (k == steps) break;
      Vector g = clf.signed_grad(xp, label);
      for (std::size_t i = 0; i < n; ++i) {
        const double sg = g[i] > 0 ? 1.0 : (g[i] < 0 ? -1.0 : 0.0);
        d[i] = std::clamp(d[i] - alpha * sg, -eps, eps);
      }
    }
  }
  return r;
}

struct RadiusResult {
  double radius = 0.0;
  bool flipped = false;
  bool misclassified_at_zero = false;
};

inline std::uint64_t point_seed(std::span<const double> x, int label, std::uint64_t seed) {
  std::uint64_t h = 1469598103934665603ull ^ seed;
  auto mix = [&](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xff;
      h *= 1099511628211ull;
    }
  };
  for (double v : x) mix(std::bit_cast<std::uint64_t>(v));
  mix(static_cast<std::uint64_t>(label));
  return h;
}

inline RadiusResult pgd_min_radius(const ScalarClassifier& clf, std::span<const double> x, int label,
                                   const AttackConfig& cfg) {
  if (label != 1 && label != -1) throw ContractError("label must be +1 or -1");
  if (!(cfg.eps_max >= 0)) throw ContractError("eps_max must be nonnegative");
  RadiusResult r;
  if (clf.signed_score(x, label) <= 0) {
    r.flipped = true;
    r.misclassified_at_zero = true;
    return r;
  }
  std::mt19937_64 rng(point_seed(x, label, cfg.seed));
  AttackResult a = pgd_attack(clf, x, label, cfg.eps_max, cfg.steps, rng, cfg.restarts);
  if (!a.found) {
    r.radius = cfg.eps_max;
    return r;
  }
  r.flipped = true;
  Vector best = a.delta;
  double lo = 0.0, hi = pnorm(best, kInf);
  for (std::size_t k = 0; k < cfg.bisect_iters; ++k) {
    const double mid = 0.5 * (lo + hi);
    AttackResult m = pgd_attack(clf, x, label, mid, cfg.steps, rng, cfg.restarts, &best);
    if (m.found) {
      best = m.delta;
      hi = std::min(mid, pnorm(best, kInf));
    } else {
      lo = mid;
    }
  }
  r.radius = hi;
  return r;
}

struct MarginRecord {
  std::size_t index = 0;
  int label = 0;
  double radius = 0.0;
  bool flipped = false;
};

struct MarginProfile {
  std::vector<MarginRecord> records;
  Vector sorted_radii;
  std::map<int, double> quantiles;  // percent -> radius
  double eps_max = 0.0;

  double median() const { return quantiles.at(50); }
  // fraction of points misclassified within radius r
  double cdf(double r) const {
    std::size_t k = 0;
    for (const auto& rec : records)
      if (rec.flipped && rec.radius <= r) ++k;
    return records.empty() ? 0.0 : static_cast<double>(k) / records.size();
  }
};

inline double quantile_linear(const Vector& sorted, double q) {
  if (sorted.empty()) return 0.0;
  const double pos = q * (sorted.size() - 1);
  const std::size_t i = static_cast<std::size_t>(pos);
  if (i + 1 >= sorted.size()) return sorted.back();
  return sorted[i] + (pos - i) * (sorted[i + 1] - sorted[i]);
}

inline MarginProfile margin_profile(const ScalarClassifier& clf, const Dataset& data, const AttackConfig& cfg) {
  MarginProfile p;
  p.eps_max = cfg.eps_max;
  p.records.resize(data.size());
  auto work = [&](std::size_t begin, std::size_t step) {
    for (std::size_t i = begin; i < data.size(); i += step) {
      RadiusResult r = pgd_min_radius(clf, data.points[i], data.labels[i], cfg);
      p.records[i] = {i, data.labels[i], r.radius, r.flipped};
    }
  };
  const std::size_t nt = std::max<std::size_t>(1, std::min(cfg.threads, data.size()));
  if (nt == 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < nt; ++t) pool.emplace_back(work, t, nt);
  }
  for (const auto& r : p.records) p.sorted_radii.push_back(r.radius);
  std::sort(p.sorted_radii.begin(), p.sorted_radii.end());
  for (int q : {10, 25, 50, 75, 90}) p.quantiles[q] = quantile_linear(p.sorted_radii, q / 100.0);
  return p;
}

inline std::string margin_csv(const MarginProfile& p) {
  std::string s = "point_index,label,min_radius,flipped\n";
  for (const auto& r : p.records)
    s += std::to_string(r.index) + "," + std::to_string(r.label) + "," + detail::fmt17(r.radius) + "," +
         (r.flipped ? "1" : "0") + "\n";
  return s;
}

struct BBox {
  double xmin = -1, xmax = 1, ymin = -1, ymax = 1;
};

inline BBox bbox_of(const Dataset& d, double pad = 0.5) {
  BBox b{kInf, -kInf, kInf, -kInf};
  for (const auto& x : d.points) {
    b.xmin = std::min(b.xmin, x[0]);
    b.xmax = std::max(b.xmax, x[0]);
    b.ymin = std::min(b.ymin, x[1]);
    b.ymax = std::max(b.ymax, x[1]);
  }
  b.xmin -= pad;
  b.xmax += pad;
  b.ymin -= pad;
  b.ymax += pad;
  return b;
}

struct Raster {
  BBox box;
  std::size_t nx = 0, ny = 0;
  std::vector<int> labels;  // row-major, row = y index
  std::vector<int> point_labels;
  Vector point_margins;     // distance to the nearest cell center of the other label
  double model_margin = kInf;

  double cx(std::size_t i) const { return box.xmin + (i + 0.5) * (box.xmax - box.xmin) / nx; }
  double cy(std::size_t j) const { return box.ymin + (j + 0.5) * (box.ymax - box.ymin) / ny; }
  int at(std::size_t i, std::size_t j) const { return labels[j * nx + i]; }
  double cell_diagonal() const { return std::hypot((box.xmax - box.xmin) / nx, (box.ymax - box.ymin) / ny); }
};

inline Raster boundary_raster(const ScalarClassifier& clf, const BBox& box, std::size_t nx, std::size_t ny,
                              const Dataset* data = nullptr) {
  if (clf.net.input_dim() != 2) throw ShapeError("boundary_raster needs 2-D input");
  if (nx == 0 || ny == 0) throw ContractError("resolution must be positive");
  if (!(box.xmax > box.xmin) || !(box.ymax > box.ymin)) throw ContractError("empty bounding box");
  Raster r;
  r.box = box;
  r.nx = nx;
  r.ny = ny;
  r.labels.resize(nx * ny);
  for (std::size_t j = 0; j < ny; ++j)
    for (std::size_t i = 0; i < nx; ++i) {
      const double p[2] = {r.cx(i), r.cy(j)};
      r.labels[j * nx + i] = clf.predict(p);
    }
  if (!data) return r;
  for (const auto& x : data->points) {
    const int lab = clf.predict(x);
    double best = kInf;
    for (std::size_t j = 0; j < ny; ++j)
      for (std::size_t i = 0; i < nx; ++i)
        if (r.labels[j * nx + i] != lab) best = std::min(best, std::hypot(r.cx(i) - x[0], r.cy(j) - x[1]));
    r.point_labels.push_back(lab);
    r.point_margins.push_back(best);
    r.model_margin = std::min(r.model_margin, best);
  }
  return r;
}

inline Raster boundary_raster(const ScalarClassifier& clf, const BBox& box, std::size_t resolution,
                              const Dataset* data = nullptr) {
  return boundary_raster(clf, box, resolution, resolution, data);
}

inline std::string raster_text(const Raster& r) {
  std::string s = detail::fmt17(r.box.xmin) + "," + detail::fmt17(r.box.xmax) + "," + detail::fmt17(r.box.ymin) + "," +
                  detail::fmt17(r.box.ymax) + "," + std::to_string(r.nx) + "," + std::to_string(r.ny) + "\n";
  for (std::size_t j = 0; j < r.ny; ++j) {
    for (std::size_t i = 0; i < r.nx; ++i) {
      if (i) s += ',';
      s += std::to_string(r.at(i, j));
    }
    s += '\n';
  }
  return s;
}

struct ProbeRegion {
  Vector lo, hi;
};

inline ProbeRegion probe_region(const Dataset& d, double pad = 0.5) {
  ProbeRegion r{Vector(d.dim(), kInf), Vector(d.dim(), -kInf)};
  for (const auto& x : d.points)
    for (std::size_t i = 0; i < x.size(); ++i) {
      r.lo[i] = std::min(r.lo[i], x[i] - pad);
      r.hi[i] = std::max(r.hi[i], x[i] + pad);
    }
  return r;
}

struct LipschitzResult {
  double value = 0.0;
  std::string mode;
  std::size_t patterns = 0;
  std::size_t samples = 0;
};

// Exact: max spectral norm of W G V over activation patterns realized on a grid over the
// region, the training points, and (for 1-D/2-D input) every cell of the hyperplane arrangement.
inline LipschitzResult empirical_lipschitz_exact(const Network& net, const ProbeRegion& region,
                                                 const Dataset* data = nullptr, std::size_t grid = 200) {
  LipschitzResult r;
  r.mode = "exact";
  bool all_linear = true;
  for (std::size_t j = 0; j < net.layer_count(); ++j)
    all_linear = all_linear && net.layer(j).kind() == LayerKind::dense &&
                 net.layer(j).activation().kind == ActivationKind::identity;
  if (all_linear) {
    Matrix M = net.layer(0).weight_matrix();
    for (std::size_t j = 1; j < net.layer_count(); ++j) M = matmul(net.layer(j).weight_matrix(), M);
    r.value = singular_values(M)[0];
    r.patterns = 1;
    return r;
  }
  const TwoLayer t = TwoLayer::from(net);
  const std::size_t dim = t.V.cols();
  std::vector<Vector> probes;
  if (data) probes = data->points;
  if (dim <= 2) {
    auto extra = arrangement_samples(t.V, t.b);
    probes.insert(probes.end(), extra.begin(), extra.end());
  }
  if (dim <= 2 && region.lo.size() == dim) {
    const std::size_t ny = dim == 2 ? grid : 1;
    for (std::size_t j = 0; j < ny; ++j)
      for (std::size_t i = 0; i < grid; ++i) {
        Vector p(dim);
        p[0] = region.lo[0] + (i + 0.5) * (region.hi[0] - region.lo[0]) / grid;
        if (dim == 2) p[1] = region.lo[1] + (j + 0.5) * (region.hi[1] - region.lo[1]) / ny;
        probes.push_back(std::move(p));
      }
  }
  std::set<ActivationPattern> seen;
  for (const auto& p : probes) {
    ActivationPattern pat = t.pattern(p);
    if (!seen.insert(pat).second) continue;
    r.value = std::max(r.value, singular_values(t.jacobian(pat))[0]);
  }
  r.patterns = seen.size();
  r.samples = probes.size();
  return r;
}

// Sampling: max of ||f(x + h u) - f(x)|| / h over random x in the region, unit u, log-uniform h.
inline LipschitzResult empirical_lipschitz_sampling(const Network& net, const ProbeRegion& region, std::size_t samples,
                                                    std::uint64_t seed = 0) {
  if (region.lo.size() != net.input_dim()) throw ShapeError("probe region dimension mismatch");
  LipschitzResult r;
  r.mode = "sampling";
  r.samples = samples;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  std::normal_distribution<double> N(0.0, 1.0);
  double diam = 0.0;
  for (std::size_t i = 0; i < region.lo.size(); ++i) diam = std::max(diam, region.hi[i] - region.lo[i]);
  const double hmin = 1e-7 * std::max(diam, 1.0), hmax = 1e-2 * std::max(diam, 1.0);
  const std::size_t n = net.input_dim();
  for (std::size_t s = 0; s < samples; ++s) {
    Vector x(n), u(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = region.lo[i] + U(rng) * (region.hi[i] - region.lo[i]);
      u[i] = N(rng);
    }
    const double un = norm2(u);
    if (un == 0) continue;
    const double h = hmin * std::pow(hmax / hmin, U(rng));
    Vector y = axpy(h / un, u, x);
    r.value = std::max(r.value, norm2(sub(net.forward(y), net.forward(x))) / h);
  }
  return r;
}

inline nlohmann::json to_json(const MarginProfile& p) {
  nlohmann::json q;
  for (auto [k, v] : p.quantiles) q[std::to_string(k)] = v;
  return {{"n", p.records.size()}, {"eps_max", p.eps_max}, {"quantiles", q}};
}

inline nlohmann::json to_json(const LipschitzResult& r) {
  return {{"value", r.value}, {"mode", r.mode}, {"patterns", r.patterns}, {"samples", r.samples}};
}

}  // namespace pexcite
