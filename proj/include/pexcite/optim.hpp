#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "pexcite/data.hpp"
#include "pexcite/errors.hpp"
#include "pexcite/linalg.hpp"
#include "pexcite/net.hpp"
#include "pexcite/trajectory.hpp"

namespace pexcite {

inline double squared_error(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size()) throw ShapeError("squared_error: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - target[i]) * (pred[i] - target[i]);
  return 0.5 * s;
}

inline Vector squared_error_grad(std::span<const double> pred, std::span<const double> target) {
  return sub(pred, target);
}

// log(1 + e^z) without overflow
inline double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  double e = std::exp(z);
  return e / (1.0 + e);
}

inline double logistic_loss(double score, int cls) {
  if (cls != 1 && cls != -1) throw ContractError("logistic_loss: class must be +1 or -1");
  return softplus(-cls * score);
}

inline double logistic_grad(double score, int cls) {
  if (cls != 1 && cls != -1) throw ContractError("logistic_grad: class must be +1 or -1");
  return -cls * sigmoid(-cls * score);
}

enum class LossKind { squared_error, logistic };

inline LossKind parse_loss(const std::string& s) {
  if (s == "se" || s == "squared_error") return LossKind::squared_error;
  if (s == "ce" || s == "logistic" || s == "cross_entropy") return LossKind::logistic;
  throw ContractError("unknown loss: " + s);
}

struct TrainConfig {
  double step_size = 0.01;
  double momentum = 0.0;
  std::size_t max_iters = 1000;
  std::size_t batch_size = 1;
  double grad_tol = 1e-10;
  std::uint64_t seed = 0;
  double weight_decay = 0.0;      // adds mu * ||W||_F^2 per weight array (biases excluded)
  std::size_t snapshot_every = 0;  // 0: about 100 snapshots
  std::size_t log_every = 0;       // 0: about 100 records
  bool stop_on_direction = false;
  std::size_t inner_steps = 20;

  void validate() const {
    if (!(step_size > 0)) throw ContractError("step size must be positive");
    if (!(momentum >= 0 && momentum < 1)) throw ContractError("momentum must lie in [0,1)");
    if (batch_size == 0) throw ContractError("batch size must be positive");
  }
  std::size_t snap_interval() const { return snapshot_every ? snapshot_every : std::max<std::size_t>(1, max_iters / 100); }
  std::size_t log_interval() const { return log_every ? log_every : std::max<std::size_t>(1, max_iters / 100); }
};

// Squared-error targets for binary labels; Corollary 1 uses 0 for the +1 class and 1 for the -1 class.
struct TargetPair {
  double positive = 0.0;
  double negative = 1.0;
};

inline std::vector<Vector> regression_targets(const Dataset& d, TargetPair tp = {}) {
  if (!d.targets.empty()) return d.targets;
  std::vector<Vector> t;
  for (int l : d.labels) {
    if (l != 1 && l != -1) throw ContractError("binary targets need labels +1/-1");
    t.push_back({l == 1 ? tp.positive : tp.negative});
  }
  return t;
}

enum class StopReason { max_iters, grad_tol, direction };

struct TrainResult {
  Network net;
  Trajectory trajectory;
  std::size_t iterations = 0;
  double final_loss = 0.0;
  double final_grad_norm = 0.0;
  StopReason stop = StopReason::max_iters;
};

inline std::vector<std::size_t> layer_param_sizes(const Network& net) {
  std::vector<std::size_t> s;
  for (const auto& l : net.layers()) s.push_back(l.param_count());
  return s;
}

struct Objective {
  double value = 0.0;
  Vector grad;
};

// Sum over samples (Eq. (1) convention) plus weight decay.
inline Objective full_batch_objective(const Network& net, const Dataset& data, LossKind loss,
                                      const std::vector<Vector>& targets, double weight_decay) {
  Objective o;
  Gradients g;
  g.params.assign(net.param_count(), 0.0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    ForwardTrace t = net.trace(data.points[i]);
    const Vector& out = t.h.back();
    Vector up;
    if (loss == LossKind::squared_error) {
      o.value += squared_error(out, targets[i]);
      up = squared_error_grad(out, targets[i]);
    } else {
      if (out.size() != 1) throw ShapeError("logistic loss needs a scalar output");
      o.value += logistic_loss(out[0], data.labels[i]);
      up = {logistic_grad(out[0], data.labels[i])};
    }
    net.accumulate_gradients(t, up, g);
  }
  if (weight_decay > 0) {
    std::size_t k = 0;
    for (const auto& l : net.layers()) {
      for (double w : l.weights()) {
        o.value += weight_decay * w * w;
        g.params[k++] += 2.0 * weight_decay * w;
      }
      if (l.use_bias()) k += l.bias().size();
    }
  }
  o.grad = std::move(g.params);
  return o;
}

namespace detail {

inline void check_finite(double v, const Vector& theta, std::size_t it) {
  if (!std::isfinite(v)) throw DivergenceError("non-finite loss", it);
  double n = norm2(theta);
  if (!std::isfinite(n) || n > 1e100) throw DivergenceError("parameter norm blew up", it);
}

inline void momentum_step(Vector& theta, Vector& vel, const Vector& g, double eta, double gamma) {
  for (std::size_t k = 0; k < theta.size(); ++k) {
    vel[k] = gamma * vel[k] + (1.0 - gamma) * g[k];
    theta[k] -= eta * vel[k];
  }
}

}  // namespace detail

// Full-batch gradient descent with fixed step.
inline TrainResult gd_train(Network net, const Dataset& data, LossKind loss, const TrainConfig& cfg,
                            TargetPair tp = {}) {
  cfg.validate();
  const auto targets = loss == LossKind::squared_error ? regression_targets(data, tp) : std::vector<Vector>{};
  TrainResult r;
  r.trajectory.layer_sizes = layer_param_sizes(net);
  Vector theta = net.parameters();
  Vector vel(theta.size(), 0.0);
  const std::size_t snap = cfg.snap_interval(), logi = cfg.log_interval();
  std::size_t it = 0;
  for (;; ++it) {
    net.set_parameters(theta);
    Objective o = full_batch_objective(net, data, loss, targets, cfg.weight_decay);
    detail::check_finite(o.value, theta, it);
    const double gn = norm2(o.grad);
    r.final_loss = o.value;
    r.final_grad_norm = gn;
    const bool last = it == cfg.max_iters || gn <= cfg.grad_tol;
    if (it % logi == 0 || last) r.trajectory.curve.push_back({it, o.value, norm2(theta), gn});
    if (it % snap == 0 || last) {
      r.trajectory.snapshots.push_back({it, theta});
      if (cfg.stop_on_direction && !last && direction_convergence(r.trajectory).converged()) {
        r.stop = StopReason::direction;
        break;
      }
    }
    if (gn <= cfg.grad_tol) {
      r.stop = StopReason::grad_tol;
      break;
    }
    if (it == cfg.max_iters) break;
    detail::momentum_step(theta, vel, o.grad, cfg.step_size, cfg.momentum);
  }
  r.iterations = it;
  r.net = std::move(net);
  return r;
}

inline std::vector<std::size_t> sample_batch(std::mt19937_64& rng, std::size_t n, std::size_t b) {
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::vector<std::size_t> idx(b);
  for (auto& i : idx) i = pick(rng);
  return idx;
}

inline double clean_mse(const Network& net, const Dataset& data, const std::vector<Vector>& targets) {
  double s = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) s += squared_error(net.forward(data.points[i]), targets[i]);
  return data.size() ? s / data.size() : 0.0;
}

// Momentum SGD on the squared error (1/2 convention), batch-averaged.
inline TrainResult sgd_train(Network net, const Dataset& data, const TrainConfig& cfg, TargetPair tp = {}) {
  cfg.validate();
  if (data.size() == 0) throw ContractError("empty dataset");
  const auto targets = regression_targets(data, tp);
  TrainResult r;
  r.trajectory.layer_sizes = layer_param_sizes(net);
  std::mt19937_64 rng(cfg.seed);
  Vector theta = net.parameters(), vel(theta.size(), 0.0);
  for (std::size_t it = 0; it < cfg.max_iters; ++it) {
    auto batch = sample_batch(rng, data.size(), cfg.batch_size);
    Gradients g;
    g.params.assign(theta.size(), 0.0);
    for (auto i : batch) {
      ForwardTrace t = net.trace(data.points[i]);
      net.accumulate_gradients(t, squared_error_grad(t.h.back(), targets[i]), g);
    }
    if (cfg.batch_size > 1)
      for (auto& v : g.params) v /= static_cast<double>(cfg.batch_size);
    detail::momentum_step(theta, vel, g.params, cfg.step_size, cfg.momentum);
    net.set_parameters(theta);
    if ((it + 1) % cfg.log_interval() == 0 || it + 1 == cfg.max_iters) {
      double l = clean_mse(net, data, targets);
      detail::check_finite(l, theta, it + 1);
      r.trajectory.curve.push_back({it + 1, l, norm2(theta), 0.0});
    }
    if ((it + 1) % cfg.snap_interval() == 0 || it + 1 == cfg.max_iters) r.trajectory.snapshots.push_back({it + 1, theta});
  }
  r.iterations = cfg.max_iters;
  r.final_loss = r.trajectory.curve.empty() ? 0.0 : r.trajectory.curve.back().loss;
  r.net = std::move(net);
  return r;
}

enum class Direction { max, min };

struct Extremum {
  Perturbation d;
  double value = 0.0;
};

// Projected sign-gradient search over the per-layer l-inf boxes. Returns the best iterate.
inline Extremum inner_extremize(const Network& net, std::span<const double> x, const PerturbationSet& D, Direction dir,
                                std::size_t steps = 20, const Vector* output_weights = nullptr) {
  if (D.radii.size() != net.layer_count()) throw ShapeError("perturbation set needs one radius per layer");
  for (double r : D.radii)
    if (r < 0) throw ContractError("radii must be nonnegative");
  Vector up = output_weights ? *output_weights : Vector{1.0};
  if (up.size() != net.output_dim()) throw ShapeError("inner_extremize: scalar output or output weights required");
  const double sgn = dir == Direction::max ? 1.0 : -1.0;
  Extremum best{net.zero_perturbation(), 0.0};
  Perturbation d = best.d;
  auto value_of = [&](const ForwardTrace& t) { return dot(up, t.h.back()); };
  ForwardTrace t = net.trace(x, &d);
  best.value = value_of(t);
  if (D.all_zero() || steps == 0) return best;
  const double s = 2.0 / static_cast<double>(steps);
  Gradients g;
  for (std::size_t k = 0; k < steps; ++k) {
    g.params.assign(net.param_count(), 0.0);
    net.accumulate_gradients(t, up, g);
    for (std::size_t j = 0; j < d.size(); ++j) {
      const double r = D.radii[j];
      if (r == 0.0) continue;
      for (std::size_t i = 0; i < d[j].size(); ++i) {
        const double gi = g.perturbations[j][i];
        const double sg = gi > 0 ? 1.0 : (gi < 0 ? -1.0 : 0.0);
        d[j][i] = std::clamp(d[j][i] + sgn * s * r * sg, -r, r);
      }
    }
    t = net.trace(x, &d);
    const double v = value_of(t);
    if (sgn * v > sgn * best.value) best = {d, v};
  }
  return best;
}

// Algorithm 1. The per-sample objective is (f(x;d1) - y)^2 + (f(x;d2) - y)^2.
inline TrainResult pe_train(Network net, const Dataset& data, const PerturbationSet& D, const TrainConfig& cfg,
                            TargetPair tp = {}) {
  cfg.validate();
  if (net.output_dim() != 1) throw ShapeError("pe_train needs a scalar-output network");
  if (data.size() == 0) throw ContractError("empty dataset");
  const auto targets = regression_targets(data, tp);
  TrainResult r;
  r.trajectory.layer_sizes = layer_param_sizes(net);
  std::mt19937_64 rng(cfg.seed);
  Vector theta = net.parameters(), vel(theta.size(), 0.0);
  for (std::size_t it = 0; it < cfg.max_iters; ++it) {
    auto batch = sample_batch(rng, data.size(), cfg.batch_size);
    Gradients g, gi;
    g.params.assign(theta.size(), 0.0);
    for (auto i : batch) {
      const auto& x = data.points[i];
      const double y = targets[i][0];
      Extremum d1 = inner_extremize(net, x, D, Direction::max, cfg.inner_steps);
      Extremum d2 = inner_extremize(net, x, D, Direction::min, cfg.inner_steps);
      // per-sample sum first so radii 0 reproduces sgd_train bit for bit
      gi.params.assign(theta.size(), 0.0);
      ForwardTrace t1 = net.trace(x, &d1.d);
      net.accumulate_gradients(t1, Vector{2.0 * (t1.h.back()[0] - y)}, gi);
      ForwardTrace t2 = net.trace(x, &d2.d);
      net.accumulate_gradients(t2, Vector{2.0 * (t2.h.back()[0] - y)}, gi);
      for (std::size_t k = 0; k < theta.size(); ++k) g.params[k] += gi.params[k];
    }
    if (cfg.batch_size > 1)
      for (auto& v : g.params) v /= static_cast<double>(cfg.batch_size);
    detail::momentum_step(theta, vel, g.params, cfg.step_size, cfg.momentum);
    net.set_parameters(theta);
    if ((it + 1) % cfg.log_interval() == 0 || it + 1 == cfg.max_iters) {
      double l = clean_mse(net, data, targets);
      detail::check_finite(l, theta, it + 1);
      r.trajectory.curve.push_back({it + 1, l, norm2(theta), 0.0});
    }
    if ((it + 1) % cfg.snap_interval() == 0 || it + 1 == cfg.max_iters) r.trajectory.snapshots.push_back({it + 1, theta});
  }
  r.iterations = cfg.max_iters;
  r.final_loss = r.trajectory.curve.empty() ? 0.0 : r.trajectory.curve.back().loss;
  r.net = std::move(net);
  return r;
}

struct TargetCode {
  std::vector<Vector> codes;
};

// Centered regular simplex with unit edges, via Helmert coordinates.
inline TargetCode target_codes(std::size_t m) {
  if (m < 2) throw ContractError("target_codes needs m >= 2");
  TargetCode tc;
  tc.codes.assign(m, Vector(m - 1, 0.0));
  for (std::size_t k = 1; k < m; ++k) {
    const double nk = std::sqrt(static_cast<double>(k * (k + 1)));
    for (std::size_t i = 0; i < m; ++i) {
      double h = i < k ? 1.0 : (i == k ? -static_cast<double>(k) : 0.0);
      tc.codes[i][k - 1] = -h / nk / std::sqrt(2.0);
    }
  }
  return tc;
}

struct MultiExcitation {
  Vector v;
  Perturbation d1, d2;
  std::vector<double> objective;  // v^T (f(x;d1) - f(x)) after each round
  bool tie = false;
};

inline MultiExcitation mc_excitation(const Network& net, std::span<const double> x, const PerturbationSet& D,
                                     std::size_t rounds = 5, std::size_t inner_steps = 20) {
  const std::size_t m = net.output_dim();
  if (m < 2) throw ShapeError("mc_excitation needs a vector-valued network");
  const Vector f0 = net.forward(x);
  MultiExcitation r;
  r.v.assign(m, 0.0);
  r.v[0] = 1.0;
  r.d1 = net.zero_perturbation();
  auto gain = [&](const Vector& v, const Perturbation& d) { return dot(v, sub(net.forward_perturbed(x, d), f0)); };
  double current = gain(r.v, r.d1);
  for (std::size_t k = 0; k < std::max<std::size_t>(rounds, 1); ++k) {
    Extremum e = inner_extremize(net, x, D, Direction::max, inner_steps, &r.v);
    double ge = gain(r.v, e.d);
    if (ge > current) r.d1 = e.d, current = ge;
    Vector delta = sub(net.forward_perturbed(x, r.d1), f0);
    const double n = norm2(delta);
    if (n == 0.0) {
      r.tie = true;
      r.objective.push_back(current);
      continue;
    }
    r.v = scale(1.0 / n, delta);
    current = n;
    r.objective.push_back(current);
  }
  if (r.tie && current == 0.0) {
    r.v.assign(m, 0.0);
    r.v[0] = 1.0;
  } else {
    r.tie = false;
  }
  r.d2 = inner_extremize(net, x, D, Direction::min, inner_steps, &r.v).d;
  return r;
}

// Multi-class Algorithm 1 with simplex target codes (labels 0..m-1).
inline TrainResult pe_train_multiclass(Network net, const Dataset& data, const PerturbationSet& D,
                                       const TrainConfig& cfg, std::size_t rounds = 3) {
  cfg.validate();
  std::size_t m = net.output_dim() + 1;
  TargetCode tc = target_codes(m);
  std::vector<Vector> targets;
  for (int l : data.labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= m) throw ContractError("multiclass labels must be 0..m-1");
    targets.push_back(tc.codes[l]);
  }
  TrainResult r;
  r.trajectory.layer_sizes = layer_param_sizes(net);
  std::mt19937_64 rng(cfg.seed);
  Vector theta = net.parameters(), vel(theta.size(), 0.0);
  for (std::size_t it = 0; it < cfg.max_iters; ++it) {
    auto batch = sample_batch(rng, data.size(), cfg.batch_size);
    Gradients g;
    g.params.assign(theta.size(), 0.0);
    for (auto i : batch) {
      const auto& x = data.points[i];
      MultiExcitation e = mc_excitation(net, x, D, rounds, cfg.inner_steps);
      for (const Perturbation* d : {&e.d1, &e.d2}) {
        ForwardTrace t = net.trace(x, d);
        net.accumulate_gradients(t, scale(2.0, sub(t.h.back(), targets[i])), g);
      }
    }
    if (cfg.batch_size > 1)
      for (auto& v : g.params) v /= static_cast<double>(cfg.batch_size);
    detail::momentum_step(theta, vel, g.params, cfg.step_size, cfg.momentum);
    net.set_parameters(theta);
    if ((it + 1) % cfg.log_interval() == 0 || it + 1 == cfg.max_iters) {
      double l = clean_mse(net, data, targets);
      detail::check_finite(l, theta, it + 1);
      r.trajectory.curve.push_back({it + 1, l, norm2(theta), 0.0});
    }
  }
  r.iterations = cfg.max_iters;
  r.net = std::move(net);
  return r;
}

}  // namespace pexcite
