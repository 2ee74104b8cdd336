// Acceptance report: one PASS/FAIL line per criterion. Exit status is 0 unless a check crashes;
// the lines themselves carry the verdicts.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pexcite/pexcite.hpp"

using namespace pexcite;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... a) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, a...);
  return buf;
}

double median(Vector v) {
  std::sort(v.begin(), v.end());
  return quantile_linear(v, 0.5);
}

// 1. inflated solver vs ridge closed form
Verdict ac1() {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> dn(1, 5), dm(1, 20);
  std::uniform_real_distribution<double> de(0.1, 2.0);
  std::normal_distribution<double> nd;
  double worst = 0.0;
  for (int inst = 0; inst < 50; ++inst) {
    const int n = dn(rng), m = dm(rng);
    const double eps = de(rng);
    Matrix X(m, n);
    Vector y(m);
    Eigen::MatrixXd EX(m, n);
    Eigen::VectorXd Ey(m);
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) EX(i, j) = X(i, j) = nd(rng);
      Ey(i) = y[i] = nd(rng);
    }
    Eigen::VectorXd ridge =
        (EX.transpose() * EX + eps * eps * Eigen::MatrixXd::Identity(n, n)).ldlt().solve(EX.transpose() * Ey);
    Vector w = solve_inflated(X, y, eps, 2.0).w;
    double num = 0.0, den = 0.0;
    for (int j = 0; j < n; ++j) {
      num += (w[j] - ridge(j)) * (w[j] - ridge(j));
      den += ridge(j) * ridge(j);
    }
    worst = std::max(worst, std::sqrt(num) / std::max(std::sqrt(den), 1e-300));
  }
  return {worst <= 1e-6, fmt("max relative error %.3g over 50 instances", worst)};
}

Dataset two_point_1d() {
  Dataset d;
  d.add({2.0}, 1);
  d.add({-1.0}, -1);
  return d;
}

// 2. direction of logistic GD with bias
Verdict ac2() {
  Network net = Network::mlp(1, {1}, Activation::identity());
  net.init_uniform(0);
  TrainConfig cfg;
  cfg.step_size = 1e-2;
  cfg.max_iters = 100000;
  cfg.grad_tol = 0.0;
  auto r = gd_train(net, two_point_1d(), LossKind::logistic, cfg);
  const Vector p = r.net.parameters();
  const double n = norm2(p);
  const double s5 = std::sqrt(5.0);
  const double err = std::hypot(p[0] / n - 2.0 / s5, p[1] / n + 1.0 / s5);
  return {err <= 1e-2, fmt("normalized (w,b)=(%.4f,%.4f), distance %.4f to (2,-1)/sqrt5", p[0] / n, p[1] / n, err)};
}

// 3. margin bound on the two-point instance
Verdict ac3() {
  Dataset d;
  d.add({2.0, 1.0}, 1);
  d.add({-1.0, 1.0}, -1);
  SvmResult svm = svm_hard_margin(d.class_points(1), d.class_points(-1));
  Network net = Network::mlp(2, {1}, Activation::identity());
  net.init_uniform(0);
  TrainConfig cfg;
  cfg.step_size = 1.0;
  cfg.max_iters = 1000000;
  cfg.grad_tol = 0.0;
  cfg.snapshot_every = cfg.log_every = cfg.max_iters;
  auto r = gd_train(net, d, LossKind::logistic, cfg);
  const Layer& l = r.net.layer(0);
  // bound at the limit point of logistic GD (augmented max-margin solution)
  AugmentedSvm lim = augmented_svm(d.class_points(1), d.class_points(-1));
  const double bound = thm2_bound(lim.w, lim.b, d).bound;
  const double m = thm2_bound(l.weights(), l.bias()[0], d).geometric_margin;
  const bool ok = std::abs(svm.gamma_opt - 1.5) <= 1e-3 && m <= bound + 1e-2 && m >= 0.98 * bound;
  return {ok, fmt("gamma_opt %.6f, bound %.6f, trained margin %.6f (ratio %.4f)", svm.gamma_opt, bound, m, m / bound)};
}

// 4. rank collapse in a 3-layer linear net with weight decay
Verdict ac4() {
  int good = 0;
  std::string detail;
  for (int seed = 0; seed < 5; ++seed) {
    Dataset d = generate("blobs", {{"n", 40}, {"sigma", 0.3}}, 100 + seed);
    std::vector<Layer> ls = {Layer::dense(2, 4, Activation::identity(), false),
                             Layer::dense(4, 4, Activation::identity(), false),
                             Layer::dense(4, 1, Activation::identity(), false)};
    Network net(2, ls);
    net.init_uniform(seed);
    TrainConfig cfg;
    cfg.step_size = 0.1;
    cfg.max_iters = 2000000;
    cfg.grad_tol = 1e-9;
    cfg.weight_decay = 1e-3;
    cfg.snapshot_every = cfg.log_every = cfg.max_iters;
    auto r = gd_train(net, d, LossKind::logistic, cfg);
    RankProfile rp = rank_profile(weight_matrices(r.net));
    double worst = 0.0;
    for (const auto& lr : rp.layers)
      worst = std::max(worst, lr.singular_values.size() > 1 ? lr.singular_values[1] / lr.singular_values[0] : 0.0);
    const bool ok = r.final_grad_norm <= 1e-9 && worst <= 1e-3;
    good += ok;
    detail += fmt(" [seed %d: grad %.2g, max s2/s1 %.2g, %zu iters]", seed, r.final_grad_norm, worst, r.iterations);
  }
  return {good == 5, fmt("%d/5 seeds;", good) + detail};
}

ScalarClassifier se_classifier(const Network& net, const Dataset& d) { return ScalarClassifier::squared_error(net, d); }

// 5. squared-error vs cross-entropy grid margin on three clusters
Verdict ac5() {
  Dataset d = generate("three_cluster", nlohmann::json::object(), 0);
  const BBox box = bbox_of(d, 1.0);
  int wins = 0;
  std::string detail;
  for (int seed : {1, 21, 41, 61, 81, 101}) {
    Network net = Network::mlp(2, {16, 1}, Activation::relu());
    net.init_uniform(seed);
    TrainConfig cfg;
    cfg.step_size = 0.002;
    cfg.max_iters = 20000;
    cfg.grad_tol = 0.0;
    auto se = gd_train(net, d, LossKind::squared_error, cfg);
    auto ce = gd_train(net, d, LossKind::logistic, cfg);
    const double mse = boundary_raster(se_classifier(se.net, d), box, 200, &d).model_margin;
    const double mce = boundary_raster(ScalarClassifier::logistic(ce.net), box, 200, &d).model_margin;
    wins += mse > mce;
    detail += fmt(" [seed %d: se %.3f ce %.3f]", seed, mse, mce);
  }
  return {wins >= 5, fmt("squared error wider in %d/6 seeds;", wins) + detail};
}

struct ConvergedRun {
  Network net;
  Dataset data;
  double delta;
};

std::vector<ConvergedRun>& converged_runs() {
  static std::vector<ConvergedRun> runs;
  return runs;
}

// 6. Lipschitz of converged squared-error nets against the bound
Verdict ac6() {
  auto& runs = converged_runs();
  runs.clear();
  const double delta = 0.01;
  std::size_t tried = 0;
  for (std::uint64_t seed = 0; runs.size() < 20 && seed < 400; ++seed) {
    ++tried;
    Dataset d = generate("blobs", {{"n", 20}, {"sigma", 0.5}}, 1000 + seed);
    std::vector<Layer> ls = {Layer::dense(2, 4, Activation::relu()), Layer::dense(4, 1, Activation::identity(), false)};
    Network net(2, ls);
    net.init_uniform(seed);
    TrainConfig cfg;
    cfg.step_size = delta;
    cfg.max_iters = 200000;
    cfg.grad_tol = 1e-9;
    cfg.snapshot_every = cfg.log_every = cfg.max_iters;
    TrainResult r;
    try {
      r = gd_train(net, d, LossKind::squared_error, cfg);
    } catch (const DivergenceError&) {
      continue;
    }
    if (r.stop != StopReason::grad_tol) continue;
    Thm1Report t = thm1_bound(r.net, d, delta);
    if (!t.defined) continue;
    runs.push_back({r.net, d, delta});
  }
  int ok = 0;
  double worst_ratio = 0.0;
  for (const auto& run : runs) {
    Thm1Report t = thm1_bound(run.net, run.data, run.delta);
    LipschitzResult L = empirical_lipschitz_exact(run.net, probe_region(run.data, 1.0), &run.data);
    ok += L.value <= t.bound;
    worst_ratio = std::max(worst_ratio, L.value / t.bound);
  }
  return {runs.size() == 20 && ok == 20,
          fmt("%d/%zu runs within bound (%zu seeds tried), max L/bound %.3g", ok, runs.size(), tried, worst_ratio)};
}

// 7. stability of the same runs
Verdict ac7() {
  const auto& runs = converged_runs();
  int ok = 0;
  double w1 = 0.0, w4 = 0.0;
  for (const auto& run : runs) {
    StabilityReport s = stability_check(run.net, run.data, run.delta);
    w1 = std::max(w1, s.lambda_f1);
    w4 = std::max(w4, s.lambda_f4);
    ok += s.lambda_f1 <= 2 + 1e-6 && s.lambda_f4 <= 2 + 1e-6;
  }
  return {!runs.empty() && ok == static_cast<int>(runs.size()),
          fmt("%d/%zu runs stable, max lambda(f1) %.4f, max lambda(f4) %.4f", ok, runs.size(), w1, w4)};
}

// Blob scale chosen so the excitation radii are a visible fraction of the class gap.
struct PeSetup {
  nlohmann::json blobs = {{"n", 100}, {"sigma", 0.1}, {"centers", {{0.2, 0.0}, {-0.2, 0.0}}}};
  std::vector<std::size_t> widths = {16, 1};
  double step = 0.05;
  std::size_t iters = 5000;
  AttackConfig attack{.eps_max = 2.0};
};

TrainResult pe_run(const PeSetup& s, const Dataset& train, const PerturbationSet& D, std::uint64_t seed) {
  Network net = Network::mlp(2, s.widths, Activation::relu());
  net.init_uniform(seed);
  TrainConfig cfg;
  cfg.step_size = s.step;
  cfg.max_iters = s.iters;
  cfg.seed = seed;
  cfg.batch_size = 1;
  return pe_train(net, train, D, cfg);
}

Vector radii_of(const MarginProfile& p) {
  Vector v;
  for (const auto& r : p.records) v.push_back(r.radius);
  return v;
}

// 8. held-out margin vs excitation radius
Verdict ac8() {
  PeSetup s;
  const Vector radii = {0.0, 0.005, 0.02};
  std::vector<Vector> med(5);
  std::string detail;
  for (int seed = 0; seed < 5; ++seed) {
    Dataset train = generate("blobs", s.blobs, 200 + seed), test = generate("blobs", s.blobs, 300 + seed);
    for (double r : radii) {
      auto res = pe_run(s, train, PerturbationSet::uniform(2, r), seed);
      auto clf = se_classifier(res.net, train);
      med[seed].push_back(margin_profile(clf, test, s.attack).median());
    }
    detail += fmt(" [seed %d: %.4f %.4f %.4f]", seed, med[seed][0], med[seed][1], med[seed][2]);
  }
  Vector avg(radii.size(), 0.0);
  for (const auto& m : med)
    for (std::size_t k = 0; k < radii.size(); ++k) avg[k] += m[k] / 5.0;
  const bool nondecreasing = avg[0] <= avg[1] && avg[1] <= avg[2];
  int strict = 0;
  for (const auto& m : med) strict += m[2] > m[0];
  return {nondecreasing && strict >= 4,
          fmt("seed-mean medians %.4f %.4f %.4f, strict increase in %d/5;", avg[0], avg[1], avg[2], strict) + detail};
}

// 9. train/test margin gap: all-layer vs input-only excitation
Verdict ac9() {
  PeSetup s;
  int wins = 0;
  std::string detail;
  for (int seed = 0; seed < 5; ++seed) {
    Dataset train = generate("blobs", s.blobs, 200 + seed), test = generate("blobs", s.blobs, 300 + seed);
    double gap[2];
    int k = 0;
    for (auto D : {PerturbationSet::uniform(2, 0.02), PerturbationSet::input_only(2, 0.02)}) {
      auto res = pe_run(s, train, D, seed);
      auto clf = se_classifier(res.net, train);
      gap[k++] = std::abs(margin_profile(clf, train, s.attack).median() - margin_profile(clf, test, s.attack).median());
    }
    wins += gap[0] < gap[1];
    detail += fmt(" [seed %d: all %.4f input %.4f]", seed, gap[0], gap[1]);
  }
  return {wins >= 4, fmt("all-layer gap smaller in %d/5 seeds;", wins) + detail};
}

// 10. analytic gradients vs central differences
Verdict ac10() {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> nd;
  auto rel = [](const Vector& a, const Vector& b) {
    return norm2(sub(a, b)) / std::max({norm2(a), norm2(b), 1e-12});
  };
  auto randv = [&](std::size_t n) {
    Vector v(n);
    for (auto& x : v) x = nd(rng);
    return v;
  };
  double worst[4] = {0, 0, 0, 0};
  const char* names[4] = {"dense", "conv", "perturbation", "loss"};
  for (int inst = 0; inst < 20; ++inst) {
    for (int kind = 0; kind < 2; ++kind) {
      Network net = kind == 0 ? Network::mlp(3, {5, 4, 2}, Activation::leaky_relu(0.1), Activation::identity())
                              : Network(12, {Layer::conv({1, 3, 4, 2, 2, 2}, Activation::leaky_relu(0.1)),
                                             Layer::dense(2 * 2 * 3, 2, Activation::identity())});
      net.init_uniform(1000 + inst);
      Vector x = randv(net.input_dim());
      Perturbation d = net.zero_perturbation();
      for (auto& dj : d) dj = scale(0.1, randv(dj.size()));
      Vector up = randv(net.output_dim());
      Gradients g = net.gradients(x, d, up);
      auto value = [&](const Network& n2, const Perturbation& d2) { return dot(up, n2.forward_perturbed(x, d2)); };
      const double h = 1e-6;
      Vector theta = net.parameters(), fd(theta.size());
      for (std::size_t k = 0; k < theta.size(); ++k) {
        Network a = net, b = net;
        Vector tp = theta, tm = theta;
        tp[k] += h;
        tm[k] -= h;
        a.set_parameters(tp);
        b.set_parameters(tm);
        fd[k] = (value(a, d) - value(b, d)) / (2 * h);
      }
      worst[kind] = std::max(worst[kind], rel(g.params, fd));
      Vector ga, fa;
      for (std::size_t j = 0; j < d.size(); ++j)
        for (std::size_t i = 0; i < d[j].size(); ++i) {
          Perturbation dp = d, dm = d;
          dp[j][i] += h;
          dm[j][i] -= h;
          fa.push_back((value(net, dp) - value(net, dm)) / (2 * h));
          ga.push_back(g.perturbations[j][i]);
        }
      worst[2] = std::max(worst[2], rel(ga, fa));
    }
    // both losses through a scalar net
    Network net = Network::mlp(2, {4, 1}, Activation::leaky_relu(0.1));
    net.init_uniform(2000 + inst);
    Dataset data;
    for (int i = 0; i < 6; ++i) data.add(randv(2), i % 2 ? 1 : -1);
    for (LossKind lk : {LossKind::squared_error, LossKind::logistic}) {
      const auto tg = regression_targets(data);
      Objective o = full_batch_objective(net, data, lk, tg, 1e-2);
      Vector theta = net.parameters(), fd(theta.size());
      const double h = 1e-6;
      for (std::size_t k = 0; k < theta.size(); ++k) {
        Network a = net, b = net;
        Vector tp = theta, tm = theta;
        tp[k] += h;
        tm[k] -= h;
        a.set_parameters(tp);
        b.set_parameters(tm);
        fd[k] = (full_batch_objective(a, data, lk, tg, 1e-2).value - full_batch_objective(b, data, lk, tg, 1e-2).value) /
                (2 * h);
      }
      worst[3] = std::max(worst[3], rel(o.grad, fd));
    }
  }
  bool ok = true;
  std::string detail;
  for (int k = 0; k < 4; ++k) {
    ok = ok && worst[k] <= 1e-5;
    detail += fmt(" %s %.2g", names[k], worst[k]);
  }
  return {ok, "max relative error over 20 instances each:" + detail};
}

// 11. attack calibration on linear classifiers
Verdict ac11() {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> nd;
  std::uniform_int_distribution<int> dn(1, 10);
  int ok = 0;
  double worst = 0.0;
  for (int inst = 0; inst < 100; ++inst) {
    const int n = dn(rng);
    Network net = Network::mlp(n, {1}, Activation::identity());
    Vector w(n), x(n);
    for (auto& v : w) v = nd(rng);
    for (auto& v : x) v = nd(rng);
    const double b = nd(rng);
    net.layer(0).weights() = w;
    net.layer(0).bias() = {b};
    const double s = dot(w, x) + b;
    const double truth = std::abs(s) / pnorm(w, 1.0);
    AttackConfig ac;
    ac.eps_max = 2.0 * truth + 0.5;
    ac.seed = inst;
    RadiusResult r = pgd_min_radius(ScalarClassifier::logistic(net), x, s > 0 ? 1 : -1, ac);
    const double err = std::abs(r.radius - truth) / truth;
    worst = std::max(worst, err);
    ok += r.flipped && err <= 0.05;
  }
  return {ok == 100, fmt("%d/100 within 5%%, max relative error %.3g", ok, worst)};
}

// 12. norm balance under small-step CE training
Verdict ac12() {
  Dataset d = generate("blobs", {{"n", 10}, {"sigma", 0.3}}, 12);
  std::vector<Layer> ls = {Layer::dense(2, 8, Activation::relu()), Layer::dense(8, 1, Activation::identity(), false)};
  Network net(2, ls);
  net.init_uniform(12);
  auto balance = [](const Network& n) {
    TwoLayer t = TwoLayer::from(n);
    const double w = frobenius_norm(t.W), v = frobenius_norm(t.V), b = norm2(t.b);
    return w * w - v * v - b * b;
  };
  TrainConfig cfg;
  cfg.step_size = 1e-4;
  cfg.max_iters = 10000;
  cfg.grad_tol = 0.0;
  auto r = gd_train(net, d, LossKind::logistic, cfg);
  const double drift = std::abs(balance(r.net) - balance(net));
  return {drift <= 1e-3, fmt("drift %.3g (initial balance %.4f)", drift, balance(net))};
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    int id;
    const char* name;
    double limit_s;
    std::function<Verdict()> run;
  };
  const std::vector<Criterion> all = {
      {1, "inflation/regularization equivalence", 10, ac1},
      {2, "logistic direction convergence", 5, ac2},
      {3, "two-point margin bound", 10, ac3},
      {4, "linear-net rank collapse", 60, ac4},
      {5, "squared-error vs cross-entropy margin", 300, ac5},
      {6, "Lipschitz within bound", 300, ac6},
      {7, "equilibrium stability", 300, ac7},
      {8, "excitation radius raises held-out margin", 600, ac8},
      {9, "all-layer excitation narrows train/test gap", 600, ac9},
      {10, "gradient integrity", 30, ac10},
      {11, "attack calibration", 30, ac11},
      {12, "norm balance", 30, ac12},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int passed = 0, run = 0;
  for (const auto& c : all) {
    if (!only.empty() && !only.count(c.id)) continue;
    if (c.id == 7 && converged_runs().empty()) ac6();
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs <= c.limit_s;
    const bool pass = v.pass && in_time;
    ++run;
    passed += pass;
    std::printf("AC%-2d %s  %s: %s (%.1f s, limit %.0f s%s)\n", c.id, pass ? "PASS" : "FAIL", c.name, v.detail.c_str(),
                secs, c.limit_s, in_time ? "" : ", over time");
    std::fflush(stdout);
  }
  std::printf("%d/%d criteria passed\n", passed, run);
  return 0;
}
