#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "pexcite/data.hpp"
#include "pexcite/robust.hpp"

using namespace pexcite;

namespace {

ScalarClassifier linear(Vector w, double b) {
  Network net = Network::mlp(w.size(), {1}, Activation::identity());
  net.layer(0).weights() = std::move(w);
  net.layer(0).bias() = {b};
  return ScalarClassifier::logistic(std::move(net));
}

ScalarClassifier relu_net(std::uint64_t seed) {
  Network net = Network::mlp(2, {16, 1}, Activation::relu());
  net.init_uniform(seed);
  return ScalarClassifier::logistic(std::move(net));
}

Dataset labelled_by(const ScalarClassifier& clf, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ud(-1.0, 1.0);
  Dataset d;
  for (std::size_t i = 0; i < n; ++i) {
    Vector x{ud(rng), ud(rng)};
    d.add(x, clf.predict(x));
  }
  return d;
}

}  // namespace

TEST(MinRadius, LinearExample) {
  AttackConfig cfg;
  cfg.eps_max = 2.0;
  RadiusResult r = pgd_min_radius(linear({3, 4}, 0), Vector{1, 1}, 1, cfg);
  EXPECT_TRUE(r.flipped);
  EXPECT_NEAR(r.radius, 1.0, 0.05);
}

TEST(MinRadius, MisclassifiedIsZero) {
  RadiusResult r = pgd_min_radius(linear({3, 4}, 0), Vector{1, 1}, -1, AttackConfig{});
  EXPECT_EQ(r.radius, 0.0);
  EXPECT_TRUE(r.misclassified_at_zero);
}

TEST(MinRadius, BudgetBelowMarginDoesNotFlip) {
  AttackConfig cfg;
  cfg.eps_max = 0.5;
  RadiusResult r = pgd_min_radius(linear({3, 4}, 0), Vector{1, 1}, 1, cfg);
  EXPECT_FALSE(r.flipped);
  EXPECT_EQ(r.radius, 0.5);
  EXPECT_THROW(pgd_min_radius(linear({3, 4}, 0), Vector{1, 1}, 0, cfg), ContractError);
}

TEST(MinRadius, LinearProfileMatchesAnalyticFormula) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    Vector w{nd(rng), nd(rng)};
    const double b = 0.1 * nd(rng);
    ScalarClassifier clf = linear(w, b);
    Dataset d = labelled_by(clf, 20, seed + 100);
    AttackConfig cfg;
    cfg.eps_max = 2.0;
    MarginProfile p = margin_profile(clf, d, cfg);
    for (const auto& rec : p.records) {
      const double exact = std::abs(dot(w, d.points[rec.index]) + b) / pnorm(w, 1);
      if (exact >= cfg.eps_max) continue;
      EXPECT_TRUE(rec.flipped);
      EXPECT_NEAR(rec.radius, exact, 0.05 * exact + 1e-12) << "point " << rec.index;
    }
  }
}

TEST(MinRadius, LargerBudgetNeverIncreasesRadius) {
  ScalarClassifier clf = relu_net(3);
  Dataset d = labelled_by(clf, 30, 4);
  AttackConfig small, big;
  small.eps_max = 0.5;
  big.eps_max = 1.0;
  MarginProfile a = margin_profile(clf, d, small), b = margin_profile(clf, d, big);
  const double cell = big.eps_max / std::pow(2.0, big.bisect_iters);
  int compared = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!a.records[i].flipped) continue;  // radius is only the lower bound eps_max
    ++compared;
    EXPECT_TRUE(b.records[i].flipped);
    EXPECT_LE(b.records[i].radius, a.records[i].radius + cell) << "point " << i;
  }
  EXPECT_GT(compared, 5);
}

TEST(Profile, OrderInvariantAndDeterministic) {
  ScalarClassifier clf = relu_net(5);
  Dataset d = labelled_by(clf, 25, 6);
  AttackConfig cfg;
  cfg.eps_max = 1.0;
  MarginProfile a = margin_profile(clf, d, cfg);
  MarginProfile again = margin_profile(clf, d, cfg);
  cfg.threads = 3;
  MarginProfile threaded = margin_profile(clf, d, cfg);
  std::vector<std::size_t> perm(d.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(1);
  std::shuffle(perm.begin(), perm.end(), rng);
  MarginProfile shuffled = margin_profile(clf, d.subset(perm), cfg);
  EXPECT_EQ(a.sorted_radii, again.sorted_radii);
  EXPECT_EQ(a.sorted_radii, threaded.sorted_radii);
  EXPECT_EQ(a.sorted_radii, shuffled.sorted_radii);
  for (std::size_t k = 0; k < perm.size(); ++k) EXPECT_EQ(shuffled.records[k].radius, a.records[perm[k]].radius);
  EXPECT_EQ(a.quantiles, shuffled.quantiles);
}

TEST(Profile, HugeMarginsNeverFlip) {
  Dataset d;
  d.add({10, 0}, 1);
  d.add({-10, 0}, -1);
  d.add({12, 3}, 1);
  AttackConfig cfg;
  cfg.eps_max = 0.1;
  MarginProfile p = margin_profile(linear({1, 0}, 0), d, cfg);
  for (const auto& r : p.records) EXPECT_FALSE(r.flipped);
  EXPECT_EQ(p.cdf(1.0), 0.0);
}

TEST(Profile, QuantilesCdfAndCsv) {
  EXPECT_DOUBLE_EQ(quantile_linear({1, 2, 3, 4}, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(quantile_linear({1, 2, 3, 4}, 1.0), 4.0);
  EXPECT_DOUBLE_EQ(quantile_linear({}, 0.5), 0.0);
  MarginProfile p;
  p.records = {{0, 1, 0.1, true}, {1, -1, 0.3, true}, {2, 1, 0.5, false}};
  EXPECT_NEAR(p.cdf(0.2), 1.0 / 3, 1e-15);
  EXPECT_NEAR(p.cdf(0.5), 2.0 / 3, 1e-15);
  std::string csv = margin_csv(p);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "point_index,label,min_radius,flipped");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
}

TEST(Classifier, SquaredErrorThresholdSitsInGap) {
  Network net = Network::mlp(1, {1}, Activation::identity());
  net.layer(0).weights() = {-1.0};
  net.layer(0).bias() = {0.5};
  Dataset d;
  d.add({1.0}, 1);   // f = -0.5, target 0
  d.add({-2.0}, -1); // f = 2.5, target 1
  ScalarClassifier c = ScalarClassifier::squared_error(net, d);
  EXPECT_DOUBLE_EQ(c.threshold, 1.0);
  EXPECT_EQ(c.orientation, -1);
  EXPECT_EQ(c.predict(Vector{1.0}), 1);
  EXPECT_EQ(c.predict(Vector{-2.0}), -1);
  d.add({-3.0}, 1);  // overlap: fall back to target midpoint
  EXPECT_DOUBLE_EQ(ScalarClassifier::squared_error(net, d).threshold, 0.5);
}

TEST(Raster, LinearHalfPlanes) {
  Raster r = boundary_raster(linear({1, 0}, 0), BBox{-1, 1, -1, 1}, 10);
  for (std::size_t j = 0; j < 10; ++j)
    for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(r.at(i, j), i < 5 ? -1 : 1);
  Raster one = boundary_raster(linear({1, 0}, 0), BBox{0, 1, 0, 1}, 1);
  EXPECT_EQ(one.labels.size(), 1u);
  EXPECT_EQ(one.labels[0], 1);
}

TEST(Raster, GridMarginWithinOneCellDiagonal) {
  Vector w{0.6, -0.8};
  const double b = 0.1;
  ScalarClassifier clf = linear(w, b);
  Dataset d = labelled_by(clf, 20, 7);
  Raster r = boundary_raster(clf, BBox{-1.5, 1.5, -1.5, 1.5}, 200, &d);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double exact = std::abs(dot(w, d.points[i]) + b) / norm2(w);
    EXPECT_LE(std::abs(r.point_margins[i] - exact), r.cell_diagonal()) << "point " << i;
    EXPECT_EQ(r.point_labels[i], clf.predict(d.points[i]));
  }
}

TEST(Raster, LabelsAtTrainingPointsMatchForwardPass) {
  ScalarClassifier clf = relu_net(8);
  Dataset d = generate("blobs", {{"n", 20}, {"sigma", 0.5}}, 2);
  BBox box = bbox_of(d, 0.5);
  Raster r = boundary_raster(clf, box, 60, 40, &d);
  for (std::size_t k = 0; k < d.size(); ++k) EXPECT_EQ(r.point_labels[k], clf.predict(d.points[k]));
  std::string text = raster_text(r);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 41);
  Network three = Network::mlp(3, {1}, Activation::identity());
  EXPECT_THROW(boundary_raster(ScalarClassifier::logistic(three), box, 5), ShapeError);
  EXPECT_THROW(boundary_raster(clf, box, 0), ContractError);
}

TEST(Lipschitz, LinearNetIsSpectralNormOfProduct) {
  Network net = Network::mlp(2, {3, 1}, Activation::identity());
  net.init_uniform(9);
  Matrix P = matmul(net.layer(1).weight_matrix(), net.layer(0).weight_matrix());
  LipschitzResult r = empirical_lipschitz_exact(net, ProbeRegion{{-1, -1}, {1, 1}});
  EXPECT_NEAR(r.value, singular_values(P)[0], 1e-12);
}

TEST(Lipschitz, ZeroOutputLayer) {
  Network net = Network::mlp(2, {5, 1}, Activation::relu());
  net.init_uniform(10);
  net.layer(1).weights().assign(5, 0.0);
  EXPECT_EQ(empirical_lipschitz_exact(net, ProbeRegion{{-1, -1}, {1, 1}}).value, 0.0);
}

TEST(Lipschitz, ExactDominatesSampling) {
  Network net = Network::mlp(2, {16, 1}, Activation::relu());
  net.init_uniform(11);
  ProbeRegion region{{-2, -2}, {2, 2}};
  LipschitzResult ex = empirical_lipschitz_exact(net, region);
  LipschitzResult sa = empirical_lipschitz_sampling(net, region, 100000, 3);
  EXPECT_GE(ex.value, sa.value * (1 - 1e-9));
  EXPECT_LE(ex.value - sa.value, 0.05 * ex.value);
  // per-pattern gradients agree with the network's input gradient
  TwoLayer t = TwoLayer::from(net);
  Vector x{0.3, -0.7};
  Vector g = net.input_gradient(x, Vector{1.0});
  EXPECT_LE(norm2(g), ex.value * (1 + 1e-12));
  Matrix J = t.jacobian(t.pattern(x));
  EXPECT_NEAR(J(0, 0), g[0], 1e-14);
}
