#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <random>

#include "pexcite/linalg.hpp"

using namespace pexcite;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  Matrix m(r, c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) m(i, j) = nd(rng);
  return m;
}

Matrix random_symmetric(std::size_t n, std::mt19937_64& rng) {
  Matrix a = random_matrix(n, n, rng);
  Matrix s(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) s(i, j) = 0.5 * (a(i, j) + a(j, i));
  return s;
}

Eigen::MatrixXd to_eigen(const Matrix& m) {
  Eigen::MatrixXd e(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) e(i, j) = m(i, j);
  return e;
}

}  // namespace

TEST(SymEig, DiagonalSorted) {
  Matrix a{{3, 0, 0}, {0, 1, 0}, {0, 0, 2}};
  auto ed = sym_eig(a);
  EXPECT_NEAR(ed.values[0], 3, 1e-14);
  EXPECT_NEAR(ed.values[1], 2, 1e-14);
  EXPECT_NEAR(ed.values[2], 1, 1e-14);
}

TEST(SymEig, TwoByTwo) {
  auto ed = sym_eig(Matrix{{2, 1}, {1, 2}});
  EXPECT_NEAR(ed.values[0], 3, 1e-12);
  EXPECT_NEAR(ed.values[1], 1, 1e-12);
}

TEST(SymEig, ReconstructsRandom6x6) {
  std::mt19937_64 rng(3);
  Matrix a = random_symmetric(6, rng);
  auto ed = sym_eig(a);
  Matrix lam(6, 6);
  for (int i = 0; i < 6; ++i) lam(i, i) = ed.values[i];
  Matrix r = matmul(matmul(ed.vectors, lam), ed.vectors.transpose());
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) EXPECT_NEAR(r(i, j), a(i, j), 1e-8);
  Matrix qtq = matmul(ed.vectors.transpose(), ed.vectors);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) EXPECT_NEAR(qtq(i, j), i == j ? 1.0 : 0.0, 1e-8);
}

TEST(SymEig, ResidualPropertyAndEigenOracle) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 1 + trial % 12;
    Matrix a = random_symmetric(n, rng);
    auto ed = sym_eig(a);
    const double fro = frobenius_norm(a);
    for (std::size_t k = 0; k < n; ++k) {
      Vector v = ed.vectors.col(k);
      Vector res = sub(matvec(a, v), scale(ed.values[k], v));
      EXPECT_LE(pnorm(res, kInf), 1e-8 * fro);
      if (k) EXPECT_GE(ed.values[k - 1], ed.values[k]);
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(to_eigen(a));
    for (std::size_t k = 0; k < n; ++k) EXPECT_NEAR(ed.values[k], es.eigenvalues()(n - 1 - k), 1e-9 * (1 + fro));
  }
}

TEST(SymEig, RejectsBadInput) {
  EXPECT_THROW(sym_eig(Matrix(2, 3)), ContractError);
  EXPECT_THROW(sym_eig(Matrix{{1, 2}, {0, 1}}), ContractError);
}

TEST(SingularValues, RankOneOuterProduct) {
  Vector u{0.6, 0.8}, v{0, 1, 0};
  Vector s = singular_values(outer(u, v));
  EXPECT_NEAR(s[0], 1.0, 1e-12);
  for (std::size_t i = 1; i < s.size(); ++i) EXPECT_NEAR(s[i], 0.0, 1e-7);
  EXPECT_EQ(numerical_rank(s), 1u);
}

TEST(SingularValues, Identity) {
  for (double s : singular_values(Matrix::identity(5))) EXPECT_NEAR(s, 1.0, 1e-14);
}

TEST(SingularValues, MatchGramEigenvalues) {
  std::mt19937_64 rng(5);
  Matrix a = random_matrix(4, 3, rng);
  Vector s = singular_values(a);
  auto ed = sym_eig(gram(a));
  ASSERT_EQ(s.size(), 3u);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(s[i] * s[i], ed.values[i], 1e-8);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(to_eigen(a));
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(s[i], svd.singularValues()(i), 1e-10);
}

TEST(SingularValues, TransposeInvariant) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix a = random_matrix(1 + trial % 5, 1 + trial % 7, rng);
    Vector s1 = singular_values(a), s2 = singular_values(a.transpose());
    ASSERT_EQ(s1.size(), s2.size());
    for (std::size_t i = 0; i < s1.size(); ++i) EXPECT_NEAR(s1[i], s2[i], 1e-10);
  }
}

TEST(PNorm, Examples) {
  EXPECT_DOUBLE_EQ(pnorm(Vector{3, 4}, 2), 5);
  EXPECT_DOUBLE_EQ(pnorm(Vector{1, -2}, 1), 3);
  EXPECT_DOUBLE_EQ(pnorm(Vector{1, -7, 3}, kInf), 7);
  EXPECT_TRUE(std::isinf(dual_exponent(1)));
  EXPECT_EQ(dual_exponent(kInf), 1);
  EXPECT_EQ(dual_exponent(2), 2);
  EXPECT_NEAR(dual_exponent(3), 1.5, 1e-15);
  EXPECT_THROW(pnorm(Vector{1}, 0.5), ContractError);
  EXPECT_THROW(dual_exponent(0.9), ContractError);
}

TEST(PNorm, FractionalMatchesDirectFormula) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 20; ++trial) {
    Vector v(1 + trial % 6);
    for (auto& x : v) x = nd(rng);
    double s = 0;
    for (double x : v) s += std::pow(std::abs(x), 1.5);
    EXPECT_NEAR(pnorm(v, 1.5), std::pow(s, 2.0 / 3.0), 1e-12);
  }
}

TEST(PNorm, HoelderInequality) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> nd;
  for (double p : {1.0, 1.5, 2.0, 3.0, kInf}) {
    const double q = dual_exponent(p);
    for (int trial = 0; trial < 200; ++trial) {
      Vector u(5), v(5);
      for (auto& x : u) x = nd(rng);
      for (auto& x : v) x = nd(rng);
      EXPECT_LE(std::abs(dot(u, v)), pnorm(u, p) * pnorm(v, q) * (1 + 1e-12));
    }
  }
}

TEST(Solve, MatchesEigen) {
  std::mt19937_64 rng(9);
  Matrix a = random_matrix(5, 5, rng);
  Vector b{1, 2, 3, 4, 5};
  Vector x = solve(a, b);
  Vector r = sub(matvec(a, x), b);
  EXPECT_LE(norm2(r), 1e-10);
  EXPECT_THROW(solve(Matrix(2, 2), Vector{1, 1}), RangeError);
}
