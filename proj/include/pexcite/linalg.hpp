#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "pexcite/errors.hpp"

namespace pexcite {

using Vector = std::vector<double>;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, Vector data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows * cols) throw ShapeError("matrix data size does not match shape");
  }
  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ ? rows.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw ShapeError("ragged matrix literal");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static Matrix from_rows(const std::vector<Vector>& rows) {
    if (rows.empty()) return {};
    Matrix m(rows.size(), rows[0].size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != m.cols_) throw ShapeError("ragged rows");
      std::copy(rows[i].begin(), rows[i].end(), m.data_.begin() + i * m.cols_);
    }
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }
  const Vector& data() const { return data_; }
  Vector& data() { return data_; }

  Vector row(std::size_t i) const {
    return Vector(data_.begin() + i * cols_, data_.begin() + (i + 1) * cols_);
  }
  Vector col(std::size_t j) const {
    Vector c(rows_);
    for (std::size_t i = 0; i < rows_; ++i) c[i] = (*this)(i, j);
    return c;
  }

  Matrix transpose() const {
    Matrix t(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
    return t;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  Vector data_;
};

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul: inner dimensions differ");
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) {
      double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
    }
  return c;
}

inline Vector matvec(const Matrix& a, std::span<const double> x) {
  if (a.cols() != x.size()) throw ShapeError("matvec: dimension mismatch");
  Vector y(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) s += a(i, j) * x[j];
    y[i] = s;
  }
  return y;
}

// A^T x
inline Vector matvec_t(const Matrix& a, std::span<const double> x) {
  if (a.rows() != x.size()) throw ShapeError("matvec_t: dimension mismatch");
  Vector y(a.cols(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) y[j] += a(i, j) * x[i];
  return y;
}

// A^T A
inline Matrix gram(const Matrix& a) {
  Matrix g(a.cols(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t p = 0; p < a.cols(); ++p) {
      double v = a(i, p);
      if (v == 0.0) continue;
      for (std::size_t q = p; q < a.cols(); ++q) g(p, q) += v * a(i, q);
    }
  for (std::size_t p = 0; p < a.cols(); ++p)
    for (std::size_t q = 0; q < p; ++q) g(p, q) = g(q, p);
  return g;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("dot: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> v) { return std::sqrt(dot(v, v)); }

inline double frobenius_norm(const Matrix& a) { return norm2(a.data()); }

inline Vector axpy(double alpha, std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ShapeError("axpy: dimension mismatch");
  Vector r(y.begin(), y.end());
  for (std::size_t i = 0; i < x.size(); ++i) r[i] += alpha * x[i];
  return r;
}

inline Vector sub(std::span<const double> a, std::span<const double> b) { return axpy(-1.0, b, a); }
inline Vector add(std::span<const double> a, std::span<const double> b) { return axpy(1.0, b, a); }

inline Vector scale(double alpha, std::span<const double> x) {
  Vector r(x.begin(), x.end());
  for (auto& v : r) v *= alpha;
  return r;
}

inline Matrix outer(std::span<const double> u, std::span<const double> v) {
  Matrix m(u.size(), v.size());
  for (std::size_t i = 0; i < u.size(); ++i)
    for (std::size_t j = 0; j < v.size(); ++j) m(i, j) = u[i] * v[j];
  return m;
}

inline void check_exponent(double p) {
  if (!(p >= 1.0)) throw ContractError("invalid exponent: p must be >= 1");
}

inline double pnorm(std::span<const double> v, double p) {
  check_exponent(p);
  double mx = 0.0;
  for (double x : v) mx = std::max(mx, std::abs(x));
  if (std::isinf(p) || mx == 0.0) return mx;
  if (p == 1.0) {
    double s = 0.0;
    for (double x : v) s += std::abs(x);
    return s;
  }
  if (p == 2.0) return norm2(v);
  // scaled to avoid overflow
  double s = 0.0;
  for (double x : v) s += std::pow(std::abs(x) / mx, p);
  return mx * std::pow(s, 1.0 / p);
}

inline double dual_exponent(double p) {
  check_exponent(p);
  if (p == 1.0) return kInf;
  if (std::isinf(p)) return 1.0;
  return p / (p - 1.0);
}

struct EigenDecomposition {
  Vector values;   // descending
  Matrix vectors;  // column i pairs with values[i]
  int sweeps = 0;
};

// Cyclic Jacobi.
inline EigenDecomposition sym_eig(const Matrix& input, double off_tol = 1e-12, int max_sweeps = 100) {
  const std::size_t n = input.rows();
  if (input.cols() != n) throw ContractError("sym_eig: matrix is not square");
  double fro = frobenius_norm(input);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (std::abs(input(i, j) - input(j, i)) > 1e-10 * std::max(fro, 1e-300))
        throw ContractError("sym_eig: matrix is not symmetric");

  Matrix a = input;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) a(i, j) = a(j, i) = 0.5 * (input(i, j) + input(j, i));
  Matrix v = Matrix::identity(n);
  EigenDecomposition out;
  auto off = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) s += a(i, j) * a(i, j);
    return std::sqrt(s);
  };
  const double threshold = off_tol * std::max(fro, std::numeric_limits<double>::min());
  for (int sweep = 0; sweep < max_sweeps && off() > threshold; ++sweep) {
    out.sweeps = sweep + 1;
    for (std::size_t p = 0; p + 1 < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        double apq = a(p, q);
        if (apq == 0.0) continue;
        double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto x, auto y) { return a(x, x) > a(y, y); });
  out.values.resize(n);
  out.vectors = Matrix(n, n);
  for (std::size_t c = 0; c < n; ++c) {
    out.values[c] = a(order[c], order[c]);
    for (std::size_t k = 0; k < n; ++k) out.vectors(k, c) = v(k, order[c]);
  }
  return out;
}

inline double lambda_max(const Matrix& sym) {
  if (sym.rows() == 0) return 0.0;
  return sym_eig(sym).values.front();
}

inline double lambda_min(const Matrix& sym) {
  if (sym.rows() == 0) return 0.0;
  return sym_eig(sym).values.back();
}

inline Vector singular_values(const Matrix& a) {
  const Matrix g = a.rows() < a.cols() ? gram(a.transpose()) : gram(a);
  Vector ev = sym_eig(g).values;
  for (auto& x : ev) x = std::sqrt(std::max(x, 0.0));
  return ev;
}

inline std::size_t numerical_rank(const Vector& sigma, double rel_threshold = 1e-6) {
  if (sigma.empty() || sigma[0] == 0.0) return 0;
  std::size_t r = 0;
  for (double s : sigma)
    if (s / sigma[0] > rel_threshold) ++r;
  return r;
}

// Gaussian elimination with partial pivoting.
inline Vector solve(Matrix a, Vector b) {
  const std::size_t n = a.rows();
  if (a.cols() != n || b.size() != n) throw ShapeError("solve: shape mismatch");
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t piv = k;
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::abs(a(i, k)) > std::abs(a(piv, k))) piv = i;
    if (a(piv, k) == 0.0) throw RangeError("solve: singular matrix");
    if (piv != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(a(k, j), a(piv, j));
      std::swap(b[k], b[piv]);
    }
    for (std::size_t i = k + 1; i < n; ++i) {
      double f = a(i, k) / a(k, k);
      if (f == 0.0) continue;
      for (std::size_t j = k; j < n; ++j) a(i, j) -= f * a(k, j);
      b[i] -= f * b[k];
    }
  }
  Vector x(n);
  for (std::size_t k = n; k-- > 0;) {
    double s = b[k];
    for (std::size_t j = k + 1; j < n; ++j) s -= a(k, j) * x[j];
    x[k] = s / a(k, k);
  }
  return x;
}

}  // namespace pexcite
