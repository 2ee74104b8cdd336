#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pexcite/errors.hpp"
#include "pexcite/linalg.hpp"

namespace pexcite {

enum class ActivationKind { identity, relu, leaky_relu };

struct Activation {
  ActivationKind kind = ActivationKind::identity;
  double slope = 0.01;

  static Activation identity() { return {ActivationKind::identity, 0.01}; }
  static Activation relu() { return {ActivationKind::relu, 0.01}; }
  static Activation leaky_relu(double slope = 0.01) {
    if (!(slope > 0.0 && slope < 1.0)) throw ContractError("leaky relu slope must lie in (0,1)");
    return {ActivationKind::leaky_relu, slope};
  }

  double apply(double z) const {
    switch (kind) {
      case ActivationKind::relu: return z > 0.0 ? z : 0.0;
      case ActivationKind::leaky_relu: return z > 0.0 ? z : slope * z;
      default: return z;
    }
  }
  // derivative at exactly 0 follows the strict inequality
  double derivative(double z) const {
    switch (kind) {
      case ActivationKind::relu: return z > 0.0 ? 1.0 : 0.0;
      case ActivationKind::leaky_relu: return z > 0.0 ? 1.0 : slope;
      default: return 1.0;
    }
  }

  std::string name() const {
    switch (kind) {
      case ActivationKind::relu: return "relu";
      case ActivationKind::leaky_relu: return "leaky_relu";
      default: return "identity";
    }
  }
  static Activation parse(const std::string& s, double slope = 0.01) {
    if (s == "relu") return relu();
    if (s == "leaky_relu") return leaky_relu(slope);
    if (s == "identity" || s == "linear") return identity();
    throw ContractError("unknown activation: " + s);
  }
};

enum class LayerKind { dense, conv };

struct ConvGeometry {
  std::size_t in_channels = 1, height = 1, width = 1;
  std::size_t out_channels = 1, kernel_h = 1, kernel_w = 1;
  std::size_t out_h() const { return height - kernel_h + 1; }
  std::size_t out_w() const { return width - kernel_w + 1; }
};

class Layer {
 public:
  static Layer dense(std::size_t in, std::size_t out, Activation act, bool use_bias = true) {
    if (in == 0 || out == 0) throw ShapeError("dense layer needs nonzero dimensions");
    Layer l;
    l.kind_ = LayerKind::dense;
    l.in_ = in;
    l.out_ = out;
    l.act_ = act;
    l.use_bias_ = use_bias;
    l.weights_.assign(in * out, 0.0);
    l.bias_.assign(out, 0.0);
    return l;
  }

  static Layer conv(const ConvGeometry& g, Activation act, bool use_bias = true) {
    if (g.kernel_h == 0 || g.kernel_w == 0 || g.kernel_h > g.height || g.kernel_w > g.width ||
        g.in_channels == 0 || g.out_channels == 0)
      throw ShapeError("invalid conv geometry");
    Layer l;
    l.kind_ = LayerKind::conv;
    l.geom_ = g;
    l.in_ = g.in_channels * g.height * g.width;
    l.out_ = g.out_channels * g.out_h() * g.out_w();
    l.act_ = act;
    l.use_bias_ = use_bias;
    l.weights_.assign(g.out_channels * g.in_channels * g.kernel_h * g.kernel_w, 0.0);
    l.bias_.assign(g.out_channels, 0.0);
    return l;
  }

  LayerKind kind() const { return kind_; }
  const ConvGeometry& geometry() const { return geom_; }
  const Activation& activation() const { return act_; }
  bool use_bias() const { return use_bias_; }
  std::size_t input_dim() const { return in_; }
  std::size_t output_dim() const { return out_; }
  std::size_t fan_in() const {
    return kind_ == LayerKind::dense ? in_ : geom_.in_channels * geom_.kernel_h * geom_.kernel_w;
  }
  std::size_t param_count() const { return weights_.size() + (use_bias_ ? bias_.size() : 0); }

  std::vector<double>& weights() { return weights_; }
  const std::vector<double>& weights() const { return weights_; }
  std::vector<double>& bias() { return bias_; }
  const std::vector<double>& bias() const { return bias_; }

  Matrix weight_matrix() const {
    if (kind_ != LayerKind::dense) throw ArchitectureError("weight_matrix: not a dense layer");
    return Matrix(out_, in_, weights_);
  }
  void set_weight_matrix(const Matrix& w) {
    if (kind_ != LayerKind::dense || w.rows() != out_ || w.cols() != in_)
      throw ShapeError("set_weight_matrix: shape mismatch");
    weights_ = w.data();
  }

  // z = W u + b
  void affine(std::span<const double> u, std::span<double> z) const {
    if (kind_ == LayerKind::dense) {
      for (std::size_t i = 0; i < out_; ++i) {
        const double* row = weights_.data() + i * in_;
        double s = 0.0;
        for (std::size_t j = 0; j < in_; ++j) s += row[j] * u[j];
        z[i] = s + bias_[i];
      }
      return;
    }
    const auto& g = geom_;
    const std::size_t oh = g.out_h(), ow = g.out_w();
    for (std::size_t o = 0; o < g.out_channels; ++o)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
          double s = 0.0;
          for (std::size_t c = 0; c < g.in_channels; ++c)
            for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
              for (std::size_t kx = 0; kx < g.kernel_w; ++kx)
                s += kernel(o, c, ky, kx) * u[(c * g.height + y + ky) * g.width + x + kx];
          z[(o * oh + y) * ow + x] = s + bias_[o];
        }
  }

  // Adds (dW, db) into grad_w/grad_b and writes dL/du into grad_u.
  void affine_backward(std::span<const double> u, std::span<const double> gz, std::span<double> grad_w,
                       std::span<double> grad_b, std::span<double> grad_u) const {
    std::fill(grad_u.begin(), grad_u.end(), 0.0);
    if (kind_ == LayerKind::dense) {
      for (std::size_t i = 0; i < out_; ++i) {
        const double g = gz[i];
        if (use_bias_) grad_b[i] += g;
        if (g == 0.0) continue;
        const double* row = weights_.data() + i * in_;
        double* grow = grad_w.data() + i * in_;
        for (std::size_t j = 0; j < in_; ++j) {
          grow[j] += g * u[j];
          grad_u[j] += row[j] * g;
        }
      }
      return;
    }
    const auto& geo = geom_;
    const std::size_t oh = geo.out_h(), ow = geo.out_w();
    for (std::size_t o = 0; o < geo.out_channels; ++o)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
          const double g = gz[(o * oh + y) * ow + x];
          if (use_bias_) grad_b[o] += g;
          if (g == 0.0) continue;
          for (std::size_t c = 0; c < geo.in_channels; ++c)
            for (std::size_t ky = 0; ky < geo.kernel_h; ++ky)
              for (std::size_t kx = 0; kx < geo.kernel_w; ++kx) {
                const std::size_t ui = (c * geo.height + y + ky) * geo.width + x + kx;
                const std::size_t ki = kernel_index(o, c, ky, kx);
                grad_w[ki] += g * u[ui];
                grad_u[ui] += weights_[ki] * g;
              }
        }
  }

  std::size_t kernel_index(std::size_t o, std::size_t c, std::size_t ky, std::size_t kx) const {
    return ((o * geom_.in_channels + c) * geom_.kernel_h + ky) * geom_.kernel_w + kx;
  }
  double kernel(std::size_t o, std::size_t c, std::size_t ky, std::size_t kx) const {
    return weights_[kernel_index(o, c, ky, kx)];
  }

 private:
  LayerKind kind_ = LayerKind::dense;
  ConvGeometry geom_;
  std::size_t in_ = 0, out_ = 0;
  Activation act_;
  bool use_bias_ = true;
  std::vector<double> weights_;
  std::vector<double> bias_;
};

// d = (d_1, ..., d_L); d_j is added to the input of layer j.
using Perturbation = std::vector<Vector>;

struct PerturbationSet {
  Vector radii;

  static PerturbationSet uniform(std::size_t layers, double r) { return {Vector(layers, r)}; }
  static PerturbationSet input_only(std::size_t layers, double r) {
    PerturbationSet p{Vector(layers, 0.0)};
    if (layers) p.radii[0] = r;
    return p;
  }
  bool all_zero() const {
    for (double r : radii)
      if (r != 0.0) return false;
    return true;
  }
};

struct ForwardTrace {
  std::vector<Vector> h;    // h[0] = x, h[L] = output
  std::vector<Vector> u;    // u[j] = h[j] + d_{j+1}, the input fed to layer j+1
  std::vector<Vector> pre;  // pre-activations
};

struct Gradients {
  Vector params;
  Perturbation perturbations;
};

using ActivationPattern = std::vector<std::uint8_t>;

class Network {
 public:
  Network() = default;
  Network(std::size_t input_dim, std::vector<Layer> layers) : input_dim_(input_dim), layers_(std::move(layers)) {
    if (layers_.empty()) throw ShapeError("network needs at least one layer");
    std::size_t d = input_dim_;
    for (const auto& l : layers_) {
      if (l.input_dim() != d) throw ShapeError("layer input dimension does not match previous output");
      d = l.output_dim();
    }
  }

  // Dense stack: widths are the layer output sizes.
  static Network mlp(std::size_t input_dim, const std::vector<std::size_t>& widths, Activation hidden,
                     Activation output = Activation::identity(), bool output_bias = true, bool hidden_bias = true) {
    std::vector<Layer> ls;
    std::size_t d = input_dim;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      bool last = i + 1 == widths.size();
      ls.push_back(Layer::dense(d, widths[i], last ? output : hidden, last ? output_bias : hidden_bias));
      d = widths[i];
    }
    return Network(input_dim, std::move(ls));
  }

  std::size_t input_dim() const { return input_dim_; }
  std::size_t output_dim() const { return layers_.back().output_dim(); }
  std::size_t layer_count() const { return layers_.size(); }
  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& layers() { return layers_; }
  const Layer& layer(std::size_t j) const { return layers_[j]; }
  Layer& layer(std::size_t j) { return layers_[j]; }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.param_count();
    return n;
  }

  void init_uniform(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (auto& l : layers_) {
      const double a = 1.0 / std::sqrt(static_cast<double>(l.fan_in()));
      std::uniform_real_distribution<double> dist(-a, a);
      for (auto& w : l.weights()) w = dist(rng);
      if (l.use_bias())
        for (auto& b : l.bias()) b = dist(rng);
    }
  }

  // Layout: per layer, weights then (if used) bias.
  Vector parameters() const {
    Vector p;
    p.reserve(param_count());
    for (const auto& l : layers_) {
      p.insert(p.end(), l.weights().begin(), l.weights().end());
      if (l.use_bias()) p.insert(p.end(), l.bias().begin(), l.bias().end());
    }
    return p;
  }

  void set_parameters(std::span<const double> p) {
    if (p.size() != param_count()) throw ShapeError("parameter vector has wrong length");
    std::size_t k = 0;
    for (auto& l : layers_) {
      for (auto& w : l.weights()) w = p[k++];
      if (l.use_bias())
        for (auto& b : l.bias()) b = p[k++];
    }
  }

  Perturbation zero_perturbation() const {
    Perturbation d;
    for (const auto& l : layers_) d.emplace_back(l.input_dim(), 0.0);
    return d;
  }

  ForwardTrace trace(std::span<const double> x, const Perturbation* d = nullptr) const {
    if (x.size() != input_dim_) throw ShapeError("input dimension mismatch");
    if (d && d->size() != layers_.size()) throw ShapeError("perturbation needs one vector per layer");
    ForwardTrace t;
    t.h.reserve(layers_.size() + 1);
    t.h.emplace_back(x.begin(), x.end());
    for (std::size_t j = 0; j < layers_.size(); ++j) {
      const auto& l = layers_[j];
      Vector u = t.h.back();
      if (d) {
        const Vector& dj = (*d)[j];
        if (dj.size() != u.size()) throw ShapeError("perturbation shape mismatch");
        for (std::size_t i = 0; i < u.size(); ++i) u[i] += dj[i];
      }
      Vector z(l.output_dim());
      l.affine(u, z);
      Vector h(z.size());
      for (std::size_t i = 0; i < z.size(); ++i) h[i] = l.activation().apply(z[i]);
      t.u.push_back(std::move(u));
      t.pre.push_back(std::move(z));
      t.h.push_back(std::move(h));
    }
    return t;
  }

  Vector forward(std::span<const double> x) const { return trace(x).h.back(); }
  Vector forward_perturbed(std::span<const double> x, const Perturbation& d) const { return trace(x, &d).h.back(); }
  double scalar(std::span<const double> x) const { return forward(x)[0]; }

  // Gradients of <upstream, h_L(x; d)>: added into g.params, written into g.perturbations.
  void accumulate_gradients(const ForwardTrace& t, std::span<const double> upstream, Gradients& g) const {
    if (upstream.size() != output_dim()) throw ShapeError("upstream dimension mismatch");
    if (g.params.size() != param_count()) g.params.assign(param_count(), 0.0);
    g.perturbations.resize(layers_.size());
    std::vector<std::size_t> offset(layers_.size());
    std::size_t k = 0;
    for (std::size_t j = 0; j < layers_.size(); ++j) {
      offset[j] = k;
      k += layers_[j].param_count();
    }
    Vector gh(upstream.begin(), upstream.end());
    for (std::size_t j = layers_.size(); j-- > 0;) {
      const auto& l = layers_[j];
      Vector gz(gh.size());
      for (std::size_t i = 0; i < gz.size(); ++i) gz[i] = gh[i] * l.activation().derivative(t.pre[j][i]);
      std::span<double> gw(g.params.data() + offset[j], l.weights().size());
      std::span<double> gb(g.params.data() + offset[j] + l.weights().size(), l.use_bias() ? l.bias().size() : 0);
      Vector gu(l.input_dim());
      l.affine_backward(t.u[j], gz, gw, gb, gu);
      g.perturbations[j] = gu;
      gh = std::move(gu);
    }
  }

  Gradients gradients(std::span<const double> x, const Perturbation& d, std::span<const double> upstream) const {
    Gradients g;
    g.params.assign(param_count(), 0.0);
    accumulate_gradients(trace(x, &d), upstream, g);
    return g;
  }

  Vector input_gradient(std::span<const double> x, std::span<const double> upstream) const {
    Gradients g;
    g.params.assign(param_count(), 0.0);
    accumulate_gradients(trace(x), upstream, g);
    return g.perturbations[0];
  }

 private:
  std::size_t input_dim_ = 0;
  std::vector<Layer> layers_;
};

// View of f(x) = W (V x + b)_+ + c.
struct TwoLayer {
  Matrix V;
  Vector b;
  Matrix W;
  Vector c;

  static TwoLayer from(const Network& net) {
    if (net.layer_count() != 2 || net.layer(0).kind() != LayerKind::dense ||
        net.layer(1).kind() != LayerKind::dense || net.layer(0).activation().kind != ActivationKind::relu ||
        net.layer(1).activation().kind != ActivationKind::identity)
      throw ArchitectureError("expected a dense-relu-dense network");
    TwoLayer t;
    t.V = net.layer(0).weight_matrix();
    t.b = net.layer(0).use_bias() ? net.layer(0).bias() : Vector(t.V.rows(), 0.0);
    t.W = net.layer(1).weight_matrix();
    t.c = net.layer(1).use_bias() ? net.layer(1).bias() : Vector(t.W.rows(), 0.0);
    return t;
  }

  std::size_t width() const { return V.rows(); }

  ActivationPattern pattern(std::span<const double> x) const {
    Vector z = matvec(V, x);
    ActivationPattern p(z.size());
    for (std::size_t k = 0; k < z.size(); ++k) p[k] = (z[k] + b[k]) > 0.0 ? 1 : 0;
    return p;
  }

  // Jacobian W G V for a given pattern.
  Matrix jacobian(const ActivationPattern& p) const {
    Matrix gv(V.rows(), V.cols());
    for (std::size_t k = 0; k < V.rows(); ++k)
      if (p[k])
        for (std::size_t j = 0; j < V.cols(); ++j) gv(k, j) = V(k, j);
    return matmul(W, gv);
  }
};

inline ActivationPattern activation_pattern(const Network& net, std::span<const double> x) {
  return TwoLayer::from(net).pattern(x);
}

}  // namespace pexcite
