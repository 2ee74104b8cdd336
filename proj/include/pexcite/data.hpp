#pragma once

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pexcite/errors.hpp"
#include "pexcite/linalg.hpp"

namespace pexcite {

struct Dataset {
  std::vector<Vector> points;
  std::vector<int> labels;
  std::vector<Vector> targets;  // optional
  std::string name;
  std::uint64_t seed = 0;
  nlohmann::json params = nlohmann::json::object();

  std::size_t size() const { return points.size(); }
  std::size_t dim() const { return points.empty() ? dim_hint : points[0].size(); }
  std::size_t dim_hint = 0;

  void add(Vector x, int label) {
    if (!points.empty() && x.size() != points[0].size()) throw ShapeError("dataset points must share a dimension");
    points.push_back(std::move(x));
    labels.push_back(label);
  }

  std::vector<Vector> class_points(int label) const {
    std::vector<Vector> out;
    for (std::size_t i = 0; i < size(); ++i)
      if (labels[i] == label) out.push_back(points[i]);
    return out;
  }

  Dataset subset(const std::vector<std::size_t>& idx) const {
    Dataset d;
    d.name = name;
    d.seed = seed;
    d.params = params;
    d.dim_hint = dim();
    for (auto i : idx) {
      d.points.push_back(points[i]);
      d.labels.push_back(labels[i]);
      if (!targets.empty()) d.targets.push_back(targets[i]);
    }
    return d;
  }
};

namespace detail {

template <class T>
T param_or(const nlohmann::json& p, const char* key, T fallback) {
  return p.contains(key) ? p.at(key).get<T>() : fallback;
}

inline std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

// Flank clusters at (+-flank, 0) carry label +1, the center cluster label -1.
inline Dataset gen_three_cluster(const nlohmann::json& p, std::uint64_t seed) {
  const int n = detail::param_or(p, "n_per_cluster", 20);
  const double sigma = detail::param_or(p, "sigma", 0.3);
  const double flank = detail::param_or(p, "flank", 2.0);
  if (n <= 0 || sigma < 0 || flank <= 0) throw ContractError("three_cluster: invalid parameters");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  Dataset d;
  const double cx[3] = {-flank, 0.0, flank};
  const int lab[3] = {1, -1, 1};
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < n; ++i) d.add({cx[c] + sigma * nd(rng), sigma * nd(rng)}, lab[c]);
  d.params = {{"n_per_cluster", n}, {"sigma", sigma}, {"flank", flank}};
  return d;
}

inline Dataset gen_blobs(const nlohmann::json& p, std::uint64_t seed) {
  const int n = detail::param_or(p, "n", 100);
  const double sigma = detail::param_or(p, "sigma", 0.3);
  std::vector<Vector> centers = {{1.0, 0.0}, {-1.0, 0.0}};
  if (p.contains("centers")) centers = p.at("centers").get<std::vector<Vector>>();
  if (n <= 0 || sigma < 0 || centers.size() < 2) throw ContractError("blobs: invalid parameters");
  const std::size_t k = centers.size();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  Dataset d;
  for (int i = 0; i < n; ++i) {
    const std::size_t c = static_cast<std::size_t>(i) % k;
    Vector x = centers[c];
    for (auto& v : x) v += sigma * nd(rng);
    int label = k == 2 ? (c == 0 ? 1 : -1) : static_cast<int>(c);
    d.add(std::move(x), label);
  }
  d.params = {{"n", n}, {"sigma", sigma}, {"centers", centers}};
  return d;
}

inline Dataset gen_separable_random(const nlohmann::json& p, std::uint64_t seed) {
  const int dim = detail::param_or(p, "dim", 2);
  const int n = detail::param_or(p, "n", 40);
  const double gap = detail::param_or(p, "gap", 0.1);
  if (dim <= 0 || n <= 1 || gap <= 0 || gap >= 0.5) throw ContractError("separable_random: invalid parameters");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_real_distribution<double> ud(-1.0, 1.0);
  Vector u(dim);
  for (auto& v : u) v = nd(rng);
  u = scale(1.0 / norm2(u), u);
  Dataset d;
  while (static_cast<int>(d.size()) < n) {
    Vector x(dim);
    for (auto& v : x) v = ud(rng);
    double s = dot(u, x);
    if (std::abs(s) < gap) continue;
    // alternate classes so both are populated
    int want = d.size() % 2 == 0 ? 1 : -1;
    if ((s > 0) != (want > 0)) x = scale(-1.0, x), s = -s;
    d.add(std::move(x), s > 0 ? 1 : -1);
  }
  d.params = {{"dim", dim}, {"n", n}, {"gap", gap}, {"normal", u}, {"gamma_opt_lower_bound", gap}};
  return d;
}

// Supports (c +- gamma, delta...) on the affine subspace {x : x_k = delta_k, k >= 1}.
inline Dataset gen_affine_support(const nlohmann::json& p, std::uint64_t seed) {
  const double gamma = detail::param_or(p, "gamma", 1.5);
  const double c = detail::param_or(p, "center", 0.5);
  Vector delta = p.contains("delta") ? (p.at("delta").is_array() ? p.at("delta").get<Vector>()
                                                                  : Vector{p.at("delta").get<double>()})
                                     : Vector{1.0};
  const int n_extra = detail::param_or(p, "n_extra", 0);
  if (gamma <= 0 || n_extra < 0) throw ContractError("affine_support: invalid parameters");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  Dataset d;
  auto point = [&](double x1, bool jitter) {
    Vector x{x1};
    for (double dk : delta) x.push_back(jitter ? dk + (ud(rng) - 0.5) : dk);
    return x;
  };
  d.add(point(c + gamma, false), 1);
  d.add(point(c - gamma, false), -1);
  for (int i = 0; i < n_extra; ++i) {
    int lab = i % 2 == 0 ? 1 : -1;
    double x1 = lab > 0 ? c + gamma + 1.0 + ud(rng) : c - gamma - 1.0 - ud(rng);
    d.add(point(x1, true), lab);
  }
  d.params = {{"gamma", gamma}, {"center", c}, {"delta", delta}, {"n_extra", n_extra}, {"gamma_opt", gamma},
              {"support_indices", {0, 1}}};
  return d;
}

// Zero-mean set whose two support vectors sit at a common offset along x2.
inline Dataset gen_poor_margin_pair(const nlohmann::json& p, std::uint64_t seed) {
  const double gap = detail::param_or(p, "gap", 0.25);
  const double offset = detail::param_or(p, "offset", 2.0);
  const int n_bulk = detail::param_or(p, "n_bulk", 20);
  if (gap <= 0 || n_bulk < 0) throw ContractError("poor_margin_pair: invalid parameters");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  Dataset d;
  d.add({gap, offset}, 1);
  d.add({-gap, offset}, -1);
  for (int i = 0; i < n_bulk; ++i) {
    int lab = i % 2 == 0 ? 1 : -1;
    double x1 = gap + 0.5 + 1.5 * ud(rng);
    double x2 = offset - 2.0 - 4.0 * ud(rng);
    d.add({lab * x1, x2}, lab);
  }
  Vector mean(2, 0.0);
  for (const auto& x : d.points) mean = add(mean, x);
  mean = scale(1.0 / d.size(), mean);
  for (auto& x : d.points) x = sub(x, mean);
  d.params = {{"gap", gap},           {"offset", offset},           {"n_bulk", n_bulk},
              {"gamma_opt", gap},     {"support_indices", {0, 1}}, {"support_offset", d.points[0][1]}};
  return d;
}

inline Dataset generate(const std::string& kind, const nlohmann::json& params, std::uint64_t seed) {
  Dataset d;
  if (kind == "three_cluster") d = gen_three_cluster(params, seed);
  else if (kind == "blobs") d = gen_blobs(params, seed);
  else if (kind == "separable_random") d = gen_separable_random(params, seed);
  else if (kind == "affine_support") d = gen_affine_support(params, seed);
  else if (kind == "poor_margin_pair") d = gen_poor_margin_pair(params, seed);
  else throw ContractError("unknown dataset kind: " + kind);
  d.name = kind;
  d.seed = seed;
  return d;
}

inline std::string to_csv(const Dataset& d) {
  std::string s;
  const std::size_t n = d.dim();
  for (std::size_t j = 0; j < n; ++j) s += "x" + std::to_string(j) + ",";
  s += "label\n";
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (double v : d.points[i]) s += detail::fmt17(v) + ",";
    s += std::to_string(d.labels[i]) + "\n";
  }
  return s;
}

inline Dataset from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 1;
  // leading '#' lines carry provenance
  bool got = false;
  while ((got = static_cast<bool>(std::getline(in, line))) && !line.empty() && line[0] == '#') ++line_no;
  if (!got) throw ParseError("empty dataset file", line_no);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  if (header.size() < 2 || header.back() != "label") throw ParseError("header must be x0,...,label", line_no);
  for (std::size_t j = 0; j + 1 < header.size(); ++j)
    if (header[j] != "x" + std::to_string(j)) throw ParseError("unexpected header cell " + header[j], line_no);
  Dataset d;
  d.dim_hint = header.size() - 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (cells.size() != header.size()) throw ParseError("ragged row", line_no);
    Vector x(cells.size() - 1);
    for (std::size_t j = 0; j < x.size(); ++j) {
      const auto& c = cells[j];
      auto [ptr, ec] = std::from_chars(c.data(), c.data() + c.size(), x[j]);
      if (ec != std::errc() || ptr != c.data() + c.size() || c.empty()) throw ParseError("non-numeric cell '" + c + "'", line_no);
    }
    int label = 0;
    const auto& lc = cells.back();
    auto [ptr, ec] = std::from_chars(lc.data(), lc.data() + lc.size(), label);
    if (ec != std::errc() || ptr != lc.data() + lc.size() || lc.empty()) throw ParseError("non-integer label '" + lc + "'", line_no);
    d.add(std::move(x), label);
  }
  return d;
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f << text;
}

inline std::string read_text(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  return std::string(std::istreambuf_iterator<char>(f), {});
}

inline void write_csv(const Dataset& d, const std::string& path) { write_text(path, to_csv(d)); }

inline Dataset read_csv(const std::string& path) { return from_csv(read_text(path)); }

// Sidecar holds everything that is allowed to differ between reruns.
inline void write_sidecar(const std::string& artifact, nlohmann::json meta) {
  auto now = std::chrono::system_clock::now().time_since_epoch();
  meta["created_unix_ms"] = std::chrono::duration_cast<std::chrono::milliseconds>(now).count();
  write_text(artifact + ".meta.json", meta.dump(2) + "\n");
}

inline nlohmann::json dataset_meta(const Dataset& d) {
  return {{"name", d.name}, {"seed", d.seed}, {"params", d.params}, {"points", d.size()}, {"dim", d.dim()}};
}

inline constexpr std::size_t kCifarRecord = 3073;

struct CifarLoad {
  Dataset data;
  std::size_t total = 0;
  std::size_t kept = 0;
  std::size_t filtered = 0;
};

inline void decode_cifar_bytes(const std::string& bytes, std::pair<int, int> keep, CifarLoad& out) {
  if (bytes.size() % kCifarRecord != 0)
    throw FormatError("file length is not a multiple of 3073", bytes.size() - bytes.size() % kCifarRecord);
  for (std::size_t off = 0; off < bytes.size(); off += kCifarRecord) {
    const int label = static_cast<unsigned char>(bytes[off]);
    if (label > 9) throw FormatError("label byte > 9", off);
    ++out.total;
    if (label != keep.first && label != keep.second) {
      ++out.filtered;
      continue;
    }
    Vector x(kCifarRecord - 1);
    for (std::size_t j = 0; j < x.size(); ++j) x[j] = static_cast<unsigned char>(bytes[off + 1 + j]) / 255.0;
    out.data.add(std::move(x), label == keep.first ? 1 : -1);
    ++out.kept;
  }
}

inline CifarLoad load_cifar_binary(const std::vector<std::string>& paths, std::pair<int, int> keep = {0, 7}) {
  CifarLoad out;
  out.data.name = "cifar_binary";
  out.data.dim_hint = kCifarRecord - 1;
  for (const auto& p : paths) decode_cifar_bytes(read_text(p), keep, out);
  out.data.params = {{"keep", {keep.first, keep.second}}, {"files", paths}};
  return out;
}

// Gray average of the three planes, then box-averaged to side x side.
inline Dataset downscale_cifar(const Dataset& d, std::size_t side) {
  if (side == 0 || 32 % side != 0) throw ContractError("downscale side must divide 32");
  const std::size_t f = 32 / side;
  Dataset out;
  out.name = d.name + "_gray" + std::to_string(side);
  out.seed = d.seed;
  out.params = d.params;
  out.params["downscale_side"] = side;
  out.dim_hint = side * side;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto& x = d.points[i];
    Vector y(side * side, 0.0);
    for (std::size_t r = 0; r < 32; ++r)
      for (std::size_t c = 0; c < 32; ++c) {
        double g = (x[r * 32 + c] + x[1024 + r * 32 + c] + x[2048 + r * 32 + c]) / 3.0;
        y[(r / f) * side + c / f] += g / static_cast<double>(f * f);
      }
    out.add(std::move(y), d.labels[i]);
  }
  return out;
}

}  // namespace pexcite
