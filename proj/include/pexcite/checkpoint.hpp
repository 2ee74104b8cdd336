#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "pexcite/data.hpp"
#include "pexcite/errors.hpp"
#include "pexcite/net.hpp"

namespace pexcite {

struct CheckpointInfo {
  std::uint64_t seed = 0;
  std::string config_hash;
};

namespace detail {
inline std::string json_array17(const std::vector<double>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ", ";
    s += fmt17(v[i]);
  }
  return s + "]";
}
}  // namespace detail

// Numbers are written with 17 significant digits so a read/write cycle is exact.
inline std::string checkpoint_text(const Network& net, const CheckpointInfo& info = {}) {
  std::string s = "{\n  \"format\": \"pexcite-checkpoint-1\",\n";
  s += "  \"seed\": " + std::to_string(info.seed) + ",\n";
  s += "  \"config_hash\": " + nlohmann::json(info.config_hash).dump() + ",\n";
  s += "  \"input_dim\": " + std::to_string(net.input_dim()) + ",\n  \"layers\": [\n";
  for (std::size_t j = 0; j < net.layer_count(); ++j) {
    const Layer& l = net.layer(j);
    s += "    {\"kind\": \"";
    s += l.kind() == LayerKind::dense ? "dense" : "conv";
    s += "\", \"activation\": \"" + l.activation().name() + "\", \"slope\": " + detail::fmt17(l.activation().slope);
    s += ", \"use_bias\": ";
    s += l.use_bias() ? "true" : "false";
    if (l.kind() == LayerKind::dense) {
      s += ", \"shape\": [" + std::to_string(l.output_dim()) + ", " + std::to_string(l.input_dim()) + "]";
    } else {
      const auto& g = l.geometry();
      s += ", \"geometry\": {\"in_channels\": " + std::to_string(g.in_channels) +
           ", \"height\": " + std::to_string(g.height) + ", \"width\": " + std::to_string(g.width) +
           ", \"out_channels\": " + std::to_string(g.out_channels) + ", \"kernel_h\": " + std::to_string(g.kernel_h) +
           ", \"kernel_w\": " + std::to_string(g.kernel_w) + "}";
    }
    s += ",\n     \"weights\": " + detail::json_array17(l.weights());
    s += ",\n     \"bias\": " + detail::json_array17(l.use_bias() ? l.bias() : std::vector<double>{}) + "}";
    s += j + 1 < net.layer_count() ? ",\n" : "\n";
  }
  return s + "  ]\n}\n";
}

inline Network checkpoint_from_text(const std::string& text, CheckpointInfo* info = nullptr) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("checkpoint: ") + e.what(), e.byte);
  }
  try {
    if (j.at("format") != "pexcite-checkpoint-1") throw FormatError("checkpoint: unknown format", 0);
    if (info) {
      info->seed = j.at("seed").get<std::uint64_t>();
      info->config_hash = j.at("config_hash").get<std::string>();
    }
    std::vector<Layer> layers;
    for (const auto& jl : j.at("layers")) {
      Activation act = Activation::parse(jl.at("activation").get<std::string>(), jl.at("slope").get<double>());
      const bool use_bias = jl.at("use_bias").get<bool>();
      Layer l = [&] {
        if (jl.at("kind") == "dense") {
          auto shape = jl.at("shape").get<std::vector<std::size_t>>();
          if (shape.size() != 2) throw FormatError("checkpoint: dense shape needs two entries", 0);
          return Layer::dense(shape[1], shape[0], act, use_bias);
        }
        const auto& g = jl.at("geometry");
        ConvGeometry geom{g.at("in_channels"), g.at("height"),   g.at("width"),
                          g.at("out_channels"), g.at("kernel_h"), g.at("kernel_w")};
        return Layer::conv(geom, act, use_bias);
      }();
      auto w = jl.at("weights").get<std::vector<double>>();
      auto b = jl.at("bias").get<std::vector<double>>();
      if (w.size() != l.weights().size() || (use_bias && b.size() != l.bias().size()))
        throw FormatError("checkpoint: parameter count does not match shape", 0);
      l.weights() = std::move(w);
      if (use_bias) l.bias() = std::move(b);
      layers.push_back(std::move(l));
    }
    return Network(j.at("input_dim").get<std::size_t>(), std::move(layers));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: ") + e.what(), 0);
  }
}

inline void save_checkpoint(const std::string& path, const Network& net, const CheckpointInfo& info = {}) {
  write_text(path, checkpoint_text(net, info));
}

inline Network load_checkpoint(const std::string& path, CheckpointInfo* info = nullptr) {
  return checkpoint_from_text(read_text(path), info);
}

}  // namespace pexcite
