#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pexcite/pexcite.hpp"

namespace pexcite::cli {

using json = nlohmann::json;

inline constexpr const char* kVersion = "pexcite 0.1.0";

inline std::string hash_hex(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// Built-in values; a config file is merged over them, then flags.
inline json defaults(const std::string& sub) {
  json c = {
      {"dataset", {{"kind", "blobs"}, {"params", json::object()}, {"seed", 0}, {"test_seed_offset", 1000}}},
      {"arch", {{"widths", {16, 1}}, {"activation", "relu"}, {"output_bias", true}, {"hidden_bias", true}}},
      {"loss", "se"},
      {"train",
       {{"step_size", 0.01},
        {"momentum", 0.0},
        {"max_iters", 2000},
        {"batch_size", 1},
        {"grad_tol", 1e-10},
        {"weight_decay", 0.0},
        {"inner_steps", 20},
        {"optimizer", "gd"}}},
      {"radii", {0.0}},
      {"perturb", "all"},
      {"attack", {{"eps_max", 0.5}, {"steps", 40}, {"bisect_iters", 12}, {"restarts", 1}, {"threads", 1}}},
      {"raster", {{"resolution", 200}, {"pad", 1.0}}},
      {"equiv", {{"p", 2.0}, {"m", 2.0}, {"eps", {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0}}, {"dim", 5}, {"points", 20}}},
      {"cifar", {{"paths", json::array()}, {"keep", {0, 7}}, {"side", 8}}},
      {"seeds", {0}},
  };
  if (sub == "rank") {
    c["arch"] = {{"widths", {4, 4, 1}}, {"activation", "identity"}, {"output_bias", false}, {"hidden_bias", false}};
    c["loss"] = "ce";
    c["train"]["weight_decay"] = 1e-3;
    c["train"]["step_size"] = 0.1;
    c["train"]["max_iters"] = 200000;
    c["train"]["grad_tol"] = 1e-9;
  }
  if (sub == "stability" || sub == "bounds") {
    c["arch"] = {{"widths", {4, 1}}, {"activation", "relu"}, {"output_bias", false}, {"hidden_bias", true}};
    c["dataset"]["params"] = {{"n", 20}, {"sigma", 0.5}};
    c["train"]["max_iters"] = 200000;
    c["train"]["grad_tol"] = 1e-9;
  }
  if (sub == "margins" || sub == "pe-train") c["radii"] = {0.005, 0.01, 0.02};
  return c;
}

struct Context {
  std::string sub;
  json config;
  std::string hash;
  std::filesystem::path dir;
  std::ostream* out = &std::cout;
};

inline std::string csv_preamble(const Context& ctx, std::uint64_t seed) {
  return "# config_hash=" + ctx.hash + " seed=" + std::to_string(seed) + "\n";
}

inline json stamp(const Context& ctx, std::uint64_t seed, json body) {
  body["config_hash"] = ctx.hash;
  body["seed"] = seed;
  body["version"] = kVersion;
  return body;
}

inline void emit(const Context& ctx, const std::string& name, const std::string& text, std::uint64_t seed) {
  const auto path = (ctx.dir / name).string();
  write_text(path, text);
  write_sidecar(path, {{"config_hash", ctx.hash}, {"seed", seed}, {"version", kVersion}, {"subcommand", ctx.sub}});
  *ctx.out << path << "\n";
}

inline void emit_json(const Context& ctx, const std::string& name, const json& j, std::uint64_t seed) {
  emit(ctx, name, stamp(ctx, seed, j).dump(2) + "\n", seed);
}

inline TrainConfig train_config(const json& c, std::uint64_t seed) {
  const json& t = c.at("train");
  TrainConfig cfg;
  cfg.step_size = t.at("step_size");
  cfg.momentum = t.at("momentum");
  cfg.max_iters = t.at("max_iters");
  cfg.batch_size = t.at("batch_size");
  cfg.grad_tol = t.at("grad_tol");
  cfg.weight_decay = t.at("weight_decay");
  cfg.inner_steps = t.at("inner_steps");
  cfg.seed = seed;
  cfg.validate();
  return cfg;
}

inline AttackConfig attack_config(const json& c, std::uint64_t seed) {
  const json& a = c.at("attack");
  AttackConfig ac;
  ac.eps_max = a.at("eps_max");
  ac.steps = a.at("steps");
  ac.bisect_iters = a.at("bisect_iters");
  ac.restarts = a.at("restarts");
  ac.threads = a.at("threads");
  ac.seed = seed;
  return ac;
}

inline Dataset load_dataset(const json& c, int offset = 0) {
  const json& d = c.at("dataset");
  if (d.contains("path")) {
    std::string key = offset ? "test_path" : "path";
    if (!d.contains(key)) throw ContractError("dataset.test_path is required with dataset.path");
    Dataset ds = from_csv(read_text(d.at(key).get<std::string>()));
    ds.name = d.at(key).get<std::string>();
    return ds;
  }
  const std::uint64_t seed = d.at("seed").get<std::uint64_t>() + (offset ? d.at("test_seed_offset").get<std::uint64_t>() : 0);
  return pexcite::generate(d.at("kind").get<std::string>(), d.at("params"), seed);
}

inline Network build_network(const json& c, std::size_t input_dim, std::uint64_t seed) {
  const json& a = c.at("arch");
  Network net = Network::mlp(input_dim, a.at("widths").get<std::vector<std::size_t>>(),
                             Activation::parse(a.at("activation")), Activation::identity(), a.at("output_bias"),
                             a.at("hidden_bias"));
  net.init_uniform(seed);
  return net;
}

inline LossKind loss_of(const json& c) { return parse_loss(c.at("loss")); }

inline ScalarClassifier classifier(const Network& net, const Dataset& train, LossKind loss) {
  return loss == LossKind::squared_error ? ScalarClassifier::squared_error(net, train)
                                         : ScalarClassifier::logistic(net);
}

inline PerturbationSet perturbation(const json& c, std::size_t layers, double r) {
  const std::string kind = c.at("perturb");
  if (kind == "all") return PerturbationSet::uniform(layers, r);
  if (kind == "input") return PerturbationSet::input_only(layers, r);
  throw ContractError("perturb must be 'all' or 'input'");
}

inline std::string radius_tag(double r) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", r);
  return buf;
}

// Network from a checkpoint, or trained with the configured loss.
inline Network model_for(const Context& ctx, const Dataset& train, std::uint64_t seed) {
  const json& c = ctx.config;
  if (c.contains("checkpoint")) return load_checkpoint(c.at("checkpoint"));
  return gd_train(build_network(c, train.dim(), seed), train, loss_of(c), train_config(c, seed)).net;
}

inline void cmd_gen_data(const Context& ctx, std::uint64_t seed) {
  json c = ctx.config;
  c["dataset"]["seed"] = seed;
  Dataset d = load_dataset(c);
  emit(ctx, "dataset.csv", csv_preamble(ctx, seed) + to_csv(d), seed);
  emit_json(ctx, "dataset.json", dataset_meta(d), seed);
}

inline void cmd_train(const Context& ctx, std::uint64_t seed) {
  const json& c = ctx.config;
  Dataset d = load_dataset(c);
  Network net = build_network(c, d.dim(), seed);
  const std::string opt = c.at("train").value("optimizer", "gd");
  TrainResult r;
  if (opt == "gd") r = gd_train(net, d, loss_of(c), train_config(c, seed));
  else if (opt == "sgd" && loss_of(c) == LossKind::squared_error) r = sgd_train(net, d, train_config(c, seed));
  else throw ContractError("train.optimizer must be 'gd', or 'sgd' with squared error");
  DirectionResult dir = direction_convergence(r.trajectory);
  emit(ctx, "checkpoint.json", checkpoint_text(r.net, {seed, ctx.hash}), seed);
  emit(ctx, "loss_curve.csv", csv_preamble(ctx, seed) + loss_curve_csv(r.trajectory), seed);
  const char* status[] = {"converged", "not_converged", "no_divergence"};
  emit_json(ctx, "train.json",
            {{"iterations", r.iterations},
             {"final_loss", r.final_loss},
             {"final_grad_norm", r.final_grad_norm},
             {"direction_status", status[static_cast<int>(dir.status)]},
             {"direction", dir.direction}},
            seed);
}

inline TrainResult pe_run(const json& c, const Dataset& d, double r, std::uint64_t seed) {
  Network net = build_network(c, d.dim(), seed);
  return pe_train(net, d, perturbation(c, net.layer_count(), r), train_config(c, seed));
}

inline void cmd_pe_train(const Context& ctx, std::uint64_t seed) {
  const json& c = ctx.config;
  Dataset d = load_dataset(c);
  for (double r : c.at("radii").get<std::vector<double>>()) {
    TrainResult res = pe_run(c, d, r, seed);
    const std::string tag = radius_tag(r);
    emit(ctx, "checkpoint_r" + tag + ".json", checkpoint_text(res.net, {seed, ctx.hash}), seed);
    emit(ctx, "loss_curve_r" + tag + ".csv", csv_preamble(ctx, seed) + loss_curve_csv(res.trajectory), seed);
  }
}

inline void cmd_margins(const Context& ctx, std::uint64_t seed) {
  const json& c = ctx.config;
  Dataset train = load_dataset(c), test = load_dataset(c, 1);
  const AttackConfig ac = attack_config(c, seed);
  auto profile = [&](const Network& net, const std::string& tag) {
    ScalarClassifier clf = classifier(net, train, LossKind::squared_error);
    MarginProfile test_p = margin_profile(clf, test, ac), train_p = margin_profile(clf, train, ac);
    emit(ctx, "margins" + tag + ".csv", csv_preamble(ctx, seed) + margin_csv(test_p), seed);
    emit(ctx, "margins" + tag + "_train.csv", csv_preamble(ctx, seed) + margin_csv(train_p), seed);
    emit_json(ctx, "margins" + tag + ".json", {{"test", to_json(test_p)}, {"train", to_json(train_p)}}, seed);
  };
  if (c.contains("checkpoint")) {
    profile(load_checkpoint(c.at("checkpoint")), "");
    return;
  }
  for (double r : c.at("radii").get<std::vector<double>>()) profile(pe_run(c, train, r, seed).net, "_r" + radius_tag(r));
}

inline void cmd_boundary(const Context& ctx, std::uint64_t seed) {
  const json& c = ctx.config;
  Dataset d = load_dataset(c);
  Network net = model_for(ctx, d, seed);
  const std::size_t res = c.at("raster").at("resolution");
  Raster r = boundary_raster(classifier(net, d, loss_of(c)), bbox_of(d, c.at("raster").at("pad")), res, &d);
  emit(ctx, "raster.txt", "# config_hash=" + ctx.hash + " seed=" + std::to_string(seed) + "\n" + raster_text(r), seed);
  emit_json(ctx, "raster.json", {{"model_margin", r.model_margin}, {"point_margins", r.point_margins}}, seed);
}

inline void cmd_bounds(const Context& ctx, std::uint64_t seed) {
  const json& c = ctx.config;
  Dataset d = load_dataset(c);
  Network net = model_for(ctx, d, seed);
  json report = json::object();
  const double delta = c.at("train").at("step_size");
  auto attempt = [&](const char* key, auto fn) {
    try {
      report[key] = fn();
    } catch (const std::exception& e) {
      report[key] = {{"skipped", e.what()}};
    }
  };
  attempt("thm1", [&] {
    json j = to_json(thm1_bound(net, d, delta));
    j["empirical_lipschitz"] = empirical_lipschitz_exact(net, probe_region(d, 1.0), &d).value;
    return j;
  });
  attempt("thm2", [&] {
    if (net.layer_count() != 1) throw ArchitectureError("needs a linear classifier");
    return to_json(thm2_bound(net.layer(0).weights(), net.layer(0).use_bias() ? net.layer(0).bias()[0] : 0.0, d));
  });
  attempt("thm3", [&] { return to_json(thm3_bound(net, d)); });
  emit_json(ctx, "bounds.json", report, seed);
}

inline void cmd_rank(const Context& ctx, std::uint64_t seed) {
  const json& c = ctx.config;
  Dataset d = load_dataset(c);
  TrainResult r = gd_train(build_network(c, d.dim(), seed), d, loss_of(c), train_config(c, seed));
  emit_json(ctx, "rank.json",
            {{"layers", to_json(rank_profile(weight_matrices(r.net)))},
             {"iterations", r.iterations},
             {"final_grad_norm", r.final_grad_norm}},
            seed);
}

inline void cmd_stability(const Context& ctx, std::uint64_t seed) {
  const json& c = ctx.config;
  Dataset d = load_dataset(c);
  Network net = model_for(ctx, d, seed);
  emit_json(ctx, "stability.json", to_json(stability_check(net, d, c.at("train").at("step_size"))), seed);
}

inline void cmd_equiv(const Context& ctx, std::uint64_t seed) {
  const json& e = ctx.config.at("equiv");
  const std::size_t n = e.at("dim"), m = e.at("points");
  const double p = e.at("p").is_string() ? kInf : e.at("p").get<double>(), mm = e.at("m");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  Matrix X(m, n);
  Vector y(m);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) X(i, j) = nd(rng);
    y[i] = nd(rng);
  }
  std::string csv = csv_preamble(ctx, seed) + "epsilon,lambda,residual\n";
  json rows = json::array();
  for (double eps : e.at("eps").get<std::vector<double>>()) {
    EquivalenceResult r = equivalent_lambda(eps, p, mm, X, y);
    csv += detail::fmt17(eps) + "," + detail::fmt17(r.lambda) + "," + detail::fmt17(r.residual) + "\n";
    rows.push_back(to_json(r));
  }
  emit(ctx, "equiv.csv", csv, seed);
  emit_json(ctx, "equiv.json", {{"rows", rows}}, seed);
}

inline void cmd_cifar2(const Context& ctx, std::uint64_t seed) {
  const json& cc = ctx.config.at("cifar");
  auto keep = cc.at("keep").get<std::vector<int>>();
  if (keep.size() != 2) throw ContractError("cifar.keep needs two class ids");
  CifarLoad l = load_cifar_binary(cc.at("paths").get<std::vector<std::string>>(), {keep[0], keep[1]});
  const std::size_t side = cc.at("side");
  Dataset d = side == 32 ? l.data : downscale_cifar(l.data, side);
  emit(ctx, "cifar2.csv", csv_preamble(ctx, seed) + to_csv(d), seed);
  emit_json(ctx, "cifar2.json", {{"total", l.total}, {"kept", l.kept}, {"filtered", l.filtered}, {"dim", d.dim()}},
            seed);
}

inline std::vector<double> parse_list(const std::string& s) {
  std::vector<double> v;
  std::stringstream ss(s);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    std::size_t used = 0;
    double x = std::stod(cell, &used);
    if (used != cell.size()) throw ContractError("bad number in list: " + cell);
    v.push_back(x);
  }
  if (v.empty()) throw ContractError("empty list");
  return v;
}

// Resolves the configuration, creates the run directory, and runs the subcommand per seed.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Persistent-excitation training and robustness laboratory"};
  app.require_subcommand(1);
  std::string config_path, out_dir = "runs", radii, loss, checkpoint;
  std::uint64_t seed = 0;
  app.add_option("--config", config_path, "JSON config file (comments allowed)");
  auto* seed_opt = app.add_option("--seed", seed, "single seed, replaces the config seed list");
  app.add_option("--out", out_dir, "output root; each run writes to <out>/<subcommand>-<config hash>/");
  app.add_option("--radii", radii, "comma-separated excitation radii");
  app.add_option("--loss", loss, "se or ce")->check(CLI::IsMember({"se", "ce"}));
  app.add_option("--checkpoint", checkpoint, "use this network instead of training");
  app.fallthrough();
  const std::vector<std::pair<std::string, void (*)(const Context&, std::uint64_t)>> cmds = {
      {"train", cmd_train},     {"pe-train", cmd_pe_train}, {"margins", cmd_margins},
      {"boundary", cmd_boundary}, {"bounds", cmd_bounds},     {"rank", cmd_rank},
      {"equiv", cmd_equiv},     {"stability", cmd_stability}, {"gen-data", cmd_gen_data},
      {"cifar2", cmd_cifar2}};
  for (const auto& [name, fn] : cmds) app.add_subcommand(name);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }
  try {
    Context ctx;
    ctx.out = &out;
    ctx.sub = app.get_subcommands().front()->get_name();
    json c = defaults(ctx.sub);
    if (!config_path.empty()) c.merge_patch(json::parse(read_text(config_path), nullptr, true, true));
    if (*seed_opt) c["seeds"] = {seed};
    if (!radii.empty()) c["radii"] = parse_list(radii);
    if (!loss.empty()) c["loss"] = loss;
    if (!checkpoint.empty()) c["checkpoint"] = checkpoint;
    if (!c.at("seeds").is_array() || c.at("seeds").empty()) throw ContractError("seeds must be a nonempty list");
    if (c.contains("checkpoint") && !std::filesystem::exists(c.at("checkpoint").get<std::string>()))
      throw ContractError("checkpoint file not found");
    if (c.at("dataset").contains("path") && !std::filesystem::exists(c.at("dataset").at("path").get<std::string>()))
      throw ContractError("dataset file not found");
    c["subcommand"] = ctx.sub;
    ctx.hash = hash_hex(c.dump());
    ctx.config = c;
    ctx.dir = std::filesystem::path(out_dir) / (ctx.sub + "-" + ctx.hash);
    std::filesystem::create_directories(ctx.dir);
    write_text((ctx.dir / "config.json").string(), c.dump(2) + "\n");
    const auto seeds = c.at("seeds").get<std::vector<std::uint64_t>>();
    auto fn = std::find_if(cmds.begin(), cmds.end(), [&](const auto& p) { return p.first == ctx.sub; })->second;
    const auto root = ctx.dir;
    for (auto s : seeds) {
      if (seeds.size() > 1) {
        ctx.dir = root / ("seed-" + std::to_string(s));
        std::filesystem::create_directories(ctx.dir);
      }
      fn(ctx, s);
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace pexcite::cli
