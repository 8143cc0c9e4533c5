#pragma once

// Experiment configuration, per-seed pipelines and the files they leave
// behind: run_<seed>.csv, events_<seed>.csv, scan_<seed>.csv,
// replication_<seed>.csv, summary.csv and manifest.json.

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "biodyn/dataio.hpp"
#include "biodyn/efficiency.hpp"
#include "biodyn/error.hpp"
#include "biodyn/lifecycle.hpp"
#include "biodyn/netcore.hpp"
#include "biodyn/network_io.hpp"
#include "biodyn/neuronstats.hpp"
#include "biodyn/oracle.hpp"
#include "biodyn/surgery.hpp"
#include "biodyn/trainer.hpp"

#ifndef BIODYN_VERSION
#define BIODYN_VERSION "0.1.0"
#endif
#ifndef BIODYN_REVISION
#define BIODYN_REVISION "unknown"
#endif

namespace biodyn {

using ojson = nlohmann::ordered_json;

enum class ExperimentKind { Train, Scan, PruneOnce, Replicate, Combined, Pdf };

inline const char* to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::Train: return "train";
    case ExperimentKind::Scan: return "scan";
    case ExperimentKind::PruneOnce: return "prune";
    case ExperimentKind::Replicate: return "replicate";
    case ExperimentKind::Combined: return "combined";
    case ExperimentKind::Pdf: return "pdf";
  }
  return "?";
}

inline ExperimentKind parse_kind(const std::string& s) {
  for (auto k : {ExperimentKind::Train, ExperimentKind::Scan, ExperimentKind::PruneOnce, ExperimentKind::Replicate,
                 ExperimentKind::Combined, ExperimentKind::Pdf})
    if (s == to_string(k)) return k;
  throw Error(ErrorClass::Config, "unknown experiment kind '" + s + "'");
}

inline LossKind parse_loss_kind(const std::string& s) {
  if (s == "cross_entropy") return LossKind::CrossEntropy;
  if (s == "mse") return LossKind::BoundaryMSE;
  throw Error(ErrorClass::Config, "unknown loss '" + s + "' (cross_entropy|mse)");
}

/// Named architectures: 784 inputs, two tanh layers, 10 linear outputs.
inline std::vector<std::size_t> preset_layers(const std::string& name) {
  if (name == "N1") return {784, 5, 20, 10};
  if (name == "N2") return {784, 10, 10, 10};
  if (name == "N3") return {784, 20, 5, 10};
  if (name == "N4") return {784, 100, 5, 10};
  throw Error(ErrorClass::Config, "unknown architecture preset '" + name + "' (N1..N4)");
}

// ---------------------------------------------------------------------------
// Configuration

struct DataConfig {
  std::string source = "mnist";  // or "synthetic"
  std::string dir;               // empty: $BIODYN_MNIST_DIR
  std::size_t train_size = 10000;
  std::size_t stats_size = 0;    // 0: the whole training subset
  std::size_t eval_size = 2000;  // leading samples of the training subset
  std::size_t synthetic_dim = 8;
  std::uint64_t synthetic_seed = 1;
};

struct ScanConfig {
  std::size_t layer = 1;
  std::vector<DeathMethod> methods = {DeathMethod::A1, DeathMethod::A3};
  std::vector<std::uint64_t> at_steps;  // empty: after the last step
};

struct PruneConfig {
  std::size_t layer = 1;
  DeathMethod method = DeathMethod::A1;
  std::size_t count = 1;
  std::uint64_t post_steps = 0;
};

struct GrowConfig {
  std::size_t layer = 1;
  SplitRule rule = BetaSplit{};
  DeathMethod efficiency = DeathMethod::A3;  // ranking used to pick the parent
  std::size_t count = 1;
  std::uint64_t post_steps = 0;
  std::vector<std::uint64_t> horizons = {10, 100, 1000};  // pdf only
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::Train;
  std::string architecture = "N1";  // preset name or "custom"
  std::vector<std::size_t> layer_sizes = preset_layers("N1");
  double init_scale = 1.0;
  std::string network;  // optional starting network (JSON); replaces the initializer
  std::vector<std::uint64_t> seeds = {1};
  Hyperparams hyper;
  DataConfig data;
  std::uint64_t eval_every = 0;  // 0: no eval columns
  std::uint64_t smoothing_window = 100;
  bool save_networks = false;
  ScanConfig scan;
  PruneConfig prune;
  GrowConfig grow;
  LifecycleConfig lifecycle;
  std::string output_dir = "out";

  void validate() const {
    hyper.validate();
    lifecycle.validate();
    require(layer_sizes.size() >= 3, ErrorClass::Config, "need at least one hidden layer");
    for (auto s : layer_sizes) require(s > 0, ErrorClass::Config, "layer sizes must be positive");
    require(!seeds.empty(), ErrorClass::Config, "no seeds");
    require(std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() == seeds.size(), ErrorClass::Config,
            "duplicate seeds");
    require(init_scale >= 0.0, ErrorClass::Config, "init_scale must be nonnegative");
    require(data.source == "mnist" || data.source == "synthetic", ErrorClass::Config,
            "data.source must be mnist or synthetic");
    require(data.train_size >= hyper.batch_size, ErrorClass::Config, "training subset smaller than one batch");
    require(data.stats_size <= data.train_size && data.eval_size <= data.train_size, ErrorClass::Config,
            "stats/eval subsets must fit in the training subset");
    require(eval_every == 0 || data.eval_size > 0, ErrorClass::Config, "eval_every needs a nonempty eval subset");
    auto hidden = [&](std::size_t l) { return l >= 1 && l + 1 < layer_sizes.size(); };
    require(hidden(scan.layer) && hidden(prune.layer) && hidden(grow.layer) && hidden(lifecycle.layer),
            ErrorClass::Config, "target layers must be hidden (1.." + std::to_string(layer_sizes.size() - 2) + ")");
    for (auto s : scan.at_steps) require(s <= hyper.steps, ErrorClass::Config, "scan step beyond the run");
    require(!scan.methods.empty(), ErrorClass::Config, "scan needs at least one method");
    require(!grow.horizons.empty(), ErrorClass::Config, "pdf needs at least one horizon");
  }
};

namespace detail {

// Reads `key` from `j` into `out` if present; type errors become config errors.
template <class T>
void read_key(const ojson& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorClass::Config, std::string("config key '") + key + "': " + e.what());
  }
}

inline void check_keys(const ojson& j, const std::string& where, std::initializer_list<const char*> allowed) {
  require(j.is_object(), ErrorClass::Config, where + " must be an object");
  for (const auto& [k, v] : j.items()) {
    const bool ok = std::any_of(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; });
    require(ok, ErrorClass::Config, "unknown config key '" + where + "." + k + "'");
  }
}

inline SplitRule parse_split_rule(const std::string& name, double alpha, double beta, double init_scale) {
  if (name == "beta") return BetaSplit{alpha, beta};
  if (name == "equal") return EqualSplit{};
  if (name == "random_bit") return RandomBit{};
  if (name == "random_neuron") return RandomNeuron{init_scale};
  throw Error(ErrorClass::Config, "unknown split rule '" + name + "' (beta|equal|random_bit|random_neuron)");
}

inline const char* split_rule_name(const SplitRule& r) {
  switch (r.index()) {
    case 0: return "equal";
    case 1: return "beta";
    case 2: return "random_bit";
    default: return "random_neuron";
  }
}

inline std::vector<std::string> method_names(const std::vector<DeathMethod>& ms) {
  std::vector<std::string> out;
  for (auto m : ms) out.emplace_back(to_string(m));
  return out;
}

}  // namespace detail

inline ojson config_to_json(const ExperimentConfig& c) {
  ojson j;
  j["kind"] = to_string(c.kind);
  if (c.architecture == "custom") j["architecture"] = c.layer_sizes;
  else j["architecture"] = c.architecture;
  j["init_scale"] = c.init_scale;
  j["network"] = c.network;
  j["seeds"] = c.seeds;
  j["output_dir"] = c.output_dir;
  j["eval_every"] = c.eval_every;
  j["smoothing_window"] = c.smoothing_window;
  j["save_networks"] = c.save_networks;
  j["hyper"] = {{"learning_rate", c.hyper.learning_rate}, {"momentum", c.hyper.momentum},
                {"l2", c.hyper.l2},                       {"batch_size", c.hyper.batch_size},
                {"steps", c.hyper.steps},                 {"loss", to_string(c.hyper.loss_kind)}};
  j["data"] = {{"source", c.data.source},         {"dir", c.data.dir},
               {"train_size", c.data.train_size}, {"stats_size", c.data.stats_size},
               {"eval_size", c.data.eval_size},   {"synthetic_dim", c.data.synthetic_dim},
               {"synthetic_seed", c.data.synthetic_seed}};
  j["scan"] = {{"layer", c.scan.layer}, {"methods", detail::method_names(c.scan.methods)}, {"at_steps", c.scan.at_steps}};
  j["prune"] = {{"layer", c.prune.layer},
                {"method", to_string(c.prune.method)},
                {"count", c.prune.count},
                {"post_steps", c.prune.post_steps}};
  ojson g = {{"layer", c.grow.layer}, {"rule", detail::split_rule_name(c.grow.rule)}};
  if (const auto* b = std::get_if<BetaSplit>(&c.grow.rule)) {
    g["alpha"] = b->alpha;
    g["beta"] = b->beta;
  }
  if (const auto* r = std::get_if<RandomNeuron>(&c.grow.rule)) g["init_scale"] = r->init_scale;
  g["efficiency"] = to_string(c.grow.efficiency);
  g["count"] = c.grow.count;
  g["post_steps"] = c.grow.post_steps;
  g["horizons"] = c.grow.horizons;
  j["grow"] = g;
  const auto& lc = c.lifecycle;
  const auto* lb = std::get_if<BetaSplit>(&lc.split_rule);
  j["lifecycle"] = {{"period", lc.period},
                    {"cutoff", lc.cutoff},
                    {"max_fraction", lc.max_fraction},
                    {"death_method", to_string(lc.death_method)},
                    {"split_alpha", lb ? lb->alpha : 0.01},
                    {"split_beta", lb ? lb->beta : 0.01},
                    {"layer", lc.layer}};
  return j;
}

/// Parses a config object, or the "config" member of a manifest. Missing
/// keys keep their defaults; unknown keys are rejected.
inline ExperimentConfig config_from_json(const ojson& root) {
  const ojson& j = root.contains("manifest_version") && root.contains("config") ? root.at("config") : root;
  detail::check_keys(j, "config",
                     {"kind", "architecture", "init_scale", "network", "seeds", "output_dir", "eval_every",
                      "smoothing_window", "save_networks", "hyper", "data", "scan", "prune", "grow", "lifecycle"});
  ExperimentConfig c;
  std::string s;
  if (j.contains("kind")) {
    detail::read_key(j, "kind", s);
    c.kind = parse_kind(s);
  }
  if (j.contains("architecture")) {
    const auto& a = j.at("architecture");
    if (a.is_string()) {
      c.architecture = a.get<std::string>();
      c.layer_sizes = preset_layers(c.architecture);
    } else {
      c.architecture = "custom";
      detail::read_key(j, "architecture", c.layer_sizes);
    }
  }
  detail::read_key(j, "init_scale", c.init_scale);
  detail::read_key(j, "network", c.network);
  detail::read_key(j, "seeds", c.seeds);
  detail::read_key(j, "output_dir", c.output_dir);
  detail::read_key(j, "eval_every", c.eval_every);
  detail::read_key(j, "smoothing_window", c.smoothing_window);
  detail::read_key(j, "save_networks", c.save_networks);
  if (j.contains("hyper")) {
    const auto& h = j.at("hyper");
    detail::check_keys(h, "hyper", {"learning_rate", "momentum", "l2", "batch_size", "steps", "loss"});
    detail::read_key(h, "learning_rate", c.hyper.learning_rate);
    detail::read_key(h, "momentum", c.hyper.momentum);
    detail::read_key(h, "l2", c.hyper.l2);
    detail::read_key(h, "batch_size", c.hyper.batch_size);
    detail::read_key(h, "steps", c.hyper.steps);
    if (h.contains("loss")) {
      detail::read_key(h, "loss", s);
      c.hyper.loss_kind = parse_loss_kind(s);
    }
  }
  if (j.contains("data")) {
    const auto& d = j.at("data");
    detail::check_keys(d, "data",
                       {"source", "dir", "train_size", "stats_size", "eval_size", "synthetic_dim", "synthetic_seed"});
    detail::read_key(d, "source", c.data.source);
    detail::read_key(d, "dir", c.data.dir);
    detail::read_key(d, "train_size", c.data.train_size);
    detail::read_key(d, "stats_size", c.data.stats_size);
    detail::read_key(d, "eval_size", c.data.eval_size);
    detail::read_key(d, "synthetic_dim", c.data.synthetic_dim);
    detail::read_key(d, "synthetic_seed", c.data.synthetic_seed);
  }
  if (j.contains("scan")) {
    const auto& sc = j.at("scan");
    detail::check_keys(sc, "scan", {"layer", "methods", "at_steps"});
    detail::read_key(sc, "layer", c.scan.layer);
    detail::read_key(sc, "at_steps", c.scan.at_steps);
    if (sc.contains("methods")) {
      std::vector<std::string> names;
      detail::read_key(sc, "methods", names);
      c.scan.methods.clear();
      for (const auto& n : names) c.scan.methods.push_back(parse_death_method(n));
    }
  }
  if (j.contains("prune")) {
    const auto& p = j.at("prune");
    detail::check_keys(p, "prune", {"layer", "method", "count", "post_steps"});
    detail::read_key(p, "layer", c.prune.layer);
    if (p.contains("method")) {
      detail::read_key(p, "method", s);
      c.prune.method = parse_death_method(s);
    }
    detail::read_key(p, "count", c.prune.count);
    detail::read_key(p, "post_steps", c.prune.post_steps);
  }
  if (j.contains("grow")) {
    const auto& g = j.at("grow");
    detail::check_keys(g, "grow",
                       {"layer", "rule", "alpha", "beta", "init_scale", "efficiency", "count", "post_steps", "horizons"});
    detail::read_key(g, "layer", c.grow.layer);
    std::string rule = detail::split_rule_name(c.grow.rule);
    double alpha = 0.01, beta = 0.01, scale = c.init_scale;
    detail::read_key(g, "rule", rule);
    detail::read_key(g, "alpha", alpha);
    detail::read_key(g, "beta", beta);
    detail::read_key(g, "init_scale", scale);
    c.grow.rule = detail::parse_split_rule(rule, alpha, beta, scale);
    if (g.contains("efficiency")) {
      detail::read_key(g, "efficiency", s);
      c.grow.efficiency = parse_death_method(s);
    }
    detail::read_key(g, "count", c.grow.count);
    detail::read_key(g, "post_steps", c.grow.post_steps);
    detail::read_key(g, "horizons", c.grow.horizons);
  }
  if (j.contains("lifecycle")) {
    const auto& l = j.at("lifecycle");
    detail::check_keys(l, "lifecycle",
                       {"period", "cutoff", "max_fraction", "death_method", "split_alpha", "split_beta", "layer"});
    detail::read_key(l, "period", c.lifecycle.period);
    detail::read_key(l, "cutoff", c.lifecycle.cutoff);
    detail::read_key(l, "max_fraction", c.lifecycle.max_fraction);
    detail::read_key(l, "layer", c.lifecycle.layer);
    if (l.contains("death_method")) {
      detail::read_key(l, "death_method", s);
      c.lifecycle.death_method = parse_death_method(s);
    }
    BetaSplit b;
    detail::read_key(l, "split_alpha", b.alpha);
    detail::read_key(l, "split_beta", b.beta);
    c.lifecycle.split_rule = b;
  }
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorClass::Io, "cannot open config " + path.string());
  ojson j;
  try {
    j = ojson::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorClass::Config, "config " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

// ---------------------------------------------------------------------------
// Data

struct ExperimentData {
  Dataset train;
  Dataset stats;  // efficiencies, scans and loss changes
  Dataset eval;   // eval columns of the run record
  std::string origin;
  std::string fingerprint;  // crc32 of labels and pixels of the training subset
};

inline std::string dataset_fingerprint(const Dataset& d) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(d.labels.data()),
              static_cast<uInt>(d.labels.size() * sizeof(Label)));
  crc = crc32(crc, reinterpret_cast<const Bytef*>(d.inputs.data()),
              static_cast<uInt>(d.inputs.size() * static_cast<Eigen::Index>(sizeof(double))));
  char buf[16];
  std::snprintf(buf, sizeof buf, "%08lx", static_cast<unsigned long>(crc));
  return buf;
}

inline std::filesystem::path resolve_mnist_dir(const DataConfig& dc) {
  if (!dc.dir.empty()) return dc.dir;
  if (const char* env = std::getenv(kMnistDirEnv); env && *env) return env;
  throw Error(ErrorClass::Io, std::string("no MNIST directory: set data.dir, --data-dir or ") + kMnistDirEnv +
                                  " (mnist-fetch downloads one)");
}

inline ExperimentData load_experiment_data(const DataConfig& dc) {
  ExperimentData out;
  Dataset full;
  if (dc.source == "synthetic") {
    full = synthetic_duplicate_dataset(dc.synthetic_dim, dc.train_size, dc.synthetic_seed);
    out.origin = "synthetic:" + std::to_string(dc.synthetic_dim) + ":" + std::to_string(dc.synthetic_seed);
  } else {
    const auto dir = resolve_mnist_dir(dc);
    full = load_mnist_dir(dir);
    out.origin = "mnist:" + dir.string();
  }
  require(full.size() >= dc.train_size, ErrorClass::Config,
          "dataset has " + std::to_string(full.size()) + " samples, train_size asks for " +
              std::to_string(dc.train_size));
  out.train = head(full, dc.train_size);
  out.stats = dc.stats_size == 0 ? out.train : head(out.train, dc.stats_size);
  if (dc.eval_size > 0) out.eval = head(out.train, dc.eval_size);
  out.fingerprint = dataset_fingerprint(out.train);
  return out;
}

// ---------------------------------------------------------------------------
// Per-seed pipelines

struct PdfRow {
  std::string rule;  // B1..B5
  std::string split;
  std::uint64_t horizon = 0;
  double delta_loss = 0.0;
};

struct ScanAt {
  std::uint64_t step = 0;
  ScanResult scan;
};

struct SeedResult {
  std::uint64_t seed = 0;
  Network net;
  RunRecord record;
  std::vector<ScanAt> scans;
  std::vector<PdfRow> pdf;
};

/// Mean eval loss over the rows in the final `window` steps of the record.
inline std::optional<double> smoothed_final_eval(const RunRecord& r, std::uint64_t window) {
  if (r.rows.empty()) return std::nullopt;
  const std::uint64_t last = r.rows.back().step;
  double sum = 0.0;
  std::size_t n = 0;
  for (auto it = r.rows.rbegin(); it != r.rows.rend() && last - it->step < window; ++it)
    if (it->eval_loss) {
      sum += *it->eval_loss;
      ++n;
    }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

/// Index of the most efficient neuron (largest finite value, lowest index on ties).
inline std::size_t most_efficient(const EfficiencyReport& r) {
  std::optional<std::size_t> best;
  for (std::size_t k = 0; k < r.values.size(); ++k)
    if (std::isfinite(r.values[k]) && (!best || r.values[k] > r.values[*best])) best = k;
  require(best.has_value(), ErrorClass::Numeric, "no finite efficiency in layer");
  return *best;
}

namespace detail {

inline Network initial_network(const ExperimentConfig& c, std::uint64_t seed) {
  if (!c.network.empty()) {
    Network net = load_network(c.network);
    require(net.layer_sizes() == c.layer_sizes || c.architecture == "custom", ErrorClass::Config,
            "network file does not match the configured architecture");
    return net;
  }
  return init_network(c.layer_sizes, seed, c.init_scale);
}

inline std::size_t pick_parent(const Network& net, const Dataset& stats, std::size_t layer, DeathMethod m) {
  const auto [ls, ds] = collect_stats(net, stats, layer);
  return most_efficient(efficiency_for(m, ls, ds, net.weights(layer + 1)));
}

// Removes the least efficient neuron, recording the measured loss change.
inline void prune_once(Trainer& t, const Dataset& stats, const PruneConfig& p, LossKind kind) {
  const std::size_t l = p.layer;
  const auto [ls, ds] = collect_stats(t.net(), stats, l);
  const auto eff = efficiency_for(p.method, ls, ds, t.net().weights(l + 1));
  const std::size_t k = least_efficient(eff);
  const LinearRelation rel =
      p.method == DeathMethod::A3 ? relation_A3(k, ls, eff) : relation_for(p.method, k, ls, ds, t.net().weights(l + 1));
  const DeathPlan plan = make_death_plan(rel, ls);
  const double delta = delta_loss_on_removal(t.net(), stats, kind, plan);
  t.net() = apply_death(std::move(t.net()), plan);
  erase_neuron(t.velocity(), l, k);
  t.record().events.push_back(Event{t.step(), "death", l, k,
                                    std::string(to_string(p.method)) + ";efficiency=" + fmt_double(eff.values[k]) +
                                        ";delta_loss=" + fmt_double(delta)});
}

inline void grow_once(Trainer& t, const Dataset& stats, const GrowConfig& g, std::uint64_t seed, std::size_t index) {
  const std::size_t l = g.layer;
  const std::size_t parent = pick_parent(t.net(), stats, l, g.efficiency);
  const std::uint64_t child_seed = make_rng(seed, Stream::Surgery, index)();
  t.net() = replicate_split(std::move(t.net()), l, parent, g.rule, child_seed);
  append_neuron(t.velocity(), l);
  t.record().events.push_back(Event{t.step(), "replicate", l, parent, to_string(g.rule)});
}

}  // namespace detail

/// The replication variants compared by the pdf study; B5 adds nothing.
inline std::vector<std::pair<std::string, std::optional<SplitRule>>> pdf_rules(double init_scale) {
  return {{"B1", BetaSplit{0.01, 0.01}},
          {"B2", BetaSplit{1.0, 1.0}},
          {"B3", BetaSplit{100.0, 100.0}},
          {"B4", RandomNeuron{init_scale}},
          {"B5", std::nullopt}};
}

inline SeedResult run_seed(const ExperimentConfig& c, const ExperimentData& data, std::uint64_t seed) {
  Hyperparams hyper = c.hyper;
  hyper.seed = seed;
  const EvalOptions eval{c.eval_every > 0 ? &data.eval : nullptr, c.eval_every};
  SeedResult out;
  out.seed = seed;
  Network net = detail::initial_network(c, seed);
  require(net.input_dim() == data.train.dim(), ErrorClass::Config,
          "network input dim " + std::to_string(net.input_dim()) + " differs from data dim " +
              std::to_string(data.train.dim()));
  require(net.output_dim() >= data.train.n_classes, ErrorClass::Config, "fewer outputs than classes");

  if (c.kind == ExperimentKind::Combined) {
    auto [n, r] = run_with_lifecycle(std::move(net), data.train, hyper, c.lifecycle, data.stats, eval);
    out.net = std::move(n);
    out.record = std::move(r);
    return out;
  }

  Trainer t(std::move(net), data.train, hyper, eval);
  switch (c.kind) {
    case ExperimentKind::Scan: {
      std::vector<std::uint64_t> at = c.scan.at_steps;
      if (at.empty()) at.push_back(hyper.steps);
      std::sort(at.begin(), at.end());
      at.erase(std::unique(at.begin(), at.end()), at.end());
      for (auto s : at) {
        t.run(s - t.step());
        for (auto m : c.scan.methods)
          out.scans.push_back(ScanAt{s, scan_layer(t.net(), data.stats, c.scan.layer, m, hyper.loss_kind)});
      }
      t.run(hyper.steps - t.step());
      break;
    }
    case ExperimentKind::PruneOnce:
      t.run(hyper.steps);
      for (std::size_t i = 0; i < c.prune.count; ++i) detail::prune_once(t, data.stats, c.prune, hyper.loss_kind);
      t.run(c.prune.post_steps);
      break;
    case ExperimentKind::Replicate:
      t.run(hyper.steps);
      for (std::size_t i = 0; i < c.grow.count; ++i) detail::grow_once(t, data.stats, c.grow, seed, i);
      t.run(c.grow.post_steps);
      break;
    case ExperimentKind::Pdf: {
      t.run(hyper.steps);
      const double base = mean_loss(t.net(), data.stats, hyper.loss_kind);
      const std::size_t parent = detail::pick_parent(t.net(), data.stats, c.grow.layer, c.grow.efficiency);
      std::vector<std::uint64_t> hs = c.grow.horizons;
      std::sort(hs.begin(), hs.end());
      const std::uint64_t child_seed = make_rng(seed, Stream::Surgery)();
      for (const auto& [name, rule] : pdf_rules(c.init_scale)) {
        Trainer fork = t;
        if (rule) {
          fork.net() = replicate_split(std::move(fork.net()), c.grow.layer, parent, *rule, child_seed);
          append_neuron(fork.velocity(), c.grow.layer);
        }
        std::uint64_t done = 0;
        for (auto h : hs) {
          fork.run(h - done);
          done = h;
          out.pdf.push_back(PdfRow{name, rule ? to_string(*rule) : "none", h,
                                   mean_loss(fork.net(), data.stats, hyper.loss_kind) - base});
        }
      }
      t.record().events.push_back(Event{t.step(), "pdf_parent", c.grow.layer, parent, to_string(c.grow.efficiency)});
      break;
    }
    default:
      t.run(hyper.steps);
  }
  out.net = std::move(t.net());
  out.record = std::move(t.record());
  return out;
}

// ---------------------------------------------------------------------------
// Output

namespace detail {

inline std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream out(p, std::ios::binary);
  require(out.good(), ErrorClass::Io, "cannot write " + p.string());
  return out;
}

struct MeanStd {
  double mean = 0.0, sd = 0.0;
  std::size_t n = 0;
};

// Sample standard deviation; 0 for a single value.
inline MeanStd mean_std(const std::vector<double>& v) {
  MeanStd r;
  r.n = v.size();
  if (v.empty()) return r;
  for (double x : v) r.mean += x;
  r.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - r.mean) * (x - r.mean);
    r.sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return r;
}

inline std::string opt(const std::optional<double>& v) { return v ? fmt_double(*v) : std::string(); }

inline void write_loss_summary(const std::vector<SeedResult>& runs, std::ostream& out) {
  out << "step,n,train_loss_mean,train_loss_std,eval_loss_mean,eval_loss_std\n";
  std::map<std::uint64_t, std::pair<std::vector<double>, std::vector<double>>> by_step;
  for (const auto& r : runs)
    for (const auto& row : r.record.rows) {
      auto& [tr, ev] = by_step[row.step];
      tr.push_back(row.train_loss);
      if (row.eval_loss) ev.push_back(*row.eval_loss);
    }
  for (const auto& [step, v] : by_step) {
    const auto tr = mean_std(v.first);
    out << step << ',' << tr.n << ',' << fmt_double(tr.mean) << ',' << fmt_double(tr.sd) << ',';
    if (!v.second.empty()) {
      const auto ev = mean_std(v.second);
      out << fmt_double(ev.mean) << ',' << fmt_double(ev.sd);
    } else {
      out << ',';
    }
    out << '\n';
  }
}

inline void write_scan_summary(const std::vector<SeedResult>& runs, const std::vector<DeathMethod>& methods,
                               std::ostream& out) {
  out << "method,step,n_seeds,n_rows,slope,intercept,rss,pearson,mean_delta_loss,least_efficient_delta_loss,"
         "seeds_least_below_mean\n";
  std::set<std::uint64_t> steps;
  for (const auto& r : runs)
    for (const auto& s : r.scans) steps.insert(s.step);
  for (auto m : methods)
    for (auto step : steps) {
      std::vector<ScanRow> pooled;
      std::vector<double> least;
      std::size_t seeds = 0, below = 0;
      for (const auto& r : runs)
        for (const auto& s : r.scans) {
          if (s.step != step || s.scan.rows.empty() || s.scan.rows.front().method != m) continue;
          ++seeds;
          pooled.insert(pooled.end(), s.scan.rows.begin(), s.scan.rows.end());
          const auto lo = std::min_element(s.scan.rows.begin(), s.scan.rows.end(),
                                           [](const auto& a, const auto& b) { return a.efficiency < b.efficiency; });
          double layer_mean = 0.0;
          for (const auto& row : s.scan.rows) layer_mean += row.delta_loss;
          layer_mean /= static_cast<double>(s.scan.rows.size());
          least.push_back(lo->delta_loss);
          below += lo->delta_loss < layer_mean;
        }
      if (seeds == 0) continue;
      std::vector<double> deltas;
      for (const auto& row : pooled) deltas.push_back(row.delta_loss);
      out << to_string(m) << ',' << step << ',' << seeds << ',' << pooled.size() << ',';
      try {
        const SlopeFit f = fit_slope(pooled);
        out << fmt_double(f.slope) << ',' << fmt_double(f.intercept) << ',' << fmt_double(f.rss) << ','
            << fmt_double(pearson(pooled));
      } catch (const Error&) {
        out << ",,,";
      }
      out << ',' << fmt_double(mean_std(deltas).mean) << ',' << fmt_double(mean_std(least).mean) << ',' << below
          << '\n';
    }
}

inline void write_pdf_summary(const std::vector<SeedResult>& runs, std::ostream& out) {
  out << "rule,split,horizon,n,delta_loss_mean,delta_loss_std\n";
  std::vector<std::pair<std::string, std::uint64_t>> keys;
  std::map<std::pair<std::string, std::uint64_t>, std::pair<std::string, std::vector<double>>> groups;
  for (const auto& r : runs)
    for (const auto& p : r.pdf) {
      const auto key = std::make_pair(p.rule, p.horizon);
      if (!groups.count(key)) keys.push_back(key);
      groups[key].first = p.split;
      groups[key].second.push_back(p.delta_loss);
    }
  for (const auto& key : keys) {
    const auto& [split, v] = groups[key];
    const auto ms = mean_std(v);
    out << key.first << ',' << split << ',' << key.second << ',' << ms.n << ',' << fmt_double(ms.mean) << ','
        << fmt_double(ms.sd) << '\n';
  }
}

inline std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace detail

struct SeedStatus {
  std::uint64_t seed = 0;
  bool ok = false;
  std::optional<ErrorClass> error;
  std::string message;
  std::vector<std::string> files;
};

struct ManifestSummary {
  std::filesystem::path output_dir;
  std::vector<SeedStatus> seeds;
  std::vector<SeedResult> results;  // successful seeds, in config order
  bool complete = false;
  ojson manifest;
};

/// Writes the per-seed files of one result into `dir`; returns their names.
inline std::vector<std::string> write_seed_files(const ExperimentConfig& c, const SeedResult& r,
                                                 const std::filesystem::path& dir) {
  const std::string s = std::to_string(r.seed);
  std::vector<std::string> files = {"run_" + s + ".csv", "events_" + s + ".csv"};
  write_run_csv(r.record, dir / files[0]);
  write_events_csv(r.record, dir / files[1]);
  if (c.kind == ExperimentKind::Scan) {
    files.push_back("scan_" + s + ".csv");
    auto out = detail::open_out(dir / files.back());
    write_scan_header(out);
    for (const auto& sa : r.scans) write_scan_rows(out, r.seed, sa.step, sa.scan);
  }
  if (c.kind == ExperimentKind::Pdf) {
    files.push_back("replication_" + s + ".csv");
    auto out = detail::open_out(dir / files.back());
    out << "seed,rule,split,horizon,delta_loss\n";
    for (const auto& p : r.pdf)
      out << r.seed << ',' << p.rule << ',' << p.split << ',' << p.horizon << ',' << fmt_double(p.delta_loss) << '\n';
  }
  if (c.save_networks) {
    files.push_back("net_" + s + ".json");
    save_network(r.net, dir / files.back());
  }
  return files;
}

/// Runs every seed in order, writes per-seed files, summary.csv and
/// manifest.json. A failing seed is recorded and the run marked incomplete.
inline ManifestSummary run_experiment(const ExperimentConfig& c, const ExperimentData* preloaded = nullptr) {
  c.validate();
  ExperimentData loaded;
  if (!preloaded) {
    loaded = load_experiment_data(c.data);
    preloaded = &loaded;
  }
  const ExperimentData& data = *preloaded;
  ManifestSummary out;
  out.output_dir = c.output_dir;
  std::error_code ec;
  std::filesystem::create_directories(out.output_dir, ec);
  require(!ec && std::filesystem::is_directory(out.output_dir), ErrorClass::Io,
          "cannot create output directory " + c.output_dir);

  for (auto seed : c.seeds) {
    SeedStatus st{seed, false, std::nullopt, {}, {}};
    try {
      SeedResult r = run_seed(c, data, seed);
      st.files = write_seed_files(c, r, out.output_dir);
      st.ok = true;
      out.results.push_back(std::move(r));
    } catch (const Error& e) {
      st.error = e.error_class();
      st.message = e.what();
    }
    out.seeds.push_back(std::move(st));
  }
  out.complete = std::all_of(out.seeds.begin(), out.seeds.end(), [](const auto& s) { return s.ok; });

  {
    auto sum = detail::open_out(out.output_dir / "summary.csv");
    if (c.kind == ExperimentKind::Scan) detail::write_scan_summary(out.results, c.scan.methods, sum);
    else if (c.kind == ExperimentKind::Pdf) detail::write_pdf_summary(out.results, sum);
    else detail::write_loss_summary(out.results, sum);
  }

  ojson m;
  m["manifest_version"] = 1;
  m["tool"] = "biodyn";
  m["version"] = BIODYN_VERSION;
  m["revision"] = BIODYN_REVISION;
  m["created"] = detail::utc_now();
  m["config"] = config_to_json(c);
  m["data"] = {{"origin", data.origin},
               {"train_size", data.train.size()},
               {"stats_size", data.stats.size()},
               {"eval_size", data.eval.size()},
               {"fingerprint", data.fingerprint}};
  m["complete"] = out.complete;
  ojson runs = ojson::array();
  for (const auto& s : out.seeds) {
    ojson r = {{"seed", s.seed}, {"status", s.ok ? "ok" : "failed"}};
    if (s.ok) r["files"] = s.files;
    else r["error"] = {{"class", to_string(*s.error)}, {"message", s.message}};
    runs.push_back(r);
  }
  m["runs"] = runs;
  m["summary"] = "summary.csv";
  {
    auto f = detail::open_out(out.output_dir / "manifest.json");
    f << m.dump(2) << '\n';
  }
  out.manifest = std::move(m);
  return out;
}

/// Process exit status for an error class.
inline int exit_code(ErrorClass c) {
  switch (c) {
    case ErrorClass::Config:
    case ErrorClass::Precondition:
    case ErrorClass::Shape: return 2;
    case ErrorClass::Io:
    case ErrorClass::Format:
    case ErrorClass::Consistency: return 3;
    case ErrorClass::Numeric: return 4;
  }
  return 1;
}

}  // namespace biodyn
