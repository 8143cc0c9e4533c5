#pragma once

// Command-line front end. Every subcommand takes --config plus flags that
// override individual config keys.

#include <array>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "biodyn/harness.hpp"
#include "mnist_fetch.hpp"

namespace biodyn::cli {

namespace detail {

template <class T>
struct Flag {
  T value{};
  CLI::Option* opt = nullptr;
  void apply(T& target) const {
    if (opt && opt->count()) target = value;
  }
};

template <class T>
Flag<T>& add(CLI::App& app, Flag<T>& f, const std::string& name, const std::string& help) {
  f.opt = app.add_option(name, f.value, help);
  return f;
}

// Flags shared by the experiment subcommands.
struct Common {
  std::string config;
  Flag<std::vector<std::uint64_t>> seeds;
  Flag<std::uint64_t> steps;
  Flag<std::string> out, arch, network, data_dir, source, loss;
  Flag<std::vector<std::size_t>> layers;
  Flag<double> lr, momentum, l2, init_scale;
  Flag<std::size_t> batch, train_size, stats_size, eval_size;
  Flag<std::uint64_t> eval_every;
  bool save_networks = false;

  void attach(CLI::App& app) {
    app.add_option("--config", config, "JSON config file (or a manifest.json to re-run)");
    add(app, seeds, "--seeds", "seeds, one run each");
    add(app, steps, "--steps", "training steps");
    add(app, out, "--out", "output directory");
    add(app, arch, "--arch", "architecture preset N1..N4");
    add(app, layers, "--layers", "explicit layer sizes, e.g. 784 5 20 10");
    add(app, network, "--network", "start from this network JSON");
    add(app, lr, "--lr", "learning rate");
    add(app, momentum, "--momentum", "momentum");
    add(app, l2, "--l2", "L2 weight decay");
    add(app, batch, "--batch", "batch size");
    add(app, loss, "--loss", "cross_entropy|mse");
    add(app, init_scale, "--init-scale", "initializer bound scale");
    add(app, data_dir, "--data-dir", std::string("MNIST directory (default $") + kMnistDirEnv + ")");
    add(app, source, "--source", "mnist|synthetic");
    add(app, train_size, "--train-size", "training subset size");
    add(app, stats_size, "--stats-size", "statistics subset size (0: whole training subset)");
    add(app, eval_size, "--eval-size", "eval subset size");
    add(app, eval_every, "--eval-every", "evaluate every n steps (0: never)");
    app.add_flag("--save-networks", save_networks, "write net_<seed>.json");
  }

  ExperimentConfig resolve() const {
    ExperimentConfig c = config.empty() ? ExperimentConfig{} : load_config(config);
    seeds.apply(c.seeds);
    steps.apply(c.hyper.steps);
    out.apply(c.output_dir);
    if (arch.opt->count()) {
      c.architecture = arch.value;
      c.layer_sizes = preset_layers(arch.value);
    }
    if (layers.opt->count()) {
      c.architecture = "custom";
      c.layer_sizes = layers.value;
    }
    network.apply(c.network);
    lr.apply(c.hyper.learning_rate);
    momentum.apply(c.hyper.momentum);
    l2.apply(c.hyper.l2);
    batch.apply(c.hyper.batch_size);
    if (loss.opt->count()) c.hyper.loss_kind = parse_loss_kind(loss.value);
    init_scale.apply(c.init_scale);
    data_dir.apply(c.data.dir);
    source.apply(c.data.source);
    train_size.apply(c.data.train_size);
    stats_size.apply(c.data.stats_size);
    eval_size.apply(c.data.eval_size);
    eval_every.apply(c.eval_every);
    if (save_networks) c.save_networks = true;
    return c;
  }
};

inline void report(const ManifestSummary& m, std::ostream& out) {
  std::size_t ok = 0;
  for (const auto& s : m.seeds) ok += s.ok;
  out << "wrote " << ok << "/" << m.seeds.size() << " seeds to " << m.output_dir.string()
      << (m.complete ? "" : " (incomplete)") << "\n";
}

}  // namespace detail

/// Runs the CLI; returns the process exit status (0 ok, 2 config, 3 IO, 4 numeric).
inline int cli_main(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Neuron death and replication experiments"};
  app.require_subcommand(1);
  app.set_version_flag("--version", BIODYN_VERSION);

  auto* train = app.add_subcommand("train", "train and record the loss curve");
  auto* scan = app.add_subcommand("scan", "train, then remove each neuron of a layer in turn and measure the loss");
  auto* prune = app.add_subcommand("prune", "train, then remove the least efficient neurons");
  auto* grow = app.add_subcommand("grow", "train, then replicate the most efficient neuron (or --pdf study)");
  auto* combined = app.add_subcommand("combined", "train with periodic death and replication");
  auto* oracle = app.add_subcommand("oracle", "measure the loss change of every removal in a saved network");
  auto* fetch = app.add_subcommand("mnist-fetch", "download the MNIST training files");
  std::array<detail::Common, 6> commons;
  const std::array<CLI::App*, 6> experiment_cmds = {train, scan, prune, grow, combined, oracle};
  for (std::size_t i = 0; i < commons.size(); ++i) commons[i].attach(*experiment_cmds[i]);

  std::vector<std::string> methods;
  detail::Flag<std::size_t> scan_layer, oracle_layer, prune_layer, grow_layer, combined_layer;
  detail::Flag<std::vector<std::uint64_t>> at_steps;
  scan->add_option("--method", methods, "A1 A2 A3");
  detail::add(*scan, scan_layer, "--layer", "hidden layer index (1 = first hidden)");
  detail::add(*scan, at_steps, "--at", "steps after which to scan");
  oracle->add_option("--method", methods, "A1 A2 A3");
  detail::add(*oracle, oracle_layer, "--layer", "hidden layer index");

  std::string method;
  detail::Flag<std::size_t> prune_count, grow_count;
  detail::Flag<std::uint64_t> prune_post, grow_post;
  prune->add_option("--method", method, "A1|A2|A3");
  detail::add(*prune, prune_layer, "--layer", "hidden layer index");
  detail::add(*prune, prune_count, "--count", "neurons to remove");
  detail::add(*prune, prune_post, "--post-steps", "training steps after the surgery");

  detail::Flag<std::string> rule, efficiency;
  detail::Flag<double> alpha, beta;
  detail::Flag<std::vector<std::uint64_t>> horizons;
  bool pdf = false;
  detail::add(*grow, rule, "--rule", "beta|equal|random_bit|random_neuron");
  detail::add(*grow, alpha, "--alpha", "Beta split alpha");
  detail::add(*grow, beta, "--beta", "Beta split beta");
  detail::add(*grow, efficiency, "--efficiency", "ranking for the parent: A1|A3");
  detail::add(*grow, grow_layer, "--layer", "hidden layer index");
  detail::add(*grow, grow_count, "--count", "neurons to add");
  detail::add(*grow, grow_post, "--post-steps", "training steps after the surgery");
  detail::add(*grow, horizons, "--horizons", "pdf study: steps after replication");
  grow->add_flag("--pdf", pdf, "compare all replication variants");

  detail::Flag<double> cutoff, max_fraction, split_alpha, split_beta;
  detail::Flag<std::uint64_t> period;
  detail::Flag<std::string> death_method;
  detail::add(*combined, cutoff, "--cutoff", "efficiency cutoff (0 disables)");
  detail::add(*combined, period, "--period", "steps between interventions");
  detail::add(*combined, max_fraction, "--max-fraction", "cap on removed fraction");
  detail::add(*combined, death_method, "--death-method", "A1|A2|A3");
  detail::add(*combined, split_alpha, "--split-alpha", "Beta split alpha");
  detail::add(*combined, split_beta, "--split-beta", "Beta split beta");
  detail::add(*combined, combined_layer, "--layer", "hidden layer index");

  std::string fetch_dir, base_url = fetch::kDefaultBaseUrl, prefix = "train";
  bool force = false;
  fetch->add_option("--dir", fetch_dir, std::string("target directory (default $") + kMnistDirEnv + ")");
  fetch->add_option("--base-url", base_url, "mirror URL");
  fetch->add_option("--prefix", prefix, "train|t10k");
  fetch->add_flag("--force", force, "download even if present");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (fetch->parsed()) {
      if (fetch_dir.empty()) {
        const char* env = std::getenv(kMnistDirEnv);
        require(env && *env, ErrorClass::Config, std::string("no --dir and ") + kMnistDirEnv + " is unset");
        fetch_dir = env;
      }
      const Dataset d = fetch::fetch_mnist(fetch_dir, base_url, prefix, force);
      out << "MNIST " << prefix << ": " << d.size() << " samples in " << fetch_dir << "\n";
      return 0;
    }

    std::size_t which = 0;
    while (!experiment_cmds[which]->parsed()) ++which;
    ExperimentConfig c = commons[which].resolve();
    if (train->parsed()) {
      c.kind = ExperimentKind::Train;
    } else if (scan->parsed() || oracle->parsed()) {
      c.kind = ExperimentKind::Scan;
      if (!methods.empty()) {
        c.scan.methods.clear();
        for (const auto& m : methods) c.scan.methods.push_back(parse_death_method(m));
      }
      scan_layer.apply(c.scan.layer);
      oracle_layer.apply(c.scan.layer);
      at_steps.apply(c.scan.at_steps);
      if (oracle->parsed()) {
        require(!c.network.empty(), ErrorClass::Config, "oracle needs --network");
        c.hyper.steps = 0;
        c.scan.at_steps = {0};
      }
    } else if (prune->parsed()) {
      c.kind = ExperimentKind::PruneOnce;
      if (!method.empty()) c.prune.method = parse_death_method(method);
      prune_layer.apply(c.prune.layer);
      prune_count.apply(c.prune.count);
      prune_post.apply(c.prune.post_steps);
    } else if (grow->parsed()) {
      c.kind = pdf || c.kind == ExperimentKind::Pdf ? ExperimentKind::Pdf : ExperimentKind::Replicate;
      if (rule.opt->count() || alpha.opt->count() || beta.opt->count()) {
        const auto* b = std::get_if<BetaSplit>(&c.grow.rule);
        c.grow.rule = biodyn::detail::parse_split_rule(
            rule.opt->count() ? rule.value : biodyn::detail::split_rule_name(c.grow.rule),
            alpha.opt->count() ? alpha.value : (b ? b->alpha : 0.01),
            beta.opt->count() ? beta.value : (b ? b->beta : 0.01), c.init_scale);
      }
      if (efficiency.opt->count()) c.grow.efficiency = parse_death_method(efficiency.value);
      grow_layer.apply(c.grow.layer);
      grow_count.apply(c.grow.count);
      grow_post.apply(c.grow.post_steps);
      horizons.apply(c.grow.horizons);
    } else if (combined->parsed()) {
      c.kind = ExperimentKind::Combined;
      cutoff.apply(c.lifecycle.cutoff);
      period.apply(c.lifecycle.period);
      max_fraction.apply(c.lifecycle.max_fraction);
      if (death_method.opt->count()) c.lifecycle.death_method = parse_death_method(death_method.value);
      if (split_alpha.opt->count() || split_beta.opt->count()) {
        BetaSplit b = std::get<BetaSplit>(c.lifecycle.split_rule);
        split_alpha.apply(b.alpha);
        split_beta.apply(b.beta);
        c.lifecycle.split_rule = b;
      }
      combined_layer.apply(c.lifecycle.layer);
    }

    const ManifestSummary m = run_experiment(c);
    detail::report(m, out);
    for (const auto& s : m.seeds)
      if (!s.ok) {
        err << "biodyn: seed " << s.seed << " failed [" << to_string(*s.error) << "]: " << s.message << "\n";
        return exit_code(*s.error);
      }
    return 0;
  } catch (const Error& e) {
    err << "biodyn: error [" << to_string(e.error_class()) << "]: " << e.what() << "\n";
    return exit_code(e.error_class());
  } catch (const std::exception& e) {
    err << "biodyn: error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace biodyn::cli
