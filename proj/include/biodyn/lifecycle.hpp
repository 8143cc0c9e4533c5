#pragma once

// Periodic death-then-replication on one hidden layer: every `period` steps
// remove the neurons whose efficiency is below `cutoff` (at most
// floor(N * max_fraction)), then replicate as many of the most efficient
// survivors so the layer size is restored.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "biodyn/dataio.hpp"
#include "biodyn/efficiency.hpp"
#include "biodyn/error.hpp"
#include "biodyn/neuronstats.hpp"
#include "biodyn/random.hpp"
#include "biodyn/surgery.hpp"
#include "biodyn/trainer.hpp"

namespace biodyn {

struct LifecycleConfig {
  std::uint64_t period = 500;
  double cutoff = 0.005;
  double max_fraction = 0.5;
  DeathMethod death_method = DeathMethod::A1;
  SplitRule split_rule = BetaSplit{0.01, 0.01};
  std::size_t layer = 1;

  void validate() const {
    require(period >= 1, ErrorClass::Config, "lifecycle period must be >= 1");
    require(cutoff >= 0.0, ErrorClass::Config, "cutoff must be nonnegative");
    require(max_fraction > 0.0 && max_fraction <= 0.5, ErrorClass::Config, "max_fraction must be in (0, 1/2]");
  }
};

struct LifecycleOutcome {
  Network net;
  std::size_t n_removed = 0;
  std::size_t n_added = 0;
  std::vector<Event> events;
  std::vector<std::size_t> removed;  // indices in the pre-step layer, removal order
  std::vector<std::size_t> parents;  // indices in the post-removal layer
};

/// One intervention. `stats`/`down` must describe the current `net` at
/// `config.layer`. Replication draws come from the stream seeded by
/// (seed, intervention). `velocity`, if given, is resized alongside the net.
inline LifecycleOutcome lifecycle_step(Network net, const LayerStats& stats, const DownstreamStats& down,
                                       const LifecycleConfig& config, std::uint64_t seed,
                                       std::uint64_t intervention = 0, std::uint64_t step = 0,
                                       Params* velocity = nullptr) {
  config.validate();
  const std::size_t l = config.layer;
  require(net.is_hidden(l), ErrorClass::Precondition, "lifecycle layer must be hidden");
  const std::size_t n0 = net.size(l);
  require(n0 >= 2, ErrorClass::Precondition, "lifecycle layer needs at least two neurons");
  require(stats.size() == n0 && stats.layer == l, ErrorClass::Precondition, "stats do not describe the target layer");

  const EfficiencyReport eff = efficiency_for(config.death_method, stats, down, net.weights(l + 1));

  std::vector<std::size_t> below;
  for (std::size_t k = 0; k < n0; ++k)
    if (eff.values[k] < config.cutoff) below.push_back(k);
  std::stable_sort(below.begin(), below.end(), [&](auto a, auto b) { return eff.values[a] < eff.values[b]; });
  const auto cap = static_cast<std::size_t>(std::floor(static_cast<double>(n0) * config.max_fraction));
  if (below.size() > cap) below.resize(cap);

  LifecycleOutcome out{std::move(net), 0, 0, {}, below, {}};
  if (below.empty()) return out;

  // alive[c] = original index of the neuron currently at position c.
  std::vector<std::size_t> alive(n0);
  std::iota(alive.begin(), alive.end(), std::size_t{0});
  LayerStats cur = stats;
  for (const std::size_t orig : below) {
    const auto pos = static_cast<std::size_t>(std::find(alive.begin(), alive.end(), orig) - alive.begin());
    LinearRelation rel;
    if (config.death_method == DeathMethod::A1) {
      rel = LinearRelation{l, pos, Vector::Zero(static_cast<Eigen::Index>(alive.size())),
                           stats.mean(static_cast<Eigen::Index>(orig)), DeathMethod::A1};
      rel.coeffs(static_cast<Eigen::Index>(pos)) = 1.0;
    } else {
      rel = relation_for(config.death_method, pos, cur, down, out.net.weights(l + 1));
    }
    out.net = apply_death(std::move(out.net), DeathPlan{l, pos, rel, false});
    if (velocity) erase_neuron(*velocity, l, pos);
    if (config.death_method != DeathMethod::A1) cur = drop_neuron(cur, pos);
    alive.erase(alive.begin() + static_cast<std::ptrdiff_t>(pos));
    out.events.push_back(Event{step, "death", l, orig, to_string(config.death_method)});
  }
  out.n_removed = below.size();

  // Most efficient survivors first; ties by lowest index.
  std::vector<std::size_t> order(alive.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](auto a, auto b) { return eff.values[alive[a]] > eff.values[alive[b]]; });
  const std::size_t n_rep = std::min(out.n_removed, order.size());
  Rng rng = make_rng(seed, Stream::Lifecycle, intervention);
  for (std::size_t r = 0; r < n_rep; ++r) {
    const std::size_t parent = order[r];
    out.net = replicate_split(std::move(out.net), l, parent, config.split_rule, rng());
    if (velocity) append_neuron(*velocity, l);
    out.parents.push_back(parent);
    out.events.push_back(Event{step, "replicate", l, alive[parent], to_string(config.split_rule)});
  }
  out.n_added = n_rep;
  return out;
}

inline LifecycleOutcome lifecycle_step(Network net, const Dataset& stats_subset, const LifecycleConfig& config,
                                       std::uint64_t seed, std::uint64_t intervention = 0, std::uint64_t step = 0,
                                       Params* velocity = nullptr) {
  const auto [ls, ds] = collect_stats(net, stats_subset, config.layer);
  return lifecycle_step(std::move(net), ls, ds, config, seed, intervention, step, velocity);
}

/// Alternates `period` training steps with one intervention until
/// `hyper.steps` are done. No intervention follows the final step. Training
/// randomness is independent of the interventions, so cutoff 0 reproduces
/// plain training bit for bit.
inline std::pair<Network, RunRecord> run_with_lifecycle(Network net, const Dataset& data, const Hyperparams& hyper,
                                                        const LifecycleConfig& config, const Dataset& stats_subset,
                                                        EvalOptions eval = {}) {
  config.validate();
  Trainer trainer(std::move(net), data, hyper, eval);
  std::uint64_t intervention = 0;
  while (trainer.step() < hyper.steps) {
    trainer.run(std::min<std::uint64_t>(config.period, hyper.steps - trainer.step()));
    if (trainer.step() >= hyper.steps || trainer.step() % config.period != 0) break;
    // Efficiencies are nonnegative, so a zero cutoff can never fire.
    if (config.cutoff > 0.0) {
      auto outcome = lifecycle_step(std::move(trainer.net()), stats_subset, config, hyper.seed, intervention,
                                    trainer.step(), &trainer.velocity());
      trainer.net() = std::move(outcome.net);
      auto& ev = trainer.record().events;
      ev.insert(ev.end(), outcome.events.begin(), outcome.events.end());
    }
    ++intervention;
  }
  return {std::move(trainer.net()), std::move(trainer.record())};
}

}  // namespace biodyn
