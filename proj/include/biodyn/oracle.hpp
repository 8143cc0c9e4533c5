#pragma once

// Brute-force ground truth: the measured change in average loss when a
// neuron is removed, per-layer scans pairing it with the predicted
// efficiency, and least-squares fits of efficiency against that change.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "biodyn/dataio.hpp"
#include "biodyn/efficiency.hpp"
#include "biodyn/error.hpp"
#include "biodyn/neuronstats.hpp"
#include "biodyn/surgery.hpp"

namespace biodyn {

struct ScanRow {
  std::size_t neuron = 0;
  double efficiency = 0.0;
  DeathMethod method = DeathMethod::A1;
  double delta_loss = 0.0;
};

struct SkippedRow {
  std::size_t neuron = 0;
  std::string reason;
};

struct ScanResult {
  std::size_t layer = 0;
  double base_loss = 0.0;
  std::vector<ScanRow> rows;
  std::vector<SkippedRow> skipped;
};

struct SlopeFit {
  double intercept = 0.0;
  double slope = 0.0;
  std::size_t n = 0;
  double rss = 0.0;
};

inline double mean_loss(const Network& net, const Dataset& subset, LossKind kind) {
  return evaluate(net, subset.inputs, subset.labels, kind).mean_loss;
}

/// <H>(net with the planned neuron removed) - <H>(net) on the same subset.
inline double delta_loss_on_removal(const Network& net, const Dataset& subset, LossKind kind, const DeathPlan& plan,
                                    std::optional<double> base_loss = std::nullopt) {
  require(plan.relation.target == plan.neuron, ErrorClass::Precondition, "relation targets a different neuron");
  const double before = base_loss ? *base_loss : mean_loss(net, subset, kind);
  const Network reduced = apply_death(net, plan);
  return mean_loss(reduced, subset, kind) - before;
}

/// Efficiency and measured loss change for every neuron of `layer`, both from
/// one statistics snapshot on `subset`. Rows are ordered by neuron index.
inline ScanResult scan_layer(const Network& net, const Dataset& subset, std::size_t layer, DeathMethod method,
                             LossKind kind) {
  require(net.is_hidden(layer), ErrorClass::Precondition, "scan needs a hidden layer");
  const auto [stats, down] = collect_stats(net, subset, layer);
  const Matrix& w = net.weights(layer + 1);
  ScanResult out{layer, mean_loss(net, subset, kind), {}, {}};
  EfficiencyReport eff;
  try {
    eff = efficiency_for(method, stats, down, w);
  } catch (const Error& e) {
    for (std::size_t k = 0; k < net.size(layer); ++k) out.skipped.push_back({k, e.what()});
    return out;
  }
  for (std::size_t k = 0; k < net.size(layer); ++k) {
    try {
      LinearRelation rel = method == DeathMethod::A3 ? relation_A3(k, stats, eff) : relation_for(method, k, stats, down, w);
      const double d = delta_loss_on_removal(net, subset, kind, make_death_plan(rel, stats), out.base_loss);
      out.rows.push_back(ScanRow{k, eff.values[k], method, d});
    } catch (const Error& e) {
      out.skipped.push_back({k, e.what()});
    }
  }
  return out;
}

/// Ordinary least squares of efficiency on delta_loss. Rows with a
/// non-finite efficiency are ignored.
inline SlopeFit fit_slope(const std::vector<ScanRow>& rows) {
  std::vector<std::pair<double, double>> pts;
  for (const auto& r : rows)
    if (std::isfinite(r.efficiency) && std::isfinite(r.delta_loss)) pts.emplace_back(r.delta_loss, r.efficiency);
  require(pts.size() >= 2, ErrorClass::Numeric, "slope fit needs at least two rows");
  const double n = static_cast<double>(pts.size());
  double mx = 0.0, my = 0.0;
  for (auto [x, y] : pts) {
    mx += x;
    my += y;
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (auto [x, y] : pts) {
    sxx += (x - mx) * (x - mx);
    sxy += (x - mx) * (y - my);
  }
  if (!(sxx > 0.0)) throw Error(ErrorClass::Numeric, "singular fit: all loss changes are identical");
  SlopeFit f{0.0, sxy / sxx, pts.size(), 0.0};
  f.intercept = my - f.slope * mx;
  for (auto [x, y] : pts) {
    const double r = y - (f.intercept + f.slope * x);
    f.rss += r * r;
  }
  return f;
}

inline double pearson(const std::vector<ScanRow>& rows) {
  double n = 0, mx = 0, my = 0;
  for (const auto& r : rows)
    if (std::isfinite(r.efficiency)) {
      mx += r.delta_loss;
      my += r.efficiency;
      n += 1;
    }
  require(n >= 2, ErrorClass::Numeric, "correlation needs two rows");
  mx /= n;
  my /= n;
  double sxx = 0, syy = 0, sxy = 0;
  for (const auto& r : rows)
    if (std::isfinite(r.efficiency)) {
      sxx += (r.delta_loss - mx) * (r.delta_loss - mx);
      syy += (r.efficiency - my) * (r.efficiency - my);
      sxy += (r.delta_loss - mx) * (r.efficiency - my);
    }
  return sxy / std::sqrt(sxx * syy);
}

inline void write_scan_header(std::ostream& out) { out << "seed,step,layer,neuron,method,efficiency,delta_loss\n"; }

inline void write_scan_rows(std::ostream& out, std::uint64_t seed, std::uint64_t step, const ScanResult& scan) {
  for (const auto& r : scan.rows)
    out << seed << ',' << step << ',' << scan.layer << ',' << r.neuron << ',' << to_string(r.method) << ','
        << fmt_double(r.efficiency) << ',' << fmt_double(r.delta_loss) << '\n';
}

}  // namespace biodyn
