#pragma once

// Neuron efficiency measures and the linear relations among same-layer
// neurons that a removal substitutes for the removed signal.
//
//   connection cut   E_k  = C_kk * sum_i f'_i(y_i)^2 w_ik^2 / C_ii
//   covariance       E'_k = min_i lambda_i / (v^(i)_k)^2
//
// Relations have the form sum_j a_j x_j ~= a_0 with target neuron k.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "biodyn/error.hpp"
#include "biodyn/netcore.hpp"
#include "biodyn/neuronstats.hpp"

namespace biodyn {

enum class DeathMethod { A1, A2, A3 };

inline const char* to_string(DeathMethod m) {
  switch (m) {
    case DeathMethod::A1: return "A1";
    case DeathMethod::A2: return "A2";
    case DeathMethod::A3: return "A3";
  }
  return "?";
}

inline DeathMethod parse_death_method(const std::string& s) {
  if (s == "A1" || s == "a1" || s == "connection_cut") return DeathMethod::A1;
  if (s == "A2" || s == "a2" || s == "probability") return DeathMethod::A2;
  if (s == "A3" || s == "a3" || s == "covariance") return DeathMethod::A3;
  throw Error(ErrorClass::Config, "unknown death method '" + s + "'");
}

/// Downstream neurons with variance below this carry no signal and are
/// excluded from the connection-cut sums.
inline constexpr double kVarianceFloor = 1e-12;
/// Eigenvector components with squared magnitude below this are not divided by.
inline constexpr double kComponentFloor = 1e-8;

struct EfficiencyReport {
  std::size_t layer = 0;
  DeathMethod method = DeathMethod::A1;
  std::vector<double> values;              // +inf marks "never least efficient"
  std::vector<std::optional<std::size_t>> argmin_eigen;  // A3 only

  std::size_t size() const { return values.size(); }
};

struct LinearRelation {
  std::size_t layer = 0;
  std::size_t target = 0;
  Vector coeffs;  // a_j over the layer's neurons
  double constant = 0.0;  // a_0
  DeathMethod method = DeathMethod::A1;

  double target_coeff() const { return coeffs(static_cast<Eigen::Index>(target)); }
};

namespace detail {

inline void check_downstream(const LayerStats& stats, const DownstreamStats& down, const Matrix& w) {
  require(static_cast<std::size_t>(w.cols()) == stats.size() && static_cast<std::size_t>(w.rows()) == down.size(),
          ErrorClass::Shape, "weights do not connect the stats layers");
  require(static_cast<std::size_t>(down.fprime.size()) == down.size(), ErrorClass::Shape, "downstream stats malformed");
}

}  // namespace detail

/// Connection-cut efficiency E_k for every neuron of the layer. `w` is the
/// weight matrix from the layer into the next one.
inline EfficiencyReport efficiency_connection_cut(const LayerStats& stats, const DownstreamStats& down,
                                                  const Matrix& w) {
  detail::check_downstream(stats, down, w);
  std::vector<Eigen::Index> live;
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(down.size()); ++i)
    if (down.var(i) >= kVarianceFloor) live.push_back(i);
  require(!live.empty(), ErrorClass::Numeric, "all downstream variances are below the floor");
  EfficiencyReport r{stats.layer, DeathMethod::A1, std::vector<double>(stats.size(), 0.0), {}};
  for (std::size_t k = 0; k < stats.size(); ++k) {
    double sum = 0.0;
    for (auto i : live) {
      const double f = down.fprime(i);
      const double wik = w(i, static_cast<Eigen::Index>(k));
      sum += f * f * wik * wik / down.var(i);
    }
    r.values[k] = stats.var(k) * sum;
  }
  return r;
}

/// Covariance efficiency E'_k = min_i lambda_i / (v^(i)_k)^2 over components
/// above the floor; records the minimizing eigen index.
inline EfficiencyReport efficiency_covariance(const LayerStats& stats) {
  const auto n = static_cast<Eigen::Index>(stats.size());
  require(stats.eigenvalues.size() == n && stats.eigenvectors.cols() == n, ErrorClass::Precondition,
          "eigendecomposition missing");
  EfficiencyReport r{stats.layer, DeathMethod::A3, std::vector<double>(stats.size()),
                     std::vector<std::optional<std::size_t>>(stats.size())};
  for (Eigen::Index k = 0; k < n; ++k) {
    double best = std::numeric_limits<double>::infinity();
    std::optional<std::size_t> arg;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double comp = stats.eigenvectors(k, i);
      const double c2 = comp * comp;
      if (c2 <= kComponentFloor) continue;
      const double ratio = stats.eigenvalues(i) / c2;
      if (ratio < best) {
        best = ratio;
        arg = static_cast<std::size_t>(i);
      }
    }
    r.values[static_cast<std::size_t>(k)] = best;
    r.argmin_eigen[static_cast<std::size_t>(k)] = arg;
  }
  return r;
}

/// x_k ~= <x_k>.
inline LinearRelation relation_A1(std::size_t k, const LayerStats& stats) {
  require(k < stats.size(), ErrorClass::Precondition, "neuron index out of range");
  LinearRelation rel{stats.layer, k, Vector::Zero(static_cast<Eigen::Index>(stats.size())), 0.0, DeathMethod::A1};
  rel.coeffs(static_cast<Eigen::Index>(k)) = 1.0;
  rel.constant = stats.mean(static_cast<Eigen::Index>(k));
  return rel;
}

/// Conditional-variance S_k^2 = (sum_i f'_i^2 w_ik^2 / C_ii)^{-1}.
inline double conditional_variance(std::size_t k, const DownstreamStats& down, const Matrix& w) {
  double precision = 0.0;
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(down.size()); ++i) {
    if (down.var(i) < kVarianceFloor) continue;
    const double sigma_inv2 = down.fprime(i) * down.fprime(i) * w(i, static_cast<Eigen::Index>(k)) *
                              w(i, static_cast<Eigen::Index>(k)) / down.var(i);
    precision += sigma_inv2;
  }
  const double s2 = 1.0 / precision;
  if (!(precision > 0.0) || !std::isfinite(s2))
    throw Error(ErrorClass::Numeric, "degenerate conditional variance for neuron " + std::to_string(k));
  return s2;
}

/// Precision-weighted combination of the per-downstream estimates of x_k,
/// normalized to a_k = 1:
///   x_k + S^2 sum_i g_i sum_{j!=k} w_ij x_j = S^2 sum_i g_i sum_j w_ij <x_j>,
/// with g_i = f'_i^2 w_ik / C_ii.
inline LinearRelation relation_A2(std::size_t k, const LayerStats& stats, const DownstreamStats& down,
                                  const Matrix& w) {
  detail::check_downstream(stats, down, w);
  require(k < stats.size(), ErrorClass::Precondition, "neuron index out of range");
  const double s2 = conditional_variance(k, down, w);
  const auto kk = static_cast<Eigen::Index>(k);
  Vector g = Vector::Zero(static_cast<Eigen::Index>(down.size()));
  for (Eigen::Index i = 0; i < g.size(); ++i)
    if (down.var(i) >= kVarianceFloor) g(i) = down.fprime(i) * down.fprime(i) * w(i, kk) / down.var(i);
  LinearRelation rel{stats.layer, k, s2 * (w.transpose() * g), 0.0, DeathMethod::A2};
  rel.coeffs(kk) = 1.0;
  rel.constant = s2 * g.dot(w * stats.mean);
  return rel;
}

/// Eigenvector relation sum_j v_j (x_j - <x_j>) ~= 0 for the eigenvector that
/// minimizes neuron k's covariance efficiency.
inline LinearRelation relation_A3(std::size_t k, const LayerStats& stats, const EfficiencyReport& cov_report) {
  require(cov_report.method == DeathMethod::A3 && k < cov_report.argmin_eigen.size(), ErrorClass::Precondition,
          "relation_A3 needs a covariance efficiency report");
  const auto& arg = cov_report.argmin_eigen[k];
  if (!arg) throw Error(ErrorClass::Numeric, "no usable eigenvector for neuron " + std::to_string(k));
  const Vector v = stats.eigenvectors.col(static_cast<Eigen::Index>(*arg));
  const double vk = v(static_cast<Eigen::Index>(k));
  if (vk * vk <= kComponentFloor)
    throw Error(ErrorClass::Numeric, "ill-conditioned eigen relation for neuron " + std::to_string(k));
  return LinearRelation{stats.layer, k, v, v.dot(stats.mean), DeathMethod::A3};
}

inline LinearRelation relation_A3(std::size_t k, const LayerStats& stats) {
  return relation_A3(k, stats, efficiency_covariance(stats));
}

/// Efficiency used to rank neurons for a given method (E_k for A1/A2, E'_k for A3).
inline EfficiencyReport efficiency_for(DeathMethod m, const LayerStats& stats, const DownstreamStats& down,
                                       const Matrix& w) {
  if (m == DeathMethod::A3) return efficiency_covariance(stats);
  EfficiencyReport r = efficiency_connection_cut(stats, down, w);
  r.method = m;
  return r;
}

inline LinearRelation relation_for(DeathMethod m, std::size_t k, const LayerStats& stats, const DownstreamStats& down,
                                   const Matrix& w) {
  switch (m) {
    case DeathMethod::A1: return relation_A1(k, stats);
    case DeathMethod::A2: return relation_A2(k, stats, down, w);
    case DeathMethod::A3: return relation_A3(k, stats);
  }
  throw Error(ErrorClass::Precondition, "unknown method");
}

/// Index of the smallest value; ties go to the lowest index.
inline std::size_t least_efficient(const EfficiencyReport& r) {
  require(!r.values.empty(), ErrorClass::Precondition, "empty report");
  std::size_t best = 0;
  for (std::size_t k = 1; k < r.values.size(); ++k)
    if (r.values[k] < r.values[best]) best = k;
  return best;
}

inline void write_efficiency_csv(const EfficiencyReport& r, const std::filesystem::path& path) {
  std::ofstream out(path);
  require(out.good(), ErrorClass::Io, "cannot write " + path.string());
  out << "layer,neuron,method,efficiency,aux_index\n";
  for (std::size_t k = 0; k < r.size(); ++k) {
    out << r.layer << ',' << k << ',' << to_string(r.method) << ',' << fmt_double(r.values[k]) << ',';
    if (k < r.argmin_eigen.size() && r.argmin_eigen[k]) out << *r.argmin_eigen[k];
    out << '\n';
  }
}

}  // namespace biodyn
