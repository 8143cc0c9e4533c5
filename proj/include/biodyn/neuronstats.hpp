#pragma once

// Activation statistics of one hidden layer under frozen weights: mean,
// covariance and its spectrum, plus the per-neuron factors of the next layer
// that the linearized efficiency needs.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <utility>
#include <vector>

#include "biodyn/error.hpp"
#include "biodyn/netcore.hpp"
#include "biodyn/trainer.hpp"

namespace biodyn {

struct EigenResult {
  Vector values;   // ascending
  Matrix vectors;  // column i pairs with values(i)
  int sweeps = 0;
};

inline constexpr double kJacobiSymmetryTol = 1e-10;
inline constexpr double kJacobiRelTol = 1e-12;
inline constexpr int kJacobiMaxSweeps = 100;

/// Cyclic Jacobi eigensolver for symmetric matrices. Rotations visit the upper
/// triangle row by row; iteration stops once the off-diagonal Frobenius norm
/// drops to 1e-12 * ||C||_F. Eigenpairs are returned in ascending order, each
/// vector signed so its largest-magnitude entry is positive.
inline EigenResult jacobi_eigen(const Matrix& c) {
  require(c.rows() == c.cols(), ErrorClass::Shape, "eigenproblem needs a square matrix");
  const Eigen::Index n = c.rows();
  require((c - c.transpose()).cwiseAbs().maxCoeff() <= kJacobiSymmetryTol * std::max(1.0, c.cwiseAbs().maxCoeff()) ||
              n == 0,
          ErrorClass::Precondition, "matrix is not symmetric");
  Matrix a = 0.5 * (c + c.transpose());
  Matrix v = Matrix::Identity(n, n);
  const double tol = kJacobiRelTol * a.norm();

  auto off_norm = [&] {
    double s = 0.0;
    for (Eigen::Index p = 0; p < n; ++p)
      for (Eigen::Index q = p + 1; q < n; ++q) s += 2.0 * a(p, q) * a(p, q);
    return std::sqrt(s);
  };

  int sweep = 0;
  for (; sweep < kJacobiMaxSweeps; ++sweep) {
    if (off_norm() <= tol) break;
    for (Eigen::Index p = 0; p < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double cs = 1.0 / std::sqrt(t * t + 1.0);
        const double sn = t * cs;
        // A <- J^T A J with J the (p,q) rotation.
        for (Eigen::Index k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = cs * akp - sn * akq;
          a(k, q) = sn * akp + cs * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = cs * apk - sn * aqk;
          a(q, k) = sn * apk + cs * aqk;
        }
        a(p, q) = 0.0;
        a(q, p) = 0.0;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = cs * vkp - sn * vkq;
          v(k, q) = sn * vkp + cs * vkq;
        }
      }
    }
  }
  if (sweep == kJacobiMaxSweeps && off_norm() > tol)
    throw Error(ErrorClass::Numeric, "Jacobi eigensolver did not converge");

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](auto i, auto j) { return a(i, i) < a(j, j); });
  EigenResult r{Vector(n), Matrix(n, n), sweep};
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Index src = order[static_cast<std::size_t>(i)];
    r.values(i) = a(src, src);
    Vector col = v.col(src);
    Eigen::Index big = 0;
    col.cwiseAbs().maxCoeff(&big);
    if (col(big) < 0.0) col = -col;
    r.vectors.col(i) = col;
  }
  return r;
}

// ---------------------------------------------------------------------------

inline constexpr double kEigenClampTol = 1e-10;

struct LayerStats {
  std::size_t layer = 0;
  Vector mean;
  Matrix cov;
  Vector eigenvalues;   // ascending, clamped at zero
  Matrix eigenvectors;  // orthonormal columns
  std::size_t n_samples = 0;
  bool clamped = false;  // some eigenvalue in [-tol, 0) was set to 0

  std::size_t size() const { return static_cast<std::size_t>(mean.size()); }
  double var(std::size_t k) const { return cov(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k)); }
};

struct DownstreamStats {
  std::size_t layer = 0;  // the layer being fed (l + 1)
  Vector mean_input;      // y_i = sum_k w_ik <x_k> + b_i
  Vector fprime;          // f'_i(y_i) at the mean input
  Vector mean;            // <x_i>
  Vector var;             // C_ii

  std::size_t size() const { return static_cast<std::size_t>(var.size()); }
};

/// Running (count, mean, M2) triple; merged pairwise (Chan et al.).
struct Moments {
  double count = 0.0;
  Vector mean;
  Matrix m2;

  static Moments of(const Eigen::Ref<const Matrix>& x) {
    Moments m;
    m.count = static_cast<double>(x.cols());
    m.mean = x.rowwise().mean();
    const Matrix centered = x.colwise() - m.mean;
    m.m2.noalias() = centered * centered.transpose();
    return m;
  }

  static Moments merge(const Moments& a, const Moments& b) {
    Moments m;
    m.count = a.count + b.count;
    const Vector delta = b.mean - a.mean;
    m.mean = a.mean + delta * (b.count / m.count);
    m.m2 = a.m2 + b.m2 + (delta * delta.transpose()) * (a.count * b.count / m.count);
    return m;
  }
};

/// Pairwise tree reduction over chunk moments in index order.
inline Moments tree_merge(std::vector<Moments> parts) {
  require(!parts.empty(), ErrorClass::Precondition, "nothing to merge");
  while (parts.size() > 1) {
    std::vector<Moments> next;
    next.reserve((parts.size() + 1) / 2);
    for (std::size_t i = 0; i + 1 < parts.size(); i += 2) next.push_back(Moments::merge(parts[i], parts[i + 1]));
    if (parts.size() % 2 == 1) next.push_back(std::move(parts.back()));
    parts = std::move(next);
  }
  return std::move(parts.front());
}

/// Builds LayerStats (with spectrum) from a population covariance.
inline LayerStats finish_layer_stats(std::size_t layer, Vector mean, Matrix cov, std::size_t n) {
  LayerStats s{layer, std::move(mean), std::move(cov), {}, {}, n, false};
  // Exact symmetry; the merge arithmetic can leave last-bit asymmetry.
  s.cov = 0.5 * (s.cov + s.cov.transpose()).eval();
  EigenResult e = jacobi_eigen(s.cov);
  const double scale = std::max(1.0, e.values.size() ? e.values.maxCoeff() : 0.0);
  for (auto& lam : e.values) {
    if (lam < 0.0) {
      require(lam >= -kEigenClampTol * scale, ErrorClass::Numeric,
              "covariance has a negative eigenvalue " + fmt_double(lam));
      lam = 0.0;
      s.clamped = true;
    }
  }
  s.eigenvalues = std::move(e.values);
  s.eigenvectors = std::move(e.vectors);
  return s;
}

/// Stats from an explicit activation matrix (neurons x samples).
inline LayerStats layer_stats_from_activations(std::size_t layer, const Eigen::Ref<const Matrix>& acts) {
  require(acts.cols() > 0, ErrorClass::Precondition, "no samples");
  const Moments m = Moments::of(acts);
  return finish_layer_stats(layer, m.mean, m.m2 / m.count, static_cast<std::size_t>(acts.cols()));
}

inline constexpr Eigen::Index kStatsChunk = 1000;

/// Mean and covariance of hidden layer `layer` and the diagonal statistics
/// of layer + 1 over `inputs` (columns), with frozen weights.
inline std::pair<LayerStats, DownstreamStats> collect_stats(const Network& net, const Eigen::Ref<const Matrix>& inputs,
                                                            std::size_t layer) {
  require(net.is_hidden(layer), ErrorClass::Precondition,
          "statistics need a hidden layer; got " + std::to_string(layer));
  require(inputs.cols() > 0, ErrorClass::Precondition, "empty statistics subset");
  const Eigen::Index n = inputs.cols();
  std::vector<Moments> here;
  std::vector<Moments> next;
  for (Eigen::Index start = 0; start < n; start += kStatsChunk) {
    const Eigen::Index len = std::min(kStatsChunk, n - start);
    // Only layers up to layer + 1 are needed.
    Matrix x = inputs.middleCols(start, len);
    for (std::size_t l = 1; l <= layer + 1; ++l) {
      Matrix y = net.weights(l) * x;
      y.colwise() += net.bias(l);
      if (net.activation(l) == Activation::Tanh) y = y.array().tanh();
      if (l == layer) here.push_back(Moments::of(y));
      if (l == layer + 1) next.push_back(Moments::of(y));
      x = std::move(y);
    }
  }
  const Moments mh = tree_merge(std::move(here));
  const Moments mn = tree_merge(std::move(next));

  LayerStats ls = finish_layer_stats(layer, mh.mean, mh.m2 / mh.count, static_cast<std::size_t>(n));

  DownstreamStats ds;
  ds.layer = layer + 1;
  ds.mean = mn.mean;
  ds.var = mn.m2.diagonal() / mn.count;
  ds.mean_input = net.weights(layer + 1) * ls.mean + net.bias(layer + 1);
  if (net.activation(layer + 1) == Activation::Tanh)
    ds.fprime = 1.0 - ds.mean_input.array().tanh().square();
  else
    ds.fprime = Vector::Ones(ds.mean_input.size());
  return {std::move(ls), std::move(ds)};
}

inline std::pair<LayerStats, DownstreamStats> collect_stats(const Network& net, const Dataset& subset,
                                                            std::size_t layer) {
  return collect_stats(net, subset.inputs, layer);
}

/// Stats of the layer with neuron k removed. Peers' activations do not depend
/// on k, so the reduced mean and covariance are exact; the spectrum is
/// recomputed.
inline LayerStats drop_neuron(const LayerStats& s, std::size_t k) {
  const auto n = static_cast<Eigen::Index>(s.size());
  const auto kk = static_cast<Eigen::Index>(k);
  require(kk < n && n >= 2, ErrorClass::Precondition, "cannot drop neuron from stats");
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < n; ++i)
    if (i != kk) keep.push_back(i);
  Vector mean(n - 1);
  Matrix cov(n - 1, n - 1);
  for (Eigen::Index i = 0; i < n - 1; ++i) {
    mean(i) = s.mean(keep[static_cast<std::size_t>(i)]);
    for (Eigen::Index j = 0; j < n - 1; ++j) cov(i, j) = s.cov(keep[static_cast<std::size_t>(i)], keep[static_cast<std::size_t>(j)]);
  }
  return finish_layer_stats(s.layer, std::move(mean), std::move(cov), s.n_samples);
}

// ---------------------------------------------------------------------------
// Export

inline void write_stats_csv(const LayerStats& s, const std::filesystem::path& path) {
  std::ofstream out(path);
  require(out.good(), ErrorClass::Io, "cannot write " + path.string());
  out << "layer,neuron,mean,var\n";
  for (std::size_t k = 0; k < s.size(); ++k)
    out << s.layer << ',' << k << ',' << fmt_double(s.mean(static_cast<Eigen::Index>(k))) << ',' << fmt_double(s.var(k))
        << '\n';
}

/// Dense row-major text: one matrix row per line, space separated.
inline void write_matrix_txt(const Matrix& m, const std::filesystem::path& path) {
  std::ofstream out(path);
  require(out.good(), ErrorClass::Io, "cannot write " + path.string());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) out << (j ? " " : "") << fmt_double(m(i, j));
    out << '\n';
  }
}

}  // namespace biodyn
