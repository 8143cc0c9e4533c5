#pragma once

// Topology transforms on hidden layers: removal with rewiring of the next
// layer (programmed death) and addition of a child neuron whose outgoing
// weights are split with its parent (replication).

#include <cmath>
#include <cstdint>
#include <string>
#include <type_traits>
#include <variant>

#include "biodyn/efficiency.hpp"
#include "biodyn/error.hpp"
#include "biodyn/netcore.hpp"
#include "biodyn/random.hpp"

namespace biodyn {

// ---------------------------------------------------------------------------
// Parameter bookkeeping shared by networks and momentum buffers.

/// Deletes neuron k of layer l: row k of the incoming matrix and bias, and
/// column k of the outgoing matrix.
inline void erase_neuron(Params& p, std::size_t l, std::size_t k) {
  Matrix& in = p.weights(l);
  Vector& b = p.bias(l);
  Matrix& out = p.weights(l + 1);
  const auto n = in.rows();
  const auto kk = static_cast<Eigen::Index>(k);
  require(kk < n, ErrorClass::Precondition, "neuron index out of range");
  const Eigen::Index tail = n - kk - 1;
  Matrix in2(n - 1, in.cols());
  in2.topRows(kk) = in.topRows(kk);
  in2.bottomRows(tail) = in.bottomRows(tail);
  Vector b2(n - 1);
  b2.head(kk) = b.head(kk);
  b2.tail(tail) = b.tail(tail);
  Matrix out2(out.rows(), n - 1);
  out2.leftCols(kk) = out.leftCols(kk);
  out2.rightCols(tail) = out.rightCols(tail);
  in = std::move(in2);
  b = std::move(b2);
  out = std::move(out2);
}

/// Appends a zero neuron at the end of layer l.
inline void append_neuron(Params& p, std::size_t l) {
  Matrix& in = p.weights(l);
  Vector& b = p.bias(l);
  Matrix& out = p.weights(l + 1);
  in.conservativeResize(in.rows() + 1, Eigen::NoChange);
  in.row(in.rows() - 1).setZero();
  b.conservativeResize(b.size() + 1);
  b(b.size() - 1) = 0.0;
  out.conservativeResize(Eigen::NoChange, out.cols() + 1);
  out.col(out.cols() - 1).setZero();
}

// ---------------------------------------------------------------------------
// Death

inline constexpr double kExactResidualTol = 1e-10;

struct DeathPlan {
  std::size_t layer = 0;
  std::size_t neuron = 0;
  LinearRelation relation;
  bool predicted_exact = false;  // relation residual below kExactResidualTol
};

/// Mean squared residual <(sum_j a_j x_j - a_0)^2> of a relation under the
/// layer statistics: a^T C a + (a.<x> - a_0)^2.
inline double relation_residual(const LinearRelation& rel, const LayerStats& stats) {
  const double bias = rel.coeffs.dot(stats.mean) - rel.constant;
  return rel.coeffs.dot(stats.cov * rel.coeffs) + bias * bias;
}

inline DeathPlan make_death_plan(const LinearRelation& rel, const LayerStats& stats) {
  return DeathPlan{rel.layer, rel.target, rel, relation_residual(rel, stats) < kExactResidualTol};
}

/// Removes the planned neuron. Every downstream neuron i is rewired as
///   w'_ij = w_ij - w_ik a_j / a_k   (j != k)
///   b'_i  = b_i  + w_ik a_0 / a_k
/// and then the neuron's row, bias and column are deleted.
inline Network apply_death(Network net, const DeathPlan& plan) {
  const std::size_t l = plan.layer;
  const std::size_t k = plan.neuron;
  require(net.is_hidden(l), ErrorClass::Precondition, "only hidden neurons can be removed");
  require(k < net.size(l), ErrorClass::Precondition, "neuron index out of range");
  require(net.size(l) >= 2, ErrorClass::Precondition, "cannot remove the last neuron of a layer");
  const LinearRelation& rel = plan.relation;
  require(rel.target == k && static_cast<std::size_t>(rel.coeffs.size()) == net.size(l), ErrorClass::Precondition,
          "relation does not match the planned neuron");
  const double ak = rel.target_coeff();
  if (!(std::abs(ak) >= kComponentFloor))
    throw Error(ErrorClass::Numeric, "relation coefficient of the removed neuron is too small");

  Matrix& w = net.weights(l + 1);
  Vector& b = net.bias(l + 1);
  const auto kk = static_cast<Eigen::Index>(k);
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    const double wik = w(i, kk);
    if (wik == 0.0) continue;
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      if (j != kk) w(i, j) -= wik * (rel.coeffs(j) / ak);
    b(i) += wik * (rel.constant / ak);
  }
  erase_neuron(net.params(), l, k);
  net.sync_sizes();
  return net;
}

// ---------------------------------------------------------------------------
// Replication

struct EqualSplit {};
struct BetaSplit {
  double alpha = 0.01;
  double beta = 0.01;
};
struct RandomBit {};
struct RandomNeuron {
  double init_scale = 1.0;
};

using SplitRule = std::variant<EqualSplit, BetaSplit, RandomBit, RandomNeuron>;

inline std::string to_string(const SplitRule& rule) {
  return std::visit(
      [](const auto& r) -> std::string {
        using T = std::decay_t<decltype(r)>;
        if constexpr (std::is_same_v<T, EqualSplit>) return "equal";
        else if constexpr (std::is_same_v<T, BetaSplit>) return "beta(" + fmt_double(r.alpha) + ";" + fmt_double(r.beta) + ")";
        else if constexpr (std::is_same_v<T, RandomBit>) return "random_bit";
        else return "random_neuron(" + fmt_double(r.init_scale) + ")";
      },
      rule);
}

struct ReplicationPlan {
  std::size_t layer = 0;
  std::size_t parent = 0;
  SplitRule rule = BetaSplit{};
  std::uint64_t seed = 0;
};

namespace detail {

/// Child appended at the end of layer l with the parent's incoming row and bias.
inline void append_child(Network& net, std::size_t l, std::size_t p) {
  require(net.is_hidden(l), ErrorClass::Precondition, "only hidden neurons can replicate");
  require(p < net.size(l), ErrorClass::Precondition, "parent index out of range");
  append_neuron(net.params(), l);
  const auto pp = static_cast<Eigen::Index>(p);
  Matrix& in = net.weights(l);
  in.row(in.rows() - 1) = in.row(pp);
  Vector& b = net.bias(l);
  b(b.size() - 1) = b(pp);
}

}  // namespace detail

/// Equal split: child copies the parent's inputs; both keep half of each
/// outgoing weight.
inline Network replicate_equal(Network net, std::size_t layer, std::size_t parent) {
  detail::append_child(net, layer, parent);
  Matrix& out = net.weights(layer + 1);
  const auto pp = static_cast<Eigen::Index>(parent);
  const auto c = out.cols() - 1;
  out.col(pp) *= 0.5;
  out.col(c) = out.col(pp);
  net.sync_sizes();
  return net;
}

/// New neuron with weights drawn like the initializer (uniform with bound
/// scale/sqrt(fan_in)) and zero bias; no output preservation.
inline Network add_random_neuron(Network net, std::size_t layer, double init_scale, std::uint64_t seed) {
  require(net.is_hidden(layer), ErrorClass::Precondition, "neurons can only be added to hidden layers");
  require(init_scale >= 0.0, ErrorClass::Precondition, "init scale must be nonnegative");
  append_neuron(net.params(), layer);
  Rng rng = make_rng(seed, Stream::Surgery);
  Matrix& in = net.weights(layer);
  const double in_bound = init_scale / std::sqrt(static_cast<double>(in.cols()));
  for (Eigen::Index j = 0; j < in.cols(); ++j) in(in.rows() - 1, j) = uniform(rng, -in_bound, in_bound);
  Matrix& out = net.weights(layer + 1);
  const double out_bound = init_scale / std::sqrt(static_cast<double>(out.cols()));
  for (Eigen::Index i = 0; i < out.rows(); ++i) out(i, out.cols() - 1) = uniform(rng, -out_bound, out_bound);
  net.sync_sizes();
  return net;
}

/// Splits each outgoing weight w_ip into chi_i * w_ip (parent) and the exact
/// remainder w_ip - chi_i * w_ip (child), with chi_i drawn per downstream
/// neuron from the rule.
inline Network replicate_split(Network net, std::size_t layer, std::size_t parent, const SplitRule& rule,
                               std::uint64_t seed) {
  if (const auto* rn = std::get_if<RandomNeuron>(&rule)) return add_random_neuron(std::move(net), layer, rn->init_scale, seed);
  if (const auto* bs = std::get_if<BetaSplit>(&rule))
    require(bs->alpha > 0.0 && bs->beta > 0.0 && std::isfinite(bs->alpha) && std::isfinite(bs->beta),
            ErrorClass::Precondition, "Beta split parameters must be positive");
  detail::append_child(net, layer, parent);
  Rng rng = make_rng(seed, Stream::Surgery);
  Matrix& out = net.weights(layer + 1);
  const auto pp = static_cast<Eigen::Index>(parent);
  const auto c = out.cols() - 1;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    double chi = 0.5;
    if (const auto* bs = std::get_if<BetaSplit>(&rule)) chi = beta_draw(rng, bs->alpha, bs->beta);
    else if (std::holds_alternative<RandomBit>(rule)) chi = (rng() >> 63) ? 1.0 : 0.0;
    const double wip = out(i, pp);
    double keep = chi * wip;
    const double child = wip - keep;
    // If the subtraction rounded, |child| > |wip|/2 and wip - child is exact.
    if (keep + child != wip) keep = wip - child;
    out(i, pp) = keep;
    out(i, c) = child;
  }
  net.sync_sizes();
  return net;
}

inline Network replicate(Network net, const ReplicationPlan& plan) {
  return replicate_split(std::move(net), plan.layer, plan.parent, plan.rule, plan.seed);
}

}  // namespace biodyn
