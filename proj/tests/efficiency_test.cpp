#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "biodyn/efficiency.hpp"
#include "biodyn/surgery.hpp"
#include "test_util.hpp"

namespace biodyn {
namespace {

// Layer stats from activations plus hand-specified downstream factors.
struct Instance {
  LayerStats stats;
  DownstreamStats down;
  Matrix w;
};

Instance random_instance(std::uint64_t seed, Eigen::Index n = 5, Eigen::Index m = 4) {
  Rng rng(seed);
  Matrix acts(n, 200);
  for (auto& v : acts.reshaped()) v = std::tanh(uniform(rng, -2.0, 2.0));
  Instance inst{layer_stats_from_activations(1, acts), {}, Matrix(m, n)};
  for (auto& v : inst.w.reshaped()) v = uniform(rng, -2.0, 2.0);
  inst.down.layer = 2;
  inst.down.fprime = Vector(m);
  inst.down.var = Vector(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    inst.down.fprime(i) = uniform(rng, 0.05, 1.0);
    inst.down.var(i) = uniform(rng, 0.01, 1.0);
  }
  inst.down.mean_input = Vector::Zero(m);
  inst.down.mean = Vector::Zero(m);
  return inst;
}

TEST(ConnectionCut, HandEvaluation) {
  LayerStats s;
  s.layer = 1;
  s.mean = Vector::Zero(1);
  s.cov = Matrix::Constant(1, 1, 0.5);
  DownstreamStats d{2, Vector::Zero(1), Vector::Constant(1, 0.8), Vector::Zero(1), Vector::Constant(1, 0.4)};
  const Matrix w = Matrix::Constant(1, 1, 2.0);
  EXPECT_NEAR(efficiency_connection_cut(s, d, w).values[0], 3.2, 1e-14);
}

TEST(ConnectionCut, ZeroWeightsOrConstantNeuron) {
  Instance inst = random_instance(3);
  inst.w.col(1).setZero();
  inst.stats.cov.row(3).setZero();
  inst.stats.cov.col(3).setZero();
  const auto r = efficiency_connection_cut(inst.stats, inst.down, inst.w);
  EXPECT_EQ(r.values[1], 0.0);
  EXPECT_EQ(r.values[3], 0.0);
  EXPECT_GT(r.values[0], 0.0);
}

TEST(ConnectionCut, DeadDownstreamIsSkippedAndAllDeadIsError) {
  Instance inst = random_instance(4);
  const auto full = efficiency_connection_cut(inst.stats, inst.down, inst.w);
  inst.down.var(0) = 1e-13;
  const auto partial = efficiency_connection_cut(inst.stats, inst.down, inst.w);
  for (std::size_t k = 0; k < partial.size(); ++k) EXPECT_LT(partial.values[k], full.values[k]);
  inst.down.var.setConstant(0.0);
  try {
    efficiency_connection_cut(inst.stats, inst.down, inst.w);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.error_class(), ErrorClass::Numeric);
  }
}

TEST(Covariance, DiagonalAndScaling) {
  LayerStats s = layer_stats_from_activations(1, Matrix::Zero(2, 1));
  s.cov = Eigen::Vector2d(1.0, 4.0).asDiagonal();
  const auto e = jacobi_eigen(s.cov);
  s.eigenvalues = e.values;
  s.eigenvectors = e.vectors;
  const auto r = efficiency_covariance(s);
  EXPECT_DOUBLE_EQ(r.values[0], 1.0);
  EXPECT_DOUBLE_EQ(r.values[1], 4.0);
  EXPECT_EQ(*r.argmin_eigen[0], 0u);
  EXPECT_EQ(*r.argmin_eigen[1], 1u);

  const Instance inst = random_instance(8);
  const auto base = efficiency_covariance(inst.stats);
  const LayerStats scaled = finish_layer_stats(1, inst.stats.mean, 3.5 * inst.stats.cov, 200);
  const auto sr = efficiency_covariance(scaled);
  for (std::size_t k = 0; k < base.size(); ++k) EXPECT_NEAR(sr.values[k], 3.5 * base.values[k], 1e-10 * sr.values[k]);
}

TEST(Covariance, DuplicatedPairIsZero) {
  Rng rng(2);
  Matrix acts(4, 100);
  for (auto& v : acts.reshaped()) v = uniform(rng, -1.0, 1.0);
  acts.row(3) = acts.row(1);
  const auto r = efficiency_covariance(layer_stats_from_activations(1, acts));
  EXPECT_LT(r.values[1], 1e-12);
  EXPECT_LT(r.values[3], 1e-12);
  EXPECT_GT(r.values[0], 1e-3);
}

TEST(Covariance, RankingInvariantUnderActivationScale) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed);
    Matrix acts(6, 80);
    for (auto& v : acts.reshaped()) v = uniform(rng, -1.0, 1.0);
    const auto a = efficiency_covariance(layer_stats_from_activations(1, acts));
    const auto b = efficiency_covariance(layer_stats_from_activations(1, 2.5 * acts));
    EXPECT_EQ(least_efficient(a), least_efficient(b));
    for (std::size_t k = 0; k < a.size(); ++k) EXPECT_NEAR(b.values[k] / a.values[k], 6.25, 1e-9);
  }
}

TEST(Covariance, ComponentFloorGivesInfiniteSentinel) {
  LayerStats s = layer_stats_from_activations(1, Matrix::Zero(2, 1));
  s.eigenvalues = Eigen::Vector2d(0.5, 1.0);
  s.eigenvectors = Matrix::Identity(2, 2);
  s.eigenvectors(1, 1) = 1e-5;  // squared component below the floor
  s.eigenvectors(1, 0) = 1e-5;
  const auto r = efficiency_covariance(s);
  EXPECT_TRUE(std::isinf(r.values[1]));
  EXPECT_FALSE(r.argmin_eigen[1].has_value());
  EXPECT_EQ(least_efficient(r), 0u);
  EXPECT_THROW(relation_A3(1, s, r), Error);
}

TEST(RelationA1, MeanSubstitution) {
  Network net = test::random_net({3, 4, 3}, 5);
  Matrix acts(4, 10);
  acts.setRandom();
  LayerStats s = layer_stats_from_activations(1, acts);
  s.mean(2) = 0.3;
  const auto rel = relation_A1(2, s);
  EXPECT_EQ(rel.constant, 0.3);
  EXPECT_EQ(rel.coeffs, Vector::Unit(4, 2));
  const Network dead = apply_death(net, make_death_plan(rel, s));
  EXPECT_LT((dead.bias(2) - (net.bias(2) + 0.3 * net.weights(2).col(2))).cwiseAbs().maxCoeff(), 1e-15);
  // y_i at the mean input is unchanged.
  const Vector y_before = net.weights(2) * s.mean + net.bias(2);
  Vector mean_wo(3);
  mean_wo << s.mean(0), s.mean(1), s.mean(3);
  const Vector y_after = dead.weights(2) * mean_wo + dead.bias(2);
  EXPECT_LT((y_after - y_before).cwiseAbs().maxCoeff(), 1e-14);

  s.mean(2) = 0.0;
  const Network cut = apply_death(net, make_death_plan(relation_A1(2, s), s));
  EXPECT_TRUE(cut.bias(2) == net.bias(2));
}

TEST(RelationA1, ConstantNeuronDeathIsExact) {
  // Hidden neuron 1 has zero incoming weights: its activation is tanh(b) on every input.
  Network net = test::random_net({4, 5, 3}, 3);
  net.weights(1).row(1).setZero();
  const Dataset d = test::random_dataset(4, 100, 3, 4);
  const auto [ls, ds] = collect_stats(net, d, 1);
  EXPECT_LT(ls.var(1), 1e-25);
  const Network dead = apply_death(net, make_death_plan(relation_A1(1, ls), ls));
  for (Eigen::Index s = 0; s < 100; ++s) {
    const auto a = forward(net, d.inputs.col(s));
    const auto b = forward(dead, d.inputs.col(s));
    EXPECT_LT((a.y[2] - b.y[2]).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(RelationA2, SingleDownstreamReproducesConditionalMean) {
  // Layer {k=0, j=1}; one downstream neuron i.
  Instance inst = random_instance(6, 2, 1);
  const auto rel = relation_A2(0, inst.stats, inst.down, inst.w);
  const double wik = inst.w(0, 0), wij = inst.w(0, 1);
  const double f = inst.down.fprime(0), cii = inst.down.var(0);
  EXPECT_NEAR(conditional_variance(0, inst.down, inst.w), cii / (f * f * wik * wik), 1e-15);
  for (double xj : {-0.7, 0.1, 0.9}) {
    const double mu = (wik * inst.stats.mean(0) + wij * inst.stats.mean(1)) / wik - (wij / wik) * xj;
    const double predicted = (rel.constant - rel.coeffs(1) * xj) / rel.coeffs(0);
    EXPECT_NEAR(predicted, mu, 1e-12);
  }
}

TEST(RelationA2, MeanConsistencyAndEfficiencyIdentity) {
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    const Instance inst = random_instance(seed + 40);
    const auto eff = efficiency_connection_cut(inst.stats, inst.down, inst.w);
    for (std::size_t k = 0; k < inst.stats.size(); ++k) {
      const auto rel = relation_A2(k, inst.stats, inst.down, inst.w);
      // Predicted x_k with every peer at its mean equals <x_k>.
      double peers = 0.0;
      for (std::size_t j = 0; j < inst.stats.size(); ++j)
        if (j != k) peers += rel.coeffs(static_cast<Eigen::Index>(j)) * inst.stats.mean(static_cast<Eigen::Index>(j));
      EXPECT_NEAR(rel.constant - peers, inst.stats.mean(static_cast<Eigen::Index>(k)), 1e-12);
      const double s2 = conditional_variance(k, inst.down, inst.w);
      const double ratio = inst.stats.var(k) / s2;
      EXPECT_LT(std::abs(eff.values[k] - ratio), 1e-10 * std::abs(ratio));
    }
  }
}

TEST(RelationA2, DegenerateWhenNoDownstreamCoupling) {
  Instance inst = random_instance(2);
  inst.w.col(0).setZero();
  EXPECT_THROW(relation_A2(0, inst.stats, inst.down, inst.w), Error);
}

TEST(RelationA3, RecoversPlantedAffineDependence) {
  Rng rng(13);
  Matrix acts(3, 500);
  for (Eigen::Index s = 0; s < 500; ++s) {
    acts(0, s) = uniform(rng, -1.0, 1.0);
    acts(1, s) = uniform(rng, -1.0, 1.0);
    acts(2, s) = 0.5 * acts(0, s) + 0.25;
  }
  const LayerStats st = layer_stats_from_activations(1, acts);
  const auto rel = relation_A3(2, st);
  // Normalize so that a_2 = -1: expect (0.5, 0, -1) and a_0 = -0.25.
  const double scale = -1.0 / rel.coeffs(2);
  EXPECT_NEAR(rel.coeffs(0) * scale, 0.5, 1e-6);
  EXPECT_NEAR(rel.coeffs(1) * scale, 0.0, 1e-6);
  EXPECT_NEAR(rel.constant * scale, -0.25, 1e-6);
}

TEST(RelationA3, DuplicatePairRelation) {
  Rng rng(1);
  Matrix acts(3, 100);
  for (auto& v : acts.reshaped()) v = uniform(rng, -1.0, 1.0);
  acts.row(1) = acts.row(0);
  const LayerStats st = layer_stats_from_activations(1, acts);
  const auto rel = relation_A3(1, st);
  const double s = 1.0 / std::sqrt(2.0);
  EXPECT_NEAR(std::abs(rel.coeffs(0)), s, 1e-9);
  EXPECT_NEAR(rel.coeffs(0), -rel.coeffs(1), 1e-9);
  EXPECT_NEAR(rel.coeffs(2), 0.0, 1e-9);
  EXPECT_NEAR(rel.constant, 0.0, 1e-9);
}

TEST(RelationA3, ResidualEqualsChosenEigenvalue) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    Matrix acts(5, 300);
    for (auto& v : acts.reshaped()) v = std::tanh(uniform(rng, -2.0, 2.0));
    acts.row(4) += 0.3 * acts.row(0);
    const LayerStats st = layer_stats_from_activations(1, acts);
    const auto report = efficiency_covariance(st);
    for (std::size_t k = 0; k < 5; ++k) {
      const auto rel = relation_A3(k, st, report);
      EXPECT_NEAR(rel.coeffs.norm(), 1.0, 1e-12);
      // Direct sample average of the squared residual.
      const Vector r = (rel.coeffs.transpose() * acts).transpose().array() - rel.constant;
      const double residual = r.squaredNorm() / 300.0;
      const double lambda = st.eigenvalues(static_cast<Eigen::Index>(*report.argmin_eigen[k]));
      EXPECT_NEAR(residual, lambda, 1e-10);
      EXPECT_NEAR(relation_residual(rel, st), lambda, 1e-10);
    }
  }
}

TEST(Selection, TiesGoToLowestIndex) {
  EfficiencyReport r{1, DeathMethod::A1, {0.5, 0.1, 0.1, 0.2}, {}};
  EXPECT_EQ(least_efficient(r), 1u);
}

}  // namespace
}  // namespace biodyn
