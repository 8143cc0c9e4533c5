#include <gtest/gtest.h>

#include <cmath>

#include "biodyn/neuronstats.hpp"
#include "biodyn/surgery.hpp"
#include "test_util.hpp"

namespace biodyn {
namespace {

double max_output_gap(const Network& a, const Network& b, const Matrix& inputs) {
  const auto ta = forward_batch(a, inputs);
  const auto tb = forward_batch(b, inputs);
  return (ta.x.back() - tb.x.back()).cwiseAbs().maxCoeff();
}

Matrix random_inputs(std::size_t dim, Eigen::Index n, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(static_cast<Eigen::Index>(dim), n);
  for (auto& v : m.reshaped()) v = uniform(rng, -1.0, 1.0);
  return m;
}

TEST(Erase, ShiftsIndicesDown) {
  Network net = test::random_net({3, 4, 2}, 1);
  const Network before = net;
  erase_neuron(net.params(), 1, 1);
  net.sync_sizes();
  EXPECT_EQ(net.size(1), 3u);
  EXPECT_TRUE(net.weights(1).row(1) == before.weights(1).row(2));
  EXPECT_EQ(net.bias(1)(2), before.bias(1)(3));
  EXPECT_TRUE(net.weights(2).col(0) == before.weights(2).col(0));
  EXPECT_TRUE(net.weights(2).col(1) == before.weights(2).col(2));
  EXPECT_NO_THROW(net.validate());
}

TEST(Death, ZeroOutgoingWeightsChangeNothing) {
  Network net = test::random_net({4, 5, 3}, 2);
  net.weights(2).col(3).setZero();
  const Dataset d = test::random_dataset(4, 50, 3, 3);
  const auto [ls, ds] = collect_stats(net, d, 1);
  for (DeathMethod m : {DeathMethod::A1, DeathMethod::A2, DeathMethod::A3}) {
    LinearRelation rel;
    try {
      rel = relation_for(m, 3, ls, ds, net.weights(2));
    } catch (const Error&) {
      continue;  // A2 is undefined without downstream coupling
    }
    const Network dead = apply_death(net, make_death_plan(rel, ls));
    EXPECT_EQ(dead.size(1), 4u);
    // Exact up to GEMM accumulation order, which depends on the layer width.
    EXPECT_LT(max_output_gap(net, dead, d.inputs), 1e-14) << to_string(m);
  }
}

TEST(Death, ExactAffineDependenceIsExact) {
  // Neuron 4 copies neuron 1's inputs, so x_4 = x_1 exactly.
  Network net = test::random_net({5, 6, 4, 3}, 7);
  net.weights(1).row(4) = net.weights(1).row(1);
  net.bias(1)(4) = net.bias(1)(1);
  const Dataset d = test::random_dataset(5, 400, 3, 8);
  const auto [ls, ds] = collect_stats(net, d, 1);
  const auto report = efficiency_covariance(ls);
  EXPECT_EQ(least_efficient(report), 1u);
  const auto plan = make_death_plan(relation_A3(4, ls, report), ls);
  EXPECT_TRUE(plan.predicted_exact);
  const Network dead = apply_death(net, plan);
  EXPECT_EQ(dead.size(1), 5u);
  EXPECT_LT(max_output_gap(net, dead, random_inputs(5, 1000, 9)), 1e-9);
}

TEST(Death, PredictedExactFlagFollowsResidual) {
  const Network net = test::random_net({4, 5, 3}, 3);
  const Dataset d = test::random_dataset(4, 200, 3, 5);
  const auto [ls, ds] = collect_stats(net, d, 1);
  EXPECT_FALSE(make_death_plan(relation_A1(0, ls), ls).predicted_exact);
}

TEST(Death, Preconditions) {
  const Network net = test::random_net({3, 2, 2}, 1);
  const Dataset d = test::random_dataset(3, 20, 2, 1);
  const auto [ls, ds] = collect_stats(net, d, 1);
  auto plan = make_death_plan(relation_A1(0, ls), ls);
  plan.layer = 2;
  EXPECT_THROW(apply_death(net, plan), Error);
  plan = make_death_plan(relation_A1(0, ls), ls);
  plan.relation.coeffs(0) = 1e-9;
  try {
    apply_death(net, plan);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.error_class(), ErrorClass::Numeric);
  }
  Network one = test::random_net({3, 1, 2}, 1);
  const auto [l1, d1] = collect_stats(one, d, 1);
  EXPECT_THROW(apply_death(one, make_death_plan(relation_A1(0, l1), l1)), Error);
}

TEST(Replication, PreservesFunctionForEverySplitRule) {
  const std::vector<SplitRule> rules = {EqualSplit{}, RandomBit{}, BetaSplit{0.01, 0.01}, BetaSplit{1.0, 1.0},
                                        BetaSplit{100.0, 100.0}};
  for (const auto& rule : rules) {
    double worst = 0.0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      const Network net = test::random_net({6, 5, 4, 3}, seed);
      const std::size_t layer = 1 + seed % 2;
      const std::size_t parent = seed % net.size(layer);
      const Network grown = replicate_split(net, layer, parent, rule, seed * 31);
      ASSERT_EQ(grown.size(layer), net.size(layer) + 1);
      const auto& wo = net.weights(layer + 1);
      const auto& wn = grown.weights(layer + 1);
      const auto p = static_cast<Eigen::Index>(parent);
      for (Eigen::Index i = 0; i < wo.rows(); ++i) EXPECT_EQ(wn(i, p) + wn(i, wn.cols() - 1), wo(i, p));
      EXPECT_TRUE(grown.weights(layer).bottomRows(1) == net.weights(layer).row(p));
      worst = std::max(worst, max_output_gap(net, grown, random_inputs(6, 100, seed)));
    }
    EXPECT_LT(worst, 1e-9) << to_string(rule);
  }
}

TEST(Replication, EqualSplitHalves) {
  const Network net = test::random_net({3, 4, 2}, 5);
  const Network grown = replicate_equal(net, 1, 2);
  EXPECT_TRUE(grown.weights(2).col(2) == 0.5 * net.weights(2).col(2));
  EXPECT_TRUE(grown.weights(2).col(4) == grown.weights(2).col(2));
  EXPECT_TRUE(grown == replicate_split(net, 1, 2, EqualSplit{}, 0));
}

TEST(Replication, RandomBitGivesWholeWeightToOneSide) {
  const Network net = test::random_net({3, 4, 8}, 6);
  const Network grown = replicate_split(net, 1, 0, RandomBit{}, 12);
  int to_parent = 0;
  for (Eigen::Index i = 0; i < 8; ++i) {
    const double p = grown.weights(2)(i, 0), c = grown.weights(2)(i, 4);
    EXPECT_TRUE(p == 0.0 || c == 0.0);
    to_parent += c == 0.0;
  }
  EXPECT_GT(to_parent, 0);
  EXPECT_LT(to_parent, 8);
}

TEST(Replication, SplitEqualThenEigenDeathRestores) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const Network net = test::random_net({6, 5, 4}, seed + 50);
    const Network grown = replicate_equal(net, 1, seed % 5);
    const Dataset d = test::random_dataset(6, 500, 4, seed);
    const auto [ls, ds] = collect_stats(grown, d, 1);
    const auto report = efficiency_covariance(ls);
    const std::size_t k = least_efficient(report);
    EXPECT_TRUE(k == seed % 5 || k == 5);
    const Network restored = apply_death(grown, make_death_plan(relation_A3(k, ls, report), ls));
    EXPECT_LT(max_output_gap(net, restored, random_inputs(6, 1000, seed)), 1e-9);
  }
}

TEST(Replication, RandomNeuronIsSeededAndScaled) {
  const Network net = test::random_net({4, 3, 2}, 1);
  const Network a = replicate_split(net, 1, 0, RandomNeuron{1.0}, 5);
  EXPECT_TRUE(a == replicate_split(net, 1, 0, RandomNeuron{1.0}, 5));
  EXPECT_FALSE(a == replicate_split(net, 1, 0, RandomNeuron{1.0}, 6));
  EXPECT_EQ(a.bias(1)(3), 0.0);
  EXPECT_LE(a.weights(1).row(3).cwiseAbs().maxCoeff(), 0.5);  // 1/sqrt(4)
  EXPECT_TRUE(a.weights(2).leftCols(3) == net.weights(2));
  const Network z = add_random_neuron(net, 1, 0.0, 5);
  EXPECT_LT(max_output_gap(net, z, random_inputs(4, 50, 2)), 1e-14);
}

TEST(Replication, Preconditions) {
  const Network net = test::random_net({3, 2, 2}, 1);
  EXPECT_THROW(replicate_equal(net, 2, 0), Error);
  EXPECT_THROW(replicate_equal(net, 1, 2), Error);
  EXPECT_THROW(replicate_split(net, 1, 0, BetaSplit{0.0, 1.0}, 0), Error);
}

TEST(Replication, ParamsBookkeepingMatchesNetwork) {
  Network net = test::random_net({3, 4, 2}, 1);
  Params v(net.layer_sizes());
  append_neuron(v, 1);
  net = replicate_equal(net, 1, 0);
  EXPECT_EQ(v.weights(1).rows(), net.weights(1).rows());
  EXPECT_EQ(v.weights(2).cols(), net.weights(2).cols());
  erase_neuron(v, 1, 0);
  EXPECT_EQ(v.bias(1).size(), 4);
}

TEST(BetaDraw, SymmetricLargeShapeConcentrates) {
  Rng rng = make_rng(1, Stream::Surgery);
  double sum = 0.0, sum2 = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double x = beta_draw(rng, 100.0, 100.0);
    sum += x;
    sum2 += x * x;
  }
  const double mean = sum / n;
  EXPECT_NEAR(mean, 0.5, 0.02);
  EXPECT_NEAR(std::sqrt(sum2 / n - mean * mean), 0.035267, 0.002);
}

TEST(BetaDraw, SmallShapePilesUpAtTheEnds) {
  // Probability mass within 0.01 of {0, 1}: 0.95524 for Beta(0.01, 0.01), 0.02 for Beta(1, 1).
  auto fraction = [](double a, std::uint64_t seed) {
    Rng rng = make_rng(seed, Stream::Surgery);
    int near = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
      const double x = beta_draw(rng, a, a);
      EXPECT_TRUE(x >= 0.0 && x <= 1.0);
      near += (x < 0.01 || x > 0.99);
    }
    return static_cast<double>(near) / n;
  };
  EXPECT_GE(fraction(0.01, 2), 0.95);
  EXPECT_NEAR(fraction(0.01, 3), 0.95524, 0.006);
  EXPECT_NEAR(fraction(1.0, 4), 0.02, 0.004);
}

}  // namespace
}  // namespace biodyn
