#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "biodyn/oracle.hpp"
#include "test_util.hpp"

namespace biodyn {
namespace {

// Loss change recomputed without the surgery code: the removed activation is
// replaced by the value the relation predicts from its peers.
double substituted_delta(const Network& net, const Dataset& d, const LinearRelation& rel, LossKind kind) {
  const std::size_t l = rel.layer;
  const auto k = static_cast<Eigen::Index>(rel.target);
  double before = 0.0, after = 0.0;
  for (Eigen::Index s = 0; s < d.inputs.cols(); ++s) {
    const Label lab = d.labels[static_cast<std::size_t>(s)];
    const auto t = forward(net, d.inputs.col(s));
    before += loss(t, kind, lab);
    Vector x = t.x[l];
    const double peers = rel.coeffs.dot(x) - rel.coeffs(k) * x(k);
    x(k) = (rel.constant - peers) / rel.coeffs(k);
    for (std::size_t m = l + 1; m < net.layer_count(); ++m) {
      const Vector y = net.weights(m) * x + net.bias(m);
      x = net.activation(m) == Activation::Tanh ? Vector(y.array().tanh()) : y;
    }
    ForwardTrace tail;
    tail.x = {x};
    tail.y = {x};
    after += loss(tail, kind, lab);
  }
  return (after - before) / static_cast<double>(d.inputs.cols());
}

TEST(DeltaLoss, ZeroOutgoingWeightsGiveZero) {
  Network net = test::random_net({4, 5, 3}, 1);
  net.weights(2).col(1).setZero();
  const Dataset d = test::random_dataset(4, 80, 3, 2);
  const auto [ls, ds] = collect_stats(net, d, 1);
  const auto plan = make_death_plan(relation_A1(1, ls), ls);
  EXPECT_EQ(delta_loss_on_removal(net, d, LossKind::CrossEntropy, plan), 0.0);
}

TEST(DeltaLoss, DuplicateUnderEigenRelationIsNegligible) {
  const Network net = replicate_equal(test::random_net({4, 5, 3}, 3), 1, 2);
  const Dataset d = test::random_dataset(4, 300, 3, 4);
  const auto [ls, ds] = collect_stats(net, d, 1);
  const auto plan = make_death_plan(relation_A3(5, ls), ls);
  EXPECT_LT(std::abs(delta_loss_on_removal(net, d, LossKind::CrossEntropy, plan)), 1e-9);
}

TEST(DeltaLoss, MatchesIndependentSubstitution) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Network net = test::random_net({4, 6, 5, 3}, seed);
    const Dataset d = test::random_dataset(4, 150, 3, seed + 10);
    for (std::size_t layer : {1, 2}) {
      const auto [ls, ds] = collect_stats(net, d, layer);
      for (DeathMethod m : {DeathMethod::A1, DeathMethod::A2, DeathMethod::A3}) {
        for (LossKind kind : {LossKind::CrossEntropy, LossKind::BoundaryMSE}) {
          const auto rel = relation_for(m, 1, ls, ds, net.weights(layer + 1));
          const double got = delta_loss_on_removal(net, d, kind, make_death_plan(rel, ls));
          EXPECT_NEAR(got, substituted_delta(net, d, rel, kind), 1e-10) << to_string(m);
        }
      }
    }
  }
}

TEST(Scan, OneRowPerNeuronAndNoMutation) {
  const Network net = test::random_net({4, 7, 3}, 2);
  const Network copy = net;
  const Dataset d = test::random_dataset(4, 120, 3, 3);
  for (DeathMethod m : {DeathMethod::A1, DeathMethod::A2, DeathMethod::A3}) {
    const auto scan = scan_layer(net, d, 1, m, LossKind::CrossEntropy);
    EXPECT_EQ(scan.rows.size() + scan.skipped.size(), 7u);
    EXPECT_EQ(scan.rows.size(), 7u) << to_string(m);
    for (std::size_t r = 0; r < scan.rows.size(); ++r) EXPECT_EQ(scan.rows[r].neuron, r);
    EXPECT_NEAR(scan.base_loss, mean_loss(net, d, LossKind::CrossEntropy), 1e-15);
  }
  EXPECT_TRUE(net == copy);
}

TEST(Scan, CsvRows) {
  const Network net = test::random_net({4, 3, 3}, 2);
  const Dataset d = test::random_dataset(4, 30, 3, 3);
  const auto scan = scan_layer(net, d, 1, DeathMethod::A1, LossKind::CrossEntropy);
  std::ostringstream out;
  write_scan_header(out);
  write_scan_rows(out, 7, 100, scan);
  const std::string s = out.str();
  EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), 4);
  EXPECT_EQ(s.rfind("seed,step,layer,neuron,method,efficiency,delta_loss\n7,100,1,0,A1,", 0), 0u);
}

TEST(FitSlope, ExactLine) {
  std::vector<ScanRow> rows = {{0, 1.0, DeathMethod::A1, 0.0}, {1, 3.0, DeathMethod::A1, 1.0},
                               {2, 5.0, DeathMethod::A1, 2.0}};
  const auto f = fit_slope(rows);
  EXPECT_NEAR(f.slope, 2.0, 1e-15);
  EXPECT_NEAR(f.intercept, 1.0, 1e-15);
  EXPECT_EQ(f.n, 3u);
  EXPECT_NEAR(f.rss, 0.0, 1e-28);
  EXPECT_NEAR(pearson(rows), 1.0, 1e-15);
}

TEST(FitSlope, PermutationInvariantAndSkipsInfinite) {
  Rng rng(4);
  std::vector<ScanRow> rows;
  for (std::size_t i = 0; i < 20; ++i) rows.push_back({i, uniform(rng, 0, 1), DeathMethod::A3, uniform(rng, -1, 1)});
  const auto f = fit_slope(rows);
  auto shuffled = rows;
  std::reverse(shuffled.begin(), shuffled.end());
  shuffled.push_back({99, std::numeric_limits<double>::infinity(), DeathMethod::A3, 5.0});
  const auto g = fit_slope(shuffled);
  EXPECT_NEAR(f.slope, g.slope, 1e-12);
  EXPECT_NEAR(f.intercept, g.intercept, 1e-12);
  EXPECT_EQ(g.n, 20u);
}

TEST(FitSlope, SingularIsNumericError) {
  std::vector<ScanRow> rows = {{0, 1.0, DeathMethod::A1, 0.5}, {1, 2.0, DeathMethod::A1, 0.5}};
  try {
    fit_slope(rows);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.error_class(), ErrorClass::Numeric);
  }
}

}  // namespace
}  // namespace biodyn
