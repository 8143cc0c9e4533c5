#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <vector>

#include "biodyn/dataio.hpp"
#include "biodyn/neuronstats.hpp"
#include "test_util.hpp"

namespace biodyn {
namespace {

namespace fs = std::filesystem;

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("biodyn_" + name + "_" + std::to_string(::getpid()));
  fs::create_directories(p);
  return p;
}

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& b) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

// Two 2x2 images built byte by byte.
struct Fixture {
  fs::path images, labels;
};

Fixture two_image_fixture(const fs::path& dir) {
  const std::vector<std::uint8_t> img = {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2,
                                         0, 255, 51, 102,   // image 0
                                         204, 1, 0, 128};   // image 1
  const std::vector<std::uint8_t> lab = {0, 0, 8, 1, 0, 0, 0, 2, 7, 3};
  Fixture f{dir / "img.idx", dir / "lab.idx"};
  write_bytes(f.images, img);
  write_bytes(f.labels, lab);
  return f;
}

TEST(Idx, DecodesHandBuiltFixture) {
  const auto f = two_image_fixture(temp_dir("fixture"));
  const Dataset d = load_mnist_idx(f.images, f.labels);
  ASSERT_EQ(d.size(), 2u);
  ASSERT_EQ(d.dim(), 4u);
  EXPECT_EQ(d.labels, (std::vector<Label>{7, 3}));
  EXPECT_EQ(d.inputs(0, 0), 0.0);
  EXPECT_EQ(d.inputs(1, 0), 1.0);
  EXPECT_EQ(d.inputs(2, 0), 51.0 / 255.0);
  EXPECT_EQ(d.inputs(3, 0), 102.0 / 255.0);
  EXPECT_EQ(d.inputs(0, 1), 204.0 / 255.0);
  EXPECT_EQ(d.inputs(1, 1), 1.0 / 255.0);
  EXPECT_EQ(d.inputs(3, 1), 128.0 / 255.0);
}

TEST(Idx, ErrorsAreClassified) {
  const auto dir = temp_dir("errors");
  const auto f = two_image_fixture(dir);
  auto class_of = [](auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.error_class();
    }
    return ErrorClass::Precondition;
  };
  // Images file passed as labels: wrong magic.
  EXPECT_EQ(class_of([&] { load_mnist_idx(f.images, f.images); }), ErrorClass::Format);
  // Count mismatch.
  write_bytes(dir / "lab3.idx", {0, 0, 8, 1, 0, 0, 0, 3, 1, 2, 3});
  EXPECT_EQ(class_of([&] { load_mnist_idx(f.images, dir / "lab3.idx"); }), ErrorClass::Consistency);
  // Truncated pixel data.
  write_bytes(dir / "short.idx", {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2, 1, 2, 3});
  EXPECT_EQ(class_of([&] { load_mnist_idx(dir / "short.idx", f.labels); }), ErrorClass::Io);
  EXPECT_EQ(class_of([&] { load_mnist_idx(dir / "missing.idx", f.labels); }), ErrorClass::Io);
}

TEST(Idx, RoundTripPlainAndGzip) {
  const auto dir = temp_dir("roundtrip");
  Dataset d{"x", Matrix(784, 5), {0, 1, 2, 9, 4}, 10, "pixel/255"};
  Rng rng(1);
  for (auto& v : d.inputs.reshaped()) v = static_cast<double>(rng() % 256) / 255.0;
  for (const char* ext : {"", ".gz"}) {
    const fs::path img = dir / (std::string("train-images-idx3-ubyte") + ext);
    const fs::path lab = dir / (std::string("train-labels-idx1-ubyte") + ext);
    write_mnist_idx(d, img, lab);
    const Dataset back = load_mnist_idx(img, lab);
    EXPECT_TRUE(back.inputs == d.inputs);
    EXPECT_EQ(back.labels, d.labels);
    fs::remove(img);
    fs::remove(lab);
  }
}

TEST(Idx, BundledSubsetLoads) {
  const char* dir = std::getenv(kMnistDirEnv);
  if (!dir || !find_mnist_files(dir)) GTEST_SKIP() << "no MNIST directory configured";
  const Dataset d = load_mnist_dir(dir);
  EXPECT_EQ(d.dim(), 784u);
  EXPECT_GE(d.size(), 10000u);
  EXPECT_GE(d.inputs.minCoeff(), 0.0);
  EXPECT_LE(d.inputs.maxCoeff(), 1.0);
  std::vector<int> counts(10);
  for (auto l : d.labels) ++counts[l];
  for (int c : counts) EXPECT_GT(c, 0);
}

TEST(Batch, SequentialStepOne) {
  EXPECT_EQ(batch_indices(4, {2, 0, BatchOrder::Sequential}, 1), (std::vector<std::size_t>{2, 3}));
  // Wraps to the next epoch.
  EXPECT_EQ(batch_indices(4, {2, 0, BatchOrder::Sequential}, 2), (std::vector<std::size_t>{0, 1}));
}

TEST(Batch, DeterministicAndCoversEpoch) {
  const BatchPlan plan{25, 99, BatchOrder::ShuffledPerEpoch};
  EXPECT_EQ(batch_indices(100, plan, 6), batch_indices(100, plan, 6));
  for (std::uint64_t epoch = 0; epoch < 3; ++epoch) {
    std::vector<int> seen(100, 0);
    for (std::uint64_t s = 0; s < 4; ++s)
      for (auto i : batch_indices(100, plan, epoch * 4 + s)) ++seen[i];
    EXPECT_TRUE(std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; }));
  }
  // Different epochs use different orders.
  EXPECT_NE(batch_indices(100, plan, 0), batch_indices(100, plan, 4));
  EXPECT_THROW(batch_indices(10, {11, 0, BatchOrder::Sequential}, 0), Error);
}

TEST(Batch, NextBatchGathersColumns) {
  const Dataset d = test::random_dataset(3, 10, 2, 4);
  const BatchPlan plan{4, 5, BatchOrder::ShuffledPerEpoch};
  const Batch b = next_batch(d, plan, 3);
  const auto idx = batch_indices(10, plan, 3);
  for (std::size_t c = 0; c < idx.size(); ++c) {
    EXPECT_TRUE(b.inputs.col(static_cast<Eigen::Index>(c)) == d.inputs.col(static_cast<Eigen::Index>(idx[c])));
    EXPECT_EQ(b.labels[c], d.labels[idx[c]]);
  }
}

TEST(Synthetic, DuplicateColumnAndRankDeficiency) {
  const Dataset d = synthetic_duplicate_dataset(5, 200, 3);
  EXPECT_TRUE(d.inputs.row(1) == d.inputs.row(0));
  const Dataset again = synthetic_duplicate_dataset(5, 200, 3);
  EXPECT_TRUE(again.inputs == d.inputs);
  EXPECT_EQ(again.labels, d.labels);
  // 2x2 covariance block of the duplicated coordinates is singular.
  const LayerStats s = layer_stats_from_activations(0, d.inputs.topRows(2));
  EXPECT_LT(s.eigenvalues(0), 1e-12);
  EXPECT_GT(s.eigenvalues(1), 0.1);
}

}  // namespace
}  // namespace biodyn
