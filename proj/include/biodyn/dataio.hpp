#pragma once

// MNIST IDX ingestion (plain or gzip), deterministic minibatching, and
// synthetic fixtures.

#include <zlib.h>

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "biodyn/error.hpp"
#include "biodyn/netcore.hpp"
#include "biodyn/random.hpp"

namespace biodyn {

/// Samples are the columns of `inputs`.
struct Dataset {
  std::string name;
  Matrix inputs;
  std::vector<Label> labels;
  std::size_t n_classes = 0;
  std::string normalization = "none";

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(inputs.rows()); }

  void validate() const {
    require(!labels.empty(), ErrorClass::Consistency, "dataset is empty");
    require(static_cast<std::size_t>(inputs.cols()) == labels.size(), ErrorClass::Consistency,
            "input and label counts differ");
    for (auto l : labels) require(l < n_classes, ErrorClass::Consistency, "label >= n_classes");
  }
};

/// First `count` samples (or all if smaller).
inline Dataset head(const Dataset& d, std::size_t count) {
  const std::size_t n = std::min(count, d.size());
  Dataset out{d.name, d.inputs.leftCols(static_cast<Eigen::Index>(n)),
              std::vector<Label>(d.labels.begin(), d.labels.begin() + static_cast<std::ptrdiff_t>(n)), d.n_classes,
              d.normalization};
  return out;
}

inline Dataset select(const Dataset& d, const std::vector<std::size_t>& idx) {
  Dataset out{d.name, Matrix(d.inputs.rows(), static_cast<Eigen::Index>(idx.size())), {}, d.n_classes, d.normalization};
  out.labels.reserve(idx.size());
  for (std::size_t c = 0; c < idx.size(); ++c) {
    out.inputs.col(static_cast<Eigen::Index>(c)) = d.inputs.col(static_cast<Eigen::Index>(idx[c]));
    out.labels.push_back(d.labels.at(idx[c]));
  }
  return out;
}

// ---------------------------------------------------------------------------
// IDX

namespace detail {

struct GzCloser {
  void operator()(gzFile f) const {
    if (f) gzclose(f);
  }
};
using GzHandle = std::unique_ptr<gzFile_s, GzCloser>;

/// zlib reads plain files transparently, so this covers .gz and raw IDX.
inline std::vector<std::uint8_t> read_all(const std::filesystem::path& p) {
  require(std::filesystem::exists(p), ErrorClass::Io, "no such file: " + p.string());
  GzHandle f(gzopen(p.c_str(), "rb"));
  require(f != nullptr, ErrorClass::Io, "cannot open " + p.string());
  std::vector<std::uint8_t> out;
  std::array<std::uint8_t, 1 << 16> buf{};
  for (;;) {
    const int n = gzread(f.get(), buf.data(), static_cast<unsigned>(buf.size()));
    if (n < 0) throw Error(ErrorClass::Io, "read failed: " + p.string());
    if (n == 0) break;
    out.insert(out.end(), buf.begin(), buf.begin() + n);
  }
  return out;
}

inline std::uint32_t be32(const std::vector<std::uint8_t>& b, std::size_t off) {
  require(b.size() >= off + 4, ErrorClass::Io, "truncated IDX header");
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

inline void put_be32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  b.push_back(static_cast<std::uint8_t>(v >> 24));
  b.push_back(static_cast<std::uint8_t>(v >> 16));
  b.push_back(static_cast<std::uint8_t>(v >> 8));
  b.push_back(static_cast<std::uint8_t>(v));
}

inline void write_all(const std::filesystem::path& p, const std::vector<std::uint8_t>& bytes) {
  const bool gz = p.extension() == ".gz";
  // mtime is not written by gzopen, so output is byte-stable across runs.
  GzHandle f(gzopen(p.c_str(), gz ? "wb9" : "wbT"));
  require(f != nullptr, ErrorClass::Io, "cannot write " + p.string());
  const int n = gzwrite(f.get(), bytes.data(), static_cast<unsigned>(bytes.size()));
  require(n == static_cast<int>(bytes.size()), ErrorClass::Io, "short write: " + p.string());
}

}  // namespace detail

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

/// Loads an IDX image/label pair. Pixels are scaled from [0,255] to [0,1].
inline Dataset load_mnist_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  const auto img = detail::read_all(images_path);
  const auto lab = detail::read_all(labels_path);
  const std::uint32_t img_magic = detail::be32(img, 0);
  require(img_magic == kIdxImagesMagic, ErrorClass::Format,
          images_path.string() + ": bad image magic " + std::to_string(img_magic));
  const std::uint32_t lab_magic = detail::be32(lab, 0);
  require(lab_magic == kIdxLabelsMagic, ErrorClass::Format,
          labels_path.string() + ": bad label magic " + std::to_string(lab_magic));
  const std::size_t n = detail::be32(img, 4);
  const std::size_t rows = detail::be32(img, 8);
  const std::size_t cols = detail::be32(img, 12);
  const std::size_t n_lab = detail::be32(lab, 4);
  require(n == n_lab, ErrorClass::Consistency,
          "image count " + std::to_string(n) + " != label count " + std::to_string(n_lab));
  require(n > 0 && rows * cols > 0, ErrorClass::Format, "empty IDX payload");
  const std::size_t dim = rows * cols;
  require(img.size() >= 16 + n * dim, ErrorClass::Io, images_path.string() + ": truncated image data");
  require(lab.size() >= 8 + n, ErrorClass::Io, labels_path.string() + ": truncated label data");

  Dataset d;
  d.name = images_path.filename().string();
  d.n_classes = 10;
  d.normalization = "pixel/255";
  d.inputs.resize(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(n));
  d.labels.resize(n);
  for (std::size_t s = 0; s < n; ++s) {
    const std::uint8_t* px = img.data() + 16 + s * dim;
    for (std::size_t p = 0; p < dim; ++p)
      d.inputs(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(s)) = static_cast<double>(px[p]) / 255.0;
    d.labels[s] = lab[8 + s];
    require(d.labels[s] < 10, ErrorClass::Format, "label outside 0..9");
  }
  return d;
}

/// Writes pixels (rounded from [0,1] back to bytes) and labels as IDX; a
/// `.gz` extension selects gzip compression.
inline void write_mnist_idx(const Dataset& d, const std::filesystem::path& images_path,
                            const std::filesystem::path& labels_path, std::size_t rows = 28, std::size_t cols = 28) {
  require(rows * cols == d.dim(), ErrorClass::Shape, "image geometry does not match input dim");
  std::vector<std::uint8_t> img;
  img.reserve(16 + d.size() * d.dim());
  detail::put_be32(img, kIdxImagesMagic);
  detail::put_be32(img, static_cast<std::uint32_t>(d.size()));
  detail::put_be32(img, static_cast<std::uint32_t>(rows));
  detail::put_be32(img, static_cast<std::uint32_t>(cols));
  for (std::size_t s = 0; s < d.size(); ++s)
    for (std::size_t p = 0; p < d.dim(); ++p) {
      const double v = d.inputs(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(s));
      img.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
    }
  std::vector<std::uint8_t> lab;
  detail::put_be32(lab, kIdxLabelsMagic);
  detail::put_be32(lab, static_cast<std::uint32_t>(d.size()));
  for (auto l : d.labels) lab.push_back(static_cast<std::uint8_t>(l));
  detail::write_all(images_path, img);
  detail::write_all(labels_path, lab);
}

inline constexpr const char* kMnistDirEnv = "BIODYN_MNIST_DIR";

/// Locates `<prefix>-images-idx3-ubyte[.gz]` and the matching labels file in
/// a cache directory.
inline std::optional<std::pair<std::filesystem::path, std::filesystem::path>> find_mnist_files(
    const std::filesystem::path& dir, const std::string& prefix = "train") {
  auto pick = [&](const std::string& stem) -> std::optional<std::filesystem::path> {
    for (const char* ext : {"", ".gz"}) {
      auto p = dir / (stem + ext);
      if (std::filesystem::exists(p)) return p;
    }
    return std::nullopt;
  };
  auto img = pick(prefix + "-images-idx3-ubyte");
  auto lab = pick(prefix + "-labels-idx1-ubyte");
  if (!img || !lab) return std::nullopt;
  return std::make_pair(*img, *lab);
}

inline Dataset load_mnist_dir(const std::filesystem::path& dir, const std::string& prefix = "train") {
  auto files = find_mnist_files(dir, prefix);
  require(files.has_value(), ErrorClass::Io, "no " + prefix + " IDX files in " + dir.string());
  return load_mnist_idx(files->first, files->second);
}

// ---------------------------------------------------------------------------
// Batching

enum class BatchOrder { Sequential, ShuffledPerEpoch };

struct BatchPlan {
  std::size_t batch_size = 600;
  std::uint64_t rng_seed = 0;
  BatchOrder order = BatchOrder::ShuffledPerEpoch;
};

/// Sample indices of minibatch `step`. An epoch is floor(n / batch_size)
/// batches; the remainder of each epoch's permutation is not used.
inline std::vector<std::size_t> batch_indices(std::size_t n, const BatchPlan& plan, std::uint64_t step) {
  require(plan.batch_size > 0 && plan.batch_size <= n, ErrorClass::Precondition, "batch size must be in [1, n]");
  const std::uint64_t per_epoch = n / plan.batch_size;
  const std::uint64_t epoch = step / per_epoch;
  const std::size_t offset = static_cast<std::size_t>(step % per_epoch) * plan.batch_size;
  std::vector<std::size_t> out(plan.batch_size);
  if (plan.order == BatchOrder::Sequential) {
    for (std::size_t i = 0; i < plan.batch_size; ++i) out[i] = offset + i;
    return out;
  }
  Rng rng = make_rng(plan.rng_seed, Stream::Shuffle, epoch);
  const auto perm = permutation(n, rng);
  for (std::size_t i = 0; i < plan.batch_size; ++i) out[i] = perm[offset + i];
  return out;
}

struct Batch {
  Matrix inputs;
  std::vector<Label> labels;
};

inline Batch next_batch(const Dataset& d, const BatchPlan& plan, std::uint64_t step) {
  const auto idx = batch_indices(d.size(), plan, step);
  Batch b{Matrix(d.inputs.rows(), static_cast<Eigen::Index>(idx.size())), {}};
  b.labels.reserve(idx.size());
  for (std::size_t c = 0; c < idx.size(); ++c) {
    b.inputs.col(static_cast<Eigen::Index>(c)) = d.inputs.col(static_cast<Eigen::Index>(idx[c]));
    b.labels.push_back(d.labels[idx[c]]);
  }
  return b;
}

// ---------------------------------------------------------------------------
// Synthetic fixtures

/// Uniform [-1,1] inputs with coordinate 1 an exact copy of coordinate 0.
/// Binary labels come from the sign of a random hyperplane.
inline Dataset synthetic_duplicate_dataset(std::size_t dim, std::size_t n, std::uint64_t seed) {
  require(dim >= 2 && n >= dim, ErrorClass::Precondition, "need dim >= 2 and n >= dim");
  Rng rng = make_rng(seed, Stream::Synthetic);
  Vector normal(static_cast<Eigen::Index>(dim));
  for (auto& v : normal) v = uniform(rng, -1.0, 1.0);
  const double offset = uniform(rng, -0.1, 0.1);
  Dataset d{"synthetic_duplicate", Matrix(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(n)), {}, 2, "none"};
  d.labels.reserve(n);
  for (std::size_t s = 0; s < n; ++s) {
    auto col = d.inputs.col(static_cast<Eigen::Index>(s));
    for (std::size_t j = 0; j < dim; ++j) col(static_cast<Eigen::Index>(j)) = uniform(rng, -1.0, 1.0);
    col(1) = col(0);
    d.labels.push_back(normal.dot(col) > offset ? 1u : 0u);
  }
  return d;
}

}  // namespace biodyn
