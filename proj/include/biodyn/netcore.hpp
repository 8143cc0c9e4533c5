#pragma once

// Layered feedforward network: representation, forward propagation, losses
// and reverse-mode gradients. Boundary layers (input, output) are linear,
// hidden layers are tanh.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "biodyn/error.hpp"
#include "biodyn/random.hpp"

namespace biodyn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Label = std::uint32_t;

enum class Activation { Linear, Tanh };
enum class LossKind { BoundaryMSE, CrossEntropy };

inline const char* to_string(Activation a) { return a == Activation::Linear ? "linear" : "tanh"; }
inline const char* to_string(LossKind k) { return k == LossKind::BoundaryMSE ? "mse" : "cross_entropy"; }

/// Weight matrices and bias vectors indexed by destination layer l >= 1.
/// Entry weights(l)(i, j) connects neuron j of layer l-1 to neuron i of layer l.
/// Also used for gradients and momentum buffers, which share the shapes.
class Params {
 public:
  Params() = default;

  explicit Params(const std::vector<std::size_t>& sizes) {
    for (std::size_t l = 1; l < sizes.size(); ++l) {
      w_.push_back(Matrix::Zero(static_cast<Eigen::Index>(sizes[l]), static_cast<Eigen::Index>(sizes[l - 1])));
      b_.push_back(Vector::Zero(static_cast<Eigen::Index>(sizes[l])));
    }
  }

  std::size_t gaps() const { return w_.size(); }

  Matrix& weights(std::size_t l) { return w_.at(l - 1); }
  const Matrix& weights(std::size_t l) const { return w_.at(l - 1); }
  Vector& bias(std::size_t l) { return b_.at(l - 1); }
  const Vector& bias(std::size_t l) const { return b_.at(l - 1); }

  void set_zero() {
    for (auto& m : w_) m.setZero();
    for (auto& v : b_) v.setZero();
  }

  bool operator==(const Params& o) const {
    if (w_.size() != o.w_.size()) return false;
    for (std::size_t g = 0; g < w_.size(); ++g) {
      if (w_[g].rows() != o.w_[g].rows() || w_[g].cols() != o.w_[g].cols()) return false;
      if (w_[g] != o.w_[g] || b_[g] != o.b_[g]) return false;
    }
    return true;
  }

 private:
  std::vector<Matrix> w_;
  std::vector<Vector> b_;
};

class Network {
 public:
  Network() = default;

  /// All-zero network with the given layer sizes.
  explicit Network(std::vector<std::size_t> sizes) : sizes_(std::move(sizes)) {
    require(sizes_.size() >= 2, ErrorClass::Shape, "network needs at least an input and an output layer");
    for (auto s : sizes_) require(s > 0, ErrorClass::Shape, "layer sizes must be positive");
    params_ = Params(sizes_);
  }

  const std::vector<std::size_t>& layer_sizes() const { return sizes_; }
  std::size_t layer_count() const { return sizes_.size(); }
  std::size_t size(std::size_t l) const { return sizes_.at(l); }
  std::size_t input_dim() const { return sizes_.front(); }
  std::size_t output_dim() const { return sizes_.back(); }

  bool is_hidden(std::size_t l) const { return l >= 1 && l + 1 < sizes_.size(); }
  Activation activation(std::size_t l) const { return is_hidden(l) ? Activation::Tanh : Activation::Linear; }

  Matrix& weights(std::size_t l) { return params_.weights(l); }
  const Matrix& weights(std::size_t l) const { return params_.weights(l); }
  Vector& bias(std::size_t l) { return params_.bias(l); }
  const Vector& bias(std::size_t l) const { return params_.bias(l); }

  Params& params() { return params_; }
  const Params& params() const { return params_; }

  /// Re-derives layer sizes from the stored matrices after a topology change
  /// and checks every shape invariant.
  void sync_sizes() {
    for (std::size_t l = 1; l < sizes_.size(); ++l) sizes_[l] = static_cast<std::size_t>(weights(l).rows());
    validate();
  }

  void validate() const {
    require(sizes_.size() >= 2 && params_.gaps() + 1 == sizes_.size(), ErrorClass::Shape, "layer count mismatch");
    for (std::size_t l = 1; l < sizes_.size(); ++l) {
      const auto rows = static_cast<std::size_t>(weights(l).rows());
      const auto cols = static_cast<std::size_t>(weights(l).cols());
      require(sizes_[l] > 0, ErrorClass::Shape, "empty layer " + std::to_string(l));
      require(rows == sizes_[l] && cols == sizes_[l - 1], ErrorClass::Shape,
              "weight matrix into layer " + std::to_string(l) + " has wrong shape");
      require(static_cast<std::size_t>(bias(l).size()) == sizes_[l], ErrorClass::Shape,
              "bias of layer " + std::to_string(l) + " has wrong length");
    }
  }

  bool operator==(const Network& o) const { return sizes_ == o.sizes_ && params_ == o.params_; }

 private:
  std::vector<std::size_t> sizes_;
  Params params_;
};

using Gradients = Params;

/// Uniform weights in [-scale/sqrt(fan_in), +scale/sqrt(fan_in)], zero biases.
inline Network init_network(const std::vector<std::size_t>& sizes, std::uint64_t seed, double scale = 1.0) {
  Network net(sizes);
  Rng rng = make_rng(seed, Stream::Init);
  for (std::size_t l = 1; l < sizes.size(); ++l) {
    const double bound = scale / std::sqrt(static_cast<double>(sizes[l - 1]));
    Matrix& w = net.weights(l);
    // Row-major fill so the draw order matches the conventional w[i][j] layout.
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = uniform(rng, -bound, bound);
  }
  return net;
}

// ---------------------------------------------------------------------------
// Single-sample path

struct ForwardTrace {
  std::vector<Vector> y;     // pre-activations; y[0] is the input
  std::vector<Vector> x;     // activations; x[0] is the input
  std::vector<Vector> dfdy;  // f'(y) per layer

  const Vector& output() const { return x.back(); }
};

inline ForwardTrace forward(const Network& net, const Vector& input) {
  require(static_cast<std::size_t>(input.size()) == net.input_dim(), ErrorClass::Shape,
          "input length " + std::to_string(input.size()) + " != " + std::to_string(net.input_dim()));
  const std::size_t L = net.layer_count();
  ForwardTrace t;
  t.y.resize(L);
  t.x.resize(L);
  t.dfdy.resize(L);
  t.y[0] = input;
  t.x[0] = input;
  t.dfdy[0] = Vector::Ones(input.size());
  for (std::size_t l = 1; l < L; ++l) {
    t.y[l] = net.weights(l) * t.x[l - 1] + net.bias(l);
    if (net.activation(l) == Activation::Tanh) {
      t.x[l] = t.y[l].array().tanh();
      t.dfdy[l] = 1.0 - t.x[l].array().square();
    } else {
      t.x[l] = t.y[l];
      t.dfdy[l] = Vector::Ones(t.y[l].size());
    }
  }
  return t;
}

inline double loss_boundary_mse(const ForwardTrace& trace, const Vector& target) {
  require(target.size() == trace.output().size(), ErrorClass::Shape, "target length differs from output dim");
  return 0.5 * (trace.output() - target).squaredNorm();
}

/// -log softmax(logits)[label] with max subtraction.
inline double cross_entropy_from_logits(const Eigen::Ref<const Vector>& z, std::size_t label) {
  require(label < static_cast<std::size_t>(z.size()), ErrorClass::Precondition, "label out of range");
  require(z.size() >= 2, ErrorClass::Shape, "cross-entropy needs at least two classes");
  const double m = z.maxCoeff();
  const double lse = m + std::log((z.array() - m).exp().sum());
  return lse - z(static_cast<Eigen::Index>(label));
}

inline double loss_cross_entropy(const ForwardTrace& trace, std::size_t label) {
  return cross_entropy_from_logits(trace.output(), label);
}

inline Vector one_hot(std::size_t label, std::size_t n) {
  require(label < n, ErrorClass::Precondition, "label out of range");
  Vector v = Vector::Zero(static_cast<Eigen::Index>(n));
  v(static_cast<Eigen::Index>(label)) = 1.0;
  return v;
}

inline double loss(const ForwardTrace& trace, LossKind kind, std::size_t label) {
  if (kind == LossKind::CrossEntropy) return loss_cross_entropy(trace, label);
  return loss_boundary_mse(trace, one_hot(label, static_cast<std::size_t>(trace.output().size())));
}

/// dH/d(output pre-activation) for a vector target (BoundaryMSE only).
inline Vector output_delta_mse(const ForwardTrace& trace, const Vector& target) {
  require(target.size() == trace.output().size(), ErrorClass::Shape, "target length differs from output dim");
  return trace.output() - target;
}

inline Vector output_delta(const ForwardTrace& trace, LossKind kind, std::size_t label) {
  const Vector& z = trace.output();
  if (kind == LossKind::BoundaryMSE) return output_delta_mse(trace, one_hot(label, static_cast<std::size_t>(z.size())));
  require(label < static_cast<std::size_t>(z.size()), ErrorClass::Precondition, "label out of range");
  const double m = z.maxCoeff();
  Vector p = (z.array() - m).exp();
  p /= p.sum();
  p(static_cast<Eigen::Index>(label)) -= 1.0;
  return p;
}

/// Reverse-mode chain rule given dH/dy at the output layer.
inline Gradients backward_from_delta(const Network& net, const ForwardTrace& trace, Vector delta) {
  const std::size_t L = net.layer_count();
  require(trace.x.size() == L, ErrorClass::Shape, "trace does not match network depth");
  for (std::size_t l = 0; l < L; ++l)
    require(static_cast<std::size_t>(trace.x[l].size()) == net.size(l), ErrorClass::Shape,
            "trace layer " + std::to_string(l) + " does not match network");
  require(static_cast<std::size_t>(delta.size()) == net.output_dim(), ErrorClass::Shape, "output delta length");
  Gradients g(net.layer_sizes());
  for (std::size_t l = L - 1; l >= 1; --l) {
    g.weights(l).noalias() = delta * trace.x[l - 1].transpose();
    g.bias(l) = delta;
    if (l == 1) break;
    Vector up = net.weights(l).transpose() * delta;
    // Hidden layers are tanh; f'(y) = 1 - x^2 is stored in the trace.
    delta = up.cwiseProduct(trace.dfdy[l - 1]);
  }
  return g;
}

inline Gradients backward(const Network& net, const ForwardTrace& trace, LossKind kind, std::size_t label) {
  return backward_from_delta(net, trace, output_delta(trace, kind, label));
}

inline Gradients backward(const Network& net, const ForwardTrace& trace, const Vector& target) {
  return backward_from_delta(net, trace, output_delta_mse(trace, target));
}

// ---------------------------------------------------------------------------
// Batched path: samples are columns.

struct BatchTrace {
  std::vector<Matrix> x;  // activations per layer, size(l) x batch
};

inline BatchTrace forward_batch(const Network& net, const Eigen::Ref<const Matrix>& inputs) {
  require(static_cast<std::size_t>(inputs.rows()) == net.input_dim(), ErrorClass::Shape, "batch input dim");
  const std::size_t L = net.layer_count();
  BatchTrace t;
  t.x.resize(L);
  t.x[0] = inputs;
  for (std::size_t l = 1; l < L; ++l) {
    Matrix y = net.weights(l) * t.x[l - 1];
    y.colwise() += net.bias(l);
    if (net.activation(l) == Activation::Tanh) y = y.array().tanh();
    t.x[l] = std::move(y);
  }
  return t;
}

/// Per-column loss and dH/dy_out for a batch of logits.
inline double batch_loss_and_delta(const Matrix& out, std::span<const Label> labels, LossKind kind,
                                   Matrix* delta) {
  const auto n = out.cols();
  require(static_cast<std::size_t>(n) == labels.size(), ErrorClass::Shape, "label count differs from batch");
  if (delta) delta->resize(out.rows(), n);
  double total = 0.0;
  for (Eigen::Index c = 0; c < n; ++c) {
    const auto label = static_cast<std::size_t>(labels[static_cast<std::size_t>(c)]);
    require(label < static_cast<std::size_t>(out.rows()), ErrorClass::Precondition, "label out of range");
    if (kind == LossKind::CrossEntropy) {
      const auto z = out.col(c);
      const double m = z.maxCoeff();
      const double s = (z.array() - m).exp().sum();
      total += m + std::log(s) - z(static_cast<Eigen::Index>(label));
      if (delta) {
        delta->col(c) = (z.array() - m).exp() / s;
        (*delta)(static_cast<Eigen::Index>(label), c) -= 1.0;
      }
    } else {
      Vector d = out.col(c);
      d(static_cast<Eigen::Index>(label)) -= 1.0;
      total += 0.5 * d.squaredNorm();
      if (delta) delta->col(c) = d;
    }
  }
  return total;
}

/// Mean loss over the batch and the mean gradient (no regularization).
inline std::pair<double, Gradients> batch_loss_and_gradient(const Network& net, const Eigen::Ref<const Matrix>& inputs,
                                                            std::span<const Label> labels, LossKind kind) {
  const BatchTrace t = forward_batch(net, inputs);
  const std::size_t L = net.layer_count();
  const double inv_n = 1.0 / static_cast<double>(inputs.cols());
  Matrix delta;
  const double total = batch_loss_and_delta(t.x.back(), labels, kind, &delta);
  Gradients g(net.layer_sizes());
  for (std::size_t l = L - 1; l >= 1; --l) {
    g.weights(l).noalias() = inv_n * (delta * t.x[l - 1].transpose());
    g.bias(l) = inv_n * delta.rowwise().sum();
    if (l == 1) break;
    Matrix up = net.weights(l).transpose() * delta;
    delta = up.array() * (1.0 - t.x[l - 1].array().square());
  }
  return {total * inv_n, std::move(g)};
}

struct EvalResult {
  double mean_loss = 0.0;
  double accuracy = 0.0;
};

/// Mean loss and top-1 accuracy over column samples, processed in chunks.
inline EvalResult evaluate(const Network& net, const Eigen::Ref<const Matrix>& inputs,
                           std::span<const Label> labels, LossKind kind, Eigen::Index chunk = 2000) {
  const Eigen::Index n = inputs.cols();
  require(n > 0, ErrorClass::Precondition, "empty evaluation set");
  double total = 0.0;
  std::size_t correct = 0;
  for (Eigen::Index start = 0; start < n; start += chunk) {
    const Eigen::Index len = std::min(chunk, n - start);
    const BatchTrace t = forward_batch(net, inputs.middleCols(start, len));
    const auto lab = labels.subspan(static_cast<std::size_t>(start), static_cast<std::size_t>(len));
    total += batch_loss_and_delta(t.x.back(), lab, kind, nullptr);
    for (Eigen::Index c = 0; c < len; ++c) {
      Eigen::Index arg = 0;
      t.x.back().col(c).maxCoeff(&arg);
      if (static_cast<std::size_t>(arg) == lab[static_cast<std::size_t>(c)]) ++correct;
    }
  }
  return {total / static_cast<double>(n), static_cast<double>(correct) / static_cast<double>(n)};
}

}  // namespace biodyn
