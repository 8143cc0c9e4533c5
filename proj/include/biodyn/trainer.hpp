#pragma once

// Minibatch SGD with momentum and L2 weight decay, and the run record that
// training and topology surgery append to.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "biodyn/dataio.hpp"
#include "biodyn/error.hpp"
#include "biodyn/netcore.hpp"

namespace biodyn {

struct Hyperparams {
  double learning_rate = 0.001;
  double momentum = 0.0;
  double l2 = 0.001;
  std::size_t batch_size = 600;
  std::uint64_t steps = 5000;
  std::uint64_t seed = 1;
  LossKind loss_kind = LossKind::CrossEntropy;

  void validate() const {
    require(learning_rate > 0.0, ErrorClass::Config, "learning rate must be positive");
    require(momentum >= 0.0 && momentum < 1.0, ErrorClass::Config, "momentum must be in [0,1)");
    require(l2 >= 0.0, ErrorClass::Config, "l2 must be nonnegative");
    require(batch_size > 0, ErrorClass::Config, "batch size must be positive");
  }
};

struct StepRow {
  std::uint64_t step = 0;
  double train_loss = 0.0;
  std::optional<double> eval_loss;
  std::optional<double> eval_acc;
};

struct Event {
  std::uint64_t step = 0;
  std::string kind;  // "death" or "replicate"
  std::size_t layer = 0;
  std::size_t neuron = 0;
  std::string detail;
};

struct RunRecord {
  std::vector<StepRow> rows;
  std::vector<Event> events;
};

/// Shortest round-trippable decimal form.
inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_run_csv(const RunRecord& r, const std::filesystem::path& path) {
  std::ofstream out(path);
  require(out.good(), ErrorClass::Io, "cannot write " + path.string());
  out << "step,train_loss,eval_loss,eval_acc\n";
  for (const auto& row : r.rows) {
    out << row.step << ',' << fmt_double(row.train_loss) << ',';
    if (row.eval_loss) out << fmt_double(*row.eval_loss);
    out << ',';
    if (row.eval_acc) out << fmt_double(*row.eval_acc);
    out << '\n';
  }
}

inline void write_events_csv(const RunRecord& r, const std::filesystem::path& path) {
  std::ofstream out(path);
  require(out.good(), ErrorClass::Io, "cannot write " + path.string());
  out << "step,event,layer,neuron,detail\n";
  for (const auto& e : r.events)
    out << e.step << ',' << e.kind << ',' << e.layer << ',' << e.neuron << ',' << e.detail << '\n';
}

/// One SGD update on a batch. The gradient is the batch mean plus l2 * w for
/// weights (biases are not decayed). Returns the mean batch loss without the
/// penalty term.
inline double sgd_step(Network& net, const Eigen::Ref<const Matrix>& inputs, std::span<const Label> labels,
                       const Hyperparams& hyper, Params& velocity) {
  require(velocity.gaps() == net.layer_count() - 1, ErrorClass::Shape, "velocity does not match network");
  auto [mean_loss, grad] = batch_loss_and_gradient(net, inputs, labels, hyper.loss_kind);
  for (std::size_t l = 1; l < net.layer_count(); ++l) {
    Matrix& w = net.weights(l);
    Vector& b = net.bias(l);
    Matrix& vw = velocity.weights(l);
    Vector& vb = velocity.bias(l);
    require(vw.rows() == w.rows() && vw.cols() == w.cols() && vb.size() == b.size(), ErrorClass::Shape,
            "velocity shape mismatch at layer " + std::to_string(l));
    if (hyper.l2 != 0.0) grad.weights(l) += hyper.l2 * w;
    if (hyper.momentum == 0.0) {
      vw = -hyper.learning_rate * grad.weights(l);
      vb = -hyper.learning_rate * grad.bias(l);
    } else {
      vw = hyper.momentum * vw - hyper.learning_rate * grad.weights(l);
      vb = hyper.momentum * vb - hyper.learning_rate * grad.bias(l);
    }
    w += vw;
    b += vb;
  }
  return mean_loss;
}

inline double sgd_step(Network& net, const Batch& batch, const Hyperparams& hyper, Params& velocity) {
  return sgd_step(net, batch.inputs, batch.labels, hyper, velocity);
}

struct EvalOptions {
  const Dataset* eval_set = nullptr;  // none: no eval columns
  std::uint64_t every = 0;            // evaluate when (step + 1) % every == 0
};

/// Stateful training loop. Owns the network and its momentum buffer so that
/// surgery can be interleaved with training steps.
class Trainer {
 public:
  Trainer(Network net, const Dataset& data, Hyperparams hyper, EvalOptions eval = {})
      : net_(std::move(net)), data_(&data), hyper_(hyper), eval_(eval), velocity_(net_.layer_sizes()) {
    hyper_.validate();
    data.validate();
    require(data.dim() == net_.input_dim(), ErrorClass::Shape, "dataset dim differs from network input");
    plan_ = BatchPlan{hyper_.batch_size, hyper_.seed, BatchOrder::ShuffledPerEpoch};
  }

  /// Runs `count` steps continuing from the current step counter.
  void run(std::uint64_t count) {
    for (std::uint64_t i = 0; i < count; ++i) {
      const Batch batch = next_batch(*data_, plan_, step_);
      StepRow row{step_, sgd_step(net_, batch, hyper_, velocity_), std::nullopt, std::nullopt};
      if (eval_.eval_set && eval_.every > 0 && (step_ + 1) % eval_.every == 0) {
        const auto r = evaluate(net_, eval_.eval_set->inputs, eval_.eval_set->labels, hyper_.loss_kind);
        row.eval_loss = r.mean_loss;
        row.eval_acc = r.accuracy;
      }
      record_.rows.push_back(row);
      ++step_;
    }
  }

  Network& net() { return net_; }
  const Network& net() const { return net_; }
  Params& velocity() { return velocity_; }
  RunRecord& record() { return record_; }
  const RunRecord& record() const { return record_; }
  std::uint64_t step() const { return step_; }
  const Hyperparams& hyper() const { return hyper_; }

 private:
  Network net_;
  const Dataset* data_;
  Hyperparams hyper_;
  EvalOptions eval_;
  BatchPlan plan_;
  Params velocity_;
  RunRecord record_;
  std::uint64_t step_ = 0;
};

inline std::pair<Network, RunRecord> train(Network net, const Dataset& data, const Hyperparams& hyper,
                                           EvalOptions eval = {}) {
  Trainer t(std::move(net), data, hyper, eval);
  t.run(hyper.steps);
  return {std::move(t.net()), std::move(t.record())};
}

}  // namespace biodyn
