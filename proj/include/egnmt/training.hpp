#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <unordered_map>
#include <vector>

#include "egnmt/model.hpp"

namespace egnmt {

// Model-ready ids for one training pair. Source and example sides carry a
// trailing EOS; targets carry neither BOS nor EOS. An empty masked side means
// the pair was never masked; with subwords a masked side can be shorter than
// its original, one mask unit standing for a whole word.
struct EncodedPair {
  std::vector<std::int32_t> source;          // x
  std::vector<std::int32_t> example;         // y^m
  std::vector<std::int32_t> masked_example;  // M(y^m)
  std::vector<std::int32_t> target;          // y
  std::vector<std::int32_t> masked_target;   // M(y)
  double fms = 0.0;
};

struct TrainingBatch {
  std::vector<std::size_t> indices;
  ModelInputs inputs;
  IdBatch target_in;   // BOS y
  IdBatch target_out;  // y EOS
  std::optional<IdBatch> auxiliary_in;   // start symbol, M(y)
  std::optional<IdBatch> auxiliary_out;  // M(y) EOS

  std::size_t num_target_tokens() const;
};

// Throws InputError when the variant needs fields the pairs lack.
TrainingBatch make_batch(const std::vector<EncodedPair>& data, const std::vector<std::size_t>& indices,
                         const ModelConfig& config);

// Length-bucketed batches holding at most max_tokens padded tokens each (a
// single overlong pair still gets its own batch), in seeded random order.
std::vector<std::vector<std::size_t>> make_batches(const std::vector<EncodedPair>& data, std::size_t max_tokens,
                                                   Rng& rng);

template <typename T>
struct JointLoss {
  Tensor<T> total;
  Tensor<T> primary;
  Tensor<T> auxiliary;  // undefined without the auxiliary path
};

// L_joint = L_pri + L_aux, each a token-mean cross-entropy over non-PAD targets.
template <typename T>
JointLoss<T> joint_loss(const Tensor<T>& primary_logits, const IdBatch& target_out, const Tensor<T>* auxiliary_logits,
                        const IdBatch* auxiliary_out);

// Full training-mode forward pass and loss for the batch.
template <typename T>
JointLoss<T> batch_loss(const ModelParams<T>& params, const ModelConfig& config, const TrainingBatch& batch,
                        ForwardContext<T>& ctx);

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  std::size_t warmup = 4000;
  bool schedule = true;
  std::optional<double> clip_norm;
};

// lr * min(step / warmup, sqrt(warmup / step)) for 1-based steps.
double scheduled_learning_rate(const AdamOptions& options, std::size_t step);

template <typename T>
class Adam {
 public:
  struct Moments {
    std::vector<double> first;
    std::vector<double> second;
  };

  explicit Adam(AdamOptions options = {}) : options_(options) {}

  // Applies one update from the gradients held by the parameters. Tensors
  // sharing storage are updated once. Throws NumericError, before touching
  // anything, when a gradient is not finite.
  void step(const std::vector<Tensor<T>>& params);

  std::size_t steps() const { return step_; }
  std::size_t num_moments() const { return moments_.size(); }
  const Moments* moments(const Tensor<T>& param) const;
  const AdamOptions& options() const { return options_; }

 private:
  AdamOptions options_;
  std::size_t step_ = 0;
  std::unordered_map<const Node<T>*, Moments> moments_;
};

template <typename T>
std::vector<Tensor<T>> parameter_list(ModelParams<T>& params);

struct TrainOptions {
  std::size_t steps = 2000;
  std::size_t max_tokens = 1024;
  std::uint64_t seed = 1;
  AdamOptions adam;
  std::size_t log_every = 50;
  std::size_t checkpoint_every = 0;
  // Stop once the mean loss over the last epoch's worth of steps drops below this.
  std::optional<double> stop_loss;
};

struct StepLog {
  std::size_t step = 0;
  double loss = 0.0;
  double primary = 0.0;
  double auxiliary = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  std::size_t steps = 0;
  double last_loss = 0.0;
  double epoch_loss = 0.0;
  std::vector<StepLog> history;
};

struct TrainCallbacks {
  std::function<void(const StepLog&)> on_log;
  std::function<void(std::size_t step, const ModelParams<float>&)> on_checkpoint;
};

TrainResult train_loop(ModelParams<float>& params, const ModelConfig& config, const std::vector<EncodedPair>& data,
                       const TrainOptions& options, const TrainCallbacks& callbacks = {});

}  // namespace egnmt
