#include "egnmt/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "egnmt/errors.hpp"
#include "egnmt/text.hpp"

namespace egnmt {

std::size_t TrainingBatch::num_target_tokens() const {
  std::size_t n = 0;
  for (auto len : target_out.lengths) n += len;
  return n;
}

TrainingBatch make_batch(const std::vector<EncodedPair>& data, const std::vector<std::size_t>& indices,
                         const ModelConfig& config) {
  const Variant variant = config.variant;
  if (indices.empty()) throw ContractError("make_batch: no indices");
  std::vector<std::vector<std::int32_t>> src, ex, mex, tin, tout, ain, aout;
  for (auto i : indices) {
    const auto& p = data.at(i);
    if (p.source.empty()) throw InputError("pair " + std::to_string(i) + " has an empty source");
    src.push_back(p.source);
    std::vector<std::int32_t> in{Vocabulary::kBos};
    in.insert(in.end(), p.target.begin(), p.target.end());
    std::vector<std::int32_t> out = p.target;
    out.push_back(Vocabulary::kEos);
    tin.push_back(std::move(in));
    tout.push_back(std::move(out));
    if (uses_example(variant)) {
      if (p.example.empty()) throw InputError("pair " + std::to_string(i) + " lacks an example translation");
      ex.push_back(p.example);
    }
    if (uses_masked_example(variant)) {
      if (p.masked_example.empty())
        throw InputError("pair " + std::to_string(i) + " lacks M(y^m) required by the " + to_string(variant) +
                         " variant (run the mask stage)");
      mex.push_back(p.masked_example);
    }
    if (uses_auxiliary(variant)) {
      if (p.masked_target.empty() && !p.target.empty())
        throw InputError("pair " + std::to_string(i) + " lacks M(y) required by the " + to_string(variant) +
                         " variant (run the mask stage)");
      std::vector<std::int32_t> a{auxiliary_start_symbol(config)};
      a.insert(a.end(), p.masked_target.begin(), p.masked_target.end());
      std::vector<std::int32_t> b = p.masked_target;
      b.push_back(Vocabulary::kEos);
      ain.push_back(std::move(a));
      aout.push_back(std::move(b));
    }
  }
  TrainingBatch batch;
  batch.indices = indices;
  batch.inputs.source = IdBatch::from_sequences(src);
  if (!ex.empty()) batch.inputs.example = IdBatch::from_sequences(ex);
  if (!mex.empty()) batch.inputs.masked_example = IdBatch::from_sequences(mex);
  batch.target_in = IdBatch::from_sequences(tin);
  batch.target_out = IdBatch::from_sequences(tout);
  if (!ain.empty()) {
    batch.auxiliary_in = IdBatch::from_sequences(ain);
    batch.auxiliary_out = IdBatch::from_sequences(aout);
  }
  return batch;
}

std::vector<std::vector<std::size_t>> make_batches(const std::vector<EncodedPair>& data, std::size_t max_tokens,
                                                   Rng& rng) {
  if (max_tokens == 0) throw InputError("max_tokens must be positive");
  auto width = [&](std::size_t i) {
    const auto& p = data[i];
    return std::max({p.source.size(), p.example.size(), p.target.size() + 1});
  };
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto wa = width(a), wb = width(b);
    if (wa != wb) return wa < wb;
    return data[a].target.size() < data[b].target.size();
  });
  std::vector<std::vector<std::size_t>> batches;
  std::vector<std::size_t> current;
  std::size_t current_width = 0;
  for (auto i : order) {
    const auto w = std::max(current_width, width(i));
    if (!current.empty() && w * (current.size() + 1) > max_tokens) {
      batches.push_back(std::move(current));
      current.clear();
      current_width = 0;
    }
    current.push_back(i);
    current_width = std::max(current_width, width(i));
  }
  if (!current.empty()) batches.push_back(std::move(current));
  for (std::size_t k = batches.size(); k > 1; --k) std::swap(batches[k - 1], batches[rng.below(k)]);
  return batches;
}

template <typename T>
JointLoss<T> joint_loss(const Tensor<T>& primary_logits, const IdBatch& target_out, const Tensor<T>* auxiliary_logits,
                        const IdBatch* auxiliary_out) {
  JointLoss<T> loss;
  loss.primary =
      ops::cross_entropy(primary_logits, std::span<const std::int32_t>(target_out.ids), Vocabulary::kPad);
  if (auxiliary_logits && auxiliary_logits->defined()) {
    if (!auxiliary_out) throw ContractError("joint_loss: auxiliary logits without targets");
    loss.auxiliary =
        ops::cross_entropy(*auxiliary_logits, std::span<const std::int32_t>(auxiliary_out->ids), Vocabulary::kPad);
    loss.total = ops::add(loss.primary, loss.auxiliary);
  } else {
    loss.total = loss.primary;
  }
  return loss;
}

template <typename T>
JointLoss<T> batch_loss(const ModelParams<T>& params, const ModelConfig& config, const TrainingBatch& batch,
                        ForwardContext<T>& ctx) {
  if (uses_auxiliary(config.variant)) {
    if (!batch.auxiliary_in) throw InputError("batch lacks M(y) for the " + to_string(config.variant) + " variant");
    auto logits = forward_joint(params, config, batch.inputs, batch.target_in, &*batch.auxiliary_in, ctx);
    return joint_loss(logits.primary, batch.target_out, &logits.auxiliary, &*batch.auxiliary_out);
  }
  const auto states = encode(params, config, batch.inputs, ctx);
  auto logits = decode(params.primary_decoder(), params, config, batch.target_in, states, ctx);
  return joint_loss<T>(logits, batch.target_out, nullptr, nullptr);
}

double scheduled_learning_rate(const AdamOptions& options, std::size_t step) {
  if (!options.schedule || options.warmup == 0) return options.lr;
  const double s = static_cast<double>(std::max<std::size_t>(step, 1));
  const double w = static_cast<double>(options.warmup);
  return options.lr * std::min(s / w, std::sqrt(w / s));
}

template <typename T>
void Adam<T>::step(const std::vector<Tensor<T>>& params) {
  std::vector<Tensor<T>> unique;
  std::unordered_set<const Node<T>*> seen;
  for (const auto& p : params)
    if (seen.insert(p.node()).second) unique.push_back(p);

  double norm_sq = 0.0;
  for (const auto& p : unique) {
    const auto g = p.node()->grad;
    for (auto v : g) {
      if (!std::isfinite(v)) throw NumericError("non-finite gradient; optimizer step aborted before any update");
      norm_sq += static_cast<double>(v) * static_cast<double>(v);
    }
  }
  double clip = 1.0;
  if (options_.clip_norm && std::sqrt(norm_sq) > *options_.clip_norm) clip = *options_.clip_norm / std::sqrt(norm_sq);

  ++step_;
  const double lr = scheduled_learning_rate(options_, step_);
  const double c1 = 1.0 - std::pow(options_.beta1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(options_.beta2, static_cast<double>(step_));
  for (auto& p : unique) {
    auto& m = moments_[p.node()];
    const auto n = p.size();
    if (m.first.size() != n) {
      m.first.assign(n, 0.0);
      m.second.assign(n, 0.0);
    }
    auto& grad = p.node()->grad;
    auto value = p.mutable_data();
    for (std::size_t i = 0; i < n; ++i) {
      const double g = grad.empty() ? 0.0 : static_cast<double>(grad[i]) * clip;
      m.first[i] = options_.beta1 * m.first[i] + (1.0 - options_.beta1) * g;
      m.second[i] = options_.beta2 * m.second[i] + (1.0 - options_.beta2) * g * g;
      const double mhat = m.first[i] / c1;
      const double vhat = m.second[i] / c2;
      value[i] = static_cast<T>(static_cast<double>(value[i]) - lr * mhat / (std::sqrt(vhat) + options_.eps));
    }
  }
}

template <typename T>
const typename Adam<T>::Moments* Adam<T>::moments(const Tensor<T>& param) const {
  auto it = moments_.find(param.node());
  return it == moments_.end() ? nullptr : &it->second;
}

template <typename T>
std::vector<Tensor<T>> parameter_list(ModelParams<T>& params) {
  std::vector<Tensor<T>> out;
  params.for_each([&](const std::string&, Tensor<T>& t) { out.push_back(t); });
  return out;
}

TrainResult train_loop(ModelParams<float>& params, const ModelConfig& config, const std::vector<EncodedPair>& data,
                       const TrainOptions& options, const TrainCallbacks& callbacks) {
  if (data.empty()) throw InputError("training data is empty");
  const Rng root(options.seed);
  Adam<float> adam(options.adam);
  const auto list = parameter_list(params);
  TrainResult result;
  std::vector<double> recent;
  std::vector<std::vector<std::size_t>> epoch;
  std::size_t cursor = 0, epoch_index = 0;

  while (result.steps < options.steps) {
    if (cursor == epoch.size()) {
      Rng shuffle = root.split(0x5eed0000 + epoch_index++);
      epoch = make_batches(data, options.max_tokens, shuffle);
      cursor = 0;
    }
    const auto batch = make_batch(data, epoch[cursor++], config);
    const std::size_t step = result.steps + 1;

    params.zero_grad();
    Rng dropout_rng = root.split(step);
    ForwardContext<float> ctx{true, &dropout_rng, nullptr};
    auto loss = batch_loss(params, config, batch, ctx);
    loss.total.backward();
    adam.step(list);
    result.steps = step;

    StepLog log{step, loss.total.item(), loss.primary.item(),
                loss.auxiliary.defined() ? static_cast<double>(loss.auxiliary.item()) : 0.0,
                scheduled_learning_rate(options.adam, step)};
    result.last_loss = log.loss;
    result.history.push_back(log);
    recent.push_back(log.loss);
    if (recent.size() > epoch.size()) recent.erase(recent.begin());
    result.epoch_loss = std::accumulate(recent.begin(), recent.end(), 0.0) / static_cast<double>(recent.size());

    if (callbacks.on_log && options.log_every && (step % options.log_every == 0 || step == 1)) callbacks.on_log(log);
    if (callbacks.on_checkpoint && options.checkpoint_every && step % options.checkpoint_every == 0)
      callbacks.on_checkpoint(step, params);
    if (options.stop_loss && recent.size() == epoch.size() && result.epoch_loss < *options.stop_loss) break;
  }
  params.zero_grad();
  return result;
}

#define EGNMT_INSTANTIATE_TRAINING(T)                                                                    \
  template JointLoss<T> joint_loss(const Tensor<T>&, const IdBatch&, const Tensor<T>*, const IdBatch*); \
  template JointLoss<T> batch_loss(const ModelParams<T>&, const ModelConfig&, const TrainingBatch&,     \
                                   ForwardContext<T>&);                                                 \
  template class Adam<T>;                                                                               \
  template std::vector<Tensor<T>> parameter_list(ModelParams<T>&);

EGNMT_INSTANTIATE_TRAINING(float)
EGNMT_INSTANTIATE_TRAINING(double)
#undef EGNMT_INSTANTIATE_TRAINING

}  // namespace egnmt
