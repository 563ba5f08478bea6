#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "egnmt/errors.hpp"
#include "egnmt/training.hpp"
#include "fixtures.hpp"

using namespace egnmt;
using egnmt::testing::all_indices;
using egnmt::testing::random_pairs;
using egnmt::testing::tiny_config;

namespace {

Tensor<double> quadratic(const Tensor<double>& w) {
  auto d = ops::sub(w, Tensor<double>::from({1}, {3.0}));
  return ops::sum(ops::mul(d, d));
}

}  // namespace

TEST(Adam, TwoStepsMatchScalarOracle) {
  AdamOptions opt;
  opt.lr = 0.1;
  opt.schedule = false;
  Adam<double> adam(opt);
  auto w = Tensor<double>::from({1}, {1.0}, true);
  double ow = 1.0, m = 0, v = 0;
  for (int t = 1; t <= 2; ++t) {
    w.zero_grad();
    quadratic(w).backward();
    adam.step({w});
    const double g = 2 * (ow - 3.0);
    m = 0.9 * m + 0.1 * g;
    v = 0.98 * v + 0.02 * g * g;
    const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.98, t));
    ow -= 0.1 * mh / (std::sqrt(vh) + 1e-9);
    EXPECT_NEAR(w.data()[0], ow, 1e-10);
  }
  EXPECT_EQ(adam.steps(), 2u);
}

TEST(Adam, ZeroGradientsLeaveParametersAndCountSteps) {
  Adam<double> adam;
  auto w = Tensor<double>::from({2}, {1.5, -2.0}, true);
  w.zero_grad();
  adam.step({w});
  EXPECT_EQ(w.data()[0], 1.5);
  EXPECT_EQ(w.data()[1], -2.0);
  EXPECT_EQ(adam.steps(), 1u);
}

TEST(Adam, NanGradientAbortsBeforeAnyUpdate) {
  Adam<double> adam;
  auto a = Tensor<double>::from({1}, {1.0}, true);
  auto b = Tensor<double>::from({1}, {2.0}, true);
  a.mutable_grad()[0] = 0.5;
  b.mutable_grad()[0] = std::nan("");
  EXPECT_THROW(adam.step({a, b}), NumericError);
  EXPECT_EQ(a.data()[0], 1.0);
  EXPECT_EQ(adam.steps(), 0u);
}

TEST(Adam, AliasedParametersUpdateOnce) {
  Adam<double> adam;
  auto w = Tensor<double>::from({1}, {1.0}, true);
  quadratic(w).backward();
  adam.step({w, w});
  EXPECT_EQ(adam.num_moments(), 1u);
}

TEST(Schedule, WarmupThenInverseSqrt) {
  AdamOptions o;
  o.lr = 2.0;
  o.warmup = 100;
  EXPECT_DOUBLE_EQ(scheduled_learning_rate(o, 50), 1.0);
  EXPECT_DOUBLE_EQ(scheduled_learning_rate(o, 100), 2.0);
  EXPECT_DOUBLE_EQ(scheduled_learning_rate(o, 400), 1.0);
  o.schedule = false;
  EXPECT_DOUBLE_EQ(scheduled_learning_rate(o, 7), 2.0);
}

TEST(JointLoss, DegenerateAndUniformCases) {
  const auto target = IdBatch::from_sequences({{5, 6, 2}, {7, 2}});
  auto logits = Tensor<double>::zeros({6, 9});
  const auto only = joint_loss<double>(logits, target, nullptr, nullptr);
  EXPECT_EQ(only.total.item(), only.primary.item());
  EXPECT_FALSE(only.auxiliary.defined());
  EXPECT_NEAR(only.primary.item(), std::log(9.0), 1e-14);
}

TEST(JointLoss, SumsSeparatelyComputedTerms) {
  const auto c = tiny_config(Variant::kFinal);
  const auto p = init_params<double>(c, 2);
  Rng rng(3);
  const auto data = random_pairs(rng, c, 3);
  const auto batch = make_batch(data, all_indices(3), c);
  ForwardContext<double> ctx;
  const auto loss = batch_loss(p, c, batch, ctx);
  const auto states = encode(p, c, batch.inputs, ctx);
  const auto pri = decode(p.decoder, p, c, batch.target_in, states, ctx);
  const auto aux = decode(p.decoder, p, c, *batch.auxiliary_in, states, ctx);
  const double lp = ops::cross_entropy(pri, std::span<const std::int32_t>(batch.target_out.ids), 0).item();
  const double la = ops::cross_entropy(aux, std::span<const std::int32_t>(batch.auxiliary_out->ids), 0).item();
  EXPECT_NEAR(loss.total.item(), lp + la, 1e-12);
  EXPECT_NEAR(loss.primary.item(), lp, 1e-12);
}

TEST(Batching, TokenBudgetCoverageAndDeterminism) {
  const auto c = tiny_config(Variant::kFinal);
  Rng rng(4);
  const auto data = random_pairs(rng, c, 40);
  Rng r1(9), r2(9);
  const auto a = make_batches(data, 24, r1);
  EXPECT_EQ(a, make_batches(data, 24, r2));
  std::multiset<std::size_t> seen;
  for (const auto& b : a) {
    std::size_t width = 0;
    for (auto i : b) {
      seen.insert(i);
      width = std::max({width, data[i].source.size(), data[i].example.size(), data[i].target.size() + 1});
    }
    if (b.size() > 1) {
      EXPECT_LE(width * b.size(), 24u);
    }
  }
  const auto expected = all_indices(40);
  EXPECT_EQ(seen, std::multiset<std::size_t>(expected.begin(), expected.end()));
}

TEST(Batching, MissingMaskedFieldsAreInputErrors) {
  const auto c = tiny_config(Variant::kFinal);
  Rng rng(5);
  auto data = random_pairs(rng, c, 2);
  data[1].masked_target.clear();
  EXPECT_THROW(make_batch(data, {0, 1}, c), InputError);
  EXPECT_NO_THROW(make_batch(data, {0, 1}, tiny_config(Variant::kBasic)));
  data[0].example.clear();
  EXPECT_THROW(make_batch(data, {0}, tiny_config(Variant::kBasic)), InputError);
  EXPECT_NO_THROW(make_batch(data, {0}, tiny_config(Variant::kBaseline)));
}

TEST(Batching, TargetsAndAuxiliaryPrefix) {
  const auto c = tiny_config(Variant::kAd);
  std::vector<EncodedPair> data(1);
  data[0].source = {5, 2};
  data[0].example = {6, 2};
  data[0].masked_example = {4, 2};
  data[0].target = {7, 8};
  data[0].masked_target = {7, 4};
  const auto b = make_batch(data, {0}, c);
  EXPECT_EQ(b.target_in.ids, (std::vector<std::int32_t>{1, 7, 8}));
  EXPECT_EQ(b.target_out.ids, (std::vector<std::int32_t>{7, 8, 2}));
  EXPECT_EQ(b.auxiliary_in->ids, (std::vector<std::int32_t>{4, 7, 4}));
  EXPECT_EQ(b.auxiliary_out->ids, (std::vector<std::int32_t>{7, 4, 2}));
}

TEST(TrainLoop, IdenticalSeedsGiveIdenticalLosses) {
  auto c = tiny_config(Variant::kFinal);
  c.dropout = 0.1;
  Rng rng(6);
  const auto data = random_pairs(rng, c, 8);
  TrainOptions o;
  o.steps = 3;
  o.max_tokens = 40;
  o.adam.warmup = 10;
  auto p1 = init_params<float>(c, 7), p2 = init_params<float>(c, 7);
  const auto r1 = train_loop(p1, c, data, o), r2 = train_loop(p2, c, data, o);
  ASSERT_EQ(r1.history.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(r1.history[i].loss, r2.history[i].loss);
  EXPECT_LT(r1.history[2].loss, r1.history[0].loss + 1.0);
  std::size_t checkpoints = 0;
  o.checkpoint_every = 1;
  auto p3 = init_params<float>(c, 7);
  train_loop(p3, c, data, o, {nullptr, [&](std::size_t, const ModelParams<float>&) { ++checkpoints; }});
  EXPECT_EQ(checkpoints, 3u);
  EXPECT_THROW(train_loop(p3, c, {}, o), InputError);
}

// One update from the auxiliary loss alone moves the primary logits, while
// both paths keep reading the same decoder tensors.
TEST(Sharing, AuxiliaryStepMovesPrimaryOutputs) {
  const auto c = tiny_config(Variant::kFinal);
  auto p = init_params<double>(c, 8);
  Rng rng(9);
  const auto data = random_pairs(rng, c, 2);
  const auto batch = make_batch(data, all_indices(2), c);
  const auto* decoder_weight = p.decoder.layers[0].self_attention.query.weight.node();
  ForwardContext<double> ctx;
  const auto before = forward_joint(p, c, batch.inputs, batch.target_in, &*batch.auxiliary_in, ctx).primary;
  std::vector<double> saved(before.data().begin(), before.data().end());
  p.zero_grad();
  batch_loss(p, c, batch, ctx).auxiliary.backward();
  Adam<double> adam;
  adam.step(parameter_list(p));
  const auto after = forward_joint(p, c, batch.inputs, batch.target_in, &*batch.auxiliary_in, ctx).primary;
  double diff = 0;
  for (std::size_t i = 0; i < saved.size(); ++i) diff = std::max(diff, std::abs(after.data()[i] - saved[i]));
  EXPECT_GT(diff, 0.0);
  EXPECT_EQ(p.primary_decoder().layers[0].self_attention.query.weight.node(), decoder_weight);
  EXPECT_EQ(&p.primary_decoder(), &p.auxiliary_decoder());
}
