// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "mrlab/gdpo/losses.hpp"
#include "mrlab/lora/lora.hpp"
#include "mrlab/tinylm/optim.hpp"
#include "test_support.hpp"

using namespace mrlab;
using namespace mrlab::tinylm;
using gdpo::GdpoConfig;
using gdpo::PreferencePair;

namespace {

PreferencePair sample_pair() {
  PreferencePair p;
  p.item_id = "s0";
  p.x = {1, 3, 4, 5};
  p.y_win = {6, 7, 2};
  p.y_lose = {6, 8, 9, 2};
  return p;
}

std::vector<SftExample> gt_batch() { return {{"g0", {1, 3, 4}, {10, 11, 2}}, {"g1", {1, 9}, {4, 2}}}; }

}  // namespace

TEST(Dpo, EqualPolicyAndReferenceGivesLn2) {
  auto model = PolicyModel::random(check::tiny_config(), 1);
  auto lg = gdpo::dpo_loss(model, model, sample_pair(), 0.1);
  EXPECT_NEAR(lg.loss, std::log(2.0), 1e-12);
  EXPECT_GT(std::sqrt(lg.grads.squared_norm()), 0.0);
}

TEST(Dpo, ScalarClosedForms) {
  EXPECT_NEAR(gdpo::neg_log_sigmoid(1.0), 0.31326168751822286, 1e-15);
  EXPECT_NEAR(gdpo::neg_log_sigmoid(0.0), std::log(2.0), 1e-16);
  EXPECT_NEAR(gdpo::neg_log_sigmoid(-800.0), 800.0, 1e-12);
  EXPECT_NEAR(gdpo::neg_log_sigmoid(800.0), 0.0, 1e-300);
  for (double m : {-3.0, -0.5, 0.0, 0.7, 4.0}) {
    const double h = 1e-6;
    const double fd = (gdpo::neg_log_sigmoid(m + h) - gdpo::neg_log_sigmoid(m - h)) / (2 * h);
    EXPECT_NEAR(gdpo::neg_log_sigmoid_grad(m), fd, 1e-8);
  }
}

TEST(Dpo, StrictlyDecreasingInMargin) {
  double prev = gdpo::neg_log_sigmoid(-20.0);
  for (double m = -19.5; m <= 20.0; m += 0.5) {
    const double cur = gdpo::neg_log_sigmoid(m);
    EXPECT_LT(cur, prev);
    prev = cur;
  }
}

TEST(Dpo, SwapNegatesMargin) {
  auto policy = PolicyModel::random(check::tiny_config(), 2);
  auto ref = PolicyModel::random(check::tiny_config(), 3);
  auto pair = sample_pair();
  auto swapped = pair;
  std::swap(swapped.y_win, swapped.y_lose);
  const auto r = gdpo::reference_logprobs(ref, pair);
  const double m = gdpo::dpo_margin(sequence_logprob(policy, pair.x, pair.y_win),
                                    sequence_logprob(policy, pair.x, pair.y_lose), r, 0.1);
  EXPECT_NEAR(gdpo::dpo_loss(policy, ref, pair, 0.1).loss, gdpo::neg_log_sigmoid(m), 1e-12);
  EXPECT_NEAR(gdpo::dpo_loss(policy, ref, swapped, 0.1).loss, gdpo::neg_log_sigmoid(-m), 1e-12);
}

TEST(Dpo, GradientMatchesFiniteDifferences) {
  auto policy = PolicyModel::random(check::tiny_config(), 4);
  auto ref = PolicyModel::random(check::tiny_config(), 5);
  auto pair = sample_pair();
  auto lg = gdpo::dpo_loss(policy, ref, pair, 0.5);
  EXPECT_NEAR(lg.loss, gdpo::dpo_loss_value(policy, ref, pair, 0.5), 1e-14);
  auto report = check::finite_difference_check(policy.parameters(), lg.grads.backbone,
                                                 [&] { return gdpo::dpo_loss_value(policy, ref, pair, 0.5); });
  EXPECT_LE(report.max_rel, 1e-4) << report.worst;
}

TEST(Dpo, OneStepIncreasesMargin) {
  auto policy = PolicyModel::random(check::tiny_config(), 6);
  auto ref = policy;
  auto pair = sample_pair();
  auto margin = [&] {
    return sequence_logprob(policy, pair.x, pair.y_win) - sequence_logprob(policy, pair.x, pair.y_lose);
  };
  const double before = margin();
  auto lg = gdpo::dpo_loss(policy, ref, pair, 0.1);
  for (auto& [name, w] : policy.parameters()) w -= 1e-3 * lg.grads.backbone.at(name);
  EXPECT_GT(margin(), before);
}

TEST(Gdpo, LambdaZeroEqualsDpo) {
  auto policy = PolicyModel::random(check::tiny_config(), 7);
  auto ref = PolicyModel::random(check::tiny_config(), 8);
  GdpoConfig cfg;
  cfg.lambda = 0.0;
  auto g = gdpo::gdpo_loss(policy, ref, sample_pair(), gt_batch(), cfg);
  auto d = gdpo::dpo_loss(policy, ref, sample_pair(), cfg.beta);
  EXPECT_EQ(g.loss, d.loss);
  for (const auto& [name, w] : d.grads.backbone) EXPECT_TRUE((g.grads.backbone.at(name).array() == w.array()).all());
}

TEST(Gdpo, AffineInLambda) {
  auto policy = PolicyModel::random(check::tiny_config(), 9);
  auto ref = PolicyModel::random(check::tiny_config(), 10);
  auto batch = gt_batch();
  GdpoConfig cfg;
  cfg.lambda = 0.0;
  const double base = gdpo::gdpo_loss(policy, ref, sample_pair(), batch, cfg).loss;
  const double ce = gdpo::ground_truth_ce(policy, batch);
  for (double lambda : gdpo::kLambdaSweep) {
    cfg.lambda = lambda;
    EXPECT_NEAR(gdpo::gdpo_loss(policy, ref, sample_pair(), batch, cfg).loss, base + lambda * ce,
                1e-12 * (1.0 + lambda));
  }
}

// Zero policy over V=4 equals its reference; gt target has 3 tokens. The DPO
// term is ln 2 and the token-mean CE is ln 4.
TEST(Gdpo, ZeroModelClosedForm) {
  ModelConfig cfg;
  cfg.vocab = 4;
  cfg.width = 8;
  cfg.context = 16;
  PolicyModel zero(cfg);
  PreferencePair pair;
  pair.x = {1};
  pair.y_win = {3, 2};
  pair.y_lose = {0, 0, 2};
  std::vector<SftExample> batch{{"g", {1}, {3, 0, 2}}};
  GdpoConfig g;
  EXPECT_NEAR(gdpo::gdpo_loss(zero, zero, pair, batch, g).loss, 0.8317766166719343, 1e-12);
}

TEST(Gdpo, EmptyBatchRejected) {
  auto policy = PolicyModel::random(check::tiny_config(), 11);
  EXPECT_THROW(gdpo::gdpo_loss(policy, policy, sample_pair(), {}, GdpoConfig{}), ArgumentError);
  GdpoConfig bad;
  bad.beta = 0.0;
  EXPECT_THROW(bad.validate(), ArgumentError);
}

TEST(Gdpo, GradientMatchesFiniteDifferences) {
  auto policy = PolicyModel::random(check::tiny_config(), 12);
  auto ref = PolicyModel::random(check::tiny_config(), 13);
  auto batch = gt_batch();
  GdpoConfig cfg;
  cfg.beta = 0.3;
  cfg.lambda = 0.7;
  auto lg = gdpo::gdpo_loss(policy, ref, sample_pair(), batch, cfg);
  auto report = check::finite_difference_check(policy.parameters(), lg.grads.backbone, [&] {
    return gdpo::gdpo_loss_value(policy, ref, sample_pair(), batch, cfg);
  });
  EXPECT_LE(report.max_rel, 1e-4) << report.worst;
}

TEST(Gdpo, AdapterOnlyGradients) {
  auto model = PolicyModel::random(check::tiny_config(), 14);
  auto adapted = lora::attach_fresh(model, 2, 2.0, 1);
  Rng rng(3);
  for (const auto& t : adapted.adapter().targets)
    for (Eigen::Index i = 0; i < adapted.adapter().b(t).size(); ++i) adapted.adapter().b(t).data()[i] = 0.2 * rng.normal();
  auto batch = gt_batch();
  GdpoConfig cfg;
  auto lg = gdpo::gdpo_loss(adapted.view(), model, sample_pair(), batch, cfg, GradTarget::kAdapter);
  EXPECT_TRUE(lg.grads.backbone.empty());
  auto full = gdpo::gdpo_loss(adapted.view(), model, sample_pair(), batch, cfg, GradTarget::kAll);
  EXPECT_EQ(full.loss, lg.loss);
  auto report = check::finite_difference_check(adapted.adapter_parameters(), lg.grads.adapter, [&] {
    return gdpo::gdpo_loss_value(adapted.view(), model, sample_pair(), batch, cfg);
  });
  EXPECT_LE(report.max_rel, 1e-4) << report.worst;
}
