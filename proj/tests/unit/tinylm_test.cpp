// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "mrlab/tinylm/checkpoint.hpp"
#include "mrlab/tinylm/logprob.hpp"
#include "mrlab/tinylm/sampling.hpp"
#include "mrlab/tinylm/train.hpp"
#include "test_support.hpp"

using namespace mrlab;
using namespace mrlab::tinylm;

namespace {

std::vector<SftExample> tiny_batch() {
  return {{"a", {1, 3, 4}, {5, 6, 2}}, {"b", {1, 7}, {8, 2}}, {"c", {1, 9, 10, 11}, {3, 3, 4, 2}}};
}

}  // namespace

TEST(Forward, ZeroParametersGiveZeroLogits) {
  PolicyModel model(ModelConfig{});
  Matrix logits = forward_logits(model, std::vector<int>{1, 5, 9, 3});
  EXPECT_EQ(logits.rows(), 4);
  EXPECT_EQ(logits.cols(), 64);
  EXPECT_EQ(logits.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Forward, DeterministicAndShaped) {
  auto a = PolicyModel::random(ModelConfig{}, 1);
  auto b = PolicyModel::random(ModelConfig{}, 1);
  std::vector<int> tokens{1, 4, 8, 15, 16};
  Matrix la = forward_logits(a, tokens);
  Matrix lb = forward_logits(b, tokens);
  EXPECT_EQ(la.rows(), 5);
  EXPECT_EQ(la.cols(), 64);
  EXPECT_TRUE(la.allFinite());
  EXPECT_EQ(encode_checkpoint(model_checkpoint(a)), encode_checkpoint(model_checkpoint(b)));
  EXPECT_TRUE((la.array() == lb.array()).all());
  auto c = PolicyModel::random(ModelConfig{}, 2);
  EXPECT_FALSE((forward_logits(c, tokens).array() == la.array()).all());
}

TEST(Forward, RejectsBadInput) {
  auto model = PolicyModel::random(check::tiny_config(), 3);
  EXPECT_THROW(forward_logits(model, std::vector<int>(17, 1)), LengthError);
  EXPECT_THROW(forward_logits(model, std::vector<int>{}), ArgumentError);
  EXPECT_THROW(forward_logits(model, std::vector<int>{12}), ArgumentError);
}

TEST(Forward, SoftmaxRowsNormalized) {
  auto model = PolicyModel::random(ModelConfig{}, 4);
  Matrix logits = forward_logits(model, std::vector<int>{1, 2, 3, 4, 5, 6});
  for (Eigen::Index r = 0; r < logits.rows(); ++r) EXPECT_NEAR(softmax(logits.row(r)).sum(), 1.0, 1e-12);
}

TEST(SequenceLogprob, UniformModel) {
  ModelConfig cfg;
  cfg.vocab = 4;
  PolicyModel model(cfg);
  EXPECT_NEAR(sequence_logprob(model, {1}, {3, 0, 2}), -3.0 * std::log(4.0), 1e-12);
  EXPECT_THROW(sequence_logprob(model, {1}, {}), ArgumentError);
}

// Two-token vocabulary with no blocks: the logits are exactly head.b, so the
// log-probability of any response reduces to a hand-computable softmax chain.
TEST(SequenceLogprob, TwoParameterOracle) {
  ModelConfig cfg;
  cfg.vocab = 2;
  cfg.width = 1;
  cfg.layers = 0;
  cfg.context = 8;
  PolicyModel model(cfg);
  model.param("head.b")(0, 0) = 0.3;
  model.param("head.b")(0, 1) = -0.45;
  // log p(0) = 0.3 - log(e^0.3 + e^-0.45), log p(1) = -0.45 - log(...)
  const double lse = std::log(std::exp(0.3) + std::exp(-0.45));
  const double lp0 = 0.3 - lse;
  const double lp1 = -0.45 - lse;
  EXPECT_NEAR(sequence_logprob(model, {0}, {1, 0, 1, 1}), lp1 + lp0 + lp1 + lp1, 1e-12);
  // Frozen value from an independent evaluation of the same chain.
  EXPECT_NEAR(sequence_logprob(model, {0}, {1, 0, 1, 1}), -3.7974840244595995, 1e-12);
}

TEST(SequenceLogprob, GreedyTokenIsMaxLogSoftmax) {
  auto model = PolicyModel::random(ModelConfig{}, 5);
  TokenSequence prompt{1, 10, 11};
  Matrix logits = forward_logits(model, prompt);
  RowVector ls = log_softmax(logits.row(2));
  Eigen::Index best;
  ls.maxCoeff(&best);
  EXPECT_DOUBLE_EQ(sequence_logprob(model, prompt, {static_cast<int>(best)}), ls.maxCoeff());
  EXPECT_LE(sequence_logprob(model, prompt, {4, 5, 6}), 0.0);
}

TEST(SequenceLogprob, Additivity) {
  auto model = PolicyModel::random(ModelConfig{}, 6);
  TokenSequence prompt{1, 20, 21, 22};
  TokenSequence r1{30, 31}, r2{32, 33, 2};
  TokenSequence both = r1;
  both.insert(both.end(), r2.begin(), r2.end());
  TokenSequence prompt2 = prompt;
  prompt2.insert(prompt2.end(), r1.begin(), r1.end());
  EXPECT_NEAR(sequence_logprob(model, prompt, both),
              sequence_logprob(model, prompt, r1) + sequence_logprob(model, prompt2, r2), 1e-12);
}

TEST(SftLoss, ZeroModelIsLogV) {
  PolicyModel model(check::tiny_config());
  auto batch = tiny_batch();
  EXPECT_DOUBLE_EQ(sft_loss_and_grads(model, batch).loss, std::log(12.0));
}

TEST(SftLoss, DuplicationInvariant) {
  auto model = PolicyModel::random(check::tiny_config(), 7);
  auto batch = tiny_batch();
  auto doubled = batch;
  doubled.insert(doubled.end(), batch.begin(), batch.end());
  EXPECT_NEAR(sft_loss(model, batch), sft_loss(model, doubled), 1e-14);
  EXPECT_THROW(sft_loss_and_grads(model, std::vector<SftExample>{}), ArgumentError);
}

TEST(SftLoss, GradientMatchesFiniteDifferences) {
  auto model = PolicyModel::random(check::tiny_config(), 8);
  ASSERT_LE(model.num_parameters(), 10000u);
  auto batch = tiny_batch();
  auto lg = sft_loss_and_grads(model, batch);
  EXPECT_NEAR(lg.loss, sft_loss(model, batch), 1e-14);
  auto report = check::finite_difference_check(model.parameters(), lg.grads.backbone,
                                                 [&] { return sft_loss(model, batch); });
  EXPECT_LE(report.max_rel, 1e-4) << report.worst;
}

TEST(Nucleus, CandidateSetExample) {
  std::vector<double> probs{0.5, 0.3, 0.15, 0.05};
  auto set = nucleus_candidates(probs, 0.8);
  ASSERT_EQ(set.ids, (std::vector<int>{0, 1}));
  EXPECT_NEAR(set.probs[0], 0.625, 1e-15);
  EXPECT_NEAR(set.probs[1], 0.375, 1e-15);
  EXPECT_EQ(nucleus_candidates(probs, 1.0).ids.size(), 4u);
}

TEST(Nucleus, SupportAndDeterminism) {
  auto model = PolicyModel::random(ModelConfig{}, 9);
  SamplerConfig cfg;
  cfg.top_p = 0.7;
  cfg.max_new_tokens = 40;
  TokenSequence prompt{1, 12, 13};
  int steps = 0;
  auto observer = [&](const NucleusSet& set, int chosen) {
    ++steps;
    EXPECT_NE(std::find(set.ids.begin(), set.ids.end(), chosen), set.ids.end());
    double mass_before_last = 0.0;
    for (std::size_t i = 0; i + 1 < set.probs.size(); ++i) mass_before_last += set.probs[i];
    EXPECT_LT(mass_before_last, 1.0);
  };
  auto a = nucleus_sample(model, prompt, cfg, 42, observer);
  auto b = nucleus_sample(model, prompt, cfg, 42);
  EXPECT_EQ(a, b);
  EXPECT_EQ(static_cast<std::size_t>(steps), a.size());
  EXPECT_LE(a.size(), 40u);
  if (a.size() < 40u) {
    EXPECT_EQ(a.back(), Vocab::kEos);
  }
}

TEST(Greedy, ZeroModelTiesLowestId) {
  ModelConfig cfg;
  cfg.vocab = 6;
  PolicyModel model(cfg);
  auto out = greedy_decode(model, {1, 2}, 5, Vocab::kEos);
  EXPECT_EQ(out, (TokenSequence{0, 0, 0, 0, 0}));
}

TEST(Greedy, MatchesNucleusAtSmallTopP) {
  auto model = PolicyModel::random(ModelConfig{}, 10);
  SamplerConfig cfg;
  cfg.top_p = 1e-9;
  cfg.max_new_tokens = 20;
  TokenSequence prompt{1, 40, 41};
  EXPECT_EQ(greedy_decode(model, prompt, 20, Vocab::kEos), nucleus_sample(model, prompt, cfg, 3));
}

TEST(Train, SftReducesLossAndIsJobsInvariant) {
  auto batch = tiny_batch();
  SftConfig cfg;
  cfg.steps = 30;
  cfg.batch = 4;
  cfg.warmup = 2;
  auto m1 = PolicyModel::random(check::tiny_config(), 11);
  auto m2 = m1;
  const double before = sft_loss(m1, batch);
  train_sft(m1, batch, cfg);
  cfg.jobs = 3;
  train_sft(m2, batch, cfg);
  EXPECT_LT(sft_loss(m1, batch), before);
  EXPECT_EQ(encode_checkpoint(model_checkpoint(m1)), encode_checkpoint(model_checkpoint(m2)));
}

TEST(Train, HorizonStopsEarlyOnTheSameSchedule) {
  auto batch = tiny_batch();
  SftConfig full;
  full.steps = 20;
  full.batch = 4;
  full.warmup = 2;
  auto early = full;
  early.steps = 8;
  early.horizon = 20;
  auto m1 = PolicyModel::random(check::tiny_config(), 12);
  auto m2 = m1;
  auto l_full = train_sft(m1, batch, full);
  auto l_early = train_sft(m2, batch, early);
  ASSERT_EQ(l_early.size(), 8u);
  for (std::size_t i = 0; i < l_early.size(); ++i) EXPECT_EQ(l_early[i], l_full[i]);
  early.horizon = 5;
  EXPECT_THROW(train_sft(m2, batch, early), ArgumentError);
}

TEST(Checkpoint, RoundTripAndCorruption) {
  auto model = PolicyModel::random(check::tiny_config(), 12);
  auto bytes = encode_checkpoint(model_checkpoint(model, {{"seed", "12"}}));
  auto back = model_from_checkpoint(decode_checkpoint(bytes));
  EXPECT_EQ(encode_checkpoint(model_checkpoint(back, {{"seed", "12"}})), bytes);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), FormatError);
  EXPECT_THROW(decode_checkpoint("NOTACKPT" + bytes.substr(8)), FormatError);
  EXPECT_THROW(decode_checkpoint(bytes + "x"), FormatError);
}

TEST(Vocab, TextRoundTrip) {
  Vocab v({"dog", "runs", ","});
  EXPECT_EQ(v.size(), 6);
  auto t = v.from_text("dog runs , dog");
  EXPECT_EQ(v.to_text(t), "dog runs , dog");
  EXPECT_THROW(v.id("cat"), ArgumentError);
}
