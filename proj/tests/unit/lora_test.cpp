// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "mrlab/lora/lora.hpp"
#include "mrlab/tinylm/logprob.hpp"
#include "test_support.hpp"

using namespace mrlab;
using namespace mrlab::tinylm;
using lora::AdaptedModel;

namespace {

void randomize_b(AdaptedModel& m, std::uint64_t seed, double scale = 0.3) {
  Rng rng(seed);
  for (const auto& t : m.adapter().targets) {
    Matrix& b = m.adapter().b(t);
    for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = scale * rng.normal();
  }
}

TokenSequence random_tokens(Rng& rng, int vocab, int max_len) {
  TokenSequence t(1 + rng.below(static_cast<std::size_t>(max_len)));
  for (auto& x : t) x = static_cast<int>(rng.below(static_cast<std::size_t>(vocab)));
  return t;
}

}  // namespace

TEST(Lora, FreshAdapterIsIdentity) {
  auto model = PolicyModel::random(ModelConfig{}, 1);
  auto adapted = lora::attach_fresh(model, 4, 2.0, 7);
  EXPECT_EQ(adapted.adapter().targets.size(), 12u);
  for (const auto& t : adapted.adapter().targets) {
    EXPECT_EQ(adapted.adapter().b(t).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_GT(adapted.adapter().a(t).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(adapted.adapter().a(t).cols(), 4);
  }
  std::vector<int> tokens{1, 5, 7, 9, 11};
  EXPECT_TRUE((lora::adapted_forward(adapted, tokens).array() == forward_logits(model, tokens).array()).all());
  EXPECT_THROW(adapted.attach_fresh(4, 2.0, 8), StateError);
}

TEST(Lora, InitVarianceIsOneOverRank) {
  auto model = PolicyModel::random(ModelConfig{}, 1);
  auto adapted = lora::attach_fresh(model, 16, 2.0, 3);
  double sum2 = 0.0;
  std::size_t n = 0;
  for (const auto& t : adapted.adapter().targets) {
    sum2 += adapted.adapter().a(t).squaredNorm();
    n += static_cast<std::size_t>(adapted.adapter().a(t).size());
  }
  EXPECT_NEAR(sum2 / static_cast<double>(n), 1.0 / 16.0, 0.004);
}

TEST(Lora, AlphaZeroIsIdentity) {
  auto model = PolicyModel::random(ModelConfig{}, 2);
  auto adapted = lora::attach_fresh(model, 4, 0.0, 7);
  randomize_b(adapted, 5);
  std::vector<int> tokens{1, 2, 3};
  EXPECT_TRUE((lora::adapted_forward(adapted, tokens).array() == forward_logits(model, tokens).array()).all());
}

TEST(Lora, ProductionDefaultsAccepted) {
  ModelConfig cfg;
  cfg.width = 128;
  cfg.vocab = 16;
  cfg.layers = 1;
  cfg.context = 8;
  auto model = PolicyModel::random(cfg, 1);
  auto adapted = lora::attach_fresh(model, lora::kDefaultRank, lora::kDefaultAlpha, 1);
  EXPECT_EQ(adapted.adapter().rank, 128);
  EXPECT_EQ(adapted.adapter().alpha, 2.0);
  EXPECT_THROW(lora::attach_fresh(PolicyModel::random(ModelConfig{}, 1), 33, 2.0, 1), ArgumentError);
}

TEST(Lora, RankBoundOfUpdate) {
  auto model = PolicyModel::random(ModelConfig{}, 3);
  auto adapted = lora::attach_fresh(model, 4, 2.0, 7);
  randomize_b(adapted, 9);
  for (const auto& t : adapted.adapter().targets) {
    Eigen::FullPivLU<Eigen::MatrixXd> lu(adapted.adapter().delta(t));
    EXPECT_LE(lu.rank(), 4);
  }
}

TEST(Lora, MergeArithmetic) {
  auto model = PolicyModel::random(ModelConfig{}, 4);
  auto adapted = lora::attach_fresh(model, 4, 2.0, 7);
  randomize_b(adapted, 11);
  const std::string t = "blocks.0.attn.wq";
  Matrix m = adapted.adapter().a(t) * adapted.adapter().b(t);
  PolicyModel merged = lora::merge(adapted);
  EXPECT_LE((merged.param(t) - (model.param(t) + 2.0 * m)).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_TRUE((merged.param("tok_emb").array() == model.param("tok_emb").array()).all());
}

TEST(Lora, MergeEquivalenceOnRandomInputs) {
  auto model = PolicyModel::random(ModelConfig{}, 5);
  auto adapted = lora::attach_fresh(model, 4, 2.0, 7);
  randomize_b(adapted, 13);
  auto merged = adapted;
  merged.merge();
  EXPECT_FALSE(merged.has_adapter());
  EXPECT_THROW(merged.merge(), StateError);
  Rng rng(99);
  double worst = 0.0;
  for (int i = 0; i < 200; ++i) {
    auto tokens = random_tokens(rng, 64, 128);
    Matrix diff = lora::adapted_forward(adapted, tokens) - forward_logits(merged.view(), tokens);
    worst = std::max(worst, diff.cwiseAbs().maxCoeff());
  }
  EXPECT_LE(worst, 1e-9);
}

TEST(Lora, MergeThenFreshLeavesOutputs) {
  auto model = PolicyModel::random(ModelConfig{}, 6);
  auto adapted = lora::attach_fresh(model, 4, 2.0, 7);
  randomize_b(adapted, 17);
  std::vector<int> tokens{1, 8, 16, 32, 63};
  Matrix before = lora::adapted_forward(adapted, tokens);
  adapted.merge();
  Matrix merged = lora::adapted_forward(adapted, tokens);
  adapted.attach_fresh(4, 2.0, 8);
  EXPECT_TRUE((lora::adapted_forward(adapted, tokens).array() == merged.array()).all());
  EXPECT_LE((merged - before).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Lora, ExplicitMatrixOracleOn8x8) {
  ModelConfig cfg = check::tiny_config();
  auto model = PolicyModel::random(cfg, 7);
  auto adapted = lora::attach_fresh(model, 3, 1.5, 2);
  randomize_b(adapted, 19);
  for (const auto& t : adapted.adapter().targets) {
    const Matrix& a = adapted.adapter().a(t);
    const Matrix& b = adapted.adapter().b(t);
    Matrix expected = model.param(t);
    for (Eigen::Index i = 0; i < expected.rows(); ++i)
      for (Eigen::Index j = 0; j < expected.cols(); ++j) {
        double s = 0.0;
        for (Eigen::Index k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
        expected(i, j) += 1.5 * s;
      }
    EXPECT_LE((adapted.materialize().param(t) - expected).cwiseAbs().maxCoeff(), 1e-12) << t;
  }
}

TEST(Lora, AdapterOnlyGradientsMatchFiniteDifferences) {
  auto model = PolicyModel::random(check::tiny_config(), 8);
  auto adapted = lora::attach_fresh(model, 2, 2.0, 3);
  randomize_b(adapted, 21);
  std::vector<SftExample> batch{{"a", {1, 3, 4}, {5, 6, 2}}, {"b", {1, 7}, {8, 9, 2}}};
  auto lg = sft_loss_and_grads(adapted.view(), batch, GradTarget::kAdapter);
  EXPECT_TRUE(lg.grads.backbone.empty());
  auto both = sft_loss_and_grads(adapted.view(), batch, GradTarget::kAll);
  for (const auto& [name, g] : lg.grads.adapter) EXPECT_TRUE((both.grads.adapter.at(name).array() == g.array()).all());
  auto report = check::finite_difference_check(adapted.adapter_parameters(), lg.grads.adapter,
                                                 [&] { return sft_loss(adapted.view(), batch); });
  EXPECT_LE(report.max_rel, 1e-4) << report.worst;
}

TEST(Lora, CheckpointRoundTrip) {
  auto model = PolicyModel::random(ModelConfig{}, 9);
  auto adapted = lora::attach_fresh(model, 4, 2.0, 7);
  randomize_b(adapted, 23);
  auto ckpt = lora::adapter_checkpoint(adapted.adapter(), 2);
  EXPECT_EQ(ckpt.metadata.at("round"), "2");
  auto back = lora::adapter_from_checkpoint(tinylm::decode_checkpoint(tinylm::encode_checkpoint(ckpt)));
  EXPECT_EQ(back.targets, adapted.adapter().targets);
  EXPECT_EQ(back.alpha, 2.0);
  AdaptedModel again(model);
  again.attach(back);
  std::vector<int> tokens{1, 2, 3, 4};
  EXPECT_TRUE((lora::adapted_forward(again, tokens).array() == lora::adapted_forward(adapted, tokens).array()).all());
}
