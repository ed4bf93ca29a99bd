// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "mrlab/mrdpo/rounds.hpp"
#include "mrlab/tinylm/train.hpp"

using namespace mrlab;
using namespace mrlab::mrdpo;

namespace {

PreferencePair with_deltas(double de, double dr) {
  PreferencePair p;
  p.y_win = {3, 2};
  p.y_lose = {4, 2};
  p.delta_e = de;
  p.delta_r = dr;
  return p;
}

tinylm::ModelConfig small_config() {
  tinylm::ModelConfig cfg;
  cfg.width = 16;
  cfg.layers = 1;
  cfg.heads = 2;
  return cfg;
}

struct Fixture {
  std::vector<corpus::Scene> scenes = corpus::make_scenes(24, 5);
  std::vector<corpus::Scene> pair_scenes{scenes.begin(), scenes.begin() + 16};
  std::vector<corpus::Scene> held_out{scenes.begin() + 16, scenes.end()};
  std::vector<tinylm::SftExample> sft;
  tinylm::PolicyModel model = tinylm::PolicyModel::random(small_config(), 3);
  metrics::LexicalJudge judge;

  Fixture() {
    for (const auto& s : pair_scenes) sft.push_back(corpus::to_sft_example(s));
    tinylm::SftConfig sc;
    sc.steps = 40;
    sc.batch = 4;
    sc.warmup = 5;
    tinylm::train_sft(model, sft, sc);
  }

  MrdpoConfig config() const {
    MrdpoConfig cfg;
    cfg.rounds = 2;
    cfg.steps = 6;
    cfg.batch_pairs = 2;
    cfg.lrs = {5e-3};
    cfg.thresholds = {{0.0, -1.0}};
    cfg.sampler.max_new_tokens = 24;
    cfg.eval_max_new_tokens = 24;
    return cfg;
  }
};

}  // namespace

TEST(Selection, TableRows) {
  EXPECT_EQ(table_thresholds(1), (Thresholds{0.05, 0.01}));
  EXPECT_EQ(table_thresholds(2), (Thresholds{0.20, -0.01}));
  for (int r = 3; r <= 6; ++r) EXPECT_EQ(table_thresholds(r), (Thresholds{0.23, -0.01}));
  EXPECT_THROW(table_thresholds(0), ArgumentError);

  EXPECT_TRUE(keep_pair(with_deltas(0.06, 0.015), table_thresholds(1)));
  EXPECT_TRUE(keep_pair(with_deltas(0.05, 0.01), table_thresholds(1)));
  EXPECT_FALSE(keep_pair(with_deltas(0.049, 0.02), table_thresholds(1)));
  EXPECT_FALSE(keep_pair(with_deltas(0.30, 0.0), table_thresholds(1)));
  EXPECT_FALSE(keep_pair(with_deltas(0.15, 0.0), table_thresholds(2)));
  EXPECT_FALSE(keep_pair(with_deltas(0.199, 0.0), table_thresholds(2)));
  EXPECT_TRUE(keep_pair(with_deltas(0.20, -0.01), table_thresholds(2)));
  for (int r = 3; r <= 6; ++r) {
    EXPECT_TRUE(keep_pair(with_deltas(0.23, -0.01), table_thresholds(r)));
    EXPECT_TRUE(keep_pair(with_deltas(0.15 + 0.08, -0.01), table_thresholds(r)));
    EXPECT_FALSE(keep_pair(with_deltas(0.229, 0.0), table_thresholds(r)));
    EXPECT_FALSE(keep_pair(with_deltas(0.5, -0.011), table_thresholds(r)));
  }
}

TEST(Selection, LearningRateSchedule) {
  EXPECT_EQ(table_learning_rate(1), 2e-5);
  EXPECT_EQ(table_learning_rate(2), 2e-5);
  EXPECT_EQ(table_learning_rate(3), 1e-5);
  EXPECT_EQ(table_learning_rate(4), 2e-6);
  EXPECT_EQ(table_learning_rate(6), 2e-6);
}

TEST(Selection, PureOrderStableFilter) {
  std::vector<PreferencePair> in{with_deltas(0.3, 0.0), with_deltas(0.1, 0.0), with_deltas(0.25, 0.0)};
  in[0].item_id = "a";
  in[1].item_id = "b";
  in[2].item_id = "c";
  auto identical = with_deltas(0.5, 0.5);
  identical.y_lose = identical.y_win;
  in.push_back(identical);
  auto out = select_pairs(in, table_thresholds(3));
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0].item_id, "a");
  EXPECT_EQ(out[1].item_id, "c");
}

TEST(Pairs, OrientationFollowsTotalError) {
  metrics::CaptionMetrics good{0.125, 0.0, 0.125, 0.0};
  metrics::CaptionMetrics bad{0.25, 0.125, 0.375, 0.1};
  auto p = orient_pair("s", 1, {1}, {5, 2}, bad, {6, 2}, good);
  EXPECT_EQ(p.y_win, (tinylm::TokenSequence{6, 2}));
  EXPECT_DOUBLE_EQ(p.delta_e, 0.25);
  EXPECT_DOUBLE_EQ(p.delta_r, 0.1);
  auto q = orient_pair("s", 1, {1}, {5, 2}, good, {6, 2}, bad);
  EXPECT_EQ(q.y_win, (tinylm::TokenSequence{5, 2}));
  EXPECT_GE(q.delta_e, 0.0);
}

TEST(Pairs, GenerationIsDeterministicAndBounded) {
  Fixture f;
  tinylm::SamplerConfig sc;
  sc.max_new_tokens = 24;
  auto a = generate_pairs(f.model, f.pair_scenes, sc, 9, f.judge, 1);
  auto b = generate_pairs(f.model, f.pair_scenes, sc, 9, f.judge, 1, 3);
  ASSERT_LE(a.candidates.size(), f.pair_scenes.size());
  ASSERT_EQ(a.candidates.size(), b.candidates.size());
  for (std::size_t i = 0; i < a.candidates.size(); ++i) {
    EXPECT_EQ(a.candidates[i].y_win, b.candidates[i].y_win);
    EXPECT_GE(a.candidates[i].delta_e, 0.0);
    EXPECT_LE(a.candidates[i].metrics_win.total_rate, a.candidates[i].metrics_lose.total_rate);
    auto back = pair_from_json(json::parse(pair_to_json(a.candidates[i]).dump()));
    EXPECT_EQ(back.y_lose, a.candidates[i].y_lose);
    EXPECT_EQ(back.delta_e, a.candidates[i].delta_e);
  }
}

TEST(Pairs, IdenticalSamplesAreRejected) {
  Fixture f;
  auto x = corpus::make_prompt(f.pair_scenes[0]);
  tinylm::SamplerConfig sc;
  auto y = tinylm::nucleus_sample(f.model, x, sc, 4);
  auto m = metrics::evaluate_caption(corpus::caption_text(y), f.pair_scenes[0].events, f.judge).metrics;
  auto p = orient_pair("s", 1, x, y, m, y, m);
  EXPECT_EQ(p.delta_e, 0.0);
  EXPECT_FALSE(keep_pair(p, table_thresholds(1)));
  EXPECT_FALSE(keep_pair(p, Thresholds{0.0, -1.0}));
}

TEST(Round, StepLossMatchesGdpoLoss) {
  Fixture f;
  auto adapted = lora::attach_fresh(f.model, 2, 2.0, 1);
  for (const auto& t : adapted.adapter().targets) adapted.adapter().b(t).setConstant(0.01);
  auto reference = f.model;
  auto gen = generate_pairs(f.model, f.pair_scenes, tinylm::SamplerConfig{}, 1, f.judge);
  const auto& pair = gen.candidates.front();
  RoundConfig rc;
  std::vector<const PreferencePair*> pairs{&pair};
  std::vector<gdpo::ReferenceLogprobs> refs{gdpo::reference_logprobs(reference, pair)};
  std::vector<const tinylm::SftExample*> gt{&f.sft[0]};
  auto lg = round_step_loss(adapted, pairs, refs, gt, rc);
  std::vector<tinylm::SftExample> batch{f.sft[0]};
  auto ref = gdpo::gdpo_loss(adapted.view(), reference, pair, batch, rc.gdpo, tinylm::GradTarget::kAdapter);
  EXPECT_NEAR(lg.loss, ref.loss, 1e-12);
  for (const auto& [name, g] : ref.grads.adapter) EXPECT_LE((lg.grads.adapter.at(name) - g).cwiseAbs().maxCoeff(), 1e-12);
  rc.loss = LossMode::kDpo;
  EXPECT_NEAR(round_step_loss(adapted, pairs, refs, gt, rc).loss, gdpo::dpo_loss_value(adapted.view(), reference, pair, rc.gdpo.beta), 1e-12);
}

TEST(Round, EmptyPairSetIsAnError) {
  Fixture f;
  MrdpoState state{lora::AdaptedModel(f.model), 0, {}};
  EXPECT_THROW(run_round(state, {}, f.sft, RoundConfig{}, f.held_out, f.judge, 24), RoundError);
}

TEST(Round, ProxyCycleInvariants) {
  Fixture f;
  auto cfg = f.config();
  cfg.steps = 25;
  auto gen = generate_pairs(f.model, f.pair_scenes, cfg.sampler, 2, f.judge, 1);
  auto pairs = select_pairs(gen.candidates, Thresholds{0.0, -1.0});
  ASSERT_FALSE(pairs.empty());
  MrdpoState state{lora::AdaptedModel(f.model), 0, {}};
  auto rc = cfg.round_config(1);
  state = run_round(std::move(state), pairs, f.sft, rc, f.held_out, f.judge, 24);
  ASSERT_TRUE(state.policy.has_adapter());
  const auto& r1 = state.history.back();
  EXPECT_EQ(r1.ref_refresh_max_diff, 0.0);
  // Backbone untouched by the round (exact), adapter trained.
  for (const auto& [name, w] : f.model.parameters())
    EXPECT_TRUE((state.policy.backbone().param(name).array() == w.array()).all()) << name;
  double late = 0.0;
  for (std::size_t i = r1.losses.size() - 5; i < r1.losses.size(); ++i) late += r1.losses[i] / 5.0;
  EXPECT_LT(late, r1.losses.front());

  // Round 2: the reference is the end-of-round-1 policy.
  auto end_of_round_1 = state.policy;
  state = run_round(std::move(state), pairs, f.sft, cfg.round_config(2), f.held_out, f.judge, 24);
  EXPECT_LE(state.history.back().ref_refresh_max_diff, 1e-9);
  auto merged = end_of_round_1.materialize();
  for (const auto& [name, w] : merged.parameters())
    EXPECT_LE((state.policy.backbone().param(name) - w).cwiseAbs().maxCoeff(), 1e-12) << name;
}

TEST(Round, DirectModeReusesAdapter) {
  Fixture f;
  auto cfg = f.config();
  cfg.proxy = ProxyMode::kDirect;
  auto gen = generate_pairs(f.model, f.pair_scenes, cfg.sampler, 2, f.judge, 1);
  auto pairs = select_pairs(gen.candidates, Thresholds{0.0, -1.0});
  MrdpoState state{lora::AdaptedModel(f.model), 0, {}};
  state = run_round(std::move(state), pairs, f.sft, cfg.round_config(1), f.held_out, f.judge, 24);
  auto adapter_after_1 = state.policy.adapter();
  state = run_round(std::move(state), pairs, f.sft, cfg.round_config(2), f.held_out, f.judge, 24);
  // Backbone never merged; the same adapter kept training.
  for (const auto& [name, w] : f.model.parameters())
    EXPECT_TRUE((state.policy.backbone().param(name).array() == w.array()).all());
  const auto& t = adapter_after_1.targets.front();
  EXPECT_FALSE((state.policy.adapter().b(t).array() == adapter_after_1.b(t).array()).all());
  EXPECT_LE(state.history.back().ref_refresh_max_diff, 1e-9);
}

TEST(Run, ZeroRoundsReturnsInput) {
  Fixture f;
  auto cfg = f.config();
  cfg.rounds = 0;
  auto res = run_mrdpo(f.model, {f.sft, f.pair_scenes, f.held_out}, cfg, f.judge);
  EXPECT_EQ(tinylm::encode_checkpoint(tinylm::model_checkpoint(res.model)),
            tinylm::encode_checkpoint(tinylm::model_checkpoint(f.model)));
  EXPECT_EQ(res.history.size(), 1u);
}

TEST(Run, DeterministicAcrossJobs) {
  Fixture f;
  auto cfg = f.config();
  auto a = run_mrdpo(f.model, {f.sft, f.pair_scenes, f.held_out}, cfg, f.judge);
  cfg.jobs = 3;
  auto b = run_mrdpo(f.model, {f.sft, f.pair_scenes, f.held_out}, cfg, f.judge);
  ASSERT_EQ(a.history.size(), 3u);
  EXPECT_EQ(tinylm::encode_checkpoint(tinylm::model_checkpoint(a.model)),
            tinylm::encode_checkpoint(tinylm::model_checkpoint(b.model)));
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    EXPECT_EQ(round_record_to_json(a.history[i]), round_record_to_json(b.history[i]));
    EXPECT_LE(a.history[i].ref_refresh_max_diff, 1e-9);
  }
  auto back = round_record_from_json(json::parse(round_record_to_json(a.history[1]).dump()));
  EXPECT_EQ(back.held_out, a.history[1].held_out);
}
