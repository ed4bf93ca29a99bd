// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>

#include "mrlab/cli/config.hpp"

using namespace mrlab;
using namespace mrlab::cli;

namespace {

std::string field_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    return e.field;
  }
  return "<no error>";
}

}  // namespace

TEST(Config, JsonRoundTrip) {
  const auto j = experiment_to_json(mrdpo::desk_experiment());
  EXPECT_EQ(experiment_to_json(experiment_from_json(j)), j);
  EXPECT_EQ(experiment_to_json(experiment_from_json(json::object())), j);
}

TEST(Config, UnknownKeysNamePath) {
  EXPECT_EQ(field_of([] { experiment_from_json(json::parse(R"({"mrdpo":{"lamda":1}})")); }), "mrdpo.lamda");
  EXPECT_EQ(field_of([] { experiment_from_json(json::parse(R"({"extra":1})")); }), "extra");
  EXPECT_EQ(field_of([] { experiment_from_json(json::parse(R"({"data":{"scenes":{"n":1}}})")); }), "data.scenes.n");
  EXPECT_EQ(field_of([] { experiment_from_json(json::parse(R"({"mrdpo":{"thresholds":[{"delta_e":0.1,"x":0}]}})")); }),
            "mrdpo.thresholds[0].x");
}

TEST(Config, TypeAndRangeErrors) {
  EXPECT_EQ(field_of([] { experiment_from_json(json::parse(R"({"sft":{"steps":"many"}})")); }), "sft.steps");
  EXPECT_EQ(field_of([] { experiment_from_json(json::parse(R"({"sft":{"steps":1.5}})")); }), "sft.steps");
  EXPECT_EQ(field_of([] { experiment_from_json(json::parse(R"({"mrdpo":{"loss":"kto"}})")); }), "mrdpo.loss");
  EXPECT_EQ(field_of([] { experiment_from_json(json::parse(R"({"jobs":0})")); }), "jobs");
  EXPECT_THROW(experiment_from_json(json::parse(R"({"model":{"heads":3}})")), ConfigError);
  EXPECT_THROW(experiment_from_json(json::parse(R"({"mrdpo":{"lambda":-1}})")), ConfigError);
}

TEST(Config, OverridesAndFile) {
  json j = experiment_to_json(mrdpo::desk_experiment());
  apply_override(j, "mrdpo.rounds=5");
  apply_override(j, "mrdpo.loss=dpo");
  apply_override(j, "mrdpo.lrs=[1e-3]");
  auto c = experiment_from_json(j);
  EXPECT_EQ(c.mrdpo.rounds, 5);
  EXPECT_EQ(c.mrdpo.loss, mrdpo::LossMode::kDpo);
  EXPECT_EQ(c.mrdpo.round_config(4).lr, 1e-3);
  EXPECT_EQ(field_of([&] { apply_override(j, "mrdpo.nope=1"); }), "mrdpo.nope");
  EXPECT_THROW(apply_override(j, "novalue"), ConfigError);

  auto path = std::filesystem::temp_directory_path() / "mrlab_config_test.json";
  write_file_atomic(path, R"({"mrdpo":{"thresholds":[{"delta_e":0.1,"delta_r":0.0}]},"sft":{"steps":10,"horizon":0}})");
  auto loaded = load_experiment(path, {"sft.steps=12"});
  EXPECT_EQ(loaded.sft.steps, 12);
  EXPECT_EQ(loaded.mrdpo.round_config(3).thresholds, (mrdpo::Thresholds{0.1, 0.0}));
  write_file_atomic(path, R"({"mrdpo":{"roundz":2}})");
  EXPECT_EQ(field_of([&] { load_experiment(path, {}); }), "mrdpo.roundz");
  std::filesystem::remove(path);
}

TEST(Config, PaperDefaultsSurviveInLibrary) {
  mrdpo::MrdpoConfig m;
  EXPECT_EQ(m.round_config(1).thresholds, mrdpo::table_thresholds(1));
  EXPECT_EQ(m.round_config(3).lr, 1e-5);
  EXPECT_EQ(m.gdpo.lambda, 0.1);
}
