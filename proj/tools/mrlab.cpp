// SPDX-License-Identifier: Apache-2.0
#include <csignal>
#include <filesystem>
#include <memory>

#include "mrlab/cli/config.hpp"
#include "mrlab/elo/service.hpp"
#include "mrlab/interleave/schedule.hpp"
#include "mrlab/metrics/files.hpp"
#include "mrlab/metrics/remote.hpp"
#include "mrlab/mrdpo/experiment.hpp"
#include "mrlab/tinylm/checkpoint.hpp"

#include <CLI11.hpp>

namespace fs = std::filesystem;
using namespace mrlab;

namespace {

constexpr double kRefreshTolerance = 1e-9;

struct ConfigOptions {
  std::string file;
  std::vector<std::string> overrides;

  void add(CLI::App* app) {
    app->add_option("--config", file, "JSON experiment config")->check(CLI::ExistingFile);
    app->add_option("--set", overrides, "override one field, e.g. --set mrdpo.rounds=2")->take_all();
  }
  mrdpo::ExperimentConfig load() const { return cli::load_experiment(file, overrides); }
};

struct JudgeOptions {
  std::string kind = "lexical";
  metrics::RemoteJudgeConfig remote;

  void add(CLI::App* app) {
    app->add_option("--judge", kind, "lexical or remote")->check(CLI::IsMember({"lexical", "remote"}));
    app->add_option("--judge-url", remote.base_url, "remote judge base URL");
    app->add_option("--judge-model", remote.model, "remote judge model name");
    app->add_option("--judge-retries", remote.max_retries);
    app->add_option("--judge-cache", remote.cache_dir, "decomposition cache directory");
  }
  std::unique_ptr<metrics::JudgeBackend> make() const {
    if (kind == "remote") return std::make_unique<metrics::RemoteJudge>(remote);
    return std::make_unique<metrics::LexicalJudge>();
  }
};

void write_config(const fs::path& dir, const mrdpo::ExperimentConfig& cfg) {
  write_file_atomic(dir / "config.json", cli::experiment_to_json(cfg).dump(2) + "\n");
}

json metrics_json(const metrics::CaptionMetrics& m) { return metrics::metrics_to_json(m); }

void print_round(const std::string& tag, const mrdpo::RoundRecord& r) {
  fmt::print("{}round {} pairs {}/{} loss {:.4f} -> {:.4f} held-out miss {:.4f} hall {:.4f} total {:.4f} rep {:.4f}\n", tag,
             r.round, r.n_pairs, r.n_candidates, r.first_loss, r.last_loss, r.held_out.miss_rate, r.held_out.hall_rate,
             r.held_out.total_rate, r.held_out.repetition_rate);
  std::fflush(stdout);
}

tinylm::PolicyModel sft_model_for(const std::string& ckpt, const mrdpo::ExperimentConfig& cfg,
                                  const mrdpo::ExperimentData& data) {
  if (!ckpt.empty()) return tinylm::model_from_checkpoint(tinylm::load_checkpoint(ckpt));
  fmt::print("training SFT model ({} steps)\n", cfg.sft.steps);
  return mrdpo::train_sft_model(cfg, data);
}

int cmd_corpus(const mrdpo::ExperimentConfig& cfg, const fs::path& out) {
  fs::create_directories(out);
  auto split = corpus::split_scenes(
      corpus::make_scenes(static_cast<std::size_t>(cfg.data.n_scenes), cfg.data.seed, cfg.data.scenes),
      cfg.data.held_out_fraction);
  std::vector<json> sft, events, held;
  for (const auto& s : split.train) {
    sft.push_back(corpus::sft_record(corpus::to_sft_example(s)));
    events.push_back(metrics::to_json(corpus::events_record(s)));
  }
  for (const auto& s : split.held_out) held.push_back(metrics::to_json(corpus::events_record(s)));
  write_jsonl_atomic(out / "sft.jsonl", sft);
  write_jsonl_atomic(out / "events_train.jsonl", events);
  write_jsonl_atomic(out / "events_held_out.jsonl", held);
  write_config(out, cfg);
  fmt::print("{} train / {} held-out scenes written to {}\n", split.train.size(), split.held_out.size(), out.string());
  return 0;
}

int cmd_sft(const mrdpo::ExperimentConfig& cfg, const fs::path& out) {
  fs::create_directories(out);
  const auto data = mrdpo::prepare_data(cfg.data);
  std::vector<json> losses;
  auto model = mrdpo::train_sft_model(cfg, data, [&](int step, double loss) {
    losses.push_back({{"step", step + 1}, {"loss", loss}});
    if ((step + 1) % 100 == 0) fmt::print("step {} loss {:.4f}\n", step + 1, loss);
  });
  if (!model.finite()) {
    fmt::print(stderr, "SFT produced non-finite parameters\n");
    return 1;
  }
  metrics::LexicalJudge judge;
  const auto eval = mrdpo::evaluate_policy(model, data.eval_scenes, judge, cfg.mrdpo.eval_max_new_tokens, cfg.mrdpo.jobs);
  tinylm::save_checkpoint(out / "sft.ckpt", tinylm::model_checkpoint(model, {{"stage", "sft"}}));
  write_jsonl_atomic(out / "sft_losses.jsonl", losses);
  write_file_atomic(out / "sft_eval.json", json{{"held_out", metrics_json(eval.mean)}, {"skipped", eval.skipped}}.dump(2) + "\n");
  write_config(out, cfg);
  fmt::print("held-out miss {:.4f} hall {:.4f} total {:.4f}\n", eval.mean.miss_rate, eval.mean.hall_rate,
             eval.mean.total_rate);
  return 0;
}

int cmd_mrdpo(const mrdpo::ExperimentConfig& cfg, const std::string& sft_ckpt, const fs::path& out,
              const JudgeOptions& jo) {
  fs::create_directories(out);
  const auto data = mrdpo::prepare_data(cfg.data);
  const auto sft = sft_model_for(sft_ckpt, cfg, data);
  const auto judge = jo.make();
  auto res = mrdpo::run_mrdpo(sft, data.inputs(), cfg.mrdpo, *judge, [](const mrdpo::RoundRecord& r) { print_round("", r); });

  std::vector<json> rounds;
  double worst_refresh = 0.0;
  for (const auto& r : res.history) {
    rounds.push_back(mrdpo::round_record_to_json(r));
    worst_refresh = std::max(worst_refresh, r.ref_refresh_max_diff);
  }
  for (std::size_t t = 0; t < res.pairs_by_round.size(); ++t) {
    std::vector<json> pairs;
    for (const auto& p : res.pairs_by_round[t]) pairs.push_back(mrdpo::pair_to_json(p));
    write_jsonl_atomic(out / fmt::format("pairs_round{}.jsonl", t + 1), pairs);
  }
  write_jsonl_atomic(out / "rounds.jsonl", rounds);
  tinylm::save_checkpoint(out / "policy.ckpt",
                          tinylm::model_checkpoint(res.model, {{"stage", "mrdpo"}, {"round", std::to_string(cfg.mrdpo.rounds)}}));
  write_config(out, cfg);
  const double reduction = mrdpo::relative_reduction(res.history);
  const bool ok = worst_refresh <= kRefreshTolerance && res.model.finite();
  write_file_atomic(out / "summary.json", json{{"relative_reduction", reduction},
                                               {"ref_refresh_max_diff", worst_refresh},
                                               {"invariants_ok", ok}}
                                              .dump(2) + "\n");
  fmt::print("relative total-error reduction {:.1f}%  max reference-refresh diff {:.3g}\n", 100.0 * reduction,
             worst_refresh);
  return ok ? 0 : 1;
}

int cmd_ablate(const mrdpo::ExperimentConfig& cfg, const std::string& sft_ckpt, const fs::path& out) {
  fs::create_directories(out);
  const auto data = mrdpo::prepare_data(cfg.data);
  const auto sft = sft_model_for(sft_ckpt, cfg, data);
  metrics::LexicalJudge judge;
  auto curves = mrdpo::run_ablation(sft, data.inputs(), cfg.mrdpo, judge, mrdpo::ablation_variants(),
                                    [](const std::string& v, const mrdpo::RoundRecord& r) { print_round(v + " ", r); });
  write_jsonl_atomic(out / "curves.jsonl", mrdpo::curve_records(curves));
  write_config(out, cfg);
  int rc = 0;
  for (const auto& c : curves) {
    if (!c.error.empty()) {
      fmt::print("{} stopped early: {}\n", c.variant, c.error);
      rc = 1;
    }
    for (const auto& r : c.history)
      if (r.ref_refresh_max_diff > kRefreshTolerance) rc = 1;
  }
  return rc;
}

int cmd_eval(const mrdpo::ExperimentConfig& cfg, const std::string& ckpt, const fs::path& out, const JudgeOptions& jo) {
  const auto data = mrdpo::prepare_data(cfg.data);
  const auto model = tinylm::model_from_checkpoint(tinylm::load_checkpoint(ckpt));
  const auto judge = jo.make();
  std::vector<std::string> captions;
  std::vector<std::vector<metrics::AtomicEvent>> events;
  for (const auto& s : data.eval_scenes) {
    captions.push_back(corpus::caption_text(
        tinylm::greedy_decode(model, corpus::make_prompt(s), cfg.mrdpo.eval_max_new_tokens)));
    events.push_back(s.events);
  }
  auto results = metrics::judge_all(captions, events, *judge, jo.remote.concurrency);
  std::vector<json> reports;
  std::vector<metrics::CaptionMetrics> scored;
  std::size_t skipped = 0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    if (!results[i].evaluation) {
      fmt::print(stderr, "{}: {}\n", data.eval_scenes[i].item_id, results[i].error);
      ++skipped;
      continue;
    }
    auto rep = metrics::make_report(data.eval_scenes[i].item_id, captions[i], *results[i].evaluation);
    auto j = metrics::to_json(rep);
    j["caption"] = captions[i];
    reports.push_back(std::move(j));
    scored.push_back(results[i].evaluation->metrics);
  }
  if (!out.empty()) write_jsonl_atomic(out, reports);
  const auto mean = metrics::mean_metrics(scored);
  fmt::print("{}\n", json{{"held_out", metrics_json(mean)}, {"items", scored.size()}, {"skipped", skipped}}.dump());
  return skipped == 0 ? 0 : 2;
}

int cmd_judge(const fs::path& events_file, const fs::path& captions_file, const fs::path& out, const JudgeOptions& jo) {
  std::map<std::string, std::vector<metrics::AtomicEvent>> by_id;
  for (auto& r : metrics::read_events_file(events_file)) by_id[r.item_id] = std::move(r.events);
  std::vector<std::string> ids, captions;
  std::vector<std::vector<metrics::AtomicEvent>> events;
  for (const auto& j : read_jsonl(captions_file)) {
    const auto id = j.at("item_id").get<std::string>();
    auto it = by_id.find(id);
    if (it == by_id.end()) throw FormatError("no events for item " + id);
    ids.push_back(id);
    captions.push_back(j.at("caption").get<std::string>());
    events.push_back(it->second);
  }
  const auto judge = jo.make();
  auto results = metrics::judge_all(captions, events, *judge, jo.remote.concurrency);
  std::vector<json> reports;
  std::size_t skipped = 0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    if (!results[i].evaluation) {
      fmt::print(stderr, "{}: {}\n", ids[i], results[i].error);
      ++skipped;
      continue;
    }
    reports.push_back(metrics::to_json(metrics::make_report(ids[i], captions[i], *results[i].evaluation)));
  }
  write_jsonl_atomic(out, reports);
  fmt::print("{} judged, {} skipped\n", reports.size(), skipped);
  return skipped == 0 ? 0 : 2;
}

int cmd_interleave(double duration, double fps, int max_frames, double segment_seconds, double tps, const fs::path& out) {
  const auto frames = interleave::plan_frames(duration, fps, max_frames);
  const auto audio = interleave::plan_audio(duration, segment_seconds, tps);
  const auto schedule = interleave::build_schedule(frames, audio);
  const auto records = interleave::schedule_records(schedule);
  if (out.empty()) {
    fmt::print("{}", to_jsonl(records));
  } else {
    write_jsonl_atomic(out, records);
  }
  const auto problems = interleave::check_schedule(schedule, frames);
  for (const auto& p : problems) fmt::print(stderr, "violation: {}\n", p);
  fmt::print(stderr, "{} frames, {} audio tokens in {} segments, {} blocks\n", frames.n(), audio.total_tokens,
             audio.segments(), schedule.blocks.size());
  return problems.empty() ? 0 : 1;
}

int cmd_interleave_check(int draws, std::uint64_t seed) {
  Rng rng(seed);
  int bad = 0;
  for (int i = 0; i < draws; ++i) {
    const double t = 0.5 + 600.0 * rng.uniform();
    const double fps = 0.1 + 4.0 * rng.uniform();
    const int m = 1 + static_cast<int>(rng.below(200));
    const auto frames = interleave::plan_frames(t, fps, m);
    const auto audio = interleave::plan_audio(t, interleave::kDefaultSegmentSeconds, interleave::kDefaultTokensPerSecond);
    const auto problems = interleave::check_schedule(interleave::build_schedule(frames, audio), frames);
    if (!problems.empty()) {
      ++bad;
      fmt::print(stderr, "T={} fps={} m={}: {}\n", t, fps, m, problems.front());
    }
  }
  fmt::print("{} draws, {} with violations\n", draws, bad);
  return bad == 0 ? 0 : 1;
}

httplib::Server* g_server = nullptr;

int cmd_elo_serve(elo::ServiceConfig sc, const std::string& host, int port) {
  elo::EloService service(std::move(sc));
  httplib::Server server;
  service.install(server);
  g_server = &server;
  std::signal(SIGINT, [](int) {
    if (g_server) g_server->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (g_server) g_server->stop();
  });
  fmt::print("listening on http://{}:{}\n", host, port);
  std::fflush(stdout);
  if (!server.listen(host, port)) {
    fmt::print(stderr, "could not bind {}:{}\n", host, port);
    return 1;
  }
  return 0;
}

int cmd_elo_replay(const fs::path& log, const std::vector<std::string>& models, const elo::EloParams& params) {
  const auto state = elo::replay(elo::read_match_log(log), params, models);
  json out = json::object();
  for (const auto& [m, r] : state.ratings) out[m] = {{"rating", r}, {"matches", state.matches.count(m) ? state.matches.at(m) : 0}};
  fmt::print("{}\n", out.dump(2));
  return 0;
}

int cmd_elo_report(const fs::path& log, const elo::EloParams& params) {
  const auto state = elo::replay(elo::read_match_log(log), params);
  fmt::print("{:<4} {:<24} {:>10} {:>8}\n", "rank", "model", "rating", "matches");
  int rank = 0;
  for (const auto& [m, r] : elo::leaderboard(state))
    fmt::print("{:<4} {:<24} {:>10.2f} {:>8}\n", ++rank, m, r, state.matches.count(m) ? state.matches.at(m) : 0);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mrlab: toy-scale multi-round preference optimization for captioning"};
  app.require_subcommand(1);
  int rc = 0;

  ConfigOptions copts;
  JudgeOptions jopts;
  std::string out, sft_ckpt, ckpt;

  auto* config = app.add_subcommand("config", "print the resolved experiment config");
  copts.add(config);
  config->callback([&] { fmt::print("{}\n", cli::experiment_to_json(copts.load()).dump(2)); });

  auto* corpus_cmd = app.add_subcommand("corpus", "generate the synthetic corpus files");
  copts.add(corpus_cmd);
  corpus_cmd->add_option("--out", out, "output directory")->required();
  corpus_cmd->callback([&] { rc = cmd_corpus(copts.load(), out); });

  auto* sft_cmd = app.add_subcommand("sft", "supervised fine-tuning of the toy policy");
  copts.add(sft_cmd);
  sft_cmd->add_option("--out", out, "output directory")->required();
  sft_cmd->callback([&] { rc = cmd_sft(copts.load(), out); });

  auto* mrdpo_cmd = app.add_subcommand("mrdpo", "multi-round preference optimization");
  copts.add(mrdpo_cmd);
  jopts.add(mrdpo_cmd);
  mrdpo_cmd->add_option("--sft", sft_ckpt, "starting checkpoint (trained from the config when omitted)")
      ->check(CLI::ExistingFile);
  mrdpo_cmd->add_option("--out", out, "output directory")->required();
  mrdpo_cmd->callback([&] { rc = cmd_mrdpo(copts.load(), sft_ckpt, out, jopts); });

  auto* ablate_cmd = app.add_subcommand("ablate", "gDPO vs DPO and proxy vs direct curves");
  copts.add(ablate_cmd);
  ablate_cmd->add_option("--sft", sft_ckpt, "starting checkpoint")->check(CLI::ExistingFile);
  ablate_cmd->add_option("--out", out, "output directory")->required();
  ablate_cmd->callback([&] { rc = cmd_ablate(copts.load(), sft_ckpt, out); });

  auto* eval_cmd = app.add_subcommand("eval", "greedy captions of held-out scenes, judged");
  copts.add(eval_cmd);
  jopts.add(eval_cmd);
  eval_cmd->add_option("--ckpt", ckpt, "model checkpoint")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--out", out, "per-item report JSONL");
  eval_cmd->callback([&] { rc = cmd_eval(copts.load(), ckpt, out, jopts); });

  std::string events_file, captions_file;
  auto* judge_cmd = app.add_subcommand("judge", "judge captions against atomic events");
  jopts.add(judge_cmd);
  judge_cmd->add_option("--events", events_file, "events JSONL")->required()->check(CLI::ExistingFile);
  judge_cmd->add_option("--captions", captions_file, "JSONL of {item_id, caption}")->required()->check(CLI::ExistingFile);
  judge_cmd->add_option("--out", out, "report JSONL")->required();
  judge_cmd->callback([&] { rc = cmd_judge(events_file, captions_file, out, jopts); });

  double duration = 30.0, fps = 1.0, segment_seconds = interleave::kDefaultSegmentSeconds,
         tps = interleave::kDefaultTokensPerSecond;
  int max_frames = interleave::kDefaultMaxFrames, draws = 1000;
  std::uint64_t seed = 1;
  auto* il = app.add_subcommand("interleave", "audio-visual block schedule");
  il->add_option("--duration", duration, "seconds")->check(CLI::PositiveNumber);
  il->add_option("--fps", fps)->check(CLI::PositiveNumber);
  il->add_option("--max-frames", max_frames)->check(CLI::PositiveNumber);
  il->add_option("--segment-seconds", segment_seconds)->check(CLI::PositiveNumber);
  il->add_option("--tokens-per-second", tps)->check(CLI::NonNegativeNumber);
  il->add_option("--out", out, "schedule JSONL (stdout when omitted)");
  auto* il_check = il->add_subcommand("check", "invariants over random (T, fps, m) draws");
  il_check->add_option("--draws", draws)->check(CLI::PositiveNumber);
  il_check->add_option("--seed", seed);
  il->callback([&] {
    if (il_check->parsed()) {
      rc = cmd_interleave_check(draws, seed);
    } else {
      rc = cmd_interleave(duration, fps, max_frames, segment_seconds, tps, out);
    }
  });

  auto* elo_cmd = app.add_subcommand("elo", "pairwise human rating");
  elo_cmd->require_subcommand(1);
  elo::ServiceConfig sc;
  std::string host = "127.0.0.1";
  int port = 8080;
  bool no_ties = false;
  std::vector<std::string> models;
  std::string log;
  auto add_params = [&](CLI::App* a) {
    a->add_option("--k-factor", sc.params.k_factor);
    a->add_option("--initial", sc.params.initial_mean);
  };
  auto* serve = elo_cmd->add_subcommand("serve", "HTTP service for the annotator");
  serve->add_option("--catalog", sc.catalog, "catalog JSONL")->required()->check(CLI::ExistingFile);
  serve->add_option("--log", sc.log, "append-only match log")->required();
  serve->add_option("--ui-dir", sc.ui_dir, "static annotator files");
  serve->add_option("--host", host);
  serve->add_option("--port", port);
  serve->add_flag("--no-ties", no_ties, "reject tie verdicts");
  add_params(serve);
  serve->callback([&] {
    sc.allow_ties = !no_ties;
    rc = cmd_elo_serve(sc, host, port);
  });
  auto* replay = elo_cmd->add_subcommand("replay", "recompute ratings from a match log");
  replay->add_option("--log", log)->required()->check(CLI::ExistingFile);
  replay->add_option("--models", models, "models to include even without matches");
  add_params(replay);
  replay->callback([&] { rc = cmd_elo_replay(log, models, sc.params); });
  auto* report = elo_cmd->add_subcommand("report", "leaderboard from a match log");
  report->add_option("--log", log)->required()->check(CLI::ExistingFile);
  add_params(report);
  report->callback([&] { rc = cmd_elo_report(log, sc.params); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const ConfigError& e) {
    fmt::print(stderr, "config error: {}\n", e.what());
    return 64;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  }
  return rc;
}
