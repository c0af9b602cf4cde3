#include <gtest/gtest.h>

#include <atomic>
#include <nlohmann/json.hpp>

#include "test_util.hpp"
#include "trader/errors.hpp"
#include "trader/harness.hpp"

using namespace trader;
using trader::testing::read_file;
using trader::testing::TempDir;
using trader::testing::write_file;

namespace {

RunConfig tiny_config(const std::filesystem::path& out) {
  RunConfig cfg;
  cfg.data.synthetic = synthetic_preset("trend", 3);
  cfg.data.synthetic.n_bars = 300;
  cfg.env.episode_length = 50;
  cfg.ppo.update_interval = 20;
  cfg.ppo.minibatch_size = 10;
  cfg.agent.hidden = 16;
  cfg.episodes = 2;
  cfg.seeds = {1, 2};
  cfg.output_dir = out;
  return cfg;
}

PriceSeries flat_series(std::size_t n = 100) {
  SyntheticConfig sc = synthetic_preset("flat");
  sc.n_bars = n;
  return generate_synthetic(sc);
}

EnvConfig short_env() {
  EnvConfig e;
  e.episode_length = 20;
  return e;
}

}  // namespace

TEST(Config, JsonRoundTrip) {
  RunConfig cfg = tiny_config("out");
  cfg.surprise.enabled = true;
  cfg.surprise.sign = IntrinsicSign::Subtract;
  cfg.env.reward_kind = RewardKind::PnL;
  cfg.eval_start = 17;
  const auto j = run_config_to_json(cfg);
  const RunConfig back = run_config_from_json(nlohmann::json::parse(j.dump()));
  EXPECT_EQ(run_config_to_json(back), j);
  EXPECT_EQ(config_hash(back), config_hash(cfg));
  cfg.seeds = {9};
  cfg.output_dir = "elsewhere";
  EXPECT_EQ(config_hash(back), config_hash(cfg));
  cfg.ppo.learning_rate = 1e-3;
  EXPECT_NE(config_hash(back), config_hash(cfg));
  EXPECT_EQ(config_hash(cfg).size(), 16u);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  auto j = run_config_to_json(RunConfig{});
  j["ppo"]["learning_rte"] = 0.1;
  EXPECT_THROW(run_config_from_json(j), InvalidConfig);
  j = run_config_to_json(RunConfig{});
  j["extra"] = 1;
  EXPECT_THROW(run_config_from_json(j), InvalidConfig);
  j = run_config_to_json(RunConfig{});
  j["env"]["reward_kind"] = "sharpe";
  EXPECT_THROW(run_config_from_json(j), InvalidConfig);
  j = run_config_to_json(RunConfig{});
  j["ppo"]["gamma"] = "high";
  EXPECT_THROW(run_config_from_json(j), InvalidConfig);
  j = run_config_to_json(RunConfig{});
  j["seeds"] = nlohmann::json::array();
  EXPECT_THROW(run_config_from_json(j), InvalidConfig);
}

TEST(Config, PartialConfigKeepsDefaults) {
  const auto cfg = run_config_from_json(nlohmann::json::parse(R"({"episodes": 3, "env": {"allow_hold": false}})"));
  EXPECT_EQ(cfg.episodes, 3u);
  EXPECT_FALSE(cfg.env.allow_hold);
  EXPECT_EQ(cfg.env.episode_length, RunConfig{}.env.episode_length);
  EXPECT_EQ(cfg.ppo.learning_rate, 3e-4);
}

TEST(Config, CsvPathResolvesAgainstConfigFile) {
  TempDir tmp;
  std::filesystem::create_directories(tmp / "cfg");
  write_file(tmp / "cfg" / "run.json", R"({"data": {"source": "csv", "path": "bars.csv", "symbol": "ABC"}})");
  const auto cfg = load_run_config(tmp / "cfg" / "run.json");
  ASSERT_TRUE(cfg.data.csv_path);
  EXPECT_EQ(*cfg.data.csv_path, tmp / "cfg" / "bars.csv");
  EXPECT_EQ(cfg.data.symbol, "ABC");
  EXPECT_THROW(load_run_config(tmp / "missing.json"), MissingFile);
  write_file(tmp / "bad.json", "{not json");
  EXPECT_THROW(load_run_config(tmp / "bad.json"), InvalidConfig);
}

TEST(Config, SyntheticPresets) {
  const auto trend = synthetic_preset("trend", 7);
  EXPECT_EQ(trend.n_bars, 2000u);
  EXPECT_EQ(trend.drift, 0.0005);
  EXPECT_EQ(trend.volatility, 0.005);
  EXPECT_EQ(trend.seed, 7u);
  EXPECT_TRUE(synthetic_preset("crash").crash_at.has_value());
  EXPECT_THROW(synthetic_preset("sideways"), InvalidConfig);
}

TEST(Logs, TrainingLogRoundTrip) {
  TempDir tmp;
  std::vector<EpisodeLogRow> rows{{0, 0.125, 10010.5, 3.0, -0.01, 0.2, 0.0, 0.1},
                                  {1, -1.0 / 3.0, 9999.999999, 0.0, 1e-17, 2.5, 0.3, 0.0}};
  save_training_log(tmp / "log.csv", rows);
  EXPECT_EQ(load_training_log(tmp / "log.csv"), rows);
  EXPECT_EQ(read_file(tmp / "log.csv").substr(0, std::string(kTrainingLogHeader).size()), kTrainingLogHeader);
  write_file(tmp / "bad.csv", "episode,foo\n");
  EXPECT_THROW(load_training_log(tmp / "bad.csv"), Error);
}

TEST(Logs, MetricAndAblationRoundTrip) {
  TempDir tmp;
  std::vector<MetricRow> m{{"run", 3, 0, 0.5, 0.25, 10500.0}, {"run", 3, 1, -0.1, 0.0, 9000.0}};
  save_metrics(tmp / "m.csv", m);
  EXPECT_EQ(load_metrics(tmp / "m.csv"), m);
  std::vector<AblationRow> a{{"hold_on", 1, 0, 0.1, 4.0}, {"hold_off", 2, 5, -0.2, 0.0}};
  save_ablation(tmp / "a.csv", a);
  EXPECT_EQ(load_ablation(tmp / "a.csv"), a);
}

TEST(Baseline, SignFollowsTheMarket) {
  EnvConfig env = short_env();
  SyntheticConfig up = synthetic_preset("trend", 1);
  up.n_bars = 200;
  up.volatility = 0.0;
  SyntheticConfig down = up;
  down.drift = -0.001;
  const std::vector<std::size_t> starts{10, 50};
  for (const auto& w : run_baseline(generate_synthetic(up), env, starts, 1).windows) {
    EXPECT_GT(w.buy_and_hold.final_profit, 0.0);
    EXPECT_EQ(w.buy_and_hold.max_profit, w.buy_and_hold.final_profit);
  }
  for (const auto& w : run_baseline(generate_synthetic(down), env, starts, 1).windows) {
    EXPECT_LT(w.buy_and_hold.final_profit, 0.0);
    EXPECT_EQ(w.buy_and_hold.max_profit, 0.0);
  }
  for (const auto& w : run_baseline(flat_series(), env, starts, 1).windows) {
    EXPECT_EQ(w.buy_and_hold.final_profit, 0.0);
    EXPECT_EQ(w.random_policy.final_profit, 0.0);
    EXPECT_EQ(w.start_price, 100.0);
  }
}

TEST(Baseline, RandomPolicyIsSeeded) {
  SyntheticConfig sc = synthetic_preset("trend", 4);
  sc.n_bars = 200;
  const auto s = generate_synthetic(sc);
  const std::vector<std::size_t> starts{20, 40};
  const auto a = run_baseline(s, short_env(), starts, 5);
  const auto b = run_baseline(s, short_env(), starts, 5);
  const auto c = run_baseline(s, short_env(), starts, 6);
  EXPECT_EQ(a.windows[1].random_policy.final_net_worth, b.windows[1].random_policy.final_net_worth);
  EXPECT_NE(a.windows[1].random_policy.final_net_worth, c.windows[1].random_policy.final_net_worth);
  ASSERT_NE(a.find(40), nullptr);
  EXPECT_EQ(a.find(41), nullptr);
}

TEST(Normalize, Examples) {
  const auto series = flat_series();
  BaselineResult base;
  base.series_fingerprint = series.fingerprint();
  base.starting_balance = 10000.0;
  base.windows.push_back(BaselineWindow{7, 100.0, PolicyOutcome{200.0, 400.0, 10200.0, 0.0}, PolicyOutcome{}});
  base.windows.push_back(BaselineWindow{9, 100.0, PolicyOutcome{0.0, 0.0, 10000.0, 0.0}, PolicyOutcome{}});
  const std::vector<std::size_t> starts{7, 7, 9};
  std::vector<EpisodeLogRow> log(3);
  log[0].net_worth = 10400.0;  // matches the baseline's best
  log[1].net_worth = 10000.0;
  log[1].episode = 1;
  log[2].net_worth = 10003.0;  // flat window: floor of 1 in the denominator
  log[2].shares_sold = 50.0;
  log[2].episode = 2;
  const auto rows = normalize_returns(log, starts, base, series.fingerprint(), "r", 4);
  EXPECT_EQ(rows[0].normalized_return, 1.0);
  EXPECT_EQ(rows[1].normalized_return, 0.0);
  EXPECT_EQ(rows[2].normalized_return, 3.0);
  EXPECT_EQ(rows[2].shares_sold_normalized, 50.0 * 100.0 / 10000.0);
  EXPECT_EQ(rows[2].seed, 4u);

  EXPECT_THROW(normalize_returns(log, starts, base, series.fingerprint() + 1, "r", 4), SeriesMismatch);
  EXPECT_THROW(normalize_returns(log, std::vector<std::size_t>{7}, base, series.fingerprint(), "r", 4),
               SeriesMismatch);
  EXPECT_THROW(normalize_returns(log, std::vector<std::size_t>{7, 7, 8}, base, series.fingerprint(), "r", 4),
               SeriesMismatch);
}

TEST(Normalize, MonotoneInNetWorth) {
  const auto series = flat_series();
  BaselineResult base;
  base.series_fingerprint = series.fingerprint();
  base.starting_balance = 10000.0;
  base.windows.push_back(BaselineWindow{7, 100.0, PolicyOutcome{50.0, 80.0, 10050.0, 0.0}, PolicyOutcome{}});
  std::vector<EpisodeLogRow> log(1);
  const std::vector<std::size_t> starts{7};
  double prev = -1e300;
  for (double nw = 8000.0; nw < 12000.0; nw += 37.5) {
    log[0].net_worth = nw;
    const double r = normalize_returns(log, starts, base, series.fingerprint(), "r", 1)[0].normalized_return;
    EXPECT_GT(r, prev);
    prev = r;
  }
}

TEST(Evaluate, DeterministicPolicyReplay) {
  SyntheticConfig sc = synthetic_preset("trend", 2);
  sc.n_bars = 200;
  const auto s = generate_synthetic(sc);
  HierarchicalAgent agent(AgentConfig{.hidden = 8}, 3);
  const auto a = evaluate_policy(agent, s, short_env(), 30);
  const auto b = evaluate_policy(agent, s, short_env(), 30);
  EXPECT_EQ(a.final_net_worth, b.final_net_worth);
  EXPECT_GE(a.max_profit, a.final_profit);
  EXPECT_GE(a.max_profit, 0.0);
}

TEST(Runner, ParallelForCoversEveryIndexAndRethrows) {
  std::vector<std::atomic<int>> hits(50);
  parallel_for(50, 4, [&](std::size_t i) { ++hits[i]; });
  for (auto& h : hits) EXPECT_EQ(h.load(), 1);
  EXPECT_THROW(parallel_for(10, 3,
                            [](std::size_t i) {
                              if (i == 6) throw InvalidConfig("boom");
                            }),
               InvalidConfig);
  parallel_for(0, 2, [](std::size_t) { FAIL(); });
  EXPECT_GE(worker_threads(), 1u);
}

TEST(Runner, UnwritableOutputFailsBeforeTraining) {
  TempDir tmp;
  write_file(tmp / "file", "x");
  auto cfg = tiny_config(tmp / "file" / "sub");
  EXPECT_THROW(run_training(cfg), Error);
}

TEST(Runner, TrainingWritesArtifactsAndIsReproducible) {
  TempDir tmp;
  const auto art = run_training(tiny_config(tmp / "a"));
  ASSERT_EQ(art.logs.size(), 2u);
  for (const auto& p : art.logs) EXPECT_EQ(load_training_log(p).size(), 2u);
  for (const auto& p : art.metrics) EXPECT_EQ(load_metrics(p).size(), 2u);
  const auto manifest = nlohmann::json::parse(read_file(art.manifest));
  EXPECT_EQ(manifest["status"], "complete");
  EXPECT_EQ(manifest["config_hash"], config_hash(tiny_config(tmp / "a")));
  EXPECT_FALSE(std::filesystem::exists(tmp / "a" / "FAILED"));

  const auto ck = load_checkpoint(art.checkpoints[0]);
  EXPECT_EQ(ck.episodes, 2u);
  EXPECT_EQ(ck.training_step, 100u);
  EXPECT_EQ(ck.agent.config().hidden, 16u);

  const auto again = run_training(tiny_config(tmp / "b"));
  for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(read_file(art.logs[i]), read_file(again.logs[i]));
  EXPECT_NE(read_file(art.logs[0]), read_file(art.logs[1]));
}

TEST(Runner, CheckpointRoundTrip) {
  TempDir tmp;
  HierarchicalAgent agent(AgentConfig{.allow_hold = false, .hidden = 8}, 1);
  SurpriseNet surprise(2, 8);
  save_checkpoint(tmp / "ck.json", agent, surprise, "abc", 40, 2);
  const auto ck = load_checkpoint(tmp / "ck.json");
  EXPECT_EQ(ck.agent.parameters(), agent.parameters());
  EXPECT_TRUE(ck.surprise.net() == surprise.net());
  EXPECT_EQ(ck.config_hash, "abc");
  EXPECT_THROW(load_checkpoint(tmp / "none.json"), MissingFile);
}

TEST(Ablation, StandardGrids) {
  EXPECT_EQ(AblationSpec::standard(AblationKind::HoldAction).variants.size(), 2u);
  EXPECT_EQ(AblationSpec::standard(AblationKind::EnergyIM).variants.size(), 2u);
  EXPECT_EQ(AblationSpec::standard(AblationKind::RewardKind).variants.size(), 3u);
  EXPECT_EQ(AblationSpec::standard(AblationKind::StartingBalance).variants.size(), 3u);
  for (auto k : {AblationKind::RewardKind, AblationKind::EnergyIM, AblationKind::HoldAction,
                 AblationKind::StartingBalance}) {
    EXPECT_EQ(ablation_kind_from_string(to_string(k)), k);
  }
  EXPECT_THROW(ablation_kind_from_string("lr"), InvalidConfig);

  RunConfig cfg;
  for (const auto& v : AblationSpec::standard(AblationKind::HoldAction).variants) {
    v.apply(cfg);
    EXPECT_EQ(cfg.env.allow_hold, v.name == "hold_on");
  }
}

TEST(Ablation, RunWritesMergedCsv) {
  TempDir tmp;
  auto cfg = tiny_config(tmp.path());
  const auto merged = run_ablation(AblationSpec::standard(AblationKind::HoldAction), cfg);
  EXPECT_EQ(merged, tmp / "ablation_hold.csv");
  const auto rows = load_ablation(merged);
  EXPECT_EQ(rows.size(), 2u * 2u * 2u);
  EXPECT_TRUE(std::filesystem::exists(tmp / "hold" / "manifest.json"));
}
