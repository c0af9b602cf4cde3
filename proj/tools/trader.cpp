// trader: command-line front end for training, evaluation, baselines,
// ablation suites and synthetic data generation.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "trader/csv_table.hpp"
#include "trader/errors.hpp"
#include "trader/harness.hpp"

namespace fs = std::filesystem;
using namespace trader;

namespace {

struct Common {
  std::string config;
  std::string out;
  std::vector<std::uint64_t> seeds;
};

void add_common(CLI::App* cmd, Common& c, bool many_seeds) {
  cmd->add_option("--config", c.config, "JSON run configuration")->required()->check(CLI::ExistingFile);
  cmd->add_option("--out", c.out, "output directory")->required();
  if (many_seeds) {
    cmd->add_option("--seed", c.seeds, "run seed(s); overrides the config's seed list");
  } else {
    cmd->add_option("--seed", c.seeds, "run seed; defaults to the config's first seed")->expected(1);
  }
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = load_run_config(c.config);
  cfg.output_dir = c.out;
  if (!c.seeds.empty()) cfg.seeds = c.seeds;
  cfg.validate();
  return cfg;
}

std::string fmt(double v) { return format_double(v); }

int cmd_train(const Common& c) {
  const RunConfig cfg = resolve(c);
  const auto art = run_training(cfg);
  for (std::size_t i = 0; i < art.logs.size(); ++i) {
    const auto rows = load_training_log(art.logs[i]);
    std::cout << "seed " << cfg.seeds[i] << ": " << rows.size() << " episodes";
    if (!rows.empty()) std::cout << ", final net worth " << fmt(rows.back().net_worth);
    std::cout << " -> " << art.logs[i].string() << '\n';
  }
  std::cout << "manifest: " << art.manifest.string() << '\n';
  return 0;
}

int cmd_evaluate(const Common& c, const std::string& checkpoint_arg) {
  const RunConfig cfg = resolve(c);
  const std::uint64_t seed = cfg.seeds.front();
  const fs::path ckpt = checkpoint_arg.empty() ? checkpoint_path(cfg.output_dir, seed) : fs::path(checkpoint_arg);
  const Checkpoint cp = load_checkpoint(ckpt);
  if (cp.config_hash != config_hash(cfg)) {
    std::cerr << "warning: checkpoint config hash " << cp.config_hash << " differs from the current config\n";
  }
  const PriceSeries series = load_series(cfg.data);
  const std::size_t start = cfg.eval_start.value_or(TradingEnv(series, cfg.env).start_range().first);

  const std::vector<std::size_t> starts{start};
  const BaselineResult base = run_baseline(series, cfg.env, starts, derive_seed(seed, 5));
  const BaselineWindow& w = base.windows.front();
  const PolicyOutcome agent = evaluate_policy(cp.agent, series, cfg.env, start);
  const double denom = std::max(kNormalizationFloor, w.buy_and_hold.max_profit);

  ensure_writable_dir(cfg.output_dir);
  const fs::path path = cfg.output_dir / ("evaluation_seed" + std::to_string(seed) + ".csv");
  std::ofstream out(path);
  out << "policy,start,final_profit,max_profit,final_net_worth,shares_sold,normalized_return\n";
  auto row = [&](const char* name, const PolicyOutcome& o) {
    out << name << ',' << start << ',' << fmt(o.final_profit) << ',' << fmt(o.max_profit) << ','
        << fmt(o.final_net_worth) << ',' << fmt(o.shares_sold) << ',' << fmt(o.final_profit / denom) << '\n';
    std::cout << name << ": final profit " << fmt(o.final_profit) << ", normalized " << fmt(o.final_profit / denom)
              << '\n';
  };
  row("agent", agent);
  row("buy_and_hold", w.buy_and_hold);
  row("random", w.random_policy);
  std::cout << "-> " << path.string() << '\n';
  return out ? 0 : 1;
}

int cmd_baseline(const Common& c) {
  const RunConfig cfg = resolve(c);
  ensure_writable_dir(cfg.output_dir);
  const PriceSeries series = load_series(cfg.data);
  for (auto seed : cfg.seeds) {
    const auto starts = episode_starts(series, cfg.env, seed, cfg.episodes);
    const BaselineResult base = run_baseline(series, cfg.env, starts, derive_seed(seed, 5));
    const fs::path path = cfg.output_dir / ("baseline_seed" + std::to_string(seed) + ".csv");
    std::ofstream out(path);
    out << "episode,start,start_price,buy_hold_final_profit,buy_hold_max_profit,random_final_profit,"
           "random_max_profit\n";
    double bh = 0.0, rnd = 0.0;
    for (std::size_t k = 0; k < starts.size(); ++k) {
      const BaselineWindow& w = *base.find(starts[k]);
      out << k << ',' << w.start << ',' << fmt(w.start_price) << ',' << fmt(w.buy_and_hold.final_profit) << ','
          << fmt(w.buy_and_hold.max_profit) << ',' << fmt(w.random_policy.final_profit) << ','
          << fmt(w.random_policy.max_profit) << '\n';
      bh += w.buy_and_hold.final_profit;
      rnd += w.random_policy.final_profit;
    }
    const double n = static_cast<double>(starts.size());
    std::cout << "seed " << seed << ": mean final profit buy-and-hold " << fmt(bh / n) << ", random "
              << fmt(rnd / n) << " -> " << path.string() << '\n';
  }
  return 0;
}

int cmd_ablate(const Common& c, const std::string& suite) {
  const RunConfig cfg = resolve(c);
  const fs::path merged = run_ablation(AblationSpec::standard(ablation_kind_from_string(suite)), cfg);
  std::cout << load_ablation(merged).size() << " rows -> " << merged.string() << '\n';
  return 0;
}

int cmd_gen_data(const std::string& preset, const std::string& out, std::uint64_t seed,
                 std::optional<std::size_t> bars, const std::string& symbol) {
  SyntheticConfig s = synthetic_preset(preset, seed);
  if (bars) {
    s.n_bars = *bars;
    if (s.crash_at) s.crash_at = *bars / 2;
  }
  const fs::path path(out);
  if (path.has_parent_path()) ensure_writable_dir(path.parent_path());
  save_csv(generate_synthetic(s, symbol), path);
  std::cout << s.n_bars << " bars -> " << path.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical RL trade-execution engine"};
  app.set_version_flag("--version", std::string(code_version()));
  app.require_subcommand(1);

  Common train_opts, eval_opts, base_opts, ablate_opts;
  auto* train = app.add_subcommand("train", "train one agent per seed; writes logs, metrics, checkpoints, manifest");
  add_common(train, train_opts, true);

  auto* evaluate = app.add_subcommand("evaluate", "deterministic rollout of a checkpoint against the baselines");
  add_common(evaluate, eval_opts, false);
  std::string checkpoint;
  evaluate->add_option("--checkpoint", checkpoint, "checkpoint file (default <out>/checkpoint_seed<seed>.json)");

  auto* baseline = app.add_subcommand("baseline", "buy-and-hold and random-policy results over each seed's windows");
  add_common(baseline, base_opts, true);

  auto* ablate = app.add_subcommand("ablate", "train every variant of an ablation suite over all seeds");
  add_common(ablate, ablate_opts, true);
  std::string suite;
  ablate->add_option("--suite", suite, "reward | energy | hold | balance")
      ->required()
      ->check(CLI::IsMember({"reward", "energy", "hold", "balance"}));

  auto* gen = app.add_subcommand("gen-data", "write a synthetic OHLCV CSV");
  std::string preset, gen_out, symbol = "SYN";
  std::uint64_t gen_seed = 0;
  std::optional<std::size_t> bars;
  gen->add_option("--synthetic", preset, "trend | crash | flat")
      ->required()
      ->check(CLI::IsMember({"trend", "crash", "flat"}));
  gen->add_option("--out", gen_out, "output CSV path")->required();
  gen->add_option("--seed", gen_seed, "generator seed")->capture_default_str();
  gen->add_option("--bars", bars, "number of bars (crash moves to the midpoint)");
  gen->add_option("--symbol", symbol, "symbol name")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return cmd_train(train_opts);
    if (*evaluate) return cmd_evaluate(eval_opts, checkpoint);
    if (*baseline) return cmd_baseline(base_opts);
    if (*ablate) return cmd_ablate(ablate_opts, suite);
    if (*gen) return cmd_gen_data(preset, gen_out, gen_seed, bars, symbol);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
