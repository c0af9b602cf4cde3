#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "trader/agent.hpp"
#include "trader/env.hpp"
#include "trader/market_data.hpp"
#include "trader/surprise.hpp"
#include "trader/trainer.hpp"

namespace trader {

/// Build identifier baked in at configure time (`git describe`).
const char* code_version();

struct DataSource {
  std::optional<std::filesystem::path> csv_path;  // synthetic when empty
  std::string symbol = "SYN";
  SyntheticConfig synthetic;
};

struct RunConfig {
  DataSource data;
  EnvConfig env;
  PpoConfig ppo;
  SurpriseConfig surprise;
  AgentConfig agent;
  std::size_t episodes = 50;
  std::vector<std::uint64_t> seeds{1};
  std::filesystem::path output_dir = "runs";
  /// Fixed start index used by `evaluate`; the first valid index when unset.
  std::optional<std::size_t> eval_start;
  /// Write an intermediate checkpoint every this many episodes; 0 disables.
  std::size_t checkpoint_every = 0;

  RunConfig();  // desk-scale defaults
  void validate() const;
};

/// Parses a JSON config. Unknown keys are rejected; missing keys keep defaults.
/// Relative CSV paths resolve against `base_dir`.
RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
nlohmann::json run_config_to_json(const RunConfig& cfg);
RunConfig load_run_config(const std::filesystem::path& path);
/// FNV-1a over the canonical JSON dump of the resolved config, as 16 hex digits.
/// Seeds and output_dir are left out, so every seed of one experiment shares a hash.
std::string config_hash(const RunConfig& cfg);

/// Named synthetic fixtures: "trend", "crash", "flat".
SyntheticConfig synthetic_preset(const std::string& name, std::uint64_t seed = 0);
PriceSeries load_series(const DataSource& data);

// --- CSV artifacts ---------------------------------------------------------

inline constexpr const char* kTrainingLogHeader =
    "episode,extrinsic_return,net_worth,shares_sold,policy_loss,value_loss,surprise_loss,clip_fraction";

void save_training_log(const std::filesystem::path& path, const std::vector<EpisodeLogRow>& rows);
std::vector<EpisodeLogRow> load_training_log(const std::filesystem::path& path);

// --- baselines and metrics -------------------------------------------------

struct PolicyOutcome {
  double final_profit = 0.0;
  double max_profit = 0.0;
  double final_net_worth = 0.0;
  double shares_sold = 0.0;
};

struct BaselineWindow {
  std::size_t start = 0;
  double start_price = 0.0;
  PolicyOutcome buy_and_hold;
  PolicyOutcome random_policy;
};

struct BaselineResult {
  std::uint64_t series_fingerprint = 0;
  double starting_balance = 0.0;
  std::size_t episode_length = 0;
  std::vector<BaselineWindow> windows;

  const BaselineWindow* find(std::size_t start) const;
};

/// Buy-and-hold and a seeded uniform random policy over each episode window.
BaselineResult run_baseline(const PriceSeries& series, const EnvConfig& env_cfg, std::span<const std::size_t> starts,
                            std::uint64_t random_seed);

/// Episode start indices train() draws for `episodes` episodes of run `seed`.
std::vector<std::size_t> episode_starts(const PriceSeries& series, const EnvConfig& env_cfg, std::uint64_t seed,
                                        std::size_t episodes);

struct MetricRow {
  std::string run_id;
  std::uint64_t seed = 0;
  std::size_t episode = 0;
  double normalized_return = 0.0;
  double shares_sold_normalized = 0.0;
  double net_worth = 0.0;

  friend bool operator==(const MetricRow&, const MetricRow&) = default;
};

inline constexpr double kNormalizationFloor = 1.0;

/// (net_worth - starting_balance) / max(1, buy-and-hold max profit) per episode.
/// `starts[i]` is the window of log row i. Throws SeriesMismatch when the
/// baseline was computed on another series or lacks a window.
std::vector<MetricRow> normalize_returns(const std::vector<EpisodeLogRow>& log, std::span<const std::size_t> starts,
                                         const BaselineResult& baseline, std::uint64_t series_fingerprint,
                                         const std::string& run_id, std::uint64_t seed);

/// Shares sold relative to the shares the starting balance buys at the window's first close.
double shares_sold_normalized(double shares_sold, const BaselineWindow& window, double starting_balance);

inline constexpr const char* kMetricHeader = "run_id,seed,episode,normalized_return,shares_sold_normalized,net_worth";
void save_metrics(const std::filesystem::path& path, const std::vector<MetricRow>& rows);
std::vector<MetricRow> load_metrics(const std::filesystem::path& path);

/// Deterministic rollout of the agent over one full episode from `start`.
PolicyOutcome evaluate_policy(const HierarchicalAgent& agent, const PriceSeries& series, const EnvConfig& env_cfg,
                              std::size_t start);

// --- checkpoints -----------------------------------------------------------

struct Checkpoint {
  HierarchicalAgent agent;
  SurpriseNet surprise;
  std::string config_hash;
  std::size_t training_step = 0;
  std::size_t episodes = 0;
};

void save_checkpoint(const std::filesystem::path& path, const HierarchicalAgent& agent, const SurpriseNet& surprise,
                     const std::string& config_hash, std::size_t training_step, std::size_t episodes);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// --- runs ------------------------------------------------------------------

/// Worker count from TRADER_THREADS, else hardware concurrency (at least 1).
std::size_t worker_threads();

/// Runs fn(0..n-1) on at most `threads` workers. The first exception thrown by
/// any task is rethrown after all workers stop.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

/// Throws Error unless `dir` exists (or can be created) and accepts a file.
void ensure_writable_dir(const std::filesystem::path& dir);

struct TrainingArtifacts {
  std::vector<std::filesystem::path> logs;
  std::vector<std::filesystem::path> metrics;
  std::vector<std::filesystem::path> checkpoints;
  std::filesystem::path manifest;
};

std::filesystem::path training_log_path(const std::filesystem::path& dir, std::uint64_t seed);
std::filesystem::path checkpoint_path(const std::filesystem::path& dir, std::uint64_t seed);

/// One TrainingLog, metrics file and checkpoint per seed plus manifest.json.
/// On failure the manifest is written with status "failed" next to a FAILED
/// marker, finished seeds are kept, and the exception propagates.
TrainingArtifacts run_training(const RunConfig& cfg);

enum class AblationKind { RewardKind, EnergyIM, HoldAction, StartingBalance };

struct AblationVariant {
  std::string name;
  std::function<void(RunConfig&)> apply;
};

struct AblationSpec {
  AblationKind kind = AblationKind::EnergyIM;
  std::vector<AblationVariant> variants;

  static AblationSpec standard(AblationKind kind);
};

std::string to_string(AblationKind kind);
/// Accepts the CLI suite names: reward, energy, hold, balance.
AblationKind ablation_kind_from_string(const std::string& name);

inline constexpr const char* kAblationHeader = "variant,seed,episode,normalized_return,shares_sold";

struct AblationRow {
  std::string variant;
  std::uint64_t seed = 0;
  std::size_t episode = 0;
  double normalized_return = 0.0;
  double shares_sold = 0.0;

  friend bool operator==(const AblationRow&, const AblationRow&) = default;
};

void save_ablation(const std::filesystem::path& path, const std::vector<AblationRow>& rows);
std::vector<AblationRow> load_ablation(const std::filesystem::path& path);

/// Trains every variant for every seed of `base`, writing per-run logs under
/// <out>/<suite>/ and the merged ablation_<suite>.csv. Returns the merged path.
std::filesystem::path run_ablation(const AblationSpec& spec, const RunConfig& base);

}  // namespace trader
