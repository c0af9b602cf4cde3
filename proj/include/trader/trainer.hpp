#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "trader/agent.hpp"
#include "trader/env.hpp"
#include "trader/surprise.hpp"

namespace trader {

struct PpoConfig {
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip_epsilon = 0.2;
  std::size_t epochs_per_update = 4;
  std::size_t minibatch_size = 32;
  double value_coeff = 0.5;
  double entropy_coeff = 0.0;
  double max_grad_norm = 0.5;
  double learning_rate = 3.0e-4;
  std::size_t update_interval = 100;

  void validate() const;
};

/// Independent, reproducible seed for one consumer (`stream`) of a run seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);
/// Seed of the random episode start for episode `episode` of a run.
std::uint64_t episode_seed(std::uint64_t run_seed, std::size_t episode);

struct Transition {
  Observation obs{};
  HybridAction action;
  double pre_squash = 0.0;
  double order_logprob = 0.0;
  double bid_logprob = 0.0;
  double extrinsic_reward = 0.0;
  /// What the learner optimizes: extrinsic_reward, plus the intrinsic term when shaping is on.
  double reward = 0.0;
  double value = 0.0;
  bool done = false;
  Observation next_obs{};
};

class RolloutBuffer {
 public:
  explicit RolloutBuffer(std::size_t capacity);

  void push(const Transition& t);
  void clear();

  std::size_t size() const noexcept { return items_.size(); }
  std::size_t capacity() const noexcept { return capacity_; }
  bool full() const noexcept { return items_.size() == capacity_; }
  bool empty() const noexcept { return items_.empty(); }
  /// Full, or non-empty and ending on a terminal transition.
  bool ready() const noexcept { return full() || (!empty() && items_.back().done); }

  std::span<const Transition> transitions() const noexcept { return items_; }
  std::span<Transition> transitions() noexcept { return items_; }
  const Transition& operator[](std::size_t i) const { return items_[i]; }
  Transition& operator[](std::size_t i) { return items_[i]; }

  /// Critic value of the observation after the last transition; 0 after a terminal step.
  double bootstrap_value = 0.0;

 private:
  std::size_t capacity_;
  std::vector<Transition> items_;
};

struct EpisodeSummary {
  std::size_t episode = 0;
  std::size_t start = 0;
  std::size_t steps = 0;
  double extrinsic_return = 0.0;
  double net_worth = 0.0;
  double shares_sold = 0.0;
};

/// Drives one environment with the current agent, resetting transparently at
/// episode ends. Episode k of a run always starts at the index drawn from
/// episode_seed(run_seed, k).
class RolloutCollector {
 public:
  RolloutCollector(const PriceSeries& series, EnvConfig env_cfg, std::uint64_t run_seed,
                   std::optional<std::size_t> episode_limit = std::nullopt);

  /// Up to n_steps stochastic transitions; stops early when the episode limit is reached.
  RolloutBuffer collect_rollout(const HierarchicalAgent& agent, std::size_t n_steps);

  const std::vector<EpisodeSummary>& completed() const noexcept { return completed_; }
  std::size_t episodes_completed() const noexcept { return completed_.size(); }
  bool finished() const noexcept { return episode_limit_ && completed_.size() >= *episode_limit_; }
  const TradingEnv& env() const noexcept { return env_; }

 private:
  void begin_episode();

  TradingEnv env_;
  std::uint64_t run_seed_;
  std::optional<std::size_t> episode_limit_;
  std::mt19937_64 rng_;
  Observation obs_{};
  double episode_return_ = 0.0;
  std::vector<EpisodeSummary> completed_;
};

struct Advantages {
  std::vector<double> raw;         // GAE before normalization
  std::vector<double> normalized;  // zero mean, unit variance (unless std < 1e-8)
  std::vector<double> returns;     // raw + value
};

/// GAE(lambda) over buffer rewards. Throws BufferNotFull unless buffer.ready().
Advantages compute_advantages(const RolloutBuffer& buffer, double last_value, const PpoConfig& cfg);

/// Splits the buffer into consecutive chunks of `chunk_size` (a trailing chunk
/// of one transition is merged into its predecessor), computes each chunk's
/// deviation vector and writes shaped rewards into Transition::reward.
/// Returns the chunk deviation vectors in order.
std::vector<DeviationVector> apply_surprise_shaping(RolloutBuffer& buffer, const SurpriseNet& net,
                                                    const SurpriseConfig& cfg, std::size_t chunk_size);

struct MinibatchLoss {
  double total = 0.0;
  double policy = 0.0;
  double value = 0.0;
  double entropy = 0.0;
  double mean_ratio = 0.0;
  double max_ratio_deviation = 0.0;
  double clip_fraction = 0.0;
  std::vector<double> gradient;  // agent flat layout; empty unless requested
};

/// Clipped-surrogate + value + entropy loss of one minibatch under the agent's
/// current parameters. `advantages` and `returns` are indexed like the buffer.
MinibatchLoss ppo_minibatch_loss(const HierarchicalAgent& agent, const RolloutBuffer& buffer,
                                 std::span<const std::size_t> indices, std::span<const double> advantages,
                                 std::span<const double> returns, const PpoConfig& cfg, bool with_gradient);

struct UpdateStats {
  double mean_ratio = 0.0;
  double clip_fraction = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double surprise_loss = 0.0;
  double energy_penalty = 0.0;
  double first_minibatch_ratio = 0.0;
  double first_minibatch_max_deviation = 0.0;
  std::size_t minibatches = 0;
};

/// Owns the optimizer state that persists across learning phases.
class PpoLearner {
 public:
  PpoLearner(PpoConfig cfg, SurpriseConfig surprise_cfg, const HierarchicalAgent& agent,
             const SurpriseNet& surprise, std::uint64_t seed);

  /// One learning phase over a ready buffer. Rewards are shaped in place when
  /// surprise is enabled. On a non-finite loss or gradient every parameter and
  /// optimizer state is restored and NonFiniteLoss is thrown.
  UpdateStats ppo_update(HierarchicalAgent& agent, SurpriseNet& surprise, RolloutBuffer& buffer);

  const PpoConfig& config() const noexcept { return cfg_; }

 private:
  void fit_surprise(SurpriseNet& surprise, const std::vector<DeviationVector>& chunk_sigmas, UpdateStats& stats);

  PpoConfig cfg_;
  SurpriseConfig surprise_cfg_;
  AdamState agent_adam_;
  AdamState surprise_adam_;
  std::mt19937_64 shuffle_rng_;
  std::optional<DeviationVector> carried_sigma_;
};

struct EpisodeLogRow {
  std::size_t episode = 0;
  double extrinsic_return = 0.0;
  double net_worth = 0.0;
  double shares_sold = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double surprise_loss = 0.0;
  double clip_fraction = 0.0;

  friend bool operator==(const EpisodeLogRow&, const EpisodeLogRow&) = default;
};

struct TrainingLog {
  std::vector<EpisodeLogRow> episodes;
  std::vector<UpdateStats> updates;
  std::vector<std::size_t> episode_starts;
};

struct TrainOptions {
  AgentConfig agent;  // allow_hold is taken from the EnvConfig
  /// Called after every learning phase with (phase index, stats).
  std::function<void(std::size_t, const UpdateStats&)> on_update;
  /// Called whenever episode rows are appended, with (episodes logged, env steps so far).
  std::function<void(std::size_t, std::size_t, const HierarchicalAgent&, const SurpriseNet&)> on_episodes;
};

struct TrainResult {
  TrainingLog log;
  HierarchicalAgent agent;
  SurpriseNet surprise;
  std::size_t steps = 0;
};

/// Alternates rollout collection and learning until `episodes` episodes have
/// completed. Deterministic in (series, configs, seed).
TrainResult train(const PriceSeries& series, const EnvConfig& env_cfg, const PpoConfig& ppo_cfg,
                  const SurpriseConfig& surprise_cfg, std::size_t episodes, std::uint64_t seed,
                  const TrainOptions& options = {});

}  // namespace trader
