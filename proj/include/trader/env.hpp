#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>

#include "trader/market_data.hpp"

namespace trader {

inline constexpr std::size_t kBarFeatures = 6;      // open, high, low, close, volume, minute-of-day
inline constexpr std::size_t kAccountFeatures = 6;  // balance, net_worth, shares_held, shares_sold, cost_basis, sales_value
inline constexpr std::size_t kObsDim = kWindowBars * kBarFeatures + kAccountFeatures;
static_assert(kObsDim == 36);

using Observation = std::array<double, kObsDim>;

enum class Bid : int { Buy = 0, Sell = 1, Hold = 2 };
inline constexpr std::size_t kNumBids = 3;

/// Order fraction in [0, 1] paired with the bid it applies to.
struct HybridAction {
  double quantity = 0.0;
  Bid bid = Bid::Hold;
};

enum class RewardKind { Balance, Profit, PnL };

std::string to_string(RewardKind kind);
RewardKind reward_kind_from_string(const std::string& name);

struct EnvConfig {
  double starting_balance = 10000.0;
  RewardKind reward_kind = RewardKind::Balance;
  bool allow_hold = true;
  std::size_t episode_length = 10000;
  /// Defaults to 1 / starting_balance.
  std::optional<double> reward_scale;

  double effective_reward_scale() const { return reward_scale.value_or(1.0 / starting_balance); }
  void validate() const;
};

struct PortfolioState {
  double balance = 0.0;
  double net_worth = 0.0;
  double shares_held = 0.0;
  double shares_sold_step = 0.0;
  double total_shares_sold = 0.0;
  double cost_basis = 0.0;
  double sales_value = 0.0;
  std::size_t t = 0;

  friend bool operator==(const PortfolioState&, const PortfolioState&) = default;
};

/// Reward before reward_scale is applied.
double compute_reward(const PortfolioState& state, const PortfolioState& prev, RewardKind kind,
                      double starting_balance);

struct RandomStart {
  std::uint64_t seed = 0;
};
using EpisodeStart = std::variant<std::size_t, RandomStart>;

struct StepResult {
  double reward = 0.0;
  Observation next_obs{};
  bool done = false;
};

/// Single-symbol market simulator: RESET / OBSERVATION / STEP over a shared,
/// immutable PriceSeries. Trades execute at the close of the current bar; the
/// observation at bar t shows bars t-5 .. t-1.
class TradingEnv {
 public:
  TradingEnv(const PriceSeries& series, EnvConfig cfg);

  Observation reset(EpisodeStart start);
  StepResult step(HybridAction action);
  Observation observe() const;

  const PortfolioState& state() const noexcept { return state_; }
  const EnvConfig& config() const noexcept { return cfg_; }
  const PriceSeries& series() const noexcept { return *series_; }
  bool done() const noexcept { return done_; }
  std::size_t start_index() const noexcept { return start_; }
  std::size_t steps_taken() const noexcept { return steps_; }
  double current_price() const { return (*series_)[state_.t].close; }

  /// Valid random-start range [first, last] for this series and episode length.
  /// Throws SeriesTooShort.
  std::pair<std::size_t, std::size_t> start_range() const;
  /// The start index reset(RandomStart{seed}) would use.
  std::size_t draw_start(std::uint64_t seed) const;

 private:
  const PriceSeries* series_;
  EnvConfig cfg_;
  PortfolioState state_;
  std::size_t start_ = 0;
  std::size_t steps_ = 0;
  double share_scale_ = 1.0;
  bool done_ = true;
  bool was_reset_ = false;
};

}  // namespace trader
