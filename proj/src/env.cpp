#include "trader/env.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "trader/errors.hpp"

namespace trader {

std::string to_string(RewardKind kind) {
  switch (kind) {
    case RewardKind::Balance:
      return "balance";
    case RewardKind::Profit:
      return "profit";
    case RewardKind::PnL:
      return "pnl";
  }
  return "unknown";
}

RewardKind reward_kind_from_string(const std::string& name) {
  if (name == "balance") return RewardKind::Balance;
  if (name == "profit") return RewardKind::Profit;
  if (name == "pnl") return RewardKind::PnL;
  throw InvalidConfig("unknown reward kind '" + name + "' (expected balance, profit or pnl)");
}

void EnvConfig::validate() const {
  if (!(starting_balance > 0.0) || !std::isfinite(starting_balance)) {
    throw InvalidConfig("starting_balance must be positive");
  }
  if (episode_length == 0) {
    throw InvalidConfig("episode_length must be positive");
  }
  if (reward_scale && !(*reward_scale > 0.0 && std::isfinite(*reward_scale))) {
    throw InvalidConfig("reward_scale must be positive");
  }
}

double compute_reward(const PortfolioState& state, const PortfolioState& prev, RewardKind kind,
                      double starting_balance) {
  switch (kind) {
    case RewardKind::Balance:
      return state.balance;
    case RewardKind::Profit:
      return state.net_worth - starting_balance;
    case RewardKind::PnL:
      return state.net_worth - prev.net_worth;
  }
  return 0.0;
}

TradingEnv::TradingEnv(const PriceSeries& series, EnvConfig cfg) : series_(&series), cfg_(cfg) {
  cfg_.validate();
}

std::pair<std::size_t, std::size_t> TradingEnv::start_range() const {
  const std::size_t n = series_->size();
  if (n < cfg_.episode_length + kWindowBars + 1) {
    throw SeriesTooShort("series of " + std::to_string(n) + " bars cannot hold an episode of " +
                         std::to_string(cfg_.episode_length) + " steps plus a " +
                         std::to_string(kWindowBars) + "-bar window");
  }
  return {kWindowBars, n - cfg_.episode_length - 1};
}

std::size_t TradingEnv::draw_start(std::uint64_t seed) const {
  const auto [first, last] = start_range();
  std::mt19937_64 rng(seed);
  return std::uniform_int_distribution<std::size_t>(first, last)(rng);
}

Observation TradingEnv::reset(EpisodeStart start) {
  const auto [first, last] = start_range();
  std::size_t t = 0;
  if (const auto* fixed = std::get_if<std::size_t>(&start)) {
    t = *fixed;
    if (t < first || t > last) {
      throw IndexOutOfRange("episode start " + std::to_string(t) + " outside [" + std::to_string(first) +
                            ", " + std::to_string(last) + "]");
    }
  } else {
    t = draw_start(std::get<RandomStart>(start).seed);
  }

  state_ = PortfolioState{};
  state_.balance = cfg_.starting_balance;
  state_.net_worth = cfg_.starting_balance;
  state_.t = t;
  start_ = t;
  steps_ = 0;
  share_scale_ = 1.0;
  done_ = false;
  was_reset_ = true;
  return observe();
}

StepResult TradingEnv::step(HybridAction action) {
  if (!was_reset_ || done_) {
    throw SteppedAfterDone();
  }
  const double q = action.quantity;
  if (!(q >= 0.0 && q <= 1.0)) {
    throw InvalidAction("order quantity must lie in [0, 1]");
  }
  if (!cfg_.allow_hold && action.bid == Bid::Hold) {
    action = HybridAction{0.0, Bid::Sell};
  }

  const PortfolioState prev = state_;
  const double p = current_price();
  auto& s = state_;
  s.shares_sold_step = 0.0;
  switch (action.bid) {
    case Bid::Buy: {
      const double shares_bought = (s.balance / p) * action.quantity;
      const double prev_cost = s.cost_basis * s.shares_held;
      const double add_cost = shares_bought * p;
      // add_cost can exceed balance by one ulp when q == 1.
      s.balance = std::max(0.0, s.balance - add_cost);
      if (s.shares_held == 0.0 && shares_bought > 0.0) {
        s.cost_basis = p;
      } else if (s.shares_held + shares_bought > 0.0) {
        s.cost_basis = (prev_cost + add_cost) / (s.shares_held + shares_bought);
      }
      s.shares_held = s.shares_held + shares_bought;
      break;
    }
    case Bid::Sell: {
      const double shares_sold = s.shares_held * action.quantity;
      s.balance = s.balance + shares_sold * p;
      s.shares_held = s.shares_held - shares_sold;
      s.sales_value = shares_sold * p;
      s.shares_sold_step = shares_sold;
      s.total_shares_sold = s.total_shares_sold + shares_sold;
      break;
    }
    case Bid::Hold:
      break;
  }
  s.net_worth = s.balance + s.shares_held * p;

  StepResult out;
  out.reward = compute_reward(s, prev, cfg_.reward_kind, cfg_.starting_balance) * cfg_.effective_reward_scale();

  share_scale_ = std::max(share_scale_, s.shares_held);
  s.t += 1;
  steps_ += 1;
  done_ = steps_ >= cfg_.episode_length || s.net_worth <= 0.0;
  out.done = done_;
  out.next_obs = observe();
  return out;
}

Observation TradingEnv::observe() const {
  if (!was_reset_) {
    throw Error("observe() before reset()");
  }
  Observation obs{};
  const auto bars = window(*series_, state_.t);
  const double price_scale = series_->max_share_price();
  const double volume_scale = series_->max_volume();
  std::size_t k = 0;
  for (const auto& bar : bars) {
    const std::int64_t seconds_of_day = ((bar.timestamp % 86400) + 86400) % 86400;
    obs[k++] = bar.open / price_scale;
    obs[k++] = bar.high / price_scale;
    obs[k++] = bar.low / price_scale;
    obs[k++] = bar.close / price_scale;
    obs[k++] = volume_scale > 0.0 ? bar.volume / volume_scale : 0.0;
    obs[k++] = static_cast<double>(seconds_of_day / 60) / 1440.0;
  }
  const double money_scale = 2.0 * cfg_.starting_balance;
  obs[k++] = state_.balance / money_scale;
  obs[k++] = state_.net_worth / money_scale;
  obs[k++] = state_.shares_held / share_scale_;
  obs[k++] = state_.total_shares_sold / share_scale_;
  obs[k++] = state_.cost_basis / price_scale;
  obs[k++] = state_.sales_value / money_scale;
  for (auto& x : obs) {
    if (!std::isfinite(x)) {
      x = std::isnan(x) ? 0.0 : std::copysign(1.0e6, x);
    }
  }
  return obs;
}

}  // namespace trader
