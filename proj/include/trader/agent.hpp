#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "trader/env.hpp"
#include "trader/neural.hpp"

namespace trader {

inline constexpr double kMinLogStd = -5.0;
inline constexpr double kMaxLogStd = 1.0;

using BidProbs = std::array<double, kNumBids>;

struct AgentConfig {
  bool allow_hold = true;
  std::size_t hidden = 128;
  double initial_log_std = 0.0;
};

/// One draw from the hierarchy: the order head picks a quantity, then the bid
/// head picks a bid given (observation, quantity).
struct ActionSample {
  HybridAction action;
  double order_logprob = 0.0;
  double bid_logprob = 0.0;
  double value = 0.0;
  double pre_squash = 0.0;
  BidProbs bid_probs{};

  double joint_logprob() const { return order_logprob + bid_logprob; }
};

/// log density of sigmoid(u) where u ~ N(mean, exp(log_std)), evaluated at u.
double squashed_gaussian_logprob(double pre_squash, double mean, double log_std);
/// Differential entropy of the pre-squash Gaussian.
double gaussian_entropy(double log_std);
double categorical_entropy(std::span<const double> probs);

/// Zeroes Hold and renormalizes Buy/Sell when `allow_hold` is false.
/// Throws DegenerateDistribution when Buy and Sell are both zero.
BidProbs mask_hold(BidProbs probs, bool allow_hold);
/// softmax(logits) followed by mask_hold.
BidProbs bid_distribution(std::span<const double> logits, bool allow_hold);

/// Stored-action recomputation for a batch, with tapes kept for backward().
struct BatchEvaluation {
  Vector order_mean;      // pre-sigmoid mean per sample
  Vector order_logprobs;
  Vector bid_logprobs;
  Vector entropies;       // categorical + Gaussian
  Vector values;
  Matrix bid_probs;       // 3 x B, masked
  std::vector<Bid> bids;
  Vector pre_squash;
  GradientTape order_tape;
  GradientTape bid_tape;
  GradientTape critic_tape;
};

/// Loss gradients with respect to each head's outputs.
struct HeadGradients {
  Vector d_mean;      // dL / d(pre-sigmoid mean)
  double d_log_std = 0.0;
  Matrix d_logits;    // 3 x B
  Vector d_value;
};

/// Order network (quantity), bid network (bid | state, quantity) and critic.
///
/// Flat parameter layout used by parameters()/set_parameters() and by the
/// optimizer: [order net | log_std | bid net | critic].
class HierarchicalAgent {
 public:
  HierarchicalAgent(AgentConfig cfg, std::uint64_t seed);

  ActionSample sample_action(const Observation& obs, bool stochastic, std::mt19937_64& rng) const;
  double value(const Observation& obs) const;

  BatchEvaluation evaluate_actions(std::span<const Observation> obs, std::span<const double> pre_squash,
                                   std::span<const double> quantities, std::span<const Bid> bids) const;

  /// Consumes the tapes in `eval`; returns a gradient in the flat layout.
  std::vector<double> backward(BatchEvaluation& eval, const HeadGradients& grads) const;

  std::size_t parameter_count() const;
  std::vector<double> parameters() const;
  void set_parameters(std::span<const double> flat);

  const Mlp& order_net() const noexcept { return order_; }
  const Mlp& bid_net() const noexcept { return bid_; }
  const Mlp& critic() const noexcept { return critic_; }
  double log_std() const noexcept { return log_std_; }
  void set_log_std(double v);
  const AgentConfig& config() const noexcept { return cfg_; }
  bool allow_hold() const noexcept { return cfg_.allow_hold; }

  nlohmann::json to_json() const;
  static HierarchicalAgent from_json(const nlohmann::json& j);

 private:
  HierarchicalAgent() = default;

  AgentConfig cfg_;
  Mlp order_;
  Mlp bid_;
  Mlp critic_;
  double log_std_ = 0.0;
};

}  // namespace trader
