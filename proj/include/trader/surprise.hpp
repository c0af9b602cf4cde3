#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "trader/env.hpp"
#include "trader/neural.hpp"

namespace trader {

/// Per-dimension population std of (next_state - state) over a batch.
using DeviationVector = std::vector<double>;

/// Which way the energy term enters the shaped reward: `Add` adds
/// beta * energy, `Subtract` subtracts it.
enum class IntrinsicSign { Add, Subtract };

std::string to_string(IntrinsicSign sign);
/// "add" or "subtract".
IntrinsicSign intrinsic_sign_from_string(const std::string& name);

struct SurpriseConfig {
  bool enabled = false;
  double beta = 0.01;
  double penalty_coeff = 0.01;
  IntrinsicSign sign = IntrinsicSign::Add;

  double signed_beta() const { return sign == IntrinsicSign::Add ? beta : -beta; }
  void validate() const;
};

/// Throws BatchTooSmall (fewer than 2 pairs) or ShapeMismatch.
DeviationVector batch_deviations(std::span<const Observation> states, std::span<const Observation> next_states);

/// log(sum(exp(v))), evaluated as max(v) + log(sum(exp(v - max(v)))).
double mellowmax_energy(std::span<const double> v);

/// Surprise critic: deviation vector in, one surprise estimate per state dimension out.
class SurpriseNet {
 public:
  explicit SurpriseNet(std::uint64_t seed, std::size_t hidden = 128);
  explicit SurpriseNet(Mlp net);

  Vector evaluate(std::span<const double> sigma) const { return net_.predict(sigma); }
  double energy(std::span<const double> sigma) const;

  Mlp& net() noexcept { return net_; }
  const Mlp& net() const noexcept { return net_; }

 private:
  Mlp net_;
};

/// r + signed_beta * energy(sigma), or r when shaping is disabled. No gradient
/// flows through the intrinsic term.
double shaped_reward(double r, std::span<const double> sigma, const SurpriseNet& net, const SurpriseConfig& cfg);

struct SurpriseLosses {
  double regression_loss = 0.0;
  double energy_penalty = 0.0;
  /// d(regression_loss) / d(net parameters).
  std::vector<double> regression_grad;
  /// d(energy_penalty) / d(net parameters).
  std::vector<double> penalty_grad;
};

/// Regression of net(sigma) onto sigma_target (mean squared error over the
/// dimensions) and the energy penalty penalty_coeff * energy(net(sigma)).
SurpriseLosses surprise_losses(std::span<const double> sigma, std::span<const double> sigma_target,
                               const SurpriseNet& net, const SurpriseConfig& cfg);

}  // namespace trader
