#include "trader/surprise.hpp"

#include <algorithm>
#include <cmath>

#include "trader/errors.hpp"

namespace trader {

std::string to_string(IntrinsicSign sign) {
  return sign == IntrinsicSign::Add ? "add" : "subtract";
}

IntrinsicSign intrinsic_sign_from_string(const std::string& name) {
  if (name == "add") return IntrinsicSign::Add;
  if (name == "subtract") return IntrinsicSign::Subtract;
  throw InvalidConfig("unknown intrinsic sign '" + name + "' (expected add or subtract)");
}

void SurpriseConfig::validate() const {
  if (enabled && !(beta > 0.0)) {
    throw InvalidConfig("surprise beta must be positive when shaping is enabled");
  }
  if (!(beta >= 0.0) || !(penalty_coeff >= 0.0)) {
    throw InvalidConfig("surprise beta and penalty_coeff must be non-negative");
  }
}

DeviationVector batch_deviations(std::span<const Observation> states, std::span<const Observation> next_states) {
  if (states.size() != next_states.size()) {
    throw ShapeMismatch("batch_deviations: states and next_states differ in length");
  }
  if (states.size() < 2) {
    throw BatchTooSmall("batch_deviations needs at least 2 transitions");
  }
  const double n = static_cast<double>(states.size());
  DeviationVector sigma(kObsDim, 0.0);
  for (std::size_t d = 0; d < kObsDim; ++d) {
    double mean = 0.0;
    for (std::size_t i = 0; i < states.size(); ++i) mean += next_states[i][d] - states[i][d];
    mean /= n;
    double var = 0.0;
    for (std::size_t i = 0; i < states.size(); ++i) {
      const double e = (next_states[i][d] - states[i][d]) - mean;
      var += e * e;
    }
    sigma[d] = std::sqrt(var / n);
  }
  return sigma;
}

double mellowmax_energy(std::span<const double> v) {
  if (v.empty()) {
    throw ShapeMismatch("mellowmax_energy of an empty vector");
  }
  const double m = *std::max_element(v.begin(), v.end());
  double sum = 0.0;
  for (double x : v) sum += std::exp(x - m);
  return m + std::log(sum);
}

SurpriseNet::SurpriseNet(std::uint64_t seed, std::size_t hidden)
    : net_({kObsDim, hidden, kObsDim}, {Activation::ReLU, Activation::Identity}) {
  net_.initialize(seed);
}

SurpriseNet::SurpriseNet(Mlp net) : net_(std::move(net)) {
  if (net_.input_size() != kObsDim || net_.output_size() != kObsDim) {
    throw ShapeMismatch("surprise net must map the observation dimension onto itself");
  }
}

double SurpriseNet::energy(std::span<const double> sigma) const {
  const Vector out = evaluate(sigma);
  return mellowmax_energy(std::span<const double>(out.data(), static_cast<std::size_t>(out.size())));
}

double shaped_reward(double r, std::span<const double> sigma, const SurpriseNet& net, const SurpriseConfig& cfg) {
  if (!cfg.enabled || cfg.beta == 0.0) {
    return r;
  }
  return r + cfg.signed_beta() * net.energy(sigma);
}

SurpriseLosses surprise_losses(std::span<const double> sigma, std::span<const double> sigma_target,
                               const SurpriseNet& net, const SurpriseConfig& cfg) {
  if (sigma.size() != kObsDim || sigma_target.size() != kObsDim) {
    throw ShapeMismatch("surprise_losses: deviation vectors must have the observation dimension");
  }
  SurpriseLosses out;
  const auto& mlp = net.net();
  auto pass = mlp.forward(sigma);
  const Vector& y = pass.output;
  const Eigen::Map<const Vector> target(sigma_target.data(), static_cast<Eigen::Index>(sigma_target.size()));
  const Vector diff = y - target;
  const double n = static_cast<double>(diff.size());
  out.regression_loss = diff.squaredNorm() / n;
  out.energy_penalty =
      cfg.penalty_coeff * mellowmax_energy(std::span<const double>(y.data(), static_cast<std::size_t>(y.size())));

  // d energy / d y = softmax(y). A tape backs exactly one backward pass, so the
  // penalty gradient gets a second forward.
  const double m = y.maxCoeff();
  Vector soft = (y.array() - m).exp().matrix();
  soft /= soft.sum();

  out.regression_grad.assign(mlp.parameter_count(), 0.0);
  out.penalty_grad.assign(mlp.parameter_count(), 0.0);
  Matrix g_reg = (2.0 / n) * diff;
  mlp.backward_batch(pass.tape, g_reg, out.regression_grad);
  auto pass2 = mlp.forward(sigma);
  Matrix g_pen = cfg.penalty_coeff * soft;
  mlp.backward_batch(pass2.tape, g_pen, out.penalty_grad);
  return out;
}

}  // namespace trader
