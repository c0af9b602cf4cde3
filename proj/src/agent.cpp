#include "trader/agent.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "trader/errors.hpp"

namespace trader {

namespace {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Stable log-probability of bid `a` under the (optionally Hold-masked) softmax.
double bid_log_prob(std::span<const double> logits, Bid a, bool allow_hold) {
  const std::size_t n = allow_hold ? kNumBids : 2;
  const auto idx = static_cast<std::size_t>(a);
  if (idx >= n) {
    return -std::numeric_limits<double>::infinity();
  }
  double m = logits[0];
  for (std::size_t i = 1; i < n; ++i) m = std::max(m, logits[i]);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += std::exp(logits[i] - m);
  return logits[idx] - m - std::log(sum);
}

std::array<std::uint64_t, 3> derive_seeds(std::uint64_t seed) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0xA6E7u};
  std::array<std::uint32_t, 6> words{};
  seq.generate(words.begin(), words.end());
  return {(std::uint64_t{words[0]} << 32) | words[1], (std::uint64_t{words[2]} << 32) | words[3],
          (std::uint64_t{words[4]} << 32) | words[5]};
}

Matrix observation_matrix(std::span<const Observation> obs, std::size_t extra_rows) {
  Matrix m(static_cast<Eigen::Index>(kObsDim + extra_rows), static_cast<Eigen::Index>(obs.size()));
  for (std::size_t c = 0; c < obs.size(); ++c) {
    for (std::size_t r = 0; r < kObsDim; ++r) {
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = obs[c][r];
    }
  }
  return m;
}

}  // namespace

double squashed_gaussian_logprob(double pre_squash, double mean, double log_std) {
  const double z = (pre_squash - mean) * std::exp(-log_std);
  const double log_normal = -0.5 * z * z - log_std - 0.5 * std::log(2.0 * std::numbers::pi);
  return log_normal + softplus(pre_squash) + softplus(-pre_squash);
}

double gaussian_entropy(double log_std) { return 0.5 * (1.0 + std::log(2.0 * std::numbers::pi)) + log_std; }

double categorical_entropy(std::span<const double> probs) {
  double h = 0.0;
  for (double p : probs) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

BidProbs mask_hold(BidProbs probs, bool allow_hold) {
  if (allow_hold) {
    return probs;
  }
  const double kept = probs[0] + probs[1];
  if (!(kept > 0.0)) {
    throw DegenerateDistribution("Buy and Sell probabilities are both zero");
  }
  return {probs[0] / kept, probs[1] / kept, 0.0};
}

BidProbs bid_distribution(std::span<const double> logits, bool allow_hold) {
  if (logits.size() != kNumBids) {
    throw ShapeMismatch("bid head must produce 3 logits");
  }
  const double m = std::max({logits[0], logits[1], logits[2]});
  BidProbs p{std::exp(logits[0] - m), std::exp(logits[1] - m), std::exp(logits[2] - m)};
  const double sum = p[0] + p[1] + p[2];
  for (auto& x : p) x /= sum;
  return mask_hold(p, allow_hold);
}

HierarchicalAgent::HierarchicalAgent(AgentConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  const std::size_t h = cfg_.hidden;
  order_ = Mlp({kObsDim, h, h, 1}, {Activation::Tanh, Activation::Tanh, Activation::Sigmoid});
  bid_ = Mlp({kObsDim + 1, h, h, kNumBids}, {Activation::Tanh, Activation::Tanh, Activation::Softmax});
  critic_ = Mlp({kObsDim, h, h, 1}, {Activation::Tanh, Activation::Tanh, Activation::Identity});
  const auto seeds = derive_seeds(seed);
  order_.initialize(seeds[0]);
  bid_.initialize(seeds[1]);
  critic_.initialize(seeds[2]);
  set_log_std(cfg_.initial_log_std);
}

void HierarchicalAgent::set_log_std(double v) { log_std_ = std::clamp(v, kMinLogStd, kMaxLogStd); }

ActionSample HierarchicalAgent::sample_action(const Observation& obs, bool stochastic,
                                              std::mt19937_64& rng) const {
  ActionSample s;
  auto order_pass = order_.forward(obs);
  const double mean = order_pass.tape.final_preactivation()(0, 0);
  double z = 0.0;
  if (stochastic) {
    z = std::normal_distribution<double>(0.0, 1.0)(rng);
  }
  s.pre_squash = mean + std::exp(log_std_) * z;
  s.action.quantity = stochastic ? sigmoid(s.pre_squash) : order_pass.output(0);
  s.order_logprob = squashed_gaussian_logprob(s.pre_squash, mean, log_std_);

  std::array<double, kObsDim + 1> bid_input{};
  std::copy(obs.begin(), obs.end(), bid_input.begin());
  bid_input[kObsDim] = s.action.quantity;
  auto bid_pass = bid_.forward(bid_input);
  const auto& logits_m = bid_pass.tape.final_preactivation();
  const std::array<double, kNumBids> logits{logits_m(0, 0), logits_m(1, 0), logits_m(2, 0)};
  s.bid_probs = bid_distribution(logits, cfg_.allow_hold);

  std::size_t choice = 0;
  if (stochastic) {
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    double acc = 0.0;
    choice = kNumBids - 1;
    for (std::size_t i = 0; i < kNumBids; ++i) {
      acc += s.bid_probs[i];
      if (u < acc && s.bid_probs[i] > 0.0) {
        choice = i;
        break;
      }
    }
    // Rounding can leave acc just below 1; never fall through to a masked Hold.
    if (s.bid_probs[choice] == 0.0) {
      choice = s.bid_probs[1] > 0.0 ? 1 : 0;
    }
  } else {
    choice = static_cast<std::size_t>(std::max_element(s.bid_probs.begin(), s.bid_probs.end()) -
                                      s.bid_probs.begin());
  }
  s.action.bid = static_cast<Bid>(choice);
  s.bid_logprob = bid_log_prob(logits, s.action.bid, cfg_.allow_hold);
  s.value = critic_.predict(obs)(0);
  return s;
}

double HierarchicalAgent::value(const Observation& obs) const { return critic_.predict(obs)(0); }

BatchEvaluation HierarchicalAgent::evaluate_actions(std::span<const Observation> obs,
                                                    std::span<const double> pre_squash,
                                                    std::span<const double> quantities,
                                                    std::span<const Bid> bids) const {
  const std::size_t n = obs.size();
  if (pre_squash.size() != n || quantities.size() != n || bids.size() != n || n == 0) {
    throw ShapeMismatch("evaluate_actions: batch components differ in length");
  }
  const auto cols = static_cast<Eigen::Index>(n);
  BatchEvaluation ev;
  Matrix x = observation_matrix(obs, 0);
  Matrix xb = observation_matrix(obs, 1);
  for (std::size_t c = 0; c < n; ++c) {
    xb(static_cast<Eigen::Index>(kObsDim), static_cast<Eigen::Index>(c)) = quantities[c];
  }

  auto order_pass = order_.forward_batch(x);
  auto bid_pass = bid_.forward_batch(xb);
  auto critic_pass = critic_.forward_batch(x);

  ev.order_mean = order_pass.tape.final_preactivation().row(0).transpose();
  ev.values = critic_pass.output.row(0).transpose();
  ev.order_logprobs.resize(cols);
  ev.bid_logprobs.resize(cols);
  ev.entropies.resize(cols);
  ev.bid_probs.resize(static_cast<Eigen::Index>(kNumBids), cols);
  ev.bids.assign(bids.begin(), bids.end());
  ev.pre_squash = Eigen::Map<const Vector>(pre_squash.data(), cols);

  const Matrix& logits = bid_pass.tape.final_preactivation();
  const double order_entropy = gaussian_entropy(log_std_);
  for (Eigen::Index c = 0; c < cols; ++c) {
    const std::array<double, kNumBids> l{logits(0, c), logits(1, c), logits(2, c)};
    const auto p = bid_distribution(l, cfg_.allow_hold);
    for (std::size_t i = 0; i < kNumBids; ++i) ev.bid_probs(static_cast<Eigen::Index>(i), c) = p[i];
    ev.order_logprobs(c) = squashed_gaussian_logprob(pre_squash[static_cast<std::size_t>(c)], ev.order_mean(c), log_std_);
    ev.bid_logprobs(c) = bid_log_prob(l, bids[static_cast<std::size_t>(c)], cfg_.allow_hold);
    ev.entropies(c) = categorical_entropy(p) + order_entropy;
  }
  ev.order_tape = std::move(order_pass.tape);
  ev.bid_tape = std::move(bid_pass.tape);
  ev.critic_tape = std::move(critic_pass.tape);
  return ev;
}

std::vector<double> HierarchicalAgent::backward(BatchEvaluation& eval, const HeadGradients& grads) const {
  const auto cols = static_cast<Eigen::Index>(eval.bids.size());
  if (grads.d_mean.size() != cols || grads.d_value.size() != cols || grads.d_logits.cols() != cols ||
      grads.d_logits.rows() != static_cast<Eigen::Index>(kNumBids)) {
    throw ShapeMismatch("head gradients do not match the evaluated batch");
  }
  std::vector<double> flat(parameter_count(), 0.0);
  std::span<double> out(flat);
  const std::size_t n_order = order_.parameter_count();
  const std::size_t n_bid = bid_.parameter_count();

  order_.backward_batch(eval.order_tape, grads.d_mean.transpose(), out.subspan(0, n_order),
                        GradientAt::FinalPreActivation);
  out[n_order] = grads.d_log_std;
  bid_.backward_batch(eval.bid_tape, grads.d_logits, out.subspan(n_order + 1, n_bid),
                      GradientAt::FinalPreActivation);
  critic_.backward_batch(eval.critic_tape, grads.d_value.transpose(), out.subspan(n_order + 1 + n_bid),
                         GradientAt::Output);
  return flat;
}

std::size_t HierarchicalAgent::parameter_count() const {
  return order_.parameter_count() + 1 + bid_.parameter_count() + critic_.parameter_count();
}

std::vector<double> HierarchicalAgent::parameters() const {
  std::vector<double> flat;
  flat.reserve(parameter_count());
  const auto o = order_.parameters();
  const auto b = bid_.parameters();
  const auto c = critic_.parameters();
  flat.insert(flat.end(), o.begin(), o.end());
  flat.push_back(log_std_);
  flat.insert(flat.end(), b.begin(), b.end());
  flat.insert(flat.end(), c.begin(), c.end());
  return flat;
}

void HierarchicalAgent::set_parameters(std::span<const double> flat) {
  if (flat.size() != parameter_count()) {
    throw ShapeMismatch("agent parameter vector has wrong length");
  }
  const std::size_t n_order = order_.parameter_count();
  const std::size_t n_bid = bid_.parameter_count();
  order_.set_parameters(flat.subspan(0, n_order));
  // Unclamped on purpose: restoring a snapshot must be bit-exact.
  log_std_ = flat[n_order];
  bid_.set_parameters(flat.subspan(n_order + 1, n_bid));
  critic_.set_parameters(flat.subspan(n_order + 1 + n_bid));
}

nlohmann::json HierarchicalAgent::to_json() const {
  nlohmann::json j;
  j["allow_hold"] = cfg_.allow_hold;
  j["hidden"] = cfg_.hidden;
  j["log_std"] = log_std_;
  j["order"] = order_.to_json();
  j["bid"] = bid_.to_json();
  j["critic"] = critic_.to_json();
  return j;
}

HierarchicalAgent HierarchicalAgent::from_json(const nlohmann::json& j) {
  HierarchicalAgent a;
  a.cfg_.allow_hold = j.at("allow_hold").get<bool>();
  a.cfg_.hidden = j.at("hidden").get<std::size_t>();
  a.order_ = Mlp::from_json(j.at("order"));
  a.bid_ = Mlp::from_json(j.at("bid"));
  a.critic_ = Mlp::from_json(j.at("critic"));
  a.log_std_ = j.at("log_std").get<double>();
  a.cfg_.initial_log_std = a.log_std_;
  if (a.order_.input_size() != kObsDim || a.order_.output_size() != 1 || a.bid_.input_size() != kObsDim + 1 ||
      a.bid_.output_size() != kNumBids || a.critic_.input_size() != kObsDim || a.critic_.output_size() != 1) {
    throw ShapeMismatch("agent checkpoint has unexpected network shapes");
  }
  return a;
}

}  // namespace trader
