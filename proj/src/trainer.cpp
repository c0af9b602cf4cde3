#include "trader/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "trader/errors.hpp"

namespace trader {

void PpoConfig::validate() const {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw InvalidConfig("gamma must lie in (0, 1]");
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) throw InvalidConfig("gae_lambda must lie in [0, 1]");
  if (!(clip_epsilon > 0.0)) throw InvalidConfig("clip_epsilon must be positive");
  if (epochs_per_update == 0) throw InvalidConfig("epochs_per_update must be positive");
  if (update_interval == 0) throw InvalidConfig("update_interval must be positive");
  if (minibatch_size == 0 || minibatch_size > update_interval) {
    throw InvalidConfig("minibatch_size must lie in [1, update_interval]");
  }
  if (!(learning_rate > 0.0)) throw InvalidConfig("learning_rate must be positive");
  if (!(max_grad_norm > 0.0)) throw InvalidConfig("max_grad_norm must be positive");
  if (!(value_coeff >= 0.0) || !(entropy_coeff >= 0.0)) {
    throw InvalidConfig("value_coeff and entropy_coeff must be non-negative");
  }
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over (seed, stream)
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t episode_seed(std::uint64_t run_seed, std::size_t episode) {
  return derive_seed(run_seed, 1000 + static_cast<std::uint64_t>(episode));
}

// ---------------------------------------------------------------------------

RolloutBuffer::RolloutBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity_ == 0) {
    throw InvalidConfig("rollout buffer capacity must be positive");
  }
  items_.reserve(capacity_);
}

void RolloutBuffer::push(const Transition& t) {
  if (full()) {
    throw Error("rollout buffer overflow");
  }
  items_.push_back(t);
}

void RolloutBuffer::clear() {
  items_.clear();
  bootstrap_value = 0.0;
}

// ---------------------------------------------------------------------------

RolloutCollector::RolloutCollector(const PriceSeries& series, EnvConfig env_cfg, std::uint64_t run_seed,
                                   std::optional<std::size_t> episode_limit)
    : env_(series, env_cfg), run_seed_(run_seed), episode_limit_(episode_limit), rng_(derive_seed(run_seed, 3)) {
  if (!finished()) {
    begin_episode();
  }
}

void RolloutCollector::begin_episode() {
  obs_ = env_.reset(RandomStart{episode_seed(run_seed_, completed_.size())});
  episode_return_ = 0.0;
}

RolloutBuffer RolloutCollector::collect_rollout(const HierarchicalAgent& agent, std::size_t n_steps) {
  RolloutBuffer buffer(n_steps);
  while (buffer.size() < n_steps && !finished()) {
    const ActionSample s = agent.sample_action(obs_, true, rng_);
    const StepResult r = env_.step(s.action);

    Transition t;
    t.obs = obs_;
    t.action = s.action;
    t.pre_squash = s.pre_squash;
    t.order_logprob = s.order_logprob;
    t.bid_logprob = s.bid_logprob;
    t.extrinsic_reward = r.reward;
    t.reward = r.reward;
    t.value = s.value;
    t.done = r.done;
    t.next_obs = r.next_obs;
    buffer.push(t);

    episode_return_ += r.reward;
    obs_ = r.next_obs;
    if (r.done) {
      const auto& st = env_.state();
      completed_.push_back(EpisodeSummary{completed_.size(), env_.start_index(), env_.steps_taken(),
                                          episode_return_, st.net_worth, st.total_shares_sold});
      if (!finished()) {
        begin_episode();
      }
    }
  }
  buffer.bootstrap_value = (buffer.empty() || buffer.transitions().back().done) ? 0.0 : agent.value(obs_);
  return buffer;
}

// ---------------------------------------------------------------------------

Advantages compute_advantages(const RolloutBuffer& buffer, double last_value, const PpoConfig& cfg) {
  if (!buffer.ready()) {
    throw BufferNotFull("advantages need a full buffer or one ending on a terminal step (" +
                        std::to_string(buffer.size()) + "/" + std::to_string(buffer.capacity()) + ")");
  }
  const auto tr = buffer.transitions();
  const std::size_t n = tr.size();
  Advantages out;
  out.raw.assign(n, 0.0);
  out.returns.assign(n, 0.0);

  double next_value = last_value;
  double next_adv = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const double not_done = tr[i].done ? 0.0 : 1.0;
    const double delta = tr[i].reward + cfg.gamma * next_value * not_done - tr[i].value;
    next_adv = delta + cfg.gamma * cfg.gae_lambda * not_done * next_adv;
    out.raw[i] = next_adv;
    out.returns[i] = next_adv + tr[i].value;
    next_value = tr[i].value;
  }

  out.normalized = out.raw;
  const double mean = std::accumulate(out.raw.begin(), out.raw.end(), 0.0) / static_cast<double>(n);
  double var = 0.0;
  for (double a : out.raw) var += (a - mean) * (a - mean);
  const double std = std::sqrt(var / static_cast<double>(n));
  if (std >= 1e-8) {
    for (auto& a : out.normalized) a = (a - mean) / std;
  }
  return out;
}

namespace {

// [begin, end) ranges of consecutive shaping chunks.
std::vector<std::pair<std::size_t, std::size_t>> chunk_ranges(std::size_t n, std::size_t chunk) {
  std::vector<std::pair<std::size_t, std::size_t>> ranges;
  for (std::size_t b = 0; b < n; b += chunk) {
    ranges.emplace_back(b, std::min(n, b + chunk));
  }
  if (ranges.size() > 1 && ranges.back().second - ranges.back().first < 2) {
    const auto last = ranges.back();
    ranges.pop_back();
    ranges.back().second = last.second;
  }
  return ranges;
}

DeviationVector deviations_of(std::span<const Transition> tr, std::span<const std::size_t> idx) {
  std::vector<Observation> s;
  std::vector<Observation> s_next;
  s.reserve(idx.size());
  s_next.reserve(idx.size());
  for (auto i : idx) {
    s.push_back(tr[i].obs);
    s_next.push_back(tr[i].next_obs);
  }
  return batch_deviations(s, s_next);
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

std::vector<DeviationVector> apply_surprise_shaping(RolloutBuffer& buffer, const SurpriseNet& net,
                                                    const SurpriseConfig& cfg, std::size_t chunk_size) {
  auto tr = buffer.transitions();
  for (auto& t : tr) t.reward = t.extrinsic_reward;
  std::vector<DeviationVector> sigmas;
  if (!cfg.enabled || tr.size() < 2) {
    return sigmas;
  }
  for (const auto& [b, e] : chunk_ranges(tr.size(), std::max<std::size_t>(chunk_size, 2))) {
    std::vector<std::size_t> idx(e - b);
    std::iota(idx.begin(), idx.end(), b);
    auto sigma = deviations_of(tr, idx);
    for (std::size_t i = b; i < e; ++i) {
      tr[i].reward = shaped_reward(tr[i].extrinsic_reward, sigma, net, cfg);
    }
    sigmas.push_back(std::move(sigma));
  }
  return sigmas;
}

MinibatchLoss ppo_minibatch_loss(const HierarchicalAgent& agent, const RolloutBuffer& buffer,
                                 std::span<const std::size_t> indices, std::span<const double> advantages,
                                 std::span<const double> returns, const PpoConfig& cfg, bool with_gradient) {
  const auto tr = buffer.transitions();
  const std::size_t b = indices.size();
  if (b == 0 || advantages.size() != tr.size() || returns.size() != tr.size()) {
    throw ShapeMismatch("ppo_minibatch_loss: inconsistent batch");
  }
  std::vector<Observation> obs(b);
  std::vector<double> pre(b), qty(b);
  std::vector<Bid> bids(b);
  for (std::size_t k = 0; k < b; ++k) {
    const auto& t = tr[indices[k]];
    obs[k] = t.obs;
    pre[k] = t.pre_squash;
    qty[k] = t.action.quantity;
    bids[k] = t.action.bid;
  }
  BatchEvaluation ev = agent.evaluate_actions(obs, pre, qty, bids);

  const double inv_b = 1.0 / static_cast<double>(b);
  const double eps = cfg.clip_epsilon;
  const auto cols = static_cast<Eigen::Index>(b);
  MinibatchLoss out;
  HeadGradients hg;
  hg.d_mean = Vector::Zero(cols);
  hg.d_logits = Matrix::Zero(static_cast<Eigen::Index>(kNumBids), cols);
  hg.d_value = Vector::Zero(cols);
  const double var = std::exp(2.0 * agent.log_std());

  std::size_t clipped = 0;
  for (std::size_t k = 0; k < b; ++k) {
    const auto c = static_cast<Eigen::Index>(k);
    const auto& t = tr[indices[k]];
    const double adv = advantages[indices[k]];
    const double ret = returns[indices[k]];
    const double old_lp = t.order_logprob + t.bid_logprob;
    const double new_lp = ev.order_logprobs(c) + ev.bid_logprobs(c);
    const double ratio = std::exp(new_lp - old_lp);
    const double unclipped = ratio * adv;
    const double clipped_obj = std::clamp(ratio, 1.0 - eps, 1.0 + eps) * adv;
    out.policy -= std::min(unclipped, clipped_obj) * inv_b;
    out.mean_ratio += ratio * inv_b;
    out.max_ratio_deviation = std::max(out.max_ratio_deviation, std::abs(ratio - 1.0));
    if (std::abs(ratio - 1.0) > eps) ++clipped;

    const double v_err = ev.values(c) - ret;
    out.value += v_err * v_err * inv_b;
    out.entropy += ev.entropies(c) * inv_b;

    if (with_gradient) {
      // Only the unclipped branch carries gradient.
      const double g_lp = unclipped <= clipped_obj ? -unclipped * inv_b : 0.0;
      const double diff = t.pre_squash - ev.order_mean(c);
      hg.d_mean(c) = g_lp * diff / var;
      hg.d_log_std += g_lp * (diff * diff / var - 1.0);

      const auto a = static_cast<Eigen::Index>(t.action.bid);
      double h_cat = 0.0;
      for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(kNumBids); ++j) {
        const double p = ev.bid_probs(j, c);
        if (p > 0.0) h_cat -= p * std::log(p);
      }
      for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(kNumBids); ++j) {
        const double p = ev.bid_probs(j, c);
        const double d_logp = (j == a ? 1.0 : 0.0) - p;
        const double d_h = p > 0.0 ? -p * (std::log(p) + h_cat) : 0.0;
        hg.d_logits(j, c) = g_lp * d_logp - cfg.entropy_coeff * inv_b * d_h;
      }
      hg.d_value(c) = cfg.value_coeff * 2.0 * v_err * inv_b;
    }
  }
  // The Gaussian entropy term is log_std plus a constant per sample.
  hg.d_log_std -= cfg.entropy_coeff;
  out.clip_fraction = static_cast<double>(clipped) * inv_b;
  out.total = out.policy + cfg.value_coeff * out.value - cfg.entropy_coeff * out.entropy;
  if (with_gradient) {
    out.gradient = agent.backward(ev, hg);
  }
  return out;
}

// ---------------------------------------------------------------------------

PpoLearner::PpoLearner(PpoConfig cfg, SurpriseConfig surprise_cfg, const HierarchicalAgent& agent,
                       const SurpriseNet& surprise, std::uint64_t seed)
    : cfg_(cfg),
      surprise_cfg_(surprise_cfg),
      agent_adam_(agent.parameter_count(), cfg.learning_rate),
      surprise_adam_(surprise.net().parameter_count(), cfg.learning_rate),
      shuffle_rng_(seed) {
  cfg_.validate();
  surprise_cfg_.validate();
}

UpdateStats PpoLearner::ppo_update(HierarchicalAgent& agent, SurpriseNet& surprise, RolloutBuffer& buffer) {
  if (!buffer.ready()) {
    throw BufferNotFull("ppo_update on a partially filled buffer");
  }
  const auto agent_snapshot = agent.parameters();
  const auto agent_adam_snapshot = agent_adam_;
  const auto surprise_snapshot = std::vector<double>(surprise.net().parameters().begin(), surprise.net().parameters().end());
  const auto surprise_adam_snapshot = surprise_adam_;
  const auto carried_snapshot = carried_sigma_;
  const auto rng_snapshot = shuffle_rng_;
  auto fail = [&](const std::string& what) {
    agent.set_parameters(agent_snapshot);
    agent_adam_ = agent_adam_snapshot;
    surprise.net().set_parameters(surprise_snapshot);
    surprise_adam_ = surprise_adam_snapshot;
    carried_sigma_ = carried_snapshot;
    shuffle_rng_ = rng_snapshot;
    throw NonFiniteLoss(what);
  };

  const auto chunk_sigmas = apply_surprise_shaping(buffer, surprise, surprise_cfg_, cfg_.minibatch_size);
  const Advantages adv = compute_advantages(buffer, buffer.bootstrap_value, cfg_);
  const auto tr = buffer.transitions();
  const std::size_t n = tr.size();

  UpdateStats stats;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 0; epoch < cfg_.epochs_per_update; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng_);
    for (std::size_t b = 0; b < n; b += cfg_.minibatch_size) {
      const std::span<const std::size_t> idx(order.data() + b, std::min(cfg_.minibatch_size, n - b));
      MinibatchLoss loss = ppo_minibatch_loss(agent, buffer, idx, adv.normalized, adv.returns, cfg_, true);

      double penalty = 0.0;
      if (surprise_cfg_.enabled && idx.size() >= 2) {
        penalty = surprise_cfg_.penalty_coeff * surprise.energy(deviations_of(tr, idx));
      }
      const double total = loss.total + penalty;
      if (!std::isfinite(total) || !all_finite(loss.gradient)) {
        fail("non-finite PPO loss in epoch " + std::to_string(epoch));
      }

      double norm_sq = 0.0;
      for (double g : loss.gradient) norm_sq += g * g;
      const double norm = std::sqrt(norm_sq);
      if (norm > cfg_.max_grad_norm) {
        const double scale = cfg_.max_grad_norm / norm;
        for (auto& g : loss.gradient) g *= scale;
      }
      auto params = agent.parameters();
      adam_step(params, loss.gradient, agent_adam_);
      agent.set_parameters(params);
      agent.set_log_std(agent.log_std());

      if (stats.minibatches == 0) {
        stats.first_minibatch_ratio = loss.mean_ratio;
        stats.first_minibatch_max_deviation = loss.max_ratio_deviation;
      }
      ++stats.minibatches;
      stats.mean_ratio += loss.mean_ratio;
      stats.clip_fraction += loss.clip_fraction;
      stats.policy_loss += loss.policy;
      stats.value_loss += loss.value;
      stats.entropy += loss.entropy;
      stats.energy_penalty += penalty;
    }
  }
  const double m = static_cast<double>(stats.minibatches);
  stats.mean_ratio /= m;
  stats.clip_fraction /= m;
  stats.policy_loss /= m;
  stats.value_loss /= m;
  stats.entropy /= m;
  stats.energy_penalty /= m;

  if (surprise_cfg_.enabled) {
    fit_surprise(surprise, chunk_sigmas, stats);
    if (!std::isfinite(stats.surprise_loss) || !all_finite(surprise.net().parameters())) {
      fail("non-finite surprise regression loss");
    }
  }
  return stats;
}

void PpoLearner::fit_surprise(SurpriseNet& surprise, const std::vector<DeviationVector>& chunk_sigmas,
                              UpdateStats& stats) {
  // Each chunk's deviation vector is the regression target for the chunk before it.
  std::vector<const DeviationVector*> seq;
  if (carried_sigma_) seq.push_back(&*carried_sigma_);
  for (const auto& s : chunk_sigmas) seq.push_back(&s);
  if (!chunk_sigmas.empty()) carried_sigma_ = chunk_sigmas.back();
  if (seq.size() < 2) {
    return;
  }
  const double pairs = static_cast<double>(seq.size() - 1);
  std::vector<double> grad(surprise.net().parameter_count());
  for (std::size_t step = 0; step < cfg_.epochs_per_update; ++step) {
    std::fill(grad.begin(), grad.end(), 0.0);
    double loss = 0.0;
    for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
      const auto l = surprise_losses(*seq[i], *seq[i + 1], surprise, surprise_cfg_);
      loss += l.regression_loss / pairs;
      for (std::size_t k = 0; k < grad.size(); ++k) grad[k] += l.regression_grad[k] / pairs;
    }
    if (step == 0) stats.surprise_loss = loss;
    adam_step(surprise.net().parameters(), grad, surprise_adam_);
  }
}

// ---------------------------------------------------------------------------

TrainResult train(const PriceSeries& series, const EnvConfig& env_cfg, const PpoConfig& ppo_cfg,
                  const SurpriseConfig& surprise_cfg, std::size_t episodes, std::uint64_t seed,
                  const TrainOptions& options) {
  env_cfg.validate();
  ppo_cfg.validate();
  surprise_cfg.validate();

  AgentConfig agent_cfg = options.agent;
  agent_cfg.allow_hold = env_cfg.allow_hold;
  TrainResult result{TrainingLog{}, HierarchicalAgent(agent_cfg, derive_seed(seed, 1)),
                     SurpriseNet(derive_seed(seed, 2)), 0};
  PpoLearner learner(ppo_cfg, surprise_cfg, result.agent, result.surprise, derive_seed(seed, 4));
  RolloutCollector collector(series, env_cfg, seed, episodes);

  UpdateStats pending;
  std::size_t pending_count = 0;
  std::size_t logged = 0;
  while (!collector.finished()) {
    RolloutBuffer buffer = collector.collect_rollout(result.agent, ppo_cfg.update_interval);
    if (buffer.empty()) {
      break;
    }
    result.steps += buffer.size();
    const UpdateStats stats = learner.ppo_update(result.agent, result.surprise, buffer);
    result.log.updates.push_back(stats);
    if (options.on_update) {
      options.on_update(result.log.updates.size() - 1, stats);
    }
    pending.policy_loss += stats.policy_loss;
    pending.value_loss += stats.value_loss;
    pending.surprise_loss += stats.surprise_loss;
    pending.clip_fraction += stats.clip_fraction;
    ++pending_count;

    const auto& done = collector.completed();
    if (logged < done.size()) {
      const double k = static_cast<double>(pending_count);
      for (; logged < done.size(); ++logged) {
        const auto& ep = done[logged];
        result.log.episodes.push_back(EpisodeLogRow{ep.episode, ep.extrinsic_return, ep.net_worth, ep.shares_sold,
                                                    pending.policy_loss / k, pending.value_loss / k,
                                                    pending.surprise_loss / k, pending.clip_fraction / k});
        result.log.episode_starts.push_back(ep.start);
      }
      pending = UpdateStats{};
      pending_count = 0;
      if (options.on_episodes) {
        options.on_episodes(logged, result.steps, result.agent, result.surprise);
      }
    }
  }
  return result;
}

}  // namespace trader
