#include "trader/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <iostream>
#include <mutex>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "trader/csv_table.hpp"
#include "trader/errors.hpp"

#ifndef TRADER_VERSION
#define TRADER_VERSION "unknown"
#endif

namespace trader {

namespace fs = std::filesystem;
using nlohmann::json;

const char* code_version() { return TRADER_VERSION; }

// --- config ----------------------------------------------------------------

RunConfig::RunConfig() {
  env.episode_length = 1000;
}

void RunConfig::validate() const {
  if (!data.csv_path) data.synthetic.validate();
  env.validate();
  ppo.validate();
  surprise.validate();
  if (episodes == 0) throw InvalidConfig("episodes must be positive");
  if (seeds.empty()) throw InvalidConfig("at least one seed is required");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw InvalidConfig("seeds must be distinct");
  }
  if (output_dir.empty()) throw InvalidConfig("output directory must be set");
  if (agent.hidden == 0) throw InvalidConfig("agent hidden width must be positive");
  if (!(agent.initial_log_std >= kMinLogStd && agent.initial_log_std <= kMaxLogStd)) {
    throw InvalidConfig("initial_log_std must lie in [-5, 1]");
  }
}

namespace {

// Reads keys out of one JSON object and rejects any it did not ask for.
class Section {
 public:
  Section(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw InvalidConfig(where_ + " must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw InvalidConfig(where_ + "." + key + ": " + e.what());
    }
  }

  template <typename T>
  void get(const char* key, std::optional<T>& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    if (j_.at(key).is_null()) {
      out.reset();
      return;
    }
    T v{};
    get(key, v);
    out = v;
  }

  bool has(const char* key) const { return j_.contains(key); }
  const json& raw(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (const auto& [k, _] : j_.items()) {
      if (!seen_.contains(k)) throw InvalidConfig("unknown key " + where_ + "." + k);
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

json optional_json(const auto& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

RunConfig run_config_from_json(const json& j, const fs::path& base_dir) {
  RunConfig cfg;
  Section top(j, "config");

  if (top.has("data")) {
    Section d(top.raw("data"), "data");
    std::string source = "synthetic";
    d.get("source", source);
    d.get("symbol", cfg.data.symbol);
    if (source == "csv") {
      std::string path;
      d.get("path", path);
      if (path.empty()) throw InvalidConfig("data.path is required for a csv source");
      fs::path p(path);
      cfg.data.csv_path = p.is_relative() && !base_dir.empty() ? base_dir / p : p;
    } else if (source == "synthetic") {
      if (d.has("synthetic")) {
        Section s(d.raw("synthetic"), "data.synthetic");
        auto& sc = cfg.data.synthetic;
        std::string preset;
        s.get("preset", preset);
        if (!preset.empty()) sc = synthetic_preset(preset, sc.seed);
        s.get("n_bars", sc.n_bars);
        s.get("initial_price", sc.initial_price);
        s.get("drift", sc.drift);
        s.get("volatility", sc.volatility);
        s.get("crash_at", sc.crash_at);
        s.get("crash_magnitude", sc.crash_magnitude);
        s.get("seed", sc.seed);
        s.get("start_timestamp", sc.start_timestamp);
        s.get("bar_seconds", sc.bar_seconds);
        s.get("base_volume", sc.base_volume);
        s.finish();
      }
    } else {
      throw InvalidConfig("data.source must be csv or synthetic, got '" + source + "'");
    }
    d.finish();
  }

  if (top.has("env")) {
    Section e(top.raw("env"), "env");
    e.get("starting_balance", cfg.env.starting_balance);
    std::string kind = to_string(cfg.env.reward_kind);
    e.get("reward_kind", kind);
    cfg.env.reward_kind = reward_kind_from_string(kind);
    e.get("allow_hold", cfg.env.allow_hold);
    e.get("episode_length", cfg.env.episode_length);
    e.get("reward_scale", cfg.env.reward_scale);
    e.finish();
  }

  if (top.has("ppo")) {
    Section p(top.raw("ppo"), "ppo");
    p.get("gamma", cfg.ppo.gamma);
    p.get("gae_lambda", cfg.ppo.gae_lambda);
    p.get("clip_epsilon", cfg.ppo.clip_epsilon);
    p.get("epochs_per_update", cfg.ppo.epochs_per_update);
    p.get("minibatch_size", cfg.ppo.minibatch_size);
    p.get("value_coeff", cfg.ppo.value_coeff);
    p.get("entropy_coeff", cfg.ppo.entropy_coeff);
    p.get("max_grad_norm", cfg.ppo.max_grad_norm);
    p.get("learning_rate", cfg.ppo.learning_rate);
    p.get("update_interval", cfg.ppo.update_interval);
    p.finish();
  }

  if (top.has("surprise")) {
    Section s(top.raw("surprise"), "surprise");
    s.get("enabled", cfg.surprise.enabled);
    s.get("beta", cfg.surprise.beta);
    s.get("penalty_coeff", cfg.surprise.penalty_coeff);
    std::string sign = to_string(cfg.surprise.sign);
    s.get("sign", sign);
    cfg.surprise.sign = intrinsic_sign_from_string(sign);
    s.finish();
  }

  if (top.has("agent")) {
    Section a(top.raw("agent"), "agent");
    a.get("hidden", cfg.agent.hidden);
    a.get("initial_log_std", cfg.agent.initial_log_std);
    a.finish();
  }

  top.get("episodes", cfg.episodes);
  top.get("seeds", cfg.seeds);
  std::string out = cfg.output_dir.string();
  top.get("output_dir", out);
  cfg.output_dir = out;
  top.get("eval_start", cfg.eval_start);
  top.get("checkpoint_every", cfg.checkpoint_every);
  top.finish();

  cfg.agent.allow_hold = cfg.env.allow_hold;
  cfg.validate();
  return cfg;
}

json run_config_to_json(const RunConfig& cfg) {
  json data;
  data["symbol"] = cfg.data.symbol;
  if (cfg.data.csv_path) {
    data["source"] = "csv";
    data["path"] = cfg.data.csv_path->string();
  } else {
    const auto& s = cfg.data.synthetic;
    data["source"] = "synthetic";
    data["synthetic"] = {{"n_bars", s.n_bars},
                         {"initial_price", s.initial_price},
                         {"drift", s.drift},
                         {"volatility", s.volatility},
                         {"crash_at", optional_json(s.crash_at)},
                         {"crash_magnitude", s.crash_magnitude},
                         {"seed", s.seed},
                         {"start_timestamp", s.start_timestamp},
                         {"bar_seconds", s.bar_seconds},
                         {"base_volume", s.base_volume}};
  }
  json j;
  j["data"] = data;
  j["env"] = {{"starting_balance", cfg.env.starting_balance},
              {"reward_kind", to_string(cfg.env.reward_kind)},
              {"allow_hold", cfg.env.allow_hold},
              {"episode_length", cfg.env.episode_length},
              {"reward_scale", optional_json(cfg.env.reward_scale)}};
  j["ppo"] = {{"gamma", cfg.ppo.gamma},
              {"gae_lambda", cfg.ppo.gae_lambda},
              {"clip_epsilon", cfg.ppo.clip_epsilon},
              {"epochs_per_update", cfg.ppo.epochs_per_update},
              {"minibatch_size", cfg.ppo.minibatch_size},
              {"value_coeff", cfg.ppo.value_coeff},
              {"entropy_coeff", cfg.ppo.entropy_coeff},
              {"max_grad_norm", cfg.ppo.max_grad_norm},
              {"learning_rate", cfg.ppo.learning_rate},
              {"update_interval", cfg.ppo.update_interval}};
  j["surprise"] = {{"enabled", cfg.surprise.enabled},
                   {"beta", cfg.surprise.beta},
                   {"penalty_coeff", cfg.surprise.penalty_coeff},
                   {"sign", to_string(cfg.surprise.sign)}};
  j["agent"] = {{"hidden", cfg.agent.hidden}, {"initial_log_std", cfg.agent.initial_log_std}};
  j["episodes"] = cfg.episodes;
  j["seeds"] = cfg.seeds;
  j["output_dir"] = cfg.output_dir.string();
  j["eval_start"] = optional_json(cfg.eval_start);
  j["checkpoint_every"] = cfg.checkpoint_every;
  return j;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingFile(path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw InvalidConfig(path.string() + ": " + e.what());
  }
  return run_config_from_json(j, path.parent_path());
}

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex16(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

std::string config_hash(const RunConfig& cfg) {
  json j = run_config_to_json(cfg);
  j.erase("seeds");
  j.erase("output_dir");
  return hex16(fnv1a(j.dump()));
}

SyntheticConfig synthetic_preset(const std::string& name, std::uint64_t seed) {
  SyntheticConfig s;
  s.seed = seed;
  s.n_bars = 2000;
  if (name == "trend") {
    s.drift = 0.0005;
    s.volatility = 0.005;
  } else if (name == "crash") {
    s.drift = 0.0002;
    s.volatility = 0.005;
    s.crash_at = 1000;
    s.crash_magnitude = 0.3;
  } else if (name == "flat") {
    s.drift = 0.0;
    s.volatility = 0.0;
  } else {
    throw InvalidConfig("unknown synthetic preset '" + name + "' (expected trend, crash or flat)");
  }
  return s;
}

PriceSeries load_series(const DataSource& data) {
  if (data.csv_path) return load_csv(*data.csv_path, data.symbol);
  return generate_synthetic(data.synthetic, data.symbol);
}

// --- CSV artifacts ---------------------------------------------------------

namespace {

void write_text_atomically(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << text;
    if (!out.flush()) throw Error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

CsvTable read_with_header(const fs::path& path, const char* header) {
  CsvTable t = read_csv_table(path);
  std::string got;
  for (std::size_t i = 0; i < t.header.size(); ++i) got += (i ? "," : "") + t.header[i];
  if (got != header) throw MalformedRow(1, "expected header '" + std::string(header) + "'");
  return t;
}

std::uint64_t parse_u64(const std::string& s, std::size_t line) {
  const auto v = parse_int(s);
  if (!v || *v < 0) throw MalformedRow(line, "expected a non-negative integer, got '" + s + "'");
  return static_cast<std::uint64_t>(*v);
}

double parse_real(const std::string& s, std::size_t line) {
  const auto v = parse_double(s);
  if (!v) throw MalformedRow(line, "expected a number, got '" + s + "'");
  return *v;
}

}  // namespace

void save_training_log(const fs::path& path, const std::vector<EpisodeLogRow>& rows) {
  std::ostringstream out;
  out << kTrainingLogHeader << '\n';
  for (const auto& r : rows) {
    out << r.episode << ',' << format_double(r.extrinsic_return) << ',' << format_double(r.net_worth) << ','
        << format_double(r.shares_sold) << ',' << format_double(r.policy_loss) << ','
        << format_double(r.value_loss) << ',' << format_double(r.surprise_loss) << ','
        << format_double(r.clip_fraction) << '\n';
  }
  write_text_atomically(path, out.str());
}

std::vector<EpisodeLogRow> load_training_log(const fs::path& path) {
  const CsvTable t = read_with_header(path, kTrainingLogHeader);
  std::vector<EpisodeLogRow> rows;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& f = t.rows[i];
    const std::size_t line = i + 2;
    rows.push_back(EpisodeLogRow{parse_u64(f[0], line), parse_real(f[1], line), parse_real(f[2], line),
                                 parse_real(f[3], line), parse_real(f[4], line), parse_real(f[5], line),
                                 parse_real(f[6], line), parse_real(f[7], line)});
  }
  return rows;
}

void save_metrics(const fs::path& path, const std::vector<MetricRow>& rows) {
  std::ostringstream out;
  out << kMetricHeader << '\n';
  for (const auto& r : rows) {
    out << r.run_id << ',' << r.seed << ',' << r.episode << ',' << format_double(r.normalized_return) << ','
        << format_double(r.shares_sold_normalized) << ',' << format_double(r.net_worth) << '\n';
  }
  write_text_atomically(path, out.str());
}

std::vector<MetricRow> load_metrics(const fs::path& path) {
  const CsvTable t = read_with_header(path, kMetricHeader);
  std::vector<MetricRow> rows;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& f = t.rows[i];
    const std::size_t line = i + 2;
    rows.push_back(MetricRow{f[0], parse_u64(f[1], line), parse_u64(f[2], line), parse_real(f[3], line),
                             parse_real(f[4], line), parse_real(f[5], line)});
  }
  return rows;
}

void save_ablation(const fs::path& path, const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  out << kAblationHeader << '\n';
  for (const auto& r : rows) {
    out << r.variant << ',' << r.seed << ',' << r.episode << ',' << format_double(r.normalized_return) << ','
        << format_double(r.shares_sold) << '\n';
  }
  write_text_atomically(path, out.str());
}

std::vector<AblationRow> load_ablation(const fs::path& path) {
  const CsvTable t = read_with_header(path, kAblationHeader);
  std::vector<AblationRow> rows;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& f = t.rows[i];
    const std::size_t line = i + 2;
    rows.push_back(AblationRow{f[0], parse_u64(f[1], line), parse_u64(f[2], line), parse_real(f[3], line),
                               parse_real(f[4], line)});
  }
  return rows;
}

// --- baselines and metrics -------------------------------------------------

const BaselineWindow* BaselineResult::find(std::size_t start) const {
  for (const auto& w : windows) {
    if (w.start == start) return &w;
  }
  return nullptr;
}

namespace {

template <typename Policy>
PolicyOutcome replay(TradingEnv& env, std::size_t start, Policy&& policy) {
  const double sb = env.config().starting_balance;
  Observation obs = env.reset(start);
  PolicyOutcome out;
  while (!env.done()) {
    obs = env.step(policy(obs)).next_obs;
    out.max_profit = std::max(out.max_profit, env.state().net_worth - sb);
  }
  out.final_net_worth = env.state().net_worth;
  out.final_profit = out.final_net_worth - sb;
  out.shares_sold = env.state().total_shares_sold;
  return out;
}

}  // namespace

BaselineResult run_baseline(const PriceSeries& series, const EnvConfig& env_cfg, std::span<const std::size_t> starts,
                            std::uint64_t random_seed) {
  BaselineResult result;
  result.series_fingerprint = series.fingerprint();
  result.starting_balance = env_cfg.starting_balance;
  result.episode_length = env_cfg.episode_length;
  TradingEnv env(series, env_cfg);
  const HybridAction idle = env_cfg.allow_hold ? HybridAction{0.0, Bid::Hold} : HybridAction{0.0, Bid::Sell};

  for (std::size_t start : starts) {
    if (result.find(start)) continue;
    BaselineWindow w;
    w.start = start;
    w.start_price = series.at(start).close;

    bool first = true;
    w.buy_and_hold = replay(env, start, [&](const Observation&) {
      if (!first) return idle;
      first = false;
      return HybridAction{1.0, Bid::Buy};
    });

    std::mt19937_64 rng(derive_seed(random_seed, start));
    std::uniform_real_distribution<double> qty(0.0, 1.0);
    std::uniform_int_distribution<int> bid(0, env_cfg.allow_hold ? 2 : 1);
    w.random_policy = replay(env, start, [&](const Observation&) {
      const double q = qty(rng);
      return HybridAction{q, static_cast<Bid>(bid(rng))};
    });
    result.windows.push_back(w);
  }
  return result;
}

std::vector<std::size_t> episode_starts(const PriceSeries& series, const EnvConfig& env_cfg, std::uint64_t seed,
                                        std::size_t episodes) {
  TradingEnv env(series, env_cfg);
  std::vector<std::size_t> starts;
  starts.reserve(episodes);
  for (std::size_t k = 0; k < episodes; ++k) starts.push_back(env.draw_start(episode_seed(seed, k)));
  return starts;
}

double shares_sold_normalized(double shares_sold, const BaselineWindow& window, double starting_balance) {
  return shares_sold * window.start_price / starting_balance;
}

std::vector<MetricRow> normalize_returns(const std::vector<EpisodeLogRow>& log, std::span<const std::size_t> starts,
                                         const BaselineResult& baseline, std::uint64_t series_fingerprint,
                                         const std::string& run_id, std::uint64_t seed) {
  if (baseline.series_fingerprint != series_fingerprint) {
    throw SeriesMismatch("baseline was computed on a different price series");
  }
  if (starts.size() != log.size()) {
    throw SeriesMismatch("log has " + std::to_string(log.size()) + " episodes but " + std::to_string(starts.size()) +
                         " episode windows were given");
  }
  std::vector<MetricRow> rows;
  rows.reserve(log.size());
  for (std::size_t i = 0; i < log.size(); ++i) {
    const BaselineWindow* w = baseline.find(starts[i]);
    if (!w) throw SeriesMismatch("baseline has no window starting at " + std::to_string(starts[i]));
    const double denom = std::max(kNormalizationFloor, w->buy_and_hold.max_profit);
    MetricRow r;
    r.run_id = run_id;
    r.seed = seed;
    r.episode = log[i].episode;
    r.normalized_return = (log[i].net_worth - baseline.starting_balance) / denom;
    r.shares_sold_normalized = shares_sold_normalized(log[i].shares_sold, *w, baseline.starting_balance);
    r.net_worth = log[i].net_worth;
    rows.push_back(r);
  }
  return rows;
}

PolicyOutcome evaluate_policy(const HierarchicalAgent& agent, const PriceSeries& series, const EnvConfig& env_cfg,
                              std::size_t start) {
  TradingEnv env(series, env_cfg);
  std::mt19937_64 unused(0);
  return replay(env, start, [&](const Observation& obs) { return agent.sample_action(obs, false, unused).action; });
}

// --- checkpoints -----------------------------------------------------------

void save_checkpoint(const fs::path& path, const HierarchicalAgent& agent, const SurpriseNet& surprise,
                     const std::string& hash, std::size_t training_step, std::size_t episodes) {
  json j;
  j["format"] = "trader-checkpoint-1";
  j["agent"] = agent.to_json();
  j["surprise"] = surprise.net().to_json();
  j["log_std"] = agent.log_std();
  j["config_hash"] = hash;
  j["training_step"] = training_step;
  j["episodes"] = episodes;
  write_text_atomically(path, j.dump());
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingFile(path.string());
  try {
    const json j = json::parse(in);
    return Checkpoint{HierarchicalAgent::from_json(j.at("agent")), SurpriseNet(Mlp::from_json(j.at("surprise"))),
                      j.at("config_hash").get<std::string>(), j.at("training_step").get<std::size_t>(),
                      j.at("episodes").get<std::size_t>()};
  } catch (const json::exception& e) {
    throw Error("corrupt checkpoint " + path.string() + ": " + e.what());
  }
}

// --- runs ------------------------------------------------------------------

std::size_t worker_threads() {
  if (const char* env = std::getenv("TRADER_THREADS")) {
    const auto v = parse_int(env);
    if (!v || *v < 1) throw InvalidConfig("TRADER_THREADS must be a positive integer");
    return static_cast<std::size_t>(*v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(n, 1));
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        next.store(n);
      }
    }
  };
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  if (first_error) std::rethrow_exception(first_error);
}

void ensure_writable_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw Error("output directory " + dir.string() + " cannot be created: " + ec.message());
  }
  const fs::path probe = dir / ".write_probe";
  {
    std::ofstream out(probe);
    if (!out || !(out << "ok") || !out.flush()) {
      throw Error("output directory " + dir.string() + " is not writable");
    }
  }
  fs::remove(probe, ec);
}

fs::path training_log_path(const fs::path& dir, std::uint64_t seed) {
  return dir / ("train_seed" + std::to_string(seed) + ".csv");
}

fs::path checkpoint_path(const fs::path& dir, std::uint64_t seed) {
  return dir / ("checkpoint_seed" + std::to_string(seed) + ".json");
}

namespace {

struct SeedRun {
  TrainResult result;
  std::vector<MetricRow> metrics;
};

SeedRun train_one(const RunConfig& cfg, const PriceSeries& series, std::uint64_t seed, const std::string& run_id,
                  const decltype(TrainOptions::on_episodes)& on_episodes) {
  TrainOptions opts;
  opts.agent = cfg.agent;
  opts.on_episodes = on_episodes;
  SeedRun run{train(series, cfg.env, cfg.ppo, cfg.surprise, cfg.episodes, seed, opts), {}};
  const auto& starts = run.result.log.episode_starts;
  const BaselineResult baseline = run_baseline(series, cfg.env, starts, derive_seed(seed, 5));
  run.metrics = normalize_returns(run.result.log.episodes, starts, baseline, series.fingerprint(), run_id, seed);
  return run;
}

void write_manifest(const fs::path& path, const RunConfig& cfg, const std::string& status, const std::string& error,
                    const json& extra) {
  json m;
  m["code_version"] = code_version();
  m["config"] = run_config_to_json(cfg);
  m["config_hash"] = config_hash(cfg);
  m["status"] = status;
  if (!error.empty()) m["error"] = error;
  for (const auto& [k, v] : extra.items()) m[k] = v;
  write_text_atomically(path, m.dump(2) + "\n");
}

}  // namespace

TrainingArtifacts run_training(const RunConfig& cfg) {
  cfg.validate();
  const fs::path dir = cfg.output_dir;
  ensure_writable_dir(dir);
  const PriceSeries series = load_series(cfg.data);
  const std::string hash = config_hash(cfg);

  TrainingArtifacts art;
  art.manifest = dir / "manifest.json";
  for (auto seed : cfg.seeds) {
    art.logs.push_back(training_log_path(dir, seed));
    art.metrics.push_back(dir / ("metrics_seed" + std::to_string(seed) + ".csv"));
    art.checkpoints.push_back(checkpoint_path(dir, seed));
  }
  std::error_code ec;
  fs::remove(dir / "FAILED", ec);

  std::vector<char> finished(cfg.seeds.size(), 0);
  try {
    parallel_for(cfg.seeds.size(), worker_threads(), [&](std::size_t i) {
      const auto seed = cfg.seeds[i];
      auto on_episodes = [&](std::size_t logged, std::size_t steps, const HierarchicalAgent& agent,
                             const SurpriseNet& surprise) {
        if (cfg.checkpoint_every > 0 && logged % cfg.checkpoint_every == 0 && logged < cfg.episodes) {
          save_checkpoint(art.checkpoints[i], agent, surprise, hash, steps, logged);
        }
      };
      SeedRun run = train_one(cfg, series, seed, "seed" + std::to_string(seed), on_episodes);
      save_training_log(art.logs[i], run.result.log.episodes);
      save_metrics(art.metrics[i], run.metrics);
      save_checkpoint(art.checkpoints[i], run.result.agent, run.result.surprise, hash, run.result.steps,
                      run.result.log.episodes.size());
      finished[i] = 1;
    });
  } catch (const std::exception& e) {
    json done = json::array();
    for (std::size_t i = 0; i < finished.size(); ++i) {
      if (finished[i]) done.push_back(cfg.seeds[i]);
    }
    write_manifest(art.manifest, cfg, "failed", e.what(), {{"completed_seeds", done}});
    std::ofstream(dir / "FAILED") << e.what() << '\n';
    throw;
  }

  json files = json::array();
  for (const auto& p : art.logs) files.push_back(p.filename().string());
  write_manifest(art.manifest, cfg, "complete", "",
                 {{"series_fingerprint", hex16(series.fingerprint())}, {"logs", files}});
  return art;
}

// --- ablations -------------------------------------------------------------

std::string to_string(AblationKind kind) {
  switch (kind) {
    case AblationKind::RewardKind:
      return "reward";
    case AblationKind::EnergyIM:
      return "energy";
    case AblationKind::HoldAction:
      return "hold";
    case AblationKind::StartingBalance:
      return "balance";
  }
  return "unknown";
}

AblationKind ablation_kind_from_string(const std::string& name) {
  for (auto k : {AblationKind::RewardKind, AblationKind::EnergyIM, AblationKind::HoldAction,
                 AblationKind::StartingBalance}) {
    if (to_string(k) == name) return k;
  }
  throw InvalidConfig("unknown ablation suite '" + name + "' (expected reward, energy, hold or balance)");
}

AblationSpec AblationSpec::standard(AblationKind kind) {
  AblationSpec spec;
  spec.kind = kind;
  switch (kind) {
    case AblationKind::RewardKind:
      for (auto rk : {RewardKind::Balance, RewardKind::Profit, RewardKind::PnL}) {
        spec.variants.push_back({to_string(rk), [rk](RunConfig& c) { c.env.reward_kind = rk; }});
      }
      break;
    case AblationKind::EnergyIM:
      spec.variants.push_back({"im_on", [](RunConfig& c) { c.surprise.enabled = true; }});
      spec.variants.push_back({"im_off", [](RunConfig& c) { c.surprise.enabled = false; }});
      break;
    case AblationKind::HoldAction:
      spec.variants.push_back({"hold_on", [](RunConfig& c) { c.env.allow_hold = c.agent.allow_hold = true; }});
      spec.variants.push_back({"hold_off", [](RunConfig& c) { c.env.allow_hold = c.agent.allow_hold = false; }});
      break;
    case AblationKind::StartingBalance:
      for (double b : {10000.0, 20000.0, 50000.0}) {
        spec.variants.push_back({std::to_string(static_cast<long>(b)), [b](RunConfig& c) { c.env.starting_balance = b; }});
      }
      break;
  }
  return spec;
}

fs::path run_ablation(const AblationSpec& spec, const RunConfig& base) {
  if (spec.variants.empty()) throw InvalidConfig("ablation grid is empty");
  base.validate();
  const std::string suite = to_string(spec.kind);
  const fs::path dir = base.output_dir / suite;
  ensure_writable_dir(dir);
  const PriceSeries series = load_series(base.data);

  struct Cell {
    std::size_t variant;
    std::uint64_t seed;
    RunConfig cfg;
  };
  std::vector<Cell> cells;
  for (std::size_t v = 0; v < spec.variants.size(); ++v) {
    RunConfig cfg = base;
    spec.variants[v].apply(cfg);
    cfg.output_dir = dir;
    cfg.validate();
    for (auto seed : base.seeds) cells.push_back({v, seed, cfg});
  }

  std::vector<std::vector<MetricRow>> metrics(cells.size());
  std::vector<std::vector<EpisodeLogRow>> logs(cells.size());
  parallel_for(cells.size(), worker_threads(), [&](std::size_t i) {
    const Cell& c = cells[i];
    const std::string name = spec.variants[c.variant].name + "_seed" + std::to_string(c.seed);
    SeedRun run = train_one(c.cfg, series, c.seed, name, nullptr);
    save_training_log(dir / (name + ".csv"), run.result.log.episodes);
    logs[i] = std::move(run.result.log.episodes);
    metrics[i] = std::move(run.metrics);
  });

  std::vector<AblationRow> rows;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    for (std::size_t k = 0; k < logs[i].size(); ++k) {
      rows.push_back(AblationRow{spec.variants[cells[i].variant].name, cells[i].seed, logs[i][k].episode,
                                 metrics[i][k].normalized_return, logs[i][k].shares_sold});
    }
  }
  const fs::path merged = base.output_dir / ("ablation_" + suite + ".csv");
  save_ablation(merged, rows);

  json variants = json::array();
  for (const auto& v : spec.variants) variants.push_back(v.name);
  write_manifest(dir / "manifest.json", base, "complete", "",
                 {{"suite", suite}, {"variants", variants}, {"series_fingerprint", hex16(series.fingerprint())}});
  return merged;
}

}  // namespace trader
