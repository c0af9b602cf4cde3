#include "trader/market_data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iostream>
#include <random>

#include "trader/csv_table.hpp"
#include "trader/errors.hpp"

namespace trader {

namespace {

constexpr std::string_view kHeader = "timestamp,open,high,low,close,volume";
constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

void fnv_mix(std::uint64_t& h, std::uint64_t word) {
  for (int i = 0; i < 8; ++i) {
    h ^= (word >> (8 * i)) & 0xffU;
    h *= kFnvPrime;
  }
}

}  // namespace

std::string bar_violation(const MarketBar& bar) {
  const bool finite = std::isfinite(bar.open) && std::isfinite(bar.high) && std::isfinite(bar.low) &&
                      std::isfinite(bar.close) && std::isfinite(bar.volume);
  if (!finite) {
    return "non-finite value";
  }
  if (!(bar.open > 0.0 && bar.high > 0.0 && bar.low > 0.0 && bar.close > 0.0)) {
    return "prices must be strictly positive";
  }
  if (bar.volume < 0.0) {
    return "volume must be non-negative";
  }
  if (bar.low > bar.high) {
    return "low > high";
  }
  if (bar.low > std::min(bar.open, bar.close) || bar.high < std::max(bar.open, bar.close)) {
    return "open/close outside [low, high]";
  }
  return {};
}

PriceSeries::PriceSeries(std::string symbol, std::vector<MarketBar> bars)
    : symbol_(std::move(symbol)), bars_(std::move(bars)) {
  std::uint64_t h = kFnvOffset;
  for (char c : symbol_) {
    h ^= static_cast<unsigned char>(c);
    h *= kFnvPrime;
  }
  for (std::size_t i = 0; i < bars_.size(); ++i) {
    const auto& bar = bars_[i];
    if (auto why = bar_violation(bar); !why.empty()) {
      throw InvalidConfig("bar " + std::to_string(i) + ": " + why);
    }
    if (i > 0 && bars_[i - 1].timestamp >= bar.timestamp) {
      throw InvalidConfig("bars not strictly increasing in timestamp at index " + std::to_string(i));
    }
    max_share_price_ = std::max(max_share_price_, bar.high);
    max_volume_ = std::max(max_volume_, bar.volume);
    fnv_mix(h, static_cast<std::uint64_t>(bar.timestamp));
    for (double v : {bar.open, bar.high, bar.low, bar.close, bar.volume}) {
      fnv_mix(h, std::bit_cast<std::uint64_t>(v));
    }
  }
  fingerprint_ = h;
}

const MarketBar& PriceSeries::at(std::size_t i) const {
  if (i >= bars_.size()) {
    throw IndexOutOfRange("bar index " + std::to_string(i) + " >= " + std::to_string(bars_.size()));
  }
  return bars_[i];
}

void SyntheticConfig::validate() const {
  if (n_bars == 0) {
    throw InvalidConfig("n_bars must be positive");
  }
  if (!(initial_price > 0.0) || !std::isfinite(initial_price)) {
    throw InvalidConfig("initial_price must be positive");
  }
  if (!(volatility >= 0.0) || !std::isfinite(volatility) || !std::isfinite(drift)) {
    throw InvalidConfig("volatility must be non-negative and drift finite");
  }
  if (crash_at) {
    if (*crash_at >= n_bars) {
      throw InvalidConfig("crash_at must be < n_bars");
    }
    if (!(crash_magnitude > 0.0 && crash_magnitude < 1.0)) {
      throw InvalidConfig("crash_magnitude must lie in (0, 1)");
    }
  }
  if (bar_seconds <= 0) {
    throw InvalidConfig("bar_seconds must be positive");
  }
  if (!(base_volume > 0.0)) {
    throw InvalidConfig("base_volume must be positive");
  }
}

PriceSeries load_csv(const std::filesystem::path& path, const std::string& symbol,
                     std::vector<std::string>* warnings) {
  std::ifstream in(path);
  if (!in) {
    throw MissingFile(path.string());
  }

  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  // File order is kept until the stable sort so the first duplicate wins.
  std::vector<MarketBar> rows;
  while (std::getline(in, line)) {
    ++line_no;
    auto cells = split_csv_line(line);
    if (cells.size() == 1 && cells[0].empty()) {
      continue;
    }
    if (!have_header) {
      std::string joined;
      for (std::size_t i = 0; i < cells.size(); ++i) {
        joined += (i ? "," : "") + cells[i];
      }
      if (joined != kHeader) {
        throw MalformedRow(line_no, "header must be '" + std::string(kHeader) + "'");
      }
      have_header = true;
      continue;
    }
    if (cells.size() != 6) {
      throw MalformedRow(line_no, "expected 6 fields, got " + std::to_string(cells.size()));
    }
    MarketBar bar;
    const auto ts = parse_int(cells[0]);
    const auto o = parse_double(cells[1]);
    const auto h = parse_double(cells[2]);
    const auto l = parse_double(cells[3]);
    const auto c = parse_double(cells[4]);
    const auto v = parse_double(cells[5]);
    if (!ts || !o || !h || !l || !c || !v) {
      throw MalformedRow(line_no, "unparseable number");
    }
    bar = MarketBar{*ts, *o, *h, *l, *c, *v};
    if (auto why = bar_violation(bar); !why.empty()) {
      throw MalformedRow(line_no, why);
    }
    rows.push_back(bar);
  }
  if (!have_header) {
    throw MalformedRow(line_no == 0 ? 1 : line_no, "missing header");
  }

  std::stable_sort(rows.begin(), rows.end(),
                   [](const MarketBar& a, const MarketBar& b) { return a.timestamp < b.timestamp; });
  std::vector<MarketBar> bars;
  bars.reserve(rows.size());
  for (const auto& bar : rows) {
    if (!bars.empty() && bars.back().timestamp == bar.timestamp) {
      const auto msg = "duplicate timestamp " + std::to_string(bar.timestamp) + " in " + path.string() +
                       "; keeping first occurrence";
      if (warnings) {
        warnings->push_back(msg);
      } else {
        std::clog << "warning: " << msg << '\n';
      }
      continue;
    }
    bars.push_back(bar);
  }
  if (bars.size() < kWindowBars + 1) {
    throw EmptySeries(path.string() + ": " + std::to_string(bars.size()) +
                      " valid bars, need at least " + std::to_string(kWindowBars + 1));
  }
  return PriceSeries(symbol, std::move(bars));
}

void save_csv(const PriceSeries& series, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw Error("cannot open for writing: " + path.string());
  }
  out << kHeader << '\n';
  for (const auto& b : series.bars()) {
    out << b.timestamp << ',' << format_double(b.open) << ',' << format_double(b.high) << ','
        << format_double(b.low) << ',' << format_double(b.close) << ',' << format_double(b.volume) << '\n';
  }
  if (!out) {
    throw Error("write failed: " + path.string());
  }
}

PriceSeries generate_synthetic(const SyntheticConfig& cfg, const std::string& symbol) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<MarketBar> bars;
  bars.reserve(cfg.n_bars);
  double prev_close = cfg.initial_price;
  for (std::size_t i = 0; i < cfg.n_bars; ++i) {
    // Fixed draw order per bar: return, wick noise, volume.
    const double z = normal(rng);
    const double wick = std::abs(cfg.volatility * normal(rng));
    const double vol_noise = normal(rng);

    MarketBar bar;
    bar.timestamp = cfg.start_timestamp + static_cast<std::int64_t>(i) * cfg.bar_seconds;
    bar.open = prev_close;
    bar.close = prev_close * std::exp(cfg.drift + cfg.volatility * z);
    if (cfg.crash_at && *cfg.crash_at == i) {
      bar.close *= (1.0 - cfg.crash_magnitude);
    }
    bar.high = std::max(bar.open, bar.close) * (1.0 + wick);
    bar.low = std::min(bar.open, bar.close) * (1.0 - std::min(wick, 0.5));
    bar.volume = cfg.base_volume * std::exp(0.25 * vol_noise);
    bars.push_back(bar);
    prev_close = bar.close;
  }
  return PriceSeries(symbol, std::move(bars));
}

std::span<const MarketBar> window(const PriceSeries& series, std::size_t t) {
  if (t < kWindowBars || t >= series.size()) {
    throw IndexOutOfRange("window index " + std::to_string(t) + " outside [5, " +
                          std::to_string(series.size()) + ")");
  }
  return series.bars().subspan(t - kWindowBars, kWindowBars);
}

}  // namespace trader
