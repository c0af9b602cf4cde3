#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace trader {

/// One OHLCV record. `timestamp` is epoch seconds (UTC).
struct MarketBar {
  std::int64_t timestamp = 0;
  double open = 0.0;
  double high = 0.0;
  double low = 0.0;
  double close = 0.0;
  double volume = 0.0;

  friend bool operator==(const MarketBar&, const MarketBar&) = default;
};

/// Empty string when the bar satisfies all OHLCV invariants, otherwise the reason.
std::string bar_violation(const MarketBar& bar);
inline bool is_valid(const MarketBar& bar) { return bar_violation(bar).empty(); }

/// Number of past bars in one observation window.
inline constexpr std::size_t kWindowBars = 5;

/// Immutable, strictly time-ordered bar sequence for one symbol.
///
/// The constructor validates every bar and the ordering, so any PriceSeries
/// that exists satisfies the invariants; it is safe to share across threads.
class PriceSeries {
 public:
  PriceSeries(std::string symbol, std::vector<MarketBar> bars);

  const std::string& symbol() const noexcept { return symbol_; }
  std::span<const MarketBar> bars() const noexcept { return bars_; }
  std::size_t size() const noexcept { return bars_.size(); }
  const MarketBar& operator[](std::size_t i) const { return bars_[i]; }
  const MarketBar& at(std::size_t i) const;

  double max_share_price() const noexcept { return max_share_price_; }
  /// Zero only when every bar has zero volume.
  double max_volume() const noexcept { return max_volume_; }

  /// 64-bit FNV-1a over symbol and every bar's bit pattern; identifies the data
  /// a baseline or log was computed on.
  std::uint64_t fingerprint() const noexcept { return fingerprint_; }

  friend bool operator==(const PriceSeries& a, const PriceSeries& b) {
    return a.symbol_ == b.symbol_ && a.bars_ == b.bars_;
  }

 private:
  std::string symbol_;
  std::vector<MarketBar> bars_;
  double max_share_price_ = 0.0;
  double max_volume_ = 0.0;
  std::uint64_t fingerprint_ = 0;
};

struct SyntheticConfig {
  std::size_t n_bars = 2000;
  double initial_price = 100.0;
  double drift = 0.0;        // per-bar log-return mean
  double volatility = 0.01;  // per-bar log-return std
  std::optional<std::size_t> crash_at;
  double crash_magnitude = 0.3;  // fractional drop in (0, 1)
  std::uint64_t seed = 0;
  std::int64_t start_timestamp = 1577836800;  // 2020-01-01T00:00:00Z
  std::int64_t bar_seconds = 60;
  double base_volume = 1.0e5;

  /// Throws InvalidConfig.
  void validate() const;
};

/// Reads `timestamp,open,high,low,close,volume` CSV. Rows are sorted by
/// timestamp; duplicate timestamps keep the first row in file order and are
/// reported through `warnings` (or std::clog when null).
PriceSeries load_csv(const std::filesystem::path& path, const std::string& symbol,
                     std::vector<std::string>* warnings = nullptr);

/// Writes the same schema with shortest round-trip decimal formatting, so
/// load_csv(save_csv(s)) == s bit-for-bit.
void save_csv(const PriceSeries& series, const std::filesystem::path& path);

/// Seeded geometric random walk with optional crash injection.
PriceSeries generate_synthetic(const SyntheticConfig& cfg, const std::string& symbol = "SYN");

/// Bars t-5 .. t-1. Throws IndexOutOfRange unless 5 <= t < series.size().
std::span<const MarketBar> window(const PriceSeries& series, std::size_t t);

}  // namespace trader
