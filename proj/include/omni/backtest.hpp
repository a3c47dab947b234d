#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "omni/config.hpp"
#include "omni/model.hpp"
#include "omni/synthdata.hpp"

namespace omni::backtest {

using config::RunConfig;

// One rolling 6/2/2 window in day indices (half-open slices).
struct WindowTriple {
  std::size_t id = 0;
  std::size_t train_begin = 0;
  std::size_t train_end = 0;
  std::size_t val_end = 0;
  std::size_t test_end = 0;

  synth::WindowBounds bounds() const {
    return synth::WindowBounds{train_begin, train_end, val_end, test_end};
  }
};

// Maximal run of windows advancing by the test length. Each window claims
// one day beyond its test slice so the final test day keeps its next-day
// target.
std::vector<WindowTriple> schedule(std::size_t n_days, std::size_t train_len,
                                   std::size_t val_len, std::size_t test_len);

struct FlaggedValue {
  double value = 0.0;
  bool degenerate = false;  // constant input / zero variance
};

// Spearman rank correlation with average ranks for ties.
FlaggedValue ic(const std::vector<double>& pred, const std::vector<double>& truth);

// Equal-weight mean realized excess return of the top ceil(k_frac*N) names
// per day, ranked by prediction; ties broken by stock index.
std::vector<double> topk_portfolio_returns(const std::vector<std::vector<double>>& preds,
                                           const std::vector<std::vector<double>>& realized,
                                           double k_frac);

// mean / sample std (ddof = 1), not annualized
FlaggedValue ir(const std::vector<double>& daily_returns);

// geometric compounding: prod(1 + r) - 1
double cr(const std::vector<double>& daily_returns);

// Fraction of top-K names whose realized excess return is positive,
// averaged over days.
double precision_at_k(const std::vector<std::vector<double>>& preds,
                      const std::vector<std::vector<double>>& realized, double k_frac);

struct MetricRow {
  std::size_t window_id = 0;
  double ic = 0.0;
  double ir = 0.0;
  double cr = 0.0;
  double precision_at_k = 0.0;
  bool ic_degenerate = false;
  bool ir_degenerate = false;
};

// Per-day raw predictions, kept so metrics can be recomputed offline.
struct WindowPredictions {
  std::size_t window_id = 0;
  std::vector<std::size_t> days;
  std::vector<std::vector<double>> preds;     // per day, per stock
  std::vector<std::vector<double>> realized;  // per day, per stock
};

struct BacktestReport {
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  std::vector<MetricRow> rows;
  MetricRow aggregate;  // arithmetic mean across windows
};

MetricRow window_metrics(const WindowPredictions& w, double k_frac);
MetricRow aggregate_rows(const std::vector<MetricRow>& rows);

// Full rolling protocol: per window preprocess (fit on train), train,
// predict the test slice, score. Windows run independently; `jobs` bounds
// the parallelism. Deterministic for a fixed config and seed.
BacktestReport run_backtest(const synth::MarketSeries& series, const RunConfig& config,
                            std::vector<WindowPredictions>* prediction_log);

// Metric recomputation from a saved prediction log.
BacktestReport metrics_from_predictions(const std::vector<WindowPredictions>& log,
                                        double k_frac, std::uint64_t config_hash,
                                        std::uint64_t seed);

// Serialization.
std::string report_to_json(const BacktestReport& report);
BacktestReport report_from_json(const std::string& text);
std::string report_to_csv(const BacktestReport& report);
std::string predictions_to_json(const std::vector<WindowPredictions>& log,
                                std::uint64_t config_hash, std::uint64_t seed);
std::vector<WindowPredictions> predictions_from_json(const std::string& text,
                                                     std::uint64_t* config_hash,
                                                     std::uint64_t* seed);

// Ablation delta table: absolute and relative (new-old)/|old| changes.
std::string ablation_delta_json(const BacktestReport& ss_only, const BacktestReport& both);
std::string ablation_delta_csv(const BacktestReport& ss_only, const BacktestReport& both);

// Minimal bar chart of one metric across windows.
std::string report_svg(const BacktestReport& report, const std::string& metric);

}  // namespace omni::backtest
