#pragma once

#include <cstdint>
#include <vector>

#include "omni/market_graph.hpp"
#include "omni/pca.hpp"
#include "omni/tensor.hpp"

namespace omni::synth {

using graph::GicsCode;
using graph::HolderTable;
using graph::SnapshotInputs;
using numerics::PcaModel;
using numerics::Tensor;

// Optional high-volatility regime: the industry factor's volatility is
// multiplied by `scale` for days in [start, start+length).
struct ShockSpec {
  int start = -1;
  int length = 0;
  double scale = 1.0;
};

struct UniverseSpec {
  std::size_t n_stocks = 10;
  std::size_t n_days = 1000;
  std::uint64_t seed = 1;
  double factor_strength = 0.8;  // in [0,1]
  std::size_t n_raw_features = 8;
  std::size_t n_holders = 20;
  ShockSpec shock;

  void validate() const;  // n_stocks >= 2, n_days >= 60, ...
};

// Number of channels on the industry node's raw feature vector.
inline constexpr std::size_t kIndustryFeatureCount = 4;

struct MarketSeries {
  std::size_t n_stocks = 0;
  std::size_t n_days = 0;
  std::size_t n_raw_features = 0;
  Tensor prices;                          // days x stocks, > 0
  std::vector<double> index_level;        // benchmark proxy, > 0
  std::vector<Tensor> raw_features;       // per day: N x F
  std::vector<Tensor> industry_features;  // per day: 1 x kIndustryFeatureCount
  std::vector<GicsCode> gics;             // static per stock
  std::vector<HolderTable> holders;       // per day
  Tensor revenues;                        // days x stocks
  Tensor esg;                             // days x stocks
};

// Seeded, bit-deterministic market generator with planted structure: stock
// log-returns mix an industry factor (heterogeneous per-stock loadings) and
// idiosyncratic noise; feature channel 0 carries a noisy copy of the next
// day's idiosyncratic move and industry channel 0 a noisy copy of the next
// day's factor.
MarketSeries generate(const UniverseSpec& spec);

// Raw day record matching the snapshot serialization schema.
SnapshotInputs day_inputs(const MarketSeries& series, std::size_t day);

// Rebuilds a series from per-day records (snapshot ingestion path).
MarketSeries series_from_day_inputs(const std::vector<SnapshotInputs>& days);

// Linear-interpolation empirical quantile of unsorted values.
double quantile(std::vector<double> values, double q);

// Clamp x to its own empirical [lo_pct, hi_pct] quantiles.
Tensor winsorize(const Tensor& column, double lo_pct, double hi_pct);

struct ColumnStats {
  double mean = 0.0;
  double stddev = 1.0;
  bool dropped = false;  // zero training variance
  double lo = 0.0;       // winsor bounds in z-space
  double hi = 0.0;
};

ColumnStats fit_column(const std::vector<double>& train_values, double lo_pct, double hi_pct);
double apply_column(const ColumnStats& s, double x);

// z-score using training statistics
std::vector<double> zscore(const std::vector<double>& values, const ColumnStats& stats);

// Contiguous half-open slices of one rolling window.
struct WindowBounds {
  std::size_t train_begin = 0;
  std::size_t train_end = 0;  // == val_begin
  std::size_t val_end = 0;    // == test_begin
  std::size_t test_end = 0;
};

struct FeaturePipeline {
  std::vector<ColumnStats> stock_cols;
  std::vector<ColumnStats> industry_cols;
  PcaModel pca;
  double esg_lo = 0.0;
  double esg_hi = 0.0;
};

// Per-day model-ready features for all days of the window, with every fit
// statistic (means, quantiles, PCA basis, governance bounds) computed on
// the training slice only.
struct ProcessedWindow {
  WindowBounds bounds;
  FeaturePipeline pipeline;
  std::vector<Tensor> stock_features;     // day (train_begin + i): N x F_pca
  std::vector<Tensor> industry_features;  // 1 x F_I_kept
};

ProcessedWindow preprocess_window(const MarketSeries& series, const WindowBounds& bounds,
                                  double variance_target, double lo_pct, double hi_pct);

}  // namespace omni::synth
