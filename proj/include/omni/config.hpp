#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "omni/gat.hpp"
#include "omni/market_graph.hpp"
#include "omni/optim.hpp"
#include "omni/synthdata.hpp"
#include "omni/temporal.hpp"

namespace omni::config {

// Structural/temporal/optimizer knobs shared across modules.
struct Hyperparams {
  std::size_t d_h = 64;
  std::size_t gat_heads = 4;
  std::size_t gat_layers = 3;
  std::size_t temporal_heads = 4;
  std::size_t temporal_layers = 2;
  std::size_t ff_dim = 0;  // 0 means 4 * d_h
  std::size_t delta_t = 20;
  double dropout = 0.1;
  double leaky_slope = 0.2;
  double pca_variance = 0.95;
  double winsor_lo = 0.01;
  double winsor_hi = 0.99;
  numerics::AdamConfig adam;

  gat::GatConfig gat_config(bool use_ss, bool use_sis) const {
    return gat::GatConfig{gat_layers, gat_heads, d_h, leaky_slope, use_ss, use_sis};
  }
  temporal::TemporalConfig temporal_config() const {
    return temporal::TemporalConfig{temporal_heads, temporal_layers, d_h, ff_dim, dropout};
  }
};

struct TrainConfig {
  std::size_t batch_size = 16;
  std::size_t max_epochs = 600;
  std::size_t patience = 50;
  bool use_ss = true;   // enabled metapaths: never both false
  bool use_sis = true;
  std::uint64_t seed = 1;
};

// Removes one metapath from the enabled set; dropping the last one throws.
TrainConfig ablate(const TrainConfig& cfg, std::optional<graph::Metapath> drop);

struct BacktestConfig {
  std::size_t train_days = 126;  // 6 months at 21 trading days
  std::size_t val_days = 42;
  std::size_t test_days = 42;
  double k_frac = 0.3;
  int jobs = 1;
};

struct RunConfig {
  std::uint64_t seed = 1;
  synth::UniverseSpec data;
  Hyperparams model;
  TrainConfig train;
  BacktestConfig backtest;

  // Canonical JSON with every field spelled out; hashing input.
  std::string canonical_json() const;
  std::uint64_t hash() const;
};

// Parses a config document, rejecting unknown keys and collecting every
// violation into a single error message.
RunConfig parse_run_config(const std::string& json_text);

std::uint64_t fnv1a64(const std::string& bytes);

}  // namespace omni::config
