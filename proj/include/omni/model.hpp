#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "omni/config.hpp"
#include "omni/gat.hpp"
#include "omni/optim.hpp"
#include "omni/synthdata.hpp"
#include "omni/temporal.hpp"

namespace omni::model {

using config::Hyperparams;
using config::TrainConfig;
using numerics::AdamState;
using numerics::SplitMix64;
using numerics::Tape;
using numerics::Tensor;
using numerics::Var;

// Per-stock linear readout of the temporal embedding.
struct PredictionHead {
  Tensor weight;  // 1 x d_h
  Tensor bias;    // 1 x 1
};

struct ModelParams {
  gat::StructuralParams structural;
  temporal::TemporalParams temporal;
  std::vector<PredictionHead> heads;
  std::size_t feat_dim = 0;
  std::size_t industry_dim = 0;

  static ModelParams init(std::size_t n_stocks, std::size_t feat_dim, std::size_t industry_dim,
                          const Hyperparams& hp, std::uint64_t seed);

  // Stable enumeration used for gradients, Adam state and checkpoints.
  std::vector<Tensor*> tensors();
  std::size_t parameter_count();
};

struct ModelVars {
  gat::StructuralVars structural;
  temporal::TemporalVars temporal;
  std::vector<std::pair<Var, Var>> heads;  // (weight, bias)
  std::vector<Var> ordered;                // leaves in tensors() order
};

ModelVars bind_model(Tape& tape, const ModelParams& params);

// Everything one rolling window needs: precompiled day graphs plus the raw
// prices for target construction. Day graphs are indexed by absolute day.
struct WindowData {
  synth::WindowBounds bounds;
  std::vector<gat::DayGraph> days;  // days[d - bounds.train_begin]
  Tensor prices;                    // full-series days x stocks
  std::vector<double> index_level;
  std::size_t n_stocks = 0;

  const gat::DayGraph& day(std::size_t abs_day) const;
  // Window ends whose input span and next-day target stay inside the slice;
  // the test slice may take its final target from the day after the window.
  std::vector<std::size_t> train_ends(std::size_t delta_t) const;
  std::vector<std::size_t> val_ends(std::size_t delta_t) const;
  std::vector<std::size_t> test_ends() const;
};

WindowData build_window_data(const synth::MarketSeries& series,
                             const synth::ProcessedWindow& processed);

// y_it = (p_{t+1} - p_t)/p_t - (I_{t+1} - I_t)/I_t
std::vector<double> excess_return_target(const Tensor& prices,
                                         const std::vector<double>& index_level, std::size_t t);

// Mean squared error over all predictions in the batch.
Var loss(Var predictions, Var targets);

struct ForwardSpec {
  const Hyperparams* hp = nullptr;
  bool use_ss = true;
  bool use_sis = true;
  bool training = false;
  SplitMix64* dropout_rng = nullptr;
};

// Predictions for a batch of window ends, flattened end-major then stock.
// Structural embeddings of shared days are computed once per tape.
std::vector<Var> batch_forward(Tape& tape, const WindowData& data, const ModelVars& vars,
                               const ForwardSpec& spec, const std::vector<std::size_t>& ends);

// Deterministic single-end evaluation.
std::vector<double> predict(const ModelParams& params, const WindowData& data,
                            const Hyperparams& hp, bool use_ss, bool use_sis,
                            std::size_t end_day);

struct TrainResult {
  std::vector<double> train_curve;
  std::vector<double> val_curve;
  std::size_t best_epoch = 0;  // 1-based epoch of the restored parameters
  double best_val = 0.0;
  std::size_t epochs_run = 0;
};

// Mini-batch Adam with early stopping on validation loss; restores the
// best-validation parameters before returning. Throws on divergence.
TrainResult train(ModelParams& params, AdamState& state, const WindowData& data,
                  const Hyperparams& hp, const TrainConfig& cfg);

struct Checkpoint {
  std::uint64_t config_hash = 0;
  std::size_t window_index = 0;
  synth::WindowBounds bounds;
  std::size_t epoch = 0;
  std::size_t n_stocks = 0;
  std::size_t feat_dim = 0;
  std::size_t industry_dim = 0;
  bool use_ss = true;
  bool use_sis = true;
  ModelParams params;
  AdamState adam;
};

// Single-file JSON header + raw float64 payload.
void save_checkpoint(const std::string& path, Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path, const Hyperparams& hp);

}  // namespace omni::model
