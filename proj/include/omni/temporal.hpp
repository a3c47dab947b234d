#pragma once

#include <cstdint>
#include <vector>

#include "omni/autodiff.hpp"
#include "omni/rng.hpp"
#include "omni/tensor.hpp"

namespace omni::temporal {

using numerics::SplitMix64;
using numerics::Tape;
using numerics::Tensor;
using numerics::Var;

struct TemporalConfig {
  std::size_t n_heads = 4;
  std::size_t n_layers = 2;
  std::size_t d_h = 64;
  std::size_t ff_dim = 0;  // 0 means 4 * d_h
  double dropout = 0.1;

  std::size_t head_dim() const { return d_h / n_heads; }
  std::size_t ff() const { return ff_dim == 0 ? 4 * d_h : ff_dim; }
};

// Fixed linear positional bias: slopes m_h = 2^(-8h/H) and the distance
// matrix P[i][j] = -(i-j) for keys at or before the query step.
struct AlibiSpec {
  std::vector<double> slopes;            // one per head, strictly decreasing
  Tensor bias;                           // delta_t x delta_t, lower triangular
  std::vector<std::uint8_t> causal_mask; // row-major, j <= i
  std::size_t delta_t = 0;
};

AlibiSpec alibi_bias(std::size_t delta_t, std::size_t n_heads);

struct TemporalLayerParams {
  Tensor ln1_gain, ln1_offset;
  std::vector<Tensor> wq, wk, wv;  // per head: d_k x d_h
  Tensor wo;                       // d_h x d_h
  Tensor ln2_gain, ln2_offset;
  Tensor ff1_w;  // ff x d_h
  Tensor ff1_b;  // 1 x ff
  Tensor ff2_w;  // d_h x ff
  Tensor ff2_b;  // 1 x d_h
};

struct TemporalParams {
  std::vector<TemporalLayerParams> layers;
  Tensor final_gain, final_offset;

  static TemporalParams init(const TemporalConfig& cfg, SplitMix64& rng);
  void collect(std::vector<Tensor*>& out);
};

struct TemporalLayerVars {
  Var ln1_gain, ln1_offset;
  std::vector<Var> wq, wk, wv;
  Var wo;
  Var ln2_gain, ln2_offset;
  Var ff1_w, ff1_b, ff2_w, ff2_b;
};

struct TemporalVars {
  std::vector<TemporalLayerVars> layers;
  Var final_gain, final_offset;
};

TemporalVars bind_temporal(Tape& tape, const TemporalParams& params);

// Multi-head causal self-attention with the ALiBi bias added to the raw
// scores: softmax(QK^T/sqrt(d_k) + m P + M) V, heads concatenated and
// output-projected. h_seq is delta_t x d_h.
Var temporal_attention(Tape& tape, Var h_seq, const TemporalLayerVars& params,
                       const AlibiSpec& alibi);

// Pre-norm transformer encoder returning the full encoded sequence
// (delta_t x d_h) after a final layer norm.
Var transformer_encode_seq(Tape& tape, Var h_seq, const TemporalVars& params,
                           const AlibiSpec& alibi, double dropout_p, SplitMix64* dropout_rng,
                           bool training);

// Final-step readout z_t (1 x d_h) feeding the prediction heads.
Var transformer_encode(Tape& tape, Var h_seq, const TemporalVars& params, const AlibiSpec& alibi,
                       double dropout_p, SplitMix64* dropout_rng, bool training);

}  // namespace omni::temporal
