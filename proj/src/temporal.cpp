#include "omni/temporal.hpp"

#include <cmath>
#include <stdexcept>

namespace omni::temporal {

namespace {

Tensor glorot(std::size_t rows, std::size_t cols, SplitMix64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Tensor t = Tensor::zeros({rows, cols});
  for (std::size_t i = 0; i < t.numel(); ++i) t.at(i) = rng.uniform(-limit, limit);
  return t;
}

}  // namespace

AlibiSpec alibi_bias(std::size_t delta_t, std::size_t n_heads) {
  if (delta_t < 1 || n_heads < 1) {
    throw std::invalid_argument("alibi_bias: delta_t and n_heads must be >= 1");
  }
  AlibiSpec spec;
  spec.delta_t = delta_t;
  spec.slopes.resize(n_heads);
  for (std::size_t h = 1; h <= n_heads; ++h) {
    spec.slopes[h - 1] =
        std::pow(2.0, -8.0 * static_cast<double>(h) / static_cast<double>(n_heads));
  }
  spec.bias = Tensor::zeros({delta_t, delta_t});
  spec.causal_mask.assign(delta_t * delta_t, 0);
  for (std::size_t i = 0; i < delta_t; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      spec.bias.at2(i, j) = -static_cast<double>(i - j);
      spec.causal_mask[i * delta_t + j] = 1;
    }
  }
  return spec;
}

TemporalParams TemporalParams::init(const TemporalConfig& cfg, SplitMix64& rng) {
  if (cfg.n_heads == 0 || cfg.d_h % cfg.n_heads != 0) {
    throw std::invalid_argument("temporal params: d_h must divide evenly across heads");
  }
  const std::size_t dk = cfg.head_dim();
  TemporalParams p;
  p.layers.resize(cfg.n_layers);
  for (TemporalLayerParams& l : p.layers) {
    l.ln1_gain = Tensor::full({1, cfg.d_h}, 1.0);
    l.ln1_offset = Tensor::zeros({1, cfg.d_h});
    for (std::size_t h = 0; h < cfg.n_heads; ++h) {
      l.wq.push_back(glorot(dk, cfg.d_h, rng));
      l.wk.push_back(glorot(dk, cfg.d_h, rng));
      l.wv.push_back(glorot(dk, cfg.d_h, rng));
    }
    l.wo = glorot(cfg.d_h, cfg.d_h, rng);
    l.ln2_gain = Tensor::full({1, cfg.d_h}, 1.0);
    l.ln2_offset = Tensor::zeros({1, cfg.d_h});
    l.ff1_w = glorot(cfg.ff(), cfg.d_h, rng);
    l.ff1_b = Tensor::zeros({1, cfg.ff()});
    l.ff2_w = glorot(cfg.d_h, cfg.ff(), rng);
    l.ff2_b = Tensor::zeros({1, cfg.d_h});
  }
  p.final_gain = Tensor::full({1, cfg.d_h}, 1.0);
  p.final_offset = Tensor::zeros({1, cfg.d_h});
  return p;
}

void TemporalParams::collect(std::vector<Tensor*>& out) {
  for (TemporalLayerParams& l : layers) {
    out.push_back(&l.ln1_gain);
    out.push_back(&l.ln1_offset);
    for (Tensor& t : l.wq) out.push_back(&t);
    for (Tensor& t : l.wk) out.push_back(&t);
    for (Tensor& t : l.wv) out.push_back(&t);
    out.push_back(&l.wo);
    out.push_back(&l.ln2_gain);
    out.push_back(&l.ln2_offset);
    out.push_back(&l.ff1_w);
    out.push_back(&l.ff1_b);
    out.push_back(&l.ff2_w);
    out.push_back(&l.ff2_b);
  }
  out.push_back(&final_gain);
  out.push_back(&final_offset);
}

TemporalVars bind_temporal(Tape& tape, const TemporalParams& params) {
  TemporalVars v;
  for (const TemporalLayerParams& l : params.layers) {
    TemporalLayerVars lv;
    lv.ln1_gain = tape.leaf(l.ln1_gain);
    lv.ln1_offset = tape.leaf(l.ln1_offset);
    for (const Tensor& t : l.wq) lv.wq.push_back(tape.leaf(t));
    for (const Tensor& t : l.wk) lv.wk.push_back(tape.leaf(t));
    for (const Tensor& t : l.wv) lv.wv.push_back(tape.leaf(t));
    lv.wo = tape.leaf(l.wo);
    lv.ln2_gain = tape.leaf(l.ln2_gain);
    lv.ln2_offset = tape.leaf(l.ln2_offset);
    lv.ff1_w = tape.leaf(l.ff1_w);
    lv.ff1_b = tape.leaf(l.ff1_b);
    lv.ff2_w = tape.leaf(l.ff2_w);
    lv.ff2_b = tape.leaf(l.ff2_b);
    v.layers.push_back(std::move(lv));
  }
  v.final_gain = tape.leaf(params.final_gain);
  v.final_offset = tape.leaf(params.final_offset);
  return v;
}

Var temporal_attention(Tape& tape, Var h_seq, const TemporalLayerVars& params,
                       const AlibiSpec& alibi) {
  const std::size_t steps = tape.value(h_seq).rows();
  if (steps != alibi.delta_t) {
    throw std::invalid_argument("temporal_attention: sequence length does not match alibi spec");
  }
  const std::size_t n_heads = params.wq.size();
  std::vector<Var> head_outputs;
  head_outputs.reserve(n_heads);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const std::size_t dk = tape.value(params.wq[h]).rows();
    Var q = numerics::matmul_nt(h_seq, params.wq[h]);  // steps x d_k
    Var k = numerics::matmul_nt(h_seq, params.wk[h]);
    Var v = numerics::matmul_nt(h_seq, params.wv[h]);
    Var scores = numerics::scale(numerics::matmul_nt(q, k),
                                 1.0 / std::sqrt(static_cast<double>(dk)));
    Tensor biased = alibi.bias;
    for (std::size_t i = 0; i < biased.numel(); ++i) biased.at(i) *= alibi.slopes[h];
    scores = numerics::add_const(scores, biased);
    Var alpha = numerics::masked_softmax(scores, alibi.causal_mask);
    head_outputs.push_back(numerics::matmul(alpha, v));
  }
  Var concat = n_heads == 1 ? head_outputs[0] : numerics::concat_cols(head_outputs);
  return numerics::matmul_nt(concat, params.wo);
}

Var transformer_encode_seq(Tape& tape, Var h_seq, const TemporalVars& params,
                           const AlibiSpec& alibi, double dropout_p, SplitMix64* dropout_rng,
                           bool training) {
  Var x = h_seq;
  const bool drop = training && dropout_p > 0.0 && dropout_rng != nullptr;
  for (const TemporalLayerVars& layer : params.layers) {
    Var normed = numerics::layer_norm(x, layer.ln1_gain, layer.ln1_offset);
    Var attn = temporal_attention(tape, normed, layer, alibi);
    if (drop) attn = numerics::dropout(attn, dropout_p, *dropout_rng, true);
    x = numerics::add(x, attn);

    Var normed2 = numerics::layer_norm(x, layer.ln2_gain, layer.ln2_offset);
    Var ff = numerics::linear(normed2, layer.ff1_w, layer.ff1_b);
    ff = numerics::gelu(ff);
    ff = numerics::linear(ff, layer.ff2_w, layer.ff2_b);
    if (drop) ff = numerics::dropout(ff, dropout_p, *dropout_rng, true);
    x = numerics::add(x, ff);
  }
  return numerics::layer_norm(x, params.final_gain, params.final_offset);
}

Var transformer_encode(Tape& tape, Var h_seq, const TemporalVars& params, const AlibiSpec& alibi,
                       double dropout_p, SplitMix64* dropout_rng, bool training) {
  Var seq = transformer_encode_seq(tape, h_seq, params, alibi, dropout_p, dropout_rng, training);
  const std::size_t steps = tape.value(seq).rows();
  return numerics::row(seq, steps - 1);
}

}  // namespace omni::temporal
