#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "omni/autodiff.hpp"
#include "omni/market_graph.hpp"
#include "omni/rng.hpp"
#include "omni/tensor.hpp"

namespace omni::gat {

using graph::AdjMatrix;
using graph::GraphSnapshot;
using graph::Metapath;
using graph::MetapathView;
using numerics::SplitMix64;
using numerics::Tape;
using numerics::Tensor;
using numerics::Var;

struct GatConfig {
  std::size_t n_layers = 3;
  std::size_t n_heads = 4;
  std::size_t d_h = 64;
  double leaky_slope = 0.2;
  bool use_ss = true;
  bool use_sis = true;

  std::size_t n_paths() const { return (use_ss ? 1 : 0) + (use_sis ? 1 : 0); }
};

// One attention head: shared node projection, edge projection, and the
// attention vector over [W h_i || W h_j || W_e e_ij].
struct GatHeadParams {
  Tensor weight;       // d_h x F_in
  Tensor edge_weight;  // d_h x 2
  Tensor attn;         // 1 x 3*d_h
};

struct GatLayerParams {
  std::vector<GatHeadParams> heads;
};

// Semantic attention over metapaths: w_p = softmax_p(q^T tanh(V mean_i h_i^p)).
struct MetapathAttnParams {
  Tensor transform;  // d_h x d_h
  Tensor query;      // 1 x d_h
};

struct StructuralParams {
  // layers[l][0] = SS path, layers[l][1] = SIS path. Both paths are always
  // allocated; ablation leaves the unused side untouched (zero gradients).
  std::vector<std::array<GatLayerParams, 2>> layers;
  std::vector<MetapathAttnParams> combine;  // per layer
  Tensor industry_proj;                     // F_in x F_I

  static StructuralParams init(std::size_t feat_dim, std::size_t industry_dim,
                               const GatConfig& cfg, SplitMix64& rng);
  void collect(std::vector<Tensor*>& out);
};

// Tape-bound mirrors of the parameter structs.
struct GatHeadVars {
  Var weight, edge_weight, attn;
};
struct GatLayerVars {
  std::vector<GatHeadVars> heads;
};
struct MetapathAttnVars {
  Var transform, query;
};
struct StructuralVars {
  std::vector<std::array<GatLayerVars, 2>> layers;
  std::vector<MetapathAttnVars> combine;
  Var industry_proj;
};

// Registers every structural parameter as a leaf, in collect() order.
StructuralVars bind_structural(Tape& tape, const StructuralParams& params);

// Precompiled per-day graph data: processed features plus the flattened
// adjacency/edge buffers the attention kernels consume. The SIS extension
// appends the industry nodes after the stocks so they participate in
// stock-industry message passing as regular nodes.
struct DayGraph {
  std::size_t n_stocks = 0;
  std::size_t n_industries = 0;
  Tensor stock_features;     // N x F
  Tensor industry_features;  // I x F_I
  std::vector<std::uint8_t> ss_mask;   // N*N adjacency incl. self-loops
  Tensor ss_edges;                     // (N*N) x 2
  std::vector<std::uint8_t> ext_mask;  // (N+I)^2
  Tensor ext_edges;                    // ((N+I)^2) x 2
};

DayGraph make_day_graph(const GraphSnapshot& snapshot, const Tensor& processed_stock_features,
                        const Tensor& processed_industry_features);

// Raw attention scores per head over all node pairs, LeakyReLU applied.
// h: n x F node features, edges: (n*n) x 2 flattened pair features.
std::vector<Var> attention_scores(Tape& tape, Var h, Var edges, const GatLayerVars& params,
                                  double leaky_slope);

// Masked row softmax of one head's scores over the neighborhood.
Var normalize_attention(Var scores, const std::vector<std::uint8_t>& mask);

// h'_i = (1/H) sum_k sum_j alpha^k_ij W^k h_j
Var aggregate(Tape& tape, const std::vector<Var>& alphas, Var h, const GatLayerVars& params);

// Full edge-aware multi-head layer over one adjacency.
Var gat_layer(Tape& tape, Var h, Var edges, const std::vector<std::uint8_t>& mask,
              const GatLayerVars& params, double leaky_slope);

// Softmax-weighted combination of per-path embeddings; a single path passes
// through with weight one.
Var combine_metapaths(Tape& tape, const std::vector<Var>& path_embeddings,
                      const MetapathAttnVars& params);

// Structural embedding of one day's graph (stock rows only, N x d_h).
Var structural_day(Tape& tape, const DayGraph& day, const StructuralVars& params,
                   const GatConfig& cfg);

// Per-day structural embeddings for a window of day graphs.
std::vector<Var> structural_forward(Tape& tape, const std::vector<const DayGraph*>& window,
                                    const StructuralVars& params, const GatConfig& cfg);

}  // namespace omni::gat
