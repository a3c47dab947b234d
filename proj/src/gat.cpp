#include "omni/gat.hpp"

#include <cmath>
#include <stdexcept>

namespace omni::gat {

namespace {

Tensor glorot(std::size_t rows, std::size_t cols, SplitMix64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Tensor t = Tensor::zeros({rows, cols});
  for (std::size_t i = 0; i < t.numel(); ++i) t.at(i) = rng.uniform(-limit, limit);
  return t;
}

}  // namespace

StructuralParams StructuralParams::init(std::size_t feat_dim, std::size_t industry_dim,
                                        const GatConfig& cfg, SplitMix64& rng) {
  StructuralParams p;
  p.layers.resize(cfg.n_layers);
  p.combine.resize(cfg.n_layers);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const std::size_t fin = l == 0 ? feat_dim : cfg.d_h;
    for (std::size_t path = 0; path < 2; ++path) {
      GatLayerParams& lp = p.layers[l][path];
      lp.heads.resize(cfg.n_heads);
      for (GatHeadParams& h : lp.heads) {
        h.weight = glorot(cfg.d_h, fin, rng);
        h.edge_weight = glorot(cfg.d_h, 2, rng);
        h.attn = glorot(1, 3 * cfg.d_h, rng);
      }
    }
    p.combine[l].transform = glorot(cfg.d_h, cfg.d_h, rng);
    p.combine[l].query = glorot(1, cfg.d_h, rng);
  }
  p.industry_proj = glorot(feat_dim, industry_dim, rng);
  return p;
}

void StructuralParams::collect(std::vector<Tensor*>& out) {
  for (auto& layer : layers) {
    for (auto& path : layer) {
      for (GatHeadParams& h : path.heads) {
        out.push_back(&h.weight);
        out.push_back(&h.edge_weight);
        out.push_back(&h.attn);
      }
    }
  }
  for (MetapathAttnParams& c : combine) {
    out.push_back(&c.transform);
    out.push_back(&c.query);
  }
  out.push_back(&industry_proj);
}

StructuralVars bind_structural(Tape& tape, const StructuralParams& params) {
  StructuralVars v;
  v.layers.resize(params.layers.size());
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    for (std::size_t path = 0; path < 2; ++path) {
      for (const GatHeadParams& h : params.layers[l][path].heads) {
        v.layers[l][path].heads.push_back(GatHeadVars{
            tape.leaf(h.weight), tape.leaf(h.edge_weight), tape.leaf(h.attn)});
      }
    }
  }
  for (const MetapathAttnParams& c : params.combine) {
    v.combine.push_back(MetapathAttnVars{tape.leaf(c.transform), tape.leaf(c.query)});
  }
  v.industry_proj = tape.leaf(params.industry_proj);
  return v;
}

DayGraph make_day_graph(const GraphSnapshot& snapshot, const Tensor& processed_stock_features,
                        const Tensor& processed_industry_features) {
  const std::size_t n = snapshot.n_stocks;
  const std::size_t ni = snapshot.n_industries;
  const std::size_t m = n + ni;

  DayGraph g;
  g.n_stocks = n;
  g.n_industries = ni;
  g.stock_features = processed_stock_features;
  g.industry_features = processed_industry_features;

  const MetapathView ss = compile_metapath(snapshot, Metapath::SS);
  g.ss_mask.assign(n * n, 0);
  g.ss_edges = Tensor::zeros({n * n, 2});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      g.ss_mask[i * n + j] = ss.adjacency.at(i, j) ? 1 : 0;
      g.ss_edges.at2(i * n + j, 0) = ss.edge_features.at3(i, j, 0);
      g.ss_edges.at2(i * n + j, 1) = ss.edge_features.at3(i, j, 1);
    }
  }

  const MetapathView sis = compile_metapath(snapshot, Metapath::SIS);
  g.ext_mask.assign(m * m, 0);
  g.ext_edges = Tensor::zeros({m * m, 2});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      g.ext_mask[i * m + j] = sis.adjacency.at(i, j) ? 1 : 0;
      g.ext_edges.at2(i * m + j, 0) = sis.edge_features.at3(i, j, 0);
      g.ext_edges.at2(i * m + j, 1) = sis.edge_features.at3(i, j, 1);
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t l = 0; l < ni; ++l) {
      if (!snapshot.adj_si.at(i, l)) continue;
      const std::size_t u = n + l;
      g.ext_mask[i * m + u] = 1;
      g.ext_mask[u * m + i] = 1;
      for (std::size_t c = 0; c < 2; ++c) {
        g.ext_edges.at2(i * m + u, c) = snapshot.edge_si.at3(i, l, c);
        g.ext_edges.at2(u * m + i, c) = snapshot.edge_si.at3(i, l, c);
      }
    }
  }
  for (std::size_t l = 0; l < ni; ++l) {
    const std::size_t u = n + l;
    g.ext_mask[u * m + u] = 1;
    g.ext_edges.at2(u * m + u, 0) = 1.0;
    g.ext_edges.at2(u * m + u, 1) = 1.0;
  }
  return g;
}

std::vector<Var> attention_scores(Tape& tape, Var h, Var edges, const GatLayerVars& params,
                                  double leaky_slope) {
  const std::size_t n = tape.value(h).rows();
  if (tape.value(edges).rows() != n * n || tape.value(edges).cols() != 2) {
    throw std::invalid_argument("attention_scores: edges must be (n*n) x 2 for n=" +
                                std::to_string(n));
  }
  std::vector<Var> out;
  out.reserve(params.heads.size());
  for (const GatHeadVars& head : params.heads) {
    const std::size_t dh = tape.value(head.weight).rows();
    // beta_ij = a_src.(W h_i) + a_dst.(W h_j) + a_edge.(W_e e_ij)
    Var projected = numerics::matmul_nt(h, head.weight);  // n x d_h
    Var a_src = numerics::slice_cols(head.attn, 0, dh);
    Var a_dst = numerics::slice_cols(head.attn, dh, 2 * dh);
    Var a_edge = numerics::slice_cols(head.attn, 2 * dh, 3 * dh);
    Var src_term = numerics::matmul_nt(projected, a_src);  // n x 1
    Var dst_term = numerics::matmul_nt(a_dst, projected);  // 1 x n
    Var edge_proj = numerics::matmul_nt(edges, head.edge_weight);     // n^2 x d_h
    Var edge_term = numerics::matmul_nt(edge_proj, a_edge);           // n^2 x 1
    Var pairwise = numerics::reshape(edge_term, {n, n});
    Var raw = numerics::add_rowvec(numerics::add_colvec(pairwise, src_term), dst_term);
    out.push_back(numerics::leaky_relu(raw, leaky_slope));
  }
  return out;
}

Var normalize_attention(Var scores, const std::vector<std::uint8_t>& mask) {
  return numerics::masked_softmax(scores, mask);
}

Var aggregate(Tape& tape, const std::vector<Var>& alphas, Var h, const GatLayerVars& params) {
  if (alphas.size() != params.heads.size()) {
    throw std::invalid_argument("aggregate: one attention matrix per head required");
  }
  Var acc{};
  for (std::size_t k = 0; k < alphas.size(); ++k) {
    Var projected = numerics::matmul_nt(h, params.heads[k].weight);  // n x d_h
    Var mixed = numerics::matmul(alphas[k], projected);
    acc = k == 0 ? mixed : numerics::add(acc, mixed);
  }
  (void)tape;
  return numerics::scale(acc, 1.0 / static_cast<double>(alphas.size()));
}

Var gat_layer(Tape& tape, Var h, Var edges, const std::vector<std::uint8_t>& mask,
              const GatLayerVars& params, double leaky_slope) {
  std::vector<Var> scores = attention_scores(tape, h, edges, params, leaky_slope);
  std::vector<Var> alphas;
  alphas.reserve(scores.size());
  for (Var s : scores) alphas.push_back(normalize_attention(s, mask));
  return aggregate(tape, alphas, h, params);
}

Var combine_metapaths(Tape& tape, const std::vector<Var>& path_embeddings,
                      const MetapathAttnVars& params) {
  if (path_embeddings.empty()) {
    throw std::invalid_argument("combine_metapaths: no metapath embeddings");
  }
  if (path_embeddings.size() == 1) return path_embeddings[0];

  std::vector<Var> scores;
  scores.reserve(path_embeddings.size());
  for (Var emb : path_embeddings) {
    Var mean_node = numerics::col_mean(emb);                               // 1 x d_h
    Var hidden = numerics::tanh_op(numerics::matmul_nt(mean_node, params.transform));
    scores.push_back(numerics::matmul_nt(hidden, params.query));           // 1 x 1
  }
  Var score_row = numerics::concat_cols(scores);
  Var weights = numerics::masked_softmax(
      score_row, std::vector<std::uint8_t>(path_embeddings.size(), 1));
  Var acc{};
  for (std::size_t p = 0; p < path_embeddings.size(); ++p) {
    Var weighted = numerics::mul_scalar_var(path_embeddings[p],
                                            numerics::element(weights, 0, p));
    acc = p == 0 ? weighted : numerics::add(acc, weighted);
  }
  (void)tape;
  return acc;
}

Var structural_day(Tape& tape, const DayGraph& day, const StructuralVars& params,
                   const GatConfig& cfg) {
  if (!cfg.use_ss && !cfg.use_sis) {
    throw std::invalid_argument("structural_day: at least one metapath must be enabled");
  }
  const std::size_t n = day.n_stocks;

  Var h = tape.constant(day.stock_features);
  Var ss_edges = cfg.use_ss ? tape.constant(day.ss_edges) : Var{};
  Var ext_edges = cfg.use_sis ? tape.constant(day.ext_edges) : Var{};
  Var industry{};
  if (cfg.use_sis) {
    // project industry features into the stock feature space once
    industry = numerics::matmul_nt(tape.constant(day.industry_features), params.industry_proj);
  }

  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    std::vector<Var> paths;
    Var industry_next{};
    if (cfg.use_ss) {
      paths.push_back(gat_layer(tape, h, ss_edges, day.ss_mask, params.layers[l][0],
                                cfg.leaky_slope));
    }
    if (cfg.use_sis) {
      Var h_ext = numerics::concat_rows({h, industry});
      Var out_ext = gat_layer(tape, h_ext, ext_edges, day.ext_mask, params.layers[l][1],
                              cfg.leaky_slope);
      paths.push_back(numerics::slice_rows(out_ext, 0, n));
      industry_next = numerics::slice_rows(out_ext, n, n + day.n_industries);
    }
    Var combined = combine_metapaths(tape, paths, params.combine[l]);
    if (l + 1 < cfg.n_layers) {
      h = numerics::leaky_relu(combined, cfg.leaky_slope);
      if (cfg.use_sis) industry = numerics::leaky_relu(industry_next, cfg.leaky_slope);
    } else {
      h = combined;  // no output nonlinearity on the final layer
    }
  }
  return h;
}

std::vector<Var> structural_forward(Tape& tape, const std::vector<const DayGraph*>& window,
                                    const StructuralVars& params, const GatConfig& cfg) {
  std::vector<Var> out;
  out.reserve(window.size());
  for (const DayGraph* day : window) {
    out.push_back(structural_day(tape, *day, params, cfg));
  }
  return out;
}

}  // namespace omni::gat
