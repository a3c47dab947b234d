#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "omni/gat.hpp"
#include "omni/synthdata.hpp"
#include "graph_testutil.hpp"
#include "testutil.hpp"

using namespace omni::gat;
using omni::numerics::SplitMix64;
using omni::numerics::Tape;
using omni::numerics::Tensor;
using omni::numerics::Var;
using omni::test::finite_diff_grad;
using omni::test::max_abs_diff;
using omni::test::max_rel_err;
using omni::test::permute_day;
using omni::test::random_day;
using omni::test::random_tensor;

namespace {

GatLayerParams random_layer(std::size_t heads, std::size_t dh, std::size_t fin,
                            SplitMix64& rng) {
  GatLayerParams p;
  for (std::size_t k = 0; k < heads; ++k) {
    GatHeadParams h;
    h.weight = random_tensor({dh, fin}, rng);
    h.edge_weight = random_tensor({dh, 2}, rng);
    h.attn = random_tensor({1, 3 * dh}, rng);
    p.heads.push_back(std::move(h));
  }
  return p;
}

GatLayerVars bind_layer(Tape& tape, const GatLayerParams& p) {
  GatLayerVars v;
  for (const GatHeadParams& h : p.heads) {
    v.heads.push_back(GatHeadVars{tape.leaf(h.weight), tape.leaf(h.edge_weight),
                                  tape.leaf(h.attn)});
  }
  return v;
}

// scalar oracle: beta_ij = a . [W h_i || W h_j || W_e e_ij], then LeakyReLU
double score_oracle(const GatHeadParams& head, const Tensor& h, const Tensor& edges,
                    std::size_t n, std::size_t i, std::size_t j, double slope) {
  const std::size_t dh = head.weight.rows();
  const std::size_t fin = head.weight.cols();
  std::vector<double> cat(3 * dh, 0.0);
  for (std::size_t r = 0; r < dh; ++r) {
    for (std::size_t c = 0; c < fin; ++c) {
      cat[r] += head.weight.at2(r, c) * h.at2(i, c);
      cat[dh + r] += head.weight.at2(r, c) * h.at2(j, c);
    }
    for (std::size_t c = 0; c < 2; ++c) {
      cat[2 * dh + r] += head.edge_weight.at2(r, c) * edges.at2(i * n + j, c);
    }
  }
  double beta = 0.0;
  for (std::size_t t = 0; t < 3 * dh; ++t) beta += head.attn.at2(0, t) * cat[t];
  return beta >= 0.0 ? beta : slope * beta;
}

StructuralParams random_structural(std::size_t f, std::size_t fi, const GatConfig& cfg,
                                   std::uint64_t seed) {
  SplitMix64 rng(seed);
  return StructuralParams::init(f, fi, cfg, rng);
}

}  // namespace

TEST_CASE("zero attention vector gives uniform attention") {
  SplitMix64 rng(3);
  const std::size_t n = 4, dh = 5;
  GatLayerParams params = random_layer(1, dh, 3, rng);
  for (std::size_t t = 0; t < params.heads[0].attn.numel(); ++t) params.heads[0].attn.at(t) = 0.0;

  Tape tape;
  GatLayerVars vars = bind_layer(tape, params);
  Var h = tape.constant(random_tensor({n, 3}, rng));
  Var edges = tape.constant(random_tensor({n * n, 2}, rng, 0.0, 1.0));
  std::vector<Var> scores = attention_scores(tape, h, edges, vars, 0.2);
  for (std::size_t i = 0; i < n * n; ++i) CHECK(tape.value(scores[0]).at(i) == 0.0);

  std::vector<std::uint8_t> mask(n * n, 1);
  Var alpha = normalize_attention(scores[0], mask);
  for (std::size_t i = 0; i < n * n; ++i) {
    CHECK(tape.value(alpha).at(i) == doctest::Approx(0.25).epsilon(1e-12));
  }
}

TEST_CASE("identical features and edges give equal scores") {
  SplitMix64 rng(5);
  const std::size_t n = 3;
  GatLayerParams params = random_layer(2, 4, 3, rng);
  Tensor h = Tensor::zeros({n, 3});
  for (std::size_t j = 0; j < 3; ++j) {
    const double v = rng.next_double();
    for (std::size_t i = 0; i < n; ++i) h.at2(i, j) = v;  // all nodes identical
  }
  Tensor edges = Tensor::full({n * n, 2}, 0.5);

  Tape tape;
  GatLayerVars vars = bind_layer(tape, params);
  std::vector<Var> scores =
      attention_scores(tape, tape.constant(h), tape.constant(edges), vars, 0.2);
  for (const Var& s : scores) {
    const Tensor& sv = tape.value(s);
    for (std::size_t i = 0; i < n * n; ++i) {
      CHECK(sv.at(i) == doctest::Approx(sv.at(0)).epsilon(1e-12));
    }
  }
}

TEST_CASE("attention scores match the per-pair concatenate-dot oracle") {
  SplitMix64 rng(7);
  const std::size_t n = 4, dh = 6, fin = 3;
  GatLayerParams params = random_layer(2, dh, fin, rng);
  Tensor h = random_tensor({n, fin}, rng);
  Tensor edges = random_tensor({n * n, 2}, rng, 0.0, 1.0);

  Tape tape;
  GatLayerVars vars = bind_layer(tape, params);
  std::vector<Var> scores =
      attention_scores(tape, tape.constant(h), tape.constant(edges), vars, 0.2);
  for (std::size_t k = 0; k < params.heads.size(); ++k) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double expect = score_oracle(params.heads[k], h, edges, n, i, j, 0.2);
        CHECK(std::abs(tape.value(scores[k]).at2(i, j) - expect) < 1e-12);
      }
    }
  }
}

TEST_CASE("normalize_attention handles the stated neighborhoods") {
  Tape tape;
  // self-loop only
  Var isolated = tape.constant(Tensor::matrix(2, 2, {3.0, -1.0, 2.0, 5.0}));
  Var alpha = normalize_attention(isolated, {1, 0, 0, 1});
  CHECK(tape.value(alpha).at2(0, 0) == 1.0);
  CHECK(tape.value(alpha).at2(0, 1) == 0.0);
  CHECK(tape.value(alpha).at2(1, 1) == 1.0);

  // two equal-score neighbors
  Var equal = tape.constant(Tensor::matrix(1, 2, {0.7, 0.7}));
  Var alpha2 = normalize_attention(equal, {1, 1});
  CHECK(tape.value(alpha2).at(0) == doctest::Approx(0.5).epsilon(1e-12));

  // random scores: row-stochastic over the mask
  SplitMix64 rng(11);
  Var scores = tape.constant(random_tensor({5, 5}, rng, -2.0, 2.0));
  std::vector<std::uint8_t> mask(25, 0);
  for (std::size_t i = 0; i < 5; ++i) {
    mask[i * 5 + i] = 1;
    for (std::size_t j = 0; j < 5; ++j)
      if (rng.next_double() < 0.5) mask[i * 5 + j] = 1;
  }
  Var alpha3 = normalize_attention(scores, mask);
  for (std::size_t i = 0; i < 5; ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < 5; ++j) {
      total += tape.value(alpha3).at2(i, j);
      if (!mask[i * 5 + j]) CHECK(tape.value(alpha3).at2(i, j) == 0.0);
    }
    CHECK(std::abs(total - 1.0) < 1e-12);
  }
}

TEST_CASE("aggregate reduces to the stated special cases") {
  SplitMix64 rng(13);
  {
    // single head, identity W, isolated node keeps its state
    GatLayerParams params;
    GatHeadParams head;
    head.weight = Tensor::identity(3);
    head.edge_weight = Tensor::zeros({3, 2});
    head.attn = Tensor::zeros({1, 9});
    params.heads.push_back(head);

    Tensor h = random_tensor({2, 3}, rng);
    Tape tape;
    GatLayerVars vars = bind_layer(tape, params);
    Var hv = tape.constant(h);
    Var alpha = tape.constant(Tensor::identity(2));  // self-attention only
    Var out = aggregate(tape, {alpha}, hv, vars);
    CHECK(max_abs_diff(tape.value(out), h) < 1e-15);
  }
  {
    // uniform attention over two neighbors averages their features
    GatLayerParams params;
    GatHeadParams head;
    head.weight = Tensor::identity(2);
    head.edge_weight = Tensor::zeros({2, 2});
    head.attn = Tensor::zeros({1, 6});
    params.heads.push_back(head);

    Tensor h = Tensor::matrix(2, 2, {1.0, 3.0, 5.0, 7.0});
    Tape tape;
    GatLayerVars vars = bind_layer(tape, params);
    Var alpha = tape.constant(Tensor::matrix(2, 2, {0.5, 0.5, 0.5, 0.5}));
    Var out = aggregate(tape, {alpha}, tape.constant(h), vars);
    CHECK(tape.value(out).at2(0, 0) == doctest::Approx(3.0));
    CHECK(tape.value(out).at2(0, 1) == doctest::Approx(5.0));
    CHECK(tape.value(out).at2(1, 0) == doctest::Approx(3.0));
  }
  {
    // random case against the triple loop
    const std::size_t n = 4, dh = 3, fin = 5, heads = 2;
    GatLayerParams params = random_layer(heads, dh, fin, rng);
    Tensor h = random_tensor({n, fin}, rng);
    std::vector<Tensor> alphas;
    for (std::size_t k = 0; k < heads; ++k) {
      Tensor a = random_tensor({n, n}, rng, 0.0, 1.0);
      for (std::size_t i = 0; i < n; ++i) {
        double total = 0.0;
        for (std::size_t j = 0; j < n; ++j) total += a.at2(i, j);
        for (std::size_t j = 0; j < n; ++j) a.at2(i, j) /= total;
      }
      alphas.push_back(a);
    }

    Tape tape;
    GatLayerVars vars = bind_layer(tape, params);
    std::vector<Var> alpha_vars;
    for (const Tensor& a : alphas) alpha_vars.push_back(tape.constant(a));
    Var out = aggregate(tape, alpha_vars, tape.constant(h), vars);

    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t d = 0; d < dh; ++d) {
        double expect = 0.0;
        for (std::size_t k = 0; k < heads; ++k) {
          for (std::size_t j = 0; j < n; ++j) {
            double wh = 0.0;
            for (std::size_t c = 0; c < fin; ++c)
              wh += params.heads[k].weight.at2(d, c) * h.at2(j, c);
            expect += alphas[k].at2(i, j) * wh;
          }
        }
        expect /= static_cast<double>(heads);
        CHECK(std::abs(tape.value(out).at2(i, d) - expect) < 1e-12);
      }
    }
  }
}

TEST_CASE("combine_metapaths matches its scalar oracle and ablation cases") {
  SplitMix64 rng(17);
  const std::size_t n = 4, dh = 3;
  MetapathAttnParams params;
  params.transform = random_tensor({dh, dh}, rng);
  params.query = random_tensor({1, dh}, rng);

  {
    // identical path embeddings pass through regardless of weights
    Tensor e = random_tensor({n, dh}, rng);
    Tape tape;
    MetapathAttnVars vars{tape.leaf(params.transform), tape.leaf(params.query)};
    Var out = combine_metapaths(tape, {tape.constant(e), tape.constant(e)}, vars);
    CHECK(max_abs_diff(tape.value(out), e) < 1e-12);
  }
  {
    // single path is the identity
    Tensor e = random_tensor({n, dh}, rng);
    Tape tape;
    MetapathAttnVars vars{tape.leaf(params.transform), tape.leaf(params.query)};
    Var out = combine_metapaths(tape, {tape.constant(e)}, vars);
    CHECK(tape.value(out) == e);
    CHECK_THROWS(combine_metapaths(tape, {}, vars));
  }
  {
    // hand-rolled weighted sum
    Tensor e0 = random_tensor({n, dh}, rng);
    Tensor e1 = random_tensor({n, dh}, rng);
    auto path_score = [&](const Tensor& e) {
      std::vector<double> mean(dh, 0.0);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t d = 0; d < dh; ++d) mean[d] += e.at2(i, d) / n;
      double s = 0.0;
      for (std::size_t r = 0; r < dh; ++r) {
        double vrow = 0.0;
        for (std::size_t c = 0; c < dh; ++c) vrow += params.transform.at2(r, c) * mean[c];
        s += params.query.at2(0, r) * std::tanh(vrow);
      }
      return s;
    };
    const double s0 = path_score(e0), s1 = path_score(e1);
    const double w0 = std::exp(s0) / (std::exp(s0) + std::exp(s1));

    Tape tape;
    MetapathAttnVars vars{tape.leaf(params.transform), tape.leaf(params.query)};
    Var out = combine_metapaths(tape, {tape.constant(e0), tape.constant(e1)}, vars);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t d = 0; d < dh; ++d) {
        const double expect = w0 * e0.at2(i, d) + (1.0 - w0) * e1.at2(i, d);
        CHECK(std::abs(tape.value(out).at2(i, d) - expect) < 1e-10);
      }
    }
  }
}

TEST_CASE("structural_forward shapes, zero case and determinism") {
  SplitMix64 rng(19);
  GatConfig cfg;
  cfg.n_layers = 3;
  cfg.n_heads = 2;
  cfg.d_h = 6;
  const std::size_t n = 5, f = 4, fi = 3;
  DayGraph day = random_day(n, f, fi, rng);
  StructuralParams params = random_structural(f, fi, cfg, 99);

  Tape tape;
  StructuralVars vars = bind_structural(tape, params);
  std::vector<Var> out = structural_forward(tape, {&day}, vars, cfg);
  REQUIRE(out.size() == 1);
  CHECK(tape.value(out[0]).rows() == n);
  CHECK(tape.value(out[0]).cols() == cfg.d_h);

  // zero inputs propagate to zero embeddings
  DayGraph zero_day = day;
  zero_day.stock_features = Tensor::zeros({n, f});
  zero_day.industry_features = Tensor::zeros({1, fi});
  Tape tape2;
  StructuralVars vars2 = bind_structural(tape2, params);
  std::vector<Var> out2 = structural_forward(tape2, {&zero_day}, vars2, cfg);
  for (std::size_t i = 0; i < tape2.value(out2[0]).numel(); ++i) {
    CHECK(tape2.value(out2[0]).at(i) == 0.0);
  }

  // two evaluations agree bit for bit
  Tape tape3;
  StructuralVars vars3 = bind_structural(tape3, params);
  std::vector<Var> out3 = structural_forward(tape3, {&day}, vars3, cfg);
  CHECK(tape.value(out[0]) == tape3.value(out3[0]));
}

TEST_CASE("structural_forward is permutation equivariant") {
  SplitMix64 rng(23);
  GatConfig cfg;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.d_h = 5;
  const std::size_t n = 6, f = 3, fi = 2;
  DayGraph day = random_day(n, f, fi, rng);
  StructuralParams params = random_structural(f, fi, cfg, 101);

  const std::vector<std::size_t> perm = {3, 0, 5, 1, 4, 2};
  DayGraph permuted = permute_day(day, perm);

  Tape t1, t2;
  StructuralVars v1 = bind_structural(t1, params);
  StructuralVars v2 = bind_structural(t2, params);
  const Tensor& base = t1.value(structural_forward(t1, {&day}, v1, cfg)[0]);
  const Tensor& shuffled = t2.value(structural_forward(t2, {&permuted}, v2, cfg)[0]);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t d = 0; d < cfg.d_h; ++d) {
      CHECK(std::abs(shuffled.at2(i, d) - base.at2(perm[i], d)) < 1e-9);
    }
  }
}

TEST_CASE("ss-only ablation is bit-independent of industry inputs") {
  SplitMix64 rng(29);
  GatConfig cfg;
  cfg.n_layers = 3;
  cfg.n_heads = 2;
  cfg.d_h = 6;
  cfg.use_sis = false;  // SS only
  const std::size_t n = 5, f = 4, fi = 3;
  DayGraph day = random_day(n, f, fi, rng);
  StructuralParams params = random_structural(f, fi, cfg, 103);

  DayGraph tampered = day;
  tampered.industry_features = random_tensor({1, fi}, rng, -50.0, 50.0);
  for (std::size_t i = 0; i < tampered.ext_edges.numel(); ++i) {
    tampered.ext_edges.at(i) = rng.next_double() * 10.0;
  }

  Tape t1, t2;
  StructuralVars v1 = bind_structural(t1, params);
  StructuralVars v2 = bind_structural(t2, params);
  const Tensor& a = t1.value(structural_forward(t1, {&day}, v1, cfg)[0]);
  const Tensor& b = t2.value(structural_forward(t2, {&tampered}, v2, cfg)[0]);
  CHECK(a == b);
}

TEST_CASE("structural_forward gradients match finite differences") {
  SplitMix64 rng(31);
  GatConfig cfg;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.d_h = 4;
  const std::size_t n = 4, f = 3, fi = 2;
  std::vector<DayGraph> days;
  for (int d = 0; d < 2; ++d) days.push_back(random_day(n, f, fi, rng));
  StructuralParams params = random_structural(f, fi, cfg, 107);

  std::vector<Tensor*> tensors;
  params.collect(tensors);
  const Tensor proj0 = random_tensor({n, cfg.d_h}, rng);
  const Tensor proj1 = random_tensor({n, cfg.d_h}, rng);

  auto run = [&](StructuralParams& p) {
    Tape tape;
    StructuralVars vars = bind_structural(tape, p);
    std::vector<Var> outs = structural_forward(tape, {&days[0], &days[1]}, vars, cfg);
    Var loss = omni::numerics::add(
        omni::numerics::sum_all(omni::numerics::mul(outs[0], tape.constant(proj0))),
        omni::numerics::sum_all(omni::numerics::mul(outs[1], tape.constant(proj1))));
    return tape.value(loss).at(0);
  };

  // analytic gradients
  Tape tape;
  StructuralVars vars = bind_structural(tape, params);
  std::vector<Var> outs = structural_forward(tape, {&days[0], &days[1]}, vars, cfg);
  Var loss = omni::numerics::add(
      omni::numerics::sum_all(omni::numerics::mul(outs[0], tape.constant(proj0))),
      omni::numerics::sum_all(omni::numerics::mul(outs[1], tape.constant(proj1))));
  tape.backward(loss);

  const double step = 1e-5;
  std::size_t vi = 0;
  double worst = 0.0;
  for (Tensor* t : tensors) {
    const Var leaf{static_cast<int>(vi), &tape};
    for (std::size_t i = 0; i < t->numel(); ++i) {
      const double saved = t->at(i);
      t->at(i) = saved + step;
      const double up = run(params);
      t->at(i) = saved - step;
      const double down = run(params);
      t->at(i) = saved;
      const double fd = (up - down) / (2.0 * step);
      worst = std::max(worst, omni::test::rel_err(tape.grad(leaf).at(i), fd));
    }
    ++vi;
  }
  CHECK(worst < 1e-4);
}
