#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <vector>

#include "omni/backtest.hpp"
#include "omni/model.hpp"
#include "graph_testutil.hpp"
#include "testutil.hpp"

using namespace omni::model;
using omni::config::Hyperparams;
using omni::config::TrainConfig;
using omni::numerics::SplitMix64;
using omni::numerics::Tape;
using omni::numerics::Tensor;
using omni::numerics::Var;
using omni::test::random_tensor;

namespace {

Hyperparams tiny_hp() {
  Hyperparams hp;
  hp.d_h = 8;
  hp.gat_heads = 2;
  hp.gat_layers = 2;
  hp.temporal_heads = 2;
  hp.temporal_layers = 1;
  hp.ff_dim = 16;
  hp.delta_t = 4;
  hp.dropout = 0.0;
  return hp;
}

struct Fixture {
  omni::synth::MarketSeries series;
  omni::synth::ProcessedWindow processed;
  WindowData data;
  Hyperparams hp;
};

Fixture make_fixture(std::uint64_t seed = 11, double factor_strength = 0.9) {
  omni::synth::UniverseSpec spec;
  spec.n_stocks = 6;
  spec.n_days = 80;
  spec.seed = seed;
  spec.factor_strength = factor_strength;
  spec.n_raw_features = 6;
  spec.n_holders = 8;

  Fixture f;
  f.hp = tiny_hp();
  f.series = omni::synth::generate(spec);
  const omni::synth::WindowBounds bounds{0, 40, 52, 64};
  f.processed = omni::synth::preprocess_window(f.series, bounds, 0.95, 0.01, 0.99);
  f.data = build_window_data(f.series, f.processed);
  return f;
}

std::size_t expected_parameter_count(std::size_t n_stocks, std::size_t f, std::size_t fi,
                                     const Hyperparams& hp) {
  const std::size_t dh = hp.d_h;
  std::size_t total = 0;
  for (std::size_t l = 0; l < hp.gat_layers; ++l) {
    const std::size_t fin = l == 0 ? f : dh;
    total += 2 * hp.gat_heads * (dh * fin + dh * 2 + 3 * dh);  // W, W_e, a per path
    total += dh * dh + dh;                                     // semantic attention V, q
  }
  total += f * fi;  // industry projection
  const std::size_t dk = dh / hp.temporal_heads;
  const std::size_t ff = hp.ff_dim == 0 ? 4 * dh : hp.ff_dim;
  for (std::size_t l = 0; l < hp.temporal_layers; ++l) {
    total += 2 * dh;                            // ln1
    total += hp.temporal_heads * 3 * dk * dh;   // wq, wk, wv
    total += dh * dh;                           // wo
    total += 2 * dh;                            // ln2
    total += ff * dh + ff + dh * ff + dh;       // feed-forward
  }
  total += 2 * dh;                // final layer norm
  total += n_stocks * (dh + 1);   // heads
  return total;
}

}  // namespace

TEST_CASE("excess return targets follow the two-term formula") {
  Tensor prices = Tensor::matrix(2, 2, {100.0, 50.0, 110.0, 51.0});
  std::vector<double> index = {100.0, 102.0};
  const std::vector<double> y = excess_return_target(prices, index, 0);
  CHECK(y[0] == doctest::Approx(0.10 - 0.02).epsilon(1e-15));
  CHECK(y[1] == doctest::Approx(0.02 - 0.02).epsilon(1e-15));

  // a stock moving with the index has zero excess return
  Tensor prices2 = Tensor::matrix(2, 1, {100.0, 102.0});
  CHECK(excess_return_target(prices2, index, 0)[0] == doctest::Approx(0.0).epsilon(1e-15));

  SplitMix64 rng(3);
  Tensor rp = random_tensor({5, 4}, rng, 10.0, 200.0);
  std::vector<double> ri = {90.0, 95.0, 100.0, 105.0, 98.0};
  for (std::size_t t = 0; t + 1 < 5; ++t) {
    const std::vector<double> yt = excess_return_target(rp, ri, t);
    for (std::size_t i = 0; i < 4; ++i) {
      const double expect = (rp.at2(t + 1, i) - rp.at2(t, i)) / rp.at2(t, i) -
                            (ri[t + 1] - ri[t]) / ri[t];
      CHECK(std::abs(yt[i] - expect) < 1e-15);
    }
  }

  CHECK_THROWS(excess_return_target(prices, index, 1));  // t+1 outside
  Tensor bad = Tensor::matrix(2, 1, {0.0, 1.0});
  CHECK_THROWS(excess_return_target(bad, index, 0));
}

TEST_CASE("loss is mean squared error") {
  Tape tape;
  SplitMix64 rng(5);
  Tensor p = random_tensor({1, 12}, rng);
  Var pv = tape.leaf(p);
  CHECK(tape.value(loss(pv, tape.constant(p))).at(0) == 0.0);

  Tensor shifted = p;
  for (std::size_t i = 0; i < shifted.numel(); ++i) shifted.at(i) += 0.3;
  CHECK(tape.value(loss(tape.leaf(shifted), tape.constant(p))).at(0) ==
        doctest::Approx(0.09).epsilon(1e-12));

  Tensor q = random_tensor({1, 12}, rng);
  double expect = 0.0;
  for (std::size_t i = 0; i < 12; ++i) expect += (p.at(i) - q.at(i)) * (p.at(i) - q.at(i));
  expect /= 12.0;
  CHECK(tape.value(loss(pv, tape.constant(q))).at(0) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("zero weights reduce predictions to the per-stock biases") {
  Fixture f = make_fixture();
  ModelParams params = ModelParams::init(f.data.n_stocks, f.processed.stock_features[0].cols(),
                                         f.processed.industry_features[0].cols(), f.hp, 7);
  for (Tensor* t : params.tensors()) {
    for (std::size_t i = 0; i < t->numel(); ++i) t->at(i) = 0.0;
  }
  for (std::size_t i = 0; i < params.heads.size(); ++i) {
    params.heads[i].bias.at(0) = 0.1 * static_cast<double>(i + 1);
  }
  const std::vector<double> preds =
      predict(params, f.data, f.hp, true, true, f.data.bounds.train_begin + f.hp.delta_t - 1);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    CHECK(preds[i] == doctest::Approx(0.1 * static_cast<double>(i + 1)).epsilon(1e-12));
  }
}

TEST_CASE("evaluation is deterministic") {
  Fixture f = make_fixture();
  ModelParams params = ModelParams::init(f.data.n_stocks, f.processed.stock_features[0].cols(),
                                         f.processed.industry_features[0].cols(), f.hp, 7);
  const std::size_t end = f.data.bounds.train_begin + f.hp.delta_t + 3;
  const std::vector<double> a = predict(params, f.data, f.hp, true, true, end);
  const std::vector<double> b = predict(params, f.data, f.hp, true, true, end);
  CHECK(a == b);
}

TEST_CASE("predictions are equivariant under stock permutation") {
  Fixture f = make_fixture();
  const std::size_t n = f.data.n_stocks;
  ModelParams params = ModelParams::init(n, f.processed.stock_features[0].cols(),
                                         f.processed.industry_features[0].cols(), f.hp, 7);

  const std::vector<std::size_t> perm = {4, 2, 0, 5, 1, 3};
  WindowData permuted = f.data;
  for (std::size_t d = 0; d < permuted.days.size(); ++d) {
    permuted.days[d] = omni::test::permute_day(f.data.days[d], perm);
  }
  for (std::size_t t = 0; t < permuted.prices.rows(); ++t)
    for (std::size_t i = 0; i < n; ++i)
      permuted.prices.at2(t, i) = f.data.prices.at2(t, perm[i]);
  ModelParams pparams = params;
  for (std::size_t i = 0; i < n; ++i) pparams.heads[i] = params.heads[perm[i]];

  const std::size_t end = f.data.bounds.train_begin + f.hp.delta_t + 1;
  const std::vector<double> base = predict(params, f.data, f.hp, true, true, end);
  const std::vector<double> shuffled = predict(pparams, permuted, f.hp, true, true, end);
  for (std::size_t i = 0; i < n; ++i) {
    CHECK(shuffled[i] == doctest::Approx(base[perm[i]]).epsilon(1e-9));
  }
}

TEST_CASE("parameter count matches the closed-form sum") {
  Fixture f = make_fixture();
  const std::size_t feat = f.processed.stock_features[0].cols();
  const std::size_t fi = f.processed.industry_features[0].cols();
  ModelParams params = ModelParams::init(f.data.n_stocks, feat, fi, f.hp, 7);
  CHECK(params.parameter_count() == expected_parameter_count(f.data.n_stocks, feat, fi, f.hp));
}

TEST_CASE("training with zero learning rate leaves parameters unchanged and stops early") {
  Fixture f = make_fixture();
  Hyperparams hp = f.hp;
  hp.adam.lr = 0.0;
  hp.adam.weight_decay = 0.0;
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.max_epochs = 50;
  cfg.patience = 1;
  cfg.seed = 3;

  ModelParams params = ModelParams::init(f.data.n_stocks, f.processed.stock_features[0].cols(),
                                         f.processed.industry_features[0].cols(), hp, 7);
  ModelParams before = params;
  omni::numerics::AdamState state = omni::numerics::AdamState::init(params.tensors());
  const TrainResult result = train(params, state, f.data, hp, cfg);

  std::vector<Tensor*> now = params.tensors();
  std::vector<Tensor*> then = before.tensors();
  for (std::size_t i = 0; i < now.size(); ++i) CHECK(*now[i] == *then[i]);

  // constant validation loss never improves on the first epoch: two
  // evaluations, then the patience of one is exhausted
  CHECK(result.epochs_run == 2);
  CHECK(result.val_curve.size() == 2);
  CHECK(result.best_epoch == 1);
}

TEST_CASE("a short training run reduces the loss") {
  Fixture f = make_fixture(21, 0.9);
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.max_epochs = 10;
  cfg.patience = 10;
  cfg.seed = 5;

  ModelParams params = ModelParams::init(f.data.n_stocks, f.processed.stock_features[0].cols(),
                                         f.processed.industry_features[0].cols(), f.hp, 9);
  omni::numerics::AdamState state = omni::numerics::AdamState::init(params.tensors());
  const TrainResult result = train(params, state, f.data, f.hp, cfg);
  REQUIRE(result.train_curve.size() >= 2);
  CHECK(result.train_curve.back() < result.train_curve.front());
}

TEST_CASE("training is deterministic for a fixed seed") {
  Fixture f = make_fixture();
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.max_epochs = 3;
  cfg.patience = 10;
  cfg.seed = 13;

  auto run = [&]() {
    ModelParams params = ModelParams::init(f.data.n_stocks, f.processed.stock_features[0].cols(),
                                           f.processed.industry_features[0].cols(), f.hp, 17);
    omni::numerics::AdamState state = omni::numerics::AdamState::init(params.tensors());
    train(params, state, f.data, f.hp, cfg);
    return params;
  };
  ModelParams a = run();
  ModelParams b = run();
  std::vector<Tensor*> ta = a.tensors(), tb = b.tensors();
  for (std::size_t i = 0; i < ta.size(); ++i) CHECK(*ta[i] == *tb[i]);
}

TEST_CASE("gradients reach every active parameter and skip ablated ones") {
  Fixture f = make_fixture();
  const std::size_t feat = f.processed.stock_features[0].cols();
  const std::size_t fi = f.processed.industry_features[0].cols();
  ModelParams params = ModelParams::init(f.data.n_stocks, feat, fi, f.hp, 23);

  auto grad_norms = [&](bool use_ss, bool use_sis) {
    Tape tape;
    ModelVars vars = bind_model(tape, params);
    ForwardSpec spec;
    spec.hp = &f.hp;
    spec.use_ss = use_ss;
    spec.use_sis = use_sis;
    spec.training = true;
    const std::size_t end = f.data.bounds.train_begin + f.hp.delta_t + 2;
    std::vector<Var> preds = batch_forward(tape, f.data, vars, spec, {end, end + 1});
    std::vector<double> targets;
    for (std::size_t e = 0; e < 2; ++e) {
      const std::vector<double> y =
          excess_return_target(f.data.prices, f.data.index_level, end + e);
      targets.insert(targets.end(), y.begin(), y.end());
    }
    Var l = loss(omni::numerics::concat_cols(preds),
                 tape.constant(Tensor::row(std::move(targets))));
    tape.backward(l);
    std::vector<double> norms;
    for (Var leaf : vars.ordered) {
      double norm = 0.0;
      const Tensor& g = tape.grad(leaf);
      for (std::size_t i = 0; i < g.numel(); ++i) norm += g.at(i) * g.at(i);
      norms.push_back(std::sqrt(norm));
    }
    return norms;
  };

  // identify the industry-dependent parameter slots
  std::set<const Tensor*> sis_tensors;
  for (auto& layer : params.structural.layers) {
    for (const auto& h : layer[1].heads) {
      sis_tensors.insert(&h.weight);
      sis_tensors.insert(&h.edge_weight);
      sis_tensors.insert(&h.attn);
    }
  }
  sis_tensors.insert(&params.structural.industry_proj);
  std::set<const Tensor*> combine_tensors;
  for (const auto& c : params.structural.combine) {
    combine_tensors.insert(&c.transform);
    combine_tensors.insert(&c.query);
  }
  const std::vector<Tensor*> slots = params.tensors();

  const std::vector<double> both = grad_norms(true, true);
  for (std::size_t i = 0; i < slots.size(); ++i) {
    CHECK_MESSAGE(both[i] > 0.0, "parameter " << i << " received no gradient");
  }

  const std::vector<double> ss_only = grad_norms(true, false);
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const bool industry_dependent = sis_tensors.count(slots[i]) > 0;
    const bool combine_param = combine_tensors.count(slots[i]) > 0;
    if (industry_dependent || combine_param) {
      CHECK(ss_only[i] == 0.0);  // exactly zero under the ablation
    } else {
      CHECK(ss_only[i] > 0.0);
    }
  }
}

TEST_CASE("the best validation epoch is restored") {
  Fixture f = make_fixture(31);
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.max_epochs = 8;
  cfg.patience = 8;
  cfg.seed = 19;

  ModelParams params = ModelParams::init(f.data.n_stocks, f.processed.stock_features[0].cols(),
                                         f.processed.industry_features[0].cols(), f.hp, 29);
  omni::numerics::AdamState state = omni::numerics::AdamState::init(params.tensors());
  const TrainResult result = train(params, state, f.data, f.hp, cfg);

  CHECK(result.best_val == *std::min_element(result.val_curve.begin(), result.val_curve.end()));

  // restored parameters reproduce the reported best validation loss
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t end : f.data.val_ends(f.hp.delta_t)) {
    const std::vector<double> preds = predict(params, f.data, f.hp, true, true, end);
    const std::vector<double> y = excess_return_target(f.data.prices, f.data.index_level, end);
    for (std::size_t i = 0; i < preds.size(); ++i) {
      acc += (preds[i] - y[i]) * (preds[i] - y[i]);
      ++count;
    }
  }
  CHECK(acc / static_cast<double>(count) == doctest::Approx(result.best_val).epsilon(1e-12));
}

TEST_CASE("ablate removes paths and refuses to empty the set") {
  TrainConfig cfg;
  CHECK(cfg.use_ss);
  CHECK(cfg.use_sis);

  const TrainConfig same = omni::config::ablate(cfg, std::nullopt);
  CHECK(same.use_ss);
  CHECK(same.use_sis);

  const TrainConfig ss_only = omni::config::ablate(cfg, omni::graph::Metapath::SIS);
  CHECK(ss_only.use_ss);
  CHECK_FALSE(ss_only.use_sis);

  CHECK_THROWS(omni::config::ablate(ss_only, omni::graph::Metapath::SS));
}

TEST_CASE("checkpoints round-trip bit for bit") {
  Fixture f = make_fixture(41);
  const std::size_t feat = f.processed.stock_features[0].cols();
  const std::size_t fi = f.processed.industry_features[0].cols();

  Checkpoint ckpt;
  ckpt.config_hash = 0xABCDEF0102030405ULL;
  ckpt.window_index = 3;
  ckpt.bounds = f.data.bounds;
  ckpt.epoch = 17;
  ckpt.n_stocks = f.data.n_stocks;
  ckpt.feat_dim = feat;
  ckpt.industry_dim = fi;
  ckpt.use_ss = true;
  ckpt.use_sis = false;
  ckpt.params = ModelParams::init(f.data.n_stocks, feat, fi, f.hp, 37);
  ckpt.adam = omni::numerics::AdamState::init(ckpt.params.tensors());
  ckpt.adam.step = 5;
  SplitMix64 rng(43);
  for (Tensor& t : ckpt.adam.m)
    for (std::size_t i = 0; i < t.numel(); ++i) t.at(i) = rng.gaussian();

  const std::string path = "/tmp/omni_test_ckpt.bin";
  save_checkpoint(path, ckpt);
  const Checkpoint back = load_checkpoint(path, f.hp);

  CHECK(back.config_hash == ckpt.config_hash);
  CHECK(back.window_index == 3);
  CHECK(back.bounds.train_begin == ckpt.bounds.train_begin);
  CHECK(back.bounds.test_end == ckpt.bounds.test_end);
  CHECK(back.epoch == 17);
  CHECK(back.use_sis == false);
  CHECK(back.adam.step == 5);

  Checkpoint loaded = back;
  std::vector<Tensor*> a = ckpt.params.tensors();
  std::vector<Tensor*> b = loaded.params.tensors();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(*a[i] == *b[i]);
  for (std::size_t i = 0; i < ckpt.adam.m.size(); ++i) {
    CHECK(ckpt.adam.m[i] == loaded.adam.m[i]);
    CHECK(ckpt.adam.v[i] == loaded.adam.v[i]);
  }

  std::remove(path.c_str());
}
