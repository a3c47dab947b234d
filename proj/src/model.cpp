#include "omni/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "omni/market_graph.hpp"

namespace omni::model {

using nlohmann::json;

ModelParams ModelParams::init(std::size_t n_stocks, std::size_t feat_dim,
                              std::size_t industry_dim, const Hyperparams& hp,
                              std::uint64_t seed) {
  SplitMix64 rng(seed);
  ModelParams p;
  p.feat_dim = feat_dim;
  p.industry_dim = industry_dim;
  p.structural = gat::StructuralParams::init(feat_dim, industry_dim,
                                             hp.gat_config(true, true), rng);
  p.temporal = temporal::TemporalParams::init(hp.temporal_config(), rng);
  const double limit = std::sqrt(6.0 / static_cast<double>(hp.d_h + 1));
  for (std::size_t i = 0; i < n_stocks; ++i) {
    PredictionHead head;
    head.weight = Tensor::zeros({1, hp.d_h});
    for (std::size_t j = 0; j < hp.d_h; ++j) head.weight.at2(0, j) = rng.uniform(-limit, limit);
    head.bias = Tensor::zeros({1, 1});
    p.heads.push_back(std::move(head));
  }
  return p;
}

std::vector<Tensor*> ModelParams::tensors() {
  std::vector<Tensor*> out;
  structural.collect(out);
  temporal.collect(out);
  for (PredictionHead& h : heads) {
    out.push_back(&h.weight);
    out.push_back(&h.bias);
  }
  return out;
}

std::size_t ModelParams::parameter_count() {
  std::size_t n = 0;
  for (Tensor* t : tensors()) n += t->numel();
  return n;
}

ModelVars bind_model(Tape& tape, const ModelParams& params) {
  const int first = static_cast<int>(tape.size());
  ModelVars v;
  v.structural = gat::bind_structural(tape, params.structural);
  v.temporal = temporal::bind_temporal(tape, params.temporal);
  for (const PredictionHead& h : params.heads) {
    Var w = tape.leaf(h.weight);  // leaf order must match tensors()
    Var b = tape.leaf(h.bias);
    v.heads.emplace_back(w, b);
  }
  const int last = static_cast<int>(tape.size());
  for (int id = first; id < last; ++id) v.ordered.push_back(Var{id, &tape});
  return v;
}

const gat::DayGraph& WindowData::day(std::size_t abs_day) const {
  if (abs_day < bounds.train_begin || abs_day >= bounds.test_end) {
    throw std::out_of_range("WindowData::day: day outside window");
  }
  return days[abs_day - bounds.train_begin];
}

std::vector<std::size_t> WindowData::train_ends(std::size_t delta_t) const {
  std::vector<std::size_t> out;
  const std::size_t first = bounds.train_begin + delta_t - 1;
  for (std::size_t d = first; d + 2 <= bounds.train_end; ++d) out.push_back(d);
  return out;
}

std::vector<std::size_t> WindowData::val_ends(std::size_t delta_t) const {
  std::vector<std::size_t> out;
  const std::size_t first = std::max(bounds.train_end, bounds.train_begin + delta_t - 1);
  for (std::size_t d = first; d + 2 <= bounds.val_end; ++d) out.push_back(d);
  return out;
}

std::vector<std::size_t> WindowData::test_ends() const {
  std::vector<std::size_t> out;
  for (std::size_t d = bounds.val_end; d < bounds.test_end; ++d) out.push_back(d);
  return out;
}

WindowData build_window_data(const synth::MarketSeries& series,
                             const synth::ProcessedWindow& processed) {
  if (processed.bounds.test_end >= series.n_days + 1) {
    throw std::invalid_argument("build_window_data: window exceeds series");
  }
  WindowData data;
  data.bounds = processed.bounds;
  data.prices = series.prices;
  data.index_level = series.index_level;
  data.n_stocks = series.n_stocks;
  data.days.reserve(processed.stock_features.size());
  for (std::size_t d = processed.bounds.train_begin; d < processed.bounds.test_end; ++d) {
    const graph::SnapshotInputs inputs = synth::day_inputs(series, d);
    const graph::GraphSnapshot snap = graph::build_snapshot(inputs, processed.pipeline.esg_lo,
                                                            processed.pipeline.esg_hi);
    const std::size_t idx = d - processed.bounds.train_begin;
    data.days.push_back(gat::make_day_graph(snap, processed.stock_features[idx],
                                            processed.industry_features[idx]));
  }
  return data;
}

std::vector<double> excess_return_target(const Tensor& prices,
                                         const std::vector<double>& index_level, std::size_t t) {
  const std::size_t days = prices.rows();
  const std::size_t n = prices.cols();
  if (t + 1 >= days) throw std::out_of_range("excess_return_target: t+1 outside series");
  const double i0 = index_level[t], i1 = index_level[t + 1];
  if (i0 <= 0.0) throw std::invalid_argument("excess_return_target: nonpositive index level");
  const double index_ret = (i1 - i0) / i0;
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double p0 = prices.at2(t, i), p1 = prices.at2(t + 1, i);
    if (p0 <= 0.0) {
      throw std::invalid_argument("excess_return_target: nonpositive price for stock " +
                                  std::to_string(i));
    }
    y[i] = (p1 - p0) / p0 - index_ret;
  }
  return y;
}

Var loss(Var predictions, Var targets) { return numerics::mse(predictions, targets); }

std::vector<Var> batch_forward(Tape& tape, const WindowData& data, const ModelVars& vars,
                               const ForwardSpec& spec, const std::vector<std::size_t>& ends) {
  const Hyperparams& hp = *spec.hp;
  const std::size_t delta = hp.delta_t;
  const gat::GatConfig gcfg = hp.gat_config(spec.use_ss, spec.use_sis);
  const temporal::AlibiSpec alibi = temporal::alibi_bias(delta, hp.temporal_heads);

  // structural embeddings once per distinct day, ascending for determinism
  std::vector<std::size_t> needed;
  for (std::size_t end : ends) {
    if (end + 1 < delta || end + 1 - delta < data.bounds.train_begin) {
      throw std::invalid_argument("batch_forward: window end " + std::to_string(end) +
                                  " reaches before the window");
    }
    for (std::size_t d = end + 1 - delta; d <= end; ++d) needed.push_back(d);
  }
  std::sort(needed.begin(), needed.end());
  needed.erase(std::unique(needed.begin(), needed.end()), needed.end());

  std::map<std::size_t, Var> day_emb;
  for (std::size_t d : needed) {
    day_emb[d] = gat::structural_day(tape, data.day(d), vars.structural, gcfg);
  }
  std::map<std::pair<std::size_t, std::size_t>, Var> row_cache;
  auto stock_row = [&](std::size_t d, std::size_t i) {
    const auto key = std::make_pair(d, i);
    auto it = row_cache.find(key);
    if (it != row_cache.end()) return it->second;
    Var r = numerics::row(day_emb.at(d), i);
    row_cache.emplace(key, r);
    return r;
  };

  std::vector<Var> preds;
  preds.reserve(ends.size() * data.n_stocks);
  for (std::size_t end : ends) {
    for (std::size_t i = 0; i < data.n_stocks; ++i) {
      std::vector<Var> rows;
      rows.reserve(delta);
      for (std::size_t d = end + 1 - delta; d <= end; ++d) rows.push_back(stock_row(d, i));
      Var seq = delta == 1 ? rows[0] : numerics::concat_rows(rows);
      Var z = temporal::transformer_encode(tape, seq, vars.temporal, alibi, hp.dropout,
                                           spec.dropout_rng, spec.training);
      Var pred = numerics::add(numerics::matmul_nt(z, vars.heads[i].first),
                               vars.heads[i].second);
      preds.push_back(pred);
    }
  }
  return preds;
}

std::vector<double> predict(const ModelParams& params, const WindowData& data,
                            const Hyperparams& hp, bool use_ss, bool use_sis,
                            std::size_t end_day) {
  Tape tape;
  ModelVars vars = bind_model(tape, params);
  ForwardSpec spec;
  spec.hp = &hp;
  spec.use_ss = use_ss;
  spec.use_sis = use_sis;
  spec.training = false;
  std::vector<Var> preds = batch_forward(tape, data, vars, spec, {end_day});
  std::vector<double> out;
  out.reserve(preds.size());
  for (Var p : preds) out.push_back(tape.value(p).at(0));
  return out;
}

namespace {

double evaluate_loss(const ModelParams& params, const WindowData& data, const Hyperparams& hp,
                     const TrainConfig& cfg, const std::vector<std::size_t>& ends) {
  if (ends.empty()) throw std::invalid_argument("evaluate_loss: no window ends");
  Tape tape;
  ModelVars vars = bind_model(tape, params);
  ForwardSpec spec;
  spec.hp = &hp;
  spec.use_ss = cfg.use_ss;
  spec.use_sis = cfg.use_sis;
  spec.training = false;
  std::vector<Var> preds = batch_forward(tape, data, vars, spec, ends);
  double acc = 0.0;
  std::size_t k = 0;
  for (std::size_t e = 0; e < ends.size(); ++e) {
    const std::vector<double> y = excess_return_target(data.prices, data.index_level, ends[e]);
    for (std::size_t i = 0; i < data.n_stocks; ++i, ++k) {
      const double d = tape.value(preds[k]).at(0) - y[i];
      acc += d * d;
    }
  }
  return acc / static_cast<double>(preds.size());
}

}  // namespace

TrainResult train(ModelParams& params, AdamState& state, const WindowData& data,
                  const Hyperparams& hp, const TrainConfig& cfg) {
  if (!cfg.use_ss && !cfg.use_sis) {
    throw std::invalid_argument("train: no metapaths enabled");
  }
  const std::vector<std::size_t> all_train = data.train_ends(hp.delta_t);
  const std::vector<std::size_t> all_val = data.val_ends(hp.delta_t);
  if (all_train.empty() || all_val.empty()) {
    throw std::invalid_argument("train: window too short for delta_t");
  }

  SplitMix64 shuffle_rng(SplitMix64::derive(cfg.seed, 0x5AFFu));
  SplitMix64 dropout_rng(SplitMix64::derive(cfg.seed, 0xD0u));

  TrainResult result;
  ModelParams best = params;
  AdamState best_state = state;
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::vector<std::size_t> order = all_train;
    shuffle_rng.shuffle(order);

    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      const std::vector<std::size_t> ends(order.begin() + static_cast<std::ptrdiff_t>(start),
                                          order.begin() + static_cast<std::ptrdiff_t>(stop));
      try {
        Tape tape;
        ModelVars vars = bind_model(tape, params);
        ForwardSpec spec;
        spec.hp = &hp;
        spec.use_ss = cfg.use_ss;
        spec.use_sis = cfg.use_sis;
        spec.training = true;
        spec.dropout_rng = &dropout_rng;
        std::vector<Var> preds = batch_forward(tape, data, vars, spec, ends);

        std::vector<double> target_data;
        target_data.reserve(preds.size());
        for (std::size_t end : ends) {
          const std::vector<double> y = excess_return_target(data.prices, data.index_level, end);
          target_data.insert(target_data.end(), y.begin(), y.end());
        }
        Var pred_row = numerics::concat_cols(preds);
        Var target_row = tape.constant(Tensor::row(std::move(target_data)));
        Var batch_loss = loss(pred_row, target_row);
        const double loss_value = tape.value(batch_loss).at(0);
        if (!std::isfinite(loss_value)) {
          throw std::runtime_error("non-finite loss");
        }
        tape.backward(batch_loss);

        std::vector<Tensor> grads;
        grads.reserve(vars.ordered.size());
        for (Var leaf : vars.ordered) grads.push_back(tape.grad(leaf));
        adam_step(params.tensors(), grads, state, hp.adam);

        epoch_loss += loss_value;
        ++batches;
      } catch (const std::exception& e) {
        throw std::runtime_error("training diverged at epoch " + std::to_string(epoch) +
                                 ", batch " + std::to_string(batches + 1) + ": " + e.what());
      }
    }
    result.train_curve.push_back(epoch_loss / static_cast<double>(batches));

    const double val = evaluate_loss(params, data, hp, cfg, all_val);
    result.val_curve.push_back(val);
    result.epochs_run = epoch;

    if (val < best_val) {
      best_val = val;
      best = params;
      best_state = state;
      result.best_epoch = epoch;
      since_best = 0;
    } else {
      ++since_best;
    }
    if (since_best >= cfg.patience) break;
  }

  params = best;
  state = best_state;
  result.best_val = best_val;
  return result;
}

void save_checkpoint(const std::string& path, Checkpoint& ckpt) {
  std::vector<Tensor*> tensors = ckpt.params.tensors();

  json header;
  header["format"] = "omnignn-ckpt-v1";
  header["config_hash"] = ckpt.config_hash;
  header["window_index"] = ckpt.window_index;
  header["bounds"] = {ckpt.bounds.train_begin, ckpt.bounds.train_end, ckpt.bounds.val_end,
                      ckpt.bounds.test_end};
  header["epoch"] = ckpt.epoch;
  header["n_stocks"] = ckpt.n_stocks;
  header["feat_dim"] = ckpt.feat_dim;
  header["industry_dim"] = ckpt.industry_dim;
  header["use_ss"] = ckpt.use_ss;
  header["use_sis"] = ckpt.use_sis;
  header["adam_step"] = ckpt.adam.step;
  json shapes = json::array();
  for (Tensor* t : tensors) shapes.push_back(t->shape());
  header["tensor_shapes"] = std::move(shapes);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  const std::string head = header.dump();
  out << head << '\n' << '\0';
  auto write_tensor = [&](const Tensor& t) {
    out.write(reinterpret_cast<const char*>(t.data().data()),
              static_cast<std::streamsize>(t.numel() * sizeof(double)));
  };
  for (Tensor* t : tensors) write_tensor(*t);
  for (const Tensor& t : ckpt.adam.m) write_tensor(t);
  for (const Tensor& t : ckpt.adam.v) write_tensor(t);
  if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path, const Hyperparams& hp) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  std::string head;
  std::getline(in, head);
  char zero = 0;
  in.get(zero);
  if (zero != '\0') throw std::runtime_error("load_checkpoint: malformed header separator");
  json header = json::parse(head);
  if (header.at("format").get<std::string>() != "omnignn-ckpt-v1") {
    throw std::runtime_error("load_checkpoint: unsupported format");
  }

  Checkpoint ckpt;
  ckpt.config_hash = header.at("config_hash").get<std::uint64_t>();
  ckpt.window_index = header.at("window_index").get<std::size_t>();
  const auto b = header.at("bounds");
  ckpt.bounds = synth::WindowBounds{b.at(0).get<std::size_t>(), b.at(1).get<std::size_t>(),
                                    b.at(2).get<std::size_t>(), b.at(3).get<std::size_t>()};
  ckpt.epoch = header.at("epoch").get<std::size_t>();
  ckpt.n_stocks = header.at("n_stocks").get<std::size_t>();
  ckpt.feat_dim = header.at("feat_dim").get<std::size_t>();
  ckpt.industry_dim = header.at("industry_dim").get<std::size_t>();
  ckpt.use_ss = header.at("use_ss").get<bool>();
  ckpt.use_sis = header.at("use_sis").get<bool>();

  ckpt.params = ModelParams::init(ckpt.n_stocks, ckpt.feat_dim, ckpt.industry_dim, hp, 0);
  std::vector<Tensor*> tensors = ckpt.params.tensors();
  const json& shapes = header.at("tensor_shapes");
  if (shapes.size() != tensors.size()) {
    throw std::runtime_error("load_checkpoint: tensor manifest does not match hyperparams");
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (shapes[i].get<std::vector<std::size_t>>() != tensors[i]->shape()) {
      throw std::runtime_error("load_checkpoint: shape mismatch at tensor " + std::to_string(i));
    }
  }
  auto read_tensor = [&](Tensor& t) {
    in.read(reinterpret_cast<char*>(t.data().data()),
            static_cast<std::streamsize>(t.numel() * sizeof(double)));
    if (!in) throw std::runtime_error("load_checkpoint: truncated payload");
    t.check_finite("checkpoint");
  };
  for (Tensor* t : tensors) read_tensor(*t);
  ckpt.adam = AdamState::init(tensors);
  ckpt.adam.step = header.at("adam_step").get<std::int64_t>();
  for (Tensor& t : ckpt.adam.m) read_tensor(t);
  for (Tensor& t : ckpt.adam.v) read_tensor(t);
  return ckpt;
}

}  // namespace omni::model
