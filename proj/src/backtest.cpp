#include "omni/backtest.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "omni/rng.hpp"

namespace omni::backtest {

using nlohmann::json;
using numerics::SplitMix64;

std::vector<WindowTriple> schedule(std::size_t n_days, std::size_t train_len,
                                   std::size_t val_len, std::size_t test_len) {
  if (train_len == 0 || val_len == 0 || test_len == 0) {
    throw std::invalid_argument("schedule: slice lengths must be positive");
  }
  const std::size_t total = train_len + val_len + test_len;
  if (n_days < total + 1) {
    throw std::invalid_argument("schedule: need at least " + std::to_string(total + 1) +
                                " days (train+val+test plus the final target day), got " +
                                std::to_string(n_days));
  }
  std::vector<WindowTriple> out;
  for (std::size_t s = 0; s + total + 1 <= n_days; s += test_len) {
    WindowTriple w;
    w.id = out.size();
    w.train_begin = s;
    w.train_end = s + train_len;
    w.val_end = s + train_len + val_len;
    w.test_end = s + total;
    out.push_back(w);
  }
  return out;
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i + 1;
    while (j < n && values[order[j]] == values[order[i]]) ++j;
    const double avg = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = avg;
    i = j;
  }
  return ranks;
}

std::size_t topk_count(double k_frac, std::size_t n) {
  if (k_frac <= 0.0 || k_frac > 1.0) {
    throw std::invalid_argument("top-k fraction must be in (0,1]");
  }
  const std::size_t k =
      static_cast<std::size_t>(std::ceil(k_frac * static_cast<double>(n)));
  return std::max<std::size_t>(1, std::min(k, n));
}

// indices of the k largest predictions, ties resolved by stock index
std::vector<std::size_t> topk_indices(const std::vector<double>& preds, std::size_t k) {
  std::vector<std::size_t> order(preds.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (preds[a] != preds[b]) return preds[a] > preds[b];
    return a < b;
  });
  order.resize(k);
  return order;
}

}  // namespace

FlaggedValue ic(const std::vector<double>& pred, const std::vector<double>& truth) {
  if (pred.size() != truth.size() || pred.size() < 2) {
    throw std::invalid_argument("ic: need two equal-length vectors of size >= 2");
  }
  const std::vector<double> rp = average_ranks(pred);
  const std::vector<double> rt = average_ranks(truth);
  const std::size_t n = rp.size();
  double mp = 0.0, mt = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mp += rp[i];
    mt += rt[i];
  }
  mp /= static_cast<double>(n);
  mt /= static_cast<double>(n);
  double cov = 0.0, vp = 0.0, vt = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    cov += (rp[i] - mp) * (rt[i] - mt);
    vp += (rp[i] - mp) * (rp[i] - mp);
    vt += (rt[i] - mt) * (rt[i] - mt);
  }
  if (vp <= 0.0 || vt <= 0.0) return {0.0, true};  // constant input
  return {cov / std::sqrt(vp * vt), false};
}

std::vector<double> topk_portfolio_returns(const std::vector<std::vector<double>>& preds,
                                           const std::vector<std::vector<double>>& realized,
                                           double k_frac) {
  if (preds.size() != realized.size()) {
    throw std::invalid_argument("topk_portfolio_returns: day count mismatch");
  }
  std::vector<double> daily;
  daily.reserve(preds.size());
  for (std::size_t d = 0; d < preds.size(); ++d) {
    if (preds[d].size() != realized[d].size() || preds[d].empty()) {
      throw std::invalid_argument("topk_portfolio_returns: ragged day " + std::to_string(d));
    }
    const std::size_t k = topk_count(k_frac, preds[d].size());
    double acc = 0.0;
    for (std::size_t i : topk_indices(preds[d], k)) acc += realized[d][i];
    daily.push_back(acc / static_cast<double>(k));
  }
  return daily;
}

FlaggedValue ir(const std::vector<double>& daily_returns) {
  if (daily_returns.size() < 2) {
    throw std::invalid_argument("ir: need at least 2 days");
  }
  double mean = 0.0;
  for (double r : daily_returns) mean += r;
  mean /= static_cast<double>(daily_returns.size());
  double var = 0.0;
  for (double r : daily_returns) var += (r - mean) * (r - mean);
  var /= static_cast<double>(daily_returns.size() - 1);
  if (var <= 0.0) return {0.0, true};
  return {mean / std::sqrt(var), false};
}

double cr(const std::vector<double>& daily_returns) {
  if (daily_returns.empty()) throw std::invalid_argument("cr: need at least 1 day");
  double acc = 1.0;
  for (double r : daily_returns) acc *= 1.0 + r;
  return acc - 1.0;
}

double precision_at_k(const std::vector<std::vector<double>>& preds,
                      const std::vector<std::vector<double>>& realized, double k_frac) {
  if (preds.size() != realized.size() || preds.empty()) {
    throw std::invalid_argument("precision_at_k: day count mismatch");
  }
  double acc = 0.0;
  for (std::size_t d = 0; d < preds.size(); ++d) {
    const std::size_t k = topk_count(k_frac, preds[d].size());
    std::size_t hits = 0;
    for (std::size_t i : topk_indices(preds[d], k)) {
      if (realized[d][i] > 0.0) ++hits;
    }
    acc += static_cast<double>(hits) / static_cast<double>(k);
  }
  return acc / static_cast<double>(preds.size());
}

MetricRow window_metrics(const WindowPredictions& w, double k_frac) {
  MetricRow row;
  row.window_id = w.window_id;
  double ic_acc = 0.0;
  bool any_degenerate = false;
  for (std::size_t d = 0; d < w.days.size(); ++d) {
    const FlaggedValue day_ic = ic(w.preds[d], w.realized[d]);
    ic_acc += day_ic.value;
    any_degenerate = any_degenerate || day_ic.degenerate;
  }
  row.ic = ic_acc / static_cast<double>(w.days.size());
  row.ic_degenerate = any_degenerate;

  const std::vector<double> portfolio = topk_portfolio_returns(w.preds, w.realized, k_frac);
  const FlaggedValue ir_val = ir(portfolio);
  row.ir = ir_val.value;
  row.ir_degenerate = ir_val.degenerate;
  row.cr = cr(portfolio);
  row.precision_at_k = precision_at_k(w.preds, w.realized, k_frac);
  return row;
}

MetricRow aggregate_rows(const std::vector<MetricRow>& rows) {
  if (rows.empty()) throw std::invalid_argument("aggregate_rows: empty report");
  MetricRow agg;
  for (const MetricRow& r : rows) {
    agg.ic += r.ic;
    agg.ir += r.ir;
    agg.cr += r.cr;
    agg.precision_at_k += r.precision_at_k;
    agg.ic_degenerate = agg.ic_degenerate || r.ic_degenerate;
    agg.ir_degenerate = agg.ir_degenerate || r.ir_degenerate;
  }
  const double n = static_cast<double>(rows.size());
  agg.ic /= n;
  agg.ir /= n;
  agg.cr /= n;
  agg.precision_at_k /= n;
  return agg;
}

BacktestReport run_backtest(const synth::MarketSeries& series, const RunConfig& config,
                            std::vector<WindowPredictions>* prediction_log) {
  const std::vector<WindowTriple> windows =
      schedule(series.n_days, config.backtest.train_days, config.backtest.val_days,
               config.backtest.test_days);

  std::vector<WindowPredictions> logs(windows.size());
  std::vector<std::string> failures(windows.size());
  const int jobs = std::max(1, config.backtest.jobs);

#pragma omp parallel for schedule(dynamic) num_threads(jobs)
  for (std::int64_t wi = 0; wi < static_cast<std::int64_t>(windows.size()); ++wi) {
    const WindowTriple& w = windows[static_cast<std::size_t>(wi)];
    try {
      const synth::ProcessedWindow processed =
          synth::preprocess_window(series, w.bounds(), config.model.pca_variance,
                                   config.model.winsor_lo, config.model.winsor_hi);
      const model::WindowData data = model::build_window_data(series, processed);

      config::TrainConfig tcfg = config.train;
      tcfg.seed = SplitMix64::derive(config.seed, 1000 + w.id);
      model::ModelParams params = model::ModelParams::init(
          series.n_stocks, processed.stock_features[0].cols(),
          processed.industry_features[0].cols(), config.model, tcfg.seed);
      numerics::AdamState state = numerics::AdamState::init(params.tensors());
      model::train(params, state, data, config.model, tcfg);

      WindowPredictions& log = logs[static_cast<std::size_t>(wi)];
      log.window_id = w.id;
      for (std::size_t end : data.test_ends()) {
        log.days.push_back(end);
        log.preds.push_back(model::predict(params, data, config.model, tcfg.use_ss,
                                           tcfg.use_sis, end));
        log.realized.push_back(
            model::excess_return_target(data.prices, data.index_level, end));
      }
    } catch (const std::exception& e) {
      failures[static_cast<std::size_t>(wi)] =
          "window " + std::to_string(w.id) + ": " + e.what();
    }
  }

  for (const std::string& f : failures) {
    if (!f.empty()) throw std::runtime_error("backtest failed at " + f);
  }

  BacktestReport report;
  report.config_hash = config.hash();
  report.seed = config.seed;
  for (const WindowPredictions& log : logs) {
    report.rows.push_back(window_metrics(log, config.backtest.k_frac));
  }
  report.aggregate = aggregate_rows(report.rows);
  if (prediction_log != nullptr) *prediction_log = std::move(logs);
  return report;
}

BacktestReport metrics_from_predictions(const std::vector<WindowPredictions>& log,
                                        double k_frac, std::uint64_t config_hash,
                                        std::uint64_t seed) {
  BacktestReport report;
  report.config_hash = config_hash;
  report.seed = seed;
  for (const WindowPredictions& w : log) report.rows.push_back(window_metrics(w, k_frac));
  report.aggregate = aggregate_rows(report.rows);
  return report;
}

namespace {

json row_to_json(const MetricRow& r) {
  return json{{"window_id", r.window_id},
              {"ic", r.ic},
              {"ir", r.ir},
              {"cr", r.cr},
              {"precision_at_k", r.precision_at_k},
              {"ic_degenerate", r.ic_degenerate},
              {"ir_degenerate", r.ir_degenerate}};
}

MetricRow row_from_json(const json& j) {
  MetricRow r;
  r.window_id = j.at("window_id").get<std::size_t>();
  r.ic = j.at("ic").get<double>();
  r.ir = j.at("ir").get<double>();
  r.cr = j.at("cr").get<double>();
  r.precision_at_k = j.at("precision_at_k").get<double>();
  r.ic_degenerate = j.at("ic_degenerate").get<bool>();
  r.ir_degenerate = j.at("ir_degenerate").get<bool>();
  return r;
}

}  // namespace

std::string report_to_json(const BacktestReport& report) {
  json j;
  j["config_hash"] = report.config_hash;
  j["seed"] = report.seed;
  json rows = json::array();
  for (const MetricRow& r : report.rows) rows.push_back(row_to_json(r));
  j["windows"] = std::move(rows);
  j["aggregate"] = row_to_json(report.aggregate);
  return j.dump(2) + "\n";
}

BacktestReport report_from_json(const std::string& text) {
  const json j = json::parse(text);
  BacktestReport report;
  report.config_hash = j.at("config_hash").get<std::uint64_t>();
  report.seed = j.at("seed").get<std::uint64_t>();
  for (const json& r : j.at("windows")) report.rows.push_back(row_from_json(r));
  report.aggregate = row_from_json(j.at("aggregate"));
  return report;
}

std::string report_to_csv(const BacktestReport& report) {
  std::ostringstream os;
  os.precision(17);
  os << "window_id,ic,ir,cr,precision_at_k,ic_degenerate,ir_degenerate\n";
  auto line = [&](const std::string& id, const MetricRow& r) {
    os << id << ',' << r.ic << ',' << r.ir << ',' << r.cr << ',' << r.precision_at_k << ','
       << (r.ic_degenerate ? 1 : 0) << ',' << (r.ir_degenerate ? 1 : 0) << '\n';
  };
  for (const MetricRow& r : report.rows) line(std::to_string(r.window_id), r);
  line("aggregate", report.aggregate);
  return os.str();
}

std::string predictions_to_json(const std::vector<WindowPredictions>& log,
                                std::uint64_t config_hash, std::uint64_t seed) {
  json j;
  j["config_hash"] = config_hash;
  j["seed"] = seed;
  json windows = json::array();
  for (const WindowPredictions& w : log) {
    windows.push_back(json{{"window_id", w.window_id},
                           {"days", w.days},
                           {"preds", w.preds},
                           {"realized", w.realized}});
  }
  j["windows"] = std::move(windows);
  return j.dump(2) + "\n";
}

std::vector<WindowPredictions> predictions_from_json(const std::string& text,
                                                     std::uint64_t* config_hash,
                                                     std::uint64_t* seed) {
  const json j = json::parse(text);
  if (config_hash != nullptr) *config_hash = j.at("config_hash").get<std::uint64_t>();
  if (seed != nullptr) *seed = j.at("seed").get<std::uint64_t>();
  std::vector<WindowPredictions> out;
  for (const json& w : j.at("windows")) {
    WindowPredictions wp;
    wp.window_id = w.at("window_id").get<std::size_t>();
    wp.days = w.at("days").get<std::vector<std::size_t>>();
    wp.preds = w.at("preds").get<std::vector<std::vector<double>>>();
    wp.realized = w.at("realized").get<std::vector<std::vector<double>>>();
    out.push_back(std::move(wp));
  }
  return out;
}

namespace {

json delta_entry(const char* name, double old_value, double new_value) {
  json e;
  e["metric"] = name;
  e["ss_only"] = old_value;
  e["ss_sis"] = new_value;
  e["absolute_delta"] = new_value - old_value;
  if (std::abs(old_value) > 0.0) {
    e["relative_delta"] = (new_value - old_value) / std::abs(old_value);
  } else {
    e["relative_delta"] = nullptr;
  }
  return e;
}

}  // namespace

std::string ablation_delta_json(const BacktestReport& ss_only, const BacktestReport& both) {
  json j;
  j["comparison"] = "SS+SIS vs SS";
  j["note"] = "relative_delta = (new - old) / |old|";
  json metrics = json::array();
  metrics.push_back(delta_entry("ic", ss_only.aggregate.ic, both.aggregate.ic));
  metrics.push_back(delta_entry("ir", ss_only.aggregate.ir, both.aggregate.ir));
  metrics.push_back(delta_entry("cr", ss_only.aggregate.cr, both.aggregate.cr));
  metrics.push_back(delta_entry("precision_at_k", ss_only.aggregate.precision_at_k,
                                both.aggregate.precision_at_k));
  j["metrics"] = std::move(metrics);
  return j.dump(2) + "\n";
}

std::string ablation_delta_csv(const BacktestReport& ss_only, const BacktestReport& both) {
  std::ostringstream os;
  os.precision(17);
  os << "metric,ss_only,ss_sis,absolute_delta,relative_delta\n";
  auto line = [&](const char* name, double a, double b) {
    os << name << ',' << a << ',' << b << ',' << b - a << ',';
    if (std::abs(a) > 0.0) {
      os << (b - a) / std::abs(a);
    } else {
      os << "nan";
    }
    os << '\n';
  };
  line("ic", ss_only.aggregate.ic, both.aggregate.ic);
  line("ir", ss_only.aggregate.ir, both.aggregate.ir);
  line("cr", ss_only.aggregate.cr, both.aggregate.cr);
  line("precision_at_k", ss_only.aggregate.precision_at_k, both.aggregate.precision_at_k);
  return os.str();
}

std::string report_svg(const BacktestReport& report, const std::string& metric) {
  auto pick = [&](const MetricRow& r) {
    if (metric == "ic") return r.ic;
    if (metric == "ir") return r.ir;
    if (metric == "cr") return r.cr;
    if (metric == "precision_at_k") return r.precision_at_k;
    throw std::invalid_argument("report_svg: unknown metric " + metric);
  };
  const std::size_t n = report.rows.size();
  double lo = 0.0, hi = 0.0;
  for (const MetricRow& r : report.rows) {
    lo = std::min(lo, pick(r));
    hi = std::max(hi, pick(r));
  }
  if (hi == lo) hi = lo + 1.0;

  const double width = 80.0, gap = 20.0, plot_h = 240.0, base_y = 280.0;
  std::ostringstream os;
  os.precision(6);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\""
     << n * (width + gap) + gap << "\" height=\"340\">\n";
  os << "<text x=\"10\" y=\"20\" font-size=\"16\">" << metric << " per window</text>\n";
  const double zero_y = base_y - (0.0 - lo) / (hi - lo) * plot_h;
  os << "<line x1=\"0\" y1=\"" << zero_y << "\" x2=\"" << n * (width + gap) + gap << "\" y2=\""
     << zero_y << "\" stroke=\"#999\"/>\n";
  for (std::size_t i = 0; i < n; ++i) {
    const double v = pick(report.rows[i]);
    const double y = base_y - (v - lo) / (hi - lo) * plot_h;
    const double top = std::min(y, zero_y);
    const double h = std::max(1.0, std::abs(zero_y - y));
    os << "<rect x=\"" << gap + i * (width + gap) << "\" y=\"" << top << "\" width=\"" << width
       << "\" height=\"" << h << "\" fill=\"" << (v >= 0 ? "#4477aa" : "#cc6677") << "\"/>\n";
    os << "<text x=\"" << gap + i * (width + gap) << "\" y=\"" << base_y + 20
       << "\" font-size=\"12\">w" << report.rows[i].window_id << ": " << v << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace omni::backtest
