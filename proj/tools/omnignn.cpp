// omnignn: synthetic market generation, training, rolling backtests and
// metapath ablation from a single JSON config.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "omni/backtest.hpp"
#include "omni/config.hpp"
#include "omni/model.hpp"
#include "omni/synthdata.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using omni::config::RunConfig;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const std::string& path, const std::string& content) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << content;
  if (!out) throw std::runtime_error("write failed: " + path);
}

// command-line overrides of config-file fields
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> stocks;
  std::optional<std::size_t> days;
  std::optional<double> factor_strength;

  void attach(CLI::App* cmd) {
    cmd->add_option("--seed", seed, "override config seed");
    cmd->add_option("--stocks", stocks, "override data.n_stocks");
    cmd->add_option("--days", days, "override data.n_days");
    cmd->add_option("--factor-strength", factor_strength, "override data.factor_strength");
  }
};

RunConfig load_config(const std::string& path, const Overrides& ov) {
  json doc = json::object();
  if (!path.empty()) {
    try {
      doc = json::parse(read_file(path));
    } catch (const json::exception& e) {
      throw ConfigError(std::string("config errors:\n  - invalid JSON: ") + e.what());
    }
  }
  if (ov.seed) doc["seed"] = *ov.seed;
  if (ov.stocks) doc["data"]["n_stocks"] = *ov.stocks;
  if (ov.days) doc["data"]["n_days"] = *ov.days;
  if (ov.factor_strength) doc["data"]["factor_strength"] = *ov.factor_strength;

  RunConfig cfg;
  try {
    cfg = omni::config::parse_run_config(doc.dump());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (const char* env = std::getenv("OMNIGNN_SEED")) {
    try {
      cfg.seed = std::stoull(env);
    } catch (const std::exception&) {
      throw ConfigError("OMNIGNN_SEED is not an integer: " + std::string(env));
    }
    cfg.data.seed = cfg.seed;
    cfg.train.seed = cfg.seed;
  }
  return cfg;
}

omni::synth::MarketSeries load_or_generate(const RunConfig& cfg, const std::string& data_dir) {
  if (data_dir.empty()) return omni::synth::generate(cfg.data);

  const fs::path manifest_path = fs::path(data_dir) / "manifest.json";
  const json manifest = json::parse(read_file(manifest_path.string()));
  if (manifest.at("schema").get<std::string>() != "v1") {
    throw ConfigError("unsupported snapshot manifest schema in " + manifest_path.string());
  }
  std::vector<omni::graph::SnapshotInputs> days;
  for (const json& f : manifest.at("files")) {
    const fs::path day_path = fs::path(data_dir) / f.get<std::string>();
    days.push_back(omni::graph::snapshot_inputs_from_json(read_file(day_path.string())));
  }
  return omni::synth::series_from_day_inputs(days);
}

int cmd_gen(const RunConfig& cfg, const std::string& out_dir) {
  const omni::synth::MarketSeries series = omni::synth::generate(cfg.data);
  fs::create_directories(out_dir);

  json files = json::array();
  for (std::size_t d = 0; d < series.n_days; ++d) {
    char name[32];
    std::snprintf(name, sizeof(name), "day_%05zu.json", d);
    write_file((fs::path(out_dir) / name).string(),
               omni::graph::snapshot_inputs_to_json(omni::synth::day_inputs(series, d)));
    files.push_back(name);
  }
  json manifest;
  manifest["schema"] = "v1";
  manifest["config_hash"] = cfg.hash();
  manifest["seed"] = cfg.seed;
  manifest["n_stocks"] = series.n_stocks;
  manifest["n_days"] = series.n_days;
  manifest["files"] = std::move(files);
  write_file((fs::path(out_dir) / "manifest.json").string(), manifest.dump(2) + "\n");

  std::cout << "wrote " << series.n_days << " snapshots to " << out_dir << "\n";
  return 0;
}

int cmd_train(const RunConfig& cfg, const std::string& data_dir, const std::string& out_path,
              std::size_t window_index) {
  const omni::synth::MarketSeries series = load_or_generate(cfg, data_dir);
  const auto windows = omni::backtest::schedule(series.n_days, cfg.backtest.train_days,
                                                cfg.backtest.val_days, cfg.backtest.test_days);
  if (window_index >= windows.size()) {
    throw ConfigError("window " + std::to_string(window_index) + " out of range; schedule has " +
                      std::to_string(windows.size()) + " windows");
  }
  const omni::backtest::WindowTriple& w = windows[window_index];
  const omni::synth::ProcessedWindow processed = omni::synth::preprocess_window(
      series, w.bounds(), cfg.model.pca_variance, cfg.model.winsor_lo, cfg.model.winsor_hi);
  const omni::model::WindowData data = omni::model::build_window_data(series, processed);

  omni::config::TrainConfig tcfg = cfg.train;
  tcfg.seed = omni::numerics::SplitMix64::derive(cfg.seed, 1000 + w.id);
  omni::model::ModelParams params = omni::model::ModelParams::init(
      series.n_stocks, processed.stock_features[0].cols(), processed.industry_features[0].cols(),
      cfg.model, tcfg.seed);
  omni::numerics::AdamState state = omni::numerics::AdamState::init(params.tensors());
  const omni::model::TrainResult result =
      omni::model::train(params, state, data, cfg.model, tcfg);

  omni::model::Checkpoint ckpt;
  ckpt.config_hash = cfg.hash();
  ckpt.window_index = w.id;
  ckpt.bounds = w.bounds();
  ckpt.epoch = result.best_epoch;
  ckpt.n_stocks = series.n_stocks;
  ckpt.feat_dim = processed.stock_features[0].cols();
  ckpt.industry_dim = processed.industry_features[0].cols();
  ckpt.use_ss = tcfg.use_ss;
  ckpt.use_sis = tcfg.use_sis;
  ckpt.params = std::move(params);
  ckpt.adam = std::move(state);
  if (fs::path(out_path).has_parent_path()) {
    fs::create_directories(fs::path(out_path).parent_path());
  }
  omni::model::save_checkpoint(out_path, ckpt);

  std::cout << "trained window " << w.id << ": best epoch " << result.best_epoch
            << ", validation mse " << result.best_val << ", checkpoint " << out_path << "\n";
  return 0;
}

void emit_report(const omni::backtest::BacktestReport& report,
                 const std::vector<omni::backtest::WindowPredictions>& log,
                 const std::string& out_path, const std::string& csv_path,
                 const std::string& svg_dir, const std::string& predictions_path) {
  write_file(out_path, omni::backtest::report_to_json(report));
  if (!csv_path.empty()) write_file(csv_path, omni::backtest::report_to_csv(report));
  if (!svg_dir.empty()) {
    for (const char* metric : {"ic", "ir", "cr", "precision_at_k"}) {
      write_file((fs::path(svg_dir) / (std::string(metric) + ".svg")).string(),
                 omni::backtest::report_svg(report, metric));
    }
  }
  if (!predictions_path.empty()) {
    write_file(predictions_path,
               omni::backtest::predictions_to_json(log, report.config_hash, report.seed));
  }
}

int cmd_backtest(const RunConfig& cfg, const std::string& data_dir, const std::string& out_path,
                 const std::string& csv_path, const std::string& svg_dir,
                 const std::string& predictions_path, bool train_inline,
                 const std::string& checkpoint_path, bool metrics_only,
                 const std::string& metrics_predictions) {
  if (metrics_only) {
    if (metrics_predictions.empty()) {
      throw ConfigError("--metrics-only requires --predictions-in");
    }
    std::uint64_t hash = 0, seed = 0;
    const auto log =
        omni::backtest::predictions_from_json(read_file(metrics_predictions), &hash, &seed);
    const omni::backtest::BacktestReport report =
        omni::backtest::metrics_from_predictions(log, cfg.backtest.k_frac, hash, seed);
    emit_report(report, log, out_path, csv_path, svg_dir, predictions_path);
    std::cout << "recomputed metrics for " << report.rows.size() << " windows\n";
    return 0;
  }

  const omni::synth::MarketSeries series = load_or_generate(cfg, data_dir);

  if (!train_inline && checkpoint_path.empty()) {
    throw ConfigError("backtest needs --train-inline or --checkpoint");
  }

  if (train_inline) {
    std::vector<omni::backtest::WindowPredictions> log;
    const omni::backtest::BacktestReport report =
        omni::backtest::run_backtest(series, cfg, &log);
    emit_report(report, log, out_path, csv_path, svg_dir, predictions_path);
    std::cout << "backtest: " << report.rows.size() << " windows, mean ic "
              << report.aggregate.ic << ", mean cr " << report.aggregate.cr << "\n";
    return 0;
  }

  // saved-model evaluation on the checkpoint's own window
  const omni::model::Checkpoint ckpt =
      omni::model::load_checkpoint(checkpoint_path, cfg.model);
  if (ckpt.config_hash != cfg.hash()) {
    throw ConfigError("checkpoint was produced under a different config (hash mismatch)");
  }
  const omni::synth::ProcessedWindow processed = omni::synth::preprocess_window(
      series, ckpt.bounds, cfg.model.pca_variance, cfg.model.winsor_lo, cfg.model.winsor_hi);
  const omni::model::WindowData data = omni::model::build_window_data(series, processed);
  omni::backtest::WindowPredictions log;
  log.window_id = ckpt.window_index;
  for (std::size_t end : data.test_ends()) {
    log.days.push_back(end);
    log.preds.push_back(omni::model::predict(ckpt.params, data, cfg.model, ckpt.use_ss,
                                             ckpt.use_sis, end));
    log.realized.push_back(
        omni::model::excess_return_target(data.prices, data.index_level, end));
  }
  const std::vector<omni::backtest::WindowPredictions> logs = {log};
  const omni::backtest::BacktestReport report = omni::backtest::metrics_from_predictions(
      logs, cfg.backtest.k_frac, cfg.hash(), cfg.seed);
  emit_report(report, logs, out_path, csv_path, svg_dir, predictions_path);
  std::cout << "evaluated checkpoint window " << ckpt.window_index << ": ic "
            << report.aggregate.ic << "\n";
  return 0;
}

int cmd_ablate(const RunConfig& cfg, const std::string& data_dir, const std::string& out_dir) {
  const omni::synth::MarketSeries series = load_or_generate(cfg, data_dir);
  fs::create_directories(out_dir);

  RunConfig both = cfg;
  both.train.use_ss = true;
  both.train.use_sis = true;
  RunConfig ss_only = cfg;
  ss_only.train = omni::config::ablate(both.train, omni::graph::Metapath::SIS);

  std::vector<omni::backtest::WindowPredictions> log_both, log_ss;
  const omni::backtest::BacktestReport report_both =
      omni::backtest::run_backtest(series, both, &log_both);
  const omni::backtest::BacktestReport report_ss =
      omni::backtest::run_backtest(series, ss_only, &log_ss);

  write_file((fs::path(out_dir) / "report_ss_sis.json").string(),
             omni::backtest::report_to_json(report_both));
  write_file((fs::path(out_dir) / "report_ss.json").string(),
             omni::backtest::report_to_json(report_ss));
  write_file((fs::path(out_dir) / "delta.json").string(),
             omni::backtest::ablation_delta_json(report_ss, report_both));
  write_file((fs::path(out_dir) / "delta.csv").string(),
             omni::backtest::ablation_delta_csv(report_ss, report_both));

  std::cout << "ablation: ic " << report_ss.aggregate.ic << " (SS) vs "
            << report_both.aggregate.ic << " (SS+SIS); reports in " << out_dir << "\n";
  return 0;
}

int cmd_report(const std::string& predictions_path, double k_frac, const std::string& out_path,
               const std::string& csv_path, const std::string& svg_dir) {
  std::uint64_t hash = 0, seed = 0;
  const auto log =
      omni::backtest::predictions_from_json(read_file(predictions_path), &hash, &seed);
  const omni::backtest::BacktestReport report =
      omni::backtest::metrics_from_predictions(log, k_frac, hash, seed);
  emit_report(report, log, out_path, csv_path, svg_dir, "");
  std::cout << "report over " << report.rows.size() << " windows: mean ic "
            << report.aggregate.ic << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"OmniGNN: metapath graph attention + ALiBi temporal encoder for daily "
               "excess-return prediction over synthetic market data"};
  app.require_subcommand(1);

  std::string config_path, data_dir, out_path, csv_path, svg_dir, predictions_path;
  std::string checkpoint_path, metrics_predictions;
  std::size_t window_index = 0;
  bool train_inline = false, metrics_only = false;
  int jobs = 0;
  double k_frac = 0.3;

  Overrides overrides;

  CLI::App* gen = app.add_subcommand("gen", "generate snapshot files from the config");
  gen->add_option("--config", config_path, "run config JSON (defaults apply if omitted)");
  gen->add_option("--out", out_path, "output directory")->required();
  overrides.attach(gen);

  CLI::App* train = app.add_subcommand("train", "train one rolling window, save a checkpoint");
  train->add_option("--config", config_path, "run config JSON")->required();
  train->add_option("--data", data_dir, "snapshot directory (default: generate from config)");
  train->add_option("--out", out_path, "checkpoint path")->required();
  train->add_option("--window", window_index, "window index in the schedule");
  overrides.attach(train);

  CLI::App* bt = app.add_subcommand("backtest", "rolling-window backtest");
  bt->add_option("--config", config_path, "run config JSON")->required();
  bt->add_option("--data", data_dir, "snapshot directory (default: generate from config)");
  bt->add_option("--out", out_path, "report JSON path")->required();
  bt->add_option("--csv", csv_path, "also write a CSV report");
  bt->add_option("--svg", svg_dir, "also write per-metric SVG charts");
  bt->add_option("--predictions", predictions_path, "also write raw predictions JSON");
  bt->add_flag("--train-inline", train_inline, "train a model per window");
  bt->add_option("--checkpoint", checkpoint_path, "evaluate a saved checkpoint instead");
  bt->add_flag("--metrics-only", metrics_only, "recompute metrics from saved predictions");
  bt->add_option("--predictions-in", metrics_predictions, "saved predictions for --metrics-only");
  bt->add_option("--jobs", jobs, "parallel windows (overrides config)");
  overrides.attach(bt);

  CLI::App* ablate = app.add_subcommand("ablate", "paired SS vs SS+SIS backtests");
  ablate->add_option("--config", config_path, "run config JSON")->required();
  ablate->add_option("--data", data_dir, "snapshot directory (default: generate from config)");
  ablate->add_option("--out", out_path, "output directory")->required();
  ablate->add_option("--jobs", jobs, "parallel windows (overrides config)");
  overrides.attach(ablate);

  CLI::App* report = app.add_subcommand("report", "recompute metrics from saved predictions");
  report->add_option("--predictions", predictions_path, "predictions JSON")->required();
  report->add_option("--out", out_path, "report JSON path")->required();
  report->add_option("--csv", csv_path, "also write a CSV report");
  report->add_option("--svg", svg_dir, "also write per-metric SVG charts");
  report->add_option("--k-frac", k_frac, "top-k fraction for portfolio metrics");

  CLI11_PARSE(app, argc, argv);

  try {
    if (report->parsed()) {
      return cmd_report(predictions_path, k_frac, out_path, csv_path, svg_dir);
    }
    RunConfig cfg = load_config(config_path, overrides);
    if (jobs > 0) cfg.backtest.jobs = jobs;
    if (gen->parsed()) return cmd_gen(cfg, out_path);
    if (train->parsed()) return cmd_train(cfg, data_dir, out_path, window_index);
    if (bt->parsed()) {
      return cmd_backtest(cfg, data_dir, out_path, csv_path, svg_dir, predictions_path,
                          train_inline, checkpoint_path, metrics_only, metrics_predictions);
    }
    if (ablate->parsed()) return cmd_ablate(cfg, data_dir, out_path);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
