#include "omni/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "omni/rng.hpp"

namespace omni::synth {

using numerics::SplitMix64;

namespace {

constexpr double kFactorVol = 0.01;  // daily industry-factor volatility
constexpr double kIdioVol = 0.01;    // daily idiosyncratic volatility
constexpr double kPlantedNoise = 1.0;  // noise-to-signal scale on planted channels

}  // namespace

void UniverseSpec::validate() const {
  std::ostringstream os;
  bool bad = false;
  auto fail = [&](const std::string& msg) {
    os << (bad ? "; " : "") << msg;
    bad = true;
  };
  if (n_stocks < 2) fail("n_stocks must be >= 2");
  if (n_days < 60) fail("n_days must be >= 60");
  if (factor_strength < 0.0 || factor_strength > 1.0) fail("factor_strength must be in [0,1]");
  if (n_raw_features < 1) fail("n_raw_features must be >= 1");
  if (n_holders < 1) fail("n_holders must be >= 1");
  if (shock.scale <= 0.0) fail("shock.scale must be > 0");
  if (bad) throw std::invalid_argument("universe spec: " + os.str());
}

MarketSeries generate(const UniverseSpec& spec) {
  spec.validate();
  const std::size_t n = spec.n_stocks;
  const std::size_t days = spec.n_days;
  const std::size_t nf = spec.n_raw_features;
  const double fs = spec.factor_strength;
  SplitMix64 rng(spec.seed);

  MarketSeries s;
  s.n_stocks = n;
  s.n_days = days;
  s.n_raw_features = nf;

  // static structure: classification codes, factor loadings, holder universe
  for (std::size_t i = 0; i < n; ++i) {
    const int group = 4510 + 10 * static_cast<int>(i % 3);
    const int industry = group * 100 + 10;
    const int sub = industry * 100 + 10 + 10 * static_cast<int>((i / 3) % 2);
    s.gics.emplace_back(45, group, industry, sub);
  }

  std::vector<double> beta(n);
  for (std::size_t i = 0; i < n; ++i) beta[i] = rng.uniform(0.5, 1.5);

  std::vector<std::vector<std::pair<int, double>>> holder_base(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < spec.n_holders; ++k) {
      const bool active = rng.next_double() < 0.4;
      const double w = rng.uniform(0.01, 0.10);
      if (active) holder_base[i].emplace_back(static_cast<int>(k), w);
    }
    if (holder_base[i].empty()) {
      holder_base[i].emplace_back(static_cast<int>(i % spec.n_holders), rng.uniform(0.01, 0.10));
    }
  }

  std::vector<double> revenue_base(n);
  for (std::size_t i = 0; i < n; ++i) revenue_base[i] = rng.uniform(1.0, 10.0);

  std::vector<double> price0(n);
  for (std::size_t i = 0; i < n; ++i) price0[i] = rng.uniform(20.0, 200.0);

  // shock paths drawn up front so planted channels can look one step ahead
  std::vector<double> factor(days, 0.0);
  std::vector<std::vector<double>> idio(days, std::vector<double>(n, 0.0));
  std::vector<double> index_noise(days, 0.0);
  for (std::size_t t = 0; t < days; ++t) {
    double vol = kFactorVol;
    if (spec.shock.start >= 0 && static_cast<int>(t) >= spec.shock.start &&
        static_cast<int>(t) < spec.shock.start + spec.shock.length) {
      vol *= spec.shock.scale;
    }
    factor[t] = vol * rng.gaussian();
    for (std::size_t i = 0; i < n; ++i) idio[t][i] = kIdioVol * rng.gaussian();
    index_noise[t] = 0.005 * rng.gaussian();
  }

  // log-return mix and price paths
  s.prices = Tensor::zeros({days, n});
  s.index_level.assign(days, 0.0);
  double index = 100.0;
  std::vector<double> price = price0;
  std::vector<std::vector<double>> log_ret(days, std::vector<double>(n, 0.0));
  for (std::size_t t = 0; t < days; ++t) {
    if (t > 0) {
      for (std::size_t i = 0; i < n; ++i) {
        log_ret[t][i] = fs * beta[i] * factor[t] + (1.0 - fs) * idio[t][i];
        price[i] *= std::exp(log_ret[t][i]);
      }
      index *= std::exp(0.3 * fs * factor[t] + index_noise[t]);
    }
    for (std::size_t i = 0; i < n; ++i) s.prices.at2(t, i) = price[i];
    s.index_level[t] = index;
  }

  // slow-moving per-stock processes
  s.revenues = Tensor::zeros({days, n});
  s.esg = Tensor::zeros({days, n});
  std::vector<double> rev = revenue_base;
  std::vector<double> esg(n);
  for (std::size_t i = 0; i < n; ++i) esg[i] = rng.uniform(40.0, 80.0);
  std::vector<double> sentiment(n, 0.0), valuation(n, 0.0);
  std::vector<double> ind_ar(2, 0.0);

  s.holders.resize(days);
  s.raw_features.reserve(days);
  s.industry_features.reserve(days);

  for (std::size_t t = 0; t < days; ++t) {
    if (t > 0 && t % 63 == 0) {  // quarterly revenue refresh
      for (std::size_t i = 0; i < n; ++i) rev[i] *= std::exp(rng.uniform(-0.05, 0.05));
    }
    for (std::size_t i = 0; i < n; ++i) {
      esg[i] = 0.97 * esg[i] + 0.03 * rng.uniform(40.0, 80.0);
      sentiment[i] = 0.9 * sentiment[i] + 0.1 * rng.gaussian();
      valuation[i] = 0.95 * valuation[i] + 0.05 * rng.gaussian();
      s.revenues.at2(t, i) = rev[i];
      s.esg.at2(t, i) = esg[i];
    }
    for (double& a : ind_ar) a = 0.9 * a + 0.1 * rng.gaussian();

    HolderTable table;
    table.rows.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (const auto& [id, w] : holder_base[i]) {
        const double drift = 1.0 + 0.1 * std::sin(0.01 * static_cast<double>(t) +
                                                  static_cast<double>(id));
        table.rows[i][id] = w * drift;
      }
    }
    s.holders[t] = std::move(table);

    // planted channels look one and two steps ahead of the current day
    Tensor feats = Tensor::zeros({n, nf});
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> chan;
      const double idio1 = t + 1 < days ? idio[t + 1][i] : 0.0;
      const double idio2 = t + 2 < days ? idio[t + 2][i] : 0.0;
      chan.push_back((1.0 - fs) * (idio1 + kPlantedNoise * kIdioVol * rng.gaussian()));
      chan.push_back((1.0 - fs) * (idio2 + kPlantedNoise * kIdioVol * rng.gaussian()));
      chan.push_back(log_ret[t][i]);  // momentum
      double mean5 = 0.0, vol5 = 0.0;
      const std::size_t lag = std::min<std::size_t>(t, 5);
      for (std::size_t u = 1; u <= lag; ++u) mean5 += log_ret[t - u + 1][i];
      if (lag > 0) mean5 /= static_cast<double>(lag);
      for (std::size_t u = 1; u <= lag; ++u) {
        const double d = log_ret[t - u + 1][i] - mean5;
        vol5 += d * d;
      }
      chan.push_back(mean5);
      chan.push_back(lag > 1 ? std::sqrt(vol5 / static_cast<double>(lag - 1)) : 0.0);
      chan.push_back(sentiment[i]);
      chan.push_back(valuation[i]);
      while (chan.size() < nf) chan.push_back(rng.gaussian());
      for (std::size_t j = 0; j < nf; ++j) feats.at2(i, j) = chan[j];
    }
    s.raw_features.push_back(std::move(feats));

    const double factor1 = t + 1 < days ? factor[t + 1] : 0.0;
    Tensor ind = Tensor::zeros({1, kIndustryFeatureCount});
    ind.at2(0, 0) = factor1 + kPlantedNoise * kFactorVol * rng.gaussian();
    ind.at2(0, 1) = fs * factor[t] + index_noise[t];  // sector ETF-style return
    ind.at2(0, 2) = ind_ar[0];
    ind.at2(0, 3) = ind_ar[1];
    s.industry_features.push_back(std::move(ind));
  }

  return s;
}

SnapshotInputs day_inputs(const MarketSeries& series, std::size_t day) {
  if (day >= series.n_days) throw std::out_of_range("day_inputs: day out of range");
  SnapshotInputs in;
  in.date = static_cast<int>(day);
  in.tickers.reserve(series.n_stocks);
  for (std::size_t i = 0; i < series.n_stocks; ++i) in.tickers.push_back("S" + std::to_string(i));
  in.gics = series.gics;
  in.holders = series.holders[day];
  in.revenues.resize(series.n_stocks);
  in.esg.resize(series.n_stocks);
  in.prices.resize(series.n_stocks);
  for (std::size_t i = 0; i < series.n_stocks; ++i) {
    in.revenues[i] = series.revenues.at2(day, i);
    in.esg[i] = series.esg.at2(day, i);
    in.prices[i] = series.prices.at2(day, i);
  }
  in.stock_features = series.raw_features[day];
  in.industry_features = series.industry_features[day];
  in.index_level = series.index_level[day];
  return in;
}

MarketSeries series_from_day_inputs(const std::vector<SnapshotInputs>& days) {
  if (days.empty()) throw std::invalid_argument("series_from_day_inputs: no days");
  const std::size_t n = days[0].gics.size();
  const std::size_t nd = days.size();
  const std::size_t nf = days[0].stock_features.cols();

  MarketSeries s;
  s.n_stocks = n;
  s.n_days = nd;
  s.n_raw_features = nf;
  s.gics = days[0].gics;
  s.prices = Tensor::zeros({nd, n});
  s.revenues = Tensor::zeros({nd, n});
  s.esg = Tensor::zeros({nd, n});
  s.index_level.resize(nd);
  s.holders.resize(nd);

  for (std::size_t d = 0; d < nd; ++d) {
    const SnapshotInputs& in = days[d];
    if (in.gics.size() != n || in.stock_features.rows() != n ||
        in.stock_features.cols() != nf || in.prices.size() != n ||
        in.holders.rows.size() != n) {
      throw std::invalid_argument("series_from_day_inputs: inconsistent day " +
                                  std::to_string(d));
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (!(in.prices[i] > 0.0)) {
        throw std::invalid_argument("series_from_day_inputs: nonpositive price, day " +
                                    std::to_string(d) + " stock " + std::to_string(i));
      }
      const bool rev_ok = i < in.revenues.size() && std::isfinite(in.revenues[i]);
      const bool esg_ok = i < in.esg.size() && std::isfinite(in.esg[i]);
      if (!rev_ok || !esg_ok) {
        const std::string name = i < in.tickers.size() ? in.tickers[i] : std::to_string(i);
        throw std::invalid_argument("series_from_day_inputs: missing revenue/ESG on day " +
                                    std::to_string(d) + " for stock " + name);
      }
      s.prices.at2(d, i) = in.prices[i];
      s.revenues.at2(d, i) = in.revenues[i];
      s.esg.at2(d, i) = in.esg[i];
    }
    if (!(in.index_level > 0.0)) {
      throw std::invalid_argument("series_from_day_inputs: nonpositive index level, day " +
                                  std::to_string(d));
    }
    s.index_level[d] = in.index_level;
    s.holders[d] = in.holders;
    s.raw_features.push_back(in.stock_features);
    s.industry_features.push_back(in.industry_features);
  }
  return s;
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("quantile: empty input");
  std::sort(values.begin(), values.end());
  if (q <= 0.0) return values.front();
  if (q >= 1.0) return values.back();
  const double pos = q * static_cast<double>(values.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const double frac = pos - static_cast<double>(lo);
  if (lo + 1 >= values.size()) return values.back();
  return values[lo] * (1.0 - frac) + values[lo + 1] * frac;
}

Tensor winsorize(const Tensor& column, double lo_pct, double hi_pct) {
  if (!(0.0 <= lo_pct && lo_pct < hi_pct && hi_pct <= 1.0)) {
    throw std::invalid_argument("winsorize: need 0 <= lower < upper <= 1");
  }
  std::vector<double> vals(column.data());
  const double lo = quantile(vals, lo_pct);
  const double hi = quantile(vals, hi_pct);
  Tensor out = column;
  for (std::size_t i = 0; i < out.numel(); ++i) out.at(i) = std::clamp(out.at(i), lo, hi);
  return out;
}

ColumnStats fit_column(const std::vector<double>& train_values, double lo_pct, double hi_pct) {
  if (train_values.size() < 2) throw std::invalid_argument("fit_column: need >= 2 samples");
  ColumnStats s;
  double mu = 0.0;
  for (double v : train_values) mu += v;
  mu /= static_cast<double>(train_values.size());
  double var = 0.0;
  for (double v : train_values) var += (v - mu) * (v - mu);
  var /= static_cast<double>(train_values.size() - 1);
  s.mean = mu;
  if (var <= 1e-24) {
    s.dropped = true;
    s.stddev = 1.0;
    return s;
  }
  s.stddev = std::sqrt(var);
  std::vector<double> z(train_values.size());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = (train_values[i] - mu) / s.stddev;
  s.lo = quantile(z, lo_pct);
  s.hi = quantile(z, hi_pct);
  return s;
}

double apply_column(const ColumnStats& s, double x) {
  const double z = (x - s.mean) / s.stddev;
  return std::clamp(z, s.lo, s.hi);
}

std::vector<double> zscore(const std::vector<double>& values, const ColumnStats& stats) {
  if (stats.dropped) {
    throw std::invalid_argument("zscore: column was dropped for zero training variance");
  }
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - stats.mean) / stats.stddev;
  return out;
}

ProcessedWindow preprocess_window(const MarketSeries& series, const WindowBounds& bounds,
                                  double variance_target, double lo_pct, double hi_pct) {
  if (!(bounds.train_begin < bounds.train_end && bounds.train_end < bounds.val_end &&
        bounds.val_end < bounds.test_end && bounds.test_end <= series.n_days)) {
    throw std::invalid_argument("preprocess_window: bounds outside series");
  }
  const std::size_t n = series.n_stocks;
  const std::size_t nf = series.n_raw_features;
  const std::size_t train_days = bounds.train_end - bounds.train_begin;
  const std::size_t all_days = bounds.test_end - bounds.train_begin;

  ProcessedWindow out;
  out.bounds = bounds;

  // fit stock columns on the training slice (sample = day x stock)
  std::vector<std::size_t> kept_cols;
  out.pipeline.stock_cols.resize(nf);
  for (std::size_t j = 0; j < nf; ++j) {
    std::vector<double> train_vals;
    train_vals.reserve(train_days * n);
    for (std::size_t d = bounds.train_begin; d < bounds.train_end; ++d)
      for (std::size_t i = 0; i < n; ++i) train_vals.push_back(series.raw_features[d].at2(i, j));
    out.pipeline.stock_cols[j] = fit_column(train_vals, lo_pct, hi_pct);
    if (!out.pipeline.stock_cols[j].dropped) kept_cols.push_back(j);
  }
  if (kept_cols.empty()) {
    throw std::invalid_argument("preprocess_window: every stock feature column is constant");
  }

  // normalize + winsorize, then PCA fit on the training block
  Tensor train_block = Tensor::zeros({train_days * n, kept_cols.size()});
  for (std::size_t d = bounds.train_begin; d < bounds.train_end; ++d) {
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t r = (d - bounds.train_begin) * n + i;
      for (std::size_t c = 0; c < kept_cols.size(); ++c) {
        train_block.at2(r, c) =
            apply_column(out.pipeline.stock_cols[kept_cols[c]],
                         series.raw_features[d].at2(i, kept_cols[c]));
      }
    }
  }
  auto [train_proj, pca] = numerics::pca_fit_transform(train_block, variance_target);
  out.pipeline.pca = pca;
  (void)train_proj;

  out.stock_features.reserve(all_days);
  for (std::size_t d = bounds.train_begin; d < bounds.test_end; ++d) {
    Tensor block = Tensor::zeros({n, kept_cols.size()});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < kept_cols.size(); ++c)
        block.at2(i, c) = apply_column(out.pipeline.stock_cols[kept_cols[c]],
                                       series.raw_features[d].at2(i, kept_cols[c]));
    out.stock_features.push_back(numerics::pca_transform(out.pipeline.pca, block));
  }

  // industry columns: normalize + winsorize only
  const std::size_t fi = kIndustryFeatureCount;
  out.pipeline.industry_cols.resize(fi);
  std::vector<std::size_t> kept_ind;
  for (std::size_t j = 0; j < fi; ++j) {
    std::vector<double> train_vals;
    train_vals.reserve(train_days);
    for (std::size_t d = bounds.train_begin; d < bounds.train_end; ++d)
      train_vals.push_back(series.industry_features[d].at2(0, j));
    out.pipeline.industry_cols[j] = fit_column(train_vals, lo_pct, hi_pct);
    if (!out.pipeline.industry_cols[j].dropped) kept_ind.push_back(j);
  }
  if (kept_ind.empty()) {
    throw std::invalid_argument("preprocess_window: every industry feature column is constant");
  }
  out.industry_features.reserve(all_days);
  for (std::size_t d = bounds.train_begin; d < bounds.test_end; ++d) {
    Tensor block = Tensor::zeros({1, kept_ind.size()});
    for (std::size_t c = 0; c < kept_ind.size(); ++c)
      block.at2(0, c) = apply_column(out.pipeline.industry_cols[kept_ind[c]],
                                     series.industry_features[d].at2(0, kept_ind[c]));
    out.industry_features.push_back(std::move(block));
  }

  // governance bounds from the training slice
  double lo = series.esg.at2(bounds.train_begin, 0), hi = lo;
  for (std::size_t d = bounds.train_begin; d < bounds.train_end; ++d) {
    for (std::size_t i = 0; i < n; ++i) {
      lo = std::min(lo, series.esg.at2(d, i));
      hi = std::max(hi, series.esg.at2(d, i));
    }
  }
  out.pipeline.esg_lo = lo;
  out.pipeline.esg_hi = hi;
  return out;
}

}  // namespace omni::synth
