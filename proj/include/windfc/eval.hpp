#pragma once

#include <cmath>
#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "windfc/data.hpp"
#include "windfc/model.hpp"
#include "windfc/training.hpp"

namespace windfc {

enum class Units { normalized, raw };

inline Units parse_units(const std::string& s) {
  if (s == "normalized") return Units::normalized;
  if (s == "raw") return Units::raw;
  throw ConfigError("unknown units '" + s + "' (expected normalized or raw)");
}

/// Per-horizon MAE and RMSE, index h-1 for horizon h.
struct HorizonMetrics {
  std::vector<double> mae, rmse;
  std::vector<std::size_t> count;

  std::size_t horizons() const noexcept { return mae.size(); }
};

/// Accumulates absolute and squared errors per horizon in call order.
class MetricAccumulator {
 public:
  explicit MetricAccumulator(std::size_t horizons) : abs_(horizons, 0.0), sq_(horizons, 0.0), n_(horizons, 0) {}

  void add(std::size_t h, double forecast, double actual) {
    const double e = forecast - actual;
    abs_[h] += std::abs(e);
    sq_[h] += e * e;
    ++n_[h];
  }

  HorizonMetrics finish() const {
    HorizonMetrics m;
    for (std::size_t h = 0; h < abs_.size(); ++h) {
      const double n = static_cast<double>(n_[h]);
      m.mae.push_back(n_[h] ? abs_[h] / n : 0.0);
      m.rmse.push_back(n_[h] ? std::sqrt(sq_[h] / n) : 0.0);
      m.count.push_back(n_[h]);
    }
    return m;
  }

 private:
  std::vector<double> abs_, sq_;
  std::vector<std::size_t> n_;
};

/// Scores normalized forecasts (row i for windows.origins()[i]) against the
/// windows' targets. Raw units multiply both sides by the turbine's scale.
inline HorizonMetrics score(const WindowSet& windows, const Tensor& forecasts, const Normalizer& norm,
                            Units units) {
  const std::size_t tau = windows.options().horizon;
  if (forecasts.rows() != windows.size() || forecasts.cols() != tau)
    throw DimensionError("forecast matrix " + shape_str(forecasts.shape()) + " does not match " +
                         std::to_string(windows.size()) + " windows x " + std::to_string(tau));
  MetricAccumulator acc(tau);
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const WindowSample s = windows.sample(i);
    const double c = units == Units::raw ? norm.target_scale[s.turbine] : 1.0;
    for (std::size_t h = 0; h < tau; ++h) acc.add(h, c * forecasts(i, h), c * s.targets[h]);
  }
  return acc.finish();
}

/// Rolls the model over every admissible (turbine, t) of the window set.
inline HorizonMetrics evaluate(const ModelParams& model, const WindowSet& windows, const Normalizer& norm,
                               Units units = Units::normalized, std::size_t threads = 1) {
  return score(windows, predict_all(model, windows, threads), norm, units);
}

/// y_{t+h} = y_t at every origin a model of window length m would use.
/// Needs no training data; `scale` (per turbine) is applied only for
/// normalized units.
inline HorizonMetrics persistence_baseline(const SeriesTable& table, std::size_t m, std::size_t tau,
                                           std::span<const double> scale = {}) {
  const std::size_t n = table.turbines(), T = table.length();
  if (m < 1 || tau < 1) throw ConfigError("window length and horizon must be >= 1");
  if (T < m + tau) throw DataError("test span shorter than window + horizon");
  if (!scale.empty() && scale.size() != n) throw DimensionError("persistence: scale vector size mismatch");
  const Tensor& y = table.target();
  MetricAccumulator acc(tau);
  for (std::size_t i = 0; i < n; ++i) {
    const double c = scale.empty() ? 1.0 : 1.0 / scale[i];
    for (std::size_t t = m - 1; t + tau < T; ++t) {
      if (table.segment_end(t + 1 - m) <= t + tau) continue;
      for (std::size_t h = 1; h <= tau; ++h) acc.add(h - 1, c * y(i, t), c * y(i, t + h));
    }
  }
  return acc.finish();
}

// ---------------------------------------------------------------------------
// Autocorrelation

struct AcfResult {
  std::vector<double> r;  // r[0..max_lag]
  double ci95 = 0.0;
  double ci99 = 0.0;
};

inline constexpr double kZ975 = 1.959963984540054;   // standard normal 0.975 quantile
inline constexpr double kZ995 = 2.5758293035489004;  // standard normal 0.995 quantile

/// Sample autocorrelation with +-z/sqrt(T) bands around zero.
inline AcfResult acf(std::span<const double> x, std::size_t max_lag) {
  const std::size_t T = x.size();
  if (T <= max_lag + 1)
    throw DataError("series of length " + std::to_string(T) + " too short for max lag " + std::to_string(max_lag));
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(T);
  double denom = 0.0;
  for (double v : x) denom += (v - mean) * (v - mean);
  if (!(denom > 0.0)) throw DataError("autocorrelation of a constant series is undefined");
  AcfResult out;
  out.r.push_back(1.0);
  for (std::size_t l = 1; l <= max_lag; ++l) {
    double s = 0.0;
    for (std::size_t t = 0; t + l < T; ++t) s += (x[t] - mean) * (x[t + l] - mean);
    out.r.push_back(s / denom);
  }
  const double root = std::sqrt(static_cast<double>(T));
  out.ci95 = kZ975 / root;
  out.ci99 = kZ995 / root;
  return out;
}

inline void write_acf(std::ostream& os, const AcfResult& a) {
  os << "lag,r,ci95,ci99\n";
  for (std::size_t l = 0; l < a.r.size(); ++l)
    os << l << ',' << csv::format_double(a.r[l]) << ',' << csv::format_double(a.ci95) << ','
       << csv::format_double(a.ci99) << '\n';
}

// ---------------------------------------------------------------------------
// Metric files

using MethodMetrics = std::vector<std::pair<std::string, HorizonMetrics>>;

enum class Metric { mae, rmse };

/// One row per method, columns h1..hH.
inline void write_metrics(std::ostream& os, const MethodMetrics& rows, Metric which) {
  if (rows.empty()) return;
  const std::size_t H = rows.front().second.horizons();
  os << "method";
  for (std::size_t h = 1; h <= H; ++h) os << ",h" << h;
  os << '\n';
  for (const auto& [name, m] : rows) {
    if (m.horizons() != H) throw DimensionError("metric rows disagree on horizon count");
    os << name;
    for (double v : which == Metric::mae ? m.mae : m.rmse) os << ',' << csv::format_double(v);
    os << '\n';
  }
}

// ---------------------------------------------------------------------------
// Forecasting from a single origin

/// Normalized forecasts (turbines x tau) issued at column t of `table`. Only
/// speed up to t, the target at t (plus target history when configured) and
/// calendar features of t+1..t+tau are read, so values after t never matter.
inline Tensor forecast_at_origin(const ModelParams& model, const Normalizer& norm, const NeighborIndex& nbr,
                                 const SeriesTable& table, std::size_t t) {
  const ModelConfig& c = model.config;
  const std::size_t n = table.turbines(), m = c.input_length, tau = c.horizon;
  if (n != c.turbines || nbr.size() != n || norm.turbines() != n)
    throw DataError("model, neighbor index and table disagree on turbine count");
  if (t >= table.length()) throw DataError("forecast origin outside the series");
  if (t + 1 < m || table.segment_end(t + 1 - m) <= t)
    throw DataError("forecast origin " + format_timestamp(table.hours[t]) + " lacks " + std::to_string(m) +
                    " contiguous hours of history");
  const Tensor& tgt = table.target();
  std::vector<WindowSample> samples(n);
  for (std::size_t i = 0; i < n; ++i) {
    WindowSample& s = samples[i];
    s.turbine = i;
    s.origin = t;
    s.input = Tensor::zeros(c.k + (c.power_history ? 1 : 0) + kTimeFeatureDim, m);
    for (std::size_t j = 0; j < m; ++j) {
      const std::size_t col = t + 1 - m + j;
      std::size_t row = 0;
      for (std::size_t nb : nbr.of(i)) s.input(row++, j) = norm.speed(nb, table.speed(nb, col));
      if (c.power_history) s.input(row++, j) = norm.target(i, tgt(i, col));
      const auto f = time_features(table.hours[col], c.southern);
      for (double v : f) s.input(row++, j) = v;
    }
    s.y_current = norm.target(i, tgt(i, t));
    s.targets.assign(tau, 0.0);
    s.future_time = Tensor::zeros(tau, kTimeFeatureDim);
    for (std::size_t h = 1; h <= tau; ++h) {
      const auto f = time_features(table.hours[t] + static_cast<HourStamp>(h), c.southern);
      for (std::size_t q = 0; q < kTimeFeatureDim; ++q) s.future_time(h - 1, q) = f[q];
    }
  }
  return predict(model, WindowSet::make_batch(samples));
}

// ---------------------------------------------------------------------------
// Learned baselines

/// MLP and vanilla-RNN baselines run through the same training loop as the
/// main model. An MLP width of zero in `mcfg` is rejected; use
/// mlp_width_for_budget to size it.
inline TrainedModel fit_baseline(ModelKind kind, const SeriesTable& train_table, const NeighborIndex& nbr,
                                 ModelConfig mcfg, const TrainConfig& tcfg, const EpochCallback& on_epoch = {}) {
  mcfg.kind = kind;
  return fit(train_table, nbr, mcfg, tcfg, on_epoch);
}

}  // namespace windfc
