#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numbers>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "windfc/csv.hpp"
#include "windfc/graph.hpp"
#include "windfc/tensor.hpp"
#include "windfc/timestamp.hpp"

namespace windfc {

// ---------------------------------------------------------------------------
// Series table

/// Dense N x T table of hourly speed (and optionally power). Columns are
/// strictly increasing hours; `segment_starts` lists the columns that begin a
/// gap-free run (column 0 always does). Windows never straddle a segment.
struct SeriesTable {
  std::vector<HourStamp> hours;
  Tensor speed;  // N x T
  Tensor power;  // N x T, empty when !has_power
  bool has_power = true;
  std::vector<std::size_t> segment_starts{0};

  std::size_t turbines() const { return speed.empty() ? 0 : speed.rows(); }
  std::size_t length() const noexcept { return hours.size(); }

  /// Forecast target: power, or speed in speed-forecast mode.
  const Tensor& target() const { return has_power ? power : speed; }

  /// End (exclusive) of the segment containing column t.
  std::size_t segment_end(std::size_t t) const {
    const auto it = std::upper_bound(segment_starts.begin(), segment_starts.end(), t);
    return it == segment_starts.end() ? length() : *it;
  }

  /// Columns [begin, end), with segment boundaries carried over.
  SeriesTable slice(std::size_t begin, std::size_t end) const {
    if (begin > end || end > length()) throw DataError("table slice out of range");
    SeriesTable out;
    out.has_power = has_power;
    out.hours.assign(hours.begin() + static_cast<std::ptrdiff_t>(begin),
                     hours.begin() + static_cast<std::ptrdiff_t>(end));
    const std::size_t n = turbines(), w = end - begin;
    auto cut = [&](const Tensor& src) {
      Tensor dst = Tensor::zeros(n, w);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t t = 0; t < w; ++t) dst(i, t) = src(i, begin + t);
      return dst;
    };
    out.speed = cut(speed);
    if (has_power) out.power = cut(power);
    out.segment_starts = {0};
    for (std::size_t s : segment_starts)
      if (s > begin && s < end) out.segment_starts.push_back(s - begin);
    return out;
  }

  /// First column whose hour is >= `h`, or length() if none.
  std::size_t column_at_or_after(HourStamp h) const {
    return static_cast<std::size_t>(std::lower_bound(hours.begin(), hours.end(), h) - hours.begin());
  }
};

struct IngestOptions {
  std::size_t max_interpolated_gap = 3;
  bool allow_split = false;
};

namespace detail {

struct RawSeries {
  std::map<HourStamp, std::pair<double, double>> obs;
};

}  // namespace detail

/// Long-format rows -> dense table. Short interior gaps are linearly
/// interpolated; anything longer is an error unless `allow_split`, in which
/// case the missing hours are dropped for every turbine and a new segment
/// begins.
inline SeriesTable ingest(std::istream& in, const std::string& source, const FarmLayout& layout,
                          const IngestOptions& opt = {}) {
  const auto t = csv::read(in, source);
  const auto c_ts = csv::column(t, "timestamp", source);
  const auto c_id = csv::column(t, "turbine_id", source);
  const auto c_sp = csv::column(t, "speed", source);
  const bool has_power = std::find(t.columns.begin(), t.columns.end(), "power") != t.columns.end();
  const auto c_pw = has_power ? csv::column(t, "power", source) : 0;

  const std::size_t n = layout.size();
  std::vector<detail::RawSeries> raw(n);
  std::vector<HourStamp> last(n, std::numeric_limits<HourStamp>::min());
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const std::string where = source + ":" + std::to_string(t.line_numbers[r]);
    std::size_t i = 0;
    try {
      i = layout.index_of(row[c_id]);
    } catch (const DataError& e) {
      throw DataError(where + ": " + e.what());
    }
    const HourStamp h = parse_timestamp(row[c_ts]);
    if (h <= last[i])
      throw DataError(where + ": non-monotone timestamps for turbine '" + row[c_id] + "' at " + format_timestamp(h));
    last[i] = h;
    const double sp = csv::parse_double(row[c_sp], "speed");
    const double pw = has_power ? csv::parse_double(row[c_pw], "power") : 0.0;
    if (!(sp >= 0.0) || !std::isfinite(sp)) throw DataError(where + ": wind speed must be finite and >= 0");
    if (!std::isfinite(pw)) throw DataError(where + ": power must be finite");
    raw[i].obs.emplace(h, std::pair{sp, pw});
  }

  HourStamp lo = std::numeric_limits<HourStamp>::max(), hi = std::numeric_limits<HourStamp>::min();
  for (const auto& s : raw)
    if (!s.obs.empty()) {
      lo = std::min(lo, s.obs.begin()->first);
      hi = std::max(hi, s.obs.rbegin()->first);
    }
  if (lo > hi) throw DataError(source + ": no observations");
  for (std::size_t i = 0; i < n; ++i)
    if (raw[i].obs.empty()) throw DataError(source + ": no observations for turbine '" + layout.id(i) + "'");

  const std::size_t span = static_cast<std::size_t>(hi - lo + 1);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::vector<double>> sp(n, std::vector<double>(span, nan)), pw(n, std::vector<double>(span, nan));
  for (std::size_t i = 0; i < n; ++i)
    for (const auto& [h, v] : raw[i].obs) {
      sp[i][static_cast<std::size_t>(h - lo)] = v.first;
      pw[i][static_cast<std::size_t>(h - lo)] = v.second;
    }

  std::vector<bool> dropped(span, false);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t c = 0;
    while (c < span) {
      if (!std::isnan(sp[i][c])) {
        ++c;
        continue;
      }
      std::size_t e = c;
      while (e < span && std::isnan(sp[i][e])) ++e;
      const std::size_t len = e - c;
      const bool interior = c > 0 && e < span;
      if (interior && len <= opt.max_interpolated_gap) {
        for (std::size_t j = c; j < e; ++j) {
          const double w = static_cast<double>(j - c + 1) / static_cast<double>(len + 1);
          sp[i][j] = sp[i][c - 1] + w * (sp[i][e] - sp[i][c - 1]);
          pw[i][j] = pw[i][c - 1] + w * (pw[i][e] - pw[i][c - 1]);
        }
      } else if (opt.allow_split) {
        for (std::size_t j = c; j < e; ++j) dropped[j] = true;
      } else {
        throw DataError(source + ": gap of " + std::to_string(len) + " hours for turbine '" + layout.id(i) +
                        "' from " + format_timestamp(lo + static_cast<HourStamp>(c)) + " to " +
                        format_timestamp(lo + static_cast<HourStamp>(e - 1)) +
                        " exceeds the interpolation limit (use --allow-split)");
      }
      c = e;
    }
  }

  SeriesTable out;
  out.has_power = has_power;
  out.segment_starts.clear();
  std::vector<std::size_t> keep;
  for (std::size_t c = 0; c < span; ++c)
    if (!dropped[c]) {
      if (keep.empty() || keep.back() + 1 != c) out.segment_starts.push_back(keep.size());
      keep.push_back(c);
      out.hours.push_back(lo + static_cast<HourStamp>(c));
    }
  if (keep.empty()) throw DataError(source + ": no usable hours after dropping gaps");
  out.speed = Tensor::zeros(n, keep.size());
  if (has_power) out.power = Tensor::zeros(n, keep.size());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < keep.size(); ++j) {
      out.speed(i, j) = sp[i][keep[j]];
      if (has_power) out.power(i, j) = pw[i][keep[j]];
    }
  return out;
}

inline SeriesTable ingest_file(const std::string& path, const FarmLayout& layout, const IngestOptions& opt = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return ingest(in, path, layout, opt);
}

inline void write_series(std::ostream& os, const FarmLayout& layout, const SeriesTable& table) {
  os << (table.has_power ? "timestamp,turbine_id,speed,power\n" : "timestamp,turbine_id,speed\n");
  for (std::size_t t = 0; t < table.length(); ++t) {
    const std::string ts = format_timestamp(table.hours[t]);
    for (std::size_t i = 0; i < table.turbines(); ++i) {
      os << ts << ',' << layout.id(i) << ',' << csv::format_double(table.speed(i, t));
      if (table.has_power) os << ',' << csv::format_double(table.power(i, t));
      os << '\n';
    }
  }
}

// ---------------------------------------------------------------------------
// Time features

inline constexpr std::size_t kTimeFeatureDim = 8;
using TimeFeatures = std::array<double, kTimeFeatureDim>;

/// [sin hour, cos hour, sin day-of-year, cos day-of-year, winter, spring,
/// summer, autumn]. Seasons are meteorological quarters (DJF, MAM, JJA, SON);
/// `southern` swaps them by half a year.
inline TimeFeatures time_features(HourStamp t, bool southern = false) {
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  const CivilTime c = civil(t);
  TimeFeatures f{};
  const double ha = kTwoPi * static_cast<double>(c.hour) / 24.0;
  f[0] = std::sin(ha);
  f[1] = std::cos(ha);
  const double da =
      kTwoPi * (static_cast<double>(c.day_of_year) + static_cast<double>(c.hour) / 24.0) / c.days_in_year;
  f[2] = std::sin(da);
  f[3] = std::cos(da);
  std::size_t season = (c.month % 12) / 3;  // Dec,Jan,Feb -> 0
  if (southern) season = (season + 2) % 4;
  f[4 + season] = 1.0;
  return f;
}

// ---------------------------------------------------------------------------
// Normalization

/// Per-turbine z-score for speed, per-turbine max scaling for the target
/// (power, or speed in speed mode). The target max stands in for rated
/// capacity.
struct Normalizer {
  std::vector<double> speed_mean, speed_std, target_scale;

  static Normalizer fit(const SeriesTable& table) {
    const std::size_t n = table.turbines(), T = table.length();
    if (T < 2) throw DataError("normalizer needs at least two hours of data");
    Normalizer z;
    const Tensor& tgt = table.target();
    for (std::size_t i = 0; i < n; ++i) {
      double mean = 0.0, mx = 0.0;
      for (std::size_t t = 0; t < T; ++t) {
        mean += table.speed(i, t);
        mx = std::max(mx, tgt(i, t));
      }
      mean /= static_cast<double>(T);
      double var = 0.0;
      for (std::size_t t = 0; t < T; ++t) var += (table.speed(i, t) - mean) * (table.speed(i, t) - mean);
      const double sd = std::sqrt(var / static_cast<double>(T));
      if (!(sd > 0.0)) throw DataError("turbine " + std::to_string(i) + " has a constant wind-speed series");
      if (!(mx > 0.0)) throw DataError("turbine " + std::to_string(i) + " has no positive target values");
      z.speed_mean.push_back(mean);
      z.speed_std.push_back(sd);
      z.target_scale.push_back(mx);
    }
    return z;
  }

  std::size_t turbines() const noexcept { return speed_mean.size(); }
  double speed(std::size_t i, double v) const { return (v - speed_mean[i]) / speed_std[i]; }
  double speed_inverse(std::size_t i, double z) const { return z * speed_std[i] + speed_mean[i]; }
  double target(std::size_t i, double v) const { return v / target_scale[i]; }
  double target_inverse(std::size_t i, double z) const { return z * target_scale[i]; }
};

// ---------------------------------------------------------------------------
// Windows

struct WindowOptions {
  std::size_t input_length = 48;  // m
  std::size_t horizon = 12;       // tau_max
  bool power_history = false;     // append the turbine's own target history as a channel
  bool southern = false;
};

/// One training example. `input` is channels x m: k neighbor speed rows in
/// NeighborIndex order, the optional target-history row, then the eight
/// time-feature rows. Values are normalized.
struct WindowSample {
  std::size_t turbine = 0;
  std::size_t origin = 0;  // column t of the last input hour
  Tensor input;
  double y_current = 0.0;
  std::vector<double> targets;  // y_{t+1..t+tau}
  Tensor future_time;           // tau x 8, features of t+1..t+tau
};

/// Row-batched model input: row b of every tensor belongs to sample b.
struct Batch {
  std::vector<std::size_t> turbines;
  std::vector<Tensor> encoder_steps;  // m tensors, B x channels
  Tensor y_current;                   // B x 1
  std::vector<Tensor> decoder_time;   // tau tensors, B x 8
  Tensor targets;                     // B x tau

  std::size_t size() const noexcept { return turbines.size(); }
};

/// Every admissible (turbine, t) window of a table, materialized on demand.
/// Order is turbine-major, then t ascending.
class WindowSet {
 public:
  struct Origin {
    std::size_t turbine;
    std::size_t t;
  };

  WindowSet(const SeriesTable& table, const NeighborIndex& nbr, const Normalizer& norm, WindowOptions opt)
      : opt_(opt), k_(nbr.k), neighbors_(nbr.neighbors), hours_(table.hours) {
    const std::size_t n = table.turbines(), T = table.length();
    if (opt.input_length < 1 || opt.horizon < 1) throw ConfigError("window length and horizon must be >= 1");
    if (nbr.size() != n || norm.turbines() != n)
      throw DataError("table, neighbor index and normalizer disagree on turbine count");
    if (T < opt.input_length + opt.horizon)
      throw DataError("series of " + std::to_string(T) + " hours is shorter than window " +
                      std::to_string(opt.input_length) + " + horizon " + std::to_string(opt.horizon));
    speed_ = Tensor::zeros(n, T);
    target_ = Tensor::zeros(n, T);
    const Tensor& tgt = table.target();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t t = 0; t < T; ++t) {
        speed_(i, t) = norm.speed(i, table.speed(i, t));
        target_(i, t) = norm.target(i, tgt(i, t));
      }
    time_ = Tensor::zeros(T, kTimeFeatureDim);
    for (std::size_t t = 0; t < T; ++t) {
      const auto f = time_features(table.hours[t], opt.southern);
      std::copy(f.begin(), f.end(), time_.data().begin() + static_cast<std::ptrdiff_t>(t * kTimeFeatureDim));
    }
    const std::size_t m = opt.input_length, tau = opt.horizon;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t t = m - 1; t + tau < T; ++t)
        if (table.segment_end(t + 1 - m) > t + tau) origins_.push_back({i, t});
    if (origins_.empty()) throw DataError("no contiguous segment fits window + horizon");
  }

  std::size_t size() const noexcept { return origins_.size(); }
  const std::vector<Origin>& origins() const noexcept { return origins_; }
  const WindowOptions& options() const noexcept { return opt_; }
  std::size_t k() const noexcept { return k_; }
  std::size_t speed_channels() const noexcept { return k_; }
  std::size_t channels() const noexcept { return k_ + (opt_.power_history ? 1 : 0) + kTimeFeatureDim; }
  const std::vector<HourStamp>& hours() const noexcept { return hours_; }

  WindowSample sample(std::size_t idx) const {
    const Origin o = origins_.at(idx);
    const std::size_t m = opt_.input_length, tau = opt_.horizon, C = channels();
    WindowSample s;
    s.turbine = o.turbine;
    s.origin = o.t;
    s.input = Tensor::zeros(C, m);
    for (std::size_t j = 0; j < m; ++j) {
      const std::size_t col = o.t + 1 - m + j;
      std::size_t row = 0;
      for (std::size_t nb : neighbors_[o.turbine]) s.input(row++, j) = speed_(nb, col);
      if (opt_.power_history) s.input(row++, j) = target_(o.turbine, col);
      for (std::size_t f = 0; f < kTimeFeatureDim; ++f) s.input(row++, j) = time_(col, f);
    }
    s.y_current = target_(o.turbine, o.t);
    s.future_time = Tensor::zeros(tau, kTimeFeatureDim);
    for (std::size_t h = 1; h <= tau; ++h) {
      s.targets.push_back(target_(o.turbine, o.t + h));
      for (std::size_t f = 0; f < kTimeFeatureDim; ++f) s.future_time(h - 1, f) = time_(o.t + h, f);
    }
    return s;
  }

  Batch batch(std::span<const std::size_t> ids) const {
    std::vector<WindowSample> samples;
    samples.reserve(ids.size());
    for (std::size_t id : ids) samples.push_back(sample(id));
    return make_batch(samples);
  }

  static Batch make_batch(std::span<const WindowSample> samples) {
    if (samples.empty()) throw DataError("empty batch");
    const std::size_t B = samples.size(), C = samples[0].input.rows(), m = samples[0].input.cols(),
                      tau = samples[0].targets.size();
    Batch b;
    b.encoder_steps.assign(m, Tensor::zeros(B, C));
    b.decoder_time.assign(tau, Tensor::zeros(B, kTimeFeatureDim));
    b.y_current = Tensor::zeros(B, 1);
    b.targets = Tensor::zeros(B, tau);
    for (std::size_t r = 0; r < B; ++r) {
      const WindowSample& s = samples[r];
      if (s.input.rows() != C || s.input.cols() != m || s.targets.size() != tau)
        throw DimensionError("batch mixes window shapes");
      b.turbines.push_back(s.turbine);
      for (std::size_t j = 0; j < m; ++j)
        for (std::size_t c = 0; c < C; ++c) b.encoder_steps[j](r, c) = s.input(c, j);
      b.y_current(r, 0) = s.y_current;
      for (std::size_t h = 0; h < tau; ++h) {
        b.targets(r, h) = s.targets[h];
        for (std::size_t f = 0; f < kTimeFeatureDim; ++f) b.decoder_time[h](r, f) = s.future_time(h, f);
      }
    }
    return b;
  }

 private:
  WindowOptions opt_;
  std::size_t k_;
  std::vector<std::vector<std::size_t>> neighbors_;
  std::vector<HourStamp> hours_;
  Tensor speed_, target_, time_;
  std::vector<Origin> origins_;
};

inline WindowSet make_windows(const SeriesTable& table, const NeighborIndex& nbr, const Normalizer& norm,
                              WindowOptions opt) {
  return WindowSet(table, nbr, norm, opt);
}

// ---------------------------------------------------------------------------
// Synthetic farm

/// Logistic speed-to-power map, clipped to [0, rated].
struct PowerCurve {
  double rated = 2.0;      // MW
  double midpoint = 9.0;   // m/s
  double steepness = 0.9;  // 1/(m/s)

  double operator()(double v) const {
    const double p = rated / (1.0 + std::exp(-steepness * (v - midpoint)));
    return std::clamp(p, 0.0, rated);
  }
};

struct SynthConfig {
  std::size_t turbines = 20;
  std::size_t days = 120;
  std::uint64_t seed = 7;
  double spatial_corr_length = 1500.0;  // m; infinity makes the local field uniform
  double noise_level = 0.66;            // m/s, i.i.d. per turbine-hour
  double ar_coeff = 0.92;               // hourly AR(1) coefficient of both stochastic fields
  double mean_speed = 8.0;
  double regional_sd = 2.0;
  double local_sd = 0.8;
  double diurnal_amplitude = 0.8;
  double seasonal_amplitude = 1.0;
  double spacing = 400.0;
  double jitter = 0.25;  // fraction of spacing
  HourStamp start = make_hour(2021, 1, 1);
};

struct SynthFarm {
  FarmLayout layout;
  SeriesTable table;
  std::vector<PowerCurve> curves;
};

/// Wind speed = regional AR(1) + diurnal and seasonal sinusoids + a locally
/// smoothed AR(1) field whose cross-turbine correlation decays with distance
/// + i.i.d. noise. Power follows a per-turbine logistic curve. Deterministic
/// in `seed`.
inline SynthFarm synth_farm(const SynthConfig& cfg) {
  if (cfg.turbines < 1) throw ConfigError("synthetic farm needs at least one turbine");
  if (cfg.days < 2) throw ConfigError("synthetic farm needs at least two days");
  if (!(cfg.ar_coeff > -1.0 && cfg.ar_coeff < 1.0)) throw ConfigError("AR coefficient must lie in (-1, 1)");
  if (!(cfg.spatial_corr_length > 0.0)) throw ConfigError("spatial correlation length must be positive");
  if (!(cfg.noise_level >= 0.0)) throw ConfigError("noise level must be >= 0");

  const std::size_t n = cfg.turbines, T = cfg.days * 24;
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  const auto side = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n))));
  std::vector<std::string> ids;
  std::vector<Point> pts;
  for (std::size_t i = 0; i < n; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "T%03zu", i);
    ids.emplace_back(buf);
    const double jx = (2.0 * unit(rng) - 1.0) * cfg.jitter * cfg.spacing;
    const double jy = (2.0 * unit(rng) - 1.0) * cfg.jitter * cfg.spacing;
    pts.push_back({static_cast<double>(i % side) * cfg.spacing + jx, static_cast<double>(i / side) * cfg.spacing + jy});
  }
  std::vector<PowerCurve> curves;
  for (std::size_t i = 0; i < n; ++i) {
    PowerCurve c;
    c.rated = 1.5 + unit(rng);
    c.midpoint = 7.5 + 3.0 * unit(rng);
    c.steepness = 0.6 + 0.6 * unit(rng);
    curves.push_back(c);
  }

  // Row-normalized distance kernel; rows of co-located turbines coincide.
  std::vector<std::vector<double>> w(n, std::vector<double>(n));
  std::vector<double> row_norm(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      w[i][j] = std::exp(-distance(pts[i], pts[j]) / cfg.spatial_corr_length);
      s += w[i][j];
    }
    double ss = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      w[i][j] /= s;
      ss += w[i][j] * w[i][j];
    }
    row_norm[i] = std::sqrt(ss);
  }

  const double phi = cfg.ar_coeff, innov = std::sqrt(1.0 - phi * phi);
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  SynthFarm farm;
  farm.table.has_power = true;
  farm.table.speed = Tensor::zeros(n, T);
  farm.table.power = Tensor::zeros(n, T);
  double regional = gauss(rng);
  std::vector<double> local(n);
  for (auto& e : local) e = gauss(rng);
  const double diurnal_phase = kTwoPi * unit(rng);
  for (std::size_t t = 0; t < T; ++t) {
    const HourStamp h = cfg.start + static_cast<HourStamp>(t);
    farm.table.hours.push_back(h);
    if (t > 0) {
      regional = phi * regional + innov * gauss(rng);
      for (auto& e : local) e = phi * e + innov * gauss(rng);
    }
    const CivilTime c = civil(h);
    const double diurnal = cfg.diurnal_amplitude * std::sin(kTwoPi * c.hour / 24.0 + diurnal_phase);
    const double seasonal = cfg.seasonal_amplitude *
                            std::cos(kTwoPi * (c.day_of_year + c.hour / 24.0) / c.days_in_year);
    const double base = cfg.mean_speed + cfg.regional_sd * regional + diurnal + seasonal;
    for (std::size_t i = 0; i < n; ++i) {
      double p = 0.0;
      for (std::size_t j = 0; j < n; ++j) p += w[i][j] * local[j];
      const double v = std::max(0.0, base + cfg.local_sd * p / row_norm[i] + cfg.noise_level * gauss(rng));
      farm.table.speed(i, t) = v;
      farm.table.power(i, t) = curves[i](v);
    }
  }
  farm.layout = FarmLayout(std::move(ids), std::move(pts));
  farm.curves = std::move(curves);
  return farm;
}

}  // namespace windfc
