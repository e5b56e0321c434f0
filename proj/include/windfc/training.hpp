#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "windfc/autodiff.hpp"
#include "windfc/data.hpp"
#include "windfc/model.hpp"
#include "windfc/parallel.hpp"

namespace windfc {

/// Optimizer and loop settings. The defaults are implementer choices; the
/// method itself does not prescribe them.
struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 128;
  std::size_t epochs = 200;
  std::size_t patience = 10;
  std::uint64_t seed = 1;
  double val_fraction = 0.1;
  double clip_norm = 5.0;
  std::size_t threads = 1;
  // Fixed shard size; gradient reduction order depends on this, never on `threads`.
  std::size_t shard_size = 16;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
    if (batch_size < 1) throw ConfigError("batch size must be positive");
    if (patience < 1) throw ConfigError("patience must be positive");
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("validation fraction must lie in (0, 1)");
    if (!(clip_norm > 0.0)) throw ConfigError("gradient clip norm must be positive");
    if (threads < 1) throw ConfigError("threads must be positive");
    if (shard_size < 1) throw ConfigError("shard size must be positive");
  }
};

// ---------------------------------------------------------------------------
// Loss

/// Mean squared error over the horizons. With a unit-variance Gaussian
/// likelihood this is the negative log-likelihood up to constants.
inline double loss(std::span<const double> forecasts, std::span<const double> targets) {
  if (forecasts.size() != targets.size())
    throw DimensionError("loss: " + std::to_string(forecasts.size()) + " forecasts vs " +
                         std::to_string(targets.size()) + " targets");
  if (forecasts.empty()) throw DimensionError("loss: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < forecasts.size(); ++i) s += (forecasts[i] - targets[i]) * (forecasts[i] - targets[i]);
  return s / static_cast<double>(forecasts.size());
}

/// Sum over rows of the per-row MSE.
inline Var summed_row_mse(Var forecasts, Var targets) {
  const Var d = sub(forecasts, targets);
  return scale(sum(mul(d, d)), 1.0 / static_cast<double>(forecasts.value().cols()));
}

// ---------------------------------------------------------------------------
// Optimizer

/// Adam moments and step count.
struct OptimizerState {
  std::vector<Tensor> first, second;
  std::uint64_t step = 0;
  double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;

  static OptimizerState for_model(const ModelParams& m) {
    OptimizerState s;
    for (const auto& p : m.params) {
      s.first.push_back(Tensor::zeros_like(p.value));
      s.second.push_back(Tensor::zeros_like(p.value));
    }
    return s;
  }
};

/// Bias-corrected Adam update. Frozen parameters are left untouched.
inline void step(ModelParams& model, std::span<const Tensor> grads, OptimizerState& opt, double lr) {
  if (grads.size() != model.params.size() || opt.first.size() != model.params.size())
    throw DimensionError("optimizer step: parameter/gradient count mismatch");
  for (std::size_t p = 0; p < grads.size(); ++p) {
    if (grads[p].shape() != model.params[p].value.shape())
      throw DimensionError("optimizer step: gradient shape mismatch for " + model.params[p].name);
    if (!grads[p].all_finite()) throw NumericError("non-finite gradient for parameter " + model.params[p].name);
  }
  ++opt.step;
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
  for (std::size_t p = 0; p < grads.size(); ++p) {
    if (!model.params[p].trainable) continue;
    auto w = model.params[p].value.data();
    auto m = opt.first[p].data();
    auto v = opt.second[p].data();
    const auto g = grads[p].data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * g[i];
      v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * g[i] * g[i];
      w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + opt.epsilon);
    }
  }
}

/// Rescales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
inline double clip_gradients(std::span<Tensor> grads, double max_norm) {
  double ss = 0.0;
  for (const auto& g : grads)
    for (double x : g.data()) ss += x * x;
  const double norm = std::sqrt(ss);
  if (norm > max_norm) {
    const double f = max_norm / norm;
    for (auto& g : grads)
      for (double& x : g.data()) x *= f;
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Batched gradients

struct BatchGradient {
  double loss_sum = 0.0;  // sum of per-sample MSE
  std::vector<Tensor> grads;  // of the batch-mean loss
};

/// Splits `ids` into fixed-size shards, runs each on its own tape, and sums
/// the shard gradients in shard order.
inline BatchGradient batch_gradient(const ModelParams& model, const WindowSet& windows,
                                    std::span<const std::size_t> ids, std::size_t shard_size,
                                    std::size_t threads) {
  const std::size_t shards = (ids.size() + shard_size - 1) / shard_size;
  std::vector<BatchGradient> parts(shards);
  parallel_for(shards, threads, [&](std::size_t s) {
    const std::size_t lo = s * shard_size, hi = std::min(ids.size(), lo + shard_size);
    const Batch b = windows.batch(ids.subspan(lo, hi - lo));
    Tape tape;
    const BoundModel bm(tape, model);
    const Var l = summed_row_mse(forecast(bm, b), tape.constant(b.targets));
    tape.backward(l);
    parts[s].loss_sum = l.value().item();
    for (const Var& v : bm.vars()) parts[s].grads.push_back(tape.grad(v));
  });
  BatchGradient out;
  for (const auto& p : model.params) out.grads.push_back(Tensor::zeros_like(p.value));
  const double inv = 1.0 / static_cast<double>(ids.size());
  for (const auto& part : parts) {
    out.loss_sum += part.loss_sum;
    for (std::size_t p = 0; p < out.grads.size(); ++p) {
      auto dst = out.grads[p].data();
      const auto src = part.grads[p].data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
  }
  for (auto& g : out.grads)
    for (double& x : g.data()) x *= inv;
  return out;
}

/// Normalized forecasts for every window, row i = windows.origins()[i].
inline Tensor predict_all(const ModelParams& model, const WindowSet& windows, std::size_t threads,
                          std::size_t chunk = 64) {
  const std::size_t n = windows.size(), tau = windows.options().horizon;
  Tensor out = Tensor::zeros(n, tau);
  const std::size_t chunks = (n + chunk - 1) / chunk;
  parallel_for(chunks, threads, [&](std::size_t c) {
    const std::size_t lo = c * chunk, hi = std::min(n, lo + chunk);
    std::vector<std::size_t> ids(hi - lo);
    std::iota(ids.begin(), ids.end(), lo);
    const Tensor f = predict(model, windows.batch(ids));
    std::copy(f.data().begin(), f.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(lo * tau));
  });
  return out;
}

/// Mean per-sample MSE over a window set.
inline double mean_loss(const ModelParams& model, const WindowSet& windows, std::size_t threads) {
  const Tensor f = predict_all(model, windows, threads);
  const std::size_t tau = windows.options().horizon;
  double s = 0.0;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const WindowSample w = windows.sample(i);
    s += loss(f.data().subspan(i * tau, tau), w.targets);
  }
  return s / static_cast<double>(windows.size());
}

// ---------------------------------------------------------------------------
// Loop

/// Stops after `patience` consecutive epochs without a strict improvement.
class EarlyStopper {
 public:
  explicit EarlyStopper(std::size_t patience) : patience_(patience) {}

  /// Returns true when training should stop.
  bool update(double val_loss) {
    if (val_loss < best_) {
      best_ = val_loss;
      bad_ = 0;
      improved_ = true;
    } else {
      ++bad_;
      improved_ = false;
    }
    return bad_ >= patience_;
  }
  bool improved() const noexcept { return improved_; }
  double best() const noexcept { return best_; }

 private:
  std::size_t patience_;
  std::size_t bad_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
  bool improved_ = false;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_mse = 0.0;
  double val_mse = 0.0;
  double wall_seconds = 0.0;
};

struct TrainResult {
  ModelParams model;  // best-validation parameters
  std::vector<EpochRecord> log;
  std::size_t best_epoch = 0;
  bool diverged = false;
  std::string stop_reason;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Mini-batch Adam with shuffling inside the training windows only, global
/// norm clipping, and early stopping on validation MSE.
inline TrainResult train(const WindowSet& train_set, const WindowSet& val_set, ModelParams model,
                         const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (train_set.size() == 0 || val_set.size() == 0) throw DataError("empty training or validation split");
  TrainResult res;
  res.model = model;
  res.stop_reason = "epoch limit";
  OptimizerState opt = OptimizerState::for_model(model);
  EarlyStopper stopper(cfg.patience);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    EpochRecord rec;
    rec.epoch = epoch;
    try {
      double loss_sum = 0.0;
      for (std::size_t lo = 0; lo < order.size(); lo += cfg.batch_size) {
        const std::size_t hi = std::min(order.size(), lo + cfg.batch_size);
        auto g = batch_gradient(model, train_set, std::span(order).subspan(lo, hi - lo), cfg.shard_size,
                                cfg.threads);
        loss_sum += g.loss_sum;
        clip_gradients(g.grads, cfg.clip_norm);
        step(model, g.grads, opt, cfg.learning_rate);
      }
      rec.train_mse = loss_sum / static_cast<double>(order.size());
      rec.val_mse = mean_loss(model, val_set, cfg.threads);
    } catch (const NumericError& e) {
      res.diverged = true;
      res.stop_reason = std::string("diverged: ") + e.what();
      break;
    }
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!std::isfinite(rec.val_mse) || !std::isfinite(rec.train_mse)) {
      res.diverged = true;
      res.stop_reason = "diverged: non-finite loss";
      break;
    }
    res.log.push_back(rec);
    if (on_epoch) on_epoch(rec);
    const bool stop = stopper.update(rec.val_mse);
    if (stopper.improved()) {
      res.model = model;
      res.best_epoch = epoch;
    }
    if (stop) {
      res.stop_reason = "early stop";
      break;
    }
  }
  return res;
}

/// Chronological split: the last `val_fraction` of the hours become the
/// validation table.
inline std::pair<SeriesTable, SeriesTable> split_chronological(const SeriesTable& table, double val_fraction) {
  const auto T = table.length();
  const auto cut = static_cast<std::size_t>(std::llround(static_cast<double>(T) * (1.0 - val_fraction)));
  if (cut == 0 || cut >= T) throw DataError("chronological split leaves an empty side");
  return {table.slice(0, cut), table.slice(cut, T)};
}

/// Everything needed to reload and apply a trained model.
struct TrainedModel {
  ModelParams model;
  Normalizer normalizer;
  NeighborIndex neighbors;
  TrainResult result;
};

/// Fits the normalizer on `table`, splits it chronologically, trains.
inline TrainedModel fit(const SeriesTable& table, const NeighborIndex& nbr, ModelConfig mcfg,
                        const TrainConfig& tcfg, const EpochCallback& on_epoch = {}) {
  mcfg.turbines = table.turbines();
  mcfg.k = nbr.k;
  TrainedModel out;
  out.normalizer = Normalizer::fit(table);
  out.neighbors = nbr;
  auto [tr, va] = split_chronological(table, tcfg.val_fraction);
  const WindowSet train_set(tr, nbr, out.normalizer, mcfg.window_options());
  const WindowSet val_set(va, nbr, out.normalizer, mcfg.window_options());
  out.result = train(train_set, val_set, init_model(mcfg, tcfg.seed), tcfg, on_epoch);
  out.model = out.result.model;
  return out;
}

inline void write_train_log(std::ostream& os, const std::vector<EpochRecord>& log) {
  os << "epoch,train_mse,val_mse,wall_seconds\n";
  for (const auto& r : log)
    os << r.epoch << ',' << csv::format_double(r.train_mse) << ',' << csv::format_double(r.val_mse) << ','
       << csv::format_double(r.wall_seconds) << '\n';
}

}  // namespace windfc
