#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "windfc/autodiff.hpp"
#include "windfc/data.hpp"
#include "windfc/tensor.hpp"

namespace windfc {

enum class ModelKind { gru, rnn, mlp };

inline const char* to_string(ModelKind k) {
  switch (k) {
    case ModelKind::gru: return "gru";
    case ModelKind::rnn: return "rnn";
    case ModelKind::mlp: return "mlp";
  }
  return "?";
}

inline ModelKind parse_model_kind(const std::string& s) {
  if (s == "gru") return ModelKind::gru;
  if (s == "rnn") return ModelKind::rnn;
  if (s == "mlp") return ModelKind::mlp;
  throw ConfigError("unknown model kind '" + s + "' (expected gru, rnn or mlp)");
}

/// Hyperparameters. The defaults put a 200-turbine farm at about 24.5K
/// parameters.
struct ModelConfig {
  ModelKind kind = ModelKind::gru;
  std::size_t turbines = 0;
  std::size_t k = 6;
  std::size_t input_length = 48;  // m
  std::size_t horizon = 12;       // tau_max
  std::size_t hidden = 48;
  std::size_t embed_dim = 16;
  std::size_t head_hidden = 32;
  std::size_t mlp_hidden = 0;  // mlp kind only
  bool power_history = false;
  bool embed_encoder = false;
  bool freeze_embedding = false;
  bool southern = false;
  bool residual_head = false;  // head emits the change from the previous decoder input

  std::size_t encoder_input_dim() const {
    return k + (power_history ? 1 : 0) + kTimeFeatureDim + (embed_encoder ? embed_dim : 0);
  }
  std::size_t decoder_input_dim() const { return 1 + embed_dim + kTimeFeatureDim; }
  std::size_t mlp_input_dim() const { return input_length * k + 1; }

  WindowOptions window_options() const { return {input_length, horizon, power_history, southern}; }

  void validate() const {
    if (turbines < 1) throw ConfigError("model needs at least one turbine");
    if (k < 1 || k > turbines) throw ConfigError("k must lie in [1, turbines]");
    if (input_length < 1 || horizon < 1) throw ConfigError("input_length and horizon must be >= 1");
    if (kind == ModelKind::mlp) {
      if (mlp_hidden < 1) throw ConfigError("mlp_hidden must be >= 1");
    } else {
      if (hidden < 1 || embed_dim < 1 || head_hidden < 1)
        throw ConfigError("hidden, embed_dim and head_hidden must be >= 1");
    }
  }
};

struct Param {
  std::string name;
  Tensor value;
  bool trainable = true;
};

/// All trainable tensors plus the configuration that shapes them.
struct ModelParams {
  ModelConfig config;
  std::vector<Param> params;

  std::size_t index_of(const std::string& name) const {
    for (std::size_t i = 0; i < params.size(); ++i)
      if (params[i].name == name) return i;
    throw std::out_of_range("no parameter named '" + name + "'");
  }
  Tensor& at(const std::string& name) { return params[index_of(name)].value; }
  const Tensor& at(const std::string& name) const { return params[index_of(name)].value; }
};

inline std::size_t parameter_count(const ModelParams& p) {
  std::size_t n = 0;
  for (const auto& q : p.params) n += q.value.size();
  return n;
}

/// 3(HI + H^2 + H).
inline constexpr std::size_t gru_parameter_count(std::size_t input, std::size_t hidden) {
  return 3 * (hidden * input + hidden * hidden + hidden);
}

/// Width of the MLP baseline whose parameter count is closest to `budget`.
inline std::size_t mlp_width_for_budget(const ModelConfig& c, std::size_t budget) {
  const double per_unit = static_cast<double>(c.mlp_input_dim() + 1 + c.horizon);
  const double w = (static_cast<double>(budget) - static_cast<double>(c.horizon)) / per_unit;
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(w)));
}

namespace detail {

inline Tensor uniform(std::size_t r, std::size_t c, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  Tensor t = Tensor::zeros(r, c);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

inline void add_gru(std::vector<Param>& ps, const std::string& pre, std::size_t I, std::size_t H,
                    std::mt19937_64& rng) {
  const double bi = 1.0 / std::sqrt(static_cast<double>(I)), bh = 1.0 / std::sqrt(static_cast<double>(H));
  for (const char* g : {"z", "r", "h"}) ps.push_back({pre + "W_" + g, uniform(H, I, bi, rng)});
  for (const char* g : {"z", "r", "h"}) ps.push_back({pre + "U_" + g, uniform(H, H, bh, rng)});
  for (const char* g : {"z", "r", "h"}) ps.push_back({pre + "b_" + g, Tensor::zeros(1, H)});
}

inline void add_rnn(std::vector<Param>& ps, const std::string& pre, std::size_t I, std::size_t H,
                    std::mt19937_64& rng) {
  ps.push_back({pre + "W", uniform(H, I, 1.0 / std::sqrt(static_cast<double>(I)), rng)});
  ps.push_back({pre + "U", uniform(H, H, 1.0 / std::sqrt(static_cast<double>(H)), rng)});
  ps.push_back({pre + "b", Tensor::zeros(1, H)});
}

}  // namespace detail

/// Seeded initialization: input matrices U(+-1/sqrt(I)), recurrent matrices
/// U(+-1/sqrt(H)), zero biases, embeddings U(+-0.05). Input-matrix columns
/// that read time features start at zero, so calendar values never seen in
/// training (another season, say) do not feed random weights at test time.
/// A frozen embedding repeats one drawn column across all turbines and is
/// never trained.
inline ModelParams init_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  ModelParams m;
  m.config = cfg;
  auto& ps = m.params;
  if (cfg.kind == ModelKind::mlp) {
    const std::size_t I = cfg.mlp_input_dim(), W = cfg.mlp_hidden;
    ps.push_back({"mlp.W1", detail::uniform(W, I, 1.0 / std::sqrt(static_cast<double>(I)), rng)});
    ps.push_back({"mlp.b1", Tensor::zeros(1, W)});
    ps.push_back({"mlp.W2", detail::uniform(cfg.horizon, W, 1.0 / std::sqrt(static_cast<double>(W)), rng)});
    ps.push_back({"mlp.b2", Tensor::zeros(1, cfg.horizon)});
    return m;
  }
  const std::size_t H = cfg.hidden;
  const auto add_cell = cfg.kind == ModelKind::gru ? detail::add_gru : detail::add_rnn;
  add_cell(ps, "enc.", cfg.encoder_input_dim(), H, rng);
  add_cell(ps, "dec.", cfg.decoder_input_dim(), H, rng);
  const auto zero_time_columns = [&](const std::string& pre, std::size_t first) {
    for (auto& p : ps) {
      if (p.name.rfind(pre + "W", 0) != 0) continue;
      for (std::size_t r = 0; r < p.value.rows(); ++r)
        for (std::size_t c = first; c < first + kTimeFeatureDim; ++c) p.value(r, c) = 0.0;
    }
  };
  zero_time_columns("enc.", cfg.k + (cfg.power_history ? 1 : 0));
  zero_time_columns("dec.", 1 + cfg.embed_dim);
  Tensor emb = detail::uniform(cfg.embed_dim, cfg.turbines, 0.05, rng);
  if (cfg.freeze_embedding)
    for (std::size_t r = 0; r < emb.rows(); ++r)
      for (std::size_t c = 1; c < emb.cols(); ++c) emb(r, c) = emb(r, 0);
  ps.push_back({"embedding", std::move(emb), !cfg.freeze_embedding});
  ps.push_back({"head.W1", detail::uniform(cfg.head_hidden, H, 1.0 / std::sqrt(static_cast<double>(H)), rng)});
  ps.push_back({"head.b1", Tensor::zeros(1, cfg.head_hidden)});
  ps.push_back(
      {"head.W2", detail::uniform(1, cfg.head_hidden, 1.0 / std::sqrt(static_cast<double>(cfg.head_hidden)), rng)});
  ps.push_back({"head.b2", Tensor::zeros(1, 1)});
  return m;
}

// ---------------------------------------------------------------------------
// Cells

struct GruVars {
  Var W_z, W_r, W_h, U_z, U_r, U_h, b_z, b_r, b_h;
};

struct RnnVars {
  Var W, U, b;
};

inline Var affine(Var x, Var W, Var h, Var U, Var b) { return add_row(add(matmul_nt(x, W), matmul_nt(h, U)), b); }

/// z = s(W_z x + U_z h + b_z), r = s(W_r x + U_r h + b_r),
/// c = tanh(W_h x + U_h (r * h) + b_h), h' = (1 - z) * h + z * c.
/// Rows of x and h are independent samples.
inline Var gru_step(Var x, Var h, const GruVars& p) {
  const Var z = sigmoid(affine(x, p.W_z, h, p.U_z, p.b_z));
  const Var r = sigmoid(affine(x, p.W_r, h, p.U_r, p.b_r));
  const Var cand = tanh(affine(x, p.W_h, mul(r, h), p.U_h, p.b_h));
  return add(mul(one_minus(z), h), mul(z, cand));
}

/// h' = tanh(W x + U h + b).
inline Var rnn_step(Var x, Var h, const RnnVars& p) { return tanh(affine(x, p.W, h, p.U, p.b)); }

// ---------------------------------------------------------------------------
// Parameters bound to a tape

/// One Var per parameter, in ModelParams order. Frozen parameters (and all
/// parameters when `differentiable` is false) enter as constants.
class BoundModel {
 public:
  BoundModel(Tape& tape, const ModelParams& m, bool differentiable = true) : tape_(&tape), model_(&m) {
    for (const auto& p : m.params)
      vars_.push_back(differentiable && p.trainable ? tape.leaf(p.value) : tape.constant(p.value));
    const auto& c = m.config;
    if (c.kind == ModelKind::gru) {
      enc_gru_ = gru("enc.");
      dec_gru_ = gru("dec.");
    } else if (c.kind == ModelKind::rnn) {
      enc_rnn_ = rnn("enc.");
      dec_rnn_ = rnn("dec.");
    }
    if (c.kind != ModelKind::mlp) {
      embedding_ = (*this)["embedding"];
      head_ = {(*this)["head.W1"], (*this)["head.b1"], (*this)["head.W2"], (*this)["head.b2"]};
    }
  }

  Tape& tape() const { return *tape_; }
  const ModelParams& model() const { return *model_; }
  const ModelConfig& config() const { return model_->config; }
  const std::vector<Var>& vars() const { return vars_; }
  Var operator[](const std::string& name) const { return vars_[model_->index_of(name)]; }

  Var encoder_step(Var x, Var h) const {
    return config().kind == ModelKind::gru ? gru_step(x, h, enc_gru_) : rnn_step(x, h, enc_rnn_);
  }
  Var decoder_step(Var x, Var h) const {
    return config().kind == ModelKind::gru ? gru_step(x, h, dec_gru_) : rnn_step(x, h, dec_rnn_);
  }

  /// g(i) for each row: columns of E picked by turbine index.
  Var embed(std::span<const std::size_t> turbines) const { return gather_columns(embedding_, turbines); }

  /// MLP head mapping decoder state to one normalized forecast per row.
  Var head(Var h) const {
    const Var hidden = tanh(add_row(matmul_nt(h, head_[0]), head_[1]));
    return add_row(matmul_nt(hidden, head_[2]), head_[3]);
  }

 private:
  GruVars gru(const std::string& pre) const {
    const auto& s = *this;
    return {s[pre + "W_z"], s[pre + "W_r"], s[pre + "W_h"], s[pre + "U_z"], s[pre + "U_r"],
            s[pre + "U_h"], s[pre + "b_z"], s[pre + "b_r"], s[pre + "b_h"]};
  }
  RnnVars rnn(const std::string& pre) const {
    const auto& s = *this;
    return {s[pre + "W"], s[pre + "U"], s[pre + "b"]};
  }

  Tape* tape_;
  const ModelParams* model_;
  std::vector<Var> vars_;
  GruVars enc_gru_{}, dec_gru_{};
  RnnVars enc_rnn_{}, dec_rnn_{};
  Var embedding_{};
  std::array<Var, 4> head_{};
};

// ---------------------------------------------------------------------------
// Encoder / decoder over batches

/// Runs the encoder from a zero state over the m input steps.
inline Var encode(const BoundModel& bm, std::span<const Tensor> steps, std::span<const std::size_t> turbines) {
  const auto& c = bm.config();
  if (c.kind == ModelKind::mlp) throw ConfigError("encode() is undefined for the mlp baseline");
  if (steps.size() != c.input_length)
    throw DimensionError("encoder expects " + std::to_string(c.input_length) + " steps, got " +
                         std::to_string(steps.size()));
  Tape& t = bm.tape();
  const std::size_t B = turbines.size();
  Var h = t.constant(Tensor::zeros(B, c.hidden));
  const Var g = c.embed_encoder ? bm.embed(turbines) : Var{};
  for (const Tensor& s : steps) {
    if (s.rows() != B || s.cols() != c.encoder_input_dim() - (c.embed_encoder ? c.embed_dim : 0))
      throw DimensionError("encoder step has shape " + shape_str(s.shape()) + ", expected [" + std::to_string(B) +
                           "x" + std::to_string(c.encoder_input_dim() - (c.embed_encoder ? c.embed_dim : 0)) +
                           "]");
    Var x = t.constant(s);
    if (c.embed_encoder) x = concat_cols({x, g});
    h = bm.encoder_step(x, h);
  }
  return h;
}

/// Autoregressive decoder: step j sees [previous value, g(i), u_{t+j}],
/// starting from y_t, and the head emits y_{t+j} (or, with residual_head,
/// y_{t+j} - previous value). Returns B x tau in normalized units.
inline Var decode(const BoundModel& bm, Var h, const Tensor& y_current, std::span<const std::size_t> turbines,
                  std::span<const Tensor> future_time) {
  const auto& c = bm.config();
  if (future_time.size() != c.horizon)
    throw DimensionError("decoder expects time features for " + std::to_string(c.horizon) + " steps, got " +
                         std::to_string(future_time.size()));
  Tape& t = bm.tape();
  const Var g = bm.embed(turbines);
  Var prev = t.constant(y_current);
  std::vector<Var> outs;
  for (const Tensor& u : future_time) {
    const Var x = concat_cols({prev, g, t.constant(u)});
    h = bm.decoder_step(x, h);
    prev = c.residual_head ? add(prev, bm.head(h)) : bm.head(h);
    outs.push_back(prev);
  }
  return concat_cols(outs);
}

/// Flattened speed window plus y_t -> tanh layer -> tau outputs.
inline Var mlp_forward(const BoundModel& bm, const Batch& b) {
  const auto& c = bm.config();
  const std::size_t B = b.size(), m = c.input_length, k = c.k;
  Tensor flat = Tensor::zeros(B, c.mlp_input_dim());
  for (std::size_t r = 0; r < B; ++r) {
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t q = 0; q < k; ++q) flat(r, j * k + q) = b.encoder_steps[j](r, q);
    flat(r, m * k) = b.y_current(r, 0);
  }
  Tape& t = bm.tape();
  const Var hidden = tanh(add_row(matmul_nt(t.constant(std::move(flat)), bm["mlp.W1"]), bm["mlp.b1"]));
  return add_row(matmul_nt(hidden, bm["mlp.W2"]), bm["mlp.b2"]);
}

/// Normalized forecasts, B x tau.
inline Var forecast(const BoundModel& bm, const Batch& b) {
  if (bm.config().kind == ModelKind::mlp) return mlp_forward(bm, b);
  const Var h = encode(bm, b.encoder_steps, b.turbines);
  return decode(bm, h, b.y_current, b.turbines, b.decoder_time);
}

/// Forward pass without gradient bookkeeping.
inline Tensor predict(const ModelParams& m, const Batch& b) {
  Tape t;
  const BoundModel bm(t, m, false);
  return forecast(bm, b).value();
}

// ---------------------------------------------------------------------------
// Single-sample conveniences

/// Stand-alone GRU cell: x is 1xI, h is 1xH, weights as in GruVars.
struct GruCellParams {
  Tensor W_z, W_r, W_h, U_z, U_r, U_h, b_z, b_r, b_h;

  std::size_t input_dim() const { return W_z.cols(); }
  std::size_t hidden_dim() const { return W_z.rows(); }
};

inline Tensor gru_step(const Tensor& x, const Tensor& h, const GruCellParams& p) {
  Tape t;
  const auto c = [&](const Tensor& v) { return t.constant(v); };
  const GruVars v{c(p.W_z), c(p.W_r), c(p.W_h), c(p.U_z), c(p.U_r), c(p.U_h), c(p.b_z), c(p.b_r), c(p.b_h)};
  return gru_step(c(x), c(h), v).value();
}

/// Encodes one window (channels x m, as in WindowSample::input) to a 1xH state.
inline Tensor encode(const ModelParams& m, const Tensor& window, std::size_t turbine) {
  std::vector<Tensor> steps;
  for (std::size_t j = 0; j < window.cols(); ++j) {
    Tensor s = Tensor::zeros(1, window.rows());
    for (std::size_t r = 0; r < window.rows(); ++r) s(0, r) = window(r, j);
    steps.push_back(std::move(s));
  }
  Tape t;
  const BoundModel bm(t, m, false);
  const std::size_t turb[1] = {turbine};
  return encode(bm, steps, turb).value();
}

/// Decodes tau normalized forecasts from a 1xH state. `future_time` is tau x 8.
inline std::vector<double> decode(const ModelParams& m, const Tensor& h, double y_current, std::size_t turbine,
                                  const Tensor& future_time) {
  if (turbine >= m.config.turbines) throw DimensionError("turbine index out of range");
  std::vector<Tensor> u;
  for (std::size_t j = 0; j < future_time.rows(); ++j) {
    Tensor r = Tensor::zeros(1, future_time.cols());
    for (std::size_t f = 0; f < future_time.cols(); ++f) r(0, f) = future_time(j, f);
    u.push_back(std::move(r));
  }
  Tape t;
  const BoundModel bm(t, m, false);
  const std::size_t turb[1] = {turbine};
  const Tensor out = decode(bm, t.constant(h), Tensor::scalar(y_current), turb, u).value();
  return {out.data().begin(), out.data().end()};
}

}  // namespace windfc
