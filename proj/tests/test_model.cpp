#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "test_util.hpp"
#include "windfc/model.hpp"

using namespace windfc;
using windfc::testing::check_model_gradients;
using windfc::testing::random_batch;
using windfc::testing::random_gru_cell;
using windfc::testing::random_tensor;
using windfc::testing::scalar_gru_step;

namespace {

std::vector<double> as_vector(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

GruCellParams zero_cell(std::size_t I, std::size_t H) {
  const auto z = [](std::size_t a, std::size_t b) { return Tensor::zeros(a, b); };
  return {z(H, I), z(H, I), z(H, I), z(H, H), z(H, H), z(H, H), z(1, H), z(1, H), z(1, H)};
}

GruCellParams cell_of(const ModelParams& m, const std::string& pre) {
  return {m.at(pre + "W_z"), m.at(pre + "W_r"), m.at(pre + "W_h"), m.at(pre + "U_z"), m.at(pre + "U_r"),
          m.at(pre + "U_h"), m.at(pre + "b_z"), m.at(pre + "b_r"), m.at(pre + "b_h")};
}

void randomize(ModelParams& m, std::mt19937_64& rng, double bound = 0.5) {
  for (auto& p : m.params) p.value = random_tensor(p.value.rows(), p.value.cols(), rng, -bound, bound);
}

ModelConfig small_config() {
  ModelConfig c;
  c.turbines = 4;
  c.k = 3;
  c.input_length = 4;
  c.horizon = 3;
  c.hidden = 5;
  c.embed_dim = 3;
  c.head_hidden = 4;
  return c;
}

double norm_diff(const Tensor& a, const Tensor& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace

TEST(GruStep, ZeroWeightsZeroState) {
  const Tensor h = gru_step(Tensor::row({0.3, -0.2}), Tensor::zeros(1, 3), zero_cell(2, 3));
  EXPECT_EQ(h, Tensor::zeros(1, 3));
}

TEST(GruStep, ClosedUpdateGateCarriesState) {
  std::mt19937_64 rng(1);
  GruCellParams p = random_gru_cell(2, 3, rng);
  p.W_z = Tensor::zeros(3, 2);
  p.U_z = Tensor::zeros(3, 3);
  p.b_z = Tensor::full(1, 3, -50.0);
  const Tensor h = Tensor::row({0.4, -0.7, 0.1});
  const Tensor out = gru_step(Tensor::row({1.0, -1.0}), h, p);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(out[j], h[j], 1e-15);
}

TEST(GruStep, MatchesScalarOracle) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const GruCellParams p = random_gru_cell(3, 3, rng);
    const Tensor x = random_tensor(1, 3, rng), h = random_tensor(1, 3, rng, -1.0, 1.0);
    const auto want = scalar_gru_step(as_vector(x), as_vector(h), p);
    const Tensor got = gru_step(x, h, p);
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(got[j], want[j], 1e-12);
  }
}

TEST(GruStep, StateStaysWithinConvexBound) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const GruCellParams p = random_gru_cell(4, 6, rng, 3.0);
    const Tensor x = random_tensor(1, 4, rng, -5.0, 5.0), h = random_tensor(1, 6, rng, -4.0, 4.0);
    const Tensor out = gru_step(x, h, p);
    for (std::size_t j = 0; j < 6; ++j) EXPECT_LE(std::abs(out[j]), std::max(std::abs(h[j]), 1.0));
  }
}

TEST(GruStep, DimensionMismatch) {
  std::mt19937_64 rng(4);
  EXPECT_THROW(gru_step(Tensor::zeros(1, 2), Tensor::zeros(1, 3), random_gru_cell(3, 3, rng)), DimensionError);
}

TEST(Encode, SingleStepIsOneGruStepFromZero) {
  std::mt19937_64 rng(5);
  ModelConfig c = small_config();
  c.input_length = 1;
  ModelParams m = init_model(c, 1);
  randomize(m, rng);
  const Tensor window = random_tensor(c.k + kTimeFeatureDim, 1, rng);
  Tensor x = Tensor::zeros(1, window.rows());
  for (std::size_t r = 0; r < window.rows(); ++r) x(0, r) = window(r, 0);
  const Tensor want = gru_step(x, Tensor::zeros(1, c.hidden), cell_of(m, "enc."));
  EXPECT_EQ(encode(m, window, 2), want);
}

TEST(Encode, ConstantInputContracts) {
  std::mt19937_64 rng(6);
  const GruCellParams p = random_gru_cell(3, 4, rng, 0.2);
  const Tensor x = random_tensor(1, 3, rng);
  Tensor h = Tensor::zeros(1, 4);
  std::vector<double> steps;
  for (int j = 0; j < 25; ++j) {
    const Tensor next = gru_step(x, h, p);
    steps.push_back(norm_diff(next, h));
    h = next;
  }
  for (std::size_t j = 1; j < steps.size(); ++j) EXPECT_LT(steps[j], steps[j - 1]) << "step " << j;
}

TEST(Encode, OrderMatters) {
  std::mt19937_64 rng(7);
  ModelParams m = init_model(small_config(), 2);
  randomize(m, rng);
  Tensor window = random_tensor(3 + kTimeFeatureDim, 4, rng);
  const Tensor a = encode(m, window, 0);
  for (std::size_t r = 0; r < window.rows(); ++r) std::swap(window(r, 1), window(r, 2));
  EXPECT_NE(encode(m, window, 0), a);
}

TEST(Encode, WrongLengthIsError) {
  const ModelParams m = init_model(small_config(), 3);
  EXPECT_THROW(encode(m, Tensor::zeros(3 + kTimeFeatureDim, 5), 0), DimensionError);
}

TEST(Decode, ZeroHeadWeightsGiveBias) {
  std::mt19937_64 rng(8);
  ModelParams m = init_model(small_config(), 4);
  randomize(m, rng);
  m.at("head.W2") = Tensor::zeros(1, 4);
  m.at("head.b2") = Tensor::scalar(0.37);
  const auto out = decode(m, random_tensor(1, 5, rng), 0.5, 1, random_tensor(3, kTimeFeatureDim, rng));
  ASSERT_EQ(out.size(), 3u);
  for (double v : out) EXPECT_EQ(v, 0.37);
}

TEST(Decode, ResidualHeadAccumulatesOnPreviousValue) {
  std::mt19937_64 rng(8);
  ModelConfig c = small_config();
  c.residual_head = true;
  ModelParams m = init_model(c, 4);
  randomize(m, rng);
  m.at("head.W2") = Tensor::zeros(1, 4);
  m.at("head.b2") = Tensor::scalar(0.37);
  const auto out = decode(m, random_tensor(1, 5, rng), 0.5, 1, random_tensor(3, kTimeFeatureDim, rng));
  ASSERT_EQ(out.size(), 3u);
  double want = 0.5;
  for (double v : out) EXPECT_EQ(v, want += 0.37);
}

TEST(Decode, TurbineIdentityChangesForecast) {
  std::mt19937_64 rng(9);
  ModelParams m = init_model(small_config(), 5);
  randomize(m, rng);
  const Tensor h = random_tensor(1, 5, rng), u = random_tensor(3, kTimeFeatureDim, rng);
  const auto a = decode(m, h, 0.2, 0, u), b = decode(m, h, 0.2, 3, u);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_NE(a[j], b[j]);
}

TEST(Decode, SingleStepIsGruThenHead) {
  std::mt19937_64 rng(10);
  ModelConfig c = small_config();
  c.horizon = 1;
  ModelParams m = init_model(c, 6);
  randomize(m, rng);
  const Tensor h = random_tensor(1, c.hidden, rng), u = random_tensor(1, kTimeFeatureDim, rng);
  const double y = 0.41;
  const std::size_t turbine = 2;
  std::vector<double> x{y};
  for (std::size_t r = 0; r < c.embed_dim; ++r) x.push_back(m.at("embedding")(r, turbine));
  for (std::size_t q = 0; q < kTimeFeatureDim; ++q) x.push_back(u[q]);
  const auto h1 = scalar_gru_step(x, as_vector(h), cell_of(m, "dec."));
  double want = m.at("head.b2").item();
  for (std::size_t j = 0; j < c.head_hidden; ++j) {
    double a = m.at("head.b1")(0, j);
    for (std::size_t q = 0; q < c.hidden; ++q) a += m.at("head.W1")(j, q) * h1[q];
    want += m.at("head.W2")(0, j) * std::tanh(a);
  }
  const auto got = decode(m, h, y, turbine, u);
  ASSERT_EQ(got.size(), 1u);
  EXPECT_NEAR(got[0], want, 1e-12);
}

TEST(Decode, HorizonMismatchIsError) {
  const ModelParams m = init_model(small_config(), 7);
  EXPECT_THROW(decode(m, Tensor::zeros(1, 5), 0.0, 0, Tensor::zeros(2, kTimeFeatureDim)), DimensionError);
  EXPECT_THROW(decode(m, Tensor::zeros(1, 5), 0.0, 9, Tensor::zeros(3, kTimeFeatureDim)), DimensionError);
}

TEST(Embedding, LookupIsColumn) {
  const ModelParams m = init_model(small_config(), 8);
  Tape t;
  const BoundModel bm(t, m, false);
  const std::size_t ids[] = {3, 1};
  const Tensor g = bm.embed(ids).value();
  for (std::size_t r = 0; r < 3; ++r) {
    EXPECT_EQ(g(0, r), m.at("embedding")(r, 3));
    EXPECT_EQ(g(1, r), m.at("embedding")(r, 1));
  }
}

TEST(Embedding, FrozenSharesOneColumnAndIsNotTrainable) {
  ModelConfig c = small_config();
  c.freeze_embedding = true;
  const ModelParams m = init_model(c, 9);
  const Tensor& e = m.at("embedding");
  for (std::size_t r = 0; r < e.rows(); ++r)
    for (std::size_t col = 1; col < e.cols(); ++col) EXPECT_EQ(e(r, col), e(r, 0));
  EXPECT_FALSE(m.params[m.index_of("embedding")].trainable);
}

TEST(Init, TimeFeatureColumnsStartAtZero) {
  ModelConfig c = small_config();
  c.power_history = true;
  const ModelParams m = init_model(c, 15);
  const auto check = [&](const std::string& name, std::size_t first) {
    const Tensor& w = m.at(name);
    for (std::size_t r = 0; r < w.rows(); ++r)
      for (std::size_t col = 0; col < w.cols(); ++col) {
        const bool time_col = col >= first && col < first + kTimeFeatureDim;
        if (time_col) EXPECT_EQ(w(r, col), 0.0) << name << " col " << col;
        else EXPECT_NE(w(r, col), 0.0) << name << " col " << col;
      }
  };
  for (const char* g : {"W_z", "W_r", "W_h"}) {
    check(std::string("enc.") + g, c.k + 1);
    check(std::string("dec.") + g, 1 + c.embed_dim);
  }
}

TEST(ParameterCount, ClosedForms) {
  EXPECT_EQ(gru_parameter_count(2, 3), 54u);
  GruCellParams p = zero_cell(2, 3);
  std::size_t n = 0;
  for (const Tensor* t : {&p.W_z, &p.W_r, &p.W_h, &p.U_z, &p.U_r, &p.U_h, &p.b_z, &p.b_r, &p.b_h}) n += t->size();
  EXPECT_EQ(n, 54u);
  ModelConfig c;
  c.turbines = 200;
  EXPECT_EQ(init_model(c, 1).at("embedding").size(), 3200u);
}

TEST(ParameterCount, DefaultConfigBudget) {
  ModelConfig c;
  c.turbines = 200;
  const ModelParams m = init_model(c, 1);
  const std::size_t enc = gru_parameter_count(6 + 8, 48), dec = gru_parameter_count(1 + 16 + 8, 48);
  const std::size_t head = 32 * 48 + 32 + 32 + 1, emb = 16 * 200;
  EXPECT_EQ(parameter_count(m), enc + dec + head + emb);
  EXPECT_GE(parameter_count(m), 20000u);
  EXPECT_LE(parameter_count(m), 25000u);
}

TEST(ParameterCount, MlpWidthTracksBudget) {
  ModelConfig c;
  c.turbines = 20;
  c.kind = ModelKind::mlp;
  c.mlp_hidden = mlp_width_for_budget(c, 22000);
  const std::size_t n = parameter_count(init_model(c, 1));
  const std::size_t per_unit = c.mlp_input_dim() + 1 + c.horizon;
  EXPECT_LE(n > 22000 ? n - 22000 : 22000 - n, per_unit / 2 + 1);
  c.mlp_hidden = 0;
  EXPECT_THROW(init_model(c, 1), ConfigError);
}

TEST(Gradient, EveryBlockMatchesFiniteDifferences) {
  std::mt19937_64 rng(12);
  ModelParams m = init_model(small_config(), 10);
  randomize(m, rng);
  const auto b = random_batch(m.config, {2}, rng);
  for (const auto& c : check_model_gradients(m, b)) {
    EXPECT_LT(c.max_rel_error, 1e-4) << c.name;
    if (c.name == "embedding")
      for (std::size_t r = 0; r < c.analytic.rows(); ++r)
        for (std::size_t col = 0; col < c.analytic.cols(); ++col)
          if (col != 2) {
            EXPECT_EQ(c.analytic(r, col), 0.0) << "unsampled column " << col;
          }
  }
}

TEST(Gradient, VariantsMatchFiniteDifferences) {
  std::mt19937_64 rng(13);
  for (int variant = 0; variant < 5; ++variant) {
    ModelConfig c = small_config();
    if (variant == 0) c.kind = ModelKind::rnn;
    if (variant == 1) c.embed_encoder = c.power_history = true;
    if (variant == 2) {
      c.kind = ModelKind::mlp;
      c.mlp_hidden = 6;
    }
    if (variant == 3) c.freeze_embedding = true;
    if (variant == 4) c.residual_head = true;
    ModelParams m = init_model(c, 11);
    randomize(m, rng);
    const auto b = random_batch(c, {0, 3, 1}, rng);
    for (const auto& g : check_model_gradients(m, b)) {
      if (variant == 3 && g.name == "embedding") {
        EXPECT_EQ(g.analytic, Tensor::zeros_like(g.analytic));
        continue;
      }
      EXPECT_LT(g.max_rel_error, 1e-4) << "variant " << variant << " " << g.name;
    }
  }
}

TEST(Forecast, TargetsNeverRead) {
  std::mt19937_64 rng(14);
  ModelParams m = init_model(small_config(), 12);
  randomize(m, rng);
  auto b = random_batch(m.config, {0, 1, 2, 3}, rng);
  const Tensor before = predict(m, b);
  b.targets = random_tensor(4, 3, rng, 10.0, 20.0);
  EXPECT_EQ(predict(m, b), before);
}

TEST(Forecast, BatchRowsAreIndependent) {
  std::mt19937_64 rng(15);
  ModelParams m = init_model(small_config(), 13);
  randomize(m, rng);
  const auto b = random_batch(m.config, {0, 1, 2}, rng);
  const Tensor all = predict(m, b);
  Batch one;
  one.turbines = {b.turbines[1]};
  for (const auto& s : b.encoder_steps) {
    Tensor r = Tensor::zeros(1, s.cols());
    for (std::size_t q = 0; q < s.cols(); ++q) r(0, q) = s(1, q);
    one.encoder_steps.push_back(r);
  }
  one.y_current = Tensor::scalar(b.y_current(1, 0));
  for (const auto& u : b.decoder_time) {
    Tensor r = Tensor::zeros(1, kTimeFeatureDim);
    for (std::size_t q = 0; q < kTimeFeatureDim; ++q) r(0, q) = u(1, q);
    one.decoder_time.push_back(r);
  }
  one.targets = Tensor::zeros(1, 3);
  const Tensor single = predict(m, one);
  for (std::size_t h = 0; h < 3; ++h) EXPECT_NEAR(single(0, h), all(1, h), 1e-14);
}

TEST(RnnCell, ZeroWeightsGiveZeroState) {
  ModelConfig c = small_config();
  c.kind = ModelKind::rnn;
  ModelParams m = init_model(c, 14);
  for (auto& p : m.params)
    if (p.name.rfind("enc.", 0) == 0) p.value = Tensor::zeros_like(p.value);
  std::mt19937_64 rng(16);
  EXPECT_EQ(encode(m, random_tensor(3 + kTimeFeatureDim, 4, rng), 0), Tensor::zeros(1, 5));
}

TEST(ModelConfig, Validation) {
  ModelConfig c = small_config();
  c.k = 5;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(parse_model_kind("lstm"), ConfigError);
}
