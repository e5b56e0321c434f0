#pragma once

#include <charconv>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "windfc/csv.hpp"
#include "windfc/model.hpp"
#include "windfc/training.hpp"

namespace windfc {

struct SettingDoc {
  const char* key;
  const char* help;
};

/// Every key accepted in a config file (and as a --flag with dashes).
inline const std::vector<SettingDoc>& setting_docs() {
  static const std::vector<SettingDoc> docs = {
      {"model", "gru (default), rnn or mlp"},
      {"k", "neighbors per turbine, the turbine itself included (default 6)"},
      {"input_length", "encoder window m in hours (default 48)"},
      {"horizon", "forecast steps tau_max (default 12)"},
      {"hidden", "recurrent state size (default 48)"},
      {"embed_dim", "turbine embedding size d_E (default 16)"},
      {"head_hidden", "hidden units of the output MLP head (default 32)"},
      {"mlp_hidden", "MLP baseline width; unset sizes it to the main model's parameter count"},
      {"power_history", "feed the turbine's own target history to the encoder (default false)"},
      {"embed_encoder", "also append the embedding to encoder inputs (default false)"},
      {"freeze_embedding", "share one constant embedding across turbines (default false)"},
      {"southern", "southern-hemisphere seasons (default false)"},
      {"residual_head", "head emits the change from the previous value instead of the value (default false)"},
      {"learning_rate", "Adam step size (default 0.001)"},
      {"batch_size", "samples per update (default 128)"},
      {"epochs", "maximum epochs (default 200)"},
      {"patience", "early-stop patience in epochs (default 10)"},
      {"val_fraction", "trailing share of the training span used for validation (default 0.1)"},
      {"clip_norm", "global gradient-norm bound (default 5)"},
      {"shard_size", "samples per gradient shard (default 16)"},
      {"train_days", "leading days of the series used for training (default 30)"},
      {"seed", "seed for initialization and shuffling (default 1)"},
  };
  return docs;
}

/// Resolved model/training settings.
struct Settings {
  ModelConfig model;
  TrainConfig train;
  std::size_t train_days = 30;
  bool mlp_hidden_set = false;
  std::map<std::string, std::string> explicit_values;

  void set(const std::string& key, const std::string& raw) {
    const std::string v(csv::trim(raw));
    const auto as_size = [&]() -> std::size_t {
      std::size_t out = 0;
      const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
      if (ec != std::errc{} || p != v.data() + v.size())
        throw ConfigError("setting '" + key + "' expects a non-negative integer, got '" + v + "'");
      return out;
    };
    const auto as_double = [&]() {
      try {
        return csv::parse_double(v, key);
      } catch (const DataError&) {
        throw ConfigError("setting '" + key + "' expects a number, got '" + v + "'");
      }
    };
    const auto as_bool = [&]() {
      if (v == "true" || v == "1" || v == "yes") return true;
      if (v == "false" || v == "0" || v == "no") return false;
      throw ConfigError("setting '" + key + "' expects true or false, got '" + v + "'");
    };
    if (key == "model") model.kind = parse_model_kind(v);
    else if (key == "k") model.k = as_size();
    else if (key == "input_length") model.input_length = as_size();
    else if (key == "horizon") model.horizon = as_size();
    else if (key == "hidden") model.hidden = as_size();
    else if (key == "embed_dim") model.embed_dim = as_size();
    else if (key == "head_hidden") model.head_hidden = as_size();
    else if (key == "mlp_hidden") {
      model.mlp_hidden = as_size();
      if (model.mlp_hidden == 0) throw ConfigError("mlp_hidden must be >= 1");
      mlp_hidden_set = true;
    } else if (key == "power_history") model.power_history = as_bool();
    else if (key == "embed_encoder") model.embed_encoder = as_bool();
    else if (key == "freeze_embedding") model.freeze_embedding = as_bool();
    else if (key == "southern") model.southern = as_bool();
    else if (key == "residual_head") model.residual_head = as_bool();
    else if (key == "learning_rate") train.learning_rate = as_double();
    else if (key == "batch_size") train.batch_size = as_size();
    else if (key == "epochs") train.epochs = as_size();
    else if (key == "patience") train.patience = as_size();
    else if (key == "val_fraction") train.val_fraction = as_double();
    else if (key == "clip_norm") train.clip_norm = as_double();
    else if (key == "shard_size") train.shard_size = as_size();
    else if (key == "train_days") train_days = as_size();
    else if (key == "seed") train.seed = as_size();
    else throw ConfigError("unknown setting '" + key + "'");
    explicit_values[key] = v;
  }

  /// Reads `key = value` lines; `#` starts a comment.
  void load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    std::string line;
    std::size_t no = 0;
    while (std::getline(in, line)) {
      ++no;
      if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
      if (csv::trim(line).empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError(path + ":" + std::to_string(no) + ": expected key=value");
      try {
        set(std::string(csv::trim(std::string_view(line).substr(0, eq))), line.substr(eq + 1));
      } catch (const ConfigError& e) {
        throw ConfigError(path + ":" + std::to_string(no) + ": " + e.what());
      }
    }
  }

  void validate() const {
    train.validate();
    if (train_days < 1) throw ConfigError("train_days must be >= 1");
  }

  /// Snapshot of every key with its effective value.
  std::map<std::string, std::string> resolved() const {
    const auto b = [](bool x) { return std::string(x ? "true" : "false"); };
    return {{"model", to_string(model.kind)},
            {"k", std::to_string(model.k)},
            {"input_length", std::to_string(model.input_length)},
            {"horizon", std::to_string(model.horizon)},
            {"hidden", std::to_string(model.hidden)},
            {"embed_dim", std::to_string(model.embed_dim)},
            {"head_hidden", std::to_string(model.head_hidden)},
            {"mlp_hidden", mlp_hidden_set ? std::to_string(model.mlp_hidden) : "auto"},
            {"power_history", b(model.power_history)},
            {"embed_encoder", b(model.embed_encoder)},
            {"freeze_embedding", b(model.freeze_embedding)},
            {"southern", b(model.southern)},
            {"residual_head", b(model.residual_head)},
            {"learning_rate", csv::format_double(train.learning_rate)},
            {"batch_size", std::to_string(train.batch_size)},
            {"epochs", std::to_string(train.epochs)},
            {"patience", std::to_string(train.patience)},
            {"val_fraction", csv::format_double(train.val_fraction)},
            {"clip_norm", csv::format_double(train.clip_norm)},
            {"shard_size", std::to_string(train.shard_size)},
            {"train_days", std::to_string(train_days)},
            {"seed", std::to_string(train.seed)}};
  }
};

}  // namespace windfc
