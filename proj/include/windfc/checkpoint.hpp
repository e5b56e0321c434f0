#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "windfc/graph.hpp"
#include "windfc/model.hpp"
#include "windfc/training.hpp"

namespace windfc {

inline constexpr int kCheckpointVersion = 1;

/// JSON checkpoint: hyperparameters, every parameter tensor, normalizer
/// statistics and the fingerprint of the neighbor index it was trained on.
struct Checkpoint {
  ModelParams model;
  Normalizer normalizer;
  std::vector<std::string> turbine_ids;
  std::string neighbor_digest;
  HourStamp train_end = 0;  // first hour after the training span
  bool power_target = true;  // false: trained to forecast speed

  void check_table(const SeriesTable& table) const {
    if (table.has_power != power_target)
      throw DataError(power_target ? "checkpoint forecasts power but the series has no power column"
                                   : "checkpoint forecasts speed but the series has a power column");
  }

  /// Rebuilds k(i) for `layout` and refuses a layout whose neighbor index
  /// differs from the training one.
  NeighborIndex neighbors_for(const FarmLayout& layout) const {
    const std::string expected = neighbor_digest;
    std::string actual = "incompatible";
    if (layout.size() == model.config.turbines && model.config.k <= layout.size())
      actual = build_knn(layout, model.config.k).digest(layout);
    if (actual != expected)
      throw DataError("checkpoint neighbor digest " + expected + " does not match layout digest " + actual);
    return build_knn(layout, model.config.k);
  }
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"kind", to_string(c.kind)},        {"turbines", c.turbines},
          {"k", c.k},                         {"input_length", c.input_length},
          {"horizon", c.horizon},             {"hidden", c.hidden},
          {"embed_dim", c.embed_dim},         {"head_hidden", c.head_hidden},
          {"mlp_hidden", c.mlp_hidden},       {"power_history", c.power_history},
          {"embed_encoder", c.embed_encoder}, {"freeze_embedding", c.freeze_embedding},
          {"southern", c.southern},           {"residual_head", c.residual_head}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.kind = parse_model_kind(j.at("kind").get<std::string>());
  c.turbines = j.at("turbines");
  c.k = j.at("k");
  c.input_length = j.at("input_length");
  c.horizon = j.at("horizon");
  c.hidden = j.at("hidden");
  c.embed_dim = j.at("embed_dim");
  c.head_hidden = j.at("head_hidden");
  c.mlp_hidden = j.at("mlp_hidden");
  c.power_history = j.at("power_history");
  c.embed_encoder = j.at("embed_encoder");
  c.freeze_embedding = j.at("freeze_embedding");
  c.southern = j.at("southern");
  c.residual_head = j.at("residual_head");
  return c;
}

inline Checkpoint make_checkpoint(const TrainedModel& tm, const FarmLayout& layout, HourStamp train_end,
                                  bool power_target) {
  return {tm.model, tm.normalizer, layout.ids(), tm.neighbors.digest(layout), train_end, power_target};
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  nlohmann::json j;
  j["format"] = "windfc-checkpoint";
  j["version"] = kCheckpointVersion;
  j["config"] = to_json(ck.model.config);
  j["normalizer"] = {{"speed_mean", ck.normalizer.speed_mean},
                     {"speed_std", ck.normalizer.speed_std},
                     {"target_scale", ck.normalizer.target_scale}};
  j["turbine_ids"] = ck.turbine_ids;
  j["neighbor_digest"] = ck.neighbor_digest;
  j["train_end"] = format_timestamp(ck.train_end);
  j["target"] = ck.power_target ? "power" : "speed";
  auto& ps = j["params"] = nlohmann::json::array();
  for (const auto& p : ck.model.params)
    ps.push_back({{"name", p.name}, {"shape", p.value.shape()}, {"trainable", p.trainable}, {"values", p.value.values()}});
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write " + tmp);
    out << j.dump(1) << '\n';
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
    if (j.at("format") != "windfc-checkpoint") throw DataError(path + ": not a checkpoint file");
    if (j.at("version") != kCheckpointVersion)
      throw DataError(path + ": unsupported checkpoint version " + j.at("version").dump());
    Checkpoint ck;
    ck.model.config = model_config_from_json(j.at("config"));
    ck.model.config.validate();
    const auto& nz = j.at("normalizer");
    ck.normalizer.speed_mean = nz.at("speed_mean").get<std::vector<double>>();
    ck.normalizer.speed_std = nz.at("speed_std").get<std::vector<double>>();
    ck.normalizer.target_scale = nz.at("target_scale").get<std::vector<double>>();
    ck.turbine_ids = j.at("turbine_ids").get<std::vector<std::string>>();
    ck.neighbor_digest = j.at("neighbor_digest").get<std::string>();
    ck.train_end = parse_timestamp(j.at("train_end").get<std::string>());
    ck.power_target = j.at("target") == "power";
    for (const auto& p : j.at("params"))
      ck.model.params.push_back({p.at("name").get<std::string>(),
                                 Tensor(p.at("shape").get<Shape>(), p.at("values").get<std::vector<double>>()),
                                 p.at("trainable").get<bool>()});
    // Shapes must match a fresh model of the same configuration.
    const ModelParams fresh = init_model(ck.model.config, 0);
    if (fresh.params.size() != ck.model.params.size()) throw DataError(path + ": parameter set mismatch");
    for (std::size_t i = 0; i < fresh.params.size(); ++i)
      if (fresh.params[i].name != ck.model.params[i].name ||
          fresh.params[i].value.shape() != ck.model.params[i].value.shape())
        throw DataError(path + ": parameter " + ck.model.params[i].name + " has unexpected name or shape");
    if (ck.normalizer.turbines() != ck.model.config.turbines || ck.turbine_ids.size() != ck.model.config.turbines)
      throw DataError(path + ": normalizer or turbine list size mismatch");
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": malformed checkpoint: " + e.what());
  }
}

}  // namespace windfc
