#pragma once

#include <algorithm>
#include <cctype>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "windfc/checkpoint.hpp"
#include "windfc/config.hpp"
#include "windfc/data.hpp"
#include "windfc/eval.hpp"
#include "windfc/graph.hpp"
#include "windfc/hash.hpp"
#include "windfc/model.hpp"
#include "windfc/training.hpp"

namespace windfc::cli {

inline constexpr const char* kVersion = "1.0.0";

namespace fs = std::filesystem;

inline void write_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write " + tmp.string());
    out << content;
    if (!out) throw DataError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

/// Resolved inputs and settings of one invocation, written next to its
/// outputs.
struct RunManifest {
  std::string command;
  std::map<std::string, std::string> config;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::string>> inputs;  // path, digest
  std::vector<std::string> outputs;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  void input(const std::string& path) { inputs.emplace_back(path, file_digest(path)); }

  /// Refuses to overwrite any input file.
  void guard(const fs::path& out) const {
    for (const auto& [in, digest] : inputs) {
      std::error_code ec;
      if (fs::exists(out) && fs::equivalent(out, in, ec))
        throw ConfigError("output " + out.string() + " would overwrite input " + in);
    }
  }

  void write(const fs::path& dir) const {
    nlohmann::ordered_json j;
    j["tool"] = "windfc";
    j["version"] = kVersion;
    j["command"] = command;
    j["seed"] = seed;
    j["config"] = config;
    auto& in = j["inputs"] = nlohmann::ordered_json::array();
    for (const auto& [p, d] : inputs) in.push_back({{"path", p}, {"fnv1a64", d}});
    j["outputs"] = outputs;
    j["wall_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_atomic(dir / ("manifest-" + command + ".json"), j.dump(2) + "\n");
  }
};

struct Options {
  std::string layout, series, out, out_dir, checkpoint, config, origin, test_start, method = "all",
      units = "normalized", turbine;
  std::size_t threads = 1, turbines = 20, days = 120, k = 6, max_lag = 48;
  std::uint64_t synth_seed = 7;
  std::string corr_length = "1500";
  double noise = SynthConfig{}.noise_level, ar = SynthConfig{}.ar_coeff;
  std::string start = "2021-01-01T00:00:00Z";
  bool allow_split = false, lonlat = false, no_persistence = false;
  std::map<std::string, std::string> settings;  // --flag values for Settings keys
};

inline std::string flag_name(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return "--" + key;
}

inline void add_settings(CLI::App* sub, Options& o) {
  sub->add_option("--config", o.config, "flat key=value config file; flags override it");
  for (const auto& d : setting_docs())
    sub->add_option_function<std::string>(
        flag_name(d.key), [&o, key = std::string(d.key)](const std::string& v) { o.settings[key] = v; }, d.help);
}

inline Settings resolve_settings(const Options& o) {
  Settings s;
  if (!o.config.empty()) s.load_file(o.config);
  for (const auto& [k, v] : o.settings) s.set(k, v);
  s.train.threads = o.threads;
  s.validate();
  return s;
}

inline SeriesTable load_series(const Options& o, const FarmLayout& layout) {
  return ingest_file(o.series, layout, IngestOptions{3, o.allow_split});
}

/// Column index where the test span begins: `train_days` after the first hour.
inline std::size_t split_column(const SeriesTable& table, std::size_t train_days) {
  const std::size_t c = table.column_at_or_after(table.hours.front() + static_cast<HourStamp>(train_days * 24));
  if (c == 0 || c >= table.length()) throw DataError("train_days leaves an empty training or test span");
  return c;
}

inline std::string upper(std::string s) {
  for (auto& ch : s) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  return s;
}

inline void size_mlp(Settings& s, std::size_t turbines) {
  if (s.model.kind != ModelKind::mlp || s.mlp_hidden_set) return;
  s.model.turbines = turbines;
  ModelConfig ref = s.model;
  ref.kind = ModelKind::gru;
  s.model.mlp_hidden = mlp_width_for_budget(s.model, parameter_count(init_model(ref, 0)));
}

inline int cmd_synth(const Options& o, std::ostream& out) {
  RunManifest man;
  man.command = "synth";
  SynthConfig cfg;
  cfg.turbines = o.turbines;
  cfg.days = o.days;
  cfg.seed = o.synth_seed;
  cfg.spatial_corr_length = o.corr_length == "inf" ? std::numeric_limits<double>::infinity()
                                                   : csv::parse_double(o.corr_length, "corr-length");
  cfg.noise_level = o.noise;
  cfg.ar_coeff = o.ar;
  cfg.start = parse_timestamp(o.start);
  const SynthFarm farm = synth_farm(cfg);
  man.seed = cfg.seed;
  man.config = {{"turbines", std::to_string(cfg.turbines)},  {"days", std::to_string(cfg.days)},
                {"corr_length", o.corr_length},               {"noise", csv::format_double(cfg.noise_level)},
                {"ar", csv::format_double(cfg.ar_coeff)},     {"start", format_timestamp(cfg.start)}};
  const fs::path dir(o.out_dir);
  std::ostringstream lay, ser;
  write_layout(lay, farm.layout);
  write_series(ser, farm.layout, farm.table);
  write_atomic(dir / "layout.csv", lay.str());
  write_atomic(dir / "series.csv", ser.str());
  man.outputs = {"layout.csv", "series.csv"};
  man.write(dir);
  out << "wrote " << farm.layout.size() << " turbines x " << farm.table.length() << " hours to " << dir.string()
      << '\n';
  return 0;
}

inline int cmd_graph(const Options& o, std::ostream& out) {
  RunManifest man;
  man.command = "graph";
  man.input(o.layout);
  FarmLayout layout = read_layout(o.layout);
  if (o.lonlat) layout = project_lonlat(layout);
  const NeighborIndex idx = build_knn(layout, o.k);
  man.config = {{"k", std::to_string(o.k)}, {"lonlat", o.lonlat ? "true" : "false"}};
  const fs::path path(o.out);
  man.guard(path);
  std::ostringstream os;
  write_neighbors(os, layout, idx);
  write_atomic(path, os.str());
  man.outputs = {path.filename().string()};
  man.write(path.has_parent_path() ? path.parent_path() : fs::path("."));
  out << "neighbor digest " << idx.digest(layout) << '\n';
  return 0;
}

inline int cmd_train(const Options& o, std::ostream& out) {
  RunManifest man;
  man.command = "train";
  man.input(o.layout);
  man.input(o.series);
  if (!o.config.empty()) man.input(o.config);
  Settings s = resolve_settings(o);
  const FarmLayout layout = read_layout(o.layout);
  size_mlp(s, layout.size());
  const SeriesTable table = load_series(o, layout);
  const std::size_t cut = split_column(table, s.train_days);
  const SeriesTable train_table = table.slice(0, cut);
  const NeighborIndex nbr = build_knn(layout, s.model.k);
  man.config = s.resolved();
  man.seed = s.train.seed;
  const TrainedModel tm = fit(train_table, nbr, s.model, s.train, [&](const EpochRecord& r) {
    out << "epoch " << r.epoch << " train_mse " << r.train_mse << " val_mse " << r.val_mse << '\n';
  });
  const fs::path dir(o.out_dir);
  fs::create_directories(dir);
  save_checkpoint((dir / "checkpoint.json").string(), make_checkpoint(tm, layout, table.hours[cut], table.has_power));
  std::ostringstream log;
  write_train_log(log, tm.result.log);
  write_atomic(dir / "train_log.csv", log.str());
  man.outputs = {"checkpoint.json", "train_log.csv"};
  man.write(dir);
  out << "parameters " << parameter_count(tm.model) << ", best epoch " << tm.result.best_epoch << " ("
      << tm.result.stop_reason << ")\n";
  if (tm.result.diverged) throw NumericError("training " + tm.result.stop_reason + "; kept last good checkpoint");
  return 0;
}

inline int cmd_forecast(const Options& o, std::ostream& out) {
  RunManifest man;
  man.command = "forecast";
  man.input(o.checkpoint);
  man.input(o.layout);
  man.input(o.series);
  const Checkpoint ck = load_checkpoint(o.checkpoint);
  const FarmLayout layout = read_layout(o.layout);
  const NeighborIndex nbr = ck.neighbors_for(layout);
  const SeriesTable table = load_series(o, layout);
  ck.check_table(table);
  std::size_t t = table.length() - 1;
  if (!o.origin.empty()) {
    const HourStamp h = parse_timestamp(o.origin);
    t = table.column_at_or_after(h);
    if (t >= table.length() || table.hours[t] != h) throw DataError("origin " + o.origin + " is not in the series");
  }
  const Tensor f = forecast_at_origin(ck.model, ck.normalizer, nbr, table, t);
  std::ostringstream os;
  os << "turbine_id,origin,h,target_time,forecast\n";
  const std::string origin = format_timestamp(table.hours[t]);
  for (std::size_t i = 0; i < f.rows(); ++i)
    for (std::size_t h = 0; h < f.cols(); ++h)
      os << layout.id(i) << ',' << origin << ',' << h + 1 << ','
         << format_timestamp(table.hours[t] + static_cast<HourStamp>(h + 1)) << ','
         << csv::format_double(ck.normalizer.target_inverse(i, f(i, h))) << '\n';
  const fs::path path(o.out);
  man.guard(path);
  man.config = {{"origin", origin}};
  write_atomic(path, os.str());
  man.outputs = {path.filename().string()};
  man.write(path.has_parent_path() ? path.parent_path() : fs::path("."));
  out << "forecast from " << origin << " for " << f.rows() << " turbines\n";
  return 0;
}

inline void write_metric_files(const fs::path& dir, const MethodMetrics& rows, RunManifest& man) {
  std::ostringstream mae, rmse;
  write_metrics(mae, rows, Metric::mae);
  write_metrics(rmse, rows, Metric::rmse);
  write_atomic(dir / "metrics_mae.csv", mae.str());
  write_atomic(dir / "metrics_rmse.csv", rmse.str());
  man.outputs = {"metrics_mae.csv", "metrics_rmse.csv"};
  man.write(dir);
}

inline int cmd_evaluate(const Options& o, std::ostream& out) {
  RunManifest man;
  man.command = "evaluate";
  man.input(o.checkpoint);
  man.input(o.layout);
  man.input(o.series);
  const Checkpoint ck = load_checkpoint(o.checkpoint);
  const FarmLayout layout = read_layout(o.layout);
  const NeighborIndex nbr = ck.neighbors_for(layout);
  const SeriesTable table = load_series(o, layout);
  ck.check_table(table);
  const HourStamp start = o.test_start.empty() ? ck.train_end : parse_timestamp(o.test_start);
  const std::size_t c = table.column_at_or_after(start);
  if (c >= table.length()) throw DataError("test span is empty");
  const SeriesTable test = table.slice(c, table.length());
  const Units units = parse_units(o.units);
  const ModelConfig& mc = ck.model.config;
  const WindowSet windows(test, nbr, ck.normalizer, mc.window_options());
  MethodMetrics rows;
  if (!o.no_persistence)
    rows.emplace_back("PER", persistence_baseline(test, mc.input_length, mc.horizon,
                                                  units == Units::normalized ? std::span<const double>(
                                                                                   ck.normalizer.target_scale)
                                                                             : std::span<const double>{}));
  rows.emplace_back(upper(to_string(mc.kind)), evaluate(ck.model, windows, ck.normalizer, units, o.threads));
  man.config = {{"test_start", format_timestamp(test.hours.front())}, {"units", o.units}};
  write_metric_files(fs::path(o.out_dir), rows, man);
  out << "evaluated " << windows.size() << " windows from " << format_timestamp(test.hours.front()) << '\n';
  return 0;
}

inline int cmd_baseline(const Options& o, std::ostream& out) {
  RunManifest man;
  man.command = "baseline";
  man.input(o.layout);
  man.input(o.series);
  if (!o.config.empty()) man.input(o.config);
  Settings s = resolve_settings(o);
  const FarmLayout layout = read_layout(o.layout);
  const SeriesTable table = load_series(o, layout);
  const std::size_t cut = split_column(table, s.train_days);
  const SeriesTable train_table = table.slice(0, cut), test = table.slice(cut, table.length());
  const NeighborIndex nbr = build_knn(layout, s.model.k);
  const Units units = parse_units(o.units);
  const Normalizer norm = Normalizer::fit(train_table);
  std::vector<std::string> methods;
  if (o.method == "all") methods = {"per", "mlp", "rnn"};
  else if (o.method == "per" || o.method == "mlp" || o.method == "rnn") methods = {o.method};
  else throw ConfigError("unknown baseline '" + o.method + "' (expected per, mlp, rnn or all)");
  MethodMetrics rows;
  for (const auto& m : methods) {
    if (m == "per") {
      rows.emplace_back("PER", persistence_baseline(test, s.model.input_length, s.model.horizon,
                                                    units == Units::normalized ? std::span<const double>(
                                                                                     norm.target_scale)
                                                                               : std::span<const double>{}));
      continue;
    }
    Settings bs = s;
    bs.model.kind = parse_model_kind(m);
    size_mlp(bs, layout.size());
    out << "training " << m << " baseline\n";
    const TrainedModel tm = fit(train_table, nbr, bs.model, bs.train);
    const WindowSet windows(test, nbr, tm.normalizer, bs.model.window_options());
    rows.emplace_back(upper(m), evaluate(tm.model, windows, tm.normalizer, units, o.threads));
  }
  man.config = s.resolved();
  man.config["method"] = o.method;
  man.config["units"] = o.units;
  man.seed = s.train.seed;
  write_metric_files(fs::path(o.out_dir), rows, man);
  out << "wrote baseline metrics for " << rows.size() << " method(s)\n";
  return 0;
}

inline int cmd_acf(const Options& o, std::ostream& out) {
  RunManifest man;
  man.command = "acf";
  man.input(o.layout);
  man.input(o.series);
  const FarmLayout layout = read_layout(o.layout);
  const SeriesTable table = load_series(o, layout);
  const std::size_t i = o.turbine.empty() ? 0 : layout.index_of(o.turbine);
  std::vector<double> x(table.length());
  for (std::size_t t = 0; t < x.size(); ++t) x[t] = table.speed(i, t);
  const AcfResult a = acf(x, o.max_lag);
  const fs::path path(o.out);
  man.guard(path);
  std::ostringstream os;
  write_acf(os, a);
  write_atomic(path, os.str());
  man.config = {{"turbine", layout.id(i)}, {"max_lag", std::to_string(o.max_lag)}};
  man.outputs = {path.filename().string()};
  man.write(path.has_parent_path() ? path.parent_path() : fs::path("."));
  out << "acf of " << layout.id(i) << " over " << x.size() << " hours\n";
  return 0;
}

/// Parses argv (without the program name) and runs one subcommand.
/// Exit codes: 0 success, 1 runtime error, 2 usage error.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"windfc: turbine-level wind power forecasting with a GRU encoder-decoder", "windfc"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  Options o;

  auto* synth = app.add_subcommand("synth", "generate a synthetic farm (layout.csv, series.csv)");
  synth->add_option("--turbines", o.turbines, "number of turbines")->capture_default_str();
  synth->add_option("--days", o.days, "length in days")->capture_default_str();
  synth->add_option("--seed", o.synth_seed, "random seed")->capture_default_str();
  synth->add_option("--corr-length", o.corr_length, "spatial correlation length in meters, or inf")
      ->capture_default_str();
  synth->add_option("--noise", o.noise, "i.i.d. speed noise (m/s)")->capture_default_str();
  synth->add_option("--ar", o.ar, "hourly AR(1) coefficient")->capture_default_str();
  synth->add_option("--start", o.start, "first timestamp")->capture_default_str();
  synth->add_option("--out-dir", o.out_dir, "output directory")->required();

  auto* graph = app.add_subcommand("graph", "write the k-NN neighbor table");
  graph->add_option("--layout", o.layout, "layout CSV (turbine_id,x,y)")->required()->check(CLI::ExistingFile);
  graph->add_option("--k", o.k, "neighbors per turbine, self included")->capture_default_str();
  graph->add_flag("--lonlat", o.lonlat, "x,y are longitude,latitude degrees");
  graph->add_option("--out", o.out, "neighbor CSV path")->required();

  auto* train = app.add_subcommand("train", "train the forecaster on the leading train_days");
  train->add_option("--layout", o.layout, "layout CSV")->required()->check(CLI::ExistingFile);
  train->add_option("--series", o.series, "series CSV")->required()->check(CLI::ExistingFile);
  train->add_option("--out-dir", o.out_dir, "output directory")->required();
  add_settings(train, o);

  auto* forecast = app.add_subcommand("forecast", "forecast every turbine from one origin");
  forecast->add_option("--checkpoint", o.checkpoint, "checkpoint.json")->required()->check(CLI::ExistingFile);
  forecast->add_option("--layout", o.layout, "layout CSV")->required()->check(CLI::ExistingFile);
  forecast->add_option("--series", o.series, "series CSV")->required()->check(CLI::ExistingFile);
  forecast->add_option("--origin", o.origin, "origin timestamp (default: last hour of the series)");
  forecast->add_option("--out", o.out, "forecast CSV path")->required();

  auto* evaluate = app.add_subcommand("evaluate", "per-horizon MAE/RMSE of a checkpoint on the test span");
  evaluate->add_option("--checkpoint", o.checkpoint, "checkpoint.json")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--layout", o.layout, "layout CSV")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--series", o.series, "series CSV")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--test-start", o.test_start, "first test hour (default: end of training span)");
  evaluate->add_option("--units", o.units, "normalized or raw")->capture_default_str();
  evaluate->add_flag("--no-persistence", o.no_persistence, "omit the PER row");
  evaluate->add_option("--out-dir", o.out_dir, "output directory")->required();

  auto* baseline = app.add_subcommand("baseline", "persistence, MLP and vanilla RNN baselines");
  baseline->add_option("--method", o.method, "per, mlp, rnn or all")->capture_default_str();
  baseline->add_option("--layout", o.layout, "layout CSV")->required()->check(CLI::ExistingFile);
  baseline->add_option("--series", o.series, "series CSV")->required()->check(CLI::ExistingFile);
  baseline->add_option("--units", o.units, "normalized or raw")->capture_default_str();
  baseline->add_option("--out-dir", o.out_dir, "output directory")->required();
  add_settings(baseline, o);

  auto* acf_cmd = app.add_subcommand("acf", "sample autocorrelation of one turbine's wind speed");
  acf_cmd->add_option("--layout", o.layout, "layout CSV")->required()->check(CLI::ExistingFile);
  acf_cmd->add_option("--series", o.series, "series CSV")->required()->check(CLI::ExistingFile);
  acf_cmd->add_option("--turbine", o.turbine, "turbine id (default: first)");
  acf_cmd->add_option("--max-lag", o.max_lag, "largest lag")->capture_default_str();
  acf_cmd->add_option("--out", o.out, "ACF CSV path")->required();

  for (auto* sub : {train, forecast, evaluate, baseline, acf_cmd})
    sub->add_flag("--allow-split", o.allow_split, "split the series at gaps longer than 3 hours");
  for (auto* sub : {train, forecast, evaluate, baseline})
    sub->add_option("--threads", o.threads, "worker threads; results do not depend on it")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << '\n';
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const CLI::App* failed = &app;
    for (auto* sub : app.get_subcommands()) failed = sub;
    err << failed->help();
    return 2;
  }

  try {
    if (synth->parsed()) return cmd_synth(o, out);
    if (graph->parsed()) return cmd_graph(o, out);
    if (train->parsed()) return cmd_train(o, out);
    if (forecast->parsed()) return cmd_forecast(o, out);
    if (evaluate->parsed()) return cmd_evaluate(o, out);
    if (baseline->parsed()) return cmd_baseline(o, out);
    if (acf_cmd->parsed()) return cmd_acf(o, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

inline int main(int argc, char** argv) { return run(std::vector<std::string>(argv + 1, argv + argc)); }

}  // namespace windfc::cli
