// Copyright 2026 The tigr Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#pragma once

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>
#include <toml.hpp>

#include "tigr/cli/config.hpp"
#include "tigr/cli/manifest.hpp"
#include "tigr/data/csv.hpp"
#include "tigr/downstream/io.hpp"
#include "tigr/downstream/similarity.hpp"
#include "tigr/downstream/tasks.hpp"
#include "tigr/encoder/checkpoint.hpp"
#include "tigr/pipeline.hpp"
#include "tigr/spatiotemporal/matrices.hpp"
#include "tigr/training/trainer.hpp"

namespace tigr::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;
using Model = model::TigrModel<float>;

inline constexpr const char* kOutputRootEnv = "TIGR_OUTPUT_ROOT";

/// Relative output paths are placed under $TIGR_OUTPUT_ROOT when it is set.
inline fs::path output_path(const fs::path& p) {
  const char* root = std::getenv(kOutputRootEnv);
  if (!root || !*root || p.is_absolute()) return p;
  return fs::path(root) / p;
}

// ---------------------------------------------------------------- grid.toml

inline void write_grid_toml(const fs::path& path, const data::GridSpec& g) {
  std::ofstream out(path);
  out << "# bounding box in degrees, cell edge in metres\n[grid]\n"
      << "min_lon = " << data::csv::fmt(g.min_x) << "\nmin_lat = " << data::csv::fmt(g.min_y)
      << "\nmax_lon = " << data::csv::fmt(g.max_x) << "\nmax_lat = " << data::csv::fmt(g.max_y)
      << "\ncell_size_m = " << data::csv::fmt(g.cell_size_m) << "\nrows = " << g.M << "\ncols = " << g.N << '\n';
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

inline data::GridSpec read_grid_toml(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot read '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  const auto doc = parse_toml(ss.str(), path.string());
  const auto* t = doc["grid"].as_table();
  if (!t) throw ParseError(path.string() + ": missing [grid] table");
  auto num = [&](const char* k) {
    const auto* n = t->get(k);
    if (!n) throw ParseError(path.string() + ": missing grid." + std::string(k));
    return detail::require<double>(*n, std::string("grid.") + k);
  };
  auto g = data::GridSpec::make(num("min_lon"), num("min_lat"), num("max_lon"), num("max_lat"), num("cell_size_m"));
  if (const auto* r = t->get("rows"); r && detail::require<std::size_t>(*r, "grid.rows") != g.M) {
    throw ParseError(path.string() + ": rows disagree with the bounding box");
  }
  if (const auto* c = t->get("cols"); c && detail::require<std::size_t>(*c, "grid.cols") != g.N) {
    throw ParseError(path.string() + ": cols disagree with the bounding box");
  }
  return g;
}

// ---------------------------------------------------------------- data files

struct DataFiles {
  fs::path dir;
  fs::path segments() const { return dir / "segments.csv"; }
  fs::path edges() const { return dir / "edges.csv"; }
  fs::path raw() const { return dir / "raw.csv"; }
  fs::path matched() const { return dir / "matched.csv"; }
  fs::path grid() const { return dir / "grid.toml"; }
  std::vector<fs::path> inputs() const {
    std::vector<fs::path> out = {segments(), edges(), raw(), matched()};
    if (fs::exists(grid())) out.push_back(grid());
    return out;
  }
};

struct PreparedFiles {
  fs::path dir;
  fs::path split() const { return dir / "split.csv"; }
  fs::path transition() const { return dir / "transition.csv"; }
  fs::path traffic() const { return dir / "traffic.csv"; }
  fs::path report() const { return dir / "report.json"; }
};

inline data::GridSpec grid_for(const RunConfig& cfg, const DataFiles& files) {
  if (fs::exists(files.grid())) return read_grid_toml(files.grid());
  if (!cfg.bbox) throw ConfigError("no grid.toml next to the data; set grid.bbox", "grid.bbox");
  const auto& b = *cfg.bbox;
  return data::GridSpec::make(b[0], b[1], b[2], b[3], cfg.synth.cell_size_m);
}

inline void write_split_csv(const fs::path& path, const data::DatasetSplit& s) {
  auto out = data::csv::open_out(path.string());
  out << "traj_id,split\n";
  for (const auto& id : s.train) out << data::csv::quote(id) << ",train\n";
  for (const auto& id : s.validation) out << data::csv::quote(id) << ",validation\n";
  for (const auto& id : s.test) out << data::csv::quote(id) << ",test\n";
}

inline data::DatasetSplit read_split_csv(const fs::path& path) {
  data::DatasetSplit s;
  data::csv::read(path.string(), {"traj_id", "split"}, [&](const std::vector<std::string>& f, std::size_t ln) {
    if (f[1] == "train") s.train.push_back(f[0]);
    else if (f[1] == "validation") s.validation.push_back(f[0]);
    else if (f[1] == "test") s.test.push_back(f[0]);
    else throw ParseError("unknown split '" + f[1] + "'", ln);
  });
  return s;
}

struct LoadedData {
  Prepared prepared;
  std::size_t raw_issues = 0, matched_issues = 0;
  std::vector<std::string> warnings;
};

/// Reads the dataset files and runs preprocessing. With `split` the stored
/// assignment is reused; otherwise one is drawn from data.seed.
inline LoadedData load_data(const RunConfig& cfg, const DataFiles& files, const data::DatasetSplit* split = nullptr) {
  auto network = data::load_road_network(files.segments().string(), files.edges().string());
  const auto grid = grid_for(cfg, files);
  auto raw = data::load_raw_csv(files.raw().string());
  auto matched = data::load_matched_csv(files.matched().string(), network.net);
  LoadedData out;
  out.raw_issues = raw.issues.size();
  out.matched_issues = matched.issues.size();
  out.warnings = network.warnings;
  out.prepared = prepare(std::move(network.net), grid, raw.items, matched.items, cfg.prep, Rng(cfg.data_seed).derive(3),
                         split);
  return out;
}

/// Preprocessed data with the matrices read back from a preprocess directory.
inline Prepared load_prepared(const RunConfig& cfg, const DataFiles& files, const PreparedFiles& prep) {
  const auto split = read_split_csv(prep.split());
  auto p = load_data(cfg, files, &split).prepared;
  p.transition = st::load_transition_csv(prep.transition().string(), p.net.size());
  p.traffic = st::load_traffic_csv(prep.traffic().string(), p.net.size());
  return p;
}

// ---------------------------------------------------------------- synth

struct SynthSummary {
  std::size_t segments = 0, edges = 0, trajectories = 0, raw_points = 0, matched_points = 0;
};

inline SynthSummary cmd_synth(const RunConfig& cfg, const fs::path& out) {
  Stopwatch clock;
  validate(cfg);
  fs::create_directories(out);
  const DataFiles files{out};
  const auto ds = data::synth_generate(cfg.synth, Rng(cfg.data_seed));
  data::write_road_network(files.segments().string(), files.edges().string(), ds.net);
  data::write_raw_csv(files.raw().string(), ds.raw);
  data::write_matched_csv(files.matched().string(), ds.road);
  write_grid_toml(files.grid(), ds.grid);

  SynthSummary s;
  s.segments = ds.net.size();
  for (const auto& succ : ds.net.successors) s.edges += succ.size();
  s.trajectories = ds.raw.size();
  for (const auto& r : ds.raw) s.raw_points += r.points.size();
  for (const auto& r : ds.road) s.matched_points += r.tokens.size();

  RunManifest m{"synth", config_hash(cfg), cfg.data_seed};
  m.add_outputs(out);
  m.wall_clock_s = clock.seconds();
  m.write(out);
  return s;
}

// ---------------------------------------------------------------- preprocess

inline json cmd_preprocess(const RunConfig& cfg, const fs::path& data_dir, const fs::path& out) {
  Stopwatch clock;
  validate(cfg);
  const DataFiles files{data_dir};
  const PreparedFiles prep{out};
  const auto loaded = load_data(cfg, files);
  const auto& p = loaded.prepared;
  fs::create_directories(out);
  write_split_csv(prep.split(), p.split);
  st::write_transition_csv(prep.transition().string(), p.transition);
  st::write_traffic_csv(prep.traffic().string(), p.traffic);

  const double row_err = p.transition.max_row_sum_error();
  json report = {{"input_trajectories", p.input_count},
                 {"retained", p.samples.size()},
                 {"rejected", p.rejected},
                 {"load_issues", {{"raw", loaded.raw_issues}, {"matched", loaded.matched_issues}}},
                 {"network_warnings", loaded.warnings},
                 {"split", {{"train", p.train.size()}, {"validation", p.validation.size()}, {"test", p.test.size()}}},
                 {"segments", p.net.size()},
                 {"grid_cells", p.grid.cell_count()},
                 {"p_norm_row_sum", {{"max_abs_error", row_err}, {"tolerance", 1e-6}, {"ok", row_err <= 1e-6}}}};
  std::ofstream(prep.report()) << report.dump(2) << '\n';

  RunManifest m{"preprocess", config_hash(cfg), cfg.data_seed};
  for (const auto& f : files.inputs()) m.add_input(f);
  m.add_outputs(out);
  m.wall_clock_s = clock.seconds();
  m.write(out);
  return report;
}

// ---------------------------------------------------------------- pretrain

struct RunSource {
  fs::path data_dir;
  fs::path prepared_dir;
};

inline json checkpoint_extra(const RunConfig& cfg, const RunSource& src) {
  return {{"config", to_json(cfg)},
          {"config_hash", config_hash(cfg)},
          {"data_dir", fs::absolute(src.data_dir).lexically_normal().string()},
          {"prepared_dir", fs::absolute(src.prepared_dir).lexically_normal().string()}};
}

struct PretrainOutput {
  std::vector<train::EpochSummary> epochs;
  fs::path final_checkpoint;
};

inline std::unique_ptr<Model> init_model(const RunConfig& cfg, const Prepared& p) {
  Rng rng = Rng(cfg.train.seed).derive(1);
  auto m = std::make_unique<Model>(cfg.model_config(p), rng);
  m->set_traffic(p.features<float>());
  return m;
}

/// Trains from scratch and writes checkpoints/epoch_*, loss.csv and the
/// manifest under `out`. `on_epoch` reports progress.
inline PretrainOutput cmd_pretrain(const RunConfig& cfg, const RunSource& src, const Prepared& p, const fs::path& out,
                                   std::function<void(const train::EpochSummary&)> on_epoch = {}) {
  Stopwatch clock;
  validate(cfg);
  fs::create_directories(out);
  auto m = init_model(cfg, p);
  Adam<float> adam(AdamConfig{cfg.train.lr});
  train::PretrainOptions opt;
  opt.loss_csv = out / "loss.csv";
  opt.checkpoint_dir = out / "checkpoints";
  opt.checkpoint_extra = checkpoint_extra(cfg, src);
  opt.on_epoch = std::move(on_epoch);
  PretrainOutput r;
  r.epochs = train::pretrain(*m, adam, p.train, cfg.train_config(), Rng(cfg.train.seed).derive(2), opt);
  r.final_checkpoint = opt.checkpoint_dir / train::epoch_dir_name(cfg.train.epochs);

  RunManifest man{"pretrain", config_hash(cfg), cfg.train.seed};
  for (const auto& f : DataFiles{src.data_dir}.inputs()) man.add_input(f);
  const PreparedFiles prep{src.prepared_dir};
  for (const auto& f : {prep.split(), prep.transition(), prep.traffic()}) man.add_input(f);
  man.add_outputs(out);
  man.wall_clock_s = clock.seconds();
  man.write(out);
  return r;
}

// ---------------------------------------------------------------- checkpoints

/// A checkpoint with its stored configuration and the data it was trained on.
struct LoadedRun {
  RunConfig cfg;
  RunSource src;
  Prepared prepared;
  std::unique_ptr<Model> model;
};

/// `overrides` are --set assignments applied on top of the stored
/// configuration (evaluation settings, typically).
inline LoadedRun load_run(const fs::path& checkpoint, const std::vector<std::string>& overrides = {},
                          const std::optional<RunSource>& src_override = std::nullopt) {
  auto ck = model::load_checkpoint<float>(checkpoint);
  LoadedRun r;
  if (!ck.extra.contains("config")) throw ParseError("checkpoint '" + checkpoint.string() + "' has no run configuration");
  r.cfg = from_json(ck.extra.at("config"));
  for (const auto& o : overrides) apply_override(r.cfg, o);
  validate(r.cfg);
  r.src = src_override ? *src_override
                       : RunSource{ck.extra.at("data_dir").get<std::string>(), ck.extra.at("prepared_dir").get<std::string>()};
  r.prepared = load_prepared(r.cfg, DataFiles{r.src.data_dir}, PreparedFiles{r.src.prepared_dir});
  r.model = std::move(ck.model);
  const auto& mc = r.model->config();
  if (mc.grid_vocab != r.prepared.grid.cell_count() || mc.road_vocab != r.prepared.net.size()) {
    throw ContractError("checkpoint vocabularies do not match the data in '" + r.src.data_dir.string() + "'");
  }
  r.model->set_traffic(r.prepared.features<float>());
  return r;
}

inline void manifest_for_run(RunManifest& m, const fs::path& checkpoint, const LoadedRun& run) {
  m.add_input(checkpoint / "manifest.json");
  m.add_input(checkpoint / "params.bin");
  for (const auto& f : DataFiles{run.src.data_dir}.inputs()) m.add_input(f);
}

// ---------------------------------------------------------------- embed

inline const std::vector<model::Sample>& split_samples(const Prepared& p, const std::string& name) {
  if (name == "train") return p.train;
  if (name == "validation") return p.validation;
  if (name == "test") return p.test;
  if (name == "all") return p.samples;
  throw ConfigError("unknown split '" + name + "' (train, validation, test, all)", "split");
}

struct EmbedSummary {
  std::size_t count = 0, dim = 0;
  fs::path file;
};

inline EmbedSummary cmd_embed(const fs::path& checkpoint, const LoadedRun& run, const std::string& split,
                              const fs::path& out) {
  Stopwatch clock;
  const auto& samples = split_samples(run.prepared, split);
  const auto z = run.model->embed(samples);
  std::vector<std::string> ids;
  for (const auto& s : samples) ids.push_back(s.id);
  fs::create_directories(out);
  const auto file = out / "embeddings.bin";
  ds::write_embeddings(file, z, ids);
  RunManifest m{"embed", config_hash(run.cfg), run.cfg.train.seed};
  manifest_for_run(m, checkpoint, run);
  m.add_outputs(out);
  m.wall_clock_s = clock.seconds();
  m.write(out);
  return {z.rows(), z.cols(), file};
}

// ---------------------------------------------------------------- eval

inline ds::TsInstance ts_instance(const RunConfig& cfg, const Prepared& p, std::size_t k_neg) {
  return ds::ts_build(p.test, cfg.eval.queries, k_neg, Rng(cfg.eval.seed).derive(10));
}

inline json random_ts_baseline(std::size_t k_neg) {
  const double d = static_cast<double>(k_neg + 1);
  return {{"MR", (d + 1.0) / 2.0}, {"HR@1", 1.0 / d}, {"HR@5", std::min(1.0, 5.0 / d)}, {"HR@10", std::min(1.0, 10.0 / d)}};
}

inline json to_json(const ds::RegressionMetrics& m) { return {{"MAE", m.mae}, {"MAPE", m.mape}, {"RMSE", m.rmse}}; }
inline json to_json(const ds::ClassificationMetrics& m) {
  return {{"Acc@1", m.acc1}, {"Acc@5", m.acc5}, {"F1", m.macro_f1}};
}

struct TsOutcome {
  ds::TsMetrics metrics;
  std::vector<std::string> query_ids;
  std::vector<std::pair<std::size_t, ds::TsMetrics>> sweep;
};

/// TS at eval.k_neg plus every k in `sweep`, from one nested instance.
inline TsOutcome run_ts(const Model& m, const RunConfig& cfg, const Prepared& p, const std::vector<std::size_t>& sweep) {
  std::size_t k_max = cfg.eval.k_neg;
  for (auto k : sweep) k_max = std::max(k_max, k);
  const auto inst = ts_instance(cfg, p, k_max);
  const auto emb = ds::ts_embed(m, inst);
  TsOutcome out;
  out.metrics = emb.evaluate(inst, cfg.eval.k_neg);
  for (const auto& q : inst.queries) out.query_ids.push_back(q.id);
  for (auto k : sweep) out.sweep.emplace_back(k, emb.evaluate(inst, k));
  return out;
}

inline ds::TteResult run_tte(const Model& m, const RunConfig& cfg, const Prepared& p) {
  return ds::tte_run(m, p.train, p.test, cfg.eval.head(), Rng(cfg.eval.seed).derive(20));
}

inline ds::DpResult run_dp(const Model& m, const RunConfig& cfg, const Prepared& p) {
  return ds::dp_run(m, p.train, p.test, cfg.eval.head(), Rng(cfg.eval.seed).derive(30));
}

struct EvalRequest {
  std::string task;
  std::vector<std::size_t> kneg_sweep;  // empty: no sweep CSV
  bool diagnostic = false;
};

inline void write_sweep_csv(const fs::path& path, const std::vector<std::pair<std::size_t, ds::TsMetrics>>& rows) {
  auto out = data::csv::open_out(path.string());
  out << "k_neg,MR,HR@1,HR@5,HR@10\n";
  for (const auto& [k, m] : rows) {
    out << k << ',' << data::csv::fmt(m.mean_rank) << ',' << data::csv::fmt(m.hr1) << ',' << data::csv::fmt(m.hr5)
        << ',' << data::csv::fmt(m.hr10) << '\n';
  }
}

/// Writes metrics_<task>.json (and kneg_sweep.csv for a TS sweep) to `out`.
inline json cmd_eval(const fs::path& checkpoint, const LoadedRun& run, const EvalRequest& req, const fs::path& out) {
  Stopwatch clock;
  const auto& cfg = run.cfg;
  const auto& p = run.prepared;
  json metrics, baseline, details = json::object();
  if (req.task == "ts") {
    const auto r = run_ts(*run.model, cfg, p, req.kneg_sweep);
    metrics = ds::to_json(r.metrics);
    baseline = random_ts_baseline(cfg.eval.k_neg);
    details = {{"queries", cfg.eval.queries}, {"k_neg", cfg.eval.k_neg}};
    fs::create_directories(out);
    // Per-query ranks; these ids are the valid export-similar queries.
    auto ranks = data::csv::open_out((out / "ts_ranks.csv").string());
    ranks << "query_id,rank\n";
    for (std::size_t i = 0; i < r.query_ids.size(); ++i) {
      ranks << data::csv::quote(r.query_ids[i]) << ',' << r.metrics.ranks[i] << '\n';
    }
    if (!req.kneg_sweep.empty()) write_sweep_csv(out / "kneg_sweep.csv", r.sweep);
  } else if (req.task == "tte") {
    ds::TteResult r;
    if (req.diagnostic) {
      const auto tr = ds::tte_prepare(p.train), te = ds::tte_prepare(p.test);
      r = ds::tte_diagnostic<float>(tr.labels, te.labels);
      r.excluded = tr.excluded_zero_duration + te.excluded_zero_duration;
    } else {
      r = run_tte(*run.model, cfg, p);
    }
    metrics = to_json(r.metrics);
    baseline = to_json(r.baseline);
    details = {{"train", r.train_count}, {"test", r.test_count}, {"excluded_zero_duration", r.excluded},
               {"diagnostic", req.diagnostic}};
  } else if (req.task == "dp") {
    const auto r = run_dp(*run.model, cfg, p);
    metrics = to_json(r.metrics);
    baseline = to_json(r.baseline);
    details = {{"train", r.train_count}, {"test", r.test_count}, {"classes", p.net.size()}};
  } else {
    throw ConfigError("unknown task '" + req.task + "' (ts, tte, dp)", "task");
  }
  auto doc = ds::metrics_json(req.task, cfg.dataset, cfg.train.seed, metrics, baseline, config_hash(cfg));
  doc["details"] = details;
  fs::create_directories(out);
  std::ofstream(out / ("metrics_" + req.task + ".json")) << doc.dump(2) << '\n';
  RunManifest m{"eval", config_hash(cfg), cfg.train.seed};
  manifest_for_run(m, checkpoint, run);
  m.add_outputs(out);
  m.wall_clock_s = clock.seconds();
  m.write(out);
  return doc;
}

// ---------------------------------------------------------------- export-similar

inline json cmd_export_similar(const fs::path& checkpoint, const LoadedRun& run, const std::string& query_id,
                               std::size_t k, const fs::path& out_file) {
  Stopwatch clock;
  const auto inst = ts_instance(run.cfg, run.prepared, run.cfg.eval.k_neg);
  const auto emb = ds::ts_embed(*run.model, inst);
  auto geo = ds::similar_geojson(query_id, k, inst, emb, run.prepared.net);
  const auto dir = out_file.has_parent_path() ? out_file.parent_path() : fs::path(".");
  fs::create_directories(dir);
  std::ofstream(out_file) << geo.dump() << '\n';
  RunManifest m{"export-similar", config_hash(run.cfg), run.cfg.train.seed};
  manifest_for_run(m, checkpoint, run);
  m.outputs[out_file.filename().string()] = sha256_file(out_file);
  m.wall_clock_s = clock.seconds();
  m.write(dir);
  return geo;
}

// ---------------------------------------------------------------- experiment grids

/// One pretrain + evaluate cycle inside an experiment grid.
struct TaskRow {
  ds::TsMetrics ts;
  ds::RegressionMetrics tte;
  ds::ClassificationMetrics dp;
  std::size_t embedding_dim = 0;
};

inline json to_json(const TaskRow& r) {
  return {{"ts", ds::to_json(r.ts)}, {"tte", to_json(r.tte)}, {"dp", to_json(r.dp)}, {"embedding_dim", r.embedding_dim}};
}

inline TaskRow row_from_json(const json& j) {
  TaskRow r;
  r.ts.mean_rank = j.at("ts").at("MR");
  r.ts.hr1 = j.at("ts").at("HR@1");
  r.ts.hr5 = j.at("ts").at("HR@5");
  r.ts.hr10 = j.at("ts").at("HR@10");
  r.tte = {j.at("tte").at("MAE"), j.at("tte").at("MAPE"), j.at("tte").at("RMSE")};
  r.dp = {j.at("dp").at("Acc@1"), j.at("dp").at("Acc@5"), j.at("dp").at("F1")};
  r.embedding_dim = j.at("embedding_dim");
  return r;
}

inline const std::vector<std::string> kTaskColumns = {"TS_MR",   "TS_HR@1",  "TS_HR@5",  "TS_HR@10", "TTE_MAE",
                                                      "TTE_MAPE", "TTE_RMSE", "DP_Acc@1", "DP_Acc@5", "DP_F1"};

inline std::vector<double> task_values(const TaskRow& r) {
  return {r.ts.mean_rank, r.ts.hr1, r.ts.hr5, r.ts.hr10, r.tte.mae,
          r.tte.mape,     r.tte.rmse, r.dp.acc1, r.dp.acc5, r.dp.macro_f1};
}

struct GridJob {
  std::string label;
  RunConfig cfg;
  fs::path dir;
  bool ts_only = false;
};

/// Pretrains and evaluates one grid cell; the result lands in dir/result.json.
inline TaskRow run_job(const GridJob& job, const RunSource& src, const Prepared& p) {
  const auto trained = cmd_pretrain(job.cfg, src, p, job.dir);
  auto ck = model::load_checkpoint<float>(trained.final_checkpoint);
  ck.model->set_traffic(p.features<float>());
  TaskRow row;
  row.embedding_dim = ck.model->config().embedding_dim();
  row.ts = run_ts(*ck.model, job.cfg, p, {}).metrics;
  if (!job.ts_only) {
    row.tte = run_tte(*ck.model, job.cfg, p).metrics;
    row.dp = run_dp(*ck.model, job.cfg, p).metrics;
  }
  std::ofstream(job.dir / "result.json") << to_json(row).dump(2) << '\n';
  return row;
}

/// Runs every job, sequentially or in up to `jobs` forked child processes
/// with disjoint output directories. A failed child is reported by label.
inline std::vector<TaskRow> run_jobs(const std::vector<GridJob>& grid, const RunSource& src, const Prepared& p,
                                     std::size_t jobs, std::ostream* log = nullptr) {
  std::vector<TaskRow> rows(grid.size());
  if (jobs <= 1) {
    for (std::size_t i = 0; i < grid.size(); ++i) {
      if (log) *log << "[" << i + 1 << "/" << grid.size() << "] " << grid[i].label << std::endl;
      rows[i] = run_job(grid[i], src, p);
    }
    return rows;
  }
  std::vector<std::pair<pid_t, std::size_t>> running;
  std::vector<std::string> failed;
  auto reap = [&] {
    int status = 0;
    const pid_t pid = ::wait(&status);
    for (auto it = running.begin(); it != running.end(); ++it) {
      if (it->first != pid) continue;
      if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) failed.push_back(grid[it->second].label);
      running.erase(it);
      break;
    }
  };
  for (std::size_t i = 0; i < grid.size(); ++i) {
    while (running.size() >= jobs) reap();
    if (log) *log << "[" << i + 1 << "/" << grid.size() << "] " << grid[i].label << std::endl;
    std::cout.flush();
    std::cerr.flush();
    const pid_t pid = ::fork();
    if (pid < 0) throw std::runtime_error("fork failed");
    if (pid == 0) {
      int code = 0;
      try {
        run_job(grid[i], src, p);
      } catch (const std::exception& e) {
        std::cerr << "error: job=" << grid[i].label << " message=\"" << e.what() << "\"\n";
        code = 1;
      }
      std::cout.flush();
      std::cerr.flush();
      ::_exit(code);
    }
    running.emplace_back(pid, i);
  }
  while (!running.empty()) reap();
  if (!failed.empty()) {
    std::string names;
    for (const auto& f : failed) names += (names.empty() ? "" : ",") + f;
    throw std::runtime_error("experiment jobs failed: " + names);
  }
  for (std::size_t i = 0; i < grid.size(); ++i) {
    std::ifstream in(grid[i].dir / "result.json");
    rows[i] = row_from_json(json::parse(in));
  }
  return rows;
}

// ---------------------------------------------------------------- ablate

struct AblationVariant {
  std::string name;
  std::string branches;
  bool no_inter = false, no_lma = false, no_rope = false;
};

/// Seven branch subsets, then the full model minus one component each.
inline std::vector<AblationVariant> ablation_variants() {
  return {{"g", "g"},         {"r", "r"},          {"st", "st"},        {"g+r", "g+r"},
          {"g+st", "g+st"},   {"r+st", "r+st"},    {"g+r+st", "g+r+st"}, {"no_inter", "g+r+st", true},
          {"no_lma", "g+r+st", false, true}, {"no_rope", "g+r+st", false, false, true}};
}

struct AblationRow {
  AblationVariant variant;
  std::vector<std::uint64_t> seeds;
  std::vector<TaskRow> runs;
  TaskRow mean;
};

inline TaskRow mean_row(const std::vector<TaskRow>& runs) {
  std::vector<double> acc(kTaskColumns.size(), 0.0);
  for (const auto& r : runs) {
    const auto v = task_values(r);
    for (std::size_t i = 0; i < v.size(); ++i) acc[i] += v[i];
  }
  for (auto& a : acc) a /= static_cast<double>(std::max<std::size_t>(1, runs.size()));
  TaskRow m;
  m.ts = {acc[0], acc[1], acc[2], acc[3], {}};
  m.tte = {acc[4], acc[5], acc[6]};
  m.dp = {acc[7], acc[8], acc[9]};
  if (!runs.empty()) m.embedding_dim = runs.front().embedding_dim;
  return m;
}

/// ablation.csv holds one row per variant (metrics averaged over seeds);
/// ablation_runs.csv holds one row per variant and seed.
inline std::vector<AblationRow> cmd_ablate(const RunConfig& base, const RunSource& src, const Prepared& p,
                                           const std::vector<std::uint64_t>& seeds, const fs::path& out,
                                           std::size_t jobs = 1, std::ostream* log = nullptr) {
  Stopwatch clock;
  validate(base);
  if (seeds.empty()) throw ConfigError("at least one seed is required", "seeds");
  const auto variants = ablation_variants();
  std::vector<GridJob> grid;
  for (const auto& v : variants) {
    for (auto s : seeds) {
      RunConfig c = base;
      c.ablation = {model::BranchSet::parse(v.branches), v.no_inter, v.no_lma, v.no_rope};
      c.train.seed = s;
      validate(c);
      grid.push_back({v.name + "/seed_" + std::to_string(s), c, out / v.name / ("seed_" + std::to_string(s))});
    }
  }
  const auto runs = run_jobs(grid, src, p, jobs, log);

  std::vector<AblationRow> rows;
  for (std::size_t i = 0; i < variants.size(); ++i) {
    AblationRow r{variants[i], seeds, {}, {}};
    for (std::size_t s = 0; s < seeds.size(); ++s) r.runs.push_back(runs[i * seeds.size() + s]);
    r.mean = mean_row(r.runs);
    rows.push_back(std::move(r));
  }
  auto header = [](std::ostream& o, bool with_seed) {
    o << "variant,branches,no_inter,no_lma,no_rope," << (with_seed ? "seed" : "seeds") << ",embedding_dim";
    for (const auto& c : kTaskColumns) o << ',' << c;
    o << '\n';
  };
  auto line = [](std::ostream& o, const AblationVariant& v, const std::string& seed, const TaskRow& t) {
    o << v.name << ',' << v.branches << ',' << v.no_inter << ',' << v.no_lma << ',' << v.no_rope << ',' << seed << ','
      << t.embedding_dim;
    for (double x : task_values(t)) o << ',' << data::csv::fmt(x);
    o << '\n';
  };
  fs::create_directories(out);
  auto table = data::csv::open_out((out / "ablation.csv").string());
  auto per_run = data::csv::open_out((out / "ablation_runs.csv").string());
  header(table, false);
  header(per_run, true);
  for (const auto& r : rows) {
    std::string seed_list;
    for (auto s : seeds) seed_list += (seed_list.empty() ? "" : " ") + std::to_string(s);
    line(table, r.variant, seed_list, r.mean);
    for (std::size_t s = 0; s < seeds.size(); ++s) line(per_run, r.variant, std::to_string(seeds[s]), r.runs[s]);
  }
  table.close();
  per_run.close();
  RunManifest m{"ablate", config_hash(base), base.train.seed};
  m.add_outputs(out);
  m.wall_clock_s = clock.seconds();
  m.write(out);
  return rows;
}

// ---------------------------------------------------------------- sweeps

/// The seven non-empty subsets of {RM, TC, CM}, in that order within a subset.
inline std::vector<std::vector<std::string>> masking_subsets() {
  const std::vector<std::string> all = {"RM", "TC", "CM"};
  std::vector<std::vector<std::string>> out;
  for (unsigned mask = 1; mask < 8; ++mask) {
    std::vector<std::string> s;
    for (unsigned b = 0; b < 3; ++b)
      if (mask & (1u << b)) s.push_back(all[b]);
    out.push_back(s);
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.size() < b.size(); });
  return out;
}

inline std::string join(const std::vector<std::string>& v, const char* sep) {
  std::string s;
  for (const auto& x : v) s += (s.empty() ? "" : sep) + x;
  return s;
}

/// TS for every (View 1, View 2) pair of masking subsets: 49 runs.
inline void cmd_sweep_masking(const RunConfig& base, const RunSource& src, const Prepared& p, const fs::path& out,
                              std::size_t jobs = 1, std::ostream* log = nullptr) {
  Stopwatch clock;
  validate(base);
  const auto subsets = masking_subsets();
  std::vector<GridJob> grid;
  for (const auto& v1 : subsets) {
    for (const auto& v2 : subsets) {
      RunConfig c = base;
      c.masking.view1 = v1;
      c.masking.view2 = v2;
      const auto label = join(v1, "+") + "__" + join(v2, "+");
      grid.push_back({label, c, out / label, true});
    }
  }
  const auto rows = run_jobs(grid, src, p, jobs, log);
  fs::create_directories(out);
  auto csv = data::csv::open_out((out / "masking_sweep.csv").string());
  csv << "view1,view2,MR,HR@1,HR@5,HR@10\n";
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const auto& t = rows[i].ts;
    csv << join(grid[i].cfg.masking.view1, "+") << ',' << join(grid[i].cfg.masking.view2, "+") << ','
        << data::csv::fmt(t.mean_rank) << ',' << data::csv::fmt(t.hr1) << ',' << data::csv::fmt(t.hr5) << ','
        << data::csv::fmt(t.hr10) << '\n';
  }
  csv.close();
  RunManifest m{"sweep-masking", config_hash(base), base.train.seed};
  m.add_outputs(out);
  m.wall_clock_s = clock.seconds();
  m.write(out);
}

/// Keys accepted by sweep-param besides every registry key: the embedding
/// width (split 2:1:1 over g, r, st) and one ratio for all three masks.
inline void set_sweep_value(RunConfig& c, const std::string& param, const std::string& value) {
  if (param == "embedding_dim") {
    std::size_t d = 0;
    try {
      d = std::stoul(value);
    } catch (const std::exception&) {
      throw ConfigError("embedding_dim must be an integer", param);
    }
    if (d % 4 != 0) throw ConfigError("embedding_dim must be a multiple of 4", param);
    c.model.d_g = d / 2;
    c.model.d_r = c.model.d_st = d / 4;
  } else if (param == "masking.ratio") {
    for (const char* k : {"masking.p_rm", "masking.p_tc", "masking.p_cm"}) apply_override(c, std::string(k) + "=" + value);
  } else {
    apply_override(c, param + "=" + value);
  }
  validate(c);
}

inline void cmd_sweep_param(const RunConfig& base, const RunSource& src, const Prepared& p, const std::string& param,
                            const std::vector<std::string>& values, const fs::path& out, std::size_t jobs = 1,
                            std::ostream* log = nullptr) {
  Stopwatch clock;
  validate(base);
  if (values.empty()) throw ConfigError("--values is empty", "values");
  std::vector<GridJob> grid;
  for (const auto& v : values) {
    RunConfig c = base;
    set_sweep_value(c, param, v);
    grid.push_back({param + "=" + v, c, out / (param + "=" + v)});
  }
  const auto rows = run_jobs(grid, src, p, jobs, log);
  fs::create_directories(out);
  auto csv = data::csv::open_out((out / "param_sweep.csv").string());
  csv << "param,value,embedding_dim";
  for (const auto& c : kTaskColumns) csv << ',' << c;
  csv << '\n';
  for (std::size_t i = 0; i < grid.size(); ++i) {
    csv << param << ',' << data::csv::quote(values[i]) << ',' << rows[i].embedding_dim;
    for (double x : task_values(rows[i])) csv << ',' << data::csv::fmt(x);
    csv << '\n';
  }
  csv.close();
  RunManifest m{"sweep-param", config_hash(base), base.train.seed};
  m.add_outputs(out);
  m.wall_clock_s = clock.seconds();
  m.write(out);
}

}  // namespace tigr::cli
