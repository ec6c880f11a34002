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


#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tigr/cli/commands.hpp"

namespace {

namespace fs = std::filesystem;
using namespace tigr;
using namespace tigr::cli;

struct ErrorKind {
  const char* name;
  int code;
};

/// Escapes a message so the error line stays a single parsable line.
std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    if (c == '\n') {
      out += "\\n";
      continue;
    }
    out += c;
  }
  return out;
}

int report(ErrorKind kind, const std::string& message, const std::string& key = {}) {
  std::cerr << "error: kind=" << kind.name;
  if (!key.empty()) std::cerr << " key=" << key;
  std::cerr << " message=\"" << escape(message) << "\"\n";
  return kind.code;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

template <class T>
std::vector<T> parse_list(const std::string& s, const std::string& flag) {
  std::vector<T> out;
  for (const auto& x : split_list(s)) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(x, &used);
      if (used != x.size()) throw std::invalid_argument(x);
      out.push_back(static_cast<T>(v));
    } catch (const std::exception&) {
      throw ConfigError("'" + x + "' is not a non-negative integer", flag);
    }
  }
  return out;
}

struct Common {
  std::string config;
  std::vector<std::string> sets;

  RunConfig resolve() const {
    RunConfig c = config.empty() ? RunConfig{} : load_config(config);
    for (const auto& s : sets) apply_override(c, s);
    validate(c);
    return c;
  }
};

void add_config_flags(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config, "TOML run configuration (defaults when omitted)");
  cmd->add_option("--set", c.sets, "override one key, e.g. --set train.epochs=2")->allow_extra_args(false);
}

void add_set_flag(CLI::App* cmd, Common& c) {
  cmd->add_option("--set", c.sets, "override a stored key, e.g. --set eval.k_neg=100")->allow_extra_args(false);
}

void print_epoch(const train::EpochSummary& e) {
  std::printf("epoch %zu: steps=%zu intra=%.6f inter=%.6f total=%.6f\n", e.epoch, e.steps, e.mean_intra, e.mean_inter,
              e.mean_total);
  std::fflush(stdout);
}

fs::path prepared_or_default(const std::string& prepared, const fs::path& data) {
  return prepared.empty() ? data / "prepared" : fs::path(prepared);
}

std::optional<RunSource> source_override(const std::string& data, const std::string& prepared) {
  if (data.empty()) return std::nullopt;
  return RunSource{data, prepared_or_default(prepared, data)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-modal trajectory representation learning: data, pretraining, evaluation, ablation."};
  app.require_subcommand(1);
  app.footer("Configuration keys (section.key  default  meaning):\n" + describe_keys() +
             "\nRelative output paths are resolved under $" + kOutputRootEnv + " when it is set.");
  Common common;

  std::string out, data, prepared, checkpoint, task = "ts", query, split = "test", kneg, seeds = "0", param, values;
  std::optional<std::size_t> epochs, k;
  std::size_t jobs = 1;
  bool diagnostic = false;

  auto* synth = app.add_subcommand("synth", "generate the synthetic city and its trajectories");
  add_config_flags(synth, common);
  synth->add_option("-o,--out", out, "output directory")->required();

  auto* pre = app.add_subcommand("preprocess", "filter, grid-map and split trajectories; build matrices");
  add_config_flags(pre, common);
  pre->add_option("-d,--data", data, "dataset directory")->required();
  pre->add_option("-o,--out", out, "output directory (default <data>/prepared)");

  auto* pt = app.add_subcommand("pretrain", "contrastive pretraining");
  add_config_flags(pt, common);
  pt->add_option("-d,--data", data, "dataset directory")->required();
  pt->add_option("-p,--prepared", prepared, "preprocess directory (default <data>/prepared)");
  pt->add_option("-o,--out", out, "run directory")->required();
  pt->add_option("--epochs", epochs, "override train.epochs");

  auto* emb = app.add_subcommand("embed", "write trajectory embeddings");
  add_set_flag(emb, common);
  emb->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
  emb->add_option("--split", split, "train, validation, test or all")->check(CLI::IsMember({"train", "validation", "test", "all"}));
  emb->add_option("-d,--data", data, "dataset directory (default: the one used for training)");
  emb->add_option("-p,--prepared", prepared, "preprocess directory");
  emb->add_option("-o,--out", out, "output directory")->required();

  auto* ev = app.add_subcommand("eval", "downstream evaluation");
  add_set_flag(ev, common);
  ev->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
  ev->add_option("--task", task, "ts, tte or dp")->required();
  ev->add_option("--kneg-sweep", kneg, "comma-separated k_neg values for a TS sweep CSV");
  ev->add_flag("--diagnostic", diagnostic, "TTE: feed standardized labels as embeddings");
  ev->add_option("-d,--data", data, "dataset directory (default: the one used for training)");
  ev->add_option("-p,--prepared", prepared, "preprocess directory");
  ev->add_option("-o,--out", out, "output directory")->required();

  auto* ab = app.add_subcommand("ablate", "branch subsets and component removals, one CSV row each");
  add_config_flags(ab, common);
  ab->add_option("-d,--data", data, "dataset directory")->required();
  ab->add_option("-p,--prepared", prepared, "preprocess directory (default <data>/prepared)");
  ab->add_option("-o,--out", out, "output directory")->required();
  ab->add_option("--seeds", seeds, "comma-separated training seeds");
  ab->add_option("-j,--jobs", jobs, "parallel child processes");

  auto* ex = app.add_subcommand("export-similar", "GeoJSON of a query and its most similar trajectories");
  add_set_flag(ex, common);
  ex->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
  ex->add_option("--query", query, "query trajectory id (see ts_ranks.csv from eval --task ts)")->required();
  ex->add_option("--k", k, "matches to export (default eval.geojson_k)");
  ex->add_option("-d,--data", data, "dataset directory (default: the one used for training)");
  ex->add_option("-p,--prepared", prepared, "preprocess directory");
  ex->add_option("-o,--out", out, "output .geojson file")->required();

  auto* sm = app.add_subcommand("sweep-masking", "TS for every pair of View 1 / View 2 masking subsets");
  add_config_flags(sm, common);
  sm->add_option("-d,--data", data, "dataset directory")->required();
  sm->add_option("-p,--prepared", prepared, "preprocess directory (default <data>/prepared)");
  sm->add_option("-o,--out", out, "output directory")->required();
  sm->add_option("-j,--jobs", jobs, "parallel child processes");

  auto* sp = app.add_subcommand("sweep-param", "all tasks over values of one key");
  add_config_flags(sp, common);
  sp->add_option("-d,--data", data, "dataset directory")->required();
  sp->add_option("-p,--prepared", prepared, "preprocess directory (default <data>/prepared)");
  sp->add_option("-o,--out", out, "output directory")->required();
  sp->add_option("--param", param, "config key, embedding_dim or masking.ratio")->required();
  sp->add_option("--values", values, "comma-separated values")->required();
  sp->add_option("-j,--jobs", jobs, "parallel child processes");

  auto* show = app.add_subcommand("config", "print the resolved configuration and its hash");
  add_config_flags(show, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report({"usage", 2}, e.what());
  }

  try {
    const auto source = [&] { return RunSource{data, prepared_or_default(prepared, data)}; };
    if (*synth) {
      const auto s = cmd_synth(common.resolve(), output_path(out));
      std::printf("segments=%zu edges=%zu trajectories=%zu raw_points=%zu matched_points=%zu\n", s.segments, s.edges,
                  s.trajectories, s.raw_points, s.matched_points);
    } else if (*pre) {
      const auto target = out.empty() ? fs::path(data) / "prepared" : output_path(out);
      const auto r = cmd_preprocess(common.resolve(), data, target);
      std::cout << "retained " << r["retained"] << " of " << r["input_trajectories"] << "; rejected " << r["rejected"].dump()
                << "\nP_norm row sums: max |sum - 1| = " << r["p_norm_row_sum"]["max_abs_error"].get<double>()
                << (r["p_norm_row_sum"]["ok"].get<bool>() ? " (ok)" : " (FAILED)") << '\n';
    } else if (*pt) {
      auto cfg = common.resolve();
      if (epochs) cfg.train.epochs = *epochs;
      const auto src = source();
      const auto p = load_prepared(cfg, DataFiles{src.data_dir}, PreparedFiles{src.prepared_dir});
      const auto r = cmd_pretrain(cfg, src, p, output_path(out), print_epoch);
      std::cout << "final checkpoint: " << r.final_checkpoint.string() << '\n';
    } else if (*emb) {
      const auto run = load_run(checkpoint, common.sets, source_override(data, prepared));
      const auto r = cmd_embed(checkpoint, run, split, output_path(out));
      std::printf("wrote %zu x %zu embeddings to %s\n", r.count, r.dim, r.file.c_str());
    } else if (*ev) {
      if (task != "ts" && task != "tte" && task != "dp") {
        return report({"usage", 2}, "unknown task '" + task + "' (ts, tte, dp)", "task");
      }
      EvalRequest req{task, parse_list<std::size_t>(kneg, "kneg-sweep"), diagnostic};
      const auto run = load_run(checkpoint, common.sets, source_override(data, prepared));
      const auto doc = cmd_eval(checkpoint, run, req, output_path(out));
      std::cout << doc["metrics"].dump() << '\n';
    } else if (*ab) {
      const auto cfg = common.resolve();
      const auto src = source();
      const auto p = load_prepared(cfg, DataFiles{src.data_dir}, PreparedFiles{src.prepared_dir});
      const auto rows = cmd_ablate(cfg, src, p, parse_list<std::uint64_t>(seeds, "seeds"), output_path(out), jobs,
                                   &std::cout);
      for (const auto& r : rows) std::printf("%-8s HR@1=%.4f\n", r.variant.name.c_str(), r.mean.ts.hr1);
    } else if (*ex) {
      const auto run = load_run(checkpoint, common.sets, source_override(data, prepared));
      const auto geo = cmd_export_similar(checkpoint, run, query, k.value_or(run.cfg.eval.geojson_k), output_path(out));
      std::printf("wrote %zu features\n", geo["features"].size());
    } else if (*sm) {
      const auto cfg = common.resolve();
      const auto src = source();
      const auto p = load_prepared(cfg, DataFiles{src.data_dir}, PreparedFiles{src.prepared_dir});
      cmd_sweep_masking(cfg, src, p, output_path(out), jobs, &std::cout);
    } else if (*sp) {
      const auto cfg = common.resolve();
      const auto src = source();
      const auto p = load_prepared(cfg, DataFiles{src.data_dir}, PreparedFiles{src.prepared_dir});
      cmd_sweep_param(cfg, src, p, param, split_list(values), output_path(out), jobs, &std::cout);
    } else if (*show) {
      const auto cfg = common.resolve();
      std::cout << to_toml(cfg) << "# config_hash = " << config_hash(cfg) << '\n';
    }
  } catch (const ConfigError& e) {
    return report({"config", 3}, e.what(), e.key());
  } catch (const ParseError& e) {
    return report({"parse", 4}, e.what());
  } catch (const IndexError& e) {
    return report({"index", 5}, e.what());
  } catch (const DimensionError& e) {
    return report({"dimension", 6}, e.what());
  } catch (const NumericError& e) {
    return report({"numeric", 7}, e.what());
  } catch (const ContractError& e) {
    return report({"contract", 8}, e.what());
  } catch (const std::exception& e) {
    return report({"io", 1}, e.what());
  }
  return 0;
}
