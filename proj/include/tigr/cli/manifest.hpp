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

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "tigr/cli/digest.hpp"

#ifndef TIGR_GIT_DESCRIBE
#define TIGR_GIT_DESCRIBE "unknown"
#endif

namespace tigr::cli {

/// Provenance of one command run, written as manifest.json next to its outputs.
struct RunManifest {
  RunManifest(std::string command, std::string config_hash, std::uint64_t seed)
      : command(std::move(command)), config_hash(std::move(config_hash)), seed(seed) {}

  std::string command;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string git_describe = TIGR_GIT_DESCRIBE;
  std::map<std::string, std::string> inputs;   // path -> sha256
  std::map<std::string, std::string> outputs;  // path -> sha256
  double wall_clock_s = 0.0;

  void add_input(const std::filesystem::path& p) { inputs[p.string()] = sha256_file(p); }

  /// Digests every regular file under `dir` except the manifest itself.
  void add_outputs(const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
      if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path());
    }
    for (const auto& f : files) outputs[std::filesystem::relative(f, dir).generic_string()] = sha256_file(f);
  }

  nlohmann::json to_json() const {
    return {{"command", command},   {"config_hash", config_hash}, {"seed", seed},
            {"git_describe", git_describe}, {"inputs", inputs},  {"outputs", outputs},
            {"wall_clock_s", wall_clock_s}};
  }

  void write(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    std::ofstream out(dir / "manifest.json");
    out << to_json().dump(2) << '\n';
    if (!out) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
  }
};

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

}  // namespace tigr::cli
