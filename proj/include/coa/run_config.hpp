// Copyright 2026 The coa Authors
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

// Resolved run configuration: profile defaults, then a TOML file, then
// command-line overrides. Every value remembers where it came from.

#ifndef COA_RUN_CONFIG_HPP_
#define COA_RUN_CONFIG_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "coa/analysis.hpp"
#include "coa/model.hpp"
#include "coa/trainer.hpp"

namespace coa::config {

struct RunConfig {
  std::string profile = "desk";
  std::uint64_t seed = 0;  // data, initialization, sampling and dropout

  sim::TaskId task = sim::TaskId::kReachTarget;
  double spread = 0.1;
  std::size_t demos = 100;

  model::ModelConfig model = model::default_config("desk");
  train::TrainConfig train = train::default_train_config("desk");

  std::size_t eval_episodes = 25;
  analysis::Split eval_split = analysis::Split::kAll;
  std::uint64_t eval_seed_base = analysis::kEvalSeedBase;

  std::vector<std::string> ablate_axes{"ordering", "loss", "ensemble",
                                       "mtp_heads", "baseline"};
  std::vector<std::uint64_t> ablate_seeds{0, 1, 2};
  std::vector<analysis::Split> ablate_splits{analysis::Split::kInterp,
                                             analysis::Split::kExtrap};

  std::vector<double> analysis_spreads{0.02, 0.06, 0.10, 0.14};
  std::vector<std::string> analysis_variants{"reverse", "chunk"};
  std::size_t locality_window = 3;

  // Dotted key -> "default" | "file" | "flag".
  std::map<std::string, std::string> provenance;

  sim::TaskSpec task_spec() const { return sim::TaskSpec::make(task, spread); }
};

// key=value overrides use the same dotted keys as the file, e.g.
// "model.mtp_heads=8". Lists are comma separated. kConfig on unknown keys,
// type mismatches and parse errors, naming the key and its location.
RunConfig load_config(const std::optional<std::filesystem::path>& file,
                      const std::vector<std::pair<std::string, std::string>>&
                          overrides = {});
RunConfig parse_config(std::string_view toml_text, std::string_view source_name,
                       const std::vector<std::pair<std::string, std::string>>&
                           overrides = {});

// Every key with its value, the tool version and a provenance table. The
// output loads back to the same configuration.
std::string to_toml(const RunConfig& c);
// Writes resolved_config.toml into dir.
void write_resolved(const std::filesystem::path& dir, const RunConfig& c);

std::vector<std::string> known_keys();

}  // namespace coa::config

#endif  // COA_RUN_CONFIG_HPP_
