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

// Subcommand bodies: each takes a resolved configuration, writes its
// artifacts plus resolved_config.toml into an output directory and returns
// the main file paths. Errors propagate as coa::Error.

#ifndef COA_PIPELINE_HPP_
#define COA_PIPELINE_HPP_

#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>

#include "coa/run_config.hpp"

namespace coa::pipeline {

namespace fs = std::filesystem;
using Log = std::function<void(const std::string&)>;

// "reach_target" -> "reach": the default dataset file stem.
std::string dataset_stem(sim::TaskId task);

// out is a directory (file named after the task) or a path ending in .jsonl.
// Writes the dataset, its .sha256 sidecar, manifest.json and the config.
struct GenDataResult {
  fs::path dataset;
  std::size_t demos = 0;
  std::size_t skipped_seeds = 0;
};
GenDataResult gen_data(const config::RunConfig& c, const fs::path& out);

// Trains on the dataset's task. Writes final.ckpt, trace.csv, periodic
// ckpt_<iter>.ckpt files and the config into out.
struct TrainRunResult {
  fs::path checkpoint;
  std::size_t iterations = 0;
  double final_loss = 0.0;
};
TrainRunResult train_run(const config::RunConfig& c, const fs::path& data,
                         const fs::path& out, const Log& log = {});

// Accepts the file itself, the path without ".ckpt", or a directory holding
// final.ckpt.
fs::path resolve_checkpoint(const fs::path& p);

// Evaluates a checkpoint on the configured split and writes results.csv,
// analysis.json, episodes.json and attention_dump.json (first episode).
analysis::EvalReport eval_run(const config::RunConfig& c, const fs::path& ckpt,
                              const fs::path& out);

// Full ablation matrix on freshly collected data.
analysis::AblationMatrix ablate_run(const config::RunConfig& c,
                                    const fs::path& out, const Log& log = {});

// Trains each analysis variant at each spread level, then writes the
// variance/success correlations and the primary variant's attention metrics.
analysis::ReportBundle analyze_run(const config::RunConfig& c,
                                   const fs::path& out, const Log& log = {});

// attention_dump.json for the first chain of one evaluation episode.
fs::path attn_dump(const config::RunConfig& c, const fs::path& ckpt,
                   const fs::path& out);

// Prints one line per check; true when all pass.
bool grad_check(std::uint64_t seed, std::ostream& os);

}  // namespace coa::pipeline

#endif  // COA_PIPELINE_HPP_
