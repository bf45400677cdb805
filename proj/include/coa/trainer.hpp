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

// Behavior-cloning loop, batch sampling and the checkpoint container.

#ifndef COA_TRAINER_HPP_
#define COA_TRAINER_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "coa/dataset.hpp"
#include "coa/model.hpp"
#include "coa/optim.hpp"
#include "coa/rng.hpp"

namespace coa::train {

struct TrainConfig {
  std::string profile = "desk";
  std::int64_t iterations = 2000;
  std::size_t batch_size = 32;
  // 1e-4 only moves a parameter ~0.2 in 2000 Adam steps; too slow for desk.
  double lr = 1e-3;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;
  std::int64_t eval_every = 0;        // 0 disables periodic eval
  std::int64_t checkpoint_every = 0;  // 0 disables periodic checkpoints
  std::size_t eval_episodes = 10;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// "paper" (20000 iterations, batch 128, lr 1e-4) or "desk" (2000, 32, 1e-3).
TrainConfig default_train_config(std::string_view profile);

// Where the policy was trained; evaluation splits are built against it.
struct TaskInfo {
  sim::TaskId task = sim::TaskId::kReachTarget;
  double spread = 0.1;
  data::BoundingBox train_box;
  std::size_t max_episode_len = 0;
};

struct TrainState {
  model::ModelConfig model;
  TrainConfig train;
  data::NormStats stats;
  TaskInfo info;
  model::Policy policy;
  ad::AdamWState opt;
  std::int64_t iteration = 0;
  Rng rng;
};

// Model config completed from the dataset (objects, action size) and checked
// against it: L must cover the longest episode.
model::ModelConfig fit_model_config(model::ModelConfig cfg,
                                    const data::Dataset& ds);
TrainState init_training(const data::Dataset& ds, model::ModelConfig cfg,
                         TrainConfig tc);

struct Batch {
  std::vector<std::size_t> episode, t;
  std::vector<std::vector<double>> obs;
  std::vector<data::ChainTarget> targets;
};

// Uniform episode, then uniform t in [0, T-1]. `demos` are normalized.
Batch sample_batch(std::span<const data::Demonstration> demos, Rng& rng,
                   std::size_t batch_size, const model::ModelConfig& cfg);

struct TraceRow {
  std::int64_t iter = 0;
  double total = 0.0, act = 0.0, lat = 0.0, stop = 0.0;
  double eval_sr = std::numeric_limits<double>::quiet_NaN();
};

struct TrainHooks {
  // Success rate of the current policy; called every eval_every iterations.
  std::function<double(const TrainState&)> evaluate;
  std::function<void(const TrainState&)> checkpoint;
  std::function<void(const TraceRow&)> progress;
};

// Runs `steps` AdamW iterations. Throws kNonFinite naming the iteration and
// the component losses when the loss stops being finite.
void train_steps(TrainState& s, std::span<const data::Demonstration> normalized,
                 std::int64_t steps, std::vector<TraceRow>& trace,
                 const TrainHooks& hooks = {});

struct TrainResult {
  TrainState state;
  std::vector<TraceRow> trace;
};
TrainResult train(const data::Dataset& ds, const model::ModelConfig& cfg,
                  const TrainConfig& tc, const TrainHooks& hooks = {});

void write_trace(const std::filesystem::path& path,
                 std::span<const TraceRow> rows);

// Binary container: u64 little-endian header length, JSON header, f64 blobs
// in manifest order, then the raw sha256 of everything before it.
void save_checkpoint(const std::filesystem::path& path, const TrainState& s);
TrainState load_checkpoint(const std::filesystem::path& path);
// Loads parameters into a policy built from `expected`; kShape naming the
// first parameter that does not fit.
TrainState load_checkpoint(const std::filesystem::path& path,
                           const model::ModelConfig& expected);

}  // namespace coa::train

#endif  // COA_TRAINER_HPP_
