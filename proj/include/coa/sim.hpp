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

// Deterministic 2-D tabletop simulator with scripted experts.
//
// The workspace is the unit square. The end effector (EE) carries a pose
// (x, y, theta) and a binary gripper (+1 open, -1 closed). Each step consumes
// one absolute pose command and moves the EE toward it by at most v_max.

#ifndef COA_SIM_HPP_
#define COA_SIM_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace coa::sim {

enum class TaskId { kReachTarget, kPushButton, kPickPlace, kSlideBlock };

inline constexpr int kNumTasks = 4;
inline constexpr std::size_t kActionDim = 4;  // x, y, theta, gripper

std::string_view task_name(TaskId id);
// Throws coa::Error (kConfig) on an unknown name.
TaskId parse_task(std::string_view name);

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Vec2&, const Vec2&) = default;
};

double distance(Vec2 a, Vec2 b);

struct TaskSpec {
  TaskId task = TaskId::kReachTarget;
  std::vector<Vec2> nominal;  // one entry per object
  double spread = 0.1;        // per-axis std of object placement
  double tolerance = 0.03;    // success radius, workspace units
  int max_steps = 60;
  double v_max = 0.05;        // max EE displacement per step
  double w_max = 0.25;        // max EE rotation per step, radians
  double push_radius = 0.05;  // contact distance for slide_block

  // Nominal layout for a task with the given spread.
  static TaskSpec make(TaskId task, double spread = 0.1);
  std::size_t num_objects() const { return nominal.size(); }
  void validate() const;
};

struct WorldState {
  Vec2 ee{0.5, 0.1};
  double theta = 0.0;
  double gripper = 1.0;
  std::vector<Vec2> objects;
  bool grasped = false;
  bool success = false;  // latched for the episode
  int step = 0;
  std::uint64_t seed = 0;

  friend bool operator==(const WorldState&, const WorldState&) = default;
};

struct StepResult {
  WorldState state;
  std::vector<double> observation;
  bool done = false;
  bool success = false;
};

WorldState reset(const TaskSpec& spec, std::uint64_t seed);

// State observation: [ee x, y, theta, gripper, (object x, y)..., task one-hot].
std::vector<double> observe(const TaskSpec& spec, const WorldState& state);
std::size_t observation_dim(const TaskSpec& spec);

// 64x64 grayscale top-down view, row-major, values in [0, 1].
inline constexpr std::size_t kRasterSize = 64;
std::vector<double> render(const TaskSpec& spec, const WorldState& state);
// Raster observation: [ee x, y, theta, gripper, 4096 pixels].
std::vector<double> observe_raster(const TaskSpec& spec,
                                   const WorldState& state);

// Physical action <-> normalized env action ([-1,1]^4: workspace mapped
// affinely, theta/pi, gripper sign).
std::vector<double> to_env_action(std::span<const double> physical);
std::vector<double> from_env_action(std::span<const double> env_action);

// Throws coa::Error (kDomain) on a non-finite or wrongly sized action.
StepResult step(const TaskSpec& spec, const WorldState& state,
                std::span<const double> env_action);

struct ExpertStep {
  std::vector<double> observation;
  std::vector<double> action;  // physical absolute pose command
};

struct ExpertEpisode {
  std::uint64_t seed = 0;
  std::vector<Vec2> object_positions;  // at reset
  std::vector<ExpertStep> steps;
  bool success = false;
};

// Straight-line waypoint following with a trapezoidal speed profile. Throws
// coa::Error (kDomain) when the configuration cannot be solved or the
// resulting episode fails; callers resample the seed.
ExpertEpisode scripted_expert(const TaskSpec& spec, std::uint64_t seed);

}  // namespace coa::sim

#endif  // COA_SIM_HPP_
