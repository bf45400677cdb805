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

#include "coa/sim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "coa/error.hpp"
#include "coa/rng.hpp"

namespace coa::sim {
namespace {

constexpr Vec2 kHome{0.2, 0.1};
constexpr double kPlacementMargin = 0.1;
constexpr double kPi = std::numbers::pi;

double wrap_angle(double a) {
  a = std::fmod(a + kPi, 2.0 * kPi);
  if (a < 0) a += 2.0 * kPi;
  return a - kPi;
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

bool inside_workspace(Vec2 p) {
  return p.x >= 0.0 && p.x <= 1.0 && p.y >= 0.0 && p.y <= 1.0;
}

Vec2 lerp(Vec2 a, Vec2 b, double t) {
  return {a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t};
}

Vec2 unit(Vec2 from, Vec2 to) {
  const double d = distance(from, to);
  return {(to.x - from.x) / d, (to.y - from.y) / d};
}

}  // namespace

std::string_view task_name(TaskId id) {
  switch (id) {
    case TaskId::kReachTarget: return "reach_target";
    case TaskId::kPushButton: return "push_button";
    case TaskId::kPickPlace: return "pick_place";
    case TaskId::kSlideBlock: return "slide_block";
  }
  return "unknown";
}

TaskId parse_task(std::string_view name) {
  for (int i = 0; i < kNumTasks; ++i) {
    const auto id = static_cast<TaskId>(i);
    if (task_name(id) == name) return id;
  }
  fail(ErrorKind::kConfig, "unknown task '" + std::string(name) + "'");
}

double distance(Vec2 a, Vec2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

TaskSpec TaskSpec::make(TaskId task, double spread) {
  TaskSpec s;
  s.task = task;
  s.spread = spread;
  switch (task) {
    case TaskId::kReachTarget: s.nominal = {{0.6, 0.7}}; break;
    case TaskId::kPushButton: s.nominal = {{0.6, 0.65}}; break;
    case TaskId::kPickPlace: s.nominal = {{0.35, 0.55}, {0.7, 0.75}}; break;
    case TaskId::kSlideBlock: s.nominal = {{0.5, 0.45}, {0.5, 0.75}}; break;
  }
  return s;
}

void TaskSpec::validate() const {
  if (!(spread >= 0.0)) fail(ErrorKind::kConfig, "task: spread must be >= 0");
  if (!(tolerance > 0.0)) fail(ErrorKind::kConfig, "task: tolerance must be > 0");
  if (max_steps < 2) fail(ErrorKind::kConfig, "task: max_steps must be >= 2");
  if (!(v_max > 0.0)) fail(ErrorKind::kConfig, "task: v_max must be > 0");
  if (nominal.empty()) fail(ErrorKind::kConfig, "task: no objects");
  for (const auto& p : nominal) {
    if (!inside_workspace(p)) {
      fail(ErrorKind::kConfig, "task: nominal position outside workspace");
    }
  }
}

WorldState reset(const TaskSpec& spec, std::uint64_t seed) {
  spec.validate();
  WorldState s;
  s.ee = kHome;
  s.seed = seed;
  Rng rng(hash_combine(seed, static_cast<std::uint64_t>(spec.task) + 1));
  std::normal_distribution<double> noise(0.0, 1.0);
  // Objects stay kPlacementMargin away from the walls and 3 * tolerance apart
  // from each other. Overlapping draws are redrawn from the same stream, so a
  // seed still maps to exactly one layout.
  const double lo = kPlacementMargin, hi = 1.0 - kPlacementMargin;
  for (const auto& p : spec.nominal) {
    Vec2 placed = p;
    for (int attempt = 0; attempt < 64; ++attempt) {
      // Draw both axes unconditionally so sigma = 0 leaves nominal exactly.
      const double nx = noise(rng), ny = noise(rng);
      if (spec.spread == 0.0) break;
      placed = {std::clamp(p.x + spec.spread * nx, lo, hi),
                std::clamp(p.y + spec.spread * ny, lo, hi)};
      bool apart = true;
      for (const auto& q : s.objects) {
        if (distance(placed, q) < 3.0 * spec.tolerance) apart = false;
      }
      if (apart) break;
    }
    s.objects.push_back(placed);
  }
  return s;
}

std::size_t observation_dim(const TaskSpec& spec) {
  return 4 + 2 * spec.num_objects() + kNumTasks;
}

std::vector<double> observe(const TaskSpec& spec, const WorldState& state) {
  std::vector<double> obs{state.ee.x, state.ee.y, state.theta, state.gripper};
  for (const auto& o : state.objects) {
    obs.push_back(o.x);
    obs.push_back(o.y);
  }
  for (int i = 0; i < kNumTasks; ++i) {
    obs.push_back(static_cast<int>(spec.task) == i ? 1.0 : 0.0);
  }
  return obs;
}

std::vector<double> render(const TaskSpec& spec, const WorldState& state) {
  (void)spec;
  constexpr std::size_t n = kRasterSize;
  std::vector<double> img(n * n, 0.0);
  auto disk = [&](Vec2 c, double radius, double value) {
    for (std::size_t i = 0; i < n; ++i) {
      const double y = 1.0 - (static_cast<double>(i) + 0.5) / n;
      for (std::size_t j = 0; j < n; ++j) {
        const double x = (static_cast<double>(j) + 0.5) / n;
        if (std::hypot(x - c.x, y - c.y) <= radius) img[i * n + j] = value;
      }
    }
  };
  for (std::size_t k = 0; k < state.objects.size(); ++k) {
    disk(state.objects[k], 0.05, 0.4 + 0.2 * static_cast<double>(k));
  }
  disk(state.ee, 0.03, state.gripper > 0 ? 1.0 : 0.85);
  return img;
}

std::vector<double> observe_raster(const TaskSpec& spec,
                                   const WorldState& state) {
  std::vector<double> obs{state.ee.x, state.ee.y, state.theta, state.gripper};
  const auto img = render(spec, state);
  obs.insert(obs.end(), img.begin(), img.end());
  return obs;
}

std::vector<double> to_env_action(std::span<const double> physical) {
  if (physical.size() != kActionDim) {
    fail(ErrorKind::kDomain, "action must have 4 components");
  }
  return {2.0 * physical[0] - 1.0, 2.0 * physical[1] - 1.0, physical[2] / kPi,
          physical[3] >= 0.0 ? 1.0 : -1.0};
}

std::vector<double> from_env_action(std::span<const double> a) {
  if (a.size() != kActionDim) {
    fail(ErrorKind::kDomain, "action must have 4 components");
  }
  return {(a[0] + 1.0) / 2.0, (a[1] + 1.0) / 2.0, a[2] * kPi,
          a[3] >= 0.0 ? 1.0 : -1.0};
}

StepResult step(const TaskSpec& spec, const WorldState& state,
                std::span<const double> env_action) {
  if (env_action.size() != kActionDim) {
    fail(ErrorKind::kDomain, "step: action must have 4 components, got " +
                                 std::to_string(env_action.size()));
  }
  for (double v : env_action) {
    if (!std::isfinite(v)) fail(ErrorKind::kDomain, "step: non-finite action");
  }
  const auto cmd = from_env_action(env_action);
  WorldState next = state;
  ++next.step;

  const Vec2 target{clamp01(cmd[0]), clamp01(cmd[1])};
  const double dist = distance(next.ee, target);
  if (dist > spec.v_max) {
    next.ee = lerp(next.ee, target, spec.v_max / dist);
  } else {
    next.ee = target;
  }
  const double turn =
      std::clamp(wrap_angle(cmd[2] - next.theta), -spec.w_max, spec.w_max);
  if (turn != 0.0) next.theta = wrap_angle(next.theta + turn);

  const double prev_gripper = next.gripper;
  next.gripper = cmd[3];
  const bool closing = prev_gripper > 0 && next.gripper < 0;
  const bool opening = prev_gripper < 0 && next.gripper > 0;

  bool met = false;
  switch (spec.task) {
    case TaskId::kReachTarget:
      met = distance(next.ee, next.objects[0]) <= spec.tolerance;
      break;
    case TaskId::kPushButton:
      met = next.gripper < 0 &&
            distance(next.ee, next.objects[0]) <= spec.tolerance;
      break;
    case TaskId::kPickPlace: {
      Vec2& block = next.objects[0];
      if (next.grasped) block = next.ee;
      if (closing && !next.grasped &&
          distance(next.ee, block) <= spec.tolerance) {
        next.grasped = true;
        block = next.ee;
      }
      if (opening && next.grasped) {
        next.grasped = false;
        met = distance(block, next.objects[1]) <= spec.tolerance;
      }
      break;
    }
    case TaskId::kSlideBlock: {
      // A closed gripper pushes the block along the EE motion direction by
      // the smallest amount that restores the contact distance.
      Vec2& block = next.objects[0];
      const double moved = distance(state.ee, next.ee);
      if (next.gripper < 0 && moved > 0.0) {
        const Vec2 m = unit(state.ee, next.ee);
        const Vec2 p{block.x - next.ee.x, block.y - next.ee.y};
        const double pp = p.x * p.x + p.y * p.y;
        const double r2 = spec.push_radius * spec.push_radius;
        if (pp < r2) {
          const double pm = p.x * m.x + p.y * m.y;
          const double s = -pm + std::sqrt(pm * pm - (pp - r2));
          block = {clamp01(block.x + s * m.x), clamp01(block.y + s * m.y)};
        }
      }
      met = distance(block, next.objects[1]) <= spec.tolerance;
      break;
    }
  }
  if (met) next.success = true;

  StepResult r;
  r.success = next.success;
  r.done = next.success || next.step >= spec.max_steps;
  r.observation = observe(spec, next);
  r.state = std::move(next);
  return r;
}

namespace {

struct Command {
  Vec2 pos;
  double gripper;
};

// Waypoints from `from` to `to`: accelerate by v_max/4 per step, cruise at
// v_max, decelerate, and jump to the endpoint once it is within one step.
// Intermediate waypoints stay at least `snap` away from the endpoint.
void plan_segment(Vec2 from, Vec2 to, double gripper, double v_max,
                  double snap, std::vector<Command>& out) {
  const double total = distance(from, to);
  if (total == 0.0) return;
  const double accel = v_max / 4.0;
  double s = 0.0, v = 0.0;
  for (;;) {
    const double rem = total - s;
    v = std::min({v + accel, v_max, std::sqrt(2.0 * accel * rem)});
    v = std::max(v, accel / 2.0);
    if (rem <= v_max && rem - v < snap) {
      out.push_back({to, gripper});
      return;
    }
    if (rem - v < snap) v = rem - snap;
    s += v;
    out.push_back({lerp(from, to, s / total), gripper});
  }
}

}  // namespace

ExpertEpisode scripted_expert(const TaskSpec& spec, std::uint64_t seed) {
  WorldState state = reset(spec, seed);
  ExpertEpisode ep;
  ep.seed = seed;
  ep.object_positions = state.objects;

  constexpr double kOpen = 1.0, kClosed = -1.0;
  double theta_cmd = 0.0;
  std::vector<Command> plan;
  const double snap = 1.5 * spec.tolerance;
  auto move = [&](Vec2 from, Vec2 to, double g) {
    plan_segment(from, to, g, spec.v_max, snap, plan);
  };
  const auto& obj = state.objects;
  switch (spec.task) {
    case TaskId::kReachTarget:
      move(state.ee, obj[0], kOpen);
      break;
    case TaskId::kPushButton:
      move(state.ee, obj[0], kOpen);
      plan.push_back({obj[0], kClosed});
      break;
    case TaskId::kPickPlace:
      if (distance(obj[0], obj[1]) < 2.0 * spec.tolerance) {
        fail(ErrorKind::kDomain, "expert: block starts at the goal");
      }
      move(state.ee, obj[0], kOpen);
      plan.push_back({obj[0], kClosed});
      move(obj[0], obj[1], kClosed);
      plan.push_back({obj[1], kOpen});
      break;
    case TaskId::kSlideBlock: {
      if (distance(obj[0], obj[1]) < 2.0 * spec.tolerance) {
        fail(ErrorKind::kDomain, "expert: block starts at the goal");
      }
      const Vec2 dir = unit(obj[0], obj[1]);
      const double standoff = spec.push_radius + 0.03;
      const Vec2 staging{obj[0].x - standoff * dir.x,
                         obj[0].y - standoff * dir.y};
      const Vec2 finish{obj[1].x - spec.push_radius * dir.x,
                        obj[1].y - spec.push_radius * dir.y};
      if (!inside_workspace(staging) || !inside_workspace(finish)) {
        fail(ErrorKind::kDomain, "expert: push line leaves the workspace");
      }
      theta_cmd = std::atan2(dir.y, dir.x);
      move(state.ee, staging, kOpen);
      plan.push_back({staging, kClosed});
      move(staging, finish, kClosed);
      break;
    }
  }

  for (const auto& c : plan) {
    const std::vector<double> action{c.pos.x, c.pos.y, theta_cmd, c.gripper};
    ep.steps.push_back({observe(spec, state), action});
    auto r = step(spec, state, to_env_action(action));
    state = std::move(r.state);
    if (r.done) break;
  }
  ep.success = state.success;
  if (!ep.success) {
    fail(ErrorKind::kDomain, "expert: episode for seed " +
                                 std::to_string(seed) + " did not succeed");
  }
  if (ep.steps.size() < 2) {
    fail(ErrorKind::kDomain, "expert: episode for seed " +
                                 std::to_string(seed) + " is shorter than 2");
  }
  return ep;
}

}  // namespace coa::sim
