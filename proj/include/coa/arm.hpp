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

// Planar two-link arm: forward kinematics, Jacobian, and a task-space PD law
// mapped to joint velocities through a (damped) pseudo-inverse.

#ifndef COA_ARM_HPP_
#define COA_ARM_HPP_

#include <array>
#include <vector>

#include "coa/sim.hpp"

namespace coa::sim {

using Mat2 = std::array<std::array<double, 2>, 2>;
using JointVec = std::array<double, 2>;

struct ArmModel {
  double l1 = 0.5;
  double l2 = 0.5;
  double q1 = 0.0;
  double q2 = 0.0;
  double kp = 4.0;
  double kd = 1.0;
};

Vec2 forward_kinematics(const ArmModel& arm);
Mat2 jacobian_2link(const ArmModel& arm);
double determinant(const Mat2& m);
bool reachable(const ArmModel& arm, Vec2 target);

inline constexpr double kSingularDet = 1e-8;
inline constexpr double kDampingLambda = 1e-3;

// u = kp * e + kd * de/dt with e = target - current and a static target,
// so de/dt = -current_vel. Returns J^-1 u, or the damped least-squares
// solution J^T (J J^T + lambda^2 I)^-1 u when |det J| < kSingularDet.
JointVec pd_control(const ArmModel& arm, Vec2 target, Vec2 current,
                    Vec2 current_vel);

// Closed-loop rollout of a velocity-commanded arm toward a fixed target with
// explicit Euler integration of the joint command. The EE velocity fed to
// pd_control is the one the command produces in the same tick, i.e. the
// solution of v = kp * e - kd * v. Returns the task-space error norm after
// every step; `arm` is left at the final configuration.
std::vector<double> simulate_pd(ArmModel& arm, Vec2 target, int steps,
                                double dt);

}  // namespace coa::sim

#endif  // COA_ARM_HPP_
