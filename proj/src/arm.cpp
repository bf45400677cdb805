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

#include "coa/arm.hpp"

#include <algorithm>
#include <cmath>

namespace coa::sim {

Vec2 forward_kinematics(const ArmModel& arm) {
  const double q12 = arm.q1 + arm.q2;
  return {arm.l1 * std::cos(arm.q1) + arm.l2 * std::cos(q12),
          arm.l1 * std::sin(arm.q1) + arm.l2 * std::sin(q12)};
}

Mat2 jacobian_2link(const ArmModel& arm) {
  const double s1 = std::sin(arm.q1), c1 = std::cos(arm.q1);
  const double s12 = std::sin(arm.q1 + arm.q2), c12 = std::cos(arm.q1 + arm.q2);
  return {{{-arm.l1 * s1 - arm.l2 * s12, -arm.l2 * s12},
           {arm.l1 * c1 + arm.l2 * c12, arm.l2 * c12}}};
}

double determinant(const Mat2& m) {
  return m[0][0] * m[1][1] - m[0][1] * m[1][0];
}

bool reachable(const ArmModel& arm, Vec2 target) {
  const double r = std::hypot(target.x, target.y);
  return r >= std::abs(arm.l1 - arm.l2) && r <= arm.l1 + arm.l2;
}

JointVec pd_control(const ArmModel& arm, Vec2 target, Vec2 current,
                    Vec2 current_vel) {
  const double ux = arm.kp * (target.x - current.x) - arm.kd * current_vel.x;
  const double uy = arm.kp * (target.y - current.y) - arm.kd * current_vel.y;
  const Mat2 j = jacobian_2link(arm);
  const double det = determinant(j);
  if (std::abs(det) >= kSingularDet) {
    return {(j[1][1] * ux - j[0][1] * uy) / det,
            (-j[1][0] * ux + j[0][0] * uy) / det};
  }
  // J^T (J J^T + lambda^2 I)^-1 u
  const double l2 = kDampingLambda * kDampingLambda;
  const double a = j[0][0] * j[0][0] + j[0][1] * j[0][1] + l2;
  const double b = j[0][0] * j[1][0] + j[0][1] * j[1][1];
  const double d = j[1][0] * j[1][0] + j[1][1] * j[1][1] + l2;
  const double inv_det = 1.0 / (a * d - b * b);
  const double wx = inv_det * (d * ux - b * uy);
  const double wy = inv_det * (-b * ux + a * uy);
  return {j[0][0] * wx + j[1][0] * wy, j[0][1] * wx + j[1][1] * wy};
}

std::vector<double> simulate_pd(ArmModel& arm, Vec2 target, int steps,
                                double dt) {
  std::vector<double> errors;
  errors.reserve(static_cast<std::size_t>(std::max(steps, 0)));
  for (int k = 0; k < steps; ++k) {
    const Vec2 x = forward_kinematics(arm);
    const double g = arm.kp / (1.0 + arm.kd);
    const Vec2 vel{g * (target.x - x.x), g * (target.y - x.y)};
    const JointVec qd = pd_control(arm, target, x, vel);
    arm.q1 += dt * qd[0];
    arm.q2 += dt * qd[1];
    errors.push_back(distance(forward_kinematics(arm), target));
  }
  return errors;
}

}  // namespace coa::sim
