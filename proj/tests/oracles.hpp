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

// Brute-force reference implementations shared by the unit tests and the
// acceptance run. Written from the token layouts, not from the library.

#ifndef COA_TESTS_ORACLES_HPP_
#define COA_TESTS_ORACLES_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "coa/dataset.hpp"
#include "coa/executor.hpp"

namespace coa::oracle {

using data::Action;

// Demo whose action at step i is [i+1, 10*(i+1), 0, gripper(i)], so every
// token names its own time index.
inline data::Demonstration numbered_demo(std::size_t T, std::uint64_t grip_bits = 0) {
  data::Demonstration d;
  d.seed = T;
  d.object_positions = {{0.5, 0.5}};
  for (std::size_t i = 0; i < T; ++i) {
    const double g = (grip_bits >> (i % 64)) & 1 ? -1.0 : 1.0;
    const double v = static_cast<double>(i + 1);
    d.steps.push_back({{v, -v}, {v, 10 * v, 0.0, g}});
  }
  d.success = true;
  return d;
}

// Time index behind every chain position, -1 for padding.
inline std::vector<long> chain_times(std::size_t T, std::size_t t, data::Ordering o,
                                     std::size_t L) {
  using data::Ordering;
  std::vector<long> times;
  const long last = static_cast<long>(T) - 1;
  switch (o) {
    case Ordering::kReverse:
      for (long s = last; s >= static_cast<long>(t); --s) times.push_back(s);
      break;
    case Ordering::kForward:
      for (long s = static_cast<long>(t); s <= last; ++s) times.push_back(s);
      break;
    case Ordering::kHybrid:
      times.push_back(last);
      for (long s = static_cast<long>(t); s < last; ++s) times.push_back(s);
      break;
    case Ordering::kChunk:
    case Ordering::kChunkKf:
      for (std::size_t k = 0; k < 20; ++k) {
        const long s = static_cast<long>(t + k);
        times.push_back(s <= last ? s : -1);
      }
      if (o == Ordering::kChunkKf) times.push_back(last);
      return times;
  }
  times.resize(L, -1);
  return times;
}

// Number of mismatching fields between a built chain target and the oracle
// layout (tokens, masks, stop labels, MTP offset targets); 0 means equal.
inline std::size_t chain_target_mismatches(const data::Demonstration& d, std::size_t t,
                                           data::Ordering o, std::size_t L,
                                           std::size_t H) {
  const auto c = data::build_chain_target(d, t, o, L, H);
  const auto times = chain_times(d.steps.size(), t, o, L);
  if (c.size() != times.size() || c.heads() != H) return 1;
  std::size_t bad = 0;
  long last_valid = -1;
  for (std::size_t j = 0; j < times.size(); ++j) {
    const bool valid = times[j] >= 0;
    bad += c.mask[j] != valid;
    if (valid) {
      bad += c.tokens[j] != d.steps[static_cast<std::size_t>(times[j])].act;
      last_valid = static_cast<long>(j);
    } else {
      bad += c.tokens[j] != Action(4, 0.0);
    }
  }
  for (std::size_t j = 0; j < times.size(); ++j) {
    const bool want = !data::is_chunked(o) && static_cast<long>(j) == last_valid;
    bad += c.stop[j] != want;
  }
  for (std::size_t h = 0; h < H; ++h) {
    for (std::size_t j = 0; j < times.size(); ++j) {
      const bool want = times[j] >= 0 && j + h < times.size() && times[j + h] >= 0;
      bad += c.head_mask[h][j] != want;
      if (want) bad += c.head_target(h, j) != d.steps[static_cast<std::size_t>(times[j + h])].act;
    }
  }
  return bad;
}

// Alignment oracle: enumerate every (entry, token) pair with its absolute
// step and average the ones landing on s with recency weights.
inline Action ensemble(const exec::EnsembleBuffer& buf, std::int64_t s) {
  std::vector<Action> hits;
  std::vector<double> w;
  std::int64_t newest = std::numeric_limits<std::int64_t>::min();
  for (const auto& e : buf.entries()) {
    const auto n = static_cast<std::int64_t>(e.chain.size());
    for (std::int64_t j = 0; j < n; ++j) {
      const std::int64_t step =
          e.align == exec::Alignment::kTail ? e.t + n - j : e.t + j + 1;
      if (step == s) {
        hits.push_back(e.chain[static_cast<std::size_t>(j)]);
        w.push_back(static_cast<double>(e.t));
        newest = std::max(newest, e.t);
      }
    }
  }
  double total = 0.0;
  for (auto& x : w) {
    x = std::exp(-buf.m() * static_cast<double>(newest - static_cast<std::int64_t>(x)));
    total += x;
  }
  Action out(hits.front().size(), 0.0);
  for (std::size_t i = 0; i < hits.size(); ++i) {
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += w[i] / total * hits[i][k];
  }
  return out;
}

}  // namespace coa::oracle

#endif  // COA_TESTS_ORACLES_HPP_
