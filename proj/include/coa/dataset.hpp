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

// Demonstrations, normalization, keyframes and chain targets.
//
// Indexing is 0-based throughout: step t of a demo pairs observation t with
// the action taken from it, and the chain built at t covers actions t..T-1.

#ifndef COA_DATASET_HPP_
#define COA_DATASET_HPP_

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "coa/sim.hpp"

namespace coa::data {

using Action = std::vector<double>;

enum class Ordering { kReverse, kForward, kHybrid, kChunk, kChunkKf };
enum class KeyframeMode { kLastAction, kGripperChange };

inline constexpr std::size_t kChunkLength = 20;
inline constexpr int kFormatVersion = 1;

std::string_view ordering_name(Ordering o);
Ordering parse_ordering(std::string_view name);  // kConfig on failure
std::string_view keyframe_mode_name(KeyframeMode m);
KeyframeMode parse_keyframe_mode(std::string_view name);
bool is_chunked(Ordering o);

struct Step {
  std::vector<double> obs;
  Action act;
  friend bool operator==(const Step&, const Step&) = default;
};

struct Demonstration {
  sim::TaskId task = sim::TaskId::kReachTarget;
  std::uint64_t seed = 0;
  std::vector<sim::Vec2> object_positions;
  std::vector<Step> steps;
  bool success = false;

  std::size_t length() const { return steps.size(); }
  friend bool operator==(const Demonstration&,
                         const Demonstration&) = default;
};

struct NormStats {
  std::vector<double> act_min, act_max;
  std::vector<double> obs_min, obs_max;
  friend bool operator==(const NormStats&, const NormStats&) = default;
};

struct DatasetManifest {
  int format_version = kFormatVersion;
  sim::TaskId task = sim::TaskId::kReachTarget;
  std::size_t action_dim = sim::kActionDim;
  std::size_t obs_dim = 0;
  double spread = 0.1;
  NormStats norm_stats;
  std::size_t count = 0;
  friend bool operator==(const DatasetManifest&,
                         const DatasetManifest&) = default;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<Demonstration> demos;
  friend bool operator==(const Dataset&, const Dataset&) = default;
};

// n successful expert demos over consecutive seeds from seed0. Seeds whose
// expert fails are skipped and appended to `skipped` when given. Throws
// kDomain once more than 10% of attempted seeds have failed.
std::vector<Demonstration> collect_demos(
    const sim::TaskSpec& spec, std::size_t n, std::uint64_t seed0,
    std::vector<std::uint64_t>* skipped = nullptr);

// Builds a manifest (with norm stats over all demos) around `demos`.
Dataset make_dataset(const sim::TaskSpec& spec,
                     std::vector<Demonstration> demos);

// JSON Lines plus a "<path>.sha256" sidecar. Errors name the 0-based record.
void write_dataset(const std::filesystem::path& path, const Dataset& ds);
Dataset read_dataset(const std::filesystem::path& path);

NormStats compute_norm_stats(std::span<const Demonstration> demos);

// Per-dimension affine map of [lo, hi] onto [-1, 1]; constant dims map to 0.
std::vector<double> normalize(std::span<const double> x,
                              std::span<const double> lo,
                              std::span<const double> hi);
std::vector<double> denormalize(std::span<const double> x,
                                std::span<const double> lo,
                                std::span<const double> hi);
Action normalize_action(std::span<const double> a, const NormStats& s);
Action denormalize_action(std::span<const double> a, const NormStats& s);
std::vector<double> normalize_obs(std::span<const double> o,
                                  const NormStats& s);

// Copy of `demos` with every observation and action normalized.
std::vector<Demonstration> normalize_demos(
    std::span<const Demonstration> demos, const NormStats& s);

Action extract_keyframe(const Demonstration& demo, KeyframeMode mode);

// Token layout per ordering for a chain built at step t of a length-T demo:
//   reverse   [a_{T-1}, ..., a_t]            stop on the last token
//   forward   [a_t, ..., a_{T-1}]            stop on the last token
//   hybrid    [a_{T-1}, a_t, ..., a_{T-2}]   stop on the last token
//   chunk     [a_t, ..., a_{t+19}]           masked past the episode end
//   chunk_kf  chunk plus a_{T-1} at index 20
// Head h (0-based) at position j targets token j + h.
struct ChainTarget {
  Ordering ordering = Ordering::kReverse;
  std::vector<Action> tokens;  // padded with zero actions
  std::vector<std::uint8_t> mask;
  std::vector<std::uint8_t> stop;
  Action keyframe;
  std::vector<std::vector<std::uint8_t>> head_mask;  // [H][len]

  std::size_t size() const { return tokens.size(); }
  std::size_t num_valid() const;
  std::size_t heads() const { return head_mask.size(); }
  // Target for head h at position j; only meaningful where head_mask is 1.
  const Action& head_target(std::size_t h, std::size_t j) const;
};

// Variable-length orderings pad to L and require T <= L (kDomain otherwise);
// chunk orderings always have 20 or 21 positions. keyframe is the token the
// chain is anchored on (a_{T-1} under last_action).
ChainTarget build_chain_target(const Demonstration& demo, std::size_t t,
                               Ordering ordering, std::size_t L,
                               std::size_t H,
                               KeyframeMode mode = KeyframeMode::kLastAction);

// Axis-aligned box per object index over the training positions.
struct BoundingBox {
  std::vector<sim::Vec2> lo, hi;
  bool contains(std::span<const sim::Vec2> objects) const;
};
BoundingBox training_box(std::span<const std::vector<sim::Vec2>> train);

struct EvalCandidate {
  std::uint64_t seed = 0;
  std::vector<sim::Vec2> objects;
};

// First n_each candidates (pool order) with every object inside the box go
// to interpolation, the first n_each with any object outside go to
// extrapolation. Throws kDomain with both counts if either falls short.
std::pair<std::vector<EvalCandidate>, std::vector<EvalCandidate>>
split_interp_extrap(const BoundingBox& box,
                    std::span<const EvalCandidate> pool, std::size_t n_each);

// Sum over axes of the population variance. Needs at least 2 positions.
double spatial_variance(std::span<const sim::Vec2> positions);

}  // namespace coa::data

#endif  // COA_DATASET_HPP_
