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

// Closed-loop execution with temporal ensembling.
//
// Time convention: an entry generated after t executed steps proposes
// actions for steps s = t+1, t+2, ... and the next action to execute is the
// one for s = (executed steps) + 1.

#ifndef COA_EXECUTOR_HPP_
#define COA_EXECUTOR_HPP_

#include <cstdint>
#include <deque>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "coa/dataset.hpp"
#include "coa/model.hpp"
#include "coa/sim.hpp"

namespace coa::exec {

using data::Action;

enum class Alignment {
  kTail,  // reverse chain: index j is step T_i - j with T_i = t_i + N_i
  kHead,  // time-ordered chain: index j is step t_i + j + 1
};

struct BufferEntry {
  std::int64_t t = 0;
  std::vector<Action> chain;
  Alignment align = Alignment::kTail;

  std::int64_t terminal() const {
    return t + static_cast<std::int64_t>(chain.size());
  }
};

class EnsembleBuffer {
 public:
  explicit EnsembleBuffer(double m = 0.01, std::size_t max_entries = 10);

  // Entries stay sorted by t; the oldest is dropped beyond max_entries.
  // kDomain on an empty chain.
  void push(std::int64_t t, std::vector<Action> chain, Alignment align);
  void clear() { entries_.clear(); }

  double m() const { return m_; }
  std::size_t max_entries() const { return max_entries_; }
  std::size_t size() const { return entries_.size(); }
  const std::deque<BufferEntry>& entries() const { return entries_; }

 private:
  double m_;
  std::size_t max_entries_;
  std::deque<BufferEntry> entries_;
};

std::optional<Action> tail_align(const BufferEntry& e, std::int64_t s);
std::optional<Action> head_align(const BufferEntry& e, std::int64_t s);
std::optional<Action> aligned_token(const BufferEntry& e, std::int64_t s);

struct EnsembleResult {
  Action action;
  std::vector<double> weights;  // normalized, one per aligned entry
};

// Weighted mean of the aligned tokens, w_i ~ exp(-m (s - 1 - t_i)). With an
// 8-dim action the quaternion (dims 3..6) is sign-aligned to the heaviest
// contributor and renormalized. kDomain when nothing aligns at s.
EnsembleResult ensemble_next_action(const EnsembleBuffer& buf, std::int64_t s);

struct RolloutOptions {
  bool record_attention = false;  // keep the first chain's maps
  // Replaces the policy's ensemble settings (evaluation-only ablation).
  std::optional<model::EnsembleConfig> ensemble;
};

struct EpisodeResult {
  std::uint64_t seed = 0;
  std::vector<sim::Vec2> object_positions;
  bool success = false;
  std::size_t length = 0;
  std::vector<Action> executed;  // physical commands
  std::vector<std::size_t> chain_lengths;
  std::vector<std::size_t> buffer_sizes;
  std::string error;  // set when chain generation failed
  std::optional<model::Chain> first_chain;
};

// Observe, generate, ensemble, denormalize, step; repeats until the env
// reports done. The gripper is binarized at 0 before stepping.
EpisodeResult rollout_episode(const model::Policy& policy,
                              const data::NormStats& stats,
                              const sim::TaskSpec& spec, std::uint64_t seed,
                              const RolloutOptions& opt = {});

// Open-loop replay of the scripted expert through the same env loop.
EpisodeResult replay_expert(const sim::TaskSpec& spec, std::uint64_t seed);

std::string rollout_log_json(const EpisodeResult& r);
void write_rollout_log(const std::filesystem::path& path,
                       const EpisodeResult& r);

}  // namespace coa::exec

#endif  // COA_EXECUTOR_HPP_
