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

#include "coa/executor.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"

#include "coa/error.hpp"

namespace coa::exec {

namespace {

constexpr std::size_t kQuatDim = 8;  // 3 position + 4 quaternion + gripper
constexpr std::size_t kQuat0 = 3;

}  // namespace

EnsembleBuffer::EnsembleBuffer(double m, std::size_t max_entries)
    : m_(m), max_entries_(max_entries) {
  if (!(m >= 0.0)) fail(ErrorKind::kDomain, "ensemble: m must be >= 0");
  if (max_entries == 0) fail(ErrorKind::kDomain, "ensemble: K must be >= 1");
}

void EnsembleBuffer::push(std::int64_t t, std::vector<Action> chain,
                          Alignment align) {
  if (chain.empty()) fail(ErrorKind::kDomain, "ensemble: empty chain");
  BufferEntry e{t, std::move(chain), align};
  auto pos = std::upper_bound(
      entries_.begin(), entries_.end(), t,
      [](std::int64_t v, const BufferEntry& x) { return v < x.t; });
  entries_.insert(pos, std::move(e));
  while (entries_.size() > max_entries_) entries_.pop_front();
}

std::optional<Action> tail_align(const BufferEntry& e, std::int64_t s) {
  const std::int64_t idx = e.terminal() - s;
  if (idx < 0 || idx >= static_cast<std::int64_t>(e.chain.size())) return {};
  return e.chain[static_cast<std::size_t>(idx)];
}

std::optional<Action> head_align(const BufferEntry& e, std::int64_t s) {
  const std::int64_t idx = s - e.t - 1;
  if (idx < 0 || idx >= static_cast<std::int64_t>(e.chain.size())) return {};
  return e.chain[static_cast<std::size_t>(idx)];
}

std::optional<Action> aligned_token(const BufferEntry& e, std::int64_t s) {
  return e.align == Alignment::kTail ? tail_align(e, s) : head_align(e, s);
}

EnsembleResult ensemble_next_action(const EnsembleBuffer& buf, std::int64_t s) {
  std::vector<Action> toks;
  std::vector<std::int64_t> ages;
  for (const auto& e : buf.entries()) {
    if (auto a = aligned_token(e, s)) {
      toks.push_back(std::move(*a));
      ages.push_back(s - 1 - e.t);
    }
  }
  if (toks.empty()) {
    fail(ErrorKind::kDomain, "ensemble: no entry aligns at step " + std::to_string(s));
  }
  // Relative to the youngest contributor so large m cannot underflow all
  // weights at once; m = inf keeps only the youngest.
  const std::int64_t youngest = *std::min_element(ages.begin(), ages.end());
  EnsembleResult r;
  double total = 0.0;
  for (auto age : ages) {
    const double w = age == youngest
                         ? 1.0
                         : std::exp(-buf.m() * static_cast<double>(age - youngest));
    r.weights.push_back(w);
    total += w;
  }
  for (auto& w : r.weights) w /= total;

  const std::size_t A = toks.front().size();
  const bool quat = A == kQuatDim && toks.size() > 1;
  std::size_t heaviest = 0;
  for (std::size_t i = 1; i < toks.size(); ++i) {
    if (r.weights[i] > r.weights[heaviest]) heaviest = i;
  }
  r.action.assign(A, 0.0);
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (toks[i].size() != A) fail(ErrorKind::kShape, "ensemble: ragged actions");
    double sign = 1.0;
    if (quat) {
      double dot = 0.0;
      for (std::size_t k = kQuat0; k < kQuat0 + 4; ++k) {
        dot += toks[i][k] * toks[heaviest][k];
      }
      sign = dot < 0.0 ? -1.0 : 1.0;
    }
    for (std::size_t k = 0; k < A; ++k) {
      const bool in_quat = quat && k >= kQuat0 && k < kQuat0 + 4;
      r.action[k] += r.weights[i] * (in_quat ? sign * toks[i][k] : toks[i][k]);
    }
  }
  if (quat) {
    double n = 0.0;
    for (std::size_t k = kQuat0; k < kQuat0 + 4; ++k) n += r.action[k] * r.action[k];
    n = std::sqrt(n);
    if (n > 0.0) {
      for (std::size_t k = kQuat0; k < kQuat0 + 4; ++k) r.action[k] /= n;
    }
  }
  return r;
}

namespace {

std::vector<double> raw_observation(const model::ModelConfig& cfg,
                                    const sim::TaskSpec& spec,
                                    const sim::WorldState& st) {
  return cfg.obs_mode == model::ObsMode::kState ? sim::observe(spec, st)
                                                : sim::observe_raster(spec, st);
}

}  // namespace

EpisodeResult rollout_episode(const model::Policy& policy,
                              const data::NormStats& stats,
                              const sim::TaskSpec& spec, std::uint64_t seed,
                              const RolloutOptions& opt) {
  const auto& cfg = policy.config();
  EpisodeResult r;
  r.seed = seed;
  sim::WorldState state = sim::reset(spec, seed);
  r.object_positions = state.objects;
  const model::EnsembleConfig ens = opt.ensemble.value_or(cfg.ensemble);
  EnsembleBuffer buf(ens.m, ens.max_entries);
  const Alignment align = cfg.ordering == data::Ordering::kReverse
                              ? Alignment::kTail
                              : Alignment::kHead;
  for (;;) {
    const auto obs = data::normalize_obs(raw_observation(cfg, spec, state), stats);
    const std::vector<double> pose{state.ee.x, state.ee.y, state.theta, state.gripper};
    const auto pose_n = data::normalize_action(pose, stats);
    model::GenerateOptions go;
    go.record_attention = opt.record_attention && !r.first_chain;
    go.current_action = &pose_n;
    model::Chain chain;
    try {
      chain = model::generate_chain(policy, obs, go);
    } catch (const Error& e) {
      r.error = "step " + std::to_string(state.step) + ": " + e.what();
      r.success = false;
      break;
    }
    const auto timed = chain.time_ordered();
    if (timed.empty()) {
      r.error = "step " + std::to_string(state.step) + ": empty chain";
      break;
    }
    r.chain_lengths.push_back(chain.tokens.size());
    Action next = timed.front();
    if (ens.enabled) {
      buf.push(state.step, align == Alignment::kTail ? chain.tokens : timed, align);
      try {
        next = ensemble_next_action(buf, state.step + 1).action;
      } catch (const Error&) {
        // Nothing aligned: keep the newest chain's next action.
      }
    }
    r.buffer_sizes.push_back(buf.size());
    if (go.record_attention) r.first_chain = std::move(chain);

    Action phys = data::denormalize_action(next, stats);
    phys.back() = phys.back() >= 0.0 ? 1.0 : -1.0;
    r.executed.push_back(phys);
    auto res = sim::step(spec, state, sim::to_env_action(phys));
    state = std::move(res.state);
    if (res.done) break;
  }
  r.success = state.success && r.error.empty();
  r.length = r.executed.size();
  return r;
}

EpisodeResult replay_expert(const sim::TaskSpec& spec, std::uint64_t seed) {
  EpisodeResult r;
  r.seed = seed;
  const auto ep = sim::scripted_expert(spec, seed);
  sim::WorldState state = sim::reset(spec, seed);
  r.object_positions = state.objects;
  for (const auto& st : ep.steps) {
    r.executed.push_back(st.action);
    r.chain_lengths.push_back(1);
    r.buffer_sizes.push_back(0);
    auto res = sim::step(spec, state, sim::to_env_action(st.action));
    state = std::move(res.state);
    if (res.done) break;
  }
  r.success = state.success;
  r.length = r.executed.size();
  return r;
}

std::string rollout_log_json(const EpisodeResult& r) {
  nlohmann::json j = {{"schema_version", 1},
                      {"seed", r.seed},
                      {"success", r.success},
                      {"steps", r.length},
                      {"executed", r.executed},
                      {"chain_lengths", r.chain_lengths},
                      {"buffer_sizes", r.buffer_sizes}};
  nlohmann::json objs = nlohmann::json::array();
  for (const auto& p : r.object_positions) objs.push_back({p.x, p.y});
  j["object_positions"] = objs;
  if (!r.error.empty()) j["error"] = r.error;
  return j.dump();
}

void write_rollout_log(const std::filesystem::path& path,
                       const EpisodeResult& r) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out << rollout_log_json(r) << '\n';
  if (!out) fail(ErrorKind::kIo, "write failed: " + path.string());
}

}  // namespace coa::exec
