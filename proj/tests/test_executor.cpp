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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <limits>
#include <random>

#include "json.hpp"

#include "coa/error.hpp"
#include "coa/executor.hpp"
#include "oracles.hpp"

using namespace coa;
using namespace coa::exec;

namespace {

Action act(double a, double b = 0.0) { return {a, b, 0.0, 1.0}; }

struct Fixture {
  sim::TaskSpec spec = sim::TaskSpec::make(sim::TaskId::kReachTarget, 0.1);
  data::NormStats stats;
  model::ModelConfig cfg;

  Fixture() {
    auto demos = data::collect_demos(spec, 4, 0);
    stats = data::make_dataset(spec, demos).manifest.norm_stats;
    cfg = model::default_config("desk");
    cfg.d_model = 16;
    cfg.heads = 2;
    cfg.d_ff = 32;
    cfg.enc_layers = 1;
    cfg.trunk_layers = 1;
    cfg.mtp_heads = 2;
    cfg.max_len = 8;
    cfg.dropout = 0.0;
  }
};

}  // namespace

TEST_CASE("tail alignment index arithmetic") {
  BufferEntry e{4, {act(0), act(1), act(2), act(3), act(4)}, Alignment::kTail};
  CHECK(e.terminal() == 9);
  CHECK((*tail_align(e, 5))[0] == 4);  // s = t+1 -> last token
  CHECK((*tail_align(e, 9))[0] == 0);  // s = T -> keyframe
  CHECK_FALSE(tail_align(e, 10).has_value());
  CHECK_FALSE(tail_align(e, 4).has_value());
}

TEST_CASE("head alignment index arithmetic") {
  BufferEntry e{4, {act(0), act(1), act(2)}, Alignment::kHead};
  CHECK((*head_align(e, 5))[0] == 0);
  CHECK((*head_align(e, 7))[0] == 2);
  CHECK_FALSE(head_align(e, 8).has_value());
  CHECK_FALSE(head_align(e, 4).has_value());
}

TEST_CASE("two reverse chains with m = 0 average their aligned tokens") {
  const Action k = act(9), p = act(2, 1), q = act(1), k2 = act(8), r = act(4, 3);
  EnsembleBuffer buf(0.0, 10);
  buf.push(0, {k, p, q}, Alignment::kTail);
  buf.push(1, {k2, r}, Alignment::kTail);
  const auto res = ensemble_next_action(buf, 2);
  CHECK(res.action[0] == doctest::Approx(3.0).epsilon(1e-15));
  CHECK(res.action[1] == doctest::Approx(2.0).epsilon(1e-15));
  REQUIRE(res.weights.size() == 2);
  CHECK(res.weights[0] == 0.5);
  const auto oracle = oracle::ensemble(buf, 2);
  for (std::size_t i = 0; i < 4; ++i) CHECK(res.action[i] == doctest::Approx(oracle[i]));
}

TEST_CASE("single entry ensemble is the aligned token, bit for bit") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> g;
  for (double m : {0.0, 0.01, 1.0, 1e6, std::numeric_limits<double>::infinity()}) {
    std::vector<Action> chain(6);
    for (auto& a : chain) a = {g(rng), g(rng), g(rng), g(rng)};
    EnsembleBuffer buf(m, 10);
    buf.push(3, chain, Alignment::kTail);
    for (std::int64_t s = 4; s <= 9; ++s) {
      CHECK(ensemble_next_action(buf, s).action == *tail_align(buf.entries()[0], s));
    }
  }
}

TEST_CASE("large m keeps only the newest entry") {
  EnsembleBuffer buf(std::numeric_limits<double>::infinity(), 10);
  buf.push(0, {act(0), act(1), act(2), act(3)}, Alignment::kTail);
  buf.push(2, {act(10), act(11)}, Alignment::kTail);
  const auto res = ensemble_next_action(buf, 3);
  CHECK(res.action[0] == 11.0);
  CHECK(res.weights[0] == 0.0);
}

TEST_CASE("perfect reverse suffixes recover the ground truth for any m") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> g;
  const int T = 30;
  std::vector<Action> truth(T + 1);
  for (auto& a : truth) a = {g(rng), g(rng), g(rng), g(rng)};
  for (double m : {0.0, 0.01, 10.0}) {
    EnsembleBuffer buf(m, 10);
    for (std::int64_t t = 0; t < T; ++t) {
      // Each chain ends at its own terminal step, not necessarily T.
      const auto term = std::uniform_int_distribution<std::int64_t>(t + 1, T)(rng);
      std::vector<Action> chain;
      for (auto step = term; step > t; --step) chain.push_back(truth[static_cast<std::size_t>(step)]);
      buf.push(t, chain, Alignment::kTail);
      const auto res = ensemble_next_action(buf, t + 1);
      for (std::size_t k = 0; k < 4; ++k) {
        CHECK(std::abs(res.action[k] - truth[static_cast<std::size_t>(t + 1)][k]) <= 1e-12);
      }
      double sum = 0.0;
      for (double w : res.weights) sum += w;
      CHECK(std::abs(sum - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("random buffers match the enumeration oracle") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 200; ++trial) {
    const double m = std::uniform_real_distribution<double>(0.0, 2.0)(rng);
    EnsembleBuffer buf(m, 4);
    const auto align = trial % 2 ? Alignment::kHead : Alignment::kTail;
    std::int64_t t = 0;
    for (int i = 0; i < 6; ++i) {
      std::vector<Action> chain(std::uniform_int_distribution<std::size_t>(1, 8)(rng));
      for (auto& a : chain) a = {g(rng), g(rng), g(rng), g(rng)};
      buf.push(t, chain, align);
      CHECK(buf.size() <= 4);
      if (aligned_token(buf.entries().back(), t + 1)) {
        const auto res = ensemble_next_action(buf, t + 1);
        const auto oracle = oracle::ensemble(buf, t + 1);
        for (std::size_t k = 0; k < 4; ++k) {
          CHECK(res.action[k] == doctest::Approx(oracle[k]).epsilon(1e-12));
        }
      }
      ++t;
    }
  }
}

TEST_CASE("buffer keeps the newest K entries in time order") {
  EnsembleBuffer buf(0.01, 3);
  for (std::int64_t t : {2, 0, 1, 4, 3}) buf.push(t, {act(static_cast<double>(t))}, Alignment::kTail);
  REQUIRE(buf.size() == 3);
  CHECK(buf.entries()[0].t == 2);
  CHECK(buf.entries()[2].t == 4);
  CHECK_THROWS_AS(buf.push(5, {}, Alignment::kTail), Error);
  buf.clear();
  CHECK(buf.size() == 0);
}

TEST_CASE("nothing aligned is an error") {
  EnsembleBuffer buf;
  buf.push(0, {act(1)}, Alignment::kTail);
  CHECK_THROWS_AS(ensemble_next_action(buf, 5), Error);
  CHECK_THROWS_AS(ensemble_next_action(EnsembleBuffer{}, 1), Error);
}

TEST_CASE("quaternion part is sign aligned and renormalized") {
  const double h = std::sqrt(0.5);
  EnsembleBuffer buf(0.0, 10);
  buf.push(0, {{0, 0, 0, 1, 0, 0, 0, 1}, {0, 0, 0, 1, 0, 0, 0, 1}}, Alignment::kTail);
  buf.push(1, {{0, 0, 0, -h, -h, 0, 0, 1}}, Alignment::kTail);
  const auto a = ensemble_next_action(buf, 2).action;
  double n = 0.0;
  for (int k = 3; k < 7; ++k) n += a[k] * a[k];
  CHECK(n == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(a[3] > 0.0);  // q and -q are the same rotation; no cancellation
  CHECK(a[4] > 0.0);
}

TEST_CASE("disabled ensemble equals K = 1 with m = 0") {
  Fixture f;
  for (auto ordering : {data::Ordering::kReverse, data::Ordering::kForward}) {
    auto off = f.cfg;
    off.ordering = ordering;
    off.ensemble.enabled = false;
    auto one = off;
    one.ensemble = {true, 0.0, 1};
    model::Policy p_off(off, 3), p_one(one, 3);
    for (std::uint64_t seed : {1u, 2u}) {
      auto a = rollout_episode(p_off, f.stats, f.spec, seed);
      auto b = rollout_episode(p_one, f.stats, f.spec, seed);
      CHECK(a.executed == b.executed);
      CHECK(a.success == b.success);
    }
  }
}

TEST_CASE("rollouts are deterministic and bounded") {
  Fixture f;
  model::Policy p(f.cfg, 9);
  RolloutOptions ro;
  ro.record_attention = true;
  auto a = rollout_episode(p, f.stats, f.spec, 42, ro);
  auto b = rollout_episode(p, f.stats, f.spec, 42);
  CHECK(a.executed == b.executed);
  CHECK(a.length <= static_cast<std::size_t>(f.spec.max_steps));
  CHECK(a.length == a.chain_lengths.size());
  CHECK(a.error.empty());
  REQUIRE(a.first_chain.has_value());
  CHECK(a.first_chain->attention.size() == f.cfg.trunk_layers);
  for (auto s : a.buffer_sizes) CHECK(s <= f.cfg.ensemble.max_entries);
  for (const auto& u : a.executed) CHECK((u[3] == 1.0 || u[3] == -1.0));

  auto j = nlohmann::json::parse(rollout_log_json(a));
  CHECK(j["steps"] == a.length);
  CHECK(j["executed"].size() == a.length);
}

TEST_CASE("expert replay through the rollout loop succeeds") {
  Fixture f;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto r = replay_expert(f.spec, seed);
    CHECK(r.success);
  }
}
