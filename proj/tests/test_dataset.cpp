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

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "coa/dataset.hpp"
#include "coa/error.hpp"
#include "oracles.hpp"

using namespace coa;
using namespace coa::data;
using coa::oracle::numbered_demo;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
  auto dir = fs::temp_directory_path() / "coa_test_dataset";
  fs::create_directories(dir);
  return dir / name;
}

std::string error_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("collect_demos: count, success and determinism") {
  auto spec = sim::TaskSpec::make(sim::TaskId::kReachTarget, 0.1);
  auto demos = collect_demos(spec, 100, 0);
  CHECK(demos.size() == 100);
  for (const auto& d : demos) {
    CHECK(d.success);
    CHECK(d.length() >= 2);
  }
  auto one = collect_demos(spec, 1, 7);
  REQUIRE(one.size() == 1);
  CHECK(one[0] == collect_demos(spec, 1, 7)[0]);
  CHECK(collect_demos(spec, 5, 3) == collect_demos(spec, 5, 3));
  CHECK_THROWS_AS(collect_demos(spec, 0, 0), Error);
}

TEST_CASE("dataset files round trip bit-exactly") {
  auto spec = sim::TaskSpec::make(sim::TaskId::kPickPlace, 0.1);
  Dataset ds = make_dataset(spec, collect_demos(spec, 6, 11));
  // Values that do not survive a naive %g print.
  ds.demos[0].steps[0].act[0] = 0.1 + 0.2;
  ds.demos[0].steps[0].obs[1] = 1.0 / 3.0;
  auto p = temp_path("round.jsonl");
  write_dataset(p, ds);
  CHECK(read_dataset(p) == ds);

  CHECK_THROWS_AS(make_dataset(spec, {numbered_demo(2)}), Error);
  Dataset tiny = make_dataset(sim::TaskSpec::make(sim::TaskId::kReachTarget),
                              {numbered_demo(2)});
  write_dataset(p, tiny);
  CHECK(read_dataset(p) == tiny);
}

TEST_CASE("corrupted, truncated and empty dataset files are rejected") {
  auto spec = sim::TaskSpec::make(sim::TaskId::kReachTarget, 0.1);
  Dataset ds = make_dataset(spec, collect_demos(spec, 6, 0));
  auto p = temp_path("corrupt.jsonl");
  write_dataset(p, ds);

  std::string body;
  {
    std::ifstream in(p, std::ios::binary);
    body.assign(std::istreambuf_iterator<char>(in), {});
  }
  // Flip a digit inside record 3 (line index 4).
  std::size_t line_start = 0;
  for (int i = 0; i < 4; ++i) line_start = body.find('\n', line_start) + 1;
  const std::size_t pos = body.find_first_of("123456789", line_start + 20);
  body[pos] = body[pos] == '1' ? '2' : '1';
  {
    std::ofstream out(p, std::ios::binary);
    out << body;
  }
  auto msg = error_of([&] { read_dataset(p); });
  CHECK(msg.find("record 3") != std::string::npos);

  // Truncation inside record 5 is attributed to record 5.
  write_dataset(p, ds);
  fs::resize_file(p, fs::file_size(p) - 40);
  msg = error_of([&] { read_dataset(p); });
  CHECK(msg.find("record 5") != std::string::npos);

  // Dropping whole records.
  write_dataset(p, ds);
  {
    std::ifstream in(p, std::ios::binary);
    body.assign(std::istreambuf_iterator<char>(in), {});
  }
  std::size_t cut = 0;
  for (int i = 0; i < 3; ++i) cut = body.find('\n', cut) + 1;
  {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << body.substr(0, cut);
  }
  msg = error_of([&] { read_dataset(p); });
  CHECK(msg.find("record 2") != std::string::npos);

  {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
  }
  CHECK_THROWS_AS(read_dataset(p), Error);
  CHECK_THROWS_AS(read_dataset(temp_path("does_not_exist.jsonl")), Error);
}

TEST_CASE("format version mismatch is rejected") {
  auto spec = sim::TaskSpec::make(sim::TaskId::kReachTarget, 0.1);
  Dataset ds = make_dataset(spec, {numbered_demo(3)});
  ds.manifest.format_version = 2;
  auto p = temp_path("version.jsonl");
  write_dataset(p, ds);
  auto msg = error_of([&] { read_dataset(p); });
  CHECK(msg.find("format version 2") != std::string::npos);
}

TEST_CASE("normalize examples") {
  const std::vector<double> lo{-2.0}, hi{2.0};
  CHECK(normalize(std::vector<double>{0.0}, lo, hi)[0] == 0.0);
  CHECK(normalize(std::vector<double>{2.0}, lo, hi)[0] == 1.0);
  CHECK(normalize(std::vector<double>{-2.0}, lo, hi)[0] == -1.0);
  // Constant dimension maps to 0 and back to the constant.
  const std::vector<double> c{3.0};
  CHECK(normalize(std::vector<double>{3.0}, c, c)[0] == 0.0);
  CHECK(denormalize(std::vector<double>{0.0}, c, c)[0] == 3.0);
  CHECK_THROWS_AS(normalize(std::vector<double>{1.0, 2.0}, lo, hi), Error);
}

TEST_CASE("normalize then denormalize is within 1e-12") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-50.0, 50.0);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> lo(4), hi(4), a(4);
    for (int i = 0; i < 4; ++i) {
      lo[i] = u(rng);
      hi[i] = lo[i] + std::abs(u(rng)) + 1e-3;
      std::uniform_real_distribution<double> in(lo[i], hi[i]);
      a[i] = in(rng);
    }
    auto back = denormalize(normalize(a, lo, hi), lo, hi);
    for (int i = 0; i < 4; ++i) CHECK(std::abs(back[i] - a[i]) <= 1e-12);
  }
}

TEST_CASE("norm stats cover interpolation episodes") {
  for (auto task : {sim::TaskId::kReachTarget, sim::TaskId::kPushButton,
                    sim::TaskId::kPickPlace, sim::TaskId::kSlideBlock}) {
    auto spec = sim::TaskSpec::make(task, 0.1);
    auto train = collect_demos(spec, 100, 0);
    const auto stats = compute_norm_stats(train);
    for (std::size_t i = 0; i < stats.act_min.size(); ++i) {
      CHECK(stats.act_max[i] >= stats.act_min[i]);
    }
    std::vector<std::vector<sim::Vec2>> pos;
    for (const auto& d : train) pos.push_back(d.object_positions);
    const auto box = training_box(pos);

    auto pool = collect_demos(spec, 150, 1'000'000);
    std::size_t total = 0, inside = 0;
    for (const auto& d : pool) {
      if (!box.contains(d.object_positions)) continue;
      for (const auto& st : d.steps) {
        for (double v : normalize_action(st.act, stats)) {
          ++total;
          inside += std::abs(v) <= 1.05;
        }
      }
    }
    REQUIRE(total > 0);
    CHECK(static_cast<double>(inside) >= 0.99 * static_cast<double>(total));
  }
}

TEST_CASE("keyframe extraction") {
  auto reach = sim::TaskSpec::make(sim::TaskId::kReachTarget, 0.1);
  auto d = collect_demos(reach, 1, 0)[0];
  CHECK(extract_keyframe(d, KeyframeMode::kGripperChange) == d.steps.back().act);
  CHECK(extract_keyframe(d, KeyframeMode::kLastAction) == d.steps.back().act);

  // Close at step 3, reopen at step 12: the last change wins.
  auto synth = numbered_demo(16, 0b0000'1111'1111'1000);
  CHECK(extract_keyframe(synth, KeyframeMode::kGripperChange) ==
        synth.steps[12].act);

  auto pick = sim::TaskSpec::make(sim::TaskId::kPickPlace, 0.1);
  for (const auto& p : collect_demos(pick, 20, 0)) {
    std::size_t last = p.length() - 1;
    for (std::size_t i = 1; i < p.length(); ++i) {
      if ((p.steps[i].act[3] < 0) != (p.steps[i - 1].act[3] < 0)) last = i;
    }
    CHECK(extract_keyframe(p, KeyframeMode::kGripperChange) ==
          p.steps[last].act);
  }
}

TEST_CASE("chain target examples") {
  auto d = numbered_demo(5);  // a1..a5 are steps 0..4
  auto c = build_chain_target(d, 2, Ordering::kReverse, 8, 1);
  REQUIRE(c.size() == 8);
  CHECK(c.num_valid() == 3);
  CHECK(c.tokens[0] == d.steps[4].act);
  CHECK(c.tokens[1] == d.steps[3].act);
  CHECK(c.tokens[2] == d.steps[2].act);
  CHECK(c.stop[2] == 1);
  CHECK(std::count(c.stop.begin(), c.stop.end(), 1) == 1);
  CHECK(c.keyframe == d.steps[4].act);

  c = build_chain_target(d, 4, Ordering::kReverse, 8, 1);
  CHECK(c.num_valid() == 1);
  CHECK(c.tokens[0] == d.steps[4].act);
  CHECK(c.stop[0] == 1);

  c = build_chain_target(d, 0, Ordering::kChunk, 8, 1);
  CHECK(c.size() == 20);
  CHECK(c.num_valid() == 5);
  CHECK(std::all_of(c.stop.begin(), c.stop.end(), [](auto s) { return !s; }));

  c = build_chain_target(d, 1, Ordering::kHybrid, 8, 1);
  CHECK(c.tokens[0] == d.steps[4].act);
  CHECK(c.tokens[1] == d.steps[1].act);
  CHECK(c.tokens[3] == d.steps[3].act);
  CHECK(c.stop[3] == 1);

  CHECK_THROWS_AS(build_chain_target(d, 5, Ordering::kReverse, 8, 1), Error);
  CHECK_THROWS_AS(build_chain_target(d, 0, Ordering::kReverse, 4, 1), Error);
}

TEST_CASE("MTP offset masks count supervised positions") {
  auto d = numbered_demo(5);
  auto c = build_chain_target(d, 2, Ordering::kReverse, 10, 5);
  // Chain of 3: head h (0-based) supervises 3 - h positions.
  for (std::size_t h = 0; h < 5; ++h) {
    const auto n = std::count(c.head_mask[h].begin(), c.head_mask[h].end(), 1);
    CHECK(n == std::max<long>(0, 3 - static_cast<long>(h)));
  }
  CHECK(c.head_mask[2][0] == 1);
  CHECK(c.head_target(2, 0) == c.tokens[2]);
}

TEST_CASE("chain targets match a brute-force index oracle") {
  std::mt19937_64 rng(2024);
  const Ordering all[] = {Ordering::kReverse, Ordering::kForward,
                          Ordering::kHybrid, Ordering::kChunk,
                          Ordering::kChunkKf};
  for (int k = 0; k < 1000; ++k) {
    const std::size_t T = 2 + rng() % 40;
    const std::size_t L = T + rng() % 5;
    const std::size_t t = rng() % T;
    const std::size_t H = 1 + rng() % 6;
    const Ordering o = all[rng() % 5];
    const auto d = numbered_demo(T, rng());
    const auto c = build_chain_target(d, t, o, L, H);
    const auto times = oracle::chain_times(T, t, o, L);
    CAPTURE(T);
    CAPTURE(t);
    CAPTURE(ordering_name(o));
    CHECK(oracle::chain_target_mismatches(d, t, o, L, H) == 0);
    REQUIRE(c.size() == times.size());
    long last_valid = -1;
    for (std::size_t j = 0; j < times.size(); ++j) {
      const bool valid = times[j] >= 0;
      CHECK(c.mask[j] == valid);
      if (valid) {
        CHECK(c.tokens[j] == d.steps[static_cast<std::size_t>(times[j])].act);
        last_valid = static_cast<long>(j);
      } else {
        CHECK(c.tokens[j] == Action(4, 0.0));
      }
    }
    for (std::size_t j = 0; j < times.size(); ++j) {
      const bool want = !is_chunked(o) && static_cast<long>(j) == last_valid;
      CHECK(c.stop[j] == want);
    }
    REQUIRE(c.heads() == H);
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t j = 0; j < times.size(); ++j) {
        const bool want = times[j] >= 0 && j + h < times.size() &&
                          times[j + h] >= 0;
        CHECK(c.head_mask[h][j] == want);
        if (want) {
          CHECK(c.head_target(h, j) ==
                d.steps[static_cast<std::size_t>(times[j + h])].act);
        }
      }
    }
  }
}

TEST_CASE("chains cover the remaining actions and reverse restores the demo") {
  std::mt19937_64 rng(7);
  for (int k = 0; k < 200; ++k) {
    const std::size_t T = 2 + rng() % 30;
    const auto d = numbered_demo(T);
    for (std::size_t t = 0; t < T; ++t) {
      for (auto o : {Ordering::kReverse, Ordering::kForward, Ordering::kHybrid}) {
        auto c = build_chain_target(d, t, o, T, 1);
        std::vector<Action> got(c.tokens.begin(),
                                c.tokens.begin() + static_cast<long>(c.num_valid()));
        std::vector<Action> want;
        for (std::size_t s = t; s < T; ++s) want.push_back(d.steps[s].act);
        // Prefix mask.
        for (std::size_t j = 1; j < c.size(); ++j) CHECK(c.mask[j] <= c.mask[j - 1]);
        if (o == Ordering::kReverse) {
          std::reverse(got.begin(), got.end());
          std::vector<Action> full;
          for (std::size_t s = 0; s < t; ++s) full.push_back(d.steps[s].act);
          full.insert(full.end(), got.begin(), got.end());
          std::vector<Action> demo_actions;
          for (const auto& st : d.steps) demo_actions.push_back(st.act);
          CHECK(full == demo_actions);
        }
        std::sort(got.begin(), got.end());
        std::sort(want.begin(), want.end());
        CHECK(got == want);
      }
    }
  }
}

TEST_CASE("interpolation / extrapolation split") {
  const std::vector<std::vector<sim::Vec2>> train{{{0.2, 0.2}}, {{0.8, 0.8}}};
  const auto box = training_box(train);
  CHECK(box.contains(std::vector<sim::Vec2>{{0.5, 0.5}}));
  CHECK_FALSE(box.contains(std::vector<sim::Vec2>{{0.9, 0.5}}));

  std::vector<EvalCandidate> pool;
  for (std::uint64_t s = 0; s < 200; ++s) {
    const double x = 0.05 + 0.9 * static_cast<double>(s % 10) / 9.0;
    pool.push_back({s, {{x, 0.5}}});
  }
  auto [in, out] = split_interp_extrap(box, pool, 50);
  CHECK(in.size() == 50);
  CHECK(out.size() == 50);
  for (const auto& c : in) CHECK(box.contains(c.objects));
  for (const auto& c : out) CHECK_FALSE(box.contains(c.objects));
  CHECK(std::is_sorted(in.begin(), in.end(),
                       [](auto& a, auto& b) { return a.seed < b.seed; }));
  auto msg = error_of([&] { split_interp_extrap(box, pool, 150); });
  CHECK(msg.find("required") != std::string::npos);
}

TEST_CASE("spatial variance") {
  const std::vector<sim::Vec2> same(4, {0.3, 0.7});
  CHECK(spatial_variance(same) == 0.0);
  const std::vector<sim::Vec2> two{{0.0, 0.0}, {2.0, 0.0}};
  CHECK(spatial_variance(two) == doctest::Approx(1.0).epsilon(1e-15));
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<sim::Vec2> ps(30), shifted(30);
  for (std::size_t i = 0; i < ps.size(); ++i) {
    ps[i] = {u(rng), u(rng)};
    shifted[i] = {ps[i].x + 0.25, ps[i].y - 0.5};
  }
  CHECK(std::abs(spatial_variance(ps) - spatial_variance(shifted)) <= 1e-12);
  CHECK_THROWS_AS(spatial_variance(std::vector<sim::Vec2>{{0, 0}}), Error);
}
