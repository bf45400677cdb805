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
#include <filesystem>
#include <fstream>
#include <random>

#include "json.hpp"

#include "coa/analysis.hpp"
#include "coa/error.hpp"

using namespace coa;
using namespace coa::analysis;
namespace fs = std::filesystem;

namespace {

const sim::TaskSpec kReach = sim::TaskSpec::make(sim::TaskId::kReachTarget, 0.1);

model::ModelConfig tiny_model() {
  auto c = model::default_config("desk");
  c.d_model = 16;
  c.heads = 2;
  c.d_ff = 32;
  c.enc_layers = 1;
  c.trunk_layers = 2;
  c.mtp_heads = 2;
  c.max_len = 60;
  c.dropout = 0.0;
  return c;
}

// Untrained policy with the dataset's statistics.
train::TrainState untrained_state() {
  auto ds = data::make_dataset(kReach, data::collect_demos(kReach, 20, 0));
  auto tc = train::default_train_config("desk");
  tc.batch_size = 4;
  return train::init_training(ds, tiny_model(), tc);
}

// n x n maps.
std::vector<double> identity_map(std::size_t n) {
  std::vector<double> m(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) m[i * n + i] = 1.0;
  return m;
}

std::vector<double> uniform_causal(std::size_t n) {
  std::vector<double> m(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) m[i * n + j] = 1.0 / static_cast<double>(i + 1);
  }
  return m;
}

// Report whose two episodes put the single object at (c - a, c) and (c + a, c),
// so the realized variance is a^2.
EvalReport fixture_report(const std::string& variant, double spread, double a,
                          double success) {
  EvalReport r;
  r.variant = variant;
  r.spread = spread;
  r.episodes = {{1, {{0.5 - a, 0.5}}, true, 10, {}}, {2, {{0.5 + a, 0.5}}, false, 10, {}}};
  r.n = 2;
  r.success_rate = success;
  return r;
}

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("coa_test_analysis_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("pearson hand examples") {
  const std::vector<double> xs{1, 2, 3, 4};
  CHECK(std::abs(pearson(xs, std::vector<double>{2, 4, 6, 8}) - 1.0) <= 1e-12);
  CHECK(std::abs(pearson(xs, std::vector<double>{-1, -2, -3, -4}) + 1.0) <= 1e-12);
  CHECK(std::abs(pearson(xs, std::vector<double>{1, 3, 2, 4}) - 0.8) <= 1e-12);
}

TEST_CASE("pearson rejects degenerate input") {
  CHECK_THROWS_AS(pearson(std::vector<double>{1, 2, 3}, std::vector<double>{5, 5, 5}), Error);
  CHECK_THROWS_AS(pearson(std::vector<double>{1, 1}, std::vector<double>{1, 2}), Error);
  CHECK_THROWS_AS(pearson(std::vector<double>{1}, std::vector<double>{1}), Error);
  CHECK_THROWS_AS(pearson(std::vector<double>{1, 2}, std::vector<double>{1, 2, 3}), Error);
}

TEST_CASE("pearson symmetry and affine behavior") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> x(12), y(12);
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] = g(rng);
      y[i] = 0.5 * x[i] + g(rng);
    }
    const double r = pearson(x, y);
    CHECK(r >= -1.0);
    CHECK(r <= 1.0);
    CHECK(std::abs(pearson(y, x) - r) <= 1e-12);
    const double a = std::exp(g(rng)), b = g(rng);
    std::vector<double> pos(x), neg(x);
    for (std::size_t i = 0; i < x.size(); ++i) {
      pos[i] = a * x[i] + b;
      neg[i] = -a * x[i] + b;
    }
    CHECK(std::abs(pearson(pos, y) - r) <= 1e-12);
    CHECK(std::abs(pearson(neg, y) + r) <= 1e-12);
  }
}

TEST_CASE("spatial variance is translation invariant") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<sim::Vec2> p(30), q(30);
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = {u(rng), u(rng)};
    q[i] = {p[i].x + 3.25, p[i].y - 1.5};
  }
  CHECK(data::spatial_variance(q) == doctest::Approx(data::spatial_variance(p)).epsilon(1e-12));
}

TEST_CASE("variance analysis on the linear fixture gives r = -1") {
  std::vector<EvalReport> reps;
  for (double a : {0.05, 0.1, 0.2, 0.3}) {
    reps.push_back(fixture_report("reverse", a, a, 1.0 - a * a));
  }
  auto va = variance_success_analysis(reps);
  REQUIRE(va.series.size() == 1);
  REQUIRE(va.series[0].r.has_value());
  CHECK(std::abs(*va.series[0].r + 1.0) <= 1e-12);
  CHECK(va.series[0].points[2].variance == doctest::Approx(0.04));
  CHECK(va.series[0].paper_ref == -0.1679);
  CHECK_FALSE(va.gap.has_value());
}

TEST_CASE("constant success leaves r undefined") {
  std::vector<EvalReport> reps;
  for (double a : {0.05, 0.1, 0.2}) reps.push_back(fixture_report("chunk", a, a, 0.5));
  auto va = variance_success_analysis(reps);
  CHECK_FALSE(va.series[0].r.has_value());
  CHECK(va.series[0].error.find("zero variance") != std::string::npos);
}

TEST_CASE("gap series pairs variants by spread") {
  std::vector<EvalReport> reps;
  for (double a : {0.05, 0.1, 0.2}) {
    reps.push_back(fixture_report("reverse", a, a, 0.9 - a));
    reps.push_back(fixture_report("chunk", a, a, 0.9 - 2 * a));
  }
  auto va = variance_success_analysis(reps);
  REQUIRE(va.gap.has_value());
  REQUIRE(va.gap->points.size() == 3);
  CHECK(va.gap->points[1].success == doctest::Approx(0.1));
  CHECK(va.gap->paper_ref == 0.1311);
  CHECK(*va.gap->r > 0.9);
}

TEST_CASE("variance analysis needs three levels") {
  std::vector<EvalReport> reps{fixture_report("reverse", 0.1, 0.1, 0.5),
                               fixture_report("reverse", 0.2, 0.2, 0.4)};
  CHECK_THROWS_AS(variance_success_analysis(reps), Error);
}

TEST_CASE("attention metric fixtures") {
  for (std::size_t n : {1, 2, 5, 9}) {
    const auto id = identity_map(n);
    CHECK(locality_mass(id, n, 3) == 1.0);
    CHECK(anchor_mass(id, n) == 0.0);
    const auto u = uniform_causal(n);
    double expect = 0.0;
    for (std::size_t i = 1; i < n; ++i) expect += 1.0 / static_cast<double>(i + 1);
    if (n > 1) expect /= static_cast<double>(n - 1);
    CHECK(std::abs(anchor_mass(u, n) - expect) <= 1e-12);
    CHECK(std::abs(locality_mass(u, n, n) - 1.0) <= 1e-12);
  }
  CHECK_THROWS_AS(locality_mass(std::vector<double>(5), 2, 1), Error);
}

TEST_CASE("attention metrics on generated chains") {
  auto s = untrained_state();
  model::Chain chain = model::generate_chain(s.policy, data::normalize_obs(
      sim::observe(kReach, sim::reset(kReach, 3)), s.stats));
  const std::size_t n = chain.tokens.size();
  for (const auto& layer : chain.attention) {
    for (const auto& h : layer) {
      double prev = -1.0;
      for (std::size_t w = 0; w <= n; ++w) {
        const double l = locality_mass(h, n, w);
        CHECK(l >= 0.0);
        CHECK(l <= 1.0);
        CHECK(l >= prev - 1e-15);
        prev = l;
      }
      CHECK(std::abs(prev - 1.0) <= 1e-6);
      for (std::size_t i = 0; i < n; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          row += h[i * n + j];
          if (j > i) CHECK(h[i * n + j] == 0.0);
        }
        CHECK(std::abs(row - 1.0) <= 1e-6);
      }
    }
  }
  auto m = attention_metrics(chain);
  REQUIRE(m.size() == s.model.trunk_layers);
  for (const auto& l : m) {
    CHECK(l.anchor >= 0.0);
    CHECK(l.anchor <= 1.0);
  }
  auto j = nlohmann::json::parse(attention_dump_json(chain));
  CHECK(j["schema_version"] == kSchemaVersion);
  CHECK(j["chain_len"] == n);
  REQUIRE(j["layers"].size() == s.model.trunk_layers);
  CHECK(j["layers"][0]["heads"].size() == s.model.heads);
  CHECK(j["layers"][0]["heads"][0].size() == n);
  CHECK(j["layers"][0]["heads"][0][0].size() == n);
}

TEST_CASE("evaluation of an untrained policy and of the expert") {
  auto s = untrained_state();
  EvalOptions eo;
  eo.n = 10;
  auto rep = evaluate(s, eo);
  CHECK(rep.n == 10);
  CHECK(rep.success_rate == static_cast<double>(rep.successes) / 10.0);
  CHECK(rep.success_rate <= 0.2);
  auto again = evaluate(s, eo);
  for (std::size_t i = 0; i < rep.n; ++i) {
    CHECK(rep.episodes[i].seed == again.episodes[i].seed);
    CHECK(rep.episodes[i].success == again.episodes[i].success);
    CHECK(rep.episodes[i].length == again.episodes[i].length);
  }
  const auto seeds = eval_seeds(kReach, s.info.train_box, Split::kAll, 25);
  auto expert = evaluate_expert(kReach, seeds);
  CHECK(expert.n == 25);
  CHECK(expert.success_rate == 1.0);
}

TEST_CASE("split seeds respect the training box") {
  auto s = untrained_state();
  const auto in = eval_seeds(kReach, s.info.train_box, Split::kInterp, 20);
  const auto out = eval_seeds(kReach, s.info.train_box, Split::kExtrap, 20);
  CHECK(in.size() == 20);
  CHECK(out.size() == 20);
  for (auto seed : in) CHECK(s.info.train_box.contains(sim::reset(kReach, seed).objects));
  for (auto seed : out) CHECK_FALSE(s.info.train_box.contains(sim::reset(kReach, seed).objects));
  data::BoundingBox everything{{{-10, -10}}, {{10, 10}}};
  try {
    eval_seeds(kReach, everything, Split::kExtrap, 5);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("required") != std::string::npos);
  }
  CHECK(parse_split("extrap") == Split::kExtrap);
  CHECK_THROWS_AS(parse_split("test"), Error);
}

TEST_CASE("ablation axes enumerate the table rows") {
  const auto base = model::default_config("desk");
  const std::vector<std::string> mtp{"mtp_heads"};
  auto cells = ablation_cells(base, mtp);
  std::vector<std::size_t> heads;
  for (const auto& c : cells) heads.push_back(c.model.mtp_heads);
  CHECK(heads == std::vector<std::size_t>{1, 2, 4, 5, 8, 10});
  CHECK(cells[3].paper_ref == 0.756);

  const std::vector<std::string> ord{"ordering"};
  cells = ablation_cells(base, ord);
  REQUIRE(cells.size() == 3);
  CHECK(cells[0].model.ordering == data::Ordering::kReverse);
  CHECK(cells[1].model.ordering == data::Ordering::kForward);
  CHECK(cells[2].model.ordering == data::Ordering::kHybrid);

  const std::vector<std::string> bl{"baseline", "ensemble", "loss"};
  cells = ablation_cells(base, bl);
  REQUIRE(cells.size() == 6);
  CHECK(cells[1].model.ordering == data::Ordering::kChunkKf);
  CHECK(cells[1].paper_ref == 0.516);
  CHECK(cells[3].ensemble.has_value());
  CHECK_FALSE(cells[3].ensemble->enabled);
  CHECK(cells[3].model == base);
  CHECK(cells[5].model.loss == model::LossVariant::kActionReconstruction);

  const std::vector<std::string> bad{"optimizer"};
  CHECK_THROWS_AS(ablation_cells(base, bad), Error);
}

TEST_CASE("ablation matrix marks failed cells and keeps going") {
  AblationConfig cfg;
  cfg.demos = 6;
  cfg.seeds = {0};
  cfg.base = tiny_model();
  cfg.base.max_len = 10;  // too short for variable-length chains
  cfg.train.iterations = 2;
  cfg.train.batch_size = 4;
  cfg.eval_episodes = 2;
  cfg.splits = {Split::kAll};
  cfg.axes = {"ordering", "baseline"};
  std::vector<std::string> log;
  auto m = run_ablation_matrix(cfg, [&](const std::string& s) { log.push_back(s); });
  REQUIRE(m.cells.size() == 5);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(m.cells[i].failed);
    CHECK(m.cells[i].error.find("max_len") != std::string::npos);
  }
  for (std::size_t i = 3; i < 5; ++i) {
    CHECK_MESSAGE(!m.cells[i].failed, m.cells[i].error);
    CHECK(m.cells[i].per_seed.size() == 1);
  }
  CHECK_FALSE(log.empty());
  auto rows = result_rows(m);
  CHECK(std::isnan(rows[0].mean_sr));
  CHECK(rows[4].variant == "baseline=chunk_kf");
}

TEST_CASE("results csv round trip and report files") {
  std::vector<ResultRow> rows{
      {"ordering=reverse", "push_button", "extrap", {0, 1, 2}, 0.1 + 0.2, 1.0 / 3.0, 0.756},
      {"ensemble=off", "reach_target", "interp", {4}, 0.6, 0.0,
       std::numeric_limits<double>::quiet_NaN()}};
  const auto dir = temp_dir("report");
  ReportBundle b;
  b.rows = rows;
  b.attention = {{0, 0.5, 0.25}};
  std::vector<EvalReport> reps;
  for (double a : {0.05, 0.1, 0.2}) reps.push_back(fixture_report("reverse", a, a, 1.0 - a));
  b.variance = variance_success_analysis(reps);
  b.episodes = reps;
  emit_report(dir, b);

  auto back = read_results_csv(dir / "results.csv");
  REQUIRE(back.size() == 2);
  CHECK(back[0].mean_sr == rows[0].mean_sr);
  CHECK(back[0].std_sr == rows[0].std_sr);
  CHECK(back[0].seeds == rows[0].seeds);
  CHECK(std::isnan(back[1].paper_ref_value));
  CHECK(back[1].variant == "ensemble=off");

  for (const char* f : {"analysis.json", "episodes.json"}) {
    std::ifstream in(dir / f);
    auto j = nlohmann::json::parse(in);
    CHECK(j["schema_version"] == kSchemaVersion);
  }
  std::ifstream in(dir / "analysis.json");
  auto j = nlohmann::json::parse(in);
  CHECK(j["attention"][0]["locality_mass"] == 0.5);
  CHECK(j["correlation"]["series"][0]["variant"] == "reverse");

  CHECK_THROWS_AS(emit_report(dir, ReportBundle{}), Error);
  fs::remove_all(dir);
}
