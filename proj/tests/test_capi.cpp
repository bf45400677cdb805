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

// Links only the shared library and its C header.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <string>
#include <thread>
#include <vector>

#include "coa/coa.h"

namespace fs = std::filesystem;

namespace {

std::string take(char* s) {
  std::string r = s ? s : "";
  coa_string_free(s);
  return r;
}

struct Config {
  coa_config* p = nullptr;
  ~Config() { coa_config_free(p); }
};

coa_status load(Config& c, std::vector<const char*> overrides, const char* path = nullptr) {
  return coa_config_load(path, overrides.data(), overrides.size(), &c.p);
}

fs::path scratch(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("coa_test_capi_" + name);
  fs::remove_all(d);
  return d;
}

}  // namespace

TEST_CASE("version and status names") {
  CHECK(std::string(coa_version()) == COA_VERSION);
  CHECK(std::string(coa_status_name(COA_OK)) == "ok");
  CHECK(std::string(coa_status_name(COA_ERR_CHECKSUM)) == "checksum");
}

TEST_CASE("config handle: defaults, overrides, errors") {
  Config c;
  REQUIRE(load(c, {}) == COA_OK);
  char* v = nullptr;
  REQUIRE(coa_config_get(c.p, "model.mtp_heads", &v) == COA_OK);
  CHECK(take(v) == "5");
  REQUIRE(coa_config_get(c.p, "task.name", &v) == COA_OK);
  CHECK(take(v) == "reach_target");
  CHECK(coa_config_get(c.p, "model.nope", &v) == COA_ERR_CONFIG);

  Config d;
  REQUIRE(load(d, {"model.mtp_heads=8", "seed=4"}) == COA_OK);
  REQUIRE(coa_config_get(d.p, "model.mtp_heads", &v) == COA_OK);
  CHECK(take(v) == "8");
  REQUIRE(coa_config_to_toml(d.p, &v) == COA_OK);
  const std::string toml = take(v);
  CHECK(toml.find("[provenance]") != std::string::npos);
  CHECK(toml.find("tool_version") != std::string::npos);

  Config e;
  CHECK(load(e, {"model.mtp_head=8"}) == COA_ERR_CONFIG);
  CHECK(std::string(coa_last_error()).find("model.mtp_head") != std::string::npos);
  CHECK(e.p == nullptr);
  CHECK(load(e, {"justakey"}) == COA_ERR_CONFIG);
  CHECK(load(e, {}, "/nonexistent/run.toml") == COA_ERR_CONFIG);
}

TEST_CASE("null arguments are rejected without crashing") {
  CHECK(coa_config_load(nullptr, nullptr, 0, nullptr) == COA_ERR_INVALID_ARGUMENT);
  CHECK(coa_config_to_toml(nullptr, nullptr) == COA_ERR_INVALID_ARGUMENT);
  CHECK(coa_gen_data(nullptr, "x", nullptr) == COA_ERR_INVALID_ARGUMENT);
  CHECK(coa_policy_rollout(nullptr, 0, nullptr, nullptr) == COA_ERR_INVALID_ARGUMENT);
  CHECK(std::string(coa_last_error()).find("null") != std::string::npos);
  coa_config_free(nullptr);
  coa_policy_free(nullptr);
}

TEST_CASE("last error is per thread") {
  Config c;
  CHECK(load(c, {"model.bogus=1"}) == COA_ERR_CONFIG);
  const std::string mine = coa_last_error();
  std::thread([] {
    CHECK(std::string(coa_last_error()).empty());
    coa_config* p = nullptr;
    CHECK(coa_config_load(nullptr, nullptr, 0, &p) == COA_OK);
    coa_config_free(p);
  }).join();
  CHECK(std::string(coa_last_error()) == mine);
}

TEST_CASE("gen-data, train, eval and rollout through handles") {
  const auto dir = scratch("pipeline");
  Config c;
  REQUIRE(load(c, {"task.demos=4", "train.iterations=5", "train.batch_size=4",
                   "eval.episodes=2", "model.d_model=16", "model.d_ff=32",
                   "model.heads=2", "model.enc_layers=1", "model.trunk_layers=1"}) ==
          COA_OK);
  char* ds = nullptr;
  REQUIRE(coa_gen_data(c.p, (dir / "data").c_str(), &ds) == COA_OK);
  const std::string dataset = take(ds);
  CHECK(dataset == (dir / "data" / "reach.jsonl").string());
  CHECK(fs::exists(dir / "data" / "manifest.json"));
  CHECK(fs::exists(dir / "data" / "reach.jsonl.sha256"));

  std::vector<std::string> lines;
  char* ck = nullptr;
  REQUIRE(coa_train(c.p, dataset.c_str(), (dir / "ckpt").c_str(),
                    [](const char* line, void* user) {
                      static_cast<std::vector<std::string>*>(user)->push_back(line);
                    },
                    &lines, &ck) == COA_OK);
  CHECK(take(ck) == (dir / "ckpt" / "final.ckpt").string());
  CHECK(fs::exists(dir / "ckpt" / "trace.csv"));
  CHECK(fs::exists(dir / "ckpt" / "resolved_config.toml"));

  double sr = -1.0;
  REQUIRE(coa_eval(c.p, (dir / "ckpt" / "final").c_str(), (dir / "eval").c_str(), &sr) ==
          COA_OK);
  CHECK(sr >= 0.0);
  CHECK(sr <= 1.0);
  for (const char* f : {"results.csv", "analysis.json", "episodes.json",
                        "attention_dump.json", "resolved_config.toml"}) {
    INFO(f);
    CHECK(fs::exists(dir / "eval" / f));
  }

  coa_policy* p = nullptr;
  REQUIRE(coa_policy_load((dir / "ckpt").c_str(), &p) == COA_OK);
  int ok = -1;
  std::size_t len = 0;
  CHECK(coa_policy_rollout(p, 1'000'000, &ok, &len) == COA_OK);
  CHECK((ok == 0 || ok == 1));
  CHECK(len > 0);
  coa_policy_free(p);

  CHECK(coa_policy_load((dir / "missing").c_str(), &p) == COA_ERR_IO);
  CHECK(p == nullptr);
  CHECK(coa_train(c.p, (dir / "missing.jsonl").c_str(), (dir / "x").c_str(), nullptr,
                  nullptr, nullptr) == COA_ERR_IO);
  fs::remove_all(dir);
}

TEST_CASE("analyze and ablate write their reports") {
  const auto dir = scratch("reports");
  Config c;
  REQUIRE(load(c, {"task.demos=3", "train.iterations=2", "train.batch_size=2",
                   "eval.episodes=2", "model.d_model=8", "model.d_ff=16", "model.heads=2",
                   "model.enc_layers=1", "model.trunk_layers=1", "model.mtp_heads=2",
                   "analysis.spreads=0.02,0.06,0.1", "ablate.axes=ensemble",
                   "ablate.seeds=0,1", "ablate.splits=interp"}) == COA_OK);
  REQUIRE(coa_analyze(c.p, (dir / "an").c_str(), nullptr, nullptr) == COA_OK);
  for (const char* f : {"results.csv", "analysis.json", "episodes.json", "attention_dump.json"}) {
    INFO(f);
    CHECK(fs::exists(dir / "an" / f));
  }
  std::ifstream in(dir / "an" / "results.csv");
  std::string header, row;
  std::getline(in, header);
  std::size_t rows = 0;
  while (std::getline(in, row)) ++rows;
  CHECK(rows == 6);  // 3 spreads x 2 variants

  REQUIRE(coa_ablate(c.p, (dir / "ab").c_str(), nullptr, nullptr) == COA_OK);
  std::ifstream ab(dir / "ab" / "results.csv");
  std::getline(ab, header);
  std::getline(ab, row);
  CHECK(row.rfind("ensemble=on,reach_target,interp,0;1,", 0) == 0);
  fs::remove_all(dir);
}

TEST_CASE("grad check through the C API") {
  int pass = 0;
  char* text = nullptr;
  REQUIRE(coa_grad_check(0, &pass, &text) == COA_OK);
  CHECK(pass == 1);
  CHECK(take(text).find("causality") != std::string::npos);
}
