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

#include <filesystem>
#include <fstream>
#include <string>

#include "coa/diagnostics.hpp"
#include "coa/error.hpp"
#include "coa/run_config.hpp"

using namespace coa;
using namespace coa::config;
namespace fs = std::filesystem;

namespace {

ErrorKind kind_of(const std::function<void()>& f, std::string* msg = nullptr) {
  try {
    f();
  } catch (const Error& e) {
    if (msg) *msg = e.what();
    return e.kind();
  }
  FAIL("no error raised");
  return ErrorKind::kIo;
}

}  // namespace

TEST_CASE("empty file resolves to desk defaults") {
  const RunConfig c = parse_config("", "empty.toml");
  CHECK(c.profile == "desk");
  CHECK(c.model == model::default_config("desk"));
  CHECK(c.train.iterations == train::default_train_config("desk").iterations);
  CHECK(c.ablate_seeds == std::vector<std::uint64_t>{0, 1, 2});
  for (const auto& k : known_keys()) CHECK(c.provenance.at(k) == "default");
}

TEST_CASE("profile selects paper defaults") {
  const RunConfig c = parse_config("profile = \"paper\"\n", "p.toml");
  CHECK(c.model == model::default_config("paper"));
  CHECK(c.train.iterations == 20000);
  CHECK(c.train.batch_size == 128);
  // A flag outranks the file for the profile too.
  const RunConfig d = parse_config("profile = \"paper\"\n", "p.toml", {{"profile", "desk"}});
  CHECK(d.model == model::default_config("desk"));
}

TEST_CASE("flag overrides file, file overrides default") {
  const RunConfig c = parse_config("[model]\nmtp_heads = 5\nd_model = 32\n", "f.toml",
                                   {{"model.mtp_heads", "8"}});
  CHECK(c.model.mtp_heads == 8);
  CHECK(c.model.d_model == 32);
  CHECK(c.provenance.at("model.mtp_heads") == "flag");
  CHECK(c.provenance.at("model.d_model") == "file");
  CHECK(c.provenance.at("model.heads") == "default");
}

TEST_CASE("seed drives training and default ablation seeds") {
  const RunConfig c = parse_config("seed = 7\n", "s.toml");
  CHECK(c.train.seed == 7);
  CHECK(c.ablate_seeds == std::vector<std::uint64_t>{7, 8, 9});
  const RunConfig d = parse_config("seed = 7\n[ablate]\nseeds = [1, 4]\n", "s.toml");
  CHECK(d.ablate_seeds == std::vector<std::uint64_t>{1, 4});
}

TEST_CASE("unknown keys are rejected by name") {
  std::string msg;
  CHECK(kind_of([] { parse_config("[model]\nmtp_head = 5\n", "typo.toml"); }, &msg) ==
        ErrorKind::kConfig);
  CHECK(msg.find("model.mtp_head") != std::string::npos);
  CHECK(msg.find("line 2") != std::string::npos);
  CHECK(kind_of([] { parse_config("", "x.toml", {{"model.mtp_head", "5"}}); }, &msg) ==
        ErrorKind::kConfig);
  CHECK(msg.find("model.mtp_head") != std::string::npos);
}

TEST_CASE("type mismatches name the key and location") {
  std::string msg;
  CHECK(kind_of([] { parse_config("[model]\nheads = \"four\"\n", "t.toml"); }, &msg) ==
        ErrorKind::kConfig);
  CHECK(msg.find("model.heads") != std::string::npos);
  CHECK(msg.find("line 2") != std::string::npos);
  CHECK(kind_of([] { parse_config("", "t.toml", {{"train.lr", "fast"}}); }, &msg) ==
        ErrorKind::kConfig);
  CHECK(msg.find("train.lr") != std::string::npos);
}

TEST_CASE("invalid values and malformed files are config errors") {
  CHECK(kind_of([] { parse_config("[model]\nmtp_heads = 0\n", "v.toml"); }) ==
        ErrorKind::kConfig);
  CHECK(kind_of([] { parse_config("[task]\nname = \"juggle\"\n", "v.toml"); }) ==
        ErrorKind::kConfig);
  CHECK(kind_of([] { parse_config("[model\n", "bad.toml"); }) == ErrorKind::kConfig);
  CHECK(kind_of([] { load_config(fs::path("/nonexistent/run.toml")); }) ==
        ErrorKind::kConfig);
}

TEST_CASE("resolved config loads back to the same configuration") {
  const RunConfig c = parse_config(
      "seed = 3\n[task]\nname = \"push_button\"\nspread = 0.06\n"
      "[model]\nordering = \"forward\"\nmtp_heads = 2\n[ensemble]\nm = 0.5\n"
      "[ablate]\naxes = [\"ordering\"]\n",
      "r.toml", {{"train.iterations", "50"}});
  const std::string text = to_toml(c);
  CHECK(text.find("tool_version") != std::string::npos);
  CHECK(text.find("[provenance]") != std::string::npos);
  const RunConfig d = parse_config(text, "resolved_config.toml");
  CHECK(d.model == c.model);
  CHECK(d.seed == 3);
  CHECK(d.task == sim::TaskId::kPushButton);
  CHECK(d.spread == c.spread);
  CHECK(d.train.iterations == 50);
  CHECK(d.ablate_axes == c.ablate_axes);
  CHECK(to_toml(d).substr(0, text.find("[provenance]")) ==
        text.substr(0, text.find("[provenance]")));

  const fs::path dir = fs::temp_directory_path() / "coa_test_config";
  fs::create_directories(dir);
  write_resolved(dir, c);
  const RunConfig e = load_config(dir / "resolved_config.toml");
  CHECK(e.model == c.model);
  fs::remove_all(dir);
}

TEST_CASE("diagnostic suites pass on the current build") {
  for (const auto& row : diag::gradient_suite(0)) {
    INFO(row.name);
    CHECK(row.max_rel_err <= 1e-5);
  }
  const auto c = diag::causality_suite();
  INFO(c.detail);
  CHECK(c.ok);
  CHECK(c.cases == 18);
}
