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

// coa: command-line front end over the C API.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "coa/coa.h"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitConfig = 2;

struct Common {
  std::string config;
  std::vector<std::string> sets;
  // Shortcut flags, appended after --set so they win.
  std::vector<std::pair<std::string, std::string>> shortcuts;
};

// Registers --name as a shortcut for the dotted config key.
template <typename T>
void shortcut(CLI::App* app, Common& c, const std::string& flag,
              const std::string& key, const std::string& help) {
  app->add_option_function<T>(
      flag,
      [&c, key](const T& v) {
        std::ostringstream os;
        os << v;
        c.shortcuts.emplace_back(key, os.str());
      },
      help + " (" + key + ")");
}

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "TOML run configuration")->check(CLI::ExistingFile);
  app->add_option("--set", c.sets, "Override a config key: key=value (repeatable)");
  shortcut<std::string>(app, c, "--profile", "profile", "desk or paper");
  shortcut<std::uint64_t>(app, c, "--seed", "seed", "Seed for all randomness");
}

int exit_code(coa_status s) {
  return s == COA_ERR_CONFIG ? kExitConfig : kExitError;
}

int report(coa_status s) {
  if (s == COA_OK) return kExitOk;
  std::cerr << "coa: " << coa_status_name(s) << " error: " << coa_last_error() << "\n";
  return exit_code(s);
}

void print_line(const char* line, void*) { std::cerr << line << "\n"; }

struct ConfigHandle {
  coa_config* p = nullptr;
  ~ConfigHandle() { coa_config_free(p); }
};

coa_status load(const Common& c, ConfigHandle& h) {
  std::vector<std::string> all = c.sets;
  for (const auto& [k, v] : c.shortcuts) all.push_back(k + "=" + v);
  std::vector<const char*> ptrs;
  for (const auto& s : all) ptrs.push_back(s.c_str());
  return coa_config_load(c.config.empty() ? nullptr : c.config.c_str(), ptrs.data(),
                         ptrs.size(), &h.p);
}

std::string take(char* s) {
  std::string r = s ? s : "";
  coa_string_free(s);
  return r;
}

// Without --out, outputs go to a subdirectory beside the checkpoint so the
// training run's resolved config is not overwritten.
std::string default_out(const std::string& ckpt, const char* sub) {
  const fs::path p(ckpt);
  const fs::path dir = fs::is_directory(p) ? p : p.has_parent_path() ? p.parent_path() : ".";
  return (dir / sub).string();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Chain-of-Action policy: data, training, evaluation and analysis"};
  app.set_version_flag("--version", std::string(coa_version()));
  app.require_subcommand(1);
  app.footer("Exit codes: 0 success, 1 operational error, 2 configuration or usage error.\n"
             "COA_THREADS caps evaluation workers.");

  Common common;
  std::string out, data, ckpt;
  std::uint64_t gc_seed = 0;

  auto* gen = app.add_subcommand("gen-data", "Collect expert demonstrations");
  add_common(gen, common);
  shortcut<std::string>(gen, common, "--task", "task.name", "Task name");
  shortcut<std::size_t>(gen, common, "--n", "task.demos", "Number of demonstrations");
  shortcut<double>(gen, common, "--spread", "task.spread", "Object placement sigma");
  gen->add_option("--out", out, "Output directory or .jsonl path")->required();

  auto* tr = app.add_subcommand("train", "Train a policy on a dataset");
  add_common(tr, common);
  tr->add_option("--data", data, "Dataset (.jsonl)")->required()->check(CLI::ExistingFile);
  tr->add_option("--out", out, "Output directory")->required();
  shortcut<std::int64_t>(tr, common, "--iterations", "train.iterations", "Training iterations");
  shortcut<std::size_t>(tr, common, "--batch-size", "train.batch_size", "Batch size");
  shortcut<double>(tr, common, "--lr", "train.lr", "Learning rate");
  shortcut<std::size_t>(tr, common, "--mtp-heads", "model.mtp_heads", "MTP heads");
  shortcut<std::string>(tr, common, "--ordering", "model.ordering", "Chain ordering");
  shortcut<std::string>(tr, common, "--loss", "model.loss", "Loss variant");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  add_common(ev, common);
  ev->add_option("--ckpt", ckpt, "Checkpoint file or directory")->required();
  ev->add_option("--out", out, "Output directory (default: eval/ beside the checkpoint)");
  shortcut<std::size_t>(ev, common, "--episodes", "eval.episodes", "Episodes");
  shortcut<std::string>(ev, common, "--split", "eval.split", "all, interp or extrap");

  auto* ab = app.add_subcommand("ablate", "Run the ablation matrix");
  add_common(ab, common);
  ab->add_option("--out", out, "Output directory")->required();
  shortcut<std::string>(ab, common, "--task", "task.name", "Task name");
  shortcut<std::string>(ab, common, "--axes", "ablate.axes", "Comma-separated axes");
  shortcut<std::string>(ab, common, "--seeds", "ablate.seeds", "Comma-separated training seeds");
  shortcut<std::size_t>(ab, common, "--episodes", "eval.episodes", "Episodes per split");

  auto* an = app.add_subcommand("analyze", "Spatial variance and attention analysis");
  add_common(an, common);
  an->add_option("--out", out, "Output directory")->required();
  shortcut<std::string>(an, common, "--task", "task.name", "Task name");
  shortcut<std::string>(an, common, "--spreads", "analysis.spreads", "Comma-separated spreads");
  shortcut<std::size_t>(an, common, "--episodes", "eval.episodes", "Episodes per level");

  auto* at = app.add_subcommand("attn-dump", "Dump decoder attention maps");
  add_common(at, common);
  at->add_option("--ckpt", ckpt, "Checkpoint file or directory")->required();
  at->add_option("--out", out, "Output directory (default: attn/ beside the checkpoint)");
  shortcut<std::string>(at, common, "--split", "eval.split", "all, interp or extrap");

  auto* gc = app.add_subcommand("grad-check", "Finite-difference and causality self-checks");
  gc->add_option("--seed", gc_seed, "Seed for the random inputs");

  if (argc > 1 && argv[1][0] != '-') {
    bool known = false;
    for (const auto* sub : app.get_subcommands({})) known = known || sub->get_name() == argv[1];
    if (!known) {
      std::cerr << "coa: unknown subcommand '" << argv[1] << "'\n\n" << app.help();
      return kExitConfig;
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "coa: " << e.what() << "\n\n" << app.help();
    return kExitConfig;
  }

  if (gc->parsed()) {
    int pass = 0;
    char* text = nullptr;
    const coa_status s = coa_grad_check(gc_seed, &pass, &text);
    if (s != COA_OK) return report(s);
    std::cout << take(text) << (pass ? "all checks passed\n" : "some checks FAILED\n");
    return pass ? kExitOk : kExitError;
  }

  ConfigHandle cfg;
  if (const coa_status s = load(common, cfg); s != COA_OK) return report(s);

  if (gen->parsed()) {
    char* path = nullptr;
    const coa_status s = coa_gen_data(cfg.p, out.c_str(), &path);
    if (s == COA_OK) std::cout << "dataset " << take(path) << "\n";
    return report(s);
  }
  if (tr->parsed()) {
    char* path = nullptr;
    const coa_status s = coa_train(cfg.p, data.c_str(), out.c_str(), print_line, nullptr, &path);
    if (s == COA_OK) std::cout << "checkpoint " << take(path) << "\n";
    return report(s);
  }
  if (ev->parsed()) {
    if (out.empty()) out = default_out(ckpt, "eval");
    double sr = 0.0;
    const coa_status s = coa_eval(cfg.p, ckpt.c_str(), out.c_str(), &sr);
    if (s == COA_OK) {
      std::printf("success_rate %.4f\nresults %s\n", sr,
                  (fs::path(out) / "results.csv").string().c_str());
    }
    return report(s);
  }
  if (ab->parsed()) {
    const coa_status s = coa_ablate(cfg.p, out.c_str(), print_line, nullptr);
    if (s == COA_OK) std::cout << "results " << (fs::path(out) / "results.csv").string() << "\n";
    return report(s);
  }
  if (an->parsed()) {
    const coa_status s = coa_analyze(cfg.p, out.c_str(), print_line, nullptr);
    if (s == COA_OK) std::cout << "analysis " << (fs::path(out) / "analysis.json").string() << "\n";
    return report(s);
  }
  if (at->parsed()) {
    if (out.empty()) out = default_out(ckpt, "attn");
    const coa_status s = coa_attn_dump(cfg.p, ckpt.c_str(), out.c_str());
    if (s == COA_OK) {
      std::cout << "attention " << (fs::path(out) / "attention_dump.json").string() << "\n";
    }
    return report(s);
  }
  return kExitConfig;
}
