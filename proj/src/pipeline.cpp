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

#include "coa/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>

#include "json.hpp"

#include "coa/diagnostics.hpp"
#include "coa/error.hpp"

namespace coa::pipeline {

namespace {

void ensure_dir(const fs::path& d) {
  std::error_code ec;
  fs::create_directories(d, ec);
  if (ec || !fs::is_directory(d)) {
    fail(ErrorKind::kIo, "cannot create directory '" + d.string() + "'");
  }
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream f(p, std::ios::binary);
  f << s;
  if (!f) fail(ErrorKind::kIo, "cannot write '" + p.string() + "'");
}

void note(const Log& log, const std::string& s) {
  if (log) log(s);
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// Demonstrations for the configured task at a given spread.
data::Dataset collect(const config::RunConfig& c, double spread) {
  const auto spec = sim::TaskSpec::make(c.task, spread);
  return data::make_dataset(spec, data::collect_demos(spec, c.demos, c.seed));
}

analysis::EvalOptions eval_options(const config::RunConfig& c) {
  analysis::EvalOptions o;
  o.n = c.eval_episodes;
  o.split = c.eval_split;
  o.seed_base = c.eval_seed_base;
  return o;
}

std::string variant_of(const model::ModelConfig& m) {
  return std::string(data::ordering_name(m.ordering));
}

}  // namespace

std::string dataset_stem(sim::TaskId task) {
  const std::string name(sim::task_name(task));
  return name.substr(0, name.find('_'));
}

GenDataResult gen_data(const config::RunConfig& c, const fs::path& out) {
  GenDataResult r;
  fs::path dir = out;
  if (out.extension() == ".jsonl") {
    dir = out.has_parent_path() ? out.parent_path() : fs::path(".");
    r.dataset = out;
  } else {
    r.dataset = out / (dataset_stem(c.task) + ".jsonl");
  }
  ensure_dir(dir);
  const auto spec = c.task_spec();
  std::vector<std::uint64_t> skipped;
  auto ds = data::make_dataset(spec, data::collect_demos(spec, c.demos, c.seed, &skipped));
  data::write_dataset(r.dataset, ds);
  // The manifest is the first record of the dataset file.
  std::ifstream in(r.dataset);
  std::string first;
  std::getline(in, first);
  write_text(dir / "manifest.json", nlohmann::json::parse(first).dump(2) + "\n");
  config::write_resolved(dir, c);
  r.demos = ds.demos.size();
  r.skipped_seeds = skipped.size();
  return r;
}

TrainRunResult train_run(const config::RunConfig& c, const fs::path& data,
                         const fs::path& out, const Log& log) {
  const auto ds = data::read_dataset(data);
  ensure_dir(out);
  config::write_resolved(out, c);

  train::TrainHooks hooks;
  hooks.evaluate = [&](const train::TrainState& s) {
    analysis::EvalOptions o;
    o.n = c.train.eval_episodes;
    o.seed_base = c.eval_seed_base;
    return analysis::evaluate(s, o).success_rate;
  };
  hooks.checkpoint = [&](const train::TrainState& s) {
    const auto p = out / ("ckpt_" + std::to_string(s.iteration) + ".ckpt");
    train::save_checkpoint(p, s);
    note(log, "checkpoint " + p.string());
  };
  const auto t0 = std::chrono::steady_clock::now();
  hooks.progress = [&](const train::TraceRow& row) {
    if (row.iter % 100 != 0 && !std::isfinite(row.eval_sr)) return;
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::string line = "iter " + std::to_string(row.iter) + " loss " + fixed(row.total, 4);
    if (std::isfinite(row.eval_sr)) line += " eval_sr " + fixed(row.eval_sr, 3);
    note(log, line + " (" + fixed(secs, 1) + " s)");
  };

  auto res = train::train(ds, c.model, c.train, hooks);
  train::write_trace(out / "trace.csv", res.trace);
  TrainRunResult r;
  r.checkpoint = out / "final.ckpt";
  train::save_checkpoint(r.checkpoint, res.state);
  r.iterations = res.trace.size();
  r.final_loss = res.trace.empty() ? 0.0 : res.trace.back().total;
  return r;
}

fs::path resolve_checkpoint(const fs::path& p) {
  if (fs::is_regular_file(p)) return p;
  fs::path with_ext = p;
  with_ext += ".ckpt";
  if (fs::is_regular_file(with_ext)) return with_ext;
  if (fs::is_directory(p) && fs::is_regular_file(p / "final.ckpt")) return p / "final.ckpt";
  fail(ErrorKind::kIo, "checkpoint '" + p.string() + "' not found (tried '" +
                           with_ext.string() + "' and '" + (p / "final.ckpt").string() + "')");
}

analysis::EvalReport eval_run(const config::RunConfig& c, const fs::path& ckpt,
                              const fs::path& out) {
  const auto state = train::load_checkpoint(resolve_checkpoint(ckpt));
  ensure_dir(out);
  config::write_resolved(out, c);
  auto opt = eval_options(c);
  opt.variant = variant_of(state.model);
  const auto rep = analysis::evaluate(state, opt);

  analysis::ReportBundle b;
  const std::uint64_t seeds[] = {state.train.seed};
  b.rows.push_back(analysis::result_row(
      rep, seeds, analysis::paper_reference("ordering", opt.variant)));
  b.episodes.push_back(rep);
  if (!rep.episodes.empty()) {
    exec::RolloutOptions ro;
    ro.record_attention = true;
    const auto ep = exec::rollout_episode(state.policy, state.stats,
                                          sim::TaskSpec::make(state.info.task, rep.spread),
                                          rep.episodes.front().seed, ro);
    if (ep.first_chain) {
      b.attention = analysis::attention_metrics(*ep.first_chain, c.locality_window);
      write_text(out / "attention_dump.json", analysis::attention_dump_json(*ep.first_chain));
    }
  }
  analysis::emit_report(out, b);
  return rep;
}

analysis::AblationMatrix ablate_run(const config::RunConfig& c,
                                    const fs::path& out, const Log& log) {
  ensure_dir(out);
  config::write_resolved(out, c);
  analysis::AblationConfig a;
  a.task = c.task;
  a.spread = c.spread;
  a.demos = c.demos;
  a.data_seed = c.seed;
  a.seeds = c.ablate_seeds;
  a.base = c.model;
  a.train = c.train;
  a.eval_episodes = c.eval_episodes;
  a.splits = c.ablate_splits;
  a.axes = c.ablate_axes;
  auto m = analysis::run_ablation_matrix(a, log);

  analysis::ReportBundle b;
  b.rows = analysis::result_rows(m);
  for (const auto& cell : m.cells) {
    for (auto r : cell.reports) {
      r.variant = cell.cell.label();
      b.episodes.push_back(std::move(r));
    }
  }
  analysis::emit_report(out, b);
  return m;
}

analysis::ReportBundle analyze_run(const config::RunConfig& c,
                                   const fs::path& out, const Log& log) {
  ensure_dir(out);
  config::write_resolved(out, c);
  std::vector<analysis::EvalReport> reports;
  analysis::ReportBundle b;
  std::optional<model::Chain> primary_chain;
  for (double spread : c.analysis_spreads) {
    const auto ds = collect(c, spread);
    for (const auto& v : c.analysis_variants) {
      auto m = c.model;
      m.ordering = data::parse_ordering(v);
      note(log, "train " + v + " at spread " + fixed(spread, 3));
      const auto res = train::train(ds, m, c.train);
      auto opt = eval_options(c);
      opt.split = analysis::Split::kAll;
      opt.variant = v;
      auto rep = analysis::evaluate(res.state, opt);
      note(log, "  success " + fixed(rep.success_rate, 3));
      const std::uint64_t seeds[] = {c.seed};
      auto row = analysis::result_row(rep, seeds, analysis::paper_reference("ordering", v));
      row.variant = v + "@spread=" + fixed(spread, 3);
      b.rows.push_back(std::move(row));
      if (v == c.analysis_variants.front() && !rep.episodes.empty()) {
        exec::RolloutOptions ro;
        ro.record_attention = true;
        auto ep = exec::rollout_episode(res.state.policy, res.state.stats,
                                        sim::TaskSpec::make(c.task, spread),
                                        rep.episodes.front().seed, ro);
        if (ep.first_chain) primary_chain = std::move(ep.first_chain);
      }
      reports.push_back(std::move(rep));
    }
  }
  b.variance = analysis::variance_success_analysis(
      reports, c.analysis_variants.front(),
      c.analysis_variants.size() > 1 ? c.analysis_variants[1] : "chunk");
  if (primary_chain) {
    b.attention = analysis::attention_metrics(*primary_chain, c.locality_window);
    write_text(out / "attention_dump.json", analysis::attention_dump_json(*primary_chain));
  }
  b.episodes = std::move(reports);
  analysis::emit_report(out, b);
  return b;
}

fs::path attn_dump(const config::RunConfig& c, const fs::path& ckpt,
                   const fs::path& out) {
  const auto state = train::load_checkpoint(resolve_checkpoint(ckpt));
  ensure_dir(out);
  config::write_resolved(out, c);
  const auto spec = sim::TaskSpec::make(state.info.task, state.info.spread);
  const auto seeds = analysis::eval_seeds(spec, state.info.train_box, c.eval_split, 1,
                                          c.eval_seed_base);
  exec::RolloutOptions ro;
  ro.record_attention = true;
  const auto ep = exec::rollout_episode(state.policy, state.stats, spec, seeds.front(), ro);
  if (!ep.first_chain) {
    fail(ErrorKind::kDomain, "attn-dump: no chain generated (" + ep.error + ")");
  }
  const auto p = out / "attention_dump.json";
  write_text(p, analysis::attention_dump_json(*ep.first_chain));
  return p;
}

bool grad_check(std::uint64_t seed, std::ostream& os) {
  constexpr double kTol = 1e-5;
  bool ok = true;
  for (const auto& row : diag::gradient_suite(seed)) {
    const bool pass = row.max_rel_err <= kTol;
    ok = ok && pass;
    os << (pass ? "ok   " : "FAIL ") << std::left << std::setw(48) << row.name
       << std::scientific << std::setprecision(3) << row.max_rel_err << "\n";
  }
  const auto c = diag::causality_suite();
  os << (c.ok ? "ok   " : "FAIL ") << "causality (" << c.cases << " cases)"
     << (c.ok ? "" : ": " + c.detail) << "\n";
  return ok && c.ok;
}

}  // namespace coa::pipeline
