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

#include "coa/analysis.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "json.hpp"

#include "coa/config_json.hpp"
#include "coa/error.hpp"

namespace coa::analysis {

using nlohmann::json;

std::string_view split_name(Split s) {
  switch (s) {
    case Split::kAll: return "all";
    case Split::kInterp: return "interp";
    case Split::kExtrap: return "extrap";
  }
  return "?";
}

Split parse_split(std::string_view s) {
  if (s == "all") return Split::kAll;
  if (s == "interp") return Split::kInterp;
  if (s == "extrap") return Split::kExtrap;
  fail(ErrorKind::kConfig, "unknown split '" + std::string(s) +
                               "' (expected all, interp or extrap)");
}

std::size_t worker_count() {
  if (const char* env = std::getenv("COA_THREADS")) {
    std::size_t n = 0;
    const std::string_view v(env);
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), n);
    if (ec != std::errc() || p != v.data() + v.size() || n == 0) {
      fail(ErrorKind::kConfig, "COA_THREADS must be a positive integer, got '" +
                                   std::string(v) + "'");
    }
    return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

namespace {

// Runs f(i) for i in [0, n) on up to worker_count() threads. The first
// exception is rethrown after all workers stop.
template <class F>
void parallel_for(std::size_t n, F&& f) {
  const std::size_t workers = std::min(worker_count(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          f(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu);
          if (!first) first = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first) std::rethrow_exception(first);
}

EpisodeRecord record_of(const exec::EpisodeResult& r) {
  return {r.seed, r.object_positions, r.success, r.length, r.error};
}

void finish(EvalReport& rep) {
  rep.n = rep.episodes.size();
  rep.successes = static_cast<std::size_t>(
      std::count_if(rep.episodes.begin(), rep.episodes.end(),
                    [](const EpisodeRecord& e) { return e.success; }));
  rep.success_rate = rep.n == 0 ? 0.0
                                : static_cast<double>(rep.successes) /
                                      static_cast<double>(rep.n);
}

std::string fmt(double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

}  // namespace

std::vector<std::uint64_t> eval_seeds(const sim::TaskSpec& spec,
                                      const data::BoundingBox& box, Split split,
                                      std::size_t n, std::uint64_t seed_base) {
  std::vector<std::uint64_t> out;
  if (split == Split::kAll) {
    for (std::size_t i = 0; i < n; ++i) out.push_back(seed_base + i);
    return out;
  }
  const bool want_inside = split == Split::kInterp;
  const std::size_t budget = 200 * n + 10000;
  for (std::size_t i = 0; i < budget && out.size() < n; ++i) {
    const auto objs = sim::reset(spec, seed_base + i).objects;
    if (box.contains(objs) == want_inside) out.push_back(seed_base + i);
  }
  if (out.size() < n) {
    fail(ErrorKind::kDomain,
         "eval seeds: found " + std::to_string(out.size()) + " " +
             std::string(split_name(split)) + " episodes in " +
             std::to_string(budget) + " candidates, " + std::to_string(n) +
             " required");
  }
  return out;
}

EvalReport evaluate(const train::TrainState& ckpt, const EvalOptions& opt) {
  const double spread = opt.spread.value_or(ckpt.info.spread);
  const auto spec = sim::TaskSpec::make(ckpt.info.task, spread);
  const auto seeds = eval_seeds(spec, ckpt.info.train_box, opt.split, opt.n,
                                opt.seed_base);
  EvalReport rep;
  rep.task = ckpt.info.task;
  rep.variant = opt.variant;
  rep.split = opt.split;
  rep.spread = spread;
  rep.episodes.resize(seeds.size());
  exec::RolloutOptions ro;
  ro.ensemble = opt.ensemble;
  parallel_for(seeds.size(), [&](std::size_t i) {
    rep.episodes[i] = record_of(
        exec::rollout_episode(ckpt.policy, ckpt.stats, spec, seeds[i], ro));
  });
  finish(rep);
  return rep;
}

EvalReport evaluate_expert(const sim::TaskSpec& spec,
                           std::span<const std::uint64_t> seeds) {
  EvalReport rep;
  rep.task = spec.task;
  rep.variant = "expert";
  rep.spread = spec.spread;
  rep.episodes.resize(seeds.size());
  parallel_for(seeds.size(), [&](std::size_t i) {
    rep.episodes[i] = record_of(exec::replay_expert(spec, seeds[i]));
  });
  finish(rep);
  return rep;
}

double pearson(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) fail(ErrorKind::kShape, "pearson: length mismatch");
  const std::size_t n = xs.size();
  if (n < 2) fail(ErrorKind::kDomain, "pearson: need at least 2 points");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = xs[i] - mx, dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0) fail(ErrorKind::kDomain, "pearson: xs has zero variance");
  if (syy == 0.0) fail(ErrorKind::kDomain, "pearson: ys has zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double realized_variance(const EvalReport& r) {
  if (r.episodes.empty()) fail(ErrorKind::kDomain, "variance: empty report");
  const std::size_t objs = r.episodes.front().object_positions.size();
  if (objs == 0) fail(ErrorKind::kDomain, "variance: no objects");
  double total = 0.0;
  for (std::size_t k = 0; k < objs; ++k) {
    std::vector<sim::Vec2> pos;
    for (const auto& e : r.episodes) pos.push_back(e.object_positions.at(k));
    total += data::spatial_variance(pos);
  }
  return total / static_cast<double>(objs);
}

namespace {

void correlate(VarianceSeries& s) {
  std::vector<double> xs, ys;
  for (const auto& p : s.points) {
    xs.push_back(p.variance);
    ys.push_back(p.success);
  }
  try {
    s.r = pearson(xs, ys);
  } catch (const Error& e) {
    s.r.reset();
    s.error = e.what();
  }
}

}  // namespace

VarianceAnalysis variance_success_analysis(std::span<const EvalReport> reports,
                                           std::string_view primary,
                                           std::string_view baseline) {
  std::map<std::string, std::vector<VariancePoint>> by_variant;
  std::vector<std::string> order;
  for (const auto& r : reports) {
    if (!by_variant.count(r.variant)) order.push_back(r.variant);
    by_variant[r.variant].push_back({r.spread, realized_variance(r), r.success_rate});
  }
  VarianceAnalysis out;
  for (const auto& v : order) {
    auto pts = by_variant[v];
    std::sort(pts.begin(), pts.end(),
              [](const VariancePoint& a, const VariancePoint& b) { return a.spread < b.spread; });
    if (pts.size() < 3) {
      fail(ErrorKind::kDomain, "variance analysis: variant '" + v + "' has " +
                                   std::to_string(pts.size()) +
                                   " spread levels, at least 3 required");
    }
    VarianceSeries s{v, std::move(pts), {}, {}, paper_reference("variance", v)};
    correlate(s);
    out.series.push_back(std::move(s));
  }
  const auto find = [&](std::string_view name) -> const VarianceSeries* {
    for (const auto& s : out.series) {
      if (s.variant == name) return &s;
    }
    return nullptr;
  };
  const auto* a = find(primary);
  const auto* b = find(baseline);
  if (a && b) {
    VarianceSeries gap;
    gap.variant = std::string(primary) + "-" + std::string(baseline);
    gap.paper_ref = paper_reference("variance", "gap");
    for (const auto& p : a->points) {
      for (const auto& q : b->points) {
        if (q.spread == p.spread) {
          gap.points.push_back({p.spread, p.variance, p.success - q.success});
        }
      }
    }
    correlate(gap);
    out.gap = std::move(gap);
  }
  return out;
}

double locality_mass(std::span<const double> map, std::size_t n, std::size_t w) {
  if (map.size() != n * n) fail(ErrorKind::kShape, "locality: map is not n x n");
  if (n == 0) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j0 = i >= w ? i - w : 0;
    for (std::size_t j = j0; j <= i; ++j) total += map[i * n + j];
  }
  return std::clamp(total / static_cast<double>(n), 0.0, 1.0);
}

double anchor_mass(std::span<const double> map, std::size_t n) {
  if (map.size() != n * n) fail(ErrorKind::kShape, "anchor: map is not n x n");
  if (n < 2) return 0.0;
  double total = 0.0;
  for (std::size_t i = 1; i < n; ++i) total += map[i * n];
  return std::clamp(total / static_cast<double>(n - 1), 0.0, 1.0);
}

std::vector<LayerAttention> attention_metrics(const model::Chain& chain,
                                              std::size_t w) {
  const std::size_t n = chain.tokens.size();
  std::vector<LayerAttention> out;
  for (std::size_t l = 0; l < chain.attention.size(); ++l) {
    const auto& heads = chain.attention[l];
    LayerAttention m;
    m.layer = l;
    for (const auto& h : heads) {
      m.locality += locality_mass(h, n, w);
      m.anchor += anchor_mass(h, n);
    }
    if (!heads.empty()) {
      m.locality /= static_cast<double>(heads.size());
      m.anchor /= static_cast<double>(heads.size());
    }
    out.push_back(m);
  }
  return out;
}

std::string attention_dump_json(const model::Chain& chain) {
  const std::size_t n = chain.tokens.size();
  json layers = json::array();
  for (std::size_t l = 0; l < chain.attention.size(); ++l) {
    json heads = json::array();
    for (const auto& h : chain.attention[l]) {
      json rows = json::array();
      for (std::size_t i = 0; i < n; ++i) {
        rows.push_back(std::vector<double>(h.begin() + static_cast<long>(i * n),
                                           h.begin() + static_cast<long>((i + 1) * n)));
      }
      heads.push_back(std::move(rows));
    }
    layers.push_back({{"layer", l}, {"heads", std::move(heads)}});
  }
  return json{{"schema_version", kSchemaVersion},
              {"chain_len", n},
              {"ordering", data::ordering_name(chain.ordering)},
              {"layers", std::move(layers)}}
      .dump();
}

double paper_reference(std::string_view axis, std::string_view setting) {
  struct Ref {
    std::string_view axis, setting;
    double value;
  };
  static constexpr Ref kRefs[] = {
      {"ordering", "reverse", 0.756},
      {"ordering", "forward", 0.668},
      {"ordering", "hybrid", 0.600},
      {"loss", "latent_consistency", 0.756},
      {"loss", "action_reconstruction", 0.212},
      {"ensemble", "on", 0.756},
      {"ensemble", "off", 0.66},
      {"mtp_heads", "1", 0.710},
      {"mtp_heads", "2", 0.704},
      {"mtp_heads", "4", 0.720},
      {"mtp_heads", "5", 0.756},
      {"mtp_heads", "8", 0.672},
      {"mtp_heads", "10", 0.660},
      {"baseline", "chunk", 0.488},
      {"baseline", "chunk_kf", 0.516},
      {"variance", "reverse", -0.1679},
      {"variance", "chunk", -0.2471},
      {"variance", "gap", 0.1311},
  };
  for (const auto& r : kRefs) {
    if (r.axis == axis && r.setting == setting) return r.value;
  }
  return std::numeric_limits<double>::quiet_NaN();
}

std::vector<AblationCell> ablation_cells(const model::ModelConfig& base,
                                         std::span<const std::string> axes) {
  std::vector<AblationCell> cells;
  auto add = [&](const std::string& axis, const std::string& setting,
                 model::ModelConfig m,
                 std::optional<model::EnsembleConfig> ens = std::nullopt) {
    cells.push_back({axis, setting, std::move(m), ens,
                     paper_reference(axis, setting)});
  };
  for (const auto& axis : axes) {
    if (axis == "ordering") {
      for (auto o : {data::Ordering::kReverse, data::Ordering::kForward,
                     data::Ordering::kHybrid}) {
        auto m = base;
        m.ordering = o;
        add(axis, std::string(data::ordering_name(o)), m);
      }
    } else if (axis == "loss") {
      for (auto v : {model::LossVariant::kLatentConsistency,
                     model::LossVariant::kActionReconstruction}) {
        auto m = base;
        m.loss = v;
        add(axis, std::string(model::loss_variant_name(v)), m);
      }
    } else if (axis == "ensemble") {
      for (bool on : {true, false}) {
        auto e = base.ensemble;
        e.enabled = on;
        add(axis, on ? "on" : "off", base, e);
      }
    } else if (axis == "mtp_heads") {
      for (std::size_t h : {1, 2, 4, 5, 8, 10}) {
        auto m = base;
        m.mtp_heads = h;
        add(axis, std::to_string(h), m);
      }
    } else if (axis == "baseline") {
      for (auto o : {data::Ordering::kChunk, data::Ordering::kChunkKf}) {
        auto m = base;
        m.ordering = o;
        add(axis, std::string(data::ordering_name(o)), m);
      }
    } else {
      fail(ErrorKind::kConfig, "unknown ablation axis '" + axis +
                                   "' (expected ordering, loss, ensemble, "
                                   "mtp_heads or baseline)");
    }
  }
  return cells;
}

namespace {

std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  if (v.size() < 2) return {m, 0.0};
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return {m, std::sqrt(s / static_cast<double>(v.size() - 1))};
}

// Ensemble settings only matter at evaluation time.
std::string training_key(model::ModelConfig m) {
  m.ensemble = {};
  return io::to_json(m).dump();
}

}  // namespace

AblationMatrix run_ablation_matrix(
    const AblationConfig& cfg,
    const std::function<void(const std::string&)>& log) {
  const auto say = [&](const std::string& s) {
    if (log) log(s);
  };
  const auto spec = sim::TaskSpec::make(cfg.task, cfg.spread);
  say("collecting " + std::to_string(cfg.demos) + " demonstrations");
  const auto ds = data::make_dataset(spec, data::collect_demos(spec, cfg.demos, cfg.data_seed));
  const auto cells = ablation_cells(cfg.base, cfg.axes);

  AblationMatrix out;
  out.task = cfg.task;
  for (const auto& c : cells) {
    for (auto split : cfg.splits) {
      CellResult r;
      r.cell = c;
      r.split = split;
      r.seeds = cfg.seeds;
      out.cells.push_back(std::move(r));
    }
  }
  // Train each distinct configuration once per seed, evaluate every cell
  // that uses it, then drop it.
  std::vector<std::string> keys;
  for (const auto& c : cells) {
    const auto k = training_key(c.model);
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(k);
  }
  for (const auto& key : keys) {
    for (auto seed : cfg.seeds) {
      std::vector<CellResult*> users;
      for (auto& r : out.cells) {
        if (training_key(r.cell.model) == key) users.push_back(&r);
      }
      auto tc = cfg.train;
      tc.seed = seed;
      std::optional<train::TrainState> state;
      try {
        say("training " + users.front()->cell.label() + " seed " + std::to_string(seed));
        state.emplace(train::train(ds, users.front()->cell.model, tc).state);
      } catch (const Error& e) {
        for (auto* r : users) {
          r->failed = true;
          if (r->error.empty()) r->error = "seed " + std::to_string(seed) + ": " + e.what();
        }
        continue;
      }
      for (auto* r : users) {
        EvalOptions eo;
        eo.n = cfg.eval_episodes;
        eo.split = r->split;
        eo.ensemble = r->cell.ensemble;
        eo.variant = r->cell.label();
        try {
          auto rep = evaluate(*state, eo);
          r->per_seed.push_back(rep.success_rate);
          r->reports.push_back(std::move(rep));
          say("  " + r->cell.label() + " " + std::string(split_name(r->split)) +
              " seed " + std::to_string(seed) + ": " + fmt(r->reports.back().success_rate));
        } catch (const Error& e) {
          r->failed = true;
          if (r->error.empty()) r->error = "seed " + std::to_string(seed) + ": " + e.what();
        }
      }
    }
  }
  for (auto& r : out.cells) std::tie(r.mean, r.std) = mean_std(r.per_seed);
  return out;
}

std::vector<ResultRow> result_rows(const AblationMatrix& m) {
  std::vector<ResultRow> rows;
  for (const auto& c : m.cells) {
    ResultRow r;
    r.variant = c.cell.label();
    r.task = std::string(sim::task_name(m.task));
    r.split = std::string(split_name(c.split));
    r.seeds = c.seeds;
    r.mean_sr = c.failed ? std::numeric_limits<double>::quiet_NaN() : c.mean;
    r.std_sr = c.failed ? std::numeric_limits<double>::quiet_NaN() : c.std;
    r.paper_ref_value = c.cell.paper_ref;
    rows.push_back(std::move(r));
  }
  return rows;
}

ResultRow result_row(const EvalReport& r, std::span<const std::uint64_t> seeds,
                     double paper_ref) {
  ResultRow row;
  row.variant = r.variant;
  row.task = std::string(sim::task_name(r.task));
  row.split = std::string(split_name(r.split));
  row.seeds.assign(seeds.begin(), seeds.end());
  row.mean_sr = r.success_rate;
  row.std_sr = 0.0;
  row.paper_ref_value = paper_ref;
  return row;
}

namespace {

constexpr std::string_view kCsvHeader =
    "variant,task,split,seeds,mean_sr,std_sr,paper_ref_value,schema_version";

std::string opt_num(double v) { return std::isnan(v) ? std::string() : fmt(v); }

double parse_num(const std::string& s, std::size_t line) {
  if (s.empty()) return std::numeric_limits<double>::quiet_NaN();
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    fail(ErrorKind::kFormat, "results.csv line " + std::to_string(line) +
                                 ": bad number '" + s + "'");
  }
  return v;
}

}  // namespace

void write_results_csv(const std::filesystem::path& path,
                       std::span<const ResultRow> rows) {
  if (rows.empty()) fail(ErrorKind::kDomain, "results.csv: no rows to write");
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out << kCsvHeader << '\n';
  for (const auto& r : rows) {
    std::string seeds;
    for (std::size_t i = 0; i < r.seeds.size(); ++i) {
      if (i) seeds += ';';
      seeds += std::to_string(r.seeds[i]);
    }
    out << r.variant << ',' << r.task << ',' << r.split << ',' << seeds << ','
        << opt_num(r.mean_sr) << ',' << opt_num(r.std_sr) << ','
        << opt_num(r.paper_ref_value) << ',' << kSchemaVersion << '\n';
  }
  if (!out) fail(ErrorKind::kIo, "write failed: " + path.string());
}

std::vector<ResultRow> read_results_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) {
    fail(ErrorKind::kFormat, "results.csv: unexpected header");
  }
  std::vector<ResultRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    if (f.size() != 8) {
      fail(ErrorKind::kFormat, "results.csv line " + std::to_string(lineno) +
                                   ": expected 8 fields, got " +
                                   std::to_string(f.size()));
    }
    if (f[7] != std::to_string(kSchemaVersion)) {
      fail(ErrorKind::kFormat, "results.csv line " + std::to_string(lineno) +
                                   ": schema version " + f[7] + ", expected " +
                                   std::to_string(kSchemaVersion));
    }
    ResultRow r;
    r.variant = f[0];
    r.task = f[1];
    r.split = f[2];
    std::stringstream seeds(f[3]);
    while (std::getline(seeds, cell, ';')) {
      r.seeds.push_back(static_cast<std::uint64_t>(parse_num(cell, lineno)));
    }
    r.mean_sr = parse_num(f[4], lineno);
    r.std_sr = parse_num(f[5], lineno);
    r.paper_ref_value = parse_num(f[6], lineno);
    rows.push_back(std::move(r));
  }
  return rows;
}

namespace {

json num_or_null(double v) { return std::isnan(v) ? json(nullptr) : json(v); }

json series_json(const VarianceSeries& s) {
  json pts = json::array();
  for (const auto& p : s.points) {
    pts.push_back({{"spread", p.spread}, {"variance", p.variance}, {"success", p.success}});
  }
  json j = {{"variant", s.variant},
            {"points", pts},
            {"r", s.r ? json(*s.r) : json(nullptr)},
            {"paper_ref_value", num_or_null(s.paper_ref)}};
  if (!s.error.empty()) j["error"] = s.error;
  return j;
}

json report_json(const EvalReport& r) {
  json eps = json::array();
  for (const auto& e : r.episodes) {
    json objs = json::array();
    for (const auto& p : e.object_positions) objs.push_back({p.x, p.y});
    json j = {{"seed", e.seed}, {"object_positions", objs},
              {"success", e.success}, {"length", e.length}};
    if (!e.error.empty()) j["error"] = e.error;
    eps.push_back(std::move(j));
  }
  return {{"task", sim::task_name(r.task)}, {"variant", r.variant},
          {"split", split_name(r.split)},   {"spread", r.spread},
          {"n", r.n},                       {"successes", r.successes},
          {"success_rate", r.success_rate}, {"episodes", eps}};
}

void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) fail(ErrorKind::kIo, "write failed: " + path.string());
}

}  // namespace

void emit_report(const std::filesystem::path& dir, const ReportBundle& b) {
  if (b.rows.empty()) fail(ErrorKind::kDomain, "report: no results to emit");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorKind::kIo, "cannot create " + dir.string() + ": " + ec.message());
  write_results_csv(dir / "results.csv", b.rows);

  json analysis = {{"schema_version", kSchemaVersion}};
  if (b.variance) {
    json series = json::array();
    for (const auto& s : b.variance->series) series.push_back(series_json(s));
    analysis["correlation"] = {{"series", series},
                               {"gap", b.variance->gap ? series_json(*b.variance->gap)
                                                       : json(nullptr)}};
  }
  json attn = json::array();
  for (const auto& m : b.attention) {
    attn.push_back({{"layer", m.layer}, {"locality_mass", m.locality},
                    {"anchor_mass", m.anchor}});
  }
  analysis["attention"] = attn;
  write_json(dir / "analysis.json", analysis);

  json eps = json::array();
  for (const auto& r : b.episodes) eps.push_back(report_json(r));
  write_json(dir / "episodes.json", {{"schema_version", kSchemaVersion}, {"reports", eps}});
}

}  // namespace coa::analysis
