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

// Evaluation harness, generalization and attention analyses, and the
// ablation matrix with its report files.

#ifndef COA_ANALYSIS_HPP_
#define COA_ANALYSIS_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "coa/executor.hpp"
#include "coa/trainer.hpp"

namespace coa::analysis {

inline constexpr int kSchemaVersion = 1;
inline constexpr std::uint64_t kEvalSeedBase = 1'000'000;

enum class Split { kAll, kInterp, kExtrap };
std::string_view split_name(Split s);
Split parse_split(std::string_view s);  // kConfig on failure

// Worker count from COA_THREADS, else the hardware count; at least 1.
std::size_t worker_count();

struct EpisodeRecord {
  std::uint64_t seed = 0;
  std::vector<sim::Vec2> object_positions;
  bool success = false;
  std::size_t length = 0;
  std::string error;
};

struct EvalReport {
  sim::TaskId task = sim::TaskId::kReachTarget;
  std::string variant;
  Split split = Split::kAll;
  double spread = 0.1;
  std::size_t n = 0;
  std::size_t successes = 0;
  double success_rate = 0.0;  // successes / n
  std::vector<EpisodeRecord> episodes;
};

// Evaluation seeds. kAll takes seed_base, seed_base+1, ...; the splits scan
// the same stream and sort episodes by whether every object lies inside the
// training box.
std::vector<std::uint64_t> eval_seeds(const sim::TaskSpec& spec,
                                      const data::BoundingBox& box, Split split,
                                      std::size_t n,
                                      std::uint64_t seed_base = kEvalSeedBase);

struct EvalOptions {
  std::size_t n = 25;
  Split split = Split::kAll;
  std::uint64_t seed_base = kEvalSeedBase;
  std::optional<double> spread;  // defaults to the training spread
  std::optional<model::EnsembleConfig> ensemble;
  std::string variant;
};

EvalReport evaluate(const train::TrainState& ckpt, const EvalOptions& opt = {});
// Runs the scripted expert through the same loop.
EvalReport evaluate_expert(const sim::TaskSpec& spec,
                           std::span<const std::uint64_t> seeds);

// kDomain for fewer than two points or zero variance in either series.
double pearson(std::span<const double> xs, std::span<const double> ys);

struct VariancePoint {
  double spread = 0.0;
  double variance = 0.0;  // realized object-position variance
  double success = 0.0;
};

struct VarianceSeries {
  std::string variant;
  std::vector<VariancePoint> points;
  std::optional<double> r;  // empty when undefined
  std::string error;        // why r is undefined
  double paper_ref = std::numeric_limits<double>::quiet_NaN();
};

struct VarianceAnalysis {
  std::vector<VarianceSeries> series;
  std::optional<VarianceSeries> gap;  // primary minus baseline, per level
};

// Mean over object indices of spatial_variance of each object's positions.
double realized_variance(const EvalReport& r);

// One report per spread level and variant; at least three levels each.
// When both the primary and the baseline variant are present, their success
// difference per level is correlated against the primary's variance.
VarianceAnalysis variance_success_analysis(
    std::span<const EvalReport> reports, std::string_view primary = "reverse",
    std::string_view baseline = "chunk");

// Mean over rows of attention mass on columns [i - w, i].
double locality_mass(std::span<const double> map, std::size_t n, std::size_t w);
// Mean over rows 1..n-1 of the column-0 mass; 0 when n < 2.
double anchor_mass(std::span<const double> map, std::size_t n);

struct LayerAttention {
  std::size_t layer = 0;
  double locality = 0.0;  // averaged over heads
  double anchor = 0.0;
};
std::vector<LayerAttention> attention_metrics(const model::Chain& chain,
                                              std::size_t w = 3);

// attention_dump.json: {schema_version, chain_len, ordering,
// layers: [{layer, heads: [[row...]...]}]}.
std::string attention_dump_json(const model::Chain& chain);

// Paper values for display next to desk results; NaN when there is none.
double paper_reference(std::string_view axis, std::string_view setting);

struct AblationCell {
  std::string axis, setting;
  model::ModelConfig model;
  std::optional<model::EnsembleConfig> ensemble;  // evaluation-only override
  double paper_ref = std::numeric_limits<double>::quiet_NaN();
  std::string label() const { return axis + "=" + setting; }
};

// Axes: ordering, loss, ensemble, mtp_heads, baseline. The base config fills
// every field the axis does not vary.
std::vector<AblationCell> ablation_cells(const model::ModelConfig& base,
                                         std::span<const std::string> axes);

struct AblationConfig {
  sim::TaskId task = sim::TaskId::kReachTarget;
  double spread = 0.1;
  std::size_t demos = 100;
  std::uint64_t data_seed = 0;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  model::ModelConfig base = model::default_config("desk");
  train::TrainConfig train = train::default_train_config("desk");
  std::size_t eval_episodes = 25;
  std::vector<Split> splits{Split::kInterp, Split::kExtrap};
  std::vector<std::string> axes{"ordering", "loss", "ensemble", "mtp_heads",
                                "baseline"};
};

struct CellResult {
  AblationCell cell;
  Split split = Split::kAll;
  std::vector<std::uint64_t> seeds;
  std::vector<double> per_seed;  // success rate per training seed
  double mean = 0.0, std = 0.0;  // std is the sample deviation
  bool failed = false;
  std::string error;
  std::vector<EvalReport> reports;
};

struct AblationMatrix {
  sim::TaskId task = sim::TaskId::kReachTarget;
  std::vector<CellResult> cells;
};

// Cells with the same trained configuration share one training run per
// seed. A cell whose training aborts is marked failed; the rest continue.
AblationMatrix run_ablation_matrix(
    const AblationConfig& cfg,
    const std::function<void(const std::string&)>& log = {});

struct ResultRow {
  std::string variant;
  std::string task;
  std::string split;
  std::vector<std::uint64_t> seeds;
  double mean_sr = 0.0, std_sr = 0.0;
  double paper_ref_value = std::numeric_limits<double>::quiet_NaN();
};

std::vector<ResultRow> result_rows(const AblationMatrix& m);
ResultRow result_row(const EvalReport& r, std::span<const std::uint64_t> seeds,
                     double paper_ref = std::numeric_limits<double>::quiet_NaN());

// results.csv: the listed columns plus a trailing schema_version column.
// kDomain on no rows.
void write_results_csv(const std::filesystem::path& path,
                       std::span<const ResultRow> rows);
std::vector<ResultRow> read_results_csv(const std::filesystem::path& path);

struct ReportBundle {
  std::vector<ResultRow> rows;
  std::optional<VarianceAnalysis> variance;
  std::vector<LayerAttention> attention;
  std::vector<EvalReport> episodes;  // per-episode logs
};

// Writes results.csv, analysis.json and episodes.json into dir.
void emit_report(const std::filesystem::path& dir, const ReportBundle& b);

}  // namespace coa::analysis

#endif  // COA_ANALYSIS_HPP_
