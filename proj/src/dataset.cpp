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

#include "coa/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "coa/digest.hpp"
#include "coa/error.hpp"

namespace coa::data {
namespace {

using nlohmann::json;

std::string record_tag(std::size_t i) { return "record " + std::to_string(i); }

json vec2_list(const std::vector<sim::Vec2>& ps) {
  json out = json::array();
  for (const auto& p : ps) out.push_back({p.x, p.y});
  return out;
}

std::vector<sim::Vec2> parse_vec2_list(const json& j) {
  std::vector<sim::Vec2> out;
  for (const auto& p : j) {
    if (!p.is_array() || p.size() != 2) {
      fail(ErrorKind::kFormat, "expected an [x, y] pair");
    }
    out.push_back({p[0].get<double>(), p[1].get<double>()});
  }
  return out;
}

json stats_json(const NormStats& s) {
  return {{"act_min", s.act_min}, {"act_max", s.act_max},
          {"obs_min", s.obs_min}, {"obs_max", s.obs_max}};
}

NormStats parse_stats(const json& j) {
  NormStats s;
  j.at("act_min").get_to(s.act_min);
  j.at("act_max").get_to(s.act_max);
  j.at("obs_min").get_to(s.obs_min);
  j.at("obs_max").get_to(s.obs_max);
  return s;
}

std::string manifest_line(const DatasetManifest& m) {
  json j = {{"format_version", m.format_version},
            {"task", std::string(sim::task_name(m.task))},
            {"action_dim", m.action_dim},
            {"obs_dim", m.obs_dim},
            {"spread", m.spread},
            {"norm_stats", stats_json(m.norm_stats)},
            {"count", m.count}};
  return j.dump();
}

std::string episode_line(const Demonstration& d) {
  json steps = json::array();
  for (const auto& s : d.steps) steps.push_back({{"obs", s.obs}, {"act", s.act}});
  json j = {{"seed", d.seed},
            {"object_positions", vec2_list(d.object_positions)},
            {"steps", std::move(steps)},
            {"success", d.success}};
  return j.dump();
}

Demonstration parse_episode(const std::string& line,
                            const DatasetManifest& m) {
  const json j = json::parse(line);
  Demonstration d;
  d.task = m.task;
  d.seed = j.at("seed").get<std::uint64_t>();
  d.object_positions = parse_vec2_list(j.at("object_positions"));
  for (const auto& s : j.at("steps")) {
    Step st;
    s.at("obs").get_to(st.obs);
    s.at("act").get_to(st.act);
    if (st.obs.size() != m.obs_dim || st.act.size() != m.action_dim) {
      fail(ErrorKind::kFormat, "step dimensions disagree with the manifest");
    }
    d.steps.push_back(std::move(st));
  }
  d.success = j.at("success").get<bool>();
  if (d.steps.size() < 2) fail(ErrorKind::kFormat, "episode shorter than 2");
  return d;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& p, std::string_view bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write " + p.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::kIo, "write failed: " + p.string());
}

std::filesystem::path sidecar_path(const std::filesystem::path& p) {
  return p.string() + ".sha256";
}

std::vector<std::string> split_lines(const std::string& s) {
  std::vector<std::string> lines;
  std::size_t pos = 0;
  while (pos < s.size()) {
    const auto nl = s.find('\n', pos);
    if (nl == std::string::npos) {
      lines.push_back(s.substr(pos));
      break;
    }
    lines.push_back(s.substr(pos, nl - pos));
    pos = nl + 1;
  }
  return lines;
}

void minmax_into(std::span<const double> x, std::vector<double>& lo,
                 std::vector<double>& hi) {
  if (lo.empty()) {
    lo.assign(x.begin(), x.end());
    hi.assign(x.begin(), x.end());
    return;
  }
  if (x.size() != lo.size()) {
    fail(ErrorKind::kShape, "norm stats: inconsistent vector length");
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    lo[i] = std::min(lo[i], x[i]);
    hi[i] = std::max(hi[i], x[i]);
  }
}

void check_dims(std::size_t n, std::span<const double> lo,
                std::span<const double> hi) {
  if (lo.size() != n || hi.size() != n) {
    fail(ErrorKind::kShape, "normalize: vector of length " +
                                std::to_string(n) + " vs stats of length " +
                                std::to_string(lo.size()));
  }
}

}  // namespace

std::string_view ordering_name(Ordering o) {
  switch (o) {
    case Ordering::kReverse: return "reverse";
    case Ordering::kForward: return "forward";
    case Ordering::kHybrid: return "hybrid";
    case Ordering::kChunk: return "chunk";
    case Ordering::kChunkKf: return "chunk_kf";
  }
  return "?";
}

Ordering parse_ordering(std::string_view name) {
  for (auto o : {Ordering::kReverse, Ordering::kForward, Ordering::kHybrid,
                 Ordering::kChunk, Ordering::kChunkKf}) {
    if (ordering_name(o) == name) return o;
  }
  fail(ErrorKind::kConfig, "unknown ordering '" + std::string(name) + "'");
}

std::string_view keyframe_mode_name(KeyframeMode m) {
  return m == KeyframeMode::kLastAction ? "last_action" : "gripper_change";
}

KeyframeMode parse_keyframe_mode(std::string_view name) {
  if (name == "last_action") return KeyframeMode::kLastAction;
  if (name == "gripper_change") return KeyframeMode::kGripperChange;
  fail(ErrorKind::kConfig, "unknown keyframe mode '" + std::string(name) + "'");
}

bool is_chunked(Ordering o) {
  return o == Ordering::kChunk || o == Ordering::kChunkKf;
}

std::vector<Demonstration> collect_demos(const sim::TaskSpec& spec,
                                         std::size_t n, std::uint64_t seed0,
                                         std::vector<std::uint64_t>* skipped) {
  if (n == 0) fail(ErrorKind::kDomain, "collect_demos: n must be >= 1");
  std::vector<Demonstration> demos;
  std::size_t attempts = 0, failures = 0;
  auto too_many = [&] { return failures * 10 > attempts; };
  for (std::uint64_t seed = seed0; demos.size() < n; ++seed) {
    ++attempts;
    try {
      auto ep = sim::scripted_expert(spec, seed);
      Demonstration d;
      d.task = spec.task;
      d.seed = seed;
      d.object_positions = std::move(ep.object_positions);
      for (auto& s : ep.steps) {
        d.steps.push_back({std::move(s.observation), std::move(s.action)});
      }
      d.success = ep.success;
      demos.push_back(std::move(d));
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kDomain) throw;
      ++failures;
      if (skipped) skipped->push_back(seed);
    }
    if (attempts >= 20 && too_many()) break;
  }
  if (too_many()) {
    fail(ErrorKind::kDomain,
         "collect_demos: expert failed on " + std::to_string(failures) +
             " of " + std::to_string(attempts) + " seeds for " +
             std::string(sim::task_name(spec.task)));
  }
  return demos;
}

Dataset make_dataset(const sim::TaskSpec& spec,
                     std::vector<Demonstration> demos) {
  if (demos.empty()) fail(ErrorKind::kDomain, "dataset: no demonstrations");
  for (const auto& d : demos) {
    if (d.task != spec.task) {
      fail(ErrorKind::kDomain, "dataset: demo for task " +
                                   std::string(sim::task_name(d.task)) +
                                   " in a " +
                                   std::string(sim::task_name(spec.task)) +
                                   " dataset");
    }
  }
  Dataset ds;
  ds.manifest.task = spec.task;
  ds.manifest.spread = spec.spread;
  ds.manifest.action_dim = demos.front().steps.front().act.size();
  ds.manifest.obs_dim = demos.front().steps.front().obs.size();
  ds.manifest.norm_stats = compute_norm_stats(demos);
  ds.manifest.count = demos.size();
  ds.demos = std::move(demos);
  return ds;
}

void write_dataset(const std::filesystem::path& path, const Dataset& ds) {
  if (ds.manifest.count != ds.demos.size()) {
    fail(ErrorKind::kFormat, "dataset: manifest count disagrees with demos");
  }
  std::string body = manifest_line(ds.manifest) + "\n";
  std::string side;
  for (std::size_t i = 0; i < ds.demos.size(); ++i) {
    const std::string line = episode_line(ds.demos[i]);
    side += record_tag(i) + " " + to_hex(sha256(line)) + "\n";
    body += line + "\n";
  }
  side = to_hex(sha256(body)) + "  " + path.filename().string() + "\n" + side;
  write_file(path, body);
  write_file(sidecar_path(path), side);
}

Dataset read_dataset(const std::filesystem::path& path) {
  const std::string body = read_file(path);
  if (body.empty()) fail(ErrorKind::kFormat, "dataset: empty file");
  const auto side_lines = split_lines(read_file(sidecar_path(path)));
  if (side_lines.empty() || side_lines[0].size() < 64) {
    fail(ErrorKind::kFormat, "dataset: malformed checksum sidecar");
  }
  const std::string file_hash = side_lines[0].substr(0, 64);

  const auto lines = split_lines(body);
  Dataset ds;
  try {
    const json m = json::parse(lines[0]);
    ds.manifest.format_version = m.at("format_version").get<int>();
    if (ds.manifest.format_version != kFormatVersion) {
      fail(ErrorKind::kFormat,
           "dataset: format version " +
               std::to_string(ds.manifest.format_version) + ", expected " +
               std::to_string(kFormatVersion));
    }
    ds.manifest.task = sim::parse_task(m.at("task").get<std::string>());
    ds.manifest.action_dim = m.at("action_dim").get<std::size_t>();
    ds.manifest.obs_dim = m.at("obs_dim").get<std::size_t>();
    ds.manifest.spread = m.at("spread").get<double>();
    ds.manifest.norm_stats = parse_stats(m.at("norm_stats"));
    ds.manifest.count = m.at("count").get<std::size_t>();
  } catch (const json::exception& e) {
    fail(ErrorKind::kFormat, std::string("dataset: bad manifest: ") + e.what());
  }

  for (std::size_t i = 0; i < ds.manifest.count; ++i) {
    if (i + 1 >= lines.size()) {
      fail(ErrorKind::kFormat, record_tag(i) + ": missing (truncated file, " +
                                   std::to_string(ds.manifest.count) +
                                   " records expected)");
    }
    const std::string& line = lines[i + 1];
    if (i + 1 < side_lines.size()) {
      const std::string expect = record_tag(i) + " " + to_hex(sha256(line));
      if (side_lines[i + 1] != expect) {
        fail(ErrorKind::kChecksum, record_tag(i) + ": checksum mismatch");
      }
    }
    try {
      ds.demos.push_back(parse_episode(line, ds.manifest));
    } catch (const json::exception& e) {
      fail(ErrorKind::kFormat, record_tag(i) + ": " + e.what());
    } catch (const Error& e) {
      fail(e.kind(), record_tag(i) + ": " + e.what());
    }
  }
  if (lines.size() > ds.manifest.count + 1) {
    fail(ErrorKind::kFormat, record_tag(ds.manifest.count) +
                                 ": unexpected trailing data");
  }
  if (to_hex(sha256(body)) != file_hash) {
    fail(ErrorKind::kChecksum, "dataset: file checksum mismatch");
  }
  return ds;
}

NormStats compute_norm_stats(std::span<const Demonstration> demos) {
  NormStats s;
  for (const auto& d : demos) {
    for (const auto& st : d.steps) {
      minmax_into(st.act, s.act_min, s.act_max);
      minmax_into(st.obs, s.obs_min, s.obs_max);
    }
  }
  if (s.act_min.empty()) fail(ErrorKind::kDomain, "norm stats: no steps");
  return s;
}

std::vector<double> normalize(std::span<const double> x,
                              std::span<const double> lo,
                              std::span<const double> hi) {
  check_dims(x.size(), lo, hi);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double range = hi[i] - lo[i];
    out[i] = range > 0.0 ? 2.0 * (x[i] - lo[i]) / range - 1.0 : 0.0;
  }
  return out;
}

std::vector<double> denormalize(std::span<const double> x,
                                std::span<const double> lo,
                                std::span<const double> hi) {
  check_dims(x.size(), lo, hi);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double range = hi[i] - lo[i];
    out[i] = range > 0.0 ? lo[i] + 0.5 * (x[i] + 1.0) * range : lo[i];
  }
  return out;
}

Action normalize_action(std::span<const double> a, const NormStats& s) {
  return normalize(a, s.act_min, s.act_max);
}

Action denormalize_action(std::span<const double> a, const NormStats& s) {
  return denormalize(a, s.act_min, s.act_max);
}

std::vector<double> normalize_obs(std::span<const double> o,
                                  const NormStats& s) {
  return normalize(o, s.obs_min, s.obs_max);
}

std::vector<Demonstration> normalize_demos(
    std::span<const Demonstration> demos, const NormStats& s) {
  std::vector<Demonstration> out(demos.begin(), demos.end());
  for (auto& d : out) {
    for (auto& st : d.steps) {
      st.obs = normalize_obs(st.obs, s);
      st.act = normalize_action(st.act, s);
    }
  }
  return out;
}

Action extract_keyframe(const Demonstration& demo, KeyframeMode mode) {
  if (demo.steps.empty()) fail(ErrorKind::kDomain, "keyframe: empty demo");
  if (mode == KeyframeMode::kGripperChange) {
    for (std::size_t i = demo.steps.size() - 1; i > 0; --i) {
      const double g = demo.steps[i].act.back();
      const double prev = demo.steps[i - 1].act.back();
      if ((g >= 0.0) != (prev >= 0.0)) return demo.steps[i].act;
    }
  }
  return demo.steps.back().act;
}

std::size_t ChainTarget::num_valid() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1));
}

const Action& ChainTarget::head_target(std::size_t h, std::size_t j) const {
  return tokens[std::min(j + h, tokens.size() - 1)];
}

ChainTarget build_chain_target(const Demonstration& demo, std::size_t t,
                               Ordering ordering, std::size_t L,
                               std::size_t H, KeyframeMode mode) {
  const std::size_t T = demo.length();
  if (t >= T) {
    fail(ErrorKind::kDomain, "chain target: t=" + std::to_string(t) +
                                 " outside a demo of length " +
                                 std::to_string(T));
  }
  if (H == 0) fail(ErrorKind::kDomain, "chain target: H must be >= 1");
  const auto& a = demo.steps;
  const std::size_t A = a.front().act.size();
  const std::size_t n = T - t;

  ChainTarget c;
  c.ordering = ordering;
  c.keyframe = extract_keyframe(demo, mode);
  std::size_t len = L;
  if (is_chunked(ordering)) {
    len = kChunkLength + (ordering == Ordering::kChunkKf ? 1 : 0);
  } else if (T > L) {
    fail(ErrorKind::kDomain, "chain target: demo length " + std::to_string(T) +
                                 " exceeds L=" + std::to_string(L));
  }
  c.tokens.assign(len, Action(A, 0.0));
  c.mask.assign(len, 0);
  c.stop.assign(len, 0);
  auto put = [&](std::size_t j, std::size_t step) {
    c.tokens[j] = a[step].act;
    c.mask[j] = 1;
  };

  switch (ordering) {
    case Ordering::kReverse:
      for (std::size_t j = 0; j < n; ++j) put(j, T - 1 - j);
      break;
    case Ordering::kForward:
      for (std::size_t j = 0; j < n; ++j) put(j, t + j);
      break;
    case Ordering::kHybrid:
      put(0, T - 1);
      for (std::size_t j = 1; j < n; ++j) put(j, t + j - 1);
      break;
    case Ordering::kChunk:
    case Ordering::kChunkKf:
      for (std::size_t j = 0; j < kChunkLength && t + j < T; ++j) put(j, t + j);
      if (ordering == Ordering::kChunkKf) put(kChunkLength, T - 1);
      break;
  }
  if (!is_chunked(ordering)) c.stop[n - 1] = 1;

  c.head_mask.assign(H, std::vector<std::uint8_t>(len, 0));
  for (std::size_t h = 0; h < H; ++h) {
    for (std::size_t j = 0; j + h < len; ++j) {
      c.head_mask[h][j] = c.mask[j] && c.mask[j + h];
    }
  }
  return c;
}

bool BoundingBox::contains(std::span<const sim::Vec2> objects) const {
  if (objects.size() != lo.size()) {
    fail(ErrorKind::kShape, "bounding box: object count mismatch");
  }
  for (std::size_t i = 0; i < objects.size(); ++i) {
    const auto& p = objects[i];
    if (p.x < lo[i].x || p.x > hi[i].x || p.y < lo[i].y || p.y > hi[i].y) {
      return false;
    }
  }
  return true;
}

BoundingBox training_box(std::span<const std::vector<sim::Vec2>> train) {
  if (train.empty()) fail(ErrorKind::kDomain, "bounding box: no positions");
  BoundingBox b{train.front(), train.front()};
  for (const auto& objs : train) {
    if (objs.size() != b.lo.size()) {
      fail(ErrorKind::kShape, "bounding box: object count mismatch");
    }
    for (std::size_t i = 0; i < objs.size(); ++i) {
      b.lo[i] = {std::min(b.lo[i].x, objs[i].x), std::min(b.lo[i].y, objs[i].y)};
      b.hi[i] = {std::max(b.hi[i].x, objs[i].x), std::max(b.hi[i].y, objs[i].y)};
    }
  }
  return b;
}

std::pair<std::vector<EvalCandidate>, std::vector<EvalCandidate>>
split_interp_extrap(const BoundingBox& box,
                    std::span<const EvalCandidate> pool, std::size_t n_each) {
  std::vector<EvalCandidate> in, out;
  for (const auto& c : pool) {
    auto& dst = box.contains(c.objects) ? in : out;
    if (dst.size() < n_each) dst.push_back(c);
    if (in.size() == n_each && out.size() == n_each) break;
  }
  if (in.size() < n_each || out.size() < n_each) {
    fail(ErrorKind::kDomain,
         "split: " + std::to_string(in.size()) + " interpolation and " +
             std::to_string(out.size()) + " extrapolation candidates, " +
             std::to_string(n_each) + " of each required");
  }
  return {std::move(in), std::move(out)};
}

double spatial_variance(std::span<const sim::Vec2> positions) {
  const std::size_t n = positions.size();
  if (n < 2) fail(ErrorKind::kDomain, "spatial_variance: need >= 2 positions");
  double mx = 0.0, my = 0.0;
  for (const auto& p : positions) {
    mx += p.x;
    my += p.y;
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double v = 0.0;
  for (const auto& p : positions) {
    v += (p.x - mx) * (p.x - mx) + (p.y - my) * (p.y - my);
  }
  return v / static_cast<double>(n);
}

}  // namespace coa::data
