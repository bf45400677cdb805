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

#include "coa/trainer.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "coa/config_json.hpp"
#include "coa/digest.hpp"
#include "coa/error.hpp"

namespace coa::train {

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are written in host order");

using nlohmann::json;

namespace {

constexpr int kCheckpointVersion = 1;

std::string rng_string(const Rng& rng) {
  std::ostringstream ss;
  ss << rng;
  return ss.str();
}

Rng rng_from_string(const std::string& s) {
  Rng rng;
  std::istringstream ss(s);
  ss >> rng;
  if (!ss) fail(ErrorKind::kFormat, "checkpoint: bad rng state");
  return rng;
}

std::string fmt(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

}  // namespace

void TrainConfig::validate() const {
  if (iterations < 1) fail(ErrorKind::kConfig, "train: iterations must be >= 1");
  if (batch_size < 1) fail(ErrorKind::kConfig, "train: batch_size must be >= 1");
  if (!(lr > 0.0)) fail(ErrorKind::kConfig, "train: lr must be > 0");
  if (weight_decay < 0.0) {
    fail(ErrorKind::kConfig, "train: weight_decay must be >= 0");
  }
  if (eval_every < 0 || checkpoint_every < 0) {
    fail(ErrorKind::kConfig, "train: schedules must be >= 0");
  }
}

TrainConfig default_train_config(std::string_view profile) {
  TrainConfig c;
  if (profile == "desk") return c;
  if (profile == "paper") {
    c.profile = "paper";
    c.iterations = 20000;
    c.batch_size = 128;
    c.lr = 1e-4;
    return c;
  }
  fail(ErrorKind::kConfig, "unknown profile '" + std::string(profile) +
                               "' (expected paper or desk)");
}

model::ModelConfig fit_model_config(model::ModelConfig cfg,
                                    const data::Dataset& ds) {
  if (ds.demos.empty()) fail(ErrorKind::kDomain, "train: empty dataset");
  cfg.action_dim = ds.manifest.action_dim;
  const std::size_t obj = ds.demos.front().object_positions.size();
  cfg.num_objects = obj;
  if (cfg.obs_dim() != ds.manifest.obs_dim) {
    fail(ErrorKind::kConfig, "train: observation size " +
                                 std::to_string(ds.manifest.obs_dim) +
                                 " does not match obs_mode " +
                                 std::string(model::obs_mode_name(cfg.obs_mode)));
  }
  std::size_t longest = 0;
  for (const auto& d : ds.demos) longest = std::max(longest, d.length());
  if (!data::is_chunked(cfg.ordering) && longest > cfg.max_len) {
    fail(ErrorKind::kConfig, "train: max_len " + std::to_string(cfg.max_len) +
                                 " is shorter than the longest episode (" +
                                 std::to_string(longest) + " steps)");
  }
  cfg.validate();
  return cfg;
}

TrainState init_training(const data::Dataset& ds, model::ModelConfig cfg,
                         TrainConfig tc) {
  tc.validate();
  cfg = fit_model_config(std::move(cfg), ds);
  std::size_t samples = 0, longest = 0;
  std::vector<std::vector<sim::Vec2>> pos;
  for (const auto& d : ds.demos) {
    samples += d.length();
    longest = std::max(longest, d.length());
    pos.push_back(d.object_positions);
  }
  if (tc.batch_size > samples) {
    fail(ErrorKind::kConfig, "train: batch_size " + std::to_string(tc.batch_size) +
                                 " exceeds the " + std::to_string(samples) +
                                 " available samples");
  }
  TrainState s{cfg,
               tc,
               ds.manifest.norm_stats,
               TaskInfo{ds.manifest.task, ds.manifest.spread,
                        data::training_box(pos), longest},
               model::Policy(cfg, tc.seed),
               ad::AdamWState{},
               0,
               Rng(hash_combine(tc.seed, 0x5a3d))};
  s.opt.config.lr = tc.lr;
  s.opt.config.weight_decay = tc.weight_decay;
  return s;
}

Batch sample_batch(std::span<const data::Demonstration> demos, Rng& rng,
                   std::size_t batch_size, const model::ModelConfig& cfg) {
  if (demos.empty()) fail(ErrorKind::kDomain, "sample_batch: no demos");
  Batch b;
  std::uniform_int_distribution<std::size_t> pick(0, demos.size() - 1);
  for (std::size_t i = 0; i < batch_size; ++i) {
    const std::size_t e = pick(rng);
    std::uniform_int_distribution<std::size_t> step(0, demos[e].length() - 1);
    const std::size_t t = step(rng);
    b.episode.push_back(e);
    b.t.push_back(t);
    b.obs.push_back(demos[e].steps[t].obs);
    b.targets.push_back(data::build_chain_target(
        demos[e], t, cfg.ordering, cfg.max_len, cfg.mtp_heads, cfg.keyframe));
  }
  return b;
}

void train_steps(TrainState& s, std::span<const data::Demonstration> normalized,
                 std::int64_t steps, std::vector<TraceRow>& trace,
                 const TrainHooks& hooks) {
  for (std::int64_t k = 0; k < steps; ++k) {
    const std::int64_t iter = s.iteration + 1;
    Batch batch = sample_batch(normalized, s.rng, s.train.batch_size, s.model);
    model::ForwardOptions fo;
    fo.training = true;
    fo.seed = s.train.seed;
    fo.step = static_cast<std::uint64_t>(iter);

    s.policy.params().zero_grad();
    TraceRow row;
    row.iter = iter;
    try {
      auto mem = model::encode_observations(s.policy, batch.obs, fo);
      auto out = model::decode_teacher_forced(s.policy, mem, batch.targets, fo);
      auto L = model::compute_losses(s.policy, out, batch.targets);
      row.total = L.total.item();
      row.act = L.act;
      row.lat = L.lat;
      row.stop = L.stop;
      if (!std::isfinite(row.total)) {
        fail(ErrorKind::kNonFinite, "loss is not finite");
      }
      L.total.backward();
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kNonFinite) throw;
      fail(ErrorKind::kNonFinite,
           "train: iteration " + std::to_string(iter) + ": " + e.what() +
               " (total=" + fmt(row.total) + " act=" + fmt(row.act) +
               " lat=" + fmt(row.lat) + " stop=" + fmt(row.stop) + ")");
    }
    ad::adamw_step(s.policy.params(), s.opt);
    s.iteration = iter;

    if (hooks.evaluate && s.train.eval_every > 0 && iter % s.train.eval_every == 0) {
      row.eval_sr = hooks.evaluate(s);
    }
    trace.push_back(row);
    if (hooks.progress) hooks.progress(row);
    if (hooks.checkpoint && s.train.checkpoint_every > 0 &&
        iter % s.train.checkpoint_every == 0) {
      hooks.checkpoint(s);
    }
  }
}

TrainResult train(const data::Dataset& ds, const model::ModelConfig& cfg,
                  const TrainConfig& tc, const TrainHooks& hooks) {
  TrainResult r{init_training(ds, cfg, tc), {}};
  const auto demos = data::normalize_demos(ds.demos, r.state.stats);
  r.trace.reserve(static_cast<std::size_t>(tc.iterations));
  train_steps(r.state, demos, tc.iterations, r.trace, hooks);
  return r;
}

void write_trace(const std::filesystem::path& path,
                 std::span<const TraceRow> rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out << "iter,total,act,lat,stop,eval_sr\n";
  for (const auto& r : rows) {
    out << r.iter << ',' << fmt(r.total) << ',' << fmt(r.act) << ','
        << fmt(r.lat) << ',' << fmt(r.stop) << ',';
    if (!std::isnan(r.eval_sr)) out << fmt(r.eval_sr);
    out << '\n';
  }
  if (!out) fail(ErrorKind::kIo, "write failed: " + path.string());
}

void save_checkpoint(const std::filesystem::path& path, const TrainState& s) {
  json manifest = json::array();
  std::vector<const std::vector<double>*> blobs;
  std::size_t offset = 0;
  auto add = [&](const std::string& kind, const std::string& name,
                 const ad::Shape& shape, const std::vector<double>& v) {
    manifest.push_back({{"kind", kind}, {"name", name}, {"shape", shape},
                        {"offset", offset}});
    blobs.push_back(&v);
    offset += v.size() * sizeof(double);
  };
  for (const auto& [name, t] : s.policy.params()) {
    add("param", name, t.shape(), t.values());
  }
  for (const auto& [name, m] : s.opt.m) add("adam_m", name, {m.size()}, m);
  for (const auto& [name, v] : s.opt.v) add("adam_v", name, {v.size()}, v);

  const json header = {
      {"format_version", kCheckpointVersion},
      {"tool_version", COA_VERSION},
      {"model_config", io::to_json(s.model)},
      {"train_config", io::to_json(s.train)},
      {"norm_stats", io::to_json(s.stats)},
      {"task_info", io::to_json(s.info)},
      {"iteration", s.iteration},
      {"adam",
       {{"step", s.opt.step},
        {"lr", s.opt.config.lr},
        {"weight_decay", s.opt.config.weight_decay},
        {"beta1", s.opt.config.beta1},
        {"beta2", s.opt.config.beta2},
        {"eps", s.opt.config.eps}}},
      {"rng", rng_string(s.rng)},
      {"tensors", manifest}};
  const std::string h = header.dump();
  std::string bytes;
  const std::uint64_t len = h.size();
  bytes.append(reinterpret_cast<const char*>(&len), sizeof(len));
  bytes += h;
  for (const auto* b : blobs) {
    bytes.append(reinterpret_cast<const char*>(b->data()),
                 b->size() * sizeof(double));
  }
  const Sha256 digest = sha256(bytes);
  bytes.append(reinterpret_cast<const char*>(digest.data()), digest.size());

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::kIo, "write failed: " + path.string());
}

namespace {

TrainState load_impl(const std::filesystem::path& path,
                     const model::ModelConfig* expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  constexpr std::size_t kDigest = 32;
  if (bytes.size() < sizeof(std::uint64_t) + kDigest) {
    fail(ErrorKind::kFormat, "checkpoint: truncated file");
  }
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data(), sizeof(len));
  if (len > bytes.size() - sizeof(len) - kDigest) {
    fail(ErrorKind::kFormat, "checkpoint: truncated file");
  }
  const std::string_view body(bytes.data(), bytes.size() - kDigest);
  const Sha256 digest = sha256(body);
  if (std::memcmp(digest.data(), bytes.data() + body.size(), kDigest) != 0) {
    fail(ErrorKind::kChecksum, "checkpoint: checksum mismatch (truncated or corrupted)");
  }
  json h;
  try {
    h = json::parse(body.substr(sizeof(len), len));
  } catch (const json::exception& e) {
    fail(ErrorKind::kFormat, std::string("checkpoint: bad header: ") + e.what());
  }
  const int version = h.at("format_version").get<int>();
  if (version != kCheckpointVersion) {
    fail(ErrorKind::kFormat, "checkpoint: format version " + std::to_string(version) +
                                 ", expected " + std::to_string(kCheckpointVersion));
  }
  const std::size_t blob0 = sizeof(len) + len;
  const std::size_t blob_bytes = body.size() - blob0;

  std::map<std::string, std::pair<ad::Shape, std::vector<double>>> params;
  std::map<std::string, std::vector<double>> adam_m, adam_v;
  for (const auto& e : h.at("tensors")) {
    const auto shape = e.at("shape").get<ad::Shape>();
    const auto offset = e.at("offset").get<std::size_t>();
    const std::size_t n = ad::shape_numel(shape);
    if (offset > blob_bytes || n * sizeof(double) > blob_bytes - offset) {
      fail(ErrorKind::kFormat, "checkpoint: tensor '" +
                                   e.at("name").get<std::string>() +
                                   "' runs past the end of the file");
    }
    std::vector<double> v(n);
    std::memcpy(v.data(), body.data() + blob0 + offset, n * sizeof(double));
    const auto kind = e.at("kind").get<std::string>();
    const auto name = e.at("name").get<std::string>();
    if (kind == "param") {
      params[name] = {shape, std::move(v)};
    } else if (kind == "adam_m") {
      adam_m[name] = std::move(v);
    } else if (kind == "adam_v") {
      adam_v[name] = std::move(v);
    } else {
      fail(ErrorKind::kFormat, "checkpoint: unknown tensor kind '" + kind + "'");
    }
  }

  model::ModelConfig cfg = io::model_config_from_json(h.at("model_config"));
  if (expected) cfg = *expected;
  TrainState s{cfg,
               io::train_config_from_json(h.at("train_config")),
               io::norm_stats_from_json(h.at("norm_stats")),
               io::task_info_from_json(h.at("task_info")),
               model::Policy(cfg, 0),
               ad::AdamWState{},
               h.at("iteration").get<std::int64_t>(),
               rng_from_string(h.at("rng").get<std::string>())};
  s.policy.load_values(params);
  const auto& a = h.at("adam");
  s.opt.step = a.at("step").get<std::int64_t>();
  a.at("lr").get_to(s.opt.config.lr);
  a.at("weight_decay").get_to(s.opt.config.weight_decay);
  a.at("beta1").get_to(s.opt.config.beta1);
  a.at("beta2").get_to(s.opt.config.beta2);
  a.at("eps").get_to(s.opt.config.eps);
  s.opt.m = std::move(adam_m);
  s.opt.v = std::move(adam_v);
  return s;
}

}  // namespace

TrainState load_checkpoint(const std::filesystem::path& path) {
  return load_impl(path, nullptr);
}

TrainState load_checkpoint(const std::filesystem::path& path,
                           const model::ModelConfig& expected) {
  return load_impl(path, &expected);
}

}  // namespace coa::train
