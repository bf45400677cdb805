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

#include "coa/model.hpp"

#include <algorithm>
#include <cmath>

#include "coa/error.hpp"
#include "coa/rng.hpp"

namespace coa::model {

using ad::Shape;
using ad::Tensor;
using data::Ordering;

namespace {

constexpr std::size_t kPatch = 8;
constexpr std::size_t kPatchesPerSide = sim::kRasterSize / kPatch;
constexpr std::size_t kProprio = 4;

// Dropout site ids; combined with (seed, step) into the mask key.
constexpr std::uint64_t kEncInputSite = 1;
constexpr std::uint64_t kDecInputSite = 2;
std::uint64_t enc_site(std::size_t layer, int k) { return 10 + 2 * layer + k; }
std::uint64_t dec_site(std::size_t layer, int k) { return 100 + 3 * layer + k; }

ad::DropoutKey key_for(const ForwardOptions& o, std::uint64_t site) {
  return {o.seed, o.step, site};
}

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

struct LnW {
  Tensor g, b;
};
struct AttnW {
  Tensor wq, wk, wv, wo, bo;
};
struct FfW {
  Tensor w1, b1, w2, b2;
};
struct EncLayerW {
  LnW ln1, ln2;
  AttnW attn;
  FfW ff;
};
struct DecLayerW {
  LnW ln1, ln2, ln3;
  AttnW self, cross;
  FfW ff;
};
struct HeadW {
  LnW ln;
  FfW ff;
};
struct LinearW {
  Tensor w, b;
};

struct Policy::Weights {
  // State-mode group embedders or raster patch / proprio embedders.
  LinearW ee, grip, obj, task, patch, proprio;
  Tensor enc_pos;
  std::vector<EncLayerW> enc;
  LnW enc_ln;
  Tensor bos, dec_pos;
  LinearW act_enc, act_dec;
  std::vector<DecLayerW> dec;
  LnW dec_ln;
  std::vector<HeadW> heads;
  LinearW stop;
};

std::string_view loss_variant_name(LossVariant v) {
  return v == LossVariant::kLatentConsistency ? "latent_consistency"
                                              : "action_reconstruction";
}

LossVariant parse_loss_variant(std::string_view s) {
  if (s == "latent_consistency") return LossVariant::kLatentConsistency;
  if (s == "action_reconstruction") return LossVariant::kActionReconstruction;
  fail(ErrorKind::kConfig, "unknown loss variant '" + std::string(s) + "'");
}

std::string_view obs_mode_name(ObsMode m) {
  return m == ObsMode::kState ? "state" : "raster";
}

ObsMode parse_obs_mode(std::string_view s) {
  if (s == "state") return ObsMode::kState;
  if (s == "raster") return ObsMode::kRaster;
  fail(ErrorKind::kConfig, "unknown observation mode '" + std::string(s) + "'");
}

std::string_view stop_rule_name(StopRule r) {
  return r == StopRule::kHead ? "head" : "proximity";
}

StopRule parse_stop_rule(std::string_view s) {
  if (s == "head") return StopRule::kHead;
  if (s == "proximity") return StopRule::kProximity;
  fail(ErrorKind::kConfig, "unknown stop rule '" + std::string(s) + "'");
}

void ModelConfig::validate() const {
  auto bad = [](const std::string& m) { fail(ErrorKind::kConfig, "model: " + m); };
  if (mtp_heads < 1) bad("mtp_heads must be >= 1");
  if (trunk_layers < 1) bad("trunk_layers must be >= 1");
  if (heads < 1 || d_model % heads != 0) bad("d_model must be divisible by heads");
  if (d_ff < 1) bad("d_ff must be >= 1");
  if (max_len < 1) bad("max_len must be >= 1");
  if (action_dim < 2) bad("action_dim must be >= 2");
  if (!(dropout >= 0.0 && dropout < 1.0)) bad("dropout must lie in [0, 1)");
  if (lambda_act < 0 || lambda_lat < 0 || lambda_stop < 0) {
    bad("loss weights must be non-negative");
  }
  if (ensemble.m < 0.0) bad("ensemble m must be >= 0");
  if (ensemble.max_entries < 1) bad("ensemble K must be >= 1");
  if (!(stop_epsilon > 0.0)) bad("stop_epsilon must be > 0");
}

std::size_t ModelConfig::chain_capacity() const {
  switch (ordering) {
    case Ordering::kChunk: return data::kChunkLength;
    case Ordering::kChunkKf: return data::kChunkLength + 1;
    default: return max_len;
  }
}

std::size_t ModelConfig::obs_dim() const {
  return obs_mode == ObsMode::kState
             ? 4 + 2 * num_objects + sim::kNumTasks
             : kProprio + sim::kRasterSize * sim::kRasterSize;
}

std::size_t ModelConfig::obs_tokens() const {
  return obs_mode == ObsMode::kState ? 3 + num_objects
                                     : kPatchesPerSide * kPatchesPerSide + 1;
}

ModelConfig default_config(std::string_view profile) {
  ModelConfig c;
  if (profile == "desk") return c;
  if (profile == "paper") {
    c.profile = "paper";
    c.enc_layers = 4;
    c.trunk_layers = 6;
    c.heads = 8;
    c.d_model = 512;
    c.d_ff = 3200;
    return c;
  }
  fail(ErrorKind::kConfig, "unknown profile '" + std::string(profile) +
                               "' (expected paper or desk)");
}

std::map<std::string, Shape> parameter_shapes(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.d_model, ff = cfg.d_ff, A = cfg.action_dim;
  std::map<std::string, Shape> s;
  auto linear = [&](const std::string& n, std::size_t in, std::size_t out) {
    s[n + ".w"] = {in, out};
    s[n + ".b"] = {out};
  };
  auto ln = [&](const std::string& n) {
    s[n + ".g"] = {d};
    s[n + ".b"] = {d};
  };
  auto attn = [&](const std::string& n) {
    for (const char* w : {".wq", ".wk", ".wv", ".wo"}) s[n + w] = {d, d};
    s[n + ".bo"] = {d};
  };
  auto ffw = [&](const std::string& n, std::size_t hidden) {
    s[n + ".w1"] = {d, hidden};
    s[n + ".b1"] = {hidden};
    s[n + ".w2"] = {hidden, d};
    s[n + ".b2"] = {d};
  };
  if (cfg.obs_mode == ObsMode::kState) {
    linear("enc.embed.ee", 3, d);
    linear("enc.embed.grip", 1, d);
    linear("enc.embed.obj", 2, d);
    linear("enc.embed.task", sim::kNumTasks, d);
  } else {
    linear("enc.embed.patch", kPatch * kPatch, d);
    linear("enc.embed.proprio", kProprio, d);
  }
  s["enc.pos"] = {cfg.obs_tokens(), d};
  for (std::size_t i = 0; i < cfg.enc_layers; ++i) {
    const std::string p = "enc.L" + std::to_string(i);
    ln(p + ".ln1");
    attn(p + ".attn");
    ln(p + ".ln2");
    ffw(p + ".ff", ff);
  }
  ln("enc.ln");
  s["dec.bos"] = {1, d};
  // Shared by every ordering so parameter shapes never depend on it.
  s["dec.pos"] = {std::max(cfg.max_len, data::kChunkLength + 1) + 1, d};
  linear("act.enc", A, d);
  linear("act.dec", d, A);
  for (std::size_t i = 0; i < cfg.trunk_layers; ++i) {
    const std::string p = "dec.L" + std::to_string(i);
    ln(p + ".ln1");
    attn(p + ".self");
    ln(p + ".ln2");
    attn(p + ".cross");
    ln(p + ".ln3");
    ffw(p + ".ff", ff);
  }
  ln("dec.ln");
  for (std::size_t h = 0; h < cfg.mtp_heads; ++h) {
    const std::string p = "mtp." + std::to_string(h);
    ln(p + ".ln");
    ffw(p + ".ff", d);
  }
  linear("stop", d, 1);
  return s;
}

Policy::Policy(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  for (const auto& [name, shape] : parameter_shapes(cfg_)) {
    std::vector<double> v(ad::shape_numel(shape), 0.0);
    if (ends_with(name, ".g")) {
      std::fill(v.begin(), v.end(), 1.0);
    } else if (!ends_with(name, ".b") && !ends_with(name, ".b1") &&
               !ends_with(name, ".b2") && !ends_with(name, ".bo")) {
      Rng rng(hash_combine(seed, hash_name(name)));
      for (auto& x : v) x = truncated_normal(rng, 0.02);
    }
    params_.add(name, Tensor::from(shape, std::move(v), true));
  }
  bind();
}

Policy::~Policy() = default;
Policy::Policy(Policy&&) noexcept = default;
Policy& Policy::operator=(Policy&&) noexcept = default;

void Policy::bind() {
  w_ = std::make_unique<Weights>();
  auto& P = params_;
  auto get = [&](const std::string& n) { return P.get(n); };
  auto linear = [&](const std::string& n) {
    return LinearW{get(n + ".w"), get(n + ".b")};
  };
  auto ln = [&](const std::string& n) { return LnW{get(n + ".g"), get(n + ".b")}; };
  auto attn = [&](const std::string& n) {
    return AttnW{get(n + ".wq"), get(n + ".wk"), get(n + ".wv"), get(n + ".wo"),
                 get(n + ".bo")};
  };
  auto ffw = [&](const std::string& n) {
    return FfW{get(n + ".w1"), get(n + ".b1"), get(n + ".w2"), get(n + ".b2")};
  };
  auto& w = *w_;
  if (cfg_.obs_mode == ObsMode::kState) {
    w.ee = linear("enc.embed.ee");
    w.grip = linear("enc.embed.grip");
    w.obj = linear("enc.embed.obj");
    w.task = linear("enc.embed.task");
  } else {
    w.patch = linear("enc.embed.patch");
    w.proprio = linear("enc.embed.proprio");
  }
  w.enc_pos = get("enc.pos");
  for (std::size_t i = 0; i < cfg_.enc_layers; ++i) {
    const std::string p = "enc.L" + std::to_string(i);
    w.enc.push_back({ln(p + ".ln1"), ln(p + ".ln2"), attn(p + ".attn"),
                     ffw(p + ".ff")});
  }
  w.enc_ln = ln("enc.ln");
  w.bos = get("dec.bos");
  w.dec_pos = get("dec.pos");
  w.act_enc = linear("act.enc");
  w.act_dec = linear("act.dec");
  for (std::size_t i = 0; i < cfg_.trunk_layers; ++i) {
    const std::string p = "dec.L" + std::to_string(i);
    w.dec.push_back({ln(p + ".ln1"), ln(p + ".ln2"), ln(p + ".ln3"),
                     attn(p + ".self"), attn(p + ".cross"), ffw(p + ".ff")});
  }
  w.dec_ln = ln("dec.ln");
  for (std::size_t h = 0; h < cfg_.mtp_heads; ++h) {
    const std::string p = "mtp." + std::to_string(h);
    w.heads.push_back({ln(p + ".ln"), ffw(p + ".ff")});
  }
  w.stop = linear("stop");
}

void Policy::load_values(
    const std::map<std::string, std::pair<Shape, std::vector<double>>>& values) {
  for (auto& [name, t] : params_) {
    auto it = values.find(name);
    if (it == values.end()) {
      fail(ErrorKind::kShape, "parameter '" + name + "' missing from checkpoint");
    }
    if (it->second.first != t.shape() ||
        it->second.second.size() != t.numel()) {
      fail(ErrorKind::kShape, "parameter '" + name + "': checkpoint shape " +
                                  ad::shape_str(it->second.first) +
                                  " vs model " + ad::shape_str(t.shape()));
    }
  }
  for (const auto& [name, v] : values) {
    if (!params_.contains(name)) {
      fail(ErrorKind::kShape, "parameter '" + name + "' unknown to the model");
    }
  }
  for (auto& [name, t] : params_) {
    const auto& src = values.at(name).second;
    std::copy(src.begin(), src.end(), t.data().begin());
  }
}

namespace {

Tensor linear(const Tensor& x, const LinearW& l) {
  return ad::add_row(ad::matmul(x, l.w), l.b);
}

Tensor layer_norm(const Tensor& x, const LnW& l) {
  return ad::layer_norm(x, l.g, l.b);
}

Tensor feed_forward(const Tensor& x, const FfW& f) {
  Tensor h = ad::gelu(ad::add_row(ad::matmul(x, f.w1), f.b1));
  return ad::add_row(ad::matmul(h, f.w2), f.b2);
}

Tensor attention_block(const Tensor& xq, const Tensor& xkv, const AttnW& a,
                       std::span<const ad::AttnSegment> segs, std::size_t heads,
                       bool causal, ad::AttnProbs* probs) {
  Tensor q = ad::matmul(xq, a.wq);
  Tensor k = ad::matmul(xkv, a.wk);
  Tensor v = ad::matmul(xkv, a.wv);
  Tensor o = ad::attention(q, k, v, segs, heads, causal, probs);
  return ad::add_row(ad::matmul(o, a.wo), a.bo);
}

}  // namespace

Tensor embed_observations(const Policy& p,
                          std::span<const std::vector<double>> obs) {
  const auto& cfg = p.config();
  const auto& w = p.weights();
  const std::size_t B = obs.size();
  for (const auto& o : obs) {
    if (o.size() != cfg.obs_dim()) {
      fail(ErrorKind::kShape, "encode_observation: observation of size " +
                                  std::to_string(o.size()) + ", expected " +
                                  std::to_string(cfg.obs_dim()));
    }
  }
  if (B == 0) fail(ErrorKind::kShape, "encode_observation: empty batch");

  if (cfg.obs_mode == ObsMode::kState) {
    const std::size_t n = cfg.num_objects;
    std::vector<double> ee, grip, obj, task;
    for (const auto& o : obs) {
      ee.insert(ee.end(), o.begin(), o.begin() + 3);
      grip.push_back(o[3]);
      obj.insert(obj.end(), o.begin() + 4, o.begin() + 4 + 2 * static_cast<long>(n));
      task.insert(task.end(), o.begin() + 4 + 2 * static_cast<long>(n), o.end());
    }
    const Tensor parts[] = {
        linear(Tensor::from({B, 3}, std::move(ee)), w.ee),
        linear(Tensor::from({B, 1}, std::move(grip)), w.grip),
        linear(Tensor::from({B * n, 2}, std::move(obj)), w.obj),
        linear(Tensor::from({B, sim::kNumTasks}, std::move(task)), w.task)};
    // Rows are grouped by kind; gather them back into per-sample order.
    std::vector<std::size_t> ids;
    for (std::size_t b = 0; b < B; ++b) {
      ids.push_back(b);
      ids.push_back(B + b);
      for (std::size_t i = 0; i < n; ++i) ids.push_back(2 * B + b * n + i);
      ids.push_back(2 * B + B * n + b);
    }
    return ad::embedding(ad::concat(parts, 0), ids);
  }

  const std::size_t np = kPatchesPerSide * kPatchesPerSide;
  const std::size_t side = sim::kRasterSize;
  std::vector<double> patches, proprio;
  patches.reserve(B * np * kPatch * kPatch);
  for (const auto& o : obs) {
    proprio.insert(proprio.end(), o.begin(), o.begin() + kProprio);
    const double* px = o.data() + kProprio;
    for (std::size_t pr = 0; pr < kPatchesPerSide; ++pr) {
      for (std::size_t pc = 0; pc < kPatchesPerSide; ++pc) {
        for (std::size_t r = 0; r < kPatch; ++r) {
          const double* row = px + (pr * kPatch + r) * side + pc * kPatch;
          patches.insert(patches.end(), row, row + kPatch);
        }
      }
    }
  }
  const Tensor parts[] = {
      linear(Tensor::from({B * np, kPatch * kPatch}, std::move(patches)),
             w.patch),
      linear(Tensor::from({B, kProprio}, std::move(proprio)), w.proprio)};
  std::vector<std::size_t> ids;
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t i = 0; i < np; ++i) ids.push_back(b * np + i);
    ids.push_back(B * np + b);
  }
  return ad::embedding(ad::concat(parts, 0), ids);
}

Memory encode_tokens(const Policy& p, const Tensor& tokens,
                     std::span<const std::size_t> pos_ids,
                     std::size_t tokens_per_sample, const ForwardOptions& opt) {
  const auto& cfg = p.config();
  const auto& w = p.weights();
  if (tokens_per_sample == 0 || tokens.rows() % tokens_per_sample != 0 ||
      pos_ids.size() != tokens.rows()) {
    fail(ErrorKind::kShape, "encode_tokens: " + std::to_string(tokens.rows()) +
                                " rows, " + std::to_string(pos_ids.size()) +
                                " position ids, " +
                                std::to_string(tokens_per_sample) +
                                " tokens per sample");
  }
  Memory m;
  const std::size_t B = tokens.rows() / tokens_per_sample;
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t o = b * tokens_per_sample;
    m.segments.push_back({o, tokens_per_sample, o, tokens_per_sample});
  }
  const double pd = cfg.dropout;
  Tensor x = ad::add(tokens, ad::embedding(w.enc_pos, pos_ids));
  x = ad::dropout(x, pd, opt.training, key_for(opt, kEncInputSite));
  for (std::size_t i = 0; i < w.enc.size(); ++i) {
    const auto& L = w.enc[i];
    Tensor h = layer_norm(x, L.ln1);
    Tensor a = attention_block(h, h, L.attn, m.segments, cfg.heads, false, nullptr);
    x = ad::add(x, ad::dropout(a, pd, opt.training, key_for(opt, enc_site(i, 0))));
    Tensor f = feed_forward(layer_norm(x, L.ln2), L.ff);
    x = ad::add(x, ad::dropout(f, pd, opt.training, key_for(opt, enc_site(i, 1))));
  }
  m.x = layer_norm(x, w.enc_ln);
  return m;
}

Memory encode_observations(const Policy& p,
                           std::span<const std::vector<double>> obs,
                           const ForwardOptions& opt) {
  const std::size_t n = p.config().obs_tokens();
  std::vector<std::size_t> pos;
  pos.reserve(obs.size() * n);
  for (std::size_t b = 0; b < obs.size(); ++b) {
    for (std::size_t i = 0; i < n; ++i) pos.push_back(i);
  }
  return encode_tokens(p, embed_observations(p, obs), pos, n, opt);
}

Memory encode_observation(const Policy& p, const std::vector<double>& obs) {
  return encode_observations(p, std::span(&obs, 1), ForwardOptions{});
}

DecoderOutput decode_inputs(const Policy& p, const Memory& memory,
                            const Tensor& inputs,
                            std::span<const std::size_t> lengths,
                            const ForwardOptions& opt) {
  const auto& cfg = p.config();
  const auto& w = p.weights();
  if (lengths.size() != memory.segments.size()) {
    fail(ErrorKind::kShape, "decode: " + std::to_string(lengths.size()) +
                                " chains for " +
                                std::to_string(memory.segments.size()) +
                                " memories");
  }
  DecoderOutput out;
  std::vector<ad::AttnSegment> self_segs, cross_segs;
  std::vector<std::size_t> pos;
  std::size_t rows = 0;
  for (std::size_t b = 0; b < lengths.size(); ++b) {
    const std::size_t n = lengths[b];
    if (n == 0 || n > w.dec_pos.rows()) {
      fail(ErrorKind::kShape, "decode: chain length " + std::to_string(n) +
                                  " outside [1, " +
                                  std::to_string(w.dec_pos.rows()) + "]");
    }
    out.offset.push_back(rows);
    out.length.push_back(n);
    self_segs.push_back({rows, n, rows, n});
    const auto& ms = memory.segments[b];
    cross_segs.push_back({rows, n, ms.k0, ms.nk});
    for (std::size_t j = 0; j < n; ++j) pos.push_back(j);
    rows += n;
  }
  if (inputs.dim() != 2 || inputs.rows() != rows || inputs.cols() != cfg.d_model) {
    fail(ErrorKind::kShape, "decode: inputs " + ad::shape_str(inputs.shape()) +
                                " for " + std::to_string(rows) + " rows");
  }
  const bool causal = !data::is_chunked(cfg.ordering);
  const double pd = cfg.dropout;
  Tensor x = ad::add(inputs, ad::embedding(w.dec_pos, pos));
  x = ad::dropout(x, pd, opt.training, key_for(opt, kDecInputSite));
  for (std::size_t i = 0; i < w.dec.size(); ++i) {
    const auto& L = w.dec[i];
    ad::AttnProbs probs;
    Tensor h = layer_norm(x, L.ln1);
    Tensor a = attention_block(h, h, L.self, self_segs, cfg.heads, causal,
                               opt.record_attention ? &probs : nullptr);
    if (opt.record_attention) out.self_attention.push_back(std::move(probs));
    x = ad::add(x, ad::dropout(a, pd, opt.training, key_for(opt, dec_site(i, 0))));
    h = layer_norm(x, L.ln2);
    a = attention_block(h, memory.x, L.cross, cross_segs, cfg.heads, false,
                        nullptr);
    x = ad::add(x, ad::dropout(a, pd, opt.training, key_for(opt, dec_site(i, 1))));
    Tensor f = feed_forward(layer_norm(x, L.ln3), L.ff);
    x = ad::add(x, ad::dropout(f, pd, opt.training, key_for(opt, dec_site(i, 2))));
  }
  out.z = layer_norm(x, w.dec_ln);
  for (const auto& head : w.heads) {
    Tensor zh = ad::add(out.z, feed_forward(layer_norm(out.z, head.ln), head.ff));
    out.actions.push_back(linear(zh, w.act_dec));
    out.latents.push_back(std::move(zh));
  }
  out.stop_logits = linear(out.latents.front(), w.stop);
  return out;
}

std::size_t decoded_rows(const data::ChainTarget& t) {
  return data::is_chunked(t.ordering) ? t.size() : t.num_valid();
}

DecoderOutput decode_teacher_forced(const Policy& p, const Memory& memory,
                                    std::span<const data::ChainTarget> targets,
                                    const ForwardOptions& opt) {
  const auto& cfg = p.config();
  const auto& w = p.weights();
  std::vector<std::size_t> lengths;
  std::vector<double> tok;
  for (const auto& t : targets) {
    if (t.ordering != cfg.ordering) {
      fail(ErrorKind::kDomain, "decode: target ordering " +
                                   std::string(data::ordering_name(t.ordering)) +
                                   " under a " +
                                   std::string(data::ordering_name(cfg.ordering)) +
                                   " model");
    }
    const std::size_t n = decoded_rows(t);
    if (n == 0) fail(ErrorKind::kDomain, "decode: all-masked target");
    lengths.push_back(n);
    for (std::size_t j = 0; j < n; ++j) {
      if (t.tokens[j].size() != cfg.action_dim) {
        fail(ErrorKind::kShape, "decode: action of size " +
                                    std::to_string(t.tokens[j].size()) +
                                    ", expected " + std::to_string(cfg.action_dim));
      }
      tok.insert(tok.end(), t.tokens[j].begin(), t.tokens[j].end());
    }
  }
  const std::size_t R = tok.size() / cfg.action_dim;
  Tensor tokens = Tensor::from({R, cfg.action_dim}, std::move(tok));
  Tensor embed = linear(tokens, w.act_enc);

  std::vector<std::size_t> ids;
  ids.reserve(R);
  std::size_t row = 0;
  const bool chunked = data::is_chunked(cfg.ordering);
  for (std::size_t n : lengths) {
    // Position 0 reads the begin-of-chain row, position j the embedding of
    // token j-1. Chunk orderings read only the begin-of-chain row.
    for (std::size_t j = 0; j < n; ++j) {
      ids.push_back(chunked || j == 0 ? 0 : 1 + row + j - 1);
    }
    row += n;
  }
  const Tensor table_parts[] = {w.bos, embed};
  Tensor inputs = ad::embedding(ad::concat(table_parts, 0), ids);
  DecoderOutput out = decode_inputs(p, memory, inputs, lengths, opt);
  out.tokens = std::move(tokens);
  out.token_embed = std::move(embed);
  return out;
}

Losses compute_losses(const Policy& p, const DecoderOutput& out,
                      std::span<const data::ChainTarget> targets) {
  const auto& cfg = p.config();
  const auto& w = p.weights();
  if (targets.size() != out.length.size()) {
    fail(ErrorKind::kShape, "losses: target count disagrees with the decode");
  }
  const std::size_t H = out.actions.size(), A = cfg.action_dim;
  const std::size_t R = out.z.rows();
  std::vector<double> head_tgt(H * R * A, 0.0), head_w(H * R, 0.0);
  std::vector<double> row_w(R, 0.0), stop_lbl(R, 0.0);
  for (std::size_t b = 0; b < targets.size(); ++b) {
    const auto& t = targets[b];
    if (t.heads() < H) fail(ErrorKind::kShape, "losses: target has too few heads");
    const std::size_t o = out.offset[b], n = out.length[b];
    for (std::size_t j = 0; j < n; ++j) {
      row_w[o + j] = t.mask[j];
      stop_lbl[o + j] = t.stop[j];
      for (std::size_t h = 0; h < H; ++h) {
        if (!t.head_mask[h][j]) continue;
        head_w[h * R + o + j] = 1.0;
        const auto& a = t.head_target(h, j);
        std::copy(a.begin(), a.end(), head_tgt.begin() + static_cast<long>((h * R + o + j) * A));
      }
    }
  }
  Losses L;
  Tensor act = ad::l1_loss(ad::concat(out.actions, 0),
                           Tensor::from({H * R, A}, std::move(head_tgt)), head_w);
  Tensor lat = cfg.loss == LossVariant::kLatentConsistency
                   ? ad::mse_loss(out.latents.front(), out.token_embed, row_w)
                   : ad::l1_loss(linear(out.token_embed, w.act_dec), out.tokens,
                                 row_w);
  L.act = act.item();
  L.lat = lat.item();
  L.total = ad::add(ad::scale(act, cfg.lambda_act), ad::scale(lat, cfg.lambda_lat));
  if (!data::is_chunked(cfg.ordering)) {
    Tensor stop = ad::bce_with_logits(out.stop_logits, stop_lbl, row_w);
    L.stop = stop.item();
    L.total = ad::add(L.total, ad::scale(stop, cfg.lambda_stop));
  }
  return L;
}

std::vector<Action> Chain::time_ordered() const {
  std::vector<Action> out;
  switch (ordering) {
    case Ordering::kReverse:
      out.assign(tokens.rbegin(), tokens.rend());
      break;
    case Ordering::kForward:
    case Ordering::kChunk:
      out = tokens;
      break;
    case Ordering::kHybrid:
      if (!tokens.empty()) {
        out.assign(tokens.begin() + 1, tokens.end());
        out.push_back(tokens.front());
      }
      break;
    case Ordering::kChunkKf:
      out.assign(tokens.begin(),
                 tokens.begin() + static_cast<long>(std::min(tokens.size(),
                                                             data::kChunkLength)));
      break;
  }
  return out;
}

namespace {

double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

// Lays per-row attention from incremental decoding into square maps.
void store_attention_row(Chain& c, std::size_t layer, const ad::AttnProbs& p,
                         std::size_t heads, std::size_t row) {
  const auto& probs = p.front();  // [head][1][row + 1]
  for (std::size_t h = 0; h < heads; ++h) {
    auto& m = c.attention[layer][h];
    m.insert(m.end(), probs.begin() + static_cast<long>(h * (row + 1)),
             probs.begin() + static_cast<long>((h + 1) * (row + 1)));
  }
}

void square_up(Chain& c) {
  const std::size_t n = c.tokens.size();
  for (auto& layer : c.attention) {
    for (auto& m : layer) {
      std::vector<double> sq(n * n, 0.0);
      std::size_t k = 0;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) sq[i * n + j] = m[k++];
      }
      m = std::move(sq);
    }
  }
}

Chain generate_parallel(const Policy& p, const Memory& mem,
                        const GenerateOptions& opt) {
  const auto& cfg = p.config();
  const std::size_t n = cfg.chain_capacity();
  ForwardOptions fo;
  fo.record_attention = opt.record_attention;
  const std::vector<std::size_t> ids(n, 0);
  const std::size_t lengths[] = {n};
  auto out = decode_inputs(p, mem, ad::embedding(p.weights().bos, ids), lengths, fo);
  Chain c;
  c.ordering = cfg.ordering;
  const auto& a = out.actions.front().values();
  for (std::size_t j = 0; j < n; ++j) {
    c.tokens.emplace_back(a.begin() + static_cast<long>(j * cfg.action_dim),
                          a.begin() + static_cast<long>((j + 1) * cfg.action_dim));
    c.stop_prob.push_back(0.0);
  }
  for (auto& probs : out.self_attention) {
    std::vector<std::vector<double>> layer;
    for (std::size_t h = 0; h < cfg.heads; ++h) {
      layer.emplace_back(probs.front().begin() + static_cast<long>(h * n * n),
                         probs.front().begin() + static_cast<long>((h + 1) * n * n));
    }
    c.attention.push_back(std::move(layer));
  }
  return c;
}

}  // namespace

Chain generate_chain(const Policy& p, const std::vector<double>& obs,
                     const GenerateOptions& opt) {
  ad::NoGradGuard no_grad;
  const auto& cfg = p.config();
  const auto& w = p.weights();
  const Memory mem = encode_observation(p, obs);
  if (data::is_chunked(cfg.ordering)) return generate_parallel(p, mem, opt);

  const std::size_t d = cfg.d_model, nm = mem.x.rows();
  const std::size_t nl = w.dec.size();
  std::vector<Tensor> cross_k, cross_v;
  for (const auto& L : w.dec) {
    cross_k.push_back(ad::matmul(mem.x, L.cross.wk));
    cross_v.push_back(ad::matmul(mem.x, L.cross.wv));
  }
  std::vector<std::vector<double>> kc(nl), vc(nl);
  const ad::AttnSegment cross_seg[] = {{0, 1, 0, nm}};

  Chain c;
  c.ordering = cfg.ordering;
  if (opt.record_attention) {
    c.attention.assign(nl, std::vector<std::vector<double>>(cfg.heads));
  }
  Tensor next = w.bos;
  for (std::size_t j = 0; j < cfg.max_len; ++j) {
    const std::size_t pos[] = {j};
    Tensor x = ad::add(next, ad::embedding(w.dec_pos, pos));
    for (std::size_t i = 0; i < nl; ++i) {
      const auto& L = w.dec[i];
      Tensor h = layer_norm(x, L.ln1);
      Tensor q = ad::matmul(h, L.self.wq);
      const auto kn = ad::matmul(h, L.self.wk).values();
      const auto vn = ad::matmul(h, L.self.wv).values();
      kc[i].insert(kc[i].end(), kn.begin(), kn.end());
      vc[i].insert(vc[i].end(), vn.begin(), vn.end());
      const ad::AttnSegment seg[] = {{0, 1, 0, j + 1}};
      ad::AttnProbs probs;
      Tensor o = ad::attention(q, Tensor::from({j + 1, d}, kc[i]),
                               Tensor::from({j + 1, d}, vc[i]), seg, cfg.heads,
                               true, opt.record_attention ? &probs : nullptr);
      if (opt.record_attention) store_attention_row(c, i, probs, cfg.heads, j);
      x = ad::add(x, ad::add_row(ad::matmul(o, L.self.wo), L.self.bo));
      h = layer_norm(x, L.ln2);
      o = ad::attention(ad::matmul(h, L.cross.wq), cross_k[i], cross_v[i],
                        cross_seg, cfg.heads, false);
      x = ad::add(x, ad::add_row(ad::matmul(o, L.cross.wo), L.cross.bo));
      x = ad::add(x, feed_forward(layer_norm(x, L.ln3), L.ff));
    }
    Tensor z = layer_norm(x, w.dec_ln);
    const auto& h0 = w.heads.front();
    Tensor z1 = ad::add(z, feed_forward(layer_norm(z, h0.ln), h0.ff));
    Tensor a = linear(z1, w.act_dec);
    const double stop = sigmoid(linear(z1, w.stop).item());
    c.tokens.push_back(a.values());
    c.stop_prob.push_back(stop);
    bool done = stop > 0.5;
    if (cfg.stop_rule == StopRule::kProximity) {
      done = false;
      if (opt.current_action && opt.current_action->size() >= 2) {
        const auto& cur = *opt.current_action;
        const auto& v = a.values();
        done = std::hypot(v[0] - cur[0], v[1] - cur[1]) < cfg.stop_epsilon;
      }
    }
    if (done) break;
    next = cfg.reencode_actions ? linear(a, w.act_enc) : z1;
  }
  if (opt.record_attention) square_up(c);
  return c;
}

}  // namespace coa::model
