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

// Encoder-decoder chain policy.
//
// The encoder turns one observation into a handful of memory tokens. The
// decoder reads a chain of action tokens (keyframe first for the reverse
// ordering) with causal self-attention and cross-attention to the memory,
// and a layer of H parallel refinement heads predicts tokens j..j+H-1 from
// position j. Batches are packed: each sample contributes only its own rows
// and attention never crosses samples.

#ifndef COA_MODEL_HPP_
#define COA_MODEL_HPP_

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "coa/dataset.hpp"
#include "coa/ops.hpp"
#include "coa/optim.hpp"

namespace coa::model {

using data::Action;

enum class LossVariant { kLatentConsistency, kActionReconstruction };
enum class ObsMode { kState, kRaster };
enum class StopRule { kHead, kProximity };

std::string_view loss_variant_name(LossVariant v);
LossVariant parse_loss_variant(std::string_view s);
std::string_view obs_mode_name(ObsMode m);
ObsMode parse_obs_mode(std::string_view s);
std::string_view stop_rule_name(StopRule r);
StopRule parse_stop_rule(std::string_view s);

struct EnsembleConfig {
  bool enabled = true;
  double m = 0.01;              // recency coefficient
  std::size_t max_entries = 10;  // K
  friend bool operator==(const EnsembleConfig&, const EnsembleConfig&) = default;
};

struct ModelConfig {
  std::string profile = "desk";
  data::Ordering ordering = data::Ordering::kReverse;
  data::KeyframeMode keyframe = data::KeyframeMode::kLastAction;
  std::size_t enc_layers = 2;
  std::size_t trunk_layers = 2;
  std::size_t heads = 4;
  std::size_t d_model = 64;
  std::size_t d_ff = 256;
  double dropout = 0.1;
  std::size_t mtp_heads = 5;
  std::size_t max_len = 60;  // L
  std::size_t action_dim = sim::kActionDim;
  ObsMode obs_mode = ObsMode::kState;
  std::size_t num_objects = 1;
  double lambda_act = 1.0;
  double lambda_lat = 1.0;
  double lambda_stop = 0.1;
  LossVariant loss = LossVariant::kLatentConsistency;
  bool reencode_actions = false;  // feed E_a(D_a(z)) instead of z
  StopRule stop_rule = StopRule::kHead;
  double stop_epsilon = 0.02;
  EnsembleConfig ensemble;

  void validate() const;  // kConfig on violation
  // Decoder positions a chain may occupy.
  std::size_t chain_capacity() const;
  std::size_t obs_dim() const;
  std::size_t obs_tokens() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// "paper" or "desk"; kConfig otherwise.
ModelConfig default_config(std::string_view profile);

// Name -> shape of every learnable parameter for `cfg`.
std::map<std::string, ad::Shape> parameter_shapes(const ModelConfig& cfg);

class Policy {
 public:
  // Fresh parameters. Each tensor draws from a stream keyed by (seed, name),
  // so configs that share a parameter name share its initial value.
  Policy(ModelConfig cfg, std::uint64_t seed);
  ~Policy();
  Policy(Policy&&) noexcept;
  Policy& operator=(Policy&&) noexcept;
  Policy(const Policy&) = delete;
  Policy& operator=(const Policy&) = delete;

  const ModelConfig& config() const { return cfg_; }
  ad::ParamStore& params() { return params_; }
  const ad::ParamStore& params() const { return params_; }

  // Overwrites parameter values in name order. kShape naming the first
  // parameter whose shape differs or that is missing.
  void load_values(const std::map<std::string, std::pair<ad::Shape,
                                                         std::vector<double>>>&
                       values);

  struct Weights;
  const Weights& weights() const { return *w_; }

 private:
  void bind();
  ModelConfig cfg_;
  ad::ParamStore params_;
  std::unique_ptr<Weights> w_;
};

struct ForwardOptions {
  bool training = false;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  bool record_attention = false;
};

// Packed encoder output; segment i covers sample i's rows.
struct Memory {
  ad::Tensor x;
  std::vector<ad::AttnSegment> segments;
};

// Per-token embeddings before positions, [B * obs_tokens, d]. Observations
// are expected in normalized form. kShape on a wrong observation size.
ad::Tensor embed_observations(const Policy& p,
                              std::span<const std::vector<double>> obs);
// Adds positional embeddings by id and runs the encoder stack.
Memory encode_tokens(const Policy& p, const ad::Tensor& tokens,
                     std::span<const std::size_t> pos_ids,
                     std::size_t tokens_per_sample,
                     const ForwardOptions& opt);
Memory encode_observations(const Policy& p,
                           std::span<const std::vector<double>> obs,
                           const ForwardOptions& opt);
Memory encode_observation(const Policy& p, const std::vector<double>& obs);

struct DecoderOutput {
  std::vector<std::size_t> offset, length;  // packed rows per sample
  ad::Tensor z;                             // trunk output [R, d]
  std::vector<ad::Tensor> latents;          // per head [R, d]
  std::vector<ad::Tensor> actions;          // per head [R, A]
  ad::Tensor stop_logits;                   // [R, 1]
  ad::Tensor token_embed;                   // E_a(target tokens), [R, d]
  ad::Tensor tokens;                        // target tokens, [R, A]
  std::vector<ad::AttnProbs> self_attention;  // [layer][sample][head][n*n]
};

// Runs the decoder on explicit input rows (positions are added here).
// lengths[i] rows belong to sample i, memory segment i.
DecoderOutput decode_inputs(const Policy& p, const Memory& memory,
                            const ad::Tensor& inputs,
                            std::span<const std::size_t> lengths,
                            const ForwardOptions& opt);

// Rows per target: the valid prefix for variable-length orderings, every
// position for chunk orderings.
std::size_t decoded_rows(const data::ChainTarget& t);

DecoderOutput decode_teacher_forced(const Policy& p, const Memory& memory,
                                    std::span<const data::ChainTarget> targets,
                                    const ForwardOptions& opt);

struct Losses {
  ad::Tensor total;
  double act = 0.0;
  double lat = 0.0;  // latent consistency or reconstruction, per variant
  double stop = 0.0;
};

// Pooled over the batch. kDomain when no position is supervised.
Losses compute_losses(const Policy& p, const DecoderOutput& out,
                      std::span<const data::ChainTarget> targets);

struct GenerateOptions {
  bool record_attention = true;
  // Normalized current pose, used by the proximity stop rule.
  const std::vector<double>* current_action = nullptr;
};

struct Chain {
  data::Ordering ordering = data::Ordering::kReverse;
  std::vector<Action> tokens;  // generation order, normalized
  std::vector<double> stop_prob;
  // [layer][head] -> n x n row-major, causal rows.
  std::vector<std::vector<std::vector<double>>> attention;

  // Actions in execution order (earliest first).
  std::vector<Action> time_ordered() const;
};

// Greedy incremental decoding with cached keys and values. kNonFinite when a
// latent blows up.
Chain generate_chain(const Policy& p, const std::vector<double>& obs,
                     const GenerateOptions& opt = {});

}  // namespace coa::model

#endif  // COA_MODEL_HPP_
