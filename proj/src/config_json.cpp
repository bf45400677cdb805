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

#include "coa/config_json.hpp"

#include "coa/error.hpp"

namespace coa::io {

using nlohmann::json;

json to_json(const model::ModelConfig& c) {
  return {{"profile", c.profile},
          {"ordering", std::string(data::ordering_name(c.ordering))},
          {"keyframe", std::string(data::keyframe_mode_name(c.keyframe))},
          {"enc_layers", c.enc_layers},
          {"trunk_layers", c.trunk_layers},
          {"heads", c.heads},
          {"d_model", c.d_model},
          {"d_ff", c.d_ff},
          {"dropout", c.dropout},
          {"mtp_heads", c.mtp_heads},
          {"max_len", c.max_len},
          {"action_dim", c.action_dim},
          {"obs_mode", std::string(model::obs_mode_name(c.obs_mode))},
          {"num_objects", c.num_objects},
          {"lambda_act", c.lambda_act},
          {"lambda_lat", c.lambda_lat},
          {"lambda_stop", c.lambda_stop},
          {"loss", std::string(model::loss_variant_name(c.loss))},
          {"reencode_actions", c.reencode_actions},
          {"stop_rule", std::string(model::stop_rule_name(c.stop_rule))},
          {"stop_epsilon", c.stop_epsilon},
          {"ensemble",
           {{"enabled", c.ensemble.enabled},
            {"m", c.ensemble.m},
            {"max_entries", c.ensemble.max_entries}}}};
}

model::ModelConfig model_config_from_json(const json& j) {
  model::ModelConfig c;
  c.profile = j.at("profile").get<std::string>();
  c.ordering = data::parse_ordering(j.at("ordering").get<std::string>());
  c.keyframe = data::parse_keyframe_mode(j.at("keyframe").get<std::string>());
  j.at("enc_layers").get_to(c.enc_layers);
  j.at("trunk_layers").get_to(c.trunk_layers);
  j.at("heads").get_to(c.heads);
  j.at("d_model").get_to(c.d_model);
  j.at("d_ff").get_to(c.d_ff);
  j.at("dropout").get_to(c.dropout);
  j.at("mtp_heads").get_to(c.mtp_heads);
  j.at("max_len").get_to(c.max_len);
  j.at("action_dim").get_to(c.action_dim);
  c.obs_mode = model::parse_obs_mode(j.at("obs_mode").get<std::string>());
  j.at("num_objects").get_to(c.num_objects);
  j.at("lambda_act").get_to(c.lambda_act);
  j.at("lambda_lat").get_to(c.lambda_lat);
  j.at("lambda_stop").get_to(c.lambda_stop);
  c.loss = model::parse_loss_variant(j.at("loss").get<std::string>());
  j.at("reencode_actions").get_to(c.reencode_actions);
  c.stop_rule = model::parse_stop_rule(j.at("stop_rule").get<std::string>());
  j.at("stop_epsilon").get_to(c.stop_epsilon);
  const auto& e = j.at("ensemble");
  e.at("enabled").get_to(c.ensemble.enabled);
  e.at("m").get_to(c.ensemble.m);
  e.at("max_entries").get_to(c.ensemble.max_entries);
  return c;
}

json to_json(const train::TrainConfig& c) {
  return {{"profile", c.profile},
          {"iterations", c.iterations},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"weight_decay", c.weight_decay},
          {"seed", c.seed},
          {"eval_every", c.eval_every},
          {"checkpoint_every", c.checkpoint_every},
          {"eval_episodes", c.eval_episodes}};
}

train::TrainConfig train_config_from_json(const json& j) {
  train::TrainConfig c;
  j.at("profile").get_to(c.profile);
  j.at("iterations").get_to(c.iterations);
  j.at("batch_size").get_to(c.batch_size);
  j.at("lr").get_to(c.lr);
  j.at("weight_decay").get_to(c.weight_decay);
  j.at("seed").get_to(c.seed);
  j.at("eval_every").get_to(c.eval_every);
  j.at("checkpoint_every").get_to(c.checkpoint_every);
  j.at("eval_episodes").get_to(c.eval_episodes);
  return c;
}

json to_json(const data::NormStats& s) {
  return {{"act_min", s.act_min}, {"act_max", s.act_max},
          {"obs_min", s.obs_min}, {"obs_max", s.obs_max}};
}

data::NormStats norm_stats_from_json(const json& j) {
  data::NormStats s;
  j.at("act_min").get_to(s.act_min);
  j.at("act_max").get_to(s.act_max);
  j.at("obs_min").get_to(s.obs_min);
  j.at("obs_max").get_to(s.obs_max);
  return s;
}

namespace {

json points(const std::vector<sim::Vec2>& ps) {
  json out = json::array();
  for (const auto& p : ps) out.push_back({p.x, p.y});
  return out;
}

std::vector<sim::Vec2> parse_points(const json& j) {
  std::vector<sim::Vec2> out;
  for (const auto& p : j) out.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
  return out;
}

}  // namespace

json to_json(const train::TaskInfo& t) {
  return {{"task", std::string(sim::task_name(t.task))},
          {"spread", t.spread},
          {"train_box", {{"lo", points(t.train_box.lo)}, {"hi", points(t.train_box.hi)}}},
          {"max_episode_len", t.max_episode_len}};
}

train::TaskInfo task_info_from_json(const json& j) {
  train::TaskInfo t;
  t.task = sim::parse_task(j.at("task").get<std::string>());
  j.at("spread").get_to(t.spread);
  t.train_box.lo = parse_points(j.at("train_box").at("lo"));
  t.train_box.hi = parse_points(j.at("train_box").at("hi"));
  j.at("max_episode_len").get_to(t.max_episode_len);
  return t;
}

}  // namespace coa::io
