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

// JSON views of the configs, shared by the checkpoint header and reports.
// Internal header: pulls in nlohmann/json.

#ifndef COA_CONFIG_JSON_HPP_
#define COA_CONFIG_JSON_HPP_

#include "json.hpp"

#include "coa/dataset.hpp"
#include "coa/model.hpp"
#include "coa/trainer.hpp"

namespace coa::io {

nlohmann::json to_json(const model::ModelConfig& c);
model::ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const train::TrainConfig& c);
train::TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const data::NormStats& s);
data::NormStats norm_stats_from_json(const nlohmann::json& j);
nlohmann::json to_json(const train::TaskInfo& t);
train::TaskInfo task_info_from_json(const nlohmann::json& j);

}  // namespace coa::io

#endif  // COA_CONFIG_JSON_HPP_
