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

#ifndef COA_OPTIM_HPP_
#define COA_OPTIM_HPP_

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "coa/tensor.hpp"

namespace coa::ad {

// Named learnable tensors, iterated in name order.
class ParamStore {
 public:
  // Registers a fresh leaf; names must be unique.
  Tensor& add(const std::string& name, Tensor value);
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);
  bool contains(const std::string& name) const {
    return params_.count(name) != 0;
  }
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;
  void zero_grad();

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::map<std::string, Tensor> params_;
};

struct AdamWConfig {
  double lr = 1e-4;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamWState {
  AdamWConfig config;
  std::int64_t step = 0;
  std::map<std::string, std::vector<double>> m;
  std::map<std::string, std::vector<double>> v;
};

// One decoupled-weight-decay Adam step over every parameter in the store.
// Parameters that received no gradient are skipped.
void adamw_step(ParamStore& params, AdamWState& state);

// Max over coordinates of |analytic - numeric| / max(|analytic|, |numeric|,
// floor), the numeric value being the central difference with step eps.
// `f` is re-evaluated with `x` perturbed in place and must be deterministic.
// When max_coords > 0 only that many coordinates (chosen by seed) are probed.
struct GradCheckOptions {
  double eps = 1e-6;
  double floor = 1e-6;
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
};
double grad_check(const std::function<Tensor()>& f, Tensor& x,
                  const GradCheckOptions& opts = {});
// Same, for a function of a single tensor argument.
double grad_check(const std::function<Tensor(const Tensor&)>& f,
                  const Tensor& x, double eps);

}  // namespace coa::ad

#endif  // COA_OPTIM_HPP_
