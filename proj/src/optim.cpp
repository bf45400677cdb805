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

#include "coa/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "coa/error.hpp"
#include "coa/rng.hpp"

namespace coa::ad {

Tensor& ParamStore::add(const std::string& name, Tensor value) {
  if (params_.count(name)) {
    fail(ErrorKind::kDomain, "duplicate parameter name '" + name + "'");
  }
  value.set_requires_grad(true);
  return params_.emplace(name, std::move(value)).first->second;
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) {
    fail(ErrorKind::kDomain, "unknown parameter '" + name + "'");
  }
  return it->second;
}

Tensor& ParamStore::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) {
    fail(ErrorKind::kDomain, "unknown parameter '" + name + "'");
  }
  return it->second;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : params_) n += t.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [_, t] : params_) t.zero_grad();
}

void adamw_step(ParamStore& params, AdamWState& state) {
  const auto& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (auto& [name, p] : params) {
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.size() != p.numel()) m.assign(p.numel(), 0.0);
    if (v.size() != p.numel()) v.assign(p.numel(), 0.0);
    // Unused this step (e.g. the stop head under chunked orderings): left
    // untouched, decay included.
    if (!p.has_grad()) continue;
    auto w = p.data();
    auto g = p.grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      w[i] *= 1.0 - c.lr * c.weight_decay;
      w[i] -= c.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + c.eps);
    }
  }
}

double grad_check(const std::function<Tensor()>& f, Tensor& x,
                  const GradCheckOptions& opts) {
  if (!(opts.eps >= 1e-7 && opts.eps <= 1e-3)) {
    fail(ErrorKind::kDomain, "grad_check: eps must lie in [1e-7, 1e-3]");
  }
  const bool had = x.requires_grad();
  x.set_requires_grad(true);
  x.zero_grad();
  Tensor y = f();
  if (!std::isfinite(y.item())) {
    fail(ErrorKind::kNonFinite, "grad_check: f is not finite");
  }
  y.backward();
  std::vector<double> analytic(x.grad().begin(), x.grad().end());

  std::vector<std::size_t> coords(x.numel());
  std::iota(coords.begin(), coords.end(), 0);
  if (opts.max_coords > 0 && opts.max_coords < coords.size()) {
    Rng rng(opts.seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(opts.max_coords);
  }

  double worst = 0.0;
  auto data = x.data();
  for (std::size_t i : coords) {
    const double orig = data[i];
    data[i] = orig + opts.eps;
    const double fp = f().item();
    data[i] = orig - opts.eps;
    const double fm = f().item();
    data[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      fail(ErrorKind::kNonFinite, "grad_check: f is not finite");
    }
    const double numeric = (fp - fm) / (2.0 * opts.eps);
    const double denom =
        std::max({std::abs(analytic[i]), std::abs(numeric), opts.floor});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  x.zero_grad();
  x.set_requires_grad(had);
  return worst;
}

double grad_check(const std::function<Tensor(const Tensor&)>& f,
                  const Tensor& x, double eps) {
  Tensor leaf = x.detach();
  GradCheckOptions opts;
  opts.eps = eps;
  return grad_check([&] { return f(leaf); }, leaf, opts);
}

}  // namespace coa::ad
