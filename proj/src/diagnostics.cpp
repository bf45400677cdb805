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

#include "coa/diagnostics.hpp"

#include <functional>
#include <random>

#include "coa/model.hpp"
#include "coa/optim.hpp"

namespace coa::diag {

using ad::Tensor;

namespace {

Tensor random_tensor(ad::Shape shape, std::mt19937_64& rng, double lo = -1.0,
                     double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(ad::shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor::from(std::move(shape), std::move(v));
}

// Scalar probe with a fixed random weighting so no gradient is symmetric.
struct Probe {
  Tensor w;
  Tensor operator()(const Tensor& y) const {
    return ad::sum(ad::mul(ad::reshape(y, w.shape()), w));
  }
};

Probe probe_for(std::size_t numel, std::mt19937_64& rng) {
  return {random_tensor({numel}, rng)};
}

model::ModelConfig tiny_config() {
  auto c = model::default_config("desk");
  c.d_model = 8;
  c.heads = 2;
  c.d_ff = 16;
  c.enc_layers = 1;
  c.trunk_layers = 2;
  c.mtp_heads = 3;
  c.max_len = 6;
  c.dropout = 0.0;
  c.num_objects = 2;
  return c;
}

data::Demonstration random_demo(std::size_t T, std::size_t obs_dim,
                                std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  data::Demonstration d;
  for (std::size_t i = 0; i < T; ++i) {
    data::Step s;
    s.obs.resize(obs_dim);
    for (auto& v : s.obs) v = u(rng);
    s.act = {u(rng), u(rng), u(rng), u(rng) < 0 ? -1.0 : 1.0};
    d.steps.push_back(std::move(s));
  }
  d.success = true;
  return d;
}

}  // namespace

std::vector<GradCheckRow> gradient_suite(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<GradCheckRow> rows;
  const auto check = [&](const std::string& name, Tensor x,
                         const std::function<Tensor(const Tensor&)>& f) {
    Tensor y = f(x);
    const Probe p = probe_for(y.numel(), rng);
    rows.push_back({name, ad::grad_check([&](const Tensor& v) { return p(f(v)); }, x, 1e-6)});
  };

  Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 5}, rng);
  Tensor c = random_tensor({3, 4}, rng), row = random_tensor({4}, rng);
  check("matmul.lhs", a, [&](const Tensor& x) { return ad::matmul(x, b); });
  check("matmul.rhs", b, [&](const Tensor& x) { return ad::matmul(a, x); });
  check("add", a, [&](const Tensor& x) { return ad::add(x, c); });
  check("sub", a, [&](const Tensor& x) { return ad::sub(c, x); });
  check("mul", a, [&](const Tensor& x) { return ad::mul(x, c); });
  check("scale", a, [&](const Tensor& x) { return ad::scale(x, -1.7); });
  check("add_row.x", a, [&](const Tensor& x) { return ad::add_row(x, row); });
  check("add_row.bias", row, [&](const Tensor& x) { return ad::add_row(a, x); });
  check("transpose", a, [&](const Tensor& x) { return ad::transpose(x); });
  check("reshape", a, [&](const Tensor& x) { return ad::reshape(x, {2, 6}); });
  check("concat.axis0", a, [&](const Tensor& x) {
    const Tensor parts[] = {c, x};
    return ad::concat(parts, 0);
  });
  check("concat.axis1", a, [&](const Tensor& x) {
    const Tensor parts[] = {x, c};
    return ad::concat(parts, 1);
  });
  check("slice", a, [&](const Tensor& x) { return ad::slice(x, 1, 1, 3); });
  check("sum", a, [&](const Tensor& x) { return ad::scale(ad::sum(ad::mul(x, c)), 1.0); });
  check("mean", a, [&](const Tensor& x) { return ad::mean(ad::mul(x, x)); });
  check("softmax", a, [&](const Tensor& x) { return ad::softmax(x); });
  const std::vector<std::uint8_t> mask{0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};
  check("masked_fill", a, [&](const Tensor& x) {
    return ad::softmax(ad::masked_fill(x, mask));
  });
  Tensor gamma = random_tensor({4}, rng, 0.5, 1.5), beta = random_tensor({4}, rng);
  check("layer_norm.x", a, [&](const Tensor& x) { return ad::layer_norm(x, gamma, beta); });
  check("layer_norm.gamma", gamma, [&](const Tensor& x) { return ad::layer_norm(a, x, beta); });
  check("layer_norm.beta", beta, [&](const Tensor& x) { return ad::layer_norm(a, gamma, x); });
  check("gelu", a, [&](const Tensor& x) { return ad::gelu(x); });
  const std::vector<std::size_t> ids{2, 0, 2, 1};
  check("embedding", c, [&](const Tensor& x) { return ad::embedding(x, ids); });
  check("dropout", a, [&](const Tensor& x) {
    return ad::dropout(x, 0.3, true, ad::DropoutKey{seed, 1, 2});
  });
  const std::vector<double> w{1.0, 0.0, 2.0};
  check("l1_loss.pred", a, [&](const Tensor& x) { return ad::l1_loss(x, c, w); });
  check("l1_loss.target", c, [&](const Tensor& x) { return ad::l1_loss(a, x, w); });
  check("mse_loss.pred", a, [&](const Tensor& x) { return ad::mse_loss(x, c, w); });
  check("mse_loss.target", c, [&](const Tensor& x) { return ad::mse_loss(a, x, w); });
  const std::vector<double> labels{1.0, 0.0, 1.0};
  check("bce_with_logits", random_tensor({3, 1}, rng, -3.0, 3.0), [&](const Tensor& x) {
    return ad::bce_with_logits(x, labels, w);
  });
  Tensor q = random_tensor({5, 4}, rng), k = random_tensor({6, 4}, rng),
         v = random_tensor({6, 4}, rng);
  const ad::AttnSegment segs[] = {{0, 2, 0, 3}, {2, 3, 3, 3}};
  for (bool causal : {false, true}) {
    const std::string tag = causal ? ".causal" : "";
    check("attention.q" + tag, q, [&](const Tensor& x) { return ad::attention(x, k, v, segs, 2, causal); });
    check("attention.k" + tag, k, [&](const Tensor& x) { return ad::attention(q, x, v, segs, 2, causal); });
    check("attention.v" + tag, v, [&](const Tensor& x) { return ad::attention(q, k, x, segs, 2, causal); });
  }

  for (auto variant : {model::LossVariant::kLatentConsistency,
                       model::LossVariant::kActionReconstruction}) {
    auto cfg = tiny_config();
    cfg.loss = variant;
    model::Policy p(cfg, seed + 13);
    // Init-scale weights leave most gradients near the comparison floor;
    // redraw at unit scale so the check measures the derivative.
    std::normal_distribution<double> g(0.0, 0.5);
    for (auto& [name, x] : p.params()) {
      for (auto& val : x.data()) val = name.ends_with(".g") ? 1.0 + g(rng) : g(rng);
    }
    auto demo = random_demo(3, cfg.obs_dim(), rng);
    const data::ChainTarget t[] = {
        data::build_chain_target(demo, 0, cfg.ordering, cfg.max_len, cfg.mtp_heads)};
    const auto obs = demo.steps[0].obs;
    auto loss = [&]() {
      auto mem = model::encode_observation(p, obs);
      return model::compute_losses(p, model::decode_teacher_forced(p, mem, t, {}), t).total;
    };
    const std::string prefix = "policy." + std::string(model::loss_variant_name(variant)) + ".";
    for (auto& [name, x] : p.params()) {
      ad::GradCheckOptions po;
      po.eps = 1e-4;
      po.max_coords = 6;
      po.seed = ad::shape_numel(x.shape());
      rows.push_back({prefix + name, ad::grad_check(loss, x, po)});
    }
  }
  return rows;
}

CausalityReport causality_suite() {
  CausalityReport rep;
  std::mt19937_64 rng(7);
  for (auto o : {data::Ordering::kReverse, data::Ordering::kForward,
                 data::Ordering::kHybrid}) {
    auto cfg = tiny_config();
    cfg.ordering = o;
    model::Policy p(cfg, 7);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> obs(cfg.obs_dim());
    for (auto& x : obs) x = u(rng);
    auto mem = model::encode_observation(p, obs);
    const std::size_t L = cfg.max_len, lengths[] = {L};
    Tensor in = random_tensor({L, cfg.d_model}, rng);
    auto base = model::decode_inputs(p, mem, in, lengths, {});
    const auto rows_of = [&](const model::DecoderOutput& out, std::size_t r) {
      std::vector<double> v;
      const auto take = [&](const Tensor& t) {
        const std::size_t cols = t.cols();
        v.insert(v.end(), t.values().begin() + static_cast<long>(r * cols),
                 t.values().begin() + static_cast<long>((r + 1) * cols));
      };
      take(out.z);
      for (const auto& l : out.latents) take(l);
      for (const auto& a : out.actions) take(a);
      take(out.stop_logits);
      return v;
    };
    for (std::size_t j = 0; j < L; ++j) {
      auto v = in.values();
      for (std::size_t k = 0; k < cfg.d_model; ++k) v[j * cfg.d_model + k] += 0.5;
      auto pert = model::decode_inputs(p, mem, Tensor::from(in.shape(), v), lengths, {});
      ++rep.cases;
      for (std::size_t r = 0; r < j; ++r) {
        if (rows_of(pert, r) != rows_of(base, r) && rep.ok) {
          rep.ok = false;
          rep.detail = std::string(data::ordering_name(o)) + ": input " +
                       std::to_string(j) + " changed output row " + std::to_string(r);
        }
      }
      if (rows_of(pert, j) == rows_of(base, j) && rep.ok) {
        rep.ok = false;
        rep.detail = std::string(data::ordering_name(o)) + ": input " +
                     std::to_string(j) + " did not reach its own row";
      }
    }
  }
  return rep;
}

}  // namespace coa::diag
