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

#ifndef COA_OPS_HPP_
#define COA_OPS_HPP_

#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "coa/tensor.hpp"

namespace coa::ad {

// Every op checks its input shapes (Error kShape naming the op and shapes)
// and that its output is finite (Error kNonFinite). masked_fill is the one
// exception: it exists to write -inf ahead of a softmax.

Tensor matmul(const Tensor& a, const Tensor& b);  // [n,k] x [k,m]
Tensor add(const Tensor& a, const Tensor& b);     // same shape
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& a, double c);
// x [n,d] + bias [d] broadcast over rows.
Tensor add_row(const Tensor& x, const Tensor& bias);
Tensor transpose(const Tensor& a);  // 2-D
Tensor reshape(const Tensor& a, Shape shape);
// axis 0 stacks rows, axis 1 stacks columns (2-D inputs).
Tensor concat(std::span<const Tensor> parts, int axis);
Tensor slice(const Tensor& a, int axis, std::size_t begin, std::size_t end);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// Softmax over the last axis. -inf entries receive exactly zero mass.
Tensor softmax(const Tensor& a);
// Writes `value` wherever mask != 0; masked positions get zero gradient.
Tensor masked_fill(const Tensor& a, std::span<const std::uint8_t> mask,
                   double value = -std::numeric_limits<double>::infinity());
// Normalizes the last axis, then applies gamma/beta of length d.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);
Tensor gelu(const Tensor& a);  // exact erf form
// Rows of table [V,d] selected by ids -> [ids.size(), d].
Tensor embedding(const Tensor& table, std::span<const std::size_t> ids);

struct DropoutKey {
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  std::uint64_t layer = 0;
};
// Inverted dropout; identity when !training or p == 0.
Tensor dropout(const Tensor& a, double p, bool training, DropoutKey key);

// Row-weighted losses over [n,c] inputs. weight.size() == n; the result is
// sum_r w_r * sum_c f(r,c) / (c * sum_r w_r). Gradients reach both inputs.
Tensor l1_loss(const Tensor& pred, const Tensor& target,
               std::span<const double> row_weight);
Tensor mse_loss(const Tensor& pred, const Tensor& target,
                std::span<const double> row_weight);
// logits [n,1] or [n]; labels and weights of length n.
Tensor bce_with_logits(const Tensor& logits, std::span<const double> labels,
                       std::span<const double> weight);

// Packed multi-head scaled dot-product attention. Rows of q, k, v belong to
// independent segments; queries in a segment only see keys of the same
// segment. With `causal`, query i sees keys 0..i + (nk - nq).
struct AttnSegment {
  std::size_t q0 = 0, nq = 0, k0 = 0, nk = 0;
};
// Probabilities per segment, laid out [head][nq][nk].
using AttnProbs = std::vector<std::vector<double>>;
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 std::span<const AttnSegment> segments, std::size_t heads,
                 bool causal, AttnProbs* probs_out = nullptr);

}  // namespace coa::ad

#endif  // COA_OPS_HPP_
