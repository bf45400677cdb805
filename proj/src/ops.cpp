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

#include "coa/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <utility>

#include "coa/error.hpp"
#include "coa/rng.hpp"

namespace coa::ad {
namespace {

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using StridedMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using ConstStridedMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

using NodePtr = std::shared_ptr<Node>;

[[noreturn]] void shape_error(const std::string& op, const std::string& msg) {
  fail(ErrorKind::kShape, op + ": " + msg);
}

void check_finite(const char* op, const std::vector<double>& v) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      fail(ErrorKind::kNonFinite, std::string(op) + ": non-finite output");
    }
  }
}

// Wraps a computed output into a tensor and, when any input participates in
// the graph, attaches the backward closure.
Tensor finish(const char* op, Shape shape, std::vector<double> data,
              std::initializer_list<const Tensor*> inputs,
              std::function<void(Node&)> backward, bool finite = true) {
  if (finite) check_finite(op, data);
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  if (grad_enabled()) {
    for (const Tensor* t : inputs) {
      if (t->requires_grad()) node->requires_grad = true;
    }
    if (node->requires_grad) {
      for (const Tensor* t : inputs) node->parents.push_back(t->node());
      node->backward_fn = std::move(backward);
    }
  }
  return Tensor(std::move(node));
}

Tensor finish_many(const char* op, Shape shape, std::vector<double> data,
                   std::span<const Tensor> inputs,
                   std::function<void(Node&)> backward) {
  check_finite(op, data);
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  if (grad_enabled()) {
    for (const Tensor& t : inputs) {
      if (t.requires_grad()) node->requires_grad = true;
    }
    if (node->requires_grad) {
      for (const Tensor& t : inputs) node->parents.push_back(t.node());
      node->backward_fn = std::move(backward);
    }
  }
  return Tensor(std::move(node));
}

bool wants(const NodePtr& n) { return n->requires_grad; }

void require_2d(const char* op, const Tensor& t) {
  if (t.dim() != 2) {
    shape_error(op, "expected a 2-D tensor, got " + shape_str(t.shape()));
  }
}

double weight_total(const char* op, std::span<const double> w,
                    std::size_t rows) {
  if (w.size() != rows) {
    shape_error(op, "weight length " + std::to_string(w.size()) +
                        " does not match " + std::to_string(rows) + " rows");
  }
  double total = 0.0;
  for (double x : w) total += x;
  if (!(total > 0.0)) {
    fail(ErrorKind::kDomain, std::string(op) + ": all rows are masked");
  }
  return total;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d("matmul", a);
  require_2d("matmul", b);
  const std::size_t n = a.shape()[0], k = a.shape()[1], m = b.shape()[1];
  if (b.shape()[0] != k) {
    shape_error("matmul", "shape mismatch " + shape_str(a.shape()) + " x " +
                              shape_str(b.shape()));
  }
  std::vector<double> out(n * m);
  MatMap(out.data(), n, m).noalias() =
      ConstMatMap(a.data().data(), n, k) * ConstMatMap(b.data().data(), k, m);
  auto an = a.node(), bn = b.node();
  return finish("matmul", {n, m}, std::move(out), {&a, &b},
                [an, bn, n, k, m](Node& self) {
                  ConstMatMap g(self.grad.data(), n, m);
                  if (wants(an)) {
                    an->ensure_grad();
                    MatMap(an->grad.data(), n, k).noalias() +=
                        g * ConstMatMap(bn->data.data(), k, m).transpose();
                  }
                  if (wants(bn)) {
                    bn->ensure_grad();
                    MatMap(bn->grad.data(), k, m).noalias() +=
                        ConstMatMap(an->data.data(), n, k).transpose() * g;
                  }
                });
}

namespace {

Tensor binary_same_shape(const char* op, const Tensor& a, const Tensor& b,
                         int kind) {
  if (a.shape() != b.shape()) {
    shape_error(op, "shape mismatch " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
  }
  const auto& x = a.values();
  const auto& y = b.values();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = kind == 0 ? x[i] + y[i] : kind == 1 ? x[i] - y[i] : x[i] * y[i];
  }
  auto an = a.node(), bn = b.node();
  return finish(op, a.shape(), std::move(out), {&a, &b},
                [an, bn, kind](Node& self) {
                  const auto& g = self.grad;
                  if (wants(an)) {
                    an->ensure_grad();
                    for (std::size_t i = 0; i < g.size(); ++i) {
                      an->grad[i] += kind == 2 ? g[i] * bn->data[i] : g[i];
                    }
                  }
                  if (wants(bn)) {
                    bn->ensure_grad();
                    for (std::size_t i = 0; i < g.size(); ++i) {
                      bn->grad[i] += kind == 0   ? g[i]
                                     : kind == 1 ? -g[i]
                                                 : g[i] * an->data[i];
                    }
                  }
                });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_same_shape("add", a, b, 0);
}
Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_same_shape("sub", a, b, 1);
}
Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_same_shape("mul", a, b, 2);
}

Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.values());
  for (double& x : out) x *= c;
  auto an = a.node();
  return finish("scale", a.shape(), std::move(out), {&a}, [an, c](Node& self) {
    an->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      an->grad[i] += c * self.grad[i];
    }
  });
}

Tensor add_row(const Tensor& x, const Tensor& bias) {
  const std::size_t n = x.rows(), d = x.cols();
  if (bias.numel() != d) {
    shape_error("add_row", "bias " + shape_str(bias.shape()) +
                               " does not match rows of " +
                               shape_str(x.shape()));
  }
  std::vector<double> out(x.values());
  const auto& b = bias.values();
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] += b[c];
  }
  auto xn = x.node(), bn = bias.node();
  return finish("add_row", x.shape(), std::move(out), {&x, &bias},
                [xn, bn, n, d](Node& self) {
                  const auto& g = self.grad;
                  if (wants(xn)) {
                    xn->ensure_grad();
                    for (std::size_t i = 0; i < g.size(); ++i) {
                      xn->grad[i] += g[i];
                    }
                  }
                  if (wants(bn)) {
                    bn->ensure_grad();
                    for (std::size_t r = 0; r < n; ++r) {
                      for (std::size_t c = 0; c < d; ++c) {
                        bn->grad[c] += g[r * d + c];
                      }
                    }
                  }
                });
}

Tensor transpose(const Tensor& a) {
  require_2d("transpose", a);
  const std::size_t n = a.shape()[0], m = a.shape()[1];
  std::vector<double> out(n * m);
  MatMap(out.data(), m, n) = ConstMatMap(a.data().data(), n, m).transpose();
  auto an = a.node();
  return finish("transpose", {m, n}, std::move(out), {&a},
                [an, n, m](Node& self) {
                  an->ensure_grad();
                  MatMap(an->grad.data(), n, m) +=
                      ConstMatMap(self.grad.data(), m, n).transpose();
                });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    shape_error("reshape", "cannot view " + shape_str(a.shape()) + " as " +
                               shape_str(shape));
  }
  auto an = a.node();
  return finish("reshape", std::move(shape), a.values(), {&a},
                [an](Node& self) {
                  an->ensure_grad();
                  for (std::size_t i = 0; i < self.grad.size(); ++i) {
                    an->grad[i] += self.grad[i];
                  }
                });
}

Tensor concat(std::span<const Tensor> parts, int axis) {
  if (parts.empty()) shape_error("concat", "no inputs");
  if (axis != 0 && axis != 1) shape_error("concat", "axis must be 0 or 1");
  for (const auto& p : parts) require_2d("concat", p);
  const std::size_t other = axis == 0 ? parts[0].shape()[1]
                                      : parts[0].shape()[0];
  std::size_t total = 0;
  for (const auto& p : parts) {
    const std::size_t o = axis == 0 ? p.shape()[1] : p.shape()[0];
    if (o != other) {
      shape_error("concat", "mismatched extent " + shape_str(p.shape()) +
                                " vs " + shape_str(parts[0].shape()));
    }
    total += axis == 0 ? p.shape()[0] : p.shape()[1];
  }
  Shape shape = axis == 0 ? Shape{total, other} : Shape{other, total};
  std::vector<double> out(total * other);
  std::vector<NodePtr> nodes;
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    nodes.push_back(p.node());
    offsets.push_back(off);
    const auto& v = p.values();
    if (axis == 0) {
      std::copy(v.begin(), v.end(), out.begin() + off * other);
      off += p.shape()[0];
    } else {
      const std::size_t w = p.shape()[1];
      for (std::size_t r = 0; r < other; ++r) {
        std::copy(v.begin() + r * w, v.begin() + (r + 1) * w,
                  out.begin() + r * total + off);
      }
      off += w;
    }
  }
  return finish_many(
      "concat", std::move(shape), std::move(out), parts,
      [nodes, offsets, axis, other, total](Node& self) {
        for (std::size_t i = 0; i < nodes.size(); ++i) {
          const auto& n = nodes[i];
          if (!wants(n)) continue;
          n->ensure_grad();
          if (axis == 0) {
            const std::size_t base = offsets[i] * other;
            for (std::size_t j = 0; j < n->grad.size(); ++j) {
              n->grad[j] += self.grad[base + j];
            }
          } else {
            const std::size_t w = n->shape[1];
            for (std::size_t r = 0; r < other; ++r) {
              for (std::size_t c = 0; c < w; ++c) {
                n->grad[r * w + c] += self.grad[r * total + offsets[i] + c];
              }
            }
          }
        }
      });
}

Tensor slice(const Tensor& a, int axis, std::size_t begin, std::size_t end) {
  require_2d("slice", a);
  if (axis != 0 && axis != 1) shape_error("slice", "axis must be 0 or 1");
  const std::size_t n = a.shape()[0], m = a.shape()[1];
  const std::size_t extent = axis == 0 ? n : m;
  if (begin > end || end > extent) {
    shape_error("slice", "range [" + std::to_string(begin) + "," +
                             std::to_string(end) + ") out of " +
                             shape_str(a.shape()));
  }
  const std::size_t len = end - begin;
  Shape shape = axis == 0 ? Shape{len, m} : Shape{n, len};
  std::vector<double> out(len * (axis == 0 ? m : n));
  const auto& v = a.values();
  if (axis == 0) {
    std::copy(v.begin() + begin * m, v.begin() + end * m, out.begin());
  } else {
    for (std::size_t r = 0; r < n; ++r) {
      std::copy(v.begin() + r * m + begin, v.begin() + r * m + end,
                out.begin() + r * len);
    }
  }
  auto an = a.node();
  return finish("slice", std::move(shape), std::move(out), {&a},
                [an, axis, begin, len, n, m](Node& self) {
                  an->ensure_grad();
                  if (axis == 0) {
                    for (std::size_t i = 0; i < self.grad.size(); ++i) {
                      an->grad[begin * m + i] += self.grad[i];
                    }
                  } else {
                    for (std::size_t r = 0; r < n; ++r) {
                      for (std::size_t c = 0; c < len; ++c) {
                        an->grad[r * m + begin + c] += self.grad[r * len + c];
                      }
                    }
                  }
                });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double x : a.values()) s += x;
  auto an = a.node();
  return finish("sum", {1}, {s}, {&a}, [an](Node& self) {
    an->ensure_grad();
    for (double& g : an->grad) g += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) shape_error("mean", "empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor softmax(const Tensor& a) {
  if (a.dim() == 0 || a.numel() == 0) shape_error("softmax", "empty tensor");
  const std::size_t d = a.shape().back();
  const std::size_t n = a.numel() / d;
  const auto& x = a.values();
  std::vector<double> y(x.size(), 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = x.data() + r * d;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < d; ++c) mx = std::max(mx, row[c]);
    if (!std::isfinite(mx)) {
      fail(ErrorKind::kNonFinite, "softmax: row " + std::to_string(r) +
                                      " has no finite entry");
    }
    double total = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double e = std::exp(row[c] - mx);
      y[r * d + c] = e;
      total += e;
    }
    for (std::size_t c = 0; c < d; ++c) y[r * d + c] /= total;
  }
  auto an = a.node();
  return finish("softmax", a.shape(), std::move(y), {&a},
                [an, n, d](Node& self) {
                  an->ensure_grad();
                  const auto& y = self.data;
                  for (std::size_t r = 0; r < n; ++r) {
                    double dot = 0.0;
                    for (std::size_t c = 0; c < d; ++c) {
                      dot += self.grad[r * d + c] * y[r * d + c];
                    }
                    for (std::size_t c = 0; c < d; ++c) {
                      an->grad[r * d + c] +=
                          y[r * d + c] * (self.grad[r * d + c] - dot);
                    }
                  }
                });
}

Tensor masked_fill(const Tensor& a, std::span<const std::uint8_t> mask,
                   double value) {
  if (mask.size() != a.numel()) {
    shape_error("masked_fill", "mask of " + std::to_string(mask.size()) +
                                   " entries for " + shape_str(a.shape()));
  }
  std::vector<double> out(a.values());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (mask[i]) out[i] = value;
  }
  std::vector<std::uint8_t> m(mask.begin(), mask.end());
  auto an = a.node();
  return finish(
      "masked_fill", a.shape(), std::move(out), {&a},
      [an, m = std::move(m)](Node& self) {
        an->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          if (!m[i]) an->grad[i] += self.grad[i];
        }
      },
      /*finite=*/false);
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps) {
  if (x.dim() == 0) shape_error("layer_norm", "scalar input");
  const std::size_t d = x.shape().back();
  if (gamma.numel() != d || beta.numel() != d) {
    shape_error("layer_norm", "affine params " + shape_str(gamma.shape()) +
                                  "/" + shape_str(beta.shape()) +
                                  " for input " + shape_str(x.shape()));
  }
  const std::size_t n = x.numel() / d;
  const auto& v = x.values();
  const auto& g = gamma.values();
  const auto& b = beta.values();
  std::vector<double> xhat(v.size()), rstd(n), out(v.size());
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = v.data() + r * d;
    double mu = 0.0;
    for (std::size_t c = 0; c < d; ++c) mu += row[c];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<double>(d);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) {
      xhat[r * d + c] = (row[c] - mu) * rstd[r];
      out[r * d + c] = xhat[r * d + c] * g[c] + b[c];
    }
  }
  auto xn = x.node(), gn = gamma.node(), bn = beta.node();
  return finish(
      "layer_norm", x.shape(), std::move(out), {&x, &gamma, &beta},
      [xn, gn, bn, xhat = std::move(xhat), rstd = std::move(rstd), n,
       d](Node& self) {
        const auto& dy = self.grad;
        if (wants(gn)) gn->ensure_grad();
        if (wants(bn)) bn->ensure_grad();
        if (wants(xn)) xn->ensure_grad();
        std::vector<double> dxhat(d);
        for (std::size_t r = 0; r < n; ++r) {
          double m1 = 0.0, m2 = 0.0;
          for (std::size_t c = 0; c < d; ++c) {
            const std::size_t i = r * d + c;
            if (wants(gn)) gn->grad[c] += dy[i] * xhat[i];
            if (wants(bn)) bn->grad[c] += dy[i];
            dxhat[c] = dy[i] * gn->data[c];
            m1 += dxhat[c];
            m2 += dxhat[c] * xhat[i];
          }
          if (!wants(xn)) continue;
          m1 /= static_cast<double>(d);
          m2 /= static_cast<double>(d);
          for (std::size_t c = 0; c < d; ++c) {
            const std::size_t i = r * d + c;
            xn->grad[i] += rstd[r] * (dxhat[c] - m1 - xhat[i] * m2);
          }
        }
      });
}

Tensor gelu(const Tensor& a) {
  const auto& x = a.values();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = 0.5 * x[i] * (1.0 + std::erf(x[i] * std::numbers::sqrt2 / 2.0));
  }
  auto an = a.node();
  return finish("gelu", a.shape(), std::move(out), {&a}, [an](Node& self) {
    an->ensure_grad();
    const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi *
                                std::numbers::sqrt2;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double v = an->data[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      an->grad[i] += self.grad[i] * (cdf + v * pdf);
    }
  });
}

Tensor embedding(const Tensor& table, std::span<const std::size_t> ids) {
  require_2d("embedding", table);
  const std::size_t vocab = table.shape()[0], d = table.shape()[1];
  std::vector<double> out(ids.size() * d);
  const auto& t = table.values();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= vocab) {
      shape_error("embedding", "id " + std::to_string(ids[i]) +
                                   " out of table " + shape_str(table.shape()));
    }
    std::copy(t.begin() + ids[i] * d, t.begin() + (ids[i] + 1) * d,
              out.begin() + i * d);
  }
  std::vector<std::size_t> idv(ids.begin(), ids.end());
  auto tn = table.node();
  return finish("embedding", {ids.size(), d}, std::move(out), {&table},
                [tn, idv = std::move(idv), d](Node& self) {
                  tn->ensure_grad();
                  for (std::size_t i = 0; i < idv.size(); ++i) {
                    for (std::size_t c = 0; c < d; ++c) {
                      tn->grad[idv[i] * d + c] += self.grad[i * d + c];
                    }
                  }
                });
}

Tensor dropout(const Tensor& a, double p, bool training, DropoutKey key) {
  if (p < 0.0 || p >= 1.0) {
    fail(ErrorKind::kDomain, "dropout: p must lie in [0,1)");
  }
  if (!training || p == 0.0) return a;
  const std::uint64_t stream =
      hash_combine(hash_combine(key.seed, key.step), key.layer);
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> factor(a.numel());
  for (std::size_t i = 0; i < factor.size(); ++i) {
    factor[i] = counter_uniform(stream, i) >= p ? keep_scale : 0.0;
  }
  std::vector<double> out(a.values());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= factor[i];
  auto an = a.node();
  return finish("dropout", a.shape(), std::move(out), {&a},
                [an, factor = std::move(factor)](Node& self) {
                  an->ensure_grad();
                  for (std::size_t i = 0; i < self.grad.size(); ++i) {
                    an->grad[i] += self.grad[i] * factor[i];
                  }
                });
}

namespace {

// kind 0: |p - t|, kind 1: (p - t)^2
Tensor row_weighted_loss(const char* op, const Tensor& pred,
                         const Tensor& target, std::span<const double> w,
                         int kind) {
  if (pred.shape() != target.shape()) {
    shape_error(op, "prediction " + shape_str(pred.shape()) + " vs target " +
                        shape_str(target.shape()));
  }
  const std::size_t n = pred.rows(), c = pred.cols();
  const double denom = weight_total(op, w, n) * static_cast<double>(c);
  const auto& p = pred.values();
  const auto& t = target.values();
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    if (w[r] == 0.0) continue;
    double row = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double diff = p[r * c + j] - t[r * c + j];
      row += kind == 0 ? std::abs(diff) : diff * diff;
    }
    total += w[r] * row;
  }
  std::vector<double> wv(w.begin(), w.end());
  auto pn = pred.node(), tn = target.node();
  return finish(op, {1}, {total / denom}, {&pred, &target},
                [pn, tn, wv = std::move(wv), n, c, denom, kind](Node& self) {
                  const double g = self.grad[0] / denom;
                  if (wants(pn)) pn->ensure_grad();
                  if (wants(tn)) tn->ensure_grad();
                  for (std::size_t r = 0; r < n; ++r) {
                    if (wv[r] == 0.0) continue;
                    for (std::size_t j = 0; j < c; ++j) {
                      const std::size_t i = r * c + j;
                      const double diff = pn->data[i] - tn->data[i];
                      const double d =
                          kind == 0 ? (diff > 0.0) - (diff < 0.0) : 2.0 * diff;
                      const double gi = g * wv[r] * d;
                      if (wants(pn)) pn->grad[i] += gi;
                      if (wants(tn)) tn->grad[i] -= gi;
                    }
                  }
                });
}

double softplus(double x) {
  if (x == std::numeric_limits<double>::infinity()) return x;
  if (x == -std::numeric_limits<double>::infinity()) return 0.0;
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor l1_loss(const Tensor& pred, const Tensor& target,
               std::span<const double> row_weight) {
  return row_weighted_loss("l1_loss", pred, target, row_weight, 0);
}

Tensor mse_loss(const Tensor& pred, const Tensor& target,
                std::span<const double> row_weight) {
  return row_weighted_loss("mse_loss", pred, target, row_weight, 1);
}

Tensor bce_with_logits(const Tensor& logits, std::span<const double> labels,
                       std::span<const double> weight) {
  const std::size_t n = logits.numel();
  if (labels.size() != n) {
    shape_error("bce_with_logits", "labels of length " +
                                       std::to_string(labels.size()) +
                                       " for logits " +
                                       shape_str(logits.shape()));
  }
  const double denom = weight_total("bce_with_logits", weight, n);
  const auto& x = logits.values();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (weight[i] == 0.0) continue;
    // y*softplus(-x) + (1-y)*softplus(x); zero coefficients skip the term so
    // saturated logits with matching labels give exactly 0.
    double l = 0.0;
    if (labels[i] != 0.0) l += labels[i] * softplus(-x[i]);
    if (labels[i] != 1.0) l += (1.0 - labels[i]) * softplus(x[i]);
    total += weight[i] * l;
  }
  std::vector<double> y(labels.begin(), labels.end());
  std::vector<double> w(weight.begin(), weight.end());
  auto ln = logits.node();
  return finish("bce_with_logits", {1}, {total / denom}, {&logits},
                [ln, y = std::move(y), w = std::move(w), denom](Node& self) {
                  ln->ensure_grad();
                  const double g = self.grad[0] / denom;
                  for (std::size_t i = 0; i < y.size(); ++i) {
                    if (w[i] == 0.0) continue;
                    ln->grad[i] += g * w[i] * (sigmoid(ln->data[i]) - y[i]);
                  }
                });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 std::span<const AttnSegment> segments, std::size_t heads,
                 bool causal, AttnProbs* probs_out) {
  require_2d("attention", q);
  require_2d("attention", k);
  require_2d("attention", v);
  const std::size_t d = q.shape()[1];
  if (k.shape()[1] != d || v.shape()[1] != d || k.shape()[0] != v.shape()[0]) {
    shape_error("attention", "q " + shape_str(q.shape()) + ", k " +
                                 shape_str(k.shape()) + ", v " +
                                 shape_str(v.shape()));
  }
  if (heads == 0 || d % heads != 0) {
    shape_error("attention", "width " + std::to_string(d) +
                                 " not divisible by " + std::to_string(heads) +
                                 " heads");
  }
  const std::size_t nq_total = q.shape()[0], nk_total = k.shape()[0];
  for (const auto& s : segments) {
    if (s.q0 + s.nq > nq_total || s.k0 + s.nk > nk_total || s.nk == 0 ||
        (causal && s.nk < s.nq)) {
      shape_error("attention", "segment out of range");
    }
  }
  const std::size_t dh = d / heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(d));
  std::vector<double> out(nq_total * d, 0.0);
  AttnProbs probs(segments.size());

  for (std::size_t si = 0; si < segments.size(); ++si) {
    const auto& s = segments[si];
    auto& p = probs[si];
    p.assign(heads * s.nq * s.nk, 0.0);
    for (std::size_t h = 0; h < heads; ++h) {
      ConstStridedMap qh(q.data().data() + s.q0 * d + h * dh, s.nq, dh,
                         stride);
      ConstStridedMap kh(k.data().data() + s.k0 * d + h * dh, s.nk, dh,
                         stride);
      ConstStridedMap vh(v.data().data() + s.k0 * d + h * dh, s.nk, dh,
                         stride);
      RowMat scores = (qh * kh.transpose()) * inv_scale;
      MatMap ph(p.data() + h * s.nq * s.nk, s.nq, s.nk);
      for (std::size_t i = 0; i < s.nq; ++i) {
        const std::size_t visible = causal ? i + (s.nk - s.nq) + 1 : s.nk;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < visible; ++j) mx = std::max(mx, scores(i, j));
        double total = 0.0;
        for (std::size_t j = 0; j < visible; ++j) {
          ph(i, j) = std::exp(scores(i, j) - mx);
          total += ph(i, j);
        }
        for (std::size_t j = 0; j < visible; ++j) ph(i, j) /= total;
      }
      StridedMap oh(out.data() + s.q0 * d + h * dh, s.nq, dh, stride);
      oh.noalias() = ph * vh;
    }
  }
  if (probs_out) *probs_out = probs;

  std::vector<AttnSegment> segs(segments.begin(), segments.end());
  auto qn = q.node(), kn = k.node(), vn = v.node();
  return finish(
      "attention", {nq_total, d}, std::move(out), {&q, &k, &v},
      [qn, kn, vn, segs = std::move(segs), probs = std::move(probs), heads, dh,
       d, inv_scale](Node& self) {
        const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(d));
        if (wants(qn)) qn->ensure_grad();
        if (wants(kn)) kn->ensure_grad();
        if (wants(vn)) vn->ensure_grad();
        for (std::size_t si = 0; si < segs.size(); ++si) {
          const auto& s = segs[si];
          for (std::size_t h = 0; h < heads; ++h) {
            ConstMatMap ph(probs[si].data() + h * s.nq * s.nk, s.nq, s.nk);
            ConstStridedMap go(self.grad.data() + s.q0 * d + h * dh, s.nq, dh,
                               stride);
            ConstStridedMap qh(qn->data.data() + s.q0 * d + h * dh, s.nq, dh,
                               stride);
            ConstStridedMap kh(kn->data.data() + s.k0 * d + h * dh, s.nk, dh,
                               stride);
            ConstStridedMap vh(vn->data.data() + s.k0 * d + h * dh, s.nk, dh,
                               stride);
            if (wants(vn)) {
              StridedMap gv(vn->grad.data() + s.k0 * d + h * dh, s.nk, dh,
                            stride);
              gv.noalias() += ph.transpose() * go;
            }
            if (!wants(qn) && !wants(kn)) continue;
            RowMat dp = go * vh.transpose();
            RowMat ds(s.nq, s.nk);
            for (std::size_t i = 0; i < s.nq; ++i) {
              double dot = 0.0;
              for (std::size_t j = 0; j < s.nk; ++j) dot += dp(i, j) * ph(i, j);
              for (std::size_t j = 0; j < s.nk; ++j) {
                ds(i, j) = ph(i, j) * (dp(i, j) - dot) * inv_scale;
              }
            }
            if (wants(qn)) {
              StridedMap gq(qn->grad.data() + s.q0 * d + h * dh, s.nq, dh,
                            stride);
              gq.noalias() += ds * kh;
            }
            if (wants(kn)) {
              StridedMap gk(kn->grad.data() + s.k0 * d + h * dh, s.nk, dh,
                            stride);
              gk.noalias() += ds.transpose() * qh;
            }
          }
        }
      });
}

}  // namespace coa::ad
