// Copyright 2026 The fedmeta Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "fedmeta/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>

#include "fedmeta/errors.hpp"

namespace fedmeta::ad {

namespace {

thread_local bool g_recording = true;

class RecordingScope {
 public:
  explicit RecordingScope(bool on) : previous_(g_recording) { g_recording = on; }
  ~RecordingScope() { g_recording = previous_; }
  RecordingScope(const RecordingScope&) = delete;
  RecordingScope& operator=(const RecordingScope&) = delete;

 private:
  bool previous_;
};

Var make_node(Tensor value, std::vector<Var> parents, BackwardFn backward,
              const char* op) {
  if (!value.all_finite()) {
    throw NumericError(std::string(op) + " produced a non-finite value");
  }
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = op;
  const bool any = std::any_of(parents.begin(), parents.end(),
                               [](const Var& p) { return p.requires_grad(); });
  if (g_recording && any) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::move(backward);
  }
  return Var(std::move(node));
}

void require_rank(const Var& v, std::size_t rank, const char* op) {
  if (v.value().rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                     ", got " + shape_to_string(v.shape()));
  }
}

std::pair<Var, Var> promote(const Var& a, const Var& b, const char* op) {
  if (a.shape() == b.shape()) return {a, b};
  if (a.value().rank() == 0) return {expand(a, b.shape()), b};
  if (b.value().rank() == 0) return {a, expand(b, a.shape())};
  throw ShapeError(std::string(op) + ": shapes " + shape_to_string(a.shape()) +
                   " and " + shape_to_string(b.shape()) + " do not conform");
}

template <typename F>
Tensor map_binary(const Tensor& a, const Tensor& b, F f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = f(a[i], b[i]);
  return out;
}

template <typename F>
Tensor map_unary(const Tensor& a, F f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = f(a[i]);
  return out;
}

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

}  // namespace

bool is_recording() { return g_recording; }

NoGradGuard::NoGradGuard() : previous_(g_recording) { g_recording = false; }
NoGradGuard::~NoGradGuard() { g_recording = previous_; }

Var variable(Tensor value) {
  if (!value.all_finite()) throw NumericError("variable with non-finite value");
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var(std::move(node));
}

Var constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = "constant";
  return Var(std::move(node));
}

std::vector<Var> variables(std::span<const Tensor> values) {
  std::vector<Var> out;
  out.reserve(values.size());
  for (const auto& v : values) out.push_back(variable(v));
  return out;
}

std::vector<Var> constants(std::span<const Tensor> values) {
  std::vector<Var> out;
  out.reserve(values.size());
  for (const auto& v : values) out.push_back(constant(v));
  return out;
}

std::vector<Tensor> values_of(std::span<const Var> vars) {
  std::vector<Tensor> out;
  out.reserve(vars.size());
  for (const auto& v : vars) out.push_back(v.value());
  return out;
}

Var detach(const Var& v) { return constant(v.value()); }

Var add(const Var& a_in, const Var& b_in) {
  auto [a, b] = promote(a_in, b_in, "add");
  return make_node(
      map_binary(a.value(), b.value(), std::plus<>()), {a, b},
      [](const Var&, const Var& g, std::span<const bool>) {
        return std::vector<Var>{g, g};
      },
      "add");
}

Var sub(const Var& a_in, const Var& b_in) {
  auto [a, b] = promote(a_in, b_in, "sub");
  return make_node(
      map_binary(a.value(), b.value(), std::minus<>()), {a, b},
      [](const Var&, const Var& g, std::span<const bool> needs) {
        return std::vector<Var>{g, needs[1] ? neg(g) : Var()};
      },
      "sub");
}

Var mul(const Var& a_in, const Var& b_in) {
  auto [a, b] = promote(a_in, b_in, "mul");
  return make_node(
      map_binary(a.value(), b.value(), std::multiplies<>()), {a, b},
      [a, b](const Var&, const Var& g, std::span<const bool> needs) {
        return std::vector<Var>{needs[0] ? mul(g, b) : Var(),
                                needs[1] ? mul(g, a) : Var()};
      },
      "mul");
}

Var div(const Var& a_in, const Var& b_in) {
  auto [a, b] = promote(a_in, b_in, "div");
  const auto& bv = b.value();
  if (std::any_of(bv.values().begin(), bv.values().end(),
                  [](double v) { return v == 0.0; })) {
    throw NumericError("div: division by zero");
  }
  return make_node(
      map_binary(a.value(), bv, std::divides<>()), {a, b},
      [b](const Var& out, const Var& g, std::span<const bool> needs) {
        Var ga = needs[0] ? div(g, b) : Var();
        Var gb = needs[1] ? neg(mul(g, div(out, b))) : Var();
        return std::vector<Var>{ga, gb};
      },
      "div");
}

Var neg(const Var& a) {
  return make_node(
      map_unary(a.value(), std::negate<>()), {a},
      [](const Var&, const Var& g, std::span<const bool>) {
        return std::vector<Var>{neg(g)};
      },
      "neg");
}

Var scale(const Var& a, double factor) {
  return make_node(
      map_unary(a.value(), [factor](double v) { return v * factor; }), {a},
      [factor](const Var&, const Var& g, std::span<const bool>) {
        return std::vector<Var>{scale(g, factor)};
      },
      "scale");
}

Var matmul(const Var& a, const Var& b) { return matmul(a, b, false, false); }

Var matmul(const Var& a, const Var& b, bool ta, bool tb) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t ar = a.shape()[0], ac = a.shape()[1];
  const std::size_t br = b.shape()[0], bc = b.shape()[1];
  const std::size_t n = ta ? ac : ar, k = ta ? ar : ac;
  const std::size_t k2 = tb ? bc : br, m = tb ? br : bc;
  if (k != k2) {
    throw ShapeError("matmul: inner dimensions differ for " +
                     shape_to_string(a.shape()) + (ta ? "^T" : "") + " x " +
                     shape_to_string(b.shape()) + (tb ? "^T" : ""));
  }
  Tensor out(Shape{n, m});
  {
    ConstMap am(a.value().data().data(), static_cast<Eigen::Index>(ar),
                static_cast<Eigen::Index>(ac));
    ConstMap bm(b.value().data().data(), static_cast<Eigen::Index>(br),
                static_cast<Eigen::Index>(bc));
    MutMap cm(out.data().data(), static_cast<Eigen::Index>(n),
              static_cast<Eigen::Index>(m));
    if (!ta && !tb) {
      cm.noalias() = am * bm;
    } else if (ta && !tb) {
      cm.noalias() = am.transpose() * bm;
    } else if (!ta && tb) {
      cm.noalias() = am * bm.transpose();
    } else {
      cm.noalias() = am.transpose() * bm.transpose();
    }
  }
  // C = op(A) op(B); each adjoint is again a (possibly transposed) product.
  return make_node(
      std::move(out), {a, b},
      [a, b, ta, tb](const Var&, const Var& g, std::span<const bool> needs) {
        Var ga, gb;
        if (needs[0]) ga = ta ? matmul(b, g, tb, true) : matmul(g, b, false, !tb);
        if (needs[1]) gb = tb ? matmul(g, a, true, ta) : matmul(a, g, !ta, false);
        return std::vector<Var>{ga, gb};
      },
      "matmul");
}

Var relu(const Var& a) {
  Tensor mask = map_unary(a.value(), [](double v) { return v > 0.0 ? 1.0 : 0.0; });
  Tensor out = map_unary(a.value(), [](double v) { return v > 0.0 ? v : 0.0; });
  return make_node(
      std::move(out), {a},
      [mask = std::move(mask)](const Var&, const Var& g, std::span<const bool>) {
        return std::vector<Var>{mul(g, constant(mask))};
      },
      "relu");
}

Var sigmoid(const Var& a) {
  Tensor out = map_unary(a.value(), [](double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
  return make_node(
      std::move(out), {a},
      [](const Var& s, const Var& g, std::span<const bool>) {
        return std::vector<Var>{mul(g, sub(s, mul(s, s)))};
      },
      "sigmoid");
}

Var exp(const Var& a) {
  return make_node(
      map_unary(a.value(), [](double v) { return std::exp(v); }), {a},
      [](const Var& out, const Var& g, std::span<const bool>) {
        return std::vector<Var>{mul(g, out)};
      },
      "exp");
}

Var log(const Var& a) {
  const auto& v = a.value().values();
  if (std::any_of(v.begin(), v.end(), [](double x) { return !(x > 0.0); })) {
    throw NumericError("log: argument must be positive");
  }
  return make_node(
      map_unary(a.value(), [](double x) { return std::log(x); }), {a},
      [a](const Var&, const Var& g, std::span<const bool>) {
        return std::vector<Var>{div(g, a)};
      },
      "log");
}

Var reshape(const Var& a, Shape shape) {
  Shape original = a.shape();
  return make_node(
      a.value().reshaped(std::move(shape)), {a},
      [original = std::move(original)](const Var&, const Var& g,
                                       std::span<const bool>) {
        return std::vector<Var>{reshape(g, original)};
      },
      "reshape");
}

Var sum(const Var& a) {
  double total = 0.0;
  for (double v : a.value().values()) total += v;
  Shape shape = a.shape();
  return make_node(
      Tensor::scalar(total), {a},
      [shape = std::move(shape)](const Var&, const Var& g, std::span<const bool>) {
        return std::vector<Var>{expand(g, shape)};
      },
      "sum");
}

Var mean(const Var& a) {
  if (a.numel() == 0) throw ShapeError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Var expand(const Var& scalar, Shape shape) {
  require_rank(scalar, 0, "expand");
  return make_node(
      Tensor(std::move(shape), scalar.value().item()), {scalar},
      [](const Var&, const Var& g, std::span<const bool>) {
        return std::vector<Var>{sum(g)};
      },
      "expand");
}

Var sum_rows(const Var& a) {
  require_rank(a, 2, "sum_rows");
  const std::size_t n = a.shape()[0], m = a.shape()[1];
  Tensor out(Shape{m});
  const auto& v = a.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[j] += v[i * m + j];
  return make_node(
      std::move(out), {a},
      [n](const Var&, const Var& g, std::span<const bool>) {
        return std::vector<Var>{expand_rows(g, n)};
      },
      "sum_rows");
}

Var expand_rows(const Var& a, std::size_t rows) {
  require_rank(a, 1, "expand_rows");
  const std::size_t m = a.shape()[0];
  Tensor out(Shape{rows, m});
  for (std::size_t i = 0; i < rows; ++i)
    std::copy(a.value().values().begin(), a.value().values().end(),
              out.data().begin() + static_cast<std::ptrdiff_t>(i * m));
  return make_node(
      std::move(out), {a},
      [](const Var&, const Var& g, std::span<const bool>) {
        return std::vector<Var>{sum_rows(g)};
      },
      "expand_rows");
}

Var sum_cols(const Var& a) {
  require_rank(a, 2, "sum_cols");
  const std::size_t n = a.shape()[0], m = a.shape()[1];
  Tensor out(Shape{n});
  const auto& v = a.value();
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += v[i * m + j];
    out[i] = s;
  }
  return make_node(
      std::move(out), {a},
      [m](const Var&, const Var& g, std::span<const bool>) {
        return std::vector<Var>{expand_cols(g, m)};
      },
      "sum_cols");
}

Var expand_cols(const Var& a, std::size_t cols) {
  require_rank(a, 1, "expand_cols");
  const std::size_t n = a.shape()[0];
  Tensor out(Shape{n, cols});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] = a.value()[i];
  return make_node(
      std::move(out), {a},
      [](const Var&, const Var& g, std::span<const bool>) {
        return std::vector<Var>{sum_cols(g)};
      },
      "expand_cols");
}

Var add_bias(const Var& x, const Var& bias) {
  require_rank(x, 2, "add_bias");
  require_rank(bias, 1, "add_bias");
  if (x.shape()[1] != bias.shape()[0]) {
    throw ShapeError("add_bias: " + shape_to_string(x.shape()) + " vs bias " +
                     shape_to_string(bias.shape()));
  }
  return add(x, expand_rows(bias, x.shape()[0]));
}

Var softmax_rows(const Var& logits) {
  require_rank(logits, 2, "softmax_rows");
  const std::size_t n = logits.shape()[0], k = logits.shape()[1];
  const auto& z = logits.value();
  Tensor out(logits.shape());
  for (std::size_t i = 0; i < n; ++i) {
    double top = z[i * k];
    for (std::size_t j = 1; j < k; ++j) top = std::max(top, z[i * k + j]);
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      out[i * k + j] = std::exp(z[i * k + j] - top);
      total += out[i * k + j];
    }
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] /= total;
  }
  // dx = s*g - s*rowsum(s*g)
  return make_node(
      std::move(out), {logits},
      [k](const Var& s, const Var& g, std::span<const bool>) {
        Var sg = mul(s, g);
        return std::vector<Var>{sub(sg, mul(s, expand_cols(sum_cols(sg), k)))};
      },
      "softmax_rows");
}

Var softmax_cross_entropy(const Var& logits, std::span<const int> labels) {
  require_rank(logits, 2, "softmax_cross_entropy");
  const std::size_t n = logits.shape()[0], k = logits.shape()[1];
  if (labels.size() != n) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(n) + " rows");
  }
  Tensor onehot(Shape{n, k});
  Tensor out(Shape{n});
  const auto& z = logits.value();
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
      throw ContractError("softmax_cross_entropy: label " +
                          std::to_string(labels[i]) + " outside [0," +
                          std::to_string(k) + ")");
    }
    double top = z[i * k];
    for (std::size_t j = 1; j < k; ++j) top = std::max(top, z[i * k + j]);
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) total += std::exp(z[i * k + j] - top);
    const auto y = static_cast<std::size_t>(labels[i]);
    out[i] = top + std::log(total) - z[i * k + y];
    onehot[i * k + y] = 1.0;
  }
  return make_node(
      std::move(out), {logits},
      [logits, k, onehot = std::move(onehot)](const Var&, const Var& g,
                                              std::span<const bool>) {
        Var residual = sub(softmax_rows(logits), constant(onehot));
        return std::vector<Var>{mul(expand_cols(g, k), residual)};
      },
      "softmax_cross_entropy");
}

std::vector<Var> grad(const Var& output, std::span<const Var> wrt,
                      bool create_graph) {
  if (!output.defined() || output.numel() != 1) {
    throw ContractError("grad: output must be a single-element tensor, got " +
                        (output.defined() ? shape_to_string(output.shape())
                                          : std::string("undefined")));
  }

  std::unordered_set<const Node*> targets;
  for (const auto& w : wrt) {
    if (w.defined() && w.requires_grad()) targets.insert(w.node());
  }

  // Post-order over nodes that require grad: parents before children.
  std::vector<Var> order;
  std::unordered_map<const Node*, bool> relevant;
  if (output.requires_grad() && !targets.empty()) {
    std::vector<std::pair<Var, std::size_t>> stack{{output, 0}};
    std::unordered_set<const Node*> seen{output.node()};
    while (!stack.empty()) {
      auto& [var, next] = stack.back();
      const auto& parents = var.node()->parents;
      if (next < parents.size()) {
        const Var parent = parents[next++];
        if (parent.requires_grad() && seen.insert(parent.node()).second) {
          stack.emplace_back(parent, 0);
        }
        continue;
      }
      bool r = targets.count(var.node()) > 0;
      for (const auto& p : parents) {
        if (p.requires_grad() && relevant[p.node()]) r = true;
      }
      relevant[var.node()] = r;
      order.push_back(var);
      stack.pop_back();
    }
  }

  RecordingScope scope(create_graph);
  std::unordered_map<const Node*, Var> grads;
  if (!order.empty() && relevant[output.node()]) {
    grads[output.node()] = constant(Tensor(output.shape(), 1.0));
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const Node* node = it->node();
    if (!relevant[node] || !node->backward) continue;
    auto found = grads.find(node);
    if (found == grads.end()) continue;
    const Var g = found->second;

    const auto& parents = node->parents;
    std::unique_ptr<bool[]> needs(new bool[parents.size()]);
    bool any = false;
    for (std::size_t i = 0; i < parents.size(); ++i) {
      needs[i] = parents[i].requires_grad() && relevant[parents[i].node()];
      any = any || needs[i];
    }
    if (!any) continue;

    auto parent_grads =
        node->backward(*it, g, std::span<const bool>(needs.get(), parents.size()));
    for (std::size_t i = 0; i < parents.size(); ++i) {
      if (!needs[i] || !parent_grads[i].defined()) continue;
      auto [slot, inserted] = grads.try_emplace(parents[i].node(), parent_grads[i]);
      if (!inserted) slot->second = add(slot->second, parent_grads[i]);
    }
    // Interior gradients are no longer needed once propagated.
    if (targets.count(node) == 0) grads.erase(node);
  }

  std::vector<Var> result;
  result.reserve(wrt.size());
  for (const auto& w : wrt) {
    auto found = w.defined() ? grads.find(w.node()) : grads.end();
    if (found == grads.end()) {
      result.push_back(constant(Tensor(w.defined() ? w.shape() : Shape{}, 0.0)));
    } else {
      result.push_back(create_graph ? found->second : detach(found->second));
    }
  }
  return result;
}

}  // namespace fedmeta::ad
