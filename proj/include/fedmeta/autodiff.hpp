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

// Reverse-mode automatic differentiation over dense tensors.
//
// Every op records a vector-Jacobian rule that is itself written in terms of
// the same ops. Running `grad` with `create_graph = true` therefore records
// the backward pass on the tape, and the returned gradients can be
// differentiated again. This is what makes hypergradients through an unrolled
// SGD step possible.
//
// A graph belongs to the thread that built it. Independent graphs can be
// built concurrently from different threads.

#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "fedmeta/tensor.hpp"

namespace fedmeta::ad {

class Var;

/// Returns one gradient per parent. Entries for parents whose `needs` flag is
/// false may be left empty.
using BackwardFn = std::function<std::vector<Var>(
    const Var& output, const Var& grad_output, std::span<const bool> needs)>;

struct Node {
  Tensor value;
  std::vector<Var> parents;
  BackwardFn backward;
  bool requires_grad = false;
  const char* op = "leaf";
};

/// Shared handle to an immutable graph node.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<const Node> node) : node_(std::move(node)) {}

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t numel() const { return node_->value.numel(); }
  bool requires_grad() const { return node_->requires_grad; }
  const char* op() const { return node_->op; }
  const Node* node() const { return node_.get(); }

 private:
  std::shared_ptr<const Node> node_;
};

/// Leaf that gradients can flow to.
Var variable(Tensor value);
/// Leaf that never receives gradients.
Var constant(Tensor value);

std::vector<Var> variables(std::span<const Tensor> values);
std::vector<Var> constants(std::span<const Tensor> values);
std::vector<Tensor> values_of(std::span<const Var> vars);

/// Same value, cut from the graph.
Var detach(const Var& v);

/// True while ops on this thread record backward rules.
bool is_recording();

/// Disables recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Elementwise ops require identical shapes, except that either side may be
// rank-0, in which case it is expanded to the other operand's shape.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double factor);

/// (n,k) x (k,m) -> (n,m).
Var matmul(const Var& a, const Var& b);
/// op(a) x op(b) where op transposes when the flag is set.
Var matmul(const Var& a, const Var& b, bool transpose_a, bool transpose_b);

Var relu(const Var& a);
Var sigmoid(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);

Var reshape(const Var& a, Shape shape);

/// Sum of all elements, rank-0 result.
Var sum(const Var& a);
Var mean(const Var& a);
/// Rank-0 value broadcast to `shape`.
Var expand(const Var& scalar, Shape shape);

/// (n,m) -> (m), summing over rows.
Var sum_rows(const Var& a);
/// (m) -> (n,m), every row a copy of `a`.
Var expand_rows(const Var& a, std::size_t rows);
/// (n,m) -> (n), summing each row.
Var sum_cols(const Var& a);
/// (n) -> (n,m), every column a copy of `a`.
Var expand_cols(const Var& a, std::size_t cols);

/// x (n,m) + b (m) added to every row.
Var add_bias(const Var& x, const Var& bias);

/// Row-wise softmax of (n,k).
Var softmax_rows(const Var& logits);

/// Per-sample cross-entropy of (n,k) logits against integer labels; (n).
Var softmax_cross_entropy(const Var& logits, std::span<const int> labels);

/// Gradients of a single-element `output` with respect to `wrt`.
///
/// Inputs that do not influence `output` get a zero tensor of their shape.
/// With `create_graph` the returned Vars are themselves differentiable.
std::vector<Var> grad(const Var& output, std::span<const Var> wrt,
                      bool create_graph = false);

inline Var grad(const Var& output, const Var& wrt, bool create_graph = false) {
  return grad(output, std::span<const Var>(&wrt, 1), create_graph)[0];
}

}  // namespace fedmeta::ad
