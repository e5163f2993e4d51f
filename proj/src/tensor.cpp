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

#include "fedmeta/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "fedmeta/errors.hpp"

namespace fedmeta {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
  std::string out = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + ")";
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != data_.size()) {
    throw ShapeError("tensor shape " + shape_to_string(shape_) + " needs " +
                     std::to_string(shape_numel(shape_)) + " values, got " +
                     std::to_string(data_.size()));
  }
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " +
                     shape_to_string(shape_));
  }
  return shape_[axis];
}

double Tensor::item() const {
  if (data_.size() != 1) {
    throw ShapeError("item() on tensor of shape " + shape_to_string(shape_));
  }
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const& {
  Tensor copy = *this;
  return std::move(copy).reshaped(std::move(shape));
}

Tensor Tensor::reshaped(Shape shape) && {
  if (shape_numel(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_to_string(shape_) + " to " +
                     shape_to_string(shape));
  }
  shape_ = std::move(shape);
  return std::move(*this);
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

namespace {

std::size_t row_stride(const Tensor& t) {
  if (t.rank() == 0) throw ShapeError("row access on a rank-0 tensor");
  return t.numel() / std::max<std::size_t>(t.dim(0), 1);
}

}  // namespace

Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t end) {
  if (begin > end || end > t.dim(0)) {
    throw ShapeError("row slice [" + std::to_string(begin) + "," +
                     std::to_string(end) + ") out of range for " +
                     shape_to_string(t.shape()));
  }
  const std::size_t stride = row_stride(t);
  Shape shape = t.shape();
  shape[0] = end - begin;
  auto first = t.values().begin() + static_cast<std::ptrdiff_t>(begin * stride);
  auto last = t.values().begin() + static_cast<std::ptrdiff_t>(end * stride);
  return Tensor(std::move(shape), std::vector<double>(first, last));
}

Tensor gather_rows(const Tensor& t, std::span<const std::size_t> rows) {
  const std::size_t stride = row_stride(t);
  Shape shape = t.shape();
  shape[0] = rows.size();
  std::vector<double> out;
  out.reserve(rows.size() * stride);
  for (std::size_t r : rows) {
    if (r >= t.dim(0)) {
      throw ShapeError("row " + std::to_string(r) + " out of range for " +
                       shape_to_string(t.shape()));
    }
    auto first = t.values().begin() + static_cast<std::ptrdiff_t>(r * stride);
    out.insert(out.end(), first, first + static_cast<std::ptrdiff_t>(stride));
  }
  return Tensor(std::move(shape), std::move(out));
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_rows of nothing");
  Shape shape = parts.front().shape();
  if (shape.empty()) throw ShapeError("concat_rows of rank-0 tensors");
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.rank() != shape.size() ||
        !std::equal(p.shape().begin() + 1, p.shape().end(), shape.begin() + 1)) {
      throw ShapeError("concat_rows: " + shape_to_string(p.shape()) +
                       " does not match " + shape_to_string(shape));
    }
    rows += p.dim(0);
  }
  shape[0] = rows;
  std::vector<double> out;
  out.reserve(shape_numel(shape));
  for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  return Tensor(std::move(shape), std::move(out));
}

}  // namespace fedmeta
