/*
 * Copyright 2026 The OSMD Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include "osmd/tensor.hpp"

#include <cmath>
#include <sstream>

#include "osmd/common.hpp"

namespace osmd {

Tensor::Tensor(std::vector<int64_t> shape) : shape_(std::move(shape)) {
  int64_t n = 1;
  for (int64_t d : shape_) {
    if (d < 0) throw StructuralError("tensor dimension must be non-negative");
    n *= d;
  }
  data_.assign(static_cast<size_t>(n), 0.0);
}

Tensor Tensor::full(std::vector<int64_t> shape, double v) {
  Tensor t(std::move(shape));
  t.fill(v);
  return t;
}

void Tensor::fill(double v) {
  for (double& x : data_) x = v;
}

Tensor& Tensor::operator+=(const Tensor& o) {
  if (!same_shape(o)) throw StructuralError("tensor add: shape mismatch " + shape_str() + " vs " + o.shape_str());
  for (size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
  return *this;
}

Tensor& Tensor::add_scaled(const Tensor& o, double s) {
  if (!same_shape(o)) throw StructuralError("tensor add_scaled: shape mismatch " + shape_str() + " vs " + o.shape_str());
  for (size_t i = 0; i < data_.size(); ++i) data_[i] += s * o.data_[i];
  return *this;
}

Tensor& Tensor::scale(double s) {
  for (double& x : data_) x *= s;
  return *this;
}

Tensor Tensor::reshaped(std::vector<int64_t> shape) const {
  Tensor t;
  t.shape_ = std::move(shape);
  int64_t n = 1;
  for (int64_t d : t.shape_) n *= d;
  if (n != size()) throw StructuralError("reshape: element count mismatch");
  t.data_ = data_;
  return t;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << ",";
    os << shape_[i];
  }
  os << "]";
  return os.str();
}

bool Tensor::all_finite() const {
  for (double x : data_)
    if (!std::isfinite(x)) return false;
  return true;
}

double Tensor::abs_mean() const {
  if (data_.empty()) return 0.0;
  double s = 0.0;
  for (double x : data_) s += std::fabs(x);
  return s / static_cast<double>(data_.size());
}

double Tensor::l2_norm() const {
  double s = 0.0;
  for (double x : data_) s += x * x;
  return std::sqrt(s);
}

}  // namespace osmd
