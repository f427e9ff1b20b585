// Copyright 2026 The Forge Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cstddef>
#include <initializer_list>
#include <memory>
#include <vector>

#include "forge/common.hpp"
#include "forge/rng.hpp"

namespace forge {

// Dense row-major matrix of reals. Rank is fixed at 2; vectors are (1,n) or
// (n,1), scalars are (1,1). The element type is a template parameter so the
// same code runs at 64-bit precision in tests and 32-bit in training.
//
// Copies share the underlying buffer; data_mut() detaches (copy-on-write),
// so value copies held elsewhere are never mutated through another handle.
template <typename T>
class Tensor {
 public:
  Tensor() : rows_(0), cols_(0), buf_(std::make_shared<std::vector<T>>()) {}

  Tensor(size_t rows, size_t cols)
      : rows_(rows),
        cols_(cols),
        buf_(std::make_shared<std::vector<T>>(rows * cols, T(0))) {}

  static Tensor zeros(size_t rows, size_t cols) { return Tensor(rows, cols); }

  static Tensor full(size_t rows, size_t cols, T value) {
    Tensor t(rows, cols);
    for (auto& v : *t.buf_) v = value;
    return t;
  }

  static Tensor scalar(T value) { return full(1, 1, value); }

  static Tensor from_rows(std::initializer_list<std::initializer_list<T>> rows) {
    const size_t r = rows.size();
    const size_t c = r == 0 ? 0 : rows.begin()->size();
    Tensor t(r, c);
    size_t i = 0;
    for (const auto& row : rows) {
      FORGE_SHAPE_CHECK(row.size() == c, "Tensor::from_rows: ragged rows");
      size_t j = 0;
      for (const T v : row) t.data_mut()[i * c + j++] = v;
      ++i;
    }
    return t;
  }

  static Tensor row_vector(const std::vector<T>& values) {
    Tensor t(1, values.size());
    std::copy(values.begin(), values.end(), t.data_mut());
    return t;
  }

  // i.i.d. normal(0, stddev) entries drawn from `rng`.
  static Tensor randn(size_t rows, size_t cols, Rng& rng, T stddev = T(1)) {
    Tensor t(rows, cols);
    T* p = t.data_mut();
    for (size_t i = 0; i < rows * cols; ++i) p[i] = T(rng.normal()) * stddev;
    return t;
  }

  size_t rows() const { return rows_; }
  size_t cols() const { return cols_; }
  size_t size() const { return rows_ * cols_; }
  bool empty() const { return size() == 0; }
  bool is_scalar() const { return rows_ == 1 && cols_ == 1; }

  const T* data() const { return buf_->data(); }

  // Mutable access; detaches from any sharing copies first.
  T* data_mut() {
    if (buf_.use_count() > 1) buf_ = std::make_shared<std::vector<T>>(*buf_);
    return buf_->data();
  }

  T at(size_t r, size_t c) const {
    FORGE_SHAPE_CHECK(r < rows_ && c < cols_, "Tensor::at: index (", r, ",", c,
                      ") out of range for ", shape_str());
    return (*buf_)[r * cols_ + c];
  }

  T item() const {
    FORGE_SHAPE_CHECK(is_scalar(), "Tensor::item: tensor is ", shape_str(),
                      ", expected [1,1]");
    return (*buf_)[0];
  }

  Tensor clone() const {
    Tensor t(rows_, cols_);
    *t.buf_ = *buf_;
    return t;
  }

  bool same_shape(const Tensor& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_;
  }

  bool same_values(const Tensor& o) const {
    if (!same_shape(o)) return false;
    for (size_t i = 0; i < size(); ++i)
      if ((*buf_)[i] != (*o.buf_)[i]) return false;
    return true;
  }

  std::string shape_str() const {
    return format_msg("[", rows_, ",", cols_, "]");
  }

 private:
  size_t rows_, cols_;
  std::shared_ptr<std::vector<T>> buf_;
};

}  // namespace forge
