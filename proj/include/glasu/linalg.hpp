/*
 * Copyright 2026 The glasu Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

#include "glasu/rng.hpp"

namespace glasu {

// Node identifier. Wire frames carry ids as u32.
using Index = std::uint32_t;
using IndexList = std::vector<Index>;

// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  Matrix& operator+=(const Matrix& other);
  Matrix& operator-=(const Matrix& other);
  Matrix& operator*=(double s);
  Matrix& operator/=(double s);

  // Element-wise IEEE comparison (so +0 == -0).
  friend bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(Matrix a, double s);
Matrix operator*(double s, Matrix a);
Matrix operator/(Matrix a, double s);

// Standard product. Each output entry accumulates a(i,k) * b(k,j) for k
// ascending, so results are reproducible bit for bit.
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);

// Row k of the result is row idx[k] of a. Duplicates are allowed.
Matrix gather_rows(const Matrix& a, std::span<const Index> idx);

// Columns [offset, offset + width) of a.
Matrix column_block(const Matrix& a, std::size_t offset, std::size_t width);
// Overwrites columns [offset, offset + block.cols()) of a with block.
void set_column_block(Matrix& a, std::size_t offset, const Matrix& block);
// Concatenates matrices with equal row counts left to right.
Matrix hconcat(std::span<const Matrix> parts);

// True when both matrices have the same shape and identical bit patterns.
bool bitwise_equal(const Matrix& a, const Matrix& b);
bool all_finite(const Matrix& a);
double frobenius_norm(const Matrix& a);
// Sum over entries of a(i,j) * b(i,j).
double frobenius_dot(const Matrix& a, const Matrix& b);

// Uniform in [-sqrt(6/(rows+cols)), +sqrt(6/(rows+cols))].
Matrix glorot_init(std::size_t rows, std::size_t cols, Rng& rng);

}  // namespace glasu
