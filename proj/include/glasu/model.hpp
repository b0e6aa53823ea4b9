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
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "glasu/graph.hpp"
#include "glasu/linalg.hpp"
#include "glasu/rng.hpp"

namespace glasu {

enum class Backbone { Gcn, Gcnii };

// GCN: H' = ReLU(A H W).
// GCNII: H' = ReLU(((1-alpha) A H + alpha H0) ((1-beta_l) E + beta_l W)),
// beta_l = log(lambda / (l+1) + 1), with E the identity (or, for a
// rectangular W, the identity's columns starting at an offset).
struct LayerKind {
  Backbone backbone = Backbone::Gcn;
  double alpha = 0.1;
  double lambda = 0.5;

  static LayerKind gcn() { return {}; }
  static LayerKind gcnii(double alpha, double lambda) { return {Backbone::Gcnii, alpha, lambda}; }

  double beta(std::size_t layer) const;
  void validate() const;
};

// Everything layer_backward needs. The adjacency is borrowed and must
// outlive the tape.
struct LayerTape {
  Backbone backbone = Backbone::Gcn;
  const SparseBlock* adjacency = nullptr;
  Matrix h_in;
  Matrix support;  // A H (GCN) or the mixed input P (GCNII)
  Matrix mix;      // GCNII only: (1-beta) E + beta W
  Matrix z;        // pre-activation
  double alpha = 0.0;
  double beta = 1.0;
};

struct LayerOutput {
  Matrix h_out;
  LayerTape tape;
};

struct LayerGrads {
  Matrix h_in;
  Matrix w;
  Matrix h0;  // GCNII only: cotangent of the initial-residual slice
};

LayerOutput layer_forward(const Matrix& h_in, const SparseBlock& a, const Matrix& w,
                          const LayerKind& kind, std::size_t layer, const Matrix& h0_slice,
                          std::size_t identity_offset = 0);
// GCNII with an explicit beta instead of the lambda schedule.
LayerOutput gcnii_forward(const Matrix& h_in, const SparseBlock& a, const Matrix& w, double alpha,
                          double beta, const Matrix& h0_slice, std::size_t identity_offset = 0);
LayerGrads layer_backward(const Matrix& grad_h_out, const LayerTape& tape);

Matrix relu(const Matrix& z);
// grad where z > 0, zero elsewhere (including z == 0).
Matrix relu_backward(const Matrix& grad, const Matrix& z);

Matrix classify(const Matrix& h, const Matrix& w);

struct LossAndGrad {
  double loss = 0.0;
  Matrix grad_logits;
};

// Mean softmax cross-entropy over the rows; gradient (softmax - onehot) / rows.
LossAndGrad loss_and_grad(const Matrix& logits, std::span<const int> labels);

// Weights held by one client: an optional GCNII input projection, the L
// layer weights and, when the client owns labels, its classifier.
struct ClientModel {
  LayerKind kind;
  std::optional<Matrix> input_projection;
  std::vector<Matrix> layers;
  std::optional<Matrix> classifier;

  std::vector<Matrix*> parameters();
  std::vector<const Matrix*> parameters() const;
  std::size_t num_parameters() const;
  std::vector<double> flatten() const;
  void assign(std::span<const double> flat);
  // Same structure, every entry zero.
  ClientModel zeros_like() const;
};

bool bitwise_equal(const ClientModel& a, const ClientModel& b);

struct ModelShape {
  LayerKind kind;
  std::size_t input_dim = 0;   // d_m
  std::size_t hidden_dim = 0;
  std::vector<std::size_t> layer_out;        // output width per layer
  std::vector<std::size_t> identity_offset;  // GCNII identity placement per layer
  std::size_t num_classes = 0;
  bool with_classifier = true;
};

ClientModel init_client_model(const ModelShape& shape, const Rng& rng);

// w -= eta * g for every parameter.
void sgd_step(ClientModel& model, const ClientModel& grads, double eta);

// Binary layout: "GLSW", u8 version = 1, u32 L, then each matrix as u32 rows,
// u32 cols and rows*cols f64 little-endian: the GCNII input projection first
// when present, the L layer weights, and the classifier when present.
void save_checkpoint(const ClientModel& model, const std::filesystem::path& path);
ClientModel load_checkpoint(const std::filesystem::path& path, const LayerKind& kind);

// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate.
std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& f,
                                     std::span<const double> params, double step);

}  // namespace glasu
