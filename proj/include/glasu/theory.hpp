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

namespace glasu {

// Smoothness constants of the per-sample loss (G_ell, L_ell) and of the
// network map (G_f, L_f): bounded gradients and Lipschitz gradients.
struct SmoothnessConstants {
  double g_ell = 1.0;
  double l_ell = 1.0;
  double g_f = 1.0;
  double l_f = 1.0;

  void validate() const;
};

struct BoundInputs {
  std::size_t num_clients = 1;  // M
  std::size_t local_steps = 1;  // Q
  std::size_t rounds = 1;       // T
  std::size_t batch_size = 1;   // S
  std::size_t dim = 1;          // d
  double delta = 0.05;          // failure probability, in (0, 1]
  double gap = 0.0;             // initial optimality gap, >= 0
  double eta = 0.0;             // step size

  void validate() const;
};

// Lipschitz constant of the objective's gradient: G_ell L_f + L_ell G_f^2.
double c0(const SmoothnessConstants& k);

// Variance bound of the stochastic gradient:
// 64 G_ell^2 L_f^2 log(2d/delta) + 128 L_ell^2 (G_f^4 + 1/S)(log(2d/delta) + 1/4).
double sigma_var(const SmoothnessConstants& k, std::size_t batch_size, std::size_t dim, double delta);

// Largest step size the convergence guarantee admits: 1 / (c0 (1 + 2 Q^2 M)).
double max_step_size(double c0, std::size_t local_steps, std::size_t num_clients);

// Bound on the averaged squared gradient norm over the T Q iterations:
// 2 gap / (eta T Q) + 28 eta M (c0 + sqrt(M + 1) Q) sigma / 3.
// Throws ConfigError when eta exceeds max_step_size (the bound does not hold).
double grad_norm_bound(const BoundInputs& in, double c0, double sigma);

// Whether Q <= c0 / sqrt(M + 1), the regime in which suggested_step's rate
// applies.
bool suggested_step_applies(std::size_t local_steps, std::size_t num_clients, double c0);

// eta = sqrt(3 gap / (28 M c0 sigma T Q)). Throws ConfigError naming the
// condition Q <= c0 / sqrt(M + 1) when it fails.
double suggested_step(const BoundInputs& in, double c0, double sigma);

// Closed-form rate at the suggested step: 8 sqrt(7 gap M c0 sigma / (3 T Q)).
// grad_norm_bound at suggested_step is at most this value, with equality
// when Q = c0 / sqrt(M + 1).
double suggested_rate(const BoundInputs& in, double c0, double sigma);

// Smallest T for which suggested_step(T) <= max_step_size.
std::size_t min_rounds_for_suggested_step(const BoundInputs& in, double c0, double sigma);

}  // namespace glasu
