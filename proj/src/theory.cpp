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

#include "glasu/theory.hpp"

#include <cmath>
#include <string>

#include "glasu/error.hpp"

namespace glasu {
namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

void require_positive(double v, const char* name) {
  require(std::isfinite(v) && v > 0.0, std::string(name) + " must be positive and finite");
}

}  // namespace

void SmoothnessConstants::validate() const {
  require_positive(g_ell, "G_ell");
  require_positive(l_ell, "L_ell");
  require_positive(g_f, "G_f");
  require_positive(l_f, "L_f");
}

void BoundInputs::validate() const {
  require(num_clients >= 1 && local_steps >= 1 && rounds >= 1 && batch_size >= 1 && dim >= 1,
          "M, Q, T, S and d must be at least 1");
  require(delta > 0.0 && delta <= 1.0, "delta must lie in (0, 1]");
  require(std::isfinite(gap) && gap >= 0.0, "the optimality gap must be finite and non-negative");
  require(std::isfinite(eta) && eta >= 0.0, "eta must be finite and non-negative");
}

double c0(const SmoothnessConstants& k) {
  k.validate();
  return k.g_ell * k.l_f + k.l_ell * k.g_f * k.g_f;
}

double sigma_var(const SmoothnessConstants& k, std::size_t batch_size, std::size_t dim, double delta) {
  k.validate();
  require(batch_size >= 1 && dim >= 1, "S and d must be at least 1");
  require(delta > 0.0 && delta <= 1.0, "delta must lie in (0, 1]");
  const double log_term = std::log(2.0 * static_cast<double>(dim) / delta);
  const double gf2 = k.g_f * k.g_f;
  return 64.0 * k.g_ell * k.g_ell * k.l_f * k.l_f * log_term +
         128.0 * k.l_ell * k.l_ell * (gf2 * gf2 + 1.0 / static_cast<double>(batch_size)) * (log_term + 0.25);
}

double max_step_size(double c0_value, std::size_t local_steps, std::size_t num_clients) {
  require_positive(c0_value, "c0");
  require(local_steps >= 1 && num_clients >= 1, "Q and M must be at least 1");
  const double q = static_cast<double>(local_steps);
  return 1.0 / (c0_value * (1.0 + 2.0 * q * q * static_cast<double>(num_clients)));
}

double grad_norm_bound(const BoundInputs& in, double c0_value, double sigma) {
  in.validate();
  require_positive(sigma, "sigma");
  require(in.eta > 0.0, "eta must be positive for the bound");
  const double limit = max_step_size(c0_value, in.local_steps, in.num_clients);
  require(in.eta <= limit, "eta = " + std::to_string(in.eta) + " exceeds the admissible step size " +
                               std::to_string(limit) + " = 1 / (c0 (1 + 2 Q^2 M)); the bound does not apply");
  const double m = static_cast<double>(in.num_clients);
  const double q = static_cast<double>(in.local_steps);
  const double tq = static_cast<double>(in.rounds) * q;
  return 2.0 * in.gap / (in.eta * tq) + 28.0 * in.eta * m * (c0_value + std::sqrt(m + 1.0) * q) * sigma / 3.0;
}

bool suggested_step_applies(std::size_t local_steps, std::size_t num_clients, double c0_value) {
  const double limit = c0_value / std::sqrt(static_cast<double>(num_clients) + 1.0);
  // Relative slack so that Q chosen exactly at the limit is accepted.
  return static_cast<double>(local_steps) <= limit * (1.0 + 1e-12);
}

double suggested_step(const BoundInputs& in, double c0_value, double sigma) {
  in.validate();
  require_positive(c0_value, "c0");
  require_positive(sigma, "sigma");
  require(suggested_step_applies(in.local_steps, in.num_clients, c0_value),
          "suggested step needs Q <= c0 / sqrt(M + 1) (Q = " + std::to_string(in.local_steps) +
              ", c0 / sqrt(M + 1) = " +
              std::to_string(c0_value / std::sqrt(static_cast<double>(in.num_clients) + 1.0)) + ")");
  const double denom = 28.0 * static_cast<double>(in.num_clients) * c0_value * sigma *
                       static_cast<double>(in.rounds) * static_cast<double>(in.local_steps);
  return std::sqrt(3.0 * in.gap / denom);
}

double suggested_rate(const BoundInputs& in, double c0_value, double sigma) {
  in.validate();
  const double tq = static_cast<double>(in.rounds) * static_cast<double>(in.local_steps);
  return 8.0 * std::sqrt(7.0 * in.gap * static_cast<double>(in.num_clients) * c0_value * sigma / (3.0 * tq));
}

std::size_t min_rounds_for_suggested_step(const BoundInputs& in, double c0_value, double sigma) {
  in.validate();
  const double limit = max_step_size(c0_value, in.local_steps, in.num_clients);
  // eta(T) = sqrt(a / T) <= limit  <=>  T >= a / limit^2.
  const double a = 3.0 * in.gap / (28.0 * static_cast<double>(in.num_clients) * c0_value * sigma *
                                   static_cast<double>(in.local_steps));
  std::size_t t = static_cast<std::size_t>(std::ceil(a / (limit * limit)));
  if (t == 0) t = 1;
  BoundInputs probe = in;
  probe.rounds = t;
  while (std::sqrt(a / static_cast<double>(probe.rounds)) > limit) ++probe.rounds;
  return probe.rounds;
}

}  // namespace glasu
