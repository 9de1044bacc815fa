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
#pragma once

#include "osmd/tensor.hpp"

namespace osmd {

// Gaussian kernel k(u, v) = exp(-||u - v||^2 / sigma). Note: sigma divides
// the squared distance directly.
double gaussian_kernel(const double* u, const double* v, int64_t d, double sigma);

struct KernelConfig {
  enum class Bandwidth { fixed, median };
  Bandwidth mode = Bandwidth::median;
  double sigma = 1.0;        // used in fixed mode
  double sigma_floor = 1e-9; // lower bound for the median heuristic
};

// Median of squared pairwise distances over the pooled rows of a and b
// (all unordered distinct pairs; even counts average the two middle values),
// floored at floor_eps.
double median_bandwidth(const Tensor& a, const Tensor& b, double floor_eps);

struct MmdResult {
  double value = 0.0;
  double sigma = 0.0;  // bandwidth actually used
};

// Biased squared-MMD estimator between same-sized batches of rows [b, d],
// diagonal terms included, clamped at zero, no square root. If grad_s is
// non-null it receives d(value)/d(rep_s); the bandwidth is treated as a
// constant (no gradient through the median heuristic).
MmdResult mmd_marginal(const Tensor& rep_s, const Tensor& rep_p, const KernelConfig& cfg,
                       Tensor* grad_s = nullptr);

// Sum over rows of KL(softmax(logits_p_i) || softmax(logits_s_i)), all
// categories included, computed via log-softmax. No gradient flows into
// logits_p; grad_s receives d(value)/d(logits_s) when non-null.
double conditional_kl(const Tensor& logits_p, const Tensor& logits_s, Tensor* grad_s = nullptr);

struct JdnTerms {
  double dist_marginal = 0.0;
  double dist_conditional = 0.0;
  double l_jdn = 0.0;
  double sigma = 0.0;
};

// Combined transfer loss: marginal MMD on representation rows plus
// conditional KL on logit rows.
JdnTerms jdn_loss(const Tensor& rep_s, const Tensor& rep_p, const Tensor& logits_s,
                  const Tensor& logits_p, const KernelConfig& cfg,
                  Tensor* grad_rep_s = nullptr, Tensor* grad_logits_s = nullptr);

}  // namespace osmd
