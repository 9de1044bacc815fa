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

#include <string>

namespace osmd {

// Multi-task weights. eta is fixed at 1 and is never modified by updates;
// the task loss is the anchor the auxiliary weights are scaled against.
struct LossWeights {
  double alpha = 0.0;
  double beta = 0.0;
  double eta = 1.0;
  bool initialized = false;
};

struct BalanceConfig {
  double target_ratio = 0.1;  // auxiliary magnitude relative to the task loss
  double ema_decay = 0.9;     // 0 disables smoothing
  double eps = 1e-12;
  double clip_lo = 0.5;       // bounds for the gradient-norm correction
  double clip_hi = 2.0;
};

struct RawLosses {
  double l_jdn = 0.0;
  double l_ctn = 0.0;
  double l_ttl = 0.0;
};

// L2 norms of each raw task loss's gradient over the shared-encoder
// parameters.
struct GradNorms {
  double g_jdn = 0.0;
  double g_ctn = 0.0;
  double g_ttl = 0.0;
};

// Which auxiliary losses the current recipe actually uses. Inactive tasks
// keep a zero weight and are excluded from the correction normalizer.
struct ActiveAux {
  bool jdn = true;
  bool ctn = true;
};

// Magnitude rule: candidate = target_ratio * l_ttl / max(l_aux, eps), so each
// weighted auxiliary sits one order below the task loss. The gradient-norm
// correction multiplies each candidate by clip(mean_norm / task_norm) and is
// renormalized by the mean active correction, which preserves the summed
// auxiliary magnitude and cancels exactly when the corrections are equal.
// Weights are blended with an EMA (first update seeds it directly). The
// returned weights are constants for gradient purposes.
LossWeights update_weights(const RawLosses& losses, const GradNorms& norms,
                           const LossWeights& prev, const BalanceConfig& cfg = {},
                           const ActiveAux& active = {});

struct LossReport {
  double l_jdn = 0.0;
  double l_ctn = 0.0;
  double l_ttl = 0.0;
  double alpha = 0.0;
  double beta = 0.0;
  double eta = 1.0;
  double l_total = 0.0;
};

// l_total = alpha * l_jdn + beta * l_ctn + eta * l_ttl.
LossReport total_loss(const RawLosses& losses, const LossWeights& w);

}  // namespace osmd
