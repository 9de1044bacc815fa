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
#include "osmd/balance.hpp"

#include <algorithm>
#include <cmath>

#include "osmd/common.hpp"

namespace osmd {

namespace {

void check_finite(double v, const char* name) {
  if (!std::isfinite(v)) throw NumericError(std::string("update_weights: non-finite ") + name);
}

}  // namespace

LossWeights update_weights(const RawLosses& losses, const GradNorms& norms,
                           const LossWeights& prev, const BalanceConfig& cfg,
                           const ActiveAux& active) {
  check_finite(losses.l_jdn, "l_jdn");
  check_finite(losses.l_ctn, "l_ctn");
  check_finite(losses.l_ttl, "l_ttl");
  check_finite(norms.g_jdn, "g_jdn");
  check_finite(norms.g_ctn, "g_ctn");
  check_finite(norms.g_ttl, "g_ttl");

  LossWeights w = prev;
  w.eta = prev.eta;

  if (losses.l_jdn == 0.0 && losses.l_ctn == 0.0 && losses.l_ttl == 0.0) return w;

  double cand_a = active.jdn ? cfg.target_ratio * losses.l_ttl / std::max(losses.l_jdn, cfg.eps) : 0.0;
  double cand_b = active.ctn ? cfg.target_ratio * losses.l_ttl / std::max(losses.l_ctn, cfg.eps) : 0.0;

  // Gradient-norm correction relative to the mean norm of the tasks in play.
  double norm_sum = norms.g_ttl;
  int norm_count = 1;
  if (active.jdn) {
    norm_sum += norms.g_jdn;
    ++norm_count;
  }
  if (active.ctn) {
    norm_sum += norms.g_ctn;
    ++norm_count;
  }
  double mean_norm = norm_sum / static_cast<double>(norm_count);
  auto correction = [&](double g) {
    return std::clamp(mean_norm / std::max(g, cfg.eps), cfg.clip_lo, cfg.clip_hi);
  };
  double c_jdn = active.jdn ? correction(norms.g_jdn) : 0.0;
  double c_ctn = active.ctn ? correction(norms.g_ctn) : 0.0;
  double c_sum = 0.0;
  int c_count = 0;
  if (active.jdn) {
    c_sum += c_jdn;
    ++c_count;
  }
  if (active.ctn) {
    c_sum += c_ctn;
    ++c_count;
  }
  if (c_count > 0) {
    double c_mean = c_sum / static_cast<double>(c_count);
    if (active.jdn) cand_a *= c_jdn / c_mean;
    if (active.ctn) cand_b *= c_ctn / c_mean;
  }

  if (!prev.initialized || cfg.ema_decay == 0.0) {
    w.alpha = cand_a;
    w.beta = cand_b;
  } else {
    w.alpha = cfg.ema_decay * prev.alpha + (1.0 - cfg.ema_decay) * cand_a;
    w.beta = cfg.ema_decay * prev.beta + (1.0 - cfg.ema_decay) * cand_b;
  }
  if (!active.jdn) w.alpha = 0.0;
  if (!active.ctn) w.beta = 0.0;
  w.initialized = true;
  return w;
}

LossReport total_loss(const RawLosses& losses, const LossWeights& w) {
  check_finite(w.alpha, "alpha");
  check_finite(w.beta, "beta");
  check_finite(w.eta, "eta");
  check_finite(losses.l_jdn, "l_jdn");
  check_finite(losses.l_ctn, "l_ctn");
  check_finite(losses.l_ttl, "l_ttl");
  LossReport r;
  r.l_jdn = losses.l_jdn;
  r.l_ctn = losses.l_ctn;
  r.l_ttl = losses.l_ttl;
  r.alpha = w.alpha;
  r.beta = w.beta;
  r.eta = w.eta;
  r.l_total = w.alpha * losses.l_jdn + w.beta * losses.l_ctn + w.eta * losses.l_ttl;
  return r;
}

}  // namespace osmd
