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
#include "osmd/jdn.hpp"

#include <algorithm>
#include <cmath>

#include "osmd/common.hpp"
#include "osmd/nn.hpp"

namespace osmd {

namespace {

void check_rows(const Tensor& a, const Tensor& b, const char* who) {
  if (a.ndim() != 2 || b.ndim() != 2)
    throw StructuralError(std::string(who) + ": expected 2-d row batches, got " + a.shape_str() +
                          " and " + b.shape_str());
  if (!a.same_shape(b))
    throw StructuralError(std::string(who) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  if (a.dim(0) < 1) throw StructuralError(std::string(who) + ": empty batch");
  if (!a.all_finite() || !b.all_finite())
    throw NumericError(std::string(who) + ": non-finite input");
}

double sq_dist(const double* u, const double* v, int64_t d) {
  double s = 0.0;
  for (int64_t i = 0; i < d; ++i) {
    double t = u[i] - v[i];
    s += t * t;
  }
  return s;
}

}  // namespace

double gaussian_kernel(const double* u, const double* v, int64_t d, double sigma) {
  if (sigma <= 0.0) throw ConfigError("gaussian_kernel: bandwidth must be positive");
  return std::exp(-sq_dist(u, v, d) / sigma);
}

double median_bandwidth(const Tensor& a, const Tensor& b, double floor_eps) {
  check_rows(a, b, "median_bandwidth");
  int64_t bsz = a.dim(0), d = a.dim(1);
  int64_t total = 2 * bsz;
  std::vector<const double*> rows(static_cast<size_t>(total));
  for (int64_t i = 0; i < bsz; ++i) rows[static_cast<size_t>(i)] = a.data() + i * d;
  for (int64_t i = 0; i < bsz; ++i) rows[static_cast<size_t>(bsz + i)] = b.data() + i * d;
  std::vector<double> dists;
  dists.reserve(static_cast<size_t>(total * (total - 1) / 2));
  for (int64_t i = 0; i < total; ++i)
    for (int64_t j = i + 1; j < total; ++j)
      dists.push_back(sq_dist(rows[static_cast<size_t>(i)], rows[static_cast<size_t>(j)], d));
  double med;
  if (dists.empty()) {
    med = 0.0;
  } else {
    std::sort(dists.begin(), dists.end());
    size_t n = dists.size();
    med = (n % 2 == 1) ? dists[n / 2] : 0.5 * (dists[n / 2 - 1] + dists[n / 2]);
  }
  return std::max(med, floor_eps);
}

MmdResult mmd_marginal(const Tensor& rep_s, const Tensor& rep_p, const KernelConfig& cfg,
                       Tensor* grad_s) {
  check_rows(rep_s, rep_p, "mmd_marginal");
  int64_t b = rep_s.dim(0), d = rep_s.dim(1);
  double sigma = (cfg.mode == KernelConfig::Bandwidth::fixed)
                     ? cfg.sigma
                     : median_bandwidth(rep_s, rep_p, cfg.sigma_floor);
  if (sigma <= 0.0) throw ConfigError("mmd_marginal: bandwidth must be positive");

  const double* s = rep_s.data();
  const double* p = rep_p.data();
  double kss = 0.0, kpp = 0.0, ksp = 0.0;
  for (int64_t i = 0; i < b; ++i)
    for (int64_t l = 0; l < b; ++l) {
      kss += gaussian_kernel(s + i * d, s + l * d, d, sigma);
      kpp += gaussian_kernel(p + i * d, p + l * d, d, sigma);
      ksp += gaussian_kernel(s + i * d, p + l * d, d, sigma);
    }
  double inv_b2 = 1.0 / static_cast<double>(b * b);
  double raw = (kss - 2.0 * ksp + kpp) * inv_b2;

  if (grad_s) {
    *grad_s = Tensor({b, d});
    double c = -2.0 / sigma;
    for (int64_t i = 0; i < b; ++i) {
      double* g = grad_s->data() + i * d;
      for (int64_t l = 0; l < b; ++l) {
        if (l != i) {
          // k(s_i, s_l) appears twice in the ordered double sum.
          double kv = gaussian_kernel(s + i * d, s + l * d, d, sigma);
          double f = 2.0 * kv * c * inv_b2;
          for (int64_t t = 0; t < d; ++t) g[t] += f * (s[i * d + t] - s[l * d + t]);
        }
        double kv = gaussian_kernel(s + i * d, p + l * d, d, sigma);
        double f = -2.0 * kv * c * inv_b2;
        for (int64_t t = 0; t < d; ++t) g[t] += f * (s[i * d + t] - p[l * d + t]);
      }
    }
  }

  MmdResult r;
  r.value = std::max(raw, 0.0);
  r.sigma = sigma;
  return r;
}

double conditional_kl(const Tensor& logits_p, const Tensor& logits_s, Tensor* grad_s) {
  check_rows(logits_p, logits_s, "conditional_kl");
  int64_t m = logits_p.dim(0), n = logits_p.dim(1);
  if (n < 2) throw StructuralError("conditional_kl: need at least two categories");
  Tensor logp = nn::log_softmax_rows(logits_p);
  Tensor logq = nn::log_softmax_rows(logits_s);
  double v = 0.0;
  if (grad_s) *grad_s = Tensor({m, n});
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) {
      double pj = std::exp(logp.at2(i, j));
      v += pj * (logp.at2(i, j) - logq.at2(i, j));
      if (grad_s) grad_s->at2(i, j) = std::exp(logq.at2(i, j)) - pj;
    }
  return v;
}

JdnTerms jdn_loss(const Tensor& rep_s, const Tensor& rep_p, const Tensor& logits_s,
                  const Tensor& logits_p, const KernelConfig& cfg, Tensor* grad_rep_s,
                  Tensor* grad_logits_s) {
  JdnTerms t;
  MmdResult m = mmd_marginal(rep_s, rep_p, cfg, grad_rep_s);
  t.dist_marginal = m.value;
  t.sigma = m.sigma;
  t.dist_conditional = conditional_kl(logits_p, logits_s, grad_logits_s);
  t.l_jdn = t.dist_marginal + t.dist_conditional;
  return t;
}

}  // namespace osmd
