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
 *
 * Shared helpers for the test binaries: scratch directories, independent
 * naive oracles, and a central-difference gradient checker.
 */
#ifndef OSMD_TESTS_HELPERS_HPP_
#define OSMD_TESTS_HELPERS_HPP_

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "osmd/common.hpp"
#include "osmd/tensor.hpp"

namespace osmd_test {

// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& label) {
    static std::atomic<uint64_t> counter{0};
    auto base = std::filesystem::temp_directory_path();
    path_ = (base / ("osmd-" + label + "-" + std::to_string(::getpid()) + "-" +
                     std::to_string(counter.fetch_add(1))))
                .string();
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::string& path() const { return path_; }
  std::string file(const std::string& name) const {
    return (std::filesystem::path(path_) / name).string();
  }

 private:
  std::string path_;
};

// ===== independent oracles (deliberately written as plain double loops) =====

inline double naive_kernel(const double* u, const double* v, int64_t d, double sigma) {
  double sq = 0.0;
  for (int64_t i = 0; i < d; ++i) sq += (u[i] - v[i]) * (u[i] - v[i]);
  return std::exp(-sq / sigma);
}

inline double naive_median_sigma(const osmd::Tensor& a, const osmd::Tensor& b, double floor_eps) {
  int64_t d = a.dim(1);
  std::vector<const double*> rows;
  for (int64_t i = 0; i < a.dim(0); ++i) rows.push_back(a.data() + i * d);
  for (int64_t i = 0; i < b.dim(0); ++i) rows.push_back(b.data() + i * d);
  std::vector<double> d2;
  for (size_t i = 0; i < rows.size(); ++i)
    for (size_t j = i + 1; j < rows.size(); ++j) {
      double sq = 0.0;
      for (int64_t k = 0; k < d; ++k) sq += (rows[i][k] - rows[j][k]) * (rows[i][k] - rows[j][k]);
      d2.push_back(sq);
    }
  if (d2.empty()) return floor_eps;
  std::sort(d2.begin(), d2.end());
  size_t n = d2.size();
  double med = n % 2 == 1 ? d2[n / 2] : 0.5 * (d2[n / 2 - 1] + d2[n / 2]);
  return std::max(med, floor_eps);
}

inline double naive_mmd(const osmd::Tensor& s, const osmd::Tensor& p, double sigma) {
  int64_t b = s.dim(0), d = s.dim(1);
  double kss = 0.0, kpp = 0.0, ksp = 0.0;
  for (int64_t i = 0; i < b; ++i)
    for (int64_t j = 0; j < b; ++j) {
      kss += naive_kernel(s.data() + i * d, s.data() + j * d, d, sigma);
      kpp += naive_kernel(p.data() + i * d, p.data() + j * d, d, sigma);
      ksp += naive_kernel(s.data() + i * d, p.data() + j * d, d, sigma);
    }
  double bb = static_cast<double>(b) * static_cast<double>(b);
  return std::max(kss / bb + kpp / bb - 2.0 * ksp / bb, 0.0);
}

inline double naive_kl(const osmd::Tensor& logits_p, const osmd::Tensor& logits_s) {
  int64_t m = logits_p.dim(0), n = logits_p.dim(1);
  double total = 0.0;
  for (int64_t i = 0; i < m; ++i) {
    std::vector<double> p(static_cast<size_t>(n)), q(static_cast<size_t>(n));
    double zp = 0.0, zq = 0.0;
    for (int64_t c = 0; c < n; ++c) {
      p[static_cast<size_t>(c)] = std::exp(logits_p.at2(i, c));
      q[static_cast<size_t>(c)] = std::exp(logits_s.at2(i, c));
      zp += p[static_cast<size_t>(c)];
      zq += q[static_cast<size_t>(c)];
    }
    for (int64_t c = 0; c < n; ++c) {
      double pi = p[static_cast<size_t>(c)] / zp;
      double qi = q[static_cast<size_t>(c)] / zq;
      total += pi * (std::log(pi) - std::log(qi));
    }
  }
  return total;
}

// ===== gradient checking =====

inline double rel_err(double analytic, double numeric) {
  double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
  return std::abs(analytic - numeric) / denom;
}

// Central finite difference of a scalar function with respect to one slot of
// a mutable buffer.
inline double central_diff(const std::function<double()>& f, double* slot, double eps = 1e-5) {
  double saved = *slot;
  *slot = saved + eps;
  double hi = f();
  *slot = saved - eps;
  double lo = f();
  *slot = saved;
  return (hi - lo) / (2.0 * eps);
}

// Checks every element of `grad` against central differences of f around the
// current content of `x`. Returns the worst relative error.
inline double check_grad(const std::function<double()>& f, osmd::Tensor& x,
                         const osmd::Tensor& grad, double eps = 1e-5) {
  double worst = 0.0;
  for (int64_t i = 0; i < x.size(); ++i) {
    double num = central_diff(f, x.data() + i, eps);
    worst = std::max(worst, rel_err(grad.data()[i], num));
  }
  return worst;
}

inline osmd::Tensor random_tensor(const std::vector<int64_t>& shape, osmd::Rng& rng,
                                  double scale = 1.0) {
  osmd::Tensor t(shape);
  for (int64_t i = 0; i < t.size(); ++i) t.data()[i] = rng.normal() * scale;
  return t;
}

}  // namespace osmd_test

#endif  // OSMD_TESTS_HELPERS_HPP_
