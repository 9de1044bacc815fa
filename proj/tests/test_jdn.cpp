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
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "osmd/jdn.hpp"

using namespace osmd;
using namespace osmd_test;

TEST_CASE("gaussian kernel frozen values and identity") {
  double u[2] = {0.0, 0.0};
  double v[2] = {2.0, 0.0};
  CHECK(gaussian_kernel(u, v, 2, 1.0) == doctest::Approx(std::exp(-4.0)).epsilon(1e-12));
  CHECK(gaussian_kernel(u, v, 2, 1.0) == doctest::Approx(0.0183156).epsilon(1e-4));
  CHECK(gaussian_kernel(u, u, 2, 1.0) == 1.0);
  CHECK(gaussian_kernel(v, v, 2, 0.37) == 1.0);
  CHECK_THROWS_AS(gaussian_kernel(u, v, 2, 0.0), ConfigError);
}

TEST_CASE("mmd single-pair frozen value") {
  Tensor s({1, 1}), p({1, 1});
  s.at2(0, 0) = 0.0;
  p.at2(0, 0) = 2.0;
  KernelConfig kc;
  kc.mode = KernelConfig::Bandwidth::fixed;
  kc.sigma = 1.0;
  MmdResult r = mmd_marginal(s, p, kc, nullptr);
  CHECK(r.value == doctest::Approx(1.9633687222225316).epsilon(1e-12));
  CHECK(r.value == doctest::Approx(1.963369).epsilon(1e-5));
  CHECK(r.sigma == 1.0);
}

TEST_CASE("mmd of identical batches is zero after clamping") {
  Rng rng(5);
  Tensor s = random_tensor({4, 3}, rng);
  KernelConfig kc;
  MmdResult r = mmd_marginal(s, s, kc, nullptr);
  CHECK(r.value == 0.0);
}

TEST_CASE("mmd matches the naive double loop in both bandwidth modes") {
  Rng rng(101);
  for (int trial = 0; trial < 100; ++trial) {
    int64_t b = 1 + static_cast<int64_t>(rng.uniform_int(5));
    int64_t d = 1 + static_cast<int64_t>(rng.uniform_int(8));
    Tensor s = random_tensor({b, d}, rng, 1.5);
    Tensor p = random_tensor({b, d}, rng, 1.5);

    KernelConfig fixed;
    fixed.mode = KernelConfig::Bandwidth::fixed;
    fixed.sigma = 0.25 + rng.uniform() * 4.0;
    MmdResult rf = mmd_marginal(s, p, fixed, nullptr);
    CHECK(std::abs(rf.value - naive_mmd(s, p, fixed.sigma)) < 1e-9);

    KernelConfig med;
    med.mode = KernelConfig::Bandwidth::median;
    MmdResult rm = mmd_marginal(s, p, med, nullptr);
    double sig = naive_median_sigma(s, p, med.sigma_floor);
    CHECK(rm.sigma == doctest::Approx(sig).epsilon(1e-12));
    CHECK(std::abs(rm.value - naive_mmd(s, p, sig)) < 1e-9);
  }
}

TEST_CASE("median bandwidth: unordered distinct pairs, even-count average, floor") {
  // Pooled rows {0, 3}: a single pair with squared distance 9.
  Tensor a({1, 1}), b({1, 1});
  a.at2(0, 0) = 0.0;
  b.at2(0, 0) = 3.0;
  CHECK(median_bandwidth(a, b, 1e-9) == doctest::Approx(9.0).epsilon(1e-15));

  // Pooled rows {0, 1, 3, 7}: squared distances 1,9,49,4,36,16 sorted
  // 1,4,9,16,36,49 -> median (9+16)/2 = 12.5.
  Tensor c({2, 1}), d({2, 1});
  c.at2(0, 0) = 0.0;
  c.at2(1, 0) = 1.0;
  d.at2(0, 0) = 3.0;
  d.at2(1, 0) = 7.0;
  CHECK(median_bandwidth(c, d, 1e-9) == doctest::Approx(12.5).epsilon(1e-15));

  // All-identical rows hit the floor.
  Tensor e({2, 2}), f({2, 2});
  e.fill(0.5);
  f.fill(0.5);
  CHECK(median_bandwidth(e, f, 1e-9) == 1e-9);
}

TEST_CASE("mmd gradient matches finite differences (fixed bandwidth)") {
  Rng rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    int64_t b = 2 + static_cast<int64_t>(rng.uniform_int(3));
    int64_t d = 1 + static_cast<int64_t>(rng.uniform_int(4));
    Tensor s = random_tensor({b, d}, rng);
    Tensor p = random_tensor({b, d}, rng);
    KernelConfig kc;
    kc.mode = KernelConfig::Bandwidth::fixed;
    kc.sigma = 1.7;
    Tensor grad(s.shape());
    mmd_marginal(s, p, kc, &grad);
    auto f = [&] { return mmd_marginal(s, p, kc, nullptr).value; };
    CHECK(check_grad(f, s, grad) < 1e-6);
  }
}

TEST_CASE("median-mode gradient equals fixed-mode gradient at the median sigma") {
  Rng rng(11);
  Tensor s = random_tensor({3, 4}, rng);
  Tensor p = random_tensor({3, 4}, rng);
  KernelConfig med;
  med.mode = KernelConfig::Bandwidth::median;
  Tensor g_med(s.shape());
  MmdResult rm = mmd_marginal(s, p, med, &g_med);
  KernelConfig fixed;
  fixed.mode = KernelConfig::Bandwidth::fixed;
  fixed.sigma = rm.sigma;
  Tensor g_fix(s.shape());
  mmd_marginal(s, p, fixed, &g_fix);
  for (int64_t i = 0; i < g_med.size(); ++i) CHECK(g_med.data()[i] == g_fix.data()[i]);
}

TEST_CASE("conditional kl frozen value") {
  Tensor p({1, 2}), s({1, 2});
  p.at2(0, 0) = std::log(2.0);
  p.at2(0, 1) = 0.0;  // softmax -> (2/3, 1/3)
  s.at2(0, 0) = 0.0;
  s.at2(0, 1) = 0.0;  // softmax -> (1/2, 1/2)
  double v = conditional_kl(p, s, nullptr);
  CHECK(v == doctest::Approx(0.05663301226513246).epsilon(1e-12));
  CHECK(v == doctest::Approx(0.056633).epsilon(1e-5));
}

TEST_CASE("conditional kl is zero on identical logits and matches naive") {
  Rng rng(17);
  Tensor p = random_tensor({5, 4}, rng);
  CHECK(conditional_kl(p, p, nullptr) == doctest::Approx(0.0).epsilon(1e-15));
  for (int trial = 0; trial < 100; ++trial) {
    int64_t m = 1 + static_cast<int64_t>(rng.uniform_int(5));
    int64_t n = 2 + static_cast<int64_t>(rng.uniform_int(7));
    Tensor lp = random_tensor({m, n}, rng, 2.0);
    Tensor ls = random_tensor({m, n}, rng, 2.0);
    double v = conditional_kl(lp, ls, nullptr);
    CHECK(std::abs(v - naive_kl(lp, ls)) < 1e-9);
    CHECK(v >= 0.0);
  }
}

TEST_CASE("conditional kl gradient: closed form q - p and FD") {
  Rng rng(23);
  Tensor lp = random_tensor({3, 4}, rng);
  Tensor ls = random_tensor({3, 4}, rng);
  Tensor grad(ls.shape());
  conditional_kl(lp, ls, &grad);
  // closed form per row: softmax(ls) - softmax(lp)
  for (int64_t i = 0; i < 3; ++i) {
    double zp = 0.0, zs = 0.0;
    for (int64_t c = 0; c < 4; ++c) {
      zp += std::exp(lp.at2(i, c));
      zs += std::exp(ls.at2(i, c));
    }
    for (int64_t c = 0; c < 4; ++c) {
      double expect = std::exp(ls.at2(i, c)) / zs - std::exp(lp.at2(i, c)) / zp;
      CHECK(grad.at2(i, c) == doctest::Approx(expect).epsilon(1e-12));
    }
  }
  auto f = [&] { return conditional_kl(lp, ls, nullptr); };
  CHECK(check_grad(f, ls, grad) < 1e-6);
}

TEST_CASE("combined transfer loss adds the two distances") {
  Rng rng(31);
  Tensor rep_s = random_tensor({3, 5}, rng);
  Tensor rep_p = random_tensor({3, 5}, rng);
  Tensor lp = random_tensor({3, 2}, rng);
  Tensor ls = random_tensor({3, 2}, rng);
  KernelConfig kc;
  kc.mode = KernelConfig::Bandwidth::fixed;
  kc.sigma = 2.0;
  Tensor g_rep(rep_s.shape()), g_log(ls.shape());
  JdnTerms t = jdn_loss(rep_s, rep_p, ls, lp, kc, &g_rep, &g_log);
  CHECK(t.l_jdn == t.dist_marginal + t.dist_conditional);
  CHECK(t.dist_marginal == doctest::Approx(naive_mmd(rep_s, rep_p, 2.0)).epsilon(1e-12));
  CHECK(t.dist_conditional == doctest::Approx(naive_kl(lp, ls)).epsilon(1e-12));

  auto f_rep = [&] { return jdn_loss(rep_s, rep_p, ls, lp, kc, nullptr, nullptr).l_jdn; };
  CHECK(check_grad(f_rep, rep_s, g_rep) < 1e-6);
  CHECK(check_grad(f_rep, ls, g_log) < 1e-6);
}

TEST_CASE("frozen single-pair composite value") {
  // MMD 1.9633687222225316 plus KL 0.05663301226513246.
  Tensor s({1, 1}), p({1, 1});
  s.at2(0, 0) = 0.0;
  p.at2(0, 0) = 2.0;
  Tensor lp({1, 2}), ls({1, 2});
  lp.at2(0, 0) = std::log(2.0);
  lp.at2(0, 1) = 0.0;
  ls.fill(0.0);
  KernelConfig kc;
  kc.mode = KernelConfig::Bandwidth::fixed;
  kc.sigma = 1.0;
  JdnTerms t = jdn_loss(s, p, ls, lp, kc, nullptr, nullptr);
  CHECK(t.l_jdn == doctest::Approx(2.0200017344876641).epsilon(1e-12));
}

TEST_CASE("shape and structural errors") {
  Tensor s({2, 3}), p({3, 3});
  KernelConfig kc;
  CHECK_THROWS_AS(mmd_marginal(s, p, kc, nullptr), StructuralError);
  Tensor one_cat({2, 1});
  CHECK_THROWS_AS(conditional_kl(one_cat, one_cat, nullptr), StructuralError);
}
