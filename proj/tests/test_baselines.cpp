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
#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "osmd/baselines.hpp"
#include "osmd/jdn.hpp"

using namespace osmd;
using namespace osmd_test;

TEST_CASE("response distillation equals the conditional distance at T=1") {
  Rng rng(3);
  Tensor lp = random_tensor({4, 5}, rng, 2.0);
  Tensor ls = random_tensor({4, 5}, rng, 2.0);
  double kd = response_kd_loss(lp, ls, 1.0, nullptr);
  double kl = conditional_kl(lp, ls, nullptr);
  CHECK(kd == doctest::Approx(kl).epsilon(1e-12));
}

TEST_CASE("response distillation is zero on identical logits and passes FD") {
  Rng rng(5);
  Tensor lp = random_tensor({3, 4}, rng);
  CHECK(response_kd_loss(lp, lp, 4.0, nullptr) == doctest::Approx(0.0).epsilon(1e-12));
  Tensor ls = random_tensor({3, 4}, rng);
  Tensor grad(ls.shape());
  response_kd_loss(lp, ls, 3.0, &grad);
  auto f = [&] { return response_kd_loss(lp, ls, 3.0, nullptr); };
  CHECK(check_grad(f, ls, grad) < 1e-6);
}

TEST_CASE("feature hint frozen value and FD") {
  Tensor s({1, 2}), p({1, 2});
  s.fill(1.0);
  p.fill(0.0);
  CHECK(feature_hint_loss(s, p, nullptr) == doctest::Approx(1.0).epsilon(1e-15));
  Rng rng(7);
  Tensor rs = random_tensor({2, 3, 2, 2}, rng);
  Tensor rp = random_tensor({2, 3, 2, 2}, rng);
  Tensor grad(rs.shape());
  feature_hint_loss(rs, rp, &grad);
  auto f = [&] { return feature_hint_loss(rs, rp, nullptr); };
  CHECK(check_grad(f, rs, grad) < 1e-6);
}

TEST_CASE("relation distillation frozen value, diagonal invariance, FD") {
  // Student rows orthogonal, teacher rows identical: Gram difference is 0 on
  // the diagonal (cosine(u,u)=1 for both) and 1 off-diagonal -> mean 0.5.
  Tensor s({2, 2}), p({2, 2});
  s.at2(0, 0) = 1.0;
  s.at2(0, 1) = 0.0;
  s.at2(1, 0) = 0.0;
  s.at2(1, 1) = 1.0;
  p.at2(0, 0) = 1.0;
  p.at2(0, 1) = 0.0;
  p.at2(1, 0) = 2.0;
  p.at2(1, 1) = 0.0;
  CHECK(relation_kd_loss(s, p, nullptr) == doctest::Approx(0.5).epsilon(1e-12));

  Rng rng(11);
  Tensor rs = random_tensor({3, 4}, rng);
  Tensor rp = random_tensor({3, 4}, rng);
  CHECK(relation_kd_loss(rs, rs, nullptr) == doctest::Approx(0.0).epsilon(1e-12));
  Tensor grad(rs.shape());
  relation_kd_loss(rs, rp, &grad);
  auto f = [&] { return relation_kd_loss(rs, rp, nullptr); };
  CHECK(check_grad(f, rs, grad) < 1e-5);
}

TEST_CASE("autoencoder translation loss FD on the input") {
  Rng rng(13);
  AeTranslator ae(3, 2, "ae", rng);
  Tensor rep_s = random_tensor({2, 3, 3, 3}, rng);
  Tensor rep_o = random_tensor({2, 3, 3, 3}, rng);
  Tensor grad(rep_s.shape());
  autoencoder_translation_loss(ae, rep_s, rep_o, &grad, false);
  auto f = [&] {
    AeTranslator probe = ae;
    return autoencoder_translation_loss(probe, rep_s, rep_o, nullptr, false);
  };
  CHECK(check_grad(f, rep_s, grad) < 1e-5);
  // The ordinary representation is a detached target by design: identical
  // inputs give zero only when the translator reproduces them, not generally.
  CHECK(autoencoder_translation_loss(ae, rep_s, rep_s, nullptr, false) >= 0.0);
}

TEST_CASE("logit sum fusion adds elementwise") {
  Rng rng(17);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({3, 4}, rng);
  Tensor c = logit_sum_fusion(a, b);
  for (int64_t i = 0; i < c.size(); ++i)
    CHECK(c.data()[i] == a.data()[i] + b.data()[i]);
  Tensor bad = random_tensor({2, 4}, rng);
  CHECK_THROWS_AS(logit_sum_fusion(a, bad), StructuralError);
}

TEST_CASE("variant names round-trip") {
  for (VariantKind k : all_variants()) {
    CHECK(variant_from_string(variant_name(k)) == k);
  }
  CHECK_THROWS_AS(variant_from_string("bogus"), ConfigError);
  CHECK(all_variants().size() == 8);  // seven ablation rows + the full model
}

TEST_CASE("recipe wiring table") {
  auto has = [](const std::vector<std::string>& v, const std::string& s) {
    return std::find(v.begin(), v.end(), s) != v.end();
  };

  Recipe full = build_variant({VariantKind::full, 4.0, 0});
  CHECK(full.use_jdn);
  CHECK(full.use_ctn);
  CHECK(full.needs_privileged);
  CHECK(full.fusion == FusionPath::conv_fused);
  CHECK_FALSE(full.two_phase);
  CHECK(has(full.trainable, "shared_enc"));
  CHECK(has(full.trainable, "t1"));
  CHECK(has(full.trainable, "fusion"));
  CHECK_FALSE(has(full.trainable, "priv_enc"));
  CHECK_FALSE(has(full.trainable, "ord_enc"));

  Recipe mj = build_variant({VariantKind::minus_jdn, 4.0, 0});
  CHECK_FALSE(mj.use_jdn);
  CHECK(mj.use_ctn);
  CHECK_FALSE(mj.needs_privileged);  // never queries the privileged branch
  CHECK(mj.fusion == FusionPath::conv_fused);

  Recipe fkd = build_variant({VariantKind::minus_jdn_plus_fkd, 4.0, 0});
  CHECK(fkd.use_fkd);
  CHECK_FALSE(fkd.use_jdn);
  CHECK(fkd.needs_privileged);

  Recipe rkd = build_variant({VariantKind::minus_jdn_plus_rkd, 4.0, 0});
  CHECK(rkd.use_rkd);
  CHECK(rkd.needs_privileged);

  Recipe mc = build_variant({VariantKind::minus_ctn, 4.0, 0});
  CHECK(mc.use_jdn);
  CHECK_FALSE(mc.use_ctn);
  CHECK(mc.fusion == FusionPath::logit_sum);
  CHECK_FALSE(has(mc.trainable, "t1"));

  Recipe ae = build_variant({VariantKind::minus_ctn_plus_ae, 4.0, 5});
  CHECK(ae.use_ae);
  CHECK(ae.fusion == FusionPath::ae_concat);
  CHECK(ae.ae_width == 5);
  CHECK(has(ae.trainable, "ae"));
  CHECK(has(ae.trainable, "fusion_ae"));

  Recipe oo = build_variant({VariantKind::ordinary_only, 4.0, 0});
  CHECK_FALSE(oo.needs_privileged);
  CHECK(oo.fusion == FusionPath::ordinary_head);
  CHECK(has(oo.trainable, "ord_enc"));
  CHECK(has(oo.trainable, "head_o"));
  CHECK_FALSE(has(oo.trainable, "shared_enc"));

  Recipe ts = build_variant({VariantKind::two_stage, 2.5, 0});
  CHECK(ts.two_phase);
  CHECK(ts.use_response_kd);
  CHECK(ts.needs_privileged);
  CHECK(ts.kd_temperature == 2.5);
  CHECK(ts.fusion == FusionPath::logit_sum);
  CHECK(has(ts.trainable, "shared_enc"));
  CHECK(has(ts.trainable_phase2, "head_s"));
  CHECK_FALSE(has(ts.trainable_phase2, "shared_enc"));

  // Wiring strings are distinct across variants (they feed run provenance).
  std::vector<std::string> wirings;
  for (VariantKind k : all_variants()) wirings.push_back(build_variant({k, 4.0, 0}).wiring_string());
  std::sort(wirings.begin(), wirings.end());
  CHECK(std::adjacent_find(wirings.begin(), wirings.end()) == wirings.end());
}
