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
#include <vector>

#include "osmd/nn.hpp"
#include "osmd/tensor.hpp"

namespace osmd {

// Temperature-softened distillation: T^2 * sum_i KL(softmax(p_i/T) || softmax(s_i/T)).
// At T = 1 this is identical to the conditional transfer term. No gradient
// flows into the teacher logits.
double response_kd_loss(const Tensor& logits_p, const Tensor& logits_s, double temperature,
                        Tensor* grad_s = nullptr);

// Plain feature regression onto the privileged representation (teacher side
// detached). Accepts any matching shapes.
double feature_hint_loss(const Tensor& rep_s, const Tensor& rep_p, Tensor* grad_s = nullptr);

// MSE between the batch cosine-similarity Gram matrices of student and
// teacher rows [b, d]; requires b >= 2.
double relation_kd_loss(const Tensor& rep_s, const Tensor& rep_p, Tensor* grad_s = nullptr);

// Two-layer 1x1-conv bottleneck translating the shared representation into
// ordinary-representation space.
class AeTranslator {
 public:
  AeTranslator() = default;
  AeTranslator(int channels, int bottleneck, const std::string& name, Rng& rng);

  struct Ctx {
    nn::Conv2d::Ctx c1, c2;
    nn::ReluCtx relu;
  };

  Tensor forward(const Tensor& x, Ctx* ctx = nullptr) const;
  Tensor backward(const Ctx& ctx, const Tensor& gy, bool accum_params);
  void collect_params(std::vector<nn::Parameter*>& out);

  nn::Conv2d enc, dec;
};

// MSE between the translated shared representation and the ordinary
// representation. Gradients flow into the translator and rep_s only.
double autoencoder_translation_loss(AeTranslator& ae, const Tensor& rep_s, const Tensor& rep_o,
                                    Tensor* grad_rep_s = nullptr, bool accum_param_grads = false);

// Output-level fusion by elementwise logit addition.
Tensor logit_sum_fusion(const Tensor& logits_a, const Tensor& logits_b);

enum class VariantKind {
  full,
  minus_jdn,
  minus_jdn_plus_fkd,
  minus_jdn_plus_rkd,
  minus_ctn,
  minus_ctn_plus_ae,
  ordinary_only,
  two_stage,
};

const std::vector<VariantKind>& all_variants();
std::string variant_name(VariantKind k);
VariantKind variant_from_string(const std::string& s);  // ConfigError on unknown

enum class FusionPath { conv_fused, logit_sum, ae_concat, ordinary_head };

struct VariantSpec {
  VariantKind kind = VariantKind::full;
  double kd_temperature = 4.0;
  int ae_width = 0;  // 0 = half the representation width
};

// Which losses are active, how predictions are wired, and which modules train.
struct Recipe {
  VariantKind kind = VariantKind::full;
  FusionPath fusion = FusionPath::conv_fused;
  bool use_jdn = false;
  bool use_ctn = false;
  bool use_fkd = false;
  bool use_rkd = false;
  bool use_ae = false;
  bool use_response_kd = false;
  bool needs_privileged = false;
  bool two_phase = false;
  double kd_temperature = 4.0;
  int ae_width = 0;
  std::vector<std::string> trainable;
  std::vector<std::string> trainable_phase2;

  std::string wiring_string() const;
  uint64_t digest() const;
};

Recipe build_variant(const VariantSpec& spec);

}  // namespace osmd
