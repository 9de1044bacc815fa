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
#include "osmd/baselines.hpp"

#include <cmath>
#include <sstream>

#include "osmd/ctn.hpp"

namespace osmd {

double response_kd_loss(const Tensor& logits_p, const Tensor& logits_s, double temperature,
                        Tensor* grad_s) {
  if (temperature <= 0.0) throw ConfigError("response_kd_loss: temperature must be positive");
  if (logits_p.ndim() != 2 || !logits_p.same_shape(logits_s))
    throw StructuralError("response_kd_loss: expected matching [m,n] logits, got " +
                          logits_p.shape_str() + " vs " + logits_s.shape_str());
  if (!logits_p.all_finite() || !logits_s.all_finite())
    throw NumericError("response_kd_loss: non-finite logits");
  int64_t m = logits_p.dim(0), n = logits_p.dim(1);
  Tensor sp({m, n}), ss({m, n});
  double inv_t = 1.0 / temperature;
  for (int64_t i = 0; i < m * n; ++i) {
    sp[i] = logits_p[i] * inv_t;
    ss[i] = logits_s[i] * inv_t;
  }
  Tensor logp = nn::log_softmax_rows(sp);
  Tensor logq = nn::log_softmax_rows(ss);
  double t2 = temperature * temperature;
  double v = 0.0;
  if (grad_s) *grad_s = Tensor({m, n});
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) {
      double pj = std::exp(logp.at2(i, j));
      v += pj * (logp.at2(i, j) - logq.at2(i, j));
      if (grad_s) grad_s->at2(i, j) = temperature * (std::exp(logq.at2(i, j)) - pj);
    }
  return t2 * v;
}

double feature_hint_loss(const Tensor& rep_s, const Tensor& rep_p, Tensor* grad_s) {
  double v = mse(rep_s, rep_p);
  if (grad_s) {
    *grad_s = Tensor(rep_s.shape());
    mse_backward(rep_s, rep_p, 1.0, grad_s, nullptr);
  }
  return v;
}

double relation_kd_loss(const Tensor& rep_s, const Tensor& rep_p, Tensor* grad_s) {
  if (rep_s.ndim() != 2 || !rep_s.same_shape(rep_p))
    throw StructuralError("relation_kd_loss: expected matching [b,d] rows, got " +
                          rep_s.shape_str() + " vs " + rep_p.shape_str());
  if (!rep_s.all_finite() || !rep_p.all_finite())
    throw NumericError("relation_kd_loss: non-finite input");
  int64_t b = rep_s.dim(0), d = rep_s.dim(1);
  if (b < 2) throw StructuralError("relation_kd_loss: needs a batch of at least two rows");

  const double kNormFloor = 1e-12;
  auto gram = [&](const Tensor& x, Tensor& unit, std::vector<double>& norms) {
    unit = Tensor({b, d});
    norms.assign(static_cast<size_t>(b), 0.0);
    for (int64_t i = 0; i < b; ++i) {
      double r = 0.0;
      for (int64_t t = 0; t < d; ++t) r += x.at2(i, t) * x.at2(i, t);
      r = std::max(std::sqrt(r), kNormFloor);
      norms[static_cast<size_t>(i)] = r;
      for (int64_t t = 0; t < d; ++t) unit.at2(i, t) = x.at2(i, t) / r;
    }
    Tensor g({b, b});
    for (int64_t i = 0; i < b; ++i)
      for (int64_t j = 0; j < b; ++j) {
        if (i == j) {
          g.at2(i, j) = 1.0;
          continue;
        }
        double s = 0.0;
        for (int64_t t = 0; t < d; ++t) s += unit.at2(i, t) * unit.at2(j, t);
        g.at2(i, j) = s;
      }
    return g;
  };

  Tensor us, up;
  std::vector<double> ns, np;
  Tensor gs = gram(rep_s, us, ns);
  Tensor gp = gram(rep_p, up, np);

  double inv_b2 = 1.0 / static_cast<double>(b * b);
  double v = 0.0;
  for (int64_t i = 0; i < b * b; ++i) {
    double diff = gs[i] - gp[i];
    v += diff * diff;
  }
  v *= inv_b2;

  if (grad_s) {
    *grad_s = Tensor({b, d});
    for (int64_t i = 0; i < b; ++i) {
      double ri = ns[static_cast<size_t>(i)];
      for (int64_t j = 0; j < b; ++j) {
        if (j == i) continue;  // diagonal entries are constant 1
        double dij = 2.0 * inv_b2 * (gs.at2(i, j) - gp.at2(i, j));
        // G_ij appears at (i,j) and (j,i); both derivatives land on s_i.
        double f = 2.0 * dij / ri;
        for (int64_t t = 0; t < d; ++t)
          grad_s->at2(i, t) += f * (us.at2(j, t) - gs.at2(i, j) * us.at2(i, t));
      }
    }
  }
  return v;
}

AeTranslator::AeTranslator(int channels, int bottleneck, const std::string& name, Rng& rng)
    : enc(channels, bottleneck, 1, 1, 0, name + ".enc", rng),
      dec(bottleneck, channels, 1, 1, 0, name + ".dec", rng) {}

Tensor AeTranslator::forward(const Tensor& x, Ctx* ctx) const {
  Tensor h = enc.forward(x, ctx ? &ctx->c1 : nullptr);
  h = relu_forward(h, ctx ? &ctx->relu : nullptr);
  return dec.forward(h, ctx ? &ctx->c2 : nullptr);
}

Tensor AeTranslator::backward(const Ctx& ctx, const Tensor& gy, bool accum_params) {
  Tensor g = dec.backward(ctx.c2, gy, accum_params);
  g = relu_backward(ctx.relu, g);
  return enc.backward(ctx.c1, g, accum_params);
}

void AeTranslator::collect_params(std::vector<nn::Parameter*>& out) {
  enc.collect_params(out);
  dec.collect_params(out);
}

double autoencoder_translation_loss(AeTranslator& ae, const Tensor& rep_s, const Tensor& rep_o,
                                    Tensor* grad_rep_s, bool accum_param_grads) {
  if (!rep_s.same_shape(rep_o))
    throw StructuralError("autoencoder_translation_loss: shape mismatch " + rep_s.shape_str() +
                          " vs " + rep_o.shape_str());
  bool need_grad = grad_rep_s || accum_param_grads;
  AeTranslator::Ctx ctx;
  Tensor recon = ae.forward(rep_s, need_grad ? &ctx : nullptr);
  double v = mse(recon, rep_o);
  if (need_grad) {
    Tensor grecon(recon.shape());
    mse_backward(recon, rep_o, 1.0, &grecon, nullptr);
    Tensor gs = ae.backward(ctx, grecon, accum_param_grads);
    if (grad_rep_s) *grad_rep_s = std::move(gs);
  }
  return v;
}

Tensor logit_sum_fusion(const Tensor& logits_a, const Tensor& logits_b) {
  if (!logits_a.same_shape(logits_b))
    throw StructuralError("logit_sum_fusion: shape mismatch " + logits_a.shape_str() + " vs " +
                          logits_b.shape_str());
  Tensor out = logits_a;
  out += logits_b;
  return out;
}

const std::vector<VariantKind>& all_variants() {
  static const std::vector<VariantKind> v = {
      VariantKind::full,          VariantKind::minus_jdn,
      VariantKind::minus_jdn_plus_fkd, VariantKind::minus_jdn_plus_rkd,
      VariantKind::minus_ctn,     VariantKind::minus_ctn_plus_ae,
      VariantKind::ordinary_only, VariantKind::two_stage,
  };
  return v;
}

std::string variant_name(VariantKind k) {
  switch (k) {
    case VariantKind::full: return "full";
    case VariantKind::minus_jdn: return "minus_jdn";
    case VariantKind::minus_jdn_plus_fkd: return "minus_jdn_plus_fkd";
    case VariantKind::minus_jdn_plus_rkd: return "minus_jdn_plus_rkd";
    case VariantKind::minus_ctn: return "minus_ctn";
    case VariantKind::minus_ctn_plus_ae: return "minus_ctn_plus_ae";
    case VariantKind::ordinary_only: return "ordinary_only";
    case VariantKind::two_stage: return "two_stage";
  }
  throw ConfigError("variant_name: unknown variant");
}

VariantKind variant_from_string(const std::string& s) {
  for (VariantKind k : all_variants())
    if (variant_name(k) == s) return k;
  throw ConfigError("unknown variant '" + s + "'");
}

std::string Recipe::wiring_string() const {
  std::ostringstream os;
  os << variant_name(kind) << "|fusion=";
  switch (fusion) {
    case FusionPath::conv_fused: os << "conv_fused"; break;
    case FusionPath::logit_sum: os << "logit_sum"; break;
    case FusionPath::ae_concat: os << "ae_concat"; break;
    case FusionPath::ordinary_head: os << "ordinary_head"; break;
  }
  os << "|jdn=" << use_jdn << "|ctn=" << use_ctn << "|fkd=" << use_fkd << "|rkd=" << use_rkd
     << "|ae=" << use_ae << "|rkl=" << use_response_kd << "|priv=" << needs_privileged
     << "|two_phase=" << two_phase << "|kdT=" << kd_temperature << "|aew=" << ae_width
     << "|train=";
  for (const auto& t : trainable) os << t << ",";
  os << "|train2=";
  for (const auto& t : trainable_phase2) os << t << ",";
  return os.str();
}

uint64_t Recipe::digest() const { return fnv1a64_str(wiring_string()); }

Recipe build_variant(const VariantSpec& spec) {
  Recipe r;
  r.kind = spec.kind;
  r.kd_temperature = spec.kd_temperature;
  r.ae_width = spec.ae_width;
  switch (spec.kind) {
    case VariantKind::full:
      r.fusion = FusionPath::conv_fused;
      r.use_jdn = true;
      r.use_ctn = true;
      r.needs_privileged = true;
      r.trainable = {"shared_enc", "head_s", "t1", "t2", "fusion", "task_head"};
      break;
    case VariantKind::minus_jdn:
      r.fusion = FusionPath::conv_fused;
      r.use_ctn = true;
      r.needs_privileged = false;
      r.trainable = {"shared_enc", "head_s", "t1", "t2", "fusion", "task_head"};
      break;
    case VariantKind::minus_jdn_plus_fkd:
      r.fusion = FusionPath::conv_fused;
      r.use_ctn = true;
      r.use_fkd = true;
      r.needs_privileged = true;
      r.trainable = {"shared_enc", "head_s", "t1", "t2", "fusion", "task_head"};
      break;
    case VariantKind::minus_jdn_plus_rkd:
      r.fusion = FusionPath::conv_fused;
      r.use_ctn = true;
      r.use_rkd = true;
      r.needs_privileged = true;
      r.trainable = {"shared_enc", "head_s", "t1", "t2", "fusion", "task_head"};
      break;
    case VariantKind::minus_ctn:
      r.fusion = FusionPath::logit_sum;
      r.use_jdn = true;
      r.needs_privileged = true;
      r.trainable = {"shared_enc", "head_s"};
      break;
    case VariantKind::minus_ctn_plus_ae:
      r.fusion = FusionPath::ae_concat;
      r.use_jdn = true;
      r.use_ae = true;
      r.needs_privileged = true;
      r.trainable = {"shared_enc", "head_s", "ae", "fusion_ae", "task_head"};
      break;
    case VariantKind::ordinary_only:
      r.fusion = FusionPath::ordinary_head;
      r.needs_privileged = false;
      r.trainable = {"ord_enc", "head_o"};
      break;
    case VariantKind::two_stage:
      r.fusion = FusionPath::logit_sum;
      r.use_response_kd = true;
      r.needs_privileged = true;
      r.two_phase = true;
      r.trainable = {"shared_enc", "head_s"};
      r.trainable_phase2 = {"head_s"};
      break;
  }
  return r;
}

}  // namespace osmd
