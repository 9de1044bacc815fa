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
#include "osmd/ctn.hpp"

namespace osmd {

double mse(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b))
    throw StructuralError("mse: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  if (a.size() == 0) throw StructuralError("mse: empty input");
  if (!a.all_finite() || !b.all_finite()) throw NumericError("mse: non-finite input");
  double s = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

void mse_backward(const Tensor& a, const Tensor& b, double scale, Tensor* ga, Tensor* gb) {
  double f = 2.0 * scale / static_cast<double>(a.size());
  for (int64_t i = 0; i < a.size(); ++i) {
    double d = f * (a[i] - b[i]);
    if (ga) (*ga)[i] += d;
    if (gb) (*gb)[i] -= d;
  }
}

CtnTerms ctn_loss(nn::ConvBlock& t1, nn::ConvBlock& t2, const Tensor& rep_s, const Tensor& rep_o,
                  nn::Mode mode, Tensor* grad_rep_s, Tensor* grad_rep_o, bool accum_param_grads) {
  if (!rep_s.same_shape(rep_o))
    throw StructuralError("ctn_loss: representation shape mismatch " + rep_s.shape_str() + " vs " +
                          rep_o.shape_str());
  nn::ConvBlock::Ctx c1s, c1o, c2s, c2o;
  bool need_grad = grad_rep_s || grad_rep_o || accum_param_grads;
  Tensor a1 = t1.forward(rep_s, mode, need_grad ? &c1s : nullptr);
  Tensor a2 = t1.forward(rep_o, mode, need_grad ? &c1o : nullptr);
  Tensor b1 = t2.forward(rep_s, mode, need_grad ? &c2s : nullptr);
  Tensor b2 = t2.forward(rep_o, mode, need_grad ? &c2o : nullptr);

  CtnTerms t;
  t.l_t1 = mse(a1, a2);
  t.l_t2 = mse(b1, b2);
  t.l_ctn = t.l_t1 + t.l_t2;

  if (need_grad) {
    Tensor ga1(a1.shape()), ga2(a2.shape()), gb1(b1.shape()), gb2(b2.shape());
    mse_backward(a1, a2, 1.0, &ga1, &ga2);
    mse_backward(b1, b2, 1.0, &gb1, &gb2);
    Tensor gs1 = t1.backward(c1s, ga1, accum_param_grads);
    Tensor go1 = t1.backward(c1o, ga2, accum_param_grads);
    Tensor gs2 = t2.backward(c2s, gb1, accum_param_grads);
    Tensor go2 = t2.backward(c2o, gb2, accum_param_grads);
    if (grad_rep_s) {
      *grad_rep_s = std::move(gs1);
      *grad_rep_s += gs2;
    }
    if (grad_rep_o) {
      *grad_rep_o = std::move(go1);
      *grad_rep_o += go2;
    }
  }
  return t;
}

FuseResult fuse_features(nn::ConvBlock& t1, nn::ConvBlock& t2, nn::Conv2d& fusion,
                         const Tensor& rep_s, const Tensor& rep_o, nn::Mode mode, FuseCtx* ctx) {
  if (!rep_s.same_shape(rep_o))
    throw StructuralError("fuse_features: representation shape mismatch " + rep_s.shape_str() +
                          " vs " + rep_o.shape_str());
  FuseResult r;
  r.t1_s = t1.forward(rep_s, mode, ctx ? &ctx->t1_s : nullptr);
  r.t1_o = t1.forward(rep_o, mode, ctx ? &ctx->t1_o : nullptr);
  r.t2_s = t2.forward(rep_s, mode, ctx ? &ctx->t2_s : nullptr);
  r.t2_o = t2.forward(rep_o, mode, ctx ? &ctx->t2_o : nullptr);
  Tensor cat = nn::concat_channels({&r.t1_s, &r.t1_o, &r.t2_s, &r.t2_o});
  r.fused = fusion.forward(cat, ctx ? &ctx->conv : nullptr);
  return r;
}

double collapse_level(const Tensor& transformed) { return transformed.abs_mean(); }

}  // namespace osmd
