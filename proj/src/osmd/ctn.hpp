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

#include "osmd/nn.hpp"
#include "osmd/tensor.hpp"

namespace osmd {

// Mean squared error over all elements.
double mse(const Tensor& a, const Tensor& b);
// Accumulates scale * d(mse)/da into ga and scale * d(mse)/db into gb
// (either may be null).
void mse_backward(const Tensor& a, const Tensor& b, double scale, Tensor* ga, Tensor* gb);

struct CtnTerms {
  double l_t1 = 0.0;
  double l_t2 = 0.0;
  double l_ctn = 0.0;
};

// Translation-consistency loss: both transform blocks are applied to both
// representations (parameters shared across the two inputs) and the outputs
// are compared with MSE. Gradients flow into both representations and the
// block parameters; freezing decisions belong to the caller.
CtnTerms ctn_loss(nn::ConvBlock& t1, nn::ConvBlock& t2, const Tensor& rep_s, const Tensor& rep_o,
                  nn::Mode mode, Tensor* grad_rep_s = nullptr, Tensor* grad_rep_o = nullptr,
                  bool accum_param_grads = false);

struct FuseResult {
  Tensor fused;           // [n, C, h, w]
  Tensor t1_s, t1_o, t2_s, t2_o;
};

struct FuseCtx {
  nn::ConvBlock::Ctx t1_s, t1_o, t2_s, t2_o;
  nn::Conv2d::Ctx conv;
};

// Cross-modal fusion: 1x1 convolution over the concatenation
// [T1(rep_s), T1(rep_o), T2(rep_s), T2(rep_o)].
FuseResult fuse_features(nn::ConvBlock& t1, nn::ConvBlock& t2, nn::Conv2d& fusion,
                         const Tensor& rep_s, const Tensor& rep_o, nn::Mode mode,
                         FuseCtx* ctx = nullptr);

// Mean absolute activation of a transformed ordinary-branch feature map;
// the training loop tracks this to detect a collapsing translation.
double collapse_level(const Tensor& transformed);

}  // namespace osmd
