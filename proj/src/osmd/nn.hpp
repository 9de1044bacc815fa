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

#include <map>
#include <string>
#include <vector>

#include "osmd/common.hpp"
#include "osmd/tensor.hpp"

namespace osmd::nn {

enum class Mode { train, eval };

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
};

// Contexts hold whatever a layer needs to run backward for one forward call.
// They are external so a parameter-shared module can be applied to several
// inputs within a single step.

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in_c, int out_c, int k, int stride, int pad, const std::string& name, Rng& rng);

  struct Ctx {
    Tensor x;
  };

  Tensor forward(const Tensor& x, Ctx* ctx = nullptr) const;
  // Returns grad wrt input; accumulates parameter grads when accum_params.
  Tensor backward(const Ctx& ctx, const Tensor& gy, bool accum_params);

  void collect_params(std::vector<Parameter*>& out);

  Parameter w;  // [out_c, in_c, k, k]
  Parameter b;  // [out_c]
  int in_c = 0, out_c = 0, k = 1, stride = 1, pad = 0;
};

class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(int c, const std::string& name);

  struct Ctx {
    Tensor xhat;
    std::vector<double> inv_std;
    bool training = false;
  };

  Tensor forward(const Tensor& x, Mode mode, Ctx* ctx = nullptr);
  Tensor backward(const Ctx& ctx, const Tensor& gy, bool accum_params);

  void collect_params(std::vector<Parameter*>& out);
  void collect_buffers(std::vector<std::pair<std::string, Tensor*>>& out);

  Parameter gamma, beta;
  Tensor running_mean, running_var;
  std::string buf_prefix;
  int c = 0;
  double eps = 1e-5;
  double momentum = 0.1;
};

struct ReluCtx {
  Tensor mask;
};
Tensor relu_forward(const Tensor& x, ReluCtx* ctx = nullptr);
Tensor relu_backward(const ReluCtx& ctx, const Tensor& gy);

class Linear {
 public:
  Linear() = default;
  Linear(int in_f, int out_f, const std::string& name, Rng& rng);

  struct Ctx {
    Tensor x;
  };

  Tensor forward(const Tensor& x, Ctx* ctx = nullptr) const;  // [n,in] -> [n,out]
  Tensor backward(const Ctx& ctx, const Tensor& gy, bool accum_params);

  void collect_params(std::vector<Parameter*>& out);

  Parameter w;  // [out, in]
  Parameter b;  // [out]
  int in_f = 0, out_f = 0;
};

// 3x3 (or 1x1) convolution + batch norm + ReLU.
struct ConvBlock {
  ConvBlock() = default;
  ConvBlock(int in_c, int out_c, int k, int stride, int pad, const std::string& name, Rng& rng);

  struct Ctx {
    Conv2d::Ctx conv;
    BatchNorm2d::Ctx bn;
    ReluCtx relu;
  };

  Tensor forward(const Tensor& x, Mode mode, Ctx* ctx = nullptr);
  Tensor backward(const Ctx& ctx, const Tensor& gy, bool accum_params);

  void collect_params(std::vector<Parameter*>& out);
  void collect_buffers(std::vector<std::pair<std::string, Tensor*>>& out);

  Conv2d conv;
  BatchNorm2d bn;
};

Tensor global_avg_pool(const Tensor& x);  // [n,c,h,w] -> [n,c]
Tensor global_avg_pool_backward(const Tensor& gy, int64_t h, int64_t w);
Tensor upsample_nearest(const Tensor& x, int factor);
Tensor upsample_nearest_backward(const Tensor& gy, int factor);
Tensor concat_channels(const std::vector<const Tensor*>& xs);
std::vector<Tensor> split_channels(const Tensor& g, const std::vector<int64_t>& widths);

// Stack of stride-2 conv blocks. Output spatial size = input / 2^stages.
class Encoder {
 public:
  Encoder() = default;
  Encoder(int in_c, const std::vector<int>& widths, const std::string& name, Rng& rng);

  struct Ctx {
    std::vector<ConvBlock::Ctx> stages;
  };

  Tensor forward(const Tensor& x, Mode mode, Ctx* ctx = nullptr);
  Tensor backward(const Ctx& ctx, const Tensor& gy, bool accum_params);

  void collect_params(std::vector<Parameter*>& out);
  void collect_buffers(std::vector<std::pair<std::string, Tensor*>>& out);

  int out_channels() const { return widths_.empty() ? 0 : widths_.back(); }
  int in_channels() const { return in_c_; }
  int downsample_factor() const { return 1 << static_cast<int>(stages.size()); }

  std::vector<ConvBlock> stages;

 private:
  int in_c_ = 0;
  std::vector<int> widths_;
};

enum class HeadKind { pooled, dense };

// pooled: global average pool + linear -> [n, K].
// dense: 1x1 conv (+ optional nearest upsample) -> [n, K, h*f, w*f].
class Head {
 public:
  Head() = default;
  Head(HeadKind kind, int in_c, int n_out, int upsample, const std::string& name, Rng& rng);

  struct Ctx {
    int64_t h = 0, w = 0;
    Linear::Ctx lin;
    Conv2d::Ctx conv;
  };

  Tensor forward(const Tensor& rep, Ctx* ctx = nullptr) const;
  Tensor backward(const Ctx& ctx, const Tensor& gy, bool accum_params);

  void collect_params(std::vector<Parameter*>& out);

  HeadKind kind = HeadKind::pooled;
  int upsample = 1;
  Linear lin;
  Conv2d conv1x1;
};

class Sgd {
 public:
  Sgd() = default;
  Sgd(double lr, double momentum) : lr(lr), momentum(momentum) {}

  void step(const std::vector<Parameter*>& params, double lr_scale = 1.0);

  double lr = 0.0;
  double momentum = 0.0;
  std::map<std::string, Tensor> velocity;
};

struct CeResult {
  double value = 0.0;
  Tensor grad;  // same shape as logits
};

// Mean cross-entropy over samples; logits [n,K].
CeResult cross_entropy_pooled(const Tensor& logits, const std::vector<int>& labels);
// Mean cross-entropy over valid positions; logits [n,K,H,W], labels row-major
// per sample, ignore_label positions excluded (pass -1 to keep all).
CeResult cross_entropy_dense(const Tensor& logits, const std::vector<int>& labels, int ignore_label);

// Row-wise log-softmax of [m,n].
Tensor log_softmax_rows(const Tensor& logits);

}  // namespace osmd::nn
