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
#include "osmd/nn.hpp"

#include <cmath>

namespace osmd::nn {

namespace {

void kaiming_fill(Tensor& t, int fan_in, Rng& rng) {
  double s = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.normal() * s;
}

void check_4d(const Tensor& x, const char* who) {
  if (x.ndim() != 4) throw StructuralError(std::string(who) + ": expected 4-d input, got " + x.shape_str());
}

}  // namespace

// ===== Conv2d =====

Conv2d::Conv2d(int in_c, int out_c, int k, int stride, int pad, const std::string& name, Rng& rng)
    : in_c(in_c), out_c(out_c), k(k), stride(stride), pad(pad) {
  w.name = name + ".w";
  w.value = Tensor({out_c, in_c, k, k});
  w.grad = Tensor({out_c, in_c, k, k});
  kaiming_fill(w.value, in_c * k * k, rng);
  b.name = name + ".b";
  b.value = Tensor({out_c});
  b.grad = Tensor({out_c});
}

Tensor Conv2d::forward(const Tensor& x, Ctx* ctx) const {
  check_4d(x, "conv");
  if (x.dim(1) != in_c)
    throw StructuralError("conv " + w.name + ": input has " + std::to_string(x.dim(1)) +
                          " channels, expected " + std::to_string(in_c));
  int64_t n = x.dim(0), h = x.dim(2), wd = x.dim(3);
  int64_t oh = (h + 2 * pad - k) / stride + 1;
  int64_t ow = (wd + 2 * pad - k) / stride + 1;
  if (oh <= 0 || ow <= 0)
    throw StructuralError("conv " + w.name + ": input " + x.shape_str() + " too small for kernel");
  Tensor y({n, out_c, oh, ow});
  for (int64_t in = 0; in < n; ++in)
    for (int64_t oc = 0; oc < out_c; ++oc)
      for (int64_t i = 0; i < oh; ++i)
        for (int64_t j = 0; j < ow; ++j) {
          double acc = b.value[oc];
          for (int64_t ic = 0; ic < in_c; ++ic)
            for (int64_t ki = 0; ki < k; ++ki) {
              int64_t ih = i * stride - pad + ki;
              if (ih < 0 || ih >= h) continue;
              for (int64_t kj = 0; kj < k; ++kj) {
                int64_t iw = j * stride - pad + kj;
                if (iw < 0 || iw >= wd) continue;
                acc += w.value.at4(oc, ic, ki, kj) * x.at4(in, ic, ih, iw);
              }
            }
          y.at4(in, oc, i, j) = acc;
        }
  if (ctx) ctx->x = x;
  return y;
}

Tensor Conv2d::backward(const Ctx& ctx, const Tensor& gy, bool accum_params) {
  const Tensor& x = ctx.x;
  int64_t n = x.dim(0), h = x.dim(2), wd = x.dim(3);
  int64_t oh = gy.dim(2), ow = gy.dim(3);
  Tensor gx({n, in_c, h, wd});
  for (int64_t in = 0; in < n; ++in)
    for (int64_t oc = 0; oc < out_c; ++oc)
      for (int64_t i = 0; i < oh; ++i)
        for (int64_t j = 0; j < ow; ++j) {
          double g = gy.at4(in, oc, i, j);
          if (accum_params) b.grad[oc] += g;
          for (int64_t ic = 0; ic < in_c; ++ic)
            for (int64_t ki = 0; ki < k; ++ki) {
              int64_t ih = i * stride - pad + ki;
              if (ih < 0 || ih >= h) continue;
              for (int64_t kj = 0; kj < k; ++kj) {
                int64_t iw = j * stride - pad + kj;
                if (iw < 0 || iw >= wd) continue;
                gx.at4(in, ic, ih, iw) += w.value.at4(oc, ic, ki, kj) * g;
                if (accum_params) w.grad.at4(oc, ic, ki, kj) += x.at4(in, ic, ih, iw) * g;
              }
            }
        }
  return gx;
}

void Conv2d::collect_params(std::vector<Parameter*>& out) {
  out.push_back(&w);
  out.push_back(&b);
}

// ===== BatchNorm2d =====

BatchNorm2d::BatchNorm2d(int c, const std::string& name) : buf_prefix(name), c(c) {
  gamma.name = name + ".gamma";
  gamma.value = Tensor::full({c}, 1.0);
  gamma.grad = Tensor({c});
  beta.name = name + ".beta";
  beta.value = Tensor({c});
  beta.grad = Tensor({c});
  running_mean = Tensor({c});
  running_var = Tensor::full({c}, 1.0);
}

Tensor BatchNorm2d::forward(const Tensor& x, Mode mode, Ctx* ctx) {
  check_4d(x, "batchnorm");
  if (x.dim(1) != c)
    throw StructuralError("batchnorm " + buf_prefix + ": channel mismatch");
  int64_t n = x.dim(0), h = x.dim(2), wd = x.dim(3);
  int64_t m = n * h * wd;
  Tensor y(x.shape());
  Tensor xhat(x.shape());
  std::vector<double> inv_std(static_cast<size_t>(c), 0.0);
  for (int64_t ch = 0; ch < c; ++ch) {
    double mean, var;
    if (mode == Mode::train) {
      double s = 0.0;
      for (int64_t in = 0; in < n; ++in)
        for (int64_t i = 0; i < h; ++i)
          for (int64_t j = 0; j < wd; ++j) s += x.at4(in, ch, i, j);
      mean = s / static_cast<double>(m);
      double v = 0.0;
      for (int64_t in = 0; in < n; ++in)
        for (int64_t i = 0; i < h; ++i)
          for (int64_t j = 0; j < wd; ++j) {
            double d = x.at4(in, ch, i, j) - mean;
            v += d * d;
          }
      var = v / static_cast<double>(m);
      running_mean[ch] = (1.0 - momentum) * running_mean[ch] + momentum * mean;
      running_var[ch] = (1.0 - momentum) * running_var[ch] + momentum * var;
    } else {
      mean = running_mean[ch];
      var = running_var[ch];
    }
    double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<size_t>(ch)] = is;
    double g = gamma.value[ch], bt = beta.value[ch];
    for (int64_t in = 0; in < n; ++in)
      for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < wd; ++j) {
          double xh = (x.at4(in, ch, i, j) - mean) * is;
          xhat.at4(in, ch, i, j) = xh;
          y.at4(in, ch, i, j) = g * xh + bt;
        }
  }
  if (ctx) {
    ctx->xhat = std::move(xhat);
    ctx->inv_std = std::move(inv_std);
    ctx->training = (mode == Mode::train);
  }
  return y;
}

Tensor BatchNorm2d::backward(const Ctx& ctx, const Tensor& gy, bool accum_params) {
  const Tensor& xhat = ctx.xhat;
  int64_t n = gy.dim(0), h = gy.dim(2), wd = gy.dim(3);
  int64_t m = n * h * wd;
  Tensor gx(gy.shape());
  for (int64_t ch = 0; ch < c; ++ch) {
    double g = gamma.value[ch];
    double is = ctx.inv_std[static_cast<size_t>(ch)];
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int64_t in = 0; in < n; ++in)
      for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < wd; ++j) {
          double dy = gy.at4(in, ch, i, j);
          sum_dy += dy;
          sum_dy_xhat += dy * xhat.at4(in, ch, i, j);
        }
    if (accum_params) {
      beta.grad[ch] += sum_dy;
      gamma.grad[ch] += sum_dy_xhat;
    }
    if (ctx.training) {
      double inv_m = 1.0 / static_cast<double>(m);
      for (int64_t in = 0; in < n; ++in)
        for (int64_t i = 0; i < h; ++i)
          for (int64_t j = 0; j < wd; ++j) {
            double dy = gy.at4(in, ch, i, j);
            double xh = xhat.at4(in, ch, i, j);
            gx.at4(in, ch, i, j) = g * is * (dy - inv_m * sum_dy - xh * inv_m * sum_dy_xhat);
          }
    } else {
      for (int64_t in = 0; in < n; ++in)
        for (int64_t i = 0; i < h; ++i)
          for (int64_t j = 0; j < wd; ++j) gx.at4(in, ch, i, j) = gy.at4(in, ch, i, j) * g * is;
    }
  }
  return gx;
}

void BatchNorm2d::collect_params(std::vector<Parameter*>& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
}

void BatchNorm2d::collect_buffers(std::vector<std::pair<std::string, Tensor*>>& out) {
  out.emplace_back(buf_prefix + ".running_mean", &running_mean);
  out.emplace_back(buf_prefix + ".running_var", &running_var);
}

// ===== ReLU =====

Tensor relu_forward(const Tensor& x, ReluCtx* ctx) {
  Tensor y(x.shape());
  Tensor mask(x.shape());
  for (int64_t i = 0; i < x.size(); ++i) {
    if (x[i] > 0.0) {
      y[i] = x[i];
      mask[i] = 1.0;
    }
  }
  if (ctx) ctx->mask = std::move(mask);
  return y;
}

Tensor relu_backward(const ReluCtx& ctx, const Tensor& gy) {
  Tensor gx(gy.shape());
  for (int64_t i = 0; i < gy.size(); ++i) gx[i] = gy[i] * ctx.mask[i];
  return gx;
}

// ===== Linear =====

Linear::Linear(int in_f, int out_f, const std::string& name, Rng& rng) : in_f(in_f), out_f(out_f) {
  w.name = name + ".w";
  w.value = Tensor({out_f, in_f});
  w.grad = Tensor({out_f, in_f});
  kaiming_fill(w.value, in_f, rng);
  b.name = name + ".b";
  b.value = Tensor({out_f});
  b.grad = Tensor({out_f});
}

Tensor Linear::forward(const Tensor& x, Ctx* ctx) const {
  if (x.ndim() != 2 || x.dim(1) != in_f)
    throw StructuralError("linear " + w.name + ": expected [n," + std::to_string(in_f) + "], got " + x.shape_str());
  int64_t n = x.dim(0);
  Tensor y({n, out_f});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t o = 0; o < out_f; ++o) {
      double acc = b.value[o];
      for (int64_t f = 0; f < in_f; ++f) acc += w.value.at2(o, f) * x.at2(i, f);
      y.at2(i, o) = acc;
    }
  if (ctx) ctx->x = x;
  return y;
}

Tensor Linear::backward(const Ctx& ctx, const Tensor& gy, bool accum_params) {
  const Tensor& x = ctx.x;
  int64_t n = x.dim(0);
  Tensor gx({n, in_f});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t o = 0; o < out_f; ++o) {
      double g = gy.at2(i, o);
      if (accum_params) b.grad[o] += g;
      for (int64_t f = 0; f < in_f; ++f) {
        gx.at2(i, f) += w.value.at2(o, f) * g;
        if (accum_params) w.grad.at2(o, f) += x.at2(i, f) * g;
      }
    }
  return gx;
}

void Linear::collect_params(std::vector<Parameter*>& out) {
  out.push_back(&w);
  out.push_back(&b);
}

// ===== ConvBlock =====

ConvBlock::ConvBlock(int in_c, int out_c, int k, int stride, int pad, const std::string& name, Rng& rng)
    : conv(in_c, out_c, k, stride, pad, name + ".conv", rng), bn(out_c, name + ".bn") {}

Tensor ConvBlock::forward(const Tensor& x, Mode mode, Ctx* ctx) {
  Tensor y = conv.forward(x, ctx ? &ctx->conv : nullptr);
  y = bn.forward(y, mode, ctx ? &ctx->bn : nullptr);
  return relu_forward(y, ctx ? &ctx->relu : nullptr);
}

Tensor ConvBlock::backward(const Ctx& ctx, const Tensor& gy, bool accum_params) {
  Tensor g = relu_backward(ctx.relu, gy);
  g = bn.backward(ctx.bn, g, accum_params);
  return conv.backward(ctx.conv, g, accum_params);
}

void ConvBlock::collect_params(std::vector<Parameter*>& out) {
  conv.collect_params(out);
  bn.collect_params(out);
}

void ConvBlock::collect_buffers(std::vector<std::pair<std::string, Tensor*>>& out) {
  bn.collect_buffers(out);
}

// ===== pooling / resizing / concat =====

Tensor global_avg_pool(const Tensor& x) {
  check_4d(x, "global_avg_pool");
  int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor y({n, c});
  double inv = 1.0 / static_cast<double>(h * w);
  for (int64_t in = 0; in < n; ++in)
    for (int64_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < w; ++j) s += x.at4(in, ch, i, j);
      y.at2(in, ch) = s * inv;
    }
  return y;
}

Tensor global_avg_pool_backward(const Tensor& gy, int64_t h, int64_t w) {
  int64_t n = gy.dim(0), c = gy.dim(1);
  Tensor gx({n, c, h, w});
  double inv = 1.0 / static_cast<double>(h * w);
  for (int64_t in = 0; in < n; ++in)
    for (int64_t ch = 0; ch < c; ++ch) {
      double g = gy.at2(in, ch) * inv;
      for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < w; ++j) gx.at4(in, ch, i, j) = g;
    }
  return gx;
}

Tensor upsample_nearest(const Tensor& x, int factor) {
  check_4d(x, "upsample_nearest");
  if (factor == 1) return x;
  int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor y({n, c, h * factor, w * factor});
  for (int64_t in = 0; in < n; ++in)
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t i = 0; i < h * factor; ++i)
        for (int64_t j = 0; j < w * factor; ++j)
          y.at4(in, ch, i, j) = x.at4(in, ch, i / factor, j / factor);
  return y;
}

Tensor upsample_nearest_backward(const Tensor& gy, int factor) {
  if (factor == 1) return gy;
  int64_t n = gy.dim(0), c = gy.dim(1), h = gy.dim(2) / factor, w = gy.dim(3) / factor;
  Tensor gx({n, c, h, w});
  for (int64_t in = 0; in < n; ++in)
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t i = 0; i < gy.dim(2); ++i)
        for (int64_t j = 0; j < gy.dim(3); ++j)
          gx.at4(in, ch, i / factor, j / factor) += gy.at4(in, ch, i, j);
  return gx;
}

Tensor concat_channels(const std::vector<const Tensor*>& xs) {
  if (xs.empty()) throw StructuralError("concat_channels: no inputs");
  int64_t n = xs[0]->dim(0), h = xs[0]->dim(2), w = xs[0]->dim(3);
  int64_t ctot = 0;
  for (const Tensor* t : xs) {
    check_4d(*t, "concat_channels");
    if (t->dim(0) != n || t->dim(2) != h || t->dim(3) != w)
      throw StructuralError("concat_channels: mismatched shapes " + xs[0]->shape_str() + " vs " + t->shape_str());
    ctot += t->dim(1);
  }
  Tensor y({n, ctot, h, w});
  int64_t off = 0;
  for (const Tensor* t : xs) {
    int64_t c = t->dim(1);
    for (int64_t in = 0; in < n; ++in)
      for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t i = 0; i < h; ++i)
          for (int64_t j = 0; j < w; ++j) y.at4(in, off + ch, i, j) = t->at4(in, ch, i, j);
    off += c;
  }
  return y;
}

std::vector<Tensor> split_channels(const Tensor& g, const std::vector<int64_t>& widths) {
  int64_t n = g.dim(0), h = g.dim(2), w = g.dim(3);
  std::vector<Tensor> outs;
  int64_t off = 0;
  for (int64_t c : widths) {
    Tensor t({n, c, h, w});
    for (int64_t in = 0; in < n; ++in)
      for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t i = 0; i < h; ++i)
          for (int64_t j = 0; j < w; ++j) t.at4(in, ch, i, j) = g.at4(in, off + ch, i, j);
    off += c;
    outs.push_back(std::move(t));
  }
  if (off != g.dim(1)) throw StructuralError("split_channels: widths do not cover input");
  return outs;
}

// ===== Encoder =====

Encoder::Encoder(int in_c, const std::vector<int>& widths, const std::string& name, Rng& rng)
    : in_c_(in_c), widths_(widths) {
  if (widths.empty()) throw ConfigError("encoder " + name + ": needs at least one stage width");
  int c = in_c;
  for (size_t i = 0; i < widths.size(); ++i) {
    stages.emplace_back(c, widths[i], 3, 2, 1, name + ".stage" + std::to_string(i), rng);
    c = widths[i];
  }
}

Tensor Encoder::forward(const Tensor& x, Mode mode, Ctx* ctx) {
  if (ctx) ctx->stages.resize(stages.size());
  Tensor y = x;
  for (size_t i = 0; i < stages.size(); ++i)
    y = stages[i].forward(y, mode, ctx ? &ctx->stages[i] : nullptr);
  return y;
}

Tensor Encoder::backward(const Ctx& ctx, const Tensor& gy, bool accum_params) {
  Tensor g = gy;
  for (size_t i = stages.size(); i-- > 0;) g = stages[i].backward(ctx.stages[i], g, accum_params);
  return g;
}

void Encoder::collect_params(std::vector<Parameter*>& out) {
  for (auto& s : stages) s.collect_params(out);
}

void Encoder::collect_buffers(std::vector<std::pair<std::string, Tensor*>>& out) {
  for (auto& s : stages) s.collect_buffers(out);
}

// ===== Head =====

Head::Head(HeadKind kind, int in_c, int n_out, int upsample, const std::string& name, Rng& rng)
    : kind(kind), upsample(upsample) {
  if (kind == HeadKind::pooled) {
    lin = Linear(in_c, n_out, name + ".lin", rng);
  } else {
    conv1x1 = Conv2d(in_c, n_out, 1, 1, 0, name + ".conv", rng);
  }
}

Tensor Head::forward(const Tensor& rep, Ctx* ctx) const {
  if (kind == HeadKind::pooled) {
    if (ctx) {
      ctx->h = rep.dim(2);
      ctx->w = rep.dim(3);
    }
    Tensor pooled = global_avg_pool(rep);
    return lin.forward(pooled, ctx ? &ctx->lin : nullptr);
  }
  Tensor y = conv1x1.forward(rep, ctx ? &ctx->conv : nullptr);
  return upsample_nearest(y, upsample);
}

Tensor Head::backward(const Ctx& ctx, const Tensor& gy, bool accum_params) {
  if (kind == HeadKind::pooled) {
    Tensor g = lin.backward(ctx.lin, gy, accum_params);
    return global_avg_pool_backward(g, ctx.h, ctx.w);
  }
  Tensor g = upsample_nearest_backward(gy, upsample);
  return conv1x1.backward(ctx.conv, g, accum_params);
}

void Head::collect_params(std::vector<Parameter*>& out) {
  if (kind == HeadKind::pooled)
    lin.collect_params(out);
  else
    conv1x1.collect_params(out);
}

// ===== SGD =====

void Sgd::step(const std::vector<Parameter*>& params, double lr_scale) {
  for (Parameter* p : params) {
    auto it = velocity.find(p->name);
    if (it == velocity.end()) it = velocity.emplace(p->name, Tensor(p->value.shape())).first;
    Tensor& v = it->second;
    double step_lr = lr * lr_scale;
    for (int64_t i = 0; i < p->value.size(); ++i) {
      v[i] = momentum * v[i] + p->grad[i];
      p->value[i] -= step_lr * v[i];
    }
  }
}

// ===== losses =====

Tensor log_softmax_rows(const Tensor& logits) {
  if (logits.ndim() != 2) throw StructuralError("log_softmax_rows: expected [m,n]");
  int64_t m = logits.dim(0), n = logits.dim(1);
  Tensor out({m, n});
  for (int64_t i = 0; i < m; ++i) {
    double mx = logits.at2(i, 0);
    for (int64_t j = 1; j < n; ++j) mx = std::max(mx, logits.at2(i, j));
    double lse = 0.0;
    for (int64_t j = 0; j < n; ++j) lse += std::exp(logits.at2(i, j) - mx);
    lse = mx + std::log(lse);
    for (int64_t j = 0; j < n; ++j) out.at2(i, j) = logits.at2(i, j) - lse;
  }
  return out;
}

CeResult cross_entropy_pooled(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.ndim() != 2) throw StructuralError("cross_entropy: expected [n,K] logits");
  if (!logits.all_finite()) throw NumericError("cross_entropy: non-finite logits");
  int64_t n = logits.dim(0), k = logits.dim(1);
  if (static_cast<int64_t>(labels.size()) != n)
    throw StructuralError("cross_entropy: label count mismatch");
  Tensor logp = log_softmax_rows(logits);
  CeResult r;
  r.grad = Tensor({n, k});
  double inv_n = 1.0 / static_cast<double>(n);
  for (int64_t i = 0; i < n; ++i) {
    int y = labels[static_cast<size_t>(i)];
    if (y < 0 || y >= k) throw DataError("cross_entropy: label " + std::to_string(y) + " out of range");
    r.value -= logp.at2(i, y) * inv_n;
    for (int64_t j = 0; j < k; ++j)
      r.grad.at2(i, j) = (std::exp(logp.at2(i, j)) - (j == y ? 1.0 : 0.0)) * inv_n;
  }
  return r;
}

CeResult cross_entropy_dense(const Tensor& logits, const std::vector<int>& labels, int ignore_label) {
  check_4d(logits, "cross_entropy_dense");
  if (!logits.all_finite()) throw NumericError("cross_entropy: non-finite logits");
  int64_t n = logits.dim(0), k = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
  if (static_cast<int64_t>(labels.size()) != n * h * w)
    throw StructuralError("cross_entropy_dense: label count mismatch");
  CeResult r;
  r.grad = Tensor(logits.shape());
  // First pass: count valid positions.
  int64_t valid = 0;
  for (int lab : labels)
    if (lab != ignore_label) ++valid;
  if (valid == 0) throw DataError("cross_entropy_dense: no valid positions");
  double inv_v = 1.0 / static_cast<double>(valid);
  std::vector<double> row(static_cast<size_t>(k));
  for (int64_t in = 0; in < n; ++in)
    for (int64_t i = 0; i < h; ++i)
      for (int64_t j = 0; j < w; ++j) {
        int y = labels[static_cast<size_t>((in * h + i) * w + j)];
        if (y == ignore_label) continue;
        if (y < 0 || y >= k) throw DataError("cross_entropy_dense: label " + std::to_string(y) + " out of range");
        double mx = logits.at4(in, 0, i, j);
        for (int64_t ch = 1; ch < k; ++ch) mx = std::max(mx, logits.at4(in, ch, i, j));
        double lse = 0.0;
        for (int64_t ch = 0; ch < k; ++ch) {
          row[static_cast<size_t>(ch)] = std::exp(logits.at4(in, ch, i, j) - mx);
          lse += row[static_cast<size_t>(ch)];
        }
        r.value -= (logits.at4(in, y, i, j) - mx - std::log(lse)) * inv_v;
        for (int64_t ch = 0; ch < k; ++ch)
          r.grad.at4(in, ch, i, j) =
              (row[static_cast<size_t>(ch)] / lse - (ch == y ? 1.0 : 0.0)) * inv_v;
      }
  return r;
}

}  // namespace osmd::nn
