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
#include "osmd/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "osmd/ctn.hpp"
#include "osmd/data.hpp"
#include "osmd/jdn.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace osmd {

namespace {

bool contains(const std::vector<std::string>& v, const std::string& s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

uint64_t stream_seed(uint64_t seed, const std::string& tag, uint64_t index) {
  return Rng::stream(seed, tag, index).next_u64();
}

Tensor flatten_rows(const Tensor& x) {
  if (x.ndim() == 2) return x;
  int64_t b = x.dim(0);
  return x.reshaped({b, x.size() / b});
}

// Row extraction for the conditional/response transfer terms. Pooled logits
// pass through; dense logits are subsampled to at most `cap` positions per
// sample (deterministic per step).
struct LogitRows {
  Tensor rows_s, rows_p;
  bool dense = false;
  std::vector<int64_t> positions;  // flattened h*w indices, per sample in order
  int64_t per_sample = 0;
};

LogitRows make_logit_rows(const Tensor& logits_s, const Tensor& logits_p, int cap, Rng& rng) {
  LogitRows out;
  if (logits_s.ndim() == 2) {
    out.rows_s = logits_s;
    out.rows_p = logits_p;
    return out;
  }
  out.dense = true;
  int64_t b = logits_s.dim(0), k = logits_s.dim(1), h = logits_s.dim(2), w = logits_s.dim(3);
  int64_t hw = h * w;
  int64_t m = std::min<int64_t>(cap, hw);
  out.per_sample = m;
  out.positions.reserve(static_cast<size_t>(b * m));
  out.rows_s = Tensor({b * m, k});
  out.rows_p = Tensor({b * m, k});
  std::vector<int64_t> idx(static_cast<size_t>(hw));
  for (int64_t i = 0; i < b; ++i) {
    for (int64_t p = 0; p < hw; ++p) idx[static_cast<size_t>(p)] = p;
    if (m < hw) {
      // Partial Fisher-Yates: the first m entries become the sample.
      for (int64_t j = 0; j < m; ++j) {
        int64_t r = j + static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(hw - j)));
        std::swap(idx[static_cast<size_t>(j)], idx[static_cast<size_t>(r)]);
      }
    }
    for (int64_t j = 0; j < m; ++j) {
      int64_t pos = idx[static_cast<size_t>(j)];
      out.positions.push_back(pos);
      int64_t y = pos / w, x = pos % w;
      for (int64_t c = 0; c < k; ++c) {
        out.rows_s.at2(i * m + j, c) = logits_s.at4(i, c, y, x);
        out.rows_p.at2(i * m + j, c) = logits_p.at4(i, c, y, x);
      }
    }
  }
  return out;
}

// Maps a gradient over the extracted rows back onto the logits tensor.
Tensor scatter_rows_grad(const LogitRows& rows, const Tensor& g_rows, const Tensor& like) {
  if (!rows.dense) return g_rows;
  Tensor g(like.shape());
  int64_t k = like.dim(1), w = like.dim(3);
  int64_t m = rows.per_sample;
  for (int64_t r = 0; r < g_rows.dim(0); ++r) {
    int64_t i = r / m;
    int64_t pos = rows.positions[static_cast<size_t>(r)];
    int64_t y = pos / w, x = pos % w;
    for (int64_t c = 0; c < k; ++c) g.at4(i, c, y, x) += g_rows.at2(r, c);
  }
  return g;
}

double lr_at(const std::string& schedule, double base, int64_t step, int64_t total) {
  if (schedule != "one_cycle" || total <= 1) return base;
  double p = static_cast<double>(step) / static_cast<double>(total);
  if (p < 0.3) return base * (0.1 + 0.9 * (p / 0.3));
  return base * (1.0 - 0.99 * ((p - 0.3) / 0.7));
}

void apply_hflip(PairedBatch& b, TaskKind task, Rng& rng) {
  int64_t h = b.x_o.dim(2), w = b.x_o.dim(3);
  for (int64_t i = 0; i < b.size(); ++i) {
    if (rng.uniform() < 0.5) {
      hflip_inplace(b.x_o, i);
      hflip_inplace(b.x_p, i);
      if (task == TaskKind::segmentation)
        hflip_label_map(b.labels, i * h * w, static_cast<int>(h), static_cast<int>(w));
    }
  }
}

std::string qjoin(const std::vector<std::string>& parts) {
  std::string s;
  for (const auto& p : parts) {
    s += p;
    s += '|';
  }
  return s;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << text;
  if (!out) throw IoError("failed writing '" + path + "'");
}

}  // namespace

// ===== dataset plumbing =====

PairedDataset load_dataset(const ExperimentConfig& cfg) {
  if (cfg.dataset.source == "synth") return generate_synth_dataset(cfg.dataset.synth);
  IngestReport report;
  PairedDataset ds = load_directory_dataset(cfg.dataset.directory_root, cfg.dataset.layout, &report);
  if (ds.samples.empty())
    throw DataError("dataset at '" + cfg.dataset.directory_root + "' has no usable samples");
  return ds;
}

DatasetView train_subview(const PairedDataset& ds, double dev_fraction) {
  int64_t n_dev = static_cast<int64_t>(std::floor(ds.n_train * dev_fraction));
  return {&ds, 0, ds.n_train - n_dev};
}

DatasetView dev_subview(const PairedDataset& ds, double dev_fraction) {
  int64_t n_dev = static_cast<int64_t>(std::floor(ds.n_train * dev_fraction));
  return {&ds, ds.n_train - n_dev, ds.n_train};
}

// ===== pretraining =====

namespace {

struct EncoderEval {
  double accuracy = 0.0;
};

double unimodal_accuracy(UnimodalNet& net, const DatasetView& view, bool privileged,
                         TaskKind task, int batch_size) {
  auto batches = make_batches(view, batch_size, 0, false);
  int64_t correct = 0, total = 0;
  for (const auto& b : batches) {
    const Tensor& x = privileged ? b.x_p : b.x_o;
    Tensor rep = net.enc.forward(x, nn::Mode::eval, nullptr);
    Tensor logits = net.head.forward(rep, nullptr);
    if (task == TaskKind::classification) {
      int64_t n = logits.dim(0);
      int k = static_cast<int>(logits.dim(1));
      for (int64_t i = 0; i < n; ++i) {
        int arg = 0;
        double best = logits.at2(i, 0);
        for (int c = 1; c < k; ++c)
          if (logits.at2(i, c) > best) best = logits.at2(i, c), arg = c;
        if (arg == b.labels[static_cast<size_t>(i)]) ++correct;
        ++total;
      }
    } else {
      int64_t n = logits.dim(0), h = logits.dim(2), w = logits.dim(3);
      int k = static_cast<int>(logits.dim(1));
      for (int64_t i = 0; i < n; ++i)
        for (int64_t y = 0; y < h; ++y)
          for (int64_t x2 = 0; x2 < w; ++x2) {
            int arg = 0;
            double best = logits.at4(i, 0, y, x2);
            for (int c = 1; c < k; ++c)
              if (logits.at4(i, c, y, x2) > best) best = logits.at4(i, c, y, x2), arg = c;
            if (arg == b.labels[static_cast<size_t>((i * h + y) * w + x2)]) ++correct;
            ++total;
          }
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace

PretrainResult pretrain_unimodal(const ExperimentConfig& cfg, const PairedDataset& ds,
                                 const std::string& modality, bool force) {
  if (modality != "ordinary" && modality != "privileged")
    throw ConfigError("pretrain: modality must be 'ordinary' or 'privileged', got '" + modality +
                      "'");
  bool privileged = modality == "privileged";
  TaskKind task = ds.task;
  int batch_size = cfg.effective_batch_size();
  double lr = cfg.effective_pretrain_lr();

  std::string widths_str;
  for (int w : cfg.model.widths) widths_str += std::to_string(w) + ",";
  std::string key = qjoin({"pretrain", modality, to_hex(ds.digest), widths_str,
                           task_name(task), std::to_string(ds.n_classes), format_double(lr),
                           format_double(cfg.optimizer.momentum), std::to_string(batch_size),
                           std::to_string(cfg.optimizer.pretrain_epochs),
                           std::to_string(cfg.run.seed), format_double(cfg.run.dev_fraction),
                           cfg.run.augment_hflip ? "hflip" : "noaug"});
  std::string digest = to_hex(fnv1a64_str(key));
  fs::path dir = fs::path(resolve_out_root(cfg)) / "pretrain";
  fs::create_directories(dir);
  std::string path = (dir / ("pre-" + modality + "-" + digest + ".snap")).string();

  if (!force && fs::exists(path)) {
    LoadedSnapshot snap = load_named_tensors(path);
    PretrainResult r;
    r.snapshot_path = path;
    r.reused = true;
    auto it = snap.meta.metrics.find("train_accuracy");
    if (it != snap.meta.metrics.end()) r.train_accuracy = it->second;
    it = snap.meta.metrics.find("eval_accuracy");
    if (it != snap.meta.metrics.end()) r.eval_accuracy = it->second;
    return r;
  }

  const PairedSample& first = ds.samples.at(0);
  int in_c = static_cast<int>((privileged ? first.x_p : first.x_o).dim(0));
  uint64_t init_seed = fnv1a64_str("pretrain." + modality, cfg.run.seed);
  UnimodalNet net(task, in_c, cfg.model.widths, ds.n_classes, init_seed);

  DatasetView train_v = train_subview(ds, cfg.run.dev_fraction);
  if (train_v.size() == 0) throw DataError("pretrain: training split is empty");

  nn::Sgd sgd(lr, cfg.optimizer.momentum);
  auto params = net.params();
  int64_t step = 0;
  for (int epoch = 0; epoch < cfg.optimizer.pretrain_epochs; ++epoch) {
    auto batches = make_batches(train_v, batch_size,
                                stream_seed(cfg.run.seed, "pretrain." + modality + ".shuffle",
                                            static_cast<uint64_t>(epoch)));
    Rng flip = Rng::stream(cfg.run.seed, "pretrain." + modality + ".hflip",
                           static_cast<uint64_t>(epoch));
    for (auto& b : batches) {
      if (cfg.run.augment_hflip) apply_hflip(b, task, flip);
      ++step;
      net.zero_grads();
      const Tensor& x = privileged ? b.x_p : b.x_o;
      nn::Encoder::Ctx ectx;
      nn::Head::Ctx hctx;
      Tensor rep = net.enc.forward(x, nn::Mode::train, &ectx);
      Tensor logits = net.head.forward(rep, &hctx);
      nn::CeResult ce;
      try {
        ce = task == TaskKind::classification ? nn::cross_entropy_pooled(logits, b.labels)
                                              : nn::cross_entropy_dense(logits, b.labels, -1);
      } catch (const NumericError& e) {
        throw TrainError("pretraining (" + modality + ") diverged at step " +
                         std::to_string(step) + ": " + e.what());
      }
      if (!std::isfinite(ce.value))
        throw TrainError("pretraining (" + modality + ") diverged at step " +
                         std::to_string(step));
      Tensor grep = net.head.backward(hctx, ce.grad, true);
      net.enc.backward(ectx, grep, true);
      sgd.step(params);
    }
  }

  PretrainResult r;
  r.snapshot_path = path;
  r.train_accuracy = unimodal_accuracy(net, train_v, privileged, task, batch_size);
  DatasetView eval_v = ds.n_eval > 0 ? ds.eval_view() : train_v;
  r.eval_accuracy = unimodal_accuracy(net, eval_v, privileged, task, batch_size);

  SnapshotMeta meta;
  meta.kind = "pretrain-" + modality;
  meta.config_digest = digest;
  meta.step = step;
  meta.metrics = {{"train_accuracy", r.train_accuracy},
                  {"eval_accuracy", r.eval_accuracy},
                  {"epochs", static_cast<double>(cfg.optimizer.pretrain_epochs)}};
  std::vector<std::pair<std::string, const Tensor*>> tensors;
  for (nn::Parameter* p : net.params()) tensors.emplace_back(p->name, &p->value);
  for (auto& [name, t] : net.buffers()) tensors.emplace_back(name, t);
  save_named_tensors(path, meta, tensors);
  return r;
}

// ===== joint trainer =====

JointTrainer::JointTrainer(const ExperimentConfig& cfg, ModelGraph* graph, const Recipe& recipe)
    : cfg_(cfg), graph_(graph), recipe_(recipe) {
  kernel_ = cfg.losses.kernel;
  balance_ = cfg.losses.balance();
  sgd = nn::Sgd(cfg.effective_lr(), cfg.optimizer.momentum);
}

void JointTrainer::set_phase(int phase) {
  if (phase != 1 && phase != 2) throw ConfigError("trainer: phase must be 1 or 2");
  phase_ = phase;
}

std::vector<std::string> JointTrainer::active_trainable() const {
  return (recipe_.two_phase && phase_ == 2) ? recipe_.trainable_phase2 : recipe_.trainable;
}

bool JointTrainer::trains(const std::string& tag) const {
  return contains(active_trainable(), tag);
}

StepReport JointTrainer::train_step(const PairedBatch& batch, double lr, int64_t step, int epoch) {
  StepReport out;
  out.step = step;
  out.epoch = epoch;
  out.phase = phase_;
  out.lr = lr;

  ModelGraph& g = *graph_;
  TaskKind task = g.cfg.task;
  const nn::Mode train = nn::Mode::train;
  bool distill_phase = recipe_.use_response_kd && phase_ == 1;
  bool transfer_active = recipe_.use_jdn || recipe_.use_fkd || recipe_.use_rkd;
  bool translation_active = recipe_.use_ctn || recipe_.use_ae;
  bool need_shared = recipe_.fusion != FusionPath::ordinary_head;
  bool need_priv = recipe_.needs_privileged && (transfer_active || distill_phase);
  bool need_logits_s = recipe_.use_jdn || distill_phase || recipe_.fusion == FusionPath::logit_sum;

  g.zero_grads();

  // --- forward over the recipe's wiring ---
  nn::Encoder::Ctx ctx_s, ctx_o;
  nn::Head::Ctx ctx_head_s, ctx_head_o, ctx_task;
  FuseCtx ctx_fuse;
  AeTranslator::Ctx ctx_ae;
  nn::Conv2d::Ctx ctx_fuse_ae;

  bool ord_trains = trains("ord_enc") || g.cfg.finetune_ordinary;
  Tensor rep_o = g.ord_enc.forward(batch.x_o, ord_trains ? train : nn::Mode::eval, &ctx_o);
  Tensor rep_s, rep_p, logits_s, logits_p, logits_o;
  if (need_shared) rep_s = g.shared_enc.forward(batch.x_o, trains("shared_enc") ? train : nn::Mode::eval, &ctx_s);
  if (need_priv) {
    rep_p = g.priv_enc.forward(batch.x_p, nn::Mode::eval, nullptr);
    logits_p = g.head_p.forward(rep_p, nullptr);
  }
  if (need_logits_s) logits_s = g.head_s.forward(rep_s, &ctx_head_s);

  Tensor pred;
  FuseResult fr;
  Tensor ae_out, fused_ae;
  switch (recipe_.fusion) {
    case FusionPath::conv_fused:
      fr = fuse_features(g.t1, g.t2, g.fusion, rep_s, rep_o, train, &ctx_fuse);
      pred = g.task_head.forward(fr.fused, &ctx_task);
      break;
    case FusionPath::logit_sum:
      logits_o = g.head_o.forward(rep_o, &ctx_head_o);
      pred = logit_sum_fusion(logits_s, logits_o);
      break;
    case FusionPath::ae_concat: {
      ae_out = g.ae.forward(rep_s, &ctx_ae);
      Tensor cat = nn::concat_channels({&ae_out, &rep_o});
      fused_ae = g.fusion_ae.forward(cat, &ctx_fuse_ae);
      pred = g.task_head.forward(fused_ae, &ctx_task);
      break;
    }
    case FusionPath::ordinary_head:
      logits_o = g.head_o.forward(rep_o, &ctx_head_o);
      pred = logits_o;
      break;
  }

  // --- raw losses and input-level gradients (unweighted) ---
  RawLosses raw;
  Tensor d_pred;  // dL_ttl / d(pred or logits_s in the distillation phase)
  LogitRows kd_rows;
  Rng row_rng = Rng::stream(cfg_.run.seed, "train.rowsub", static_cast<uint64_t>(step));

  if (distill_phase) {
    kd_rows = make_logit_rows(logits_s, logits_p, cfg_.losses.kl_position_cap, row_rng);
    Tensor g_rows;
    raw.l_ttl = response_kd_loss(kd_rows.rows_p, kd_rows.rows_s, recipe_.kd_temperature, &g_rows);
    d_pred = scatter_rows_grad(kd_rows, g_rows, logits_s);
  } else {
    nn::CeResult ce = task == TaskKind::classification
                      ? nn::cross_entropy_pooled(pred, batch.labels)
                      : nn::cross_entropy_dense(pred, batch.labels, -1);
    raw.l_ttl = ce.value;
    d_pred = std::move(ce.grad);
  }

  Tensor g_transfer_rep;   // d(transfer)/d(rep_s), direct part
  Tensor d_logits_kl;      // d(conditional term)/d(logits_s)
  if (recipe_.use_jdn) {
    Tensor s_rows = flatten_rows(rep_s);
    Tensor p_rows = flatten_rows(rep_p);
    Tensor g_rows(s_rows.shape());
    MmdResult mr = mmd_marginal(s_rows, p_rows, kernel_, &g_rows);
    LogitRows rows = make_logit_rows(logits_s, logits_p, cfg_.losses.kl_position_cap, row_rng);
    Tensor g_kl_rows;
    double kl = conditional_kl(rows.rows_p, rows.rows_s, &g_kl_rows);
    raw.l_jdn = mr.value + kl;
    out.dist_marginal = mr.value;
    out.dist_conditional = kl;
    out.sigma = mr.sigma;
    g_transfer_rep = g_rows.reshaped(rep_s.shape());
    d_logits_kl = scatter_rows_grad(rows, g_kl_rows, logits_s);
  } else if (recipe_.use_fkd) {
    Tensor grad(rep_s.shape());
    raw.l_jdn = feature_hint_loss(rep_s, rep_p, &grad);
    g_transfer_rep = std::move(grad);
  } else if (recipe_.use_rkd) {
    Tensor s_rows = flatten_rows(rep_s);
    Tensor p_rows = flatten_rows(rep_p);
    Tensor g_rows(s_rows.shape());
    raw.l_jdn = relation_kd_loss(s_rows, p_rows, &g_rows);
    g_transfer_rep = g_rows.reshaped(rep_s.shape());
  }

  Tensor g_t1s_tr, g_t1o_tr, g_t2s_tr, g_t2o_tr;  // d(translation)/d(transformed)
  Tensor g_ae_out_tr;
  if (recipe_.use_ctn) {
    double l1 = mse(fr.t1_s, fr.t1_o);
    double l2 = mse(fr.t2_s, fr.t2_o);
    raw.l_ctn = l1 + l2;
    g_t1s_tr = Tensor(fr.t1_s.shape());
    g_t1o_tr = Tensor(fr.t1_o.shape());
    g_t2s_tr = Tensor(fr.t2_s.shape());
    g_t2o_tr = Tensor(fr.t2_o.shape());
    mse_backward(fr.t1_s, fr.t1_o, 1.0, &g_t1s_tr, &g_t1o_tr);
    mse_backward(fr.t2_s, fr.t2_o, 1.0, &g_t2s_tr, &g_t2o_tr);
    out.collapse_t1 = collapse_level(fr.t1_o);
    out.collapse_t2 = collapse_level(fr.t2_o);
  } else if (recipe_.use_ae && recipe_.fusion == FusionPath::ae_concat) {
    g_ae_out_tr = Tensor(ae_out.shape());
    raw.l_ctn = mse(ae_out, rep_o);
    mse_backward(ae_out, rep_o, 1.0, &g_ae_out_tr, nullptr);
    out.collapse_t1 = collapse_level(ae_out);
    out.collapse_t2 = out.collapse_t1;
  }

  // --- per-task gradient norms on the shared encoder; weight update ---
  bool balance_now = (transfer_active || translation_active) && trains("shared_enc");
  auto backprop_pred_to_rep_s = [&](const Tensor& dp, bool accum_t, bool accum_heads) -> Tensor {
    // Gradient of the task term at rep_s, optionally accumulating parameter
    // grads along the way (Phase B) or not (norm measurement).
    Tensor drep_s(rep_s.shape());
    switch (recipe_.fusion) {
      case FusionPath::conv_fused: {
        Tensor g_fused = g.task_head.backward(ctx_task, dp, accum_heads && trains("task_head"));
        Tensor g_cat = g.fusion.backward(ctx_fuse.conv, g_fused, accum_heads && trains("fusion"));
        int64_t c = rep_s.dim(1);
        auto parts = nn::split_channels(g_cat, {c, c, c, c});
        drep_s += g.t1.backward(ctx_fuse.t1_s, parts[0], accum_t && trains("t1"));
        drep_s += g.t2.backward(ctx_fuse.t2_s, parts[2], accum_t && trains("t2"));
        break;
      }
      case FusionPath::logit_sum:
        drep_s += g.head_s.backward(ctx_head_s, dp, accum_heads && trains("head_s"));
        break;
      case FusionPath::ae_concat: {
        Tensor g_fused = g.task_head.backward(ctx_task, dp, accum_heads && trains("task_head"));
        Tensor g_cat = g.fusion_ae.backward(ctx_fuse_ae, g_fused,
                                            accum_heads && trains("fusion_ae"));
        int64_t c = rep_s.dim(1);
        auto parts = nn::split_channels(g_cat, {c, c});
        drep_s += g.ae.backward(ctx_ae, parts[0], accum_heads && trains("ae"));
        break;
      }
      case FusionPath::ordinary_head:
        break;  // no shared-encoder path
    }
    return drep_s;
  };

  GradNorms norms;
  if (balance_now) {
    auto shared = g.params_of("shared_enc");
    auto zero_shared = [&] {
      for (nn::Parameter* p : shared) p->grad.zero();
    };
    auto norm_of = [&](const Tensor& drep_s) {
      zero_shared();
      g.shared_enc.backward(ctx_s, drep_s, true);
      double sq = 0.0;
      for (nn::Parameter* p : shared) {
        double n = p->grad.l2_norm();
        sq += n * n;
      }
      zero_shared();
      return std::sqrt(sq);
    };
    Tensor drep_ttl = distill_phase ? g.head_s.backward(ctx_head_s, d_pred, false)
                                    : backprop_pred_to_rep_s(d_pred, false, false);
    norms.g_ttl = norm_of(drep_ttl);
    ActiveAux active{transfer_active, translation_active};
    if (transfer_active) {
      Tensor dr(rep_s.shape());
      if (recipe_.use_jdn) {
        dr += g_transfer_rep;
        dr += g.head_s.backward(ctx_head_s, d_logits_kl, false);
      } else {
        dr += g_transfer_rep;
      }
      norms.g_jdn = norm_of(dr);
    }
    if (translation_active) {
      Tensor dr(rep_s.shape());
      if (recipe_.use_ctn) {
        dr += g.t1.backward(ctx_fuse.t1_s, g_t1s_tr, false);
        dr += g.t2.backward(ctx_fuse.t2_s, g_t2s_tr, false);
      } else {
        dr += g.ae.backward(ctx_ae, g_ae_out_tr, false);
      }
      norms.g_ctn = norm_of(dr);
    }
    weights = update_weights(raw, norms, weights, balance_, active);
  } else {
    weights.alpha = 0.0;
    weights.beta = 0.0;
  }

  LossReport report = total_loss(raw, weights);
  out.losses = report;
  if (!std::isfinite(report.l_total))
    throw TrainError("non-finite total loss at step " + std::to_string(step) +
                     " (l_jdn=" + format_double(report.l_jdn) +
                     ", l_ctn=" + format_double(report.l_ctn) +
                     ", l_ttl=" + format_double(report.l_ttl) +
                     ", alpha=" + format_double(report.alpha) +
                     ", beta=" + format_double(report.beta) + ")");

  // --- weighted backward ---
  g.zero_grads();
  double alpha = weights.alpha, beta = weights.beta, eta = weights.eta;

  Tensor drep_s, drep_o;
  if (need_shared) drep_s = Tensor(rep_s.shape());
  drep_o = Tensor(rep_o.shape());

  Tensor d_pred_eta = d_pred;
  d_pred_eta.scale(eta);
  if (distill_phase) {
    drep_s += g.head_s.backward(ctx_head_s, d_pred_eta, trains("head_s"));
  } else {
    switch (recipe_.fusion) {
      case FusionPath::conv_fused: {
        Tensor g_fused = g.task_head.backward(ctx_task, d_pred_eta, trains("task_head"));
        Tensor g_cat = g.fusion.backward(ctx_fuse.conv, g_fused, trains("fusion"));
        int64_t c = rep_s.dim(1);
        auto parts = nn::split_channels(g_cat, {c, c, c, c});
        if (recipe_.use_ctn) {
          parts[0].add_scaled(g_t1s_tr, beta);
          parts[1].add_scaled(g_t1o_tr, beta);
          parts[2].add_scaled(g_t2s_tr, beta);
          parts[3].add_scaled(g_t2o_tr, beta);
        }
        drep_s += g.t1.backward(ctx_fuse.t1_s, parts[0], trains("t1"));
        drep_o += g.t1.backward(ctx_fuse.t1_o, parts[1], trains("t1"));
        drep_s += g.t2.backward(ctx_fuse.t2_s, parts[2], trains("t2"));
        drep_o += g.t2.backward(ctx_fuse.t2_o, parts[3], trains("t2"));
        break;
      }
      case FusionPath::logit_sum:
        drep_s += g.head_s.backward(ctx_head_s, d_pred_eta, trains("head_s"));
        drep_o += g.head_o.backward(ctx_head_o, d_pred_eta, trains("head_o"));
        break;
      case FusionPath::ae_concat: {
        Tensor g_fused = g.task_head.backward(ctx_task, d_pred_eta, trains("task_head"));
        Tensor g_cat = g.fusion_ae.backward(ctx_fuse_ae, g_fused, trains("fusion_ae"));
        int64_t c = rep_s.dim(1);
        auto parts = nn::split_channels(g_cat, {c, c});
        if (recipe_.use_ae) parts[0].add_scaled(g_ae_out_tr, beta);
        drep_s += g.ae.backward(ctx_ae, parts[0], trains("ae"));
        drep_o += parts[1];
        break;
      }
      case FusionPath::ordinary_head:
        drep_o += g.head_o.backward(ctx_head_o, d_pred_eta, trains("head_o"));
        break;
    }
  }

  if (transfer_active && alpha != 0.0) {
    drep_s.add_scaled(g_transfer_rep, alpha);
    if (recipe_.use_jdn) {
      Tensor d_kl = d_logits_kl;
      d_kl.scale(alpha);
      drep_s += g.head_s.backward(ctx_head_s, d_kl, trains("head_s"));
    }
  }
  if (need_shared && trains("shared_enc")) g.shared_enc.backward(ctx_s, drep_s, true);
  if (ord_trains && !distill_phase) g.ord_enc.backward(ctx_o, drep_o, true);

  sgd.lr = lr;
  std::vector<std::string> step_tags = active_trainable();
  if (g.cfg.finetune_ordinary && !contains(step_tags, "ord_enc") && !distill_phase)
    step_tags.push_back("ord_enc");
  auto params = g.params_of(step_tags);
  sgd.step(params);
  return out;
}

// ===== run orchestration =====

std::string run_dir_for(const ExperimentConfig& cfg) {
  std::string dig = cfg.digest();
  return (fs::path(resolve_out_root(cfg)) /
          (variant_name(cfg.variant.kind) + "-s" + std::to_string(cfg.run.seed) + "-" +
           dig.substr(0, 8)))
      .string();
}

namespace {

struct CheckpointState {
  int epoch = 0;
  int64_t step = 0;
  int phase = 1;
  LossWeights weights;
  double best_error = 2.0;
  int best_epoch = -1;
  std::string path;
};

std::string ckpt_name(int epoch) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "epoch%03d.snap", epoch);
  return buf;
}

void save_checkpoint(const std::string& run_dir, ModelGraph& graph, const nn::Sgd& sgd,
                     const CheckpointState& st, const std::string& config_digest) {
  SnapshotMeta meta;
  meta.kind = "checkpoint";
  meta.config_digest = config_digest;
  meta.step = st.step;
  meta.metrics = {{"epoch", static_cast<double>(st.epoch)},
                  {"phase", static_cast<double>(st.phase)},
                  {"alpha", st.weights.alpha},
                  {"beta", st.weights.beta},
                  {"eta", st.weights.eta},
                  {"w_initialized", st.weights.initialized ? 1.0 : 0.0},
                  {"best_error", st.best_error},
                  {"best_epoch", static_cast<double>(st.best_epoch)}};
  std::vector<std::pair<std::string, const Tensor*>> tensors;
  for (const auto& tag : ModelGraph::module_tags()) {
    for (nn::Parameter* p : graph.params_of(tag)) tensors.emplace_back(p->name, &p->value);
    for (auto& [name, t] : graph.buffers_of(tag)) tensors.emplace_back(name, t);
  }
  for (const auto& [name, t] : sgd.velocity) tensors.emplace_back("vel." + name, &t);
  save_named_tensors((fs::path(run_dir) / "snapshots" / ckpt_name(st.epoch)).string(), meta,
                     tensors);
}

bool find_latest_checkpoint(const std::string& run_dir, std::string& path_out) {
  fs::path dir = fs::path(run_dir) / "snapshots";
  if (!fs::exists(dir)) return false;
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir)) {
    std::string n = e.path().filename().string();
    if (n.rfind("epoch", 0) == 0 && n.size() >= 5 && n.find(".snap") != std::string::npos)
      names.push_back(n);
  }
  if (names.empty()) return false;
  std::sort(names.begin(), names.end());
  path_out = (dir / names.back()).string();
  return true;
}

CheckpointState load_checkpoint(const std::string& path, ModelGraph& graph, nn::Sgd& sgd,
                                const std::string& config_digest) {
  LoadedSnapshot snap = load_named_tensors(path);
  if (snap.meta.kind != "checkpoint")
    throw IoError("'" + path + "' is not a training checkpoint");
  if (!config_digest.empty() && snap.meta.config_digest != config_digest)
    throw ConfigError("checkpoint '" + path + "' belongs to config digest " +
                      snap.meta.config_digest + ", expected " + config_digest);
  graph.load_snapshot(snap);
  sgd.velocity.clear();
  for (const auto& [name, t] : snap.tensors)
    if (name.rfind("vel.", 0) == 0) sgd.velocity[name.substr(4)] = t;
  CheckpointState st;
  st.path = path;
  st.step = snap.meta.step;
  auto m = snap.meta.metrics;
  st.epoch = static_cast<int>(m.at("epoch"));
  st.phase = static_cast<int>(m.at("phase"));
  st.weights.alpha = m.at("alpha");
  st.weights.beta = m.at("beta");
  st.weights.eta = m.at("eta");
  st.weights.initialized = m.at("w_initialized") != 0.0;
  st.best_error = m.at("best_error");
  st.best_epoch = static_cast<int>(m.at("best_epoch"));
  return st;
}

json step_row(const StepReport& r) {
  json row;
  row["type"] = "step";
  row["step"] = r.step;
  row["epoch"] = r.epoch;
  row["phase"] = r.phase;
  row["l_jdn"] = r.losses.l_jdn;
  row["l_ctn"] = r.losses.l_ctn;
  row["l_ttl"] = r.losses.l_ttl;
  row["alpha"] = r.losses.alpha;
  row["beta"] = r.losses.beta;
  row["eta"] = r.losses.eta;
  row["l_total"] = r.losses.l_total;
  row["dist_marginal"] = r.dist_marginal;
  row["dist_conditional"] = r.dist_conditional;
  row["sigma"] = r.sigma;
  row["collapse_t1"] = r.collapse_t1;
  row["collapse_t2"] = r.collapse_t2;
  row["lr"] = r.lr;
  return row;
}

json eval_row(int epoch, int64_t step, const MetricsRecord& m) {
  json row;
  row["type"] = "eval";
  row["epoch"] = epoch;
  row["step"] = step;
  row["split"] = "eval";
  row["accuracy"] = m.accuracy;
  row["error"] = 1.0 - m.accuracy;
  row["n_scored"] = m.n_scored;
  if (m.has_acer) {
    row["apcer"] = m.apcer;
    row["bpcer"] = m.bpcer;
    row["acer"] = m.acer;
    row["threshold"] = m.threshold;
  }
  if (m.has_miou) {
    row["miou"] = m.miou;
    row["per_class_iou"] = m.per_class_iou;
  }
  return row;
}

json metrics_to_json(const MetricsRecord& m) {
  json j;
  j["accuracy"] = m.accuracy;
  j["error"] = 1.0 - m.accuracy;
  j["n_scored"] = m.n_scored;
  if (m.has_acer) {
    j["apcer"] = m.apcer;
    j["bpcer"] = m.bpcer;
    j["acer"] = m.acer;
    j["threshold"] = m.threshold;
  }
  if (m.has_miou) {
    j["miou"] = m.miou;
    j["per_class_iou"] = m.per_class_iou;
  }
  return j;
}

// Drops log rows written after the checkpoint being resumed from, so the
// resumed log continues exactly where the checkpoint left off.
void truncate_log_to_step(const std::string& path, int64_t step) {
  std::ifstream in(path);
  if (!in) return;
  std::vector<std::string> kept;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json row;
    try {
      row = json::parse(line);
    } catch (const json::exception&) {
      continue;
    }
    int64_t s = row.value("step", static_cast<int64_t>(0));
    if (s <= step) kept.push_back(line);
  }
  in.close();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  for (const auto& l : kept) out << l << "\n";
}

std::string environment_stamp(const ExperimentConfig& cfg) {
  json j;
  j["schema_version"] = 1;
  j["config_digest"] = cfg.digest();
#if defined(__clang__)
  j["compiler"] = std::string("clang ") + __clang_version__;
#elif defined(__GNUC__)
  j["compiler"] = std::string("gcc ") + std::to_string(__GNUC__) + "." +
                  std::to_string(__GNUC_MINOR__) + "." + std::to_string(__GNUC_PATCHLEVEL__);
#else
  j["compiler"] = "unknown";
#endif
#if defined(NDEBUG)
  j["build"] = "release";
#else
  j["build"] = "debug";
#endif
  j["pointer_bits"] = static_cast<int>(sizeof(void*) * 8);
  j["float_format"] = "ieee754-binary64";
  return j.dump(2) + "\n";
}

}  // namespace

RunResult run_experiment(const ExperimentConfig& cfg, const RunOptions& opts) {
  cfg.validate();
  VariantSpec vspec = cfg.variant;
  Recipe recipe = build_variant(VariantSpec{vspec.kind, cfg.losses.kd_temperature, vspec.ae_width});
  PairedDataset ds = load_dataset(cfg);
  ds.check_consistent();

  std::string run_dir = opts.run_dir.empty() ? run_dir_for(cfg) : opts.run_dir;
  fs::create_directories(fs::path(run_dir) / "snapshots");
  std::string summary_path = (fs::path(run_dir) / "results.summary").string();
  std::string log_path = (fs::path(run_dir) / "metrics.log").string();
  std::string config_digest = cfg.digest();

  RunResult result;
  result.run_dir = run_dir;

  if (fs::exists(summary_path) && !opts.force) {
    std::ifstream in(summary_path);
    std::stringstream ss;
    ss << in.rdbuf();
    json s;
    try {
      s = json::parse(ss.str());
    } catch (const json::exception& e) {
      throw IoError("results.summary in '" + run_dir + "' is malformed: " + e.what());
    }
    if (s.value("config_digest", "") == config_digest) {
      result.already_complete = true;
      result.final_error = s.at("final").value("error", 0.0);
      result.final_eval.accuracy = s.at("final").value("accuracy", 0.0);
      if (s.at("final").contains("acer")) {
        result.final_eval.has_acer = true;
        result.final_eval.acer = s.at("final").at("acer").get<double>();
        result.final_eval.apcer = s.at("final").value("apcer", 0.0);
        result.final_eval.bpcer = s.at("final").value("bpcer", 0.0);
        result.final_eval.threshold = s.at("final").value("threshold", 0.0);
      }
      if (s.at("final").contains("miou")) {
        result.final_eval.has_miou = true;
        result.final_eval.miou = s.at("final").at("miou").get<double>();
      }
      result.best_error = s.at("best").value("error", 0.0);
      result.best_epoch = s.at("best").value("epoch", -1);
      result.steps = s.value("steps", static_cast<int64_t>(0));
      return result;
    }
  }

  PretrainResult pre_o = pretrain_unimodal(cfg, ds, "ordinary", false);
  PretrainResult pre_p;
  if (recipe.needs_privileged) pre_p = pretrain_unimodal(cfg, ds, "privileged", false);

  ModelConfig mc = derive_model_config(cfg, ds);
  ModelGraph graph(mc, cfg.run.seed);
  LoadedSnapshot snap_o = load_named_tensors(pre_o.snapshot_path);
  graph.load_branch(snap_o, "ord_enc", "head_o");
  if (mc.warm_start_shared && recipe.fusion != FusionPath::ordinary_head)
    graph.load_branch(snap_o, "shared_enc", "");
  if (recipe.needs_privileged) {
    LoadedSnapshot snap_p = load_named_tensors(pre_p.snapshot_path);
    graph.load_branch(snap_p, "priv_enc", "head_p");
  }

  JointTrainer trainer(cfg, &graph, recipe);

  DatasetView train_v = train_subview(ds, cfg.run.dev_fraction);
  DatasetView dev_v = dev_subview(ds, cfg.run.dev_fraction);
  DatasetView eval_v = ds.n_eval > 0 ? ds.eval_view() : train_v;
  if (train_v.size() == 0) throw DataError("training split is empty");

  int epochs = cfg.optimizer.epochs;
  int phase1_epochs = recipe.two_phase ? (epochs + 1) / 2 : epochs;
  int batch_size = cfg.effective_batch_size();
  int64_t steps_per_epoch = (train_v.size() + batch_size - 1) / batch_size;
  int64_t total_steps = steps_per_epoch * epochs;
  std::string schedule = cfg.effective_schedule();
  double base_lr = cfg.effective_lr();

  int start_epoch = 0;
  int64_t gstep = 0;
  CheckpointState best;
  best.best_error = 2.0;
  best.best_epoch = -1;

  std::string ckpt_path;
  if (opts.resume && find_latest_checkpoint(run_dir, ckpt_path)) {
    CheckpointState st = load_checkpoint(ckpt_path, graph, trainer.sgd, config_digest);
    start_epoch = st.epoch;
    gstep = st.step;
    trainer.weights = st.weights;
    trainer.set_phase(st.phase);
    best.best_error = st.best_error;
    best.best_epoch = st.best_epoch;
    truncate_log_to_step(log_path, gstep);
    result.resumed = true;
  } else {
    write_text_file((fs::path(run_dir) / "config.copy").string(), cfg.canonical_json(2) + "\n");
    json header;
    header["type"] = "run";
    header["schema_version"] = 1;
    header["step"] = 0;
    header["config_digest"] = config_digest;
    header["dataset_digest"] = to_hex(ds.digest);
    header["variant"] = variant_name(cfg.variant.kind);
    header["wiring"] = recipe.wiring_string();
    header["seed"] = cfg.run.seed;
    header["task"] = task_name(ds.task);
    header["n_train"] = train_v.size();
    header["n_dev"] = dev_v.size();
    header["n_eval"] = eval_v.size();
    header["steps_per_epoch"] = steps_per_epoch;
    header["epochs"] = epochs;
    write_text_file(log_path, header.dump() + "\n");
  }
  write_text_file((fs::path(run_dir) / "environment.stamp").string(), environment_stamp(cfg));

  std::ofstream log(log_path, std::ios::binary | std::ios::app);
  if (!log) throw IoError("cannot append to '" + log_path + "'");

  MetricsRecord final_eval;
  bool have_eval = false;
  int epochs_done_here = 0;

  for (int epoch = start_epoch; epoch < epochs; ++epoch) {
    trainer.set_phase(recipe.two_phase && epoch >= phase1_epochs ? 2 : 1);
    auto batches = make_batches(train_v, batch_size,
                                stream_seed(cfg.run.seed, "train.shuffle",
                                            static_cast<uint64_t>(epoch)));
    Rng flip = Rng::stream(cfg.run.seed, "train.hflip", static_cast<uint64_t>(epoch));
    double col1 = 0.0, col2 = 0.0;
    int64_t n_steps_epoch = 0;
    for (auto& b : batches) {
      if (cfg.run.augment_hflip) apply_hflip(b, ds.task, flip);
      double lr = lr_at(schedule, base_lr, gstep, total_steps);
      StepReport r = trainer.train_step(b, lr, gstep + 1, epoch);
      ++gstep;
      ++n_steps_epoch;
      col1 += r.collapse_t1;
      col2 += r.collapse_t2;
      log << step_row(r).dump() << "\n";
    }
    bool translation_active =
        (recipe.use_ctn || recipe.use_ae) && !(recipe.two_phase && trainer.phase() == 2);
    if (translation_active && n_steps_epoch > 0) {
      double m1 = col1 / static_cast<double>(n_steps_epoch);
      double m2 = col2 / static_cast<double>(n_steps_epoch);
      if (std::min(m1, m2) < cfg.losses.collapse_floor)
        throw TrainError("translation collapse at epoch " + std::to_string(epoch) +
                         ": mean |T(rep_o)| = " + format_double(std::min(m1, m2)) +
                         " fell below the floor " + format_double(cfg.losses.collapse_floor));
    }
    bool last_epoch = epoch + 1 == epochs;
    if ((epoch + 1) % cfg.run.eval_every == 0 || last_epoch) {
      MetricsRecord m = evaluate(graph, eval_v, recipe.fusion, batch_size,
                                 dev_v.size() > 0 ? &dev_v : nullptr);
      final_eval = m;
      have_eval = true;
      double err = 1.0 - m.accuracy;
      if (err < best.best_error) {
        best.best_error = err;
        best.best_epoch = epoch + 1;
      }
      log << eval_row(epoch + 1, gstep, m).dump() << "\n";
    }
    if ((epoch + 1) % cfg.run.checkpoint_every == 0 || last_epoch) {
      CheckpointState st;
      st.epoch = epoch + 1;
      st.step = gstep;
      st.phase = trainer.phase();
      st.weights = trainer.weights;
      st.best_error = best.best_error;
      st.best_epoch = best.best_epoch;
      log.flush();
      save_checkpoint(run_dir, graph, trainer.sgd, st, config_digest);
    }
    ++epochs_done_here;
    if (opts.stop_after_epochs > 0 && epochs_done_here >= opts.stop_after_epochs &&
        epoch + 1 < epochs) {
      if ((epoch + 1) % cfg.run.checkpoint_every != 0) {
        CheckpointState st;
        st.epoch = epoch + 1;
        st.step = gstep;
        st.phase = trainer.phase();
        st.weights = trainer.weights;
        st.best_error = best.best_error;
        st.best_epoch = best.best_epoch;
        save_checkpoint(run_dir, graph, trainer.sgd, st, config_digest);
      }
      log.flush();
      result.steps = gstep;
      result.best_error = best.best_error;
      result.best_epoch = best.best_epoch;
      if (have_eval) {
        result.final_eval = final_eval;
        result.final_error = 1.0 - final_eval.accuracy;
      }
      return result;
    }
  }

  if (!have_eval) {
    final_eval = evaluate(graph, eval_v, recipe.fusion, batch_size,
                          dev_v.size() > 0 ? &dev_v : nullptr);
    double err = 1.0 - final_eval.accuracy;
    if (err < best.best_error) {
      best.best_error = err;
      best.best_epoch = 0;
    }
    log << eval_row(epochs, gstep, final_eval).dump() << "\n";
    if (epochs == 0) {
      CheckpointState st;
      st.epoch = 0;
      st.step = 0;
      st.phase = trainer.phase();
      st.weights = trainer.weights;
      st.best_error = best.best_error;
      st.best_epoch = best.best_epoch;
      save_checkpoint(run_dir, graph, trainer.sgd, st, config_digest);
    }
  }
  log.flush();

  json summary;
  summary["schema_version"] = 1;
  summary["config_digest"] = config_digest;
  summary["dataset_digest"] = to_hex(ds.digest);
  summary["variant"] = variant_name(cfg.variant.kind);
  summary["wiring"] = recipe.wiring_string();
  summary["seed"] = cfg.run.seed;
  summary["epochs"] = epochs;
  summary["steps"] = gstep;
  summary["final"] = metrics_to_json(final_eval);
  summary["best"] = {{"error", best.best_error}, {"epoch", best.best_epoch}};
  summary["weights"] = {{"alpha", trainer.weights.alpha},
                        {"beta", trainer.weights.beta},
                        {"eta", trainer.weights.eta}};
  json pre;
  pre["ordinary"] = {{"train_accuracy", pre_o.train_accuracy},
                     {"eval_accuracy", pre_o.eval_accuracy}};
  if (recipe.needs_privileged)
    pre["privileged"] = {{"train_accuracy", pre_p.train_accuracy},
                         {"eval_accuracy", pre_p.eval_accuracy}};
  summary["pretrain"] = pre;
  write_text_file(summary_path, summary.dump(2) + "\n");

  result.final_eval = final_eval;
  result.final_error = 1.0 - final_eval.accuracy;
  result.best_error = best.best_error;
  result.best_epoch = best.best_epoch;
  result.steps = gstep;
  return result;
}

MetricsRecord evaluate_run(const ExperimentConfig& cfg, const std::string& run_dir) {
  cfg.validate();
  Recipe recipe =
      build_variant(VariantSpec{cfg.variant.kind, cfg.losses.kd_temperature, cfg.variant.ae_width});
  PairedDataset ds = load_dataset(cfg);
  ModelConfig mc = derive_model_config(cfg, ds);
  ModelGraph graph(mc, cfg.run.seed);
  std::string ckpt;
  if (!find_latest_checkpoint(run_dir, ckpt))
    throw IoError("no checkpoint found under '" + run_dir + "/snapshots'");
  LoadedSnapshot snap = load_named_tensors(ckpt);
  graph.load_snapshot(snap);
  DatasetView dev_v = dev_subview(ds, cfg.run.dev_fraction);
  DatasetView eval_v = ds.n_eval > 0 ? ds.eval_view() : train_subview(ds, cfg.run.dev_fraction);
  return evaluate(graph, eval_v, recipe.fusion, cfg.effective_batch_size(),
                  dev_v.size() > 0 ? &dev_v : nullptr);
}

}  // namespace osmd
