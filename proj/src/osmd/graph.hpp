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

#include "osmd/baselines.hpp"
#include "osmd/ctn.hpp"
#include "osmd/data.hpp"
#include "osmd/nn.hpp"

namespace osmd {

struct ModelConfig {
  TaskKind task = TaskKind::classification;
  int n_classes = 2;
  int in_c_ordinary = 2;
  int in_c_privileged = 1;
  std::vector<int> widths = {8, 16, 32};
  bool finetune_ordinary = false;
  bool warm_start_shared = false;
  int ae_width = 0;  // 0 = half the representation width

  void validate() const;
  int rep_channels() const { return widths.empty() ? 0 : widths.back(); }
};

// Named-tensor snapshot container, shared by pretraining snapshots and
// training checkpoints.
struct SnapshotMeta {
  int schema_version = 1;
  std::string kind = "snapshot";
  std::string config_digest;
  int64_t step = 0;
  std::map<std::string, double> metrics;
};

void save_named_tensors(const std::string& path, const SnapshotMeta& meta,
                        const std::vector<std::pair<std::string, const Tensor*>>& tensors);

struct LoadedSnapshot {
  SnapshotMeta meta;
  std::map<std::string, Tensor> tensors;
};

LoadedSnapshot load_named_tensors(const std::string& path);

// The full multi-branch model. All modules for every wiring are constructed
// up front (they are tiny); recipes decide which ones run and which train.
class ModelGraph {
 public:
  ModelGraph() = default;
  ModelGraph(const ModelConfig& cfg, uint64_t init_seed);

  ModelConfig cfg;
  nn::Encoder shared_enc, priv_enc, ord_enc;
  nn::Head head_s, head_p, head_o;
  nn::ConvBlock t1, t2;
  nn::Conv2d fusion;     // 1x1 over [T1(rep_s), T1(rep_o), T2(rep_s), T2(rep_o)]
  nn::Conv2d fusion_ae;  // 1x1 over [AE(rep_s), rep_o]
  nn::Head task_head;
  AeTranslator ae;

  static const std::vector<std::string>& module_tags();
  std::vector<nn::Parameter*> params_of(const std::string& tag);
  std::vector<nn::Parameter*> params_of(const std::vector<std::string>& tags);
  std::vector<std::pair<std::string, Tensor*>> buffers_of(const std::string& tag);
  std::vector<std::pair<std::string, Tensor*>> buffers_of(const std::vector<std::string>& tags);
  void zero_grads();
  uint64_t checksum_of(const std::vector<std::string>& tags);

  struct ForwardCtx {
    nn::Encoder::Ctx enc_s, enc_o;
    nn::Head::Ctx head_s_ctx;
    FuseCtx fuse;
    nn::Head::Ctx task_ctx;
  };

  struct TrainingForward {
    Tensor rep_s, rep_p, rep_o;
    Tensor logits_s, logits_p, fused_logits;
    Tensor t1_s, t1_o, t2_s, t2_o;
  };

  // Joint forward over a paired batch with the fused wiring. Trainable
  // modules honor `mode`; frozen branches always run in evaluation mode.
  // The privileged branch feeds only the transfer targets, never the fused
  // prediction path.
  TrainingForward forward_training(const PairedBatch& batch, nn::Mode mode, ForwardCtx* ctx = nullptr);

  // Ordinary-modality inference for a given prediction wiring; rejects
  // inputs whose channel count is not the ordinary modality's.
  Tensor forward_inference(const Tensor& x_o, FusionPath path);

  // Snapshot I/O over every parameter and buffer in the graph.
  void save_snapshot(const std::string& path, const SnapshotMeta& meta);
  void load_snapshot(const LoadedSnapshot& snap);

  // Copies a pretraining snapshot ("enc.*" / "head.*" names) into one
  // encoder branch and its head.
  void load_branch(const LoadedSnapshot& snap, const std::string& enc_tag,
                   const std::string& head_tag);
};

// Builds the single-modality encoder+head pair used for pretraining.
struct UnimodalNet {
  UnimodalNet() = default;
  UnimodalNet(TaskKind task, int in_c, const std::vector<int>& widths, int n_classes,
              uint64_t init_seed);
  nn::Encoder enc;
  nn::Head head;
  std::vector<nn::Parameter*> params();
  std::vector<std::pair<std::string, Tensor*>> buffers();
  void zero_grads();
};

}  // namespace osmd
