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

#include "osmd/balance.hpp"
#include "osmd/baselines.hpp"
#include "osmd/data.hpp"
#include "osmd/graph.hpp"
#include "osmd/jdn.hpp"
#include "osmd/synth.hpp"

namespace osmd {

struct DatasetConfig {
  std::string source = "synth";  // "synth" or "directory"
  SynthSpec synth;
  std::string directory_root;
  DirectoryLayout layout;
};

struct LossesConfig {
  KernelConfig kernel;
  double kd_temperature = 4.0;
  double target_ratio = 0.1;
  double ema_decay = 0.9;
  double clip_lo = 0.5;
  double clip_hi = 2.0;
  int kl_position_cap = 64;      // segmentation: positions sampled per image
                                 // for the conditional transfer term
  double collapse_floor = 1e-3;  // minimum mean |activation| of the
                                 // translated ordinary features per epoch

  BalanceConfig balance() const {
    BalanceConfig b;
    b.target_ratio = target_ratio;
    b.ema_decay = ema_decay;
    b.clip_lo = clip_lo;
    b.clip_hi = clip_hi;
    return b;
  }
};

struct OptimizerConfig {
  double lr = 0.0;       // 0 = task default (0.001 classification, 0.01 segmentation)
  double momentum = 0.9;
  int batch_size = 0;    // 0 = task default (64 classification, 8 segmentation)
  int epochs = 6;
  std::string schedule;  // "constant" | "one_cycle"; empty = task default
  double pretrain_lr = 0.0;  // 0 = same as lr
  int pretrain_epochs = 2;
};

struct RunConfig {
  uint64_t seed = 1;
  int eval_every = 1;        // epochs
  int checkpoint_every = 1;  // epochs
  std::string out_root = "runs";
  bool deterministic = true;
  double dev_fraction = 0.2;  // tail of the train split reserved for
                              // threshold calibration
  int parallel_workers = 1;
  std::vector<uint64_t> ablate_seeds = {1, 2, 3, 4, 5};
  bool augment_hflip = false;
};

struct ModelBlock {
  std::vector<int> widths = {8, 16, 32};
  bool finetune_ordinary = false;
  bool warm_start_shared = false;
};

struct ExperimentConfig {
  int schema_version = 1;
  DatasetConfig dataset;
  ModelBlock model;
  LossesConfig losses;
  VariantSpec variant;
  OptimizerConfig optimizer;
  RunConfig run;

  TaskKind task() const;
  double effective_lr() const;
  int effective_batch_size() const;
  std::string effective_schedule() const;
  double effective_pretrain_lr() const;

  void validate() const;

  // Normalized form with every field materialized; key order is canonical,
  // so the digest is stable across input field ordering.
  std::string canonical_json(int indent = -1) const;
  std::string digest() const;
};

// Strict parser: unknown keys are rejected with their field path.
ExperimentConfig parse_config_json(const std::string& text);
ExperimentConfig load_config_file(const std::string& path);

// run.out_root, unless the OSMD_OUT_ROOT environment variable overrides it.
std::string resolve_out_root(const ExperimentConfig& cfg);

// Model geometry implied by config + dataset.
ModelConfig derive_model_config(const ExperimentConfig& cfg, const PairedDataset& ds);

}  // namespace osmd
