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

#include "osmd/balance.hpp"
#include "osmd/config.hpp"
#include "osmd/graph.hpp"
#include "osmd/metrics.hpp"

namespace osmd {

// ===== single-modality pretraining =====

struct PretrainResult {
  std::string snapshot_path;
  double train_accuracy = 0.0;
  double eval_accuracy = 0.0;
  bool reused = false;  // an existing snapshot with the same digest was kept
};

// Trains (or reuses) an encoder+head on one modality with the task loss.
// `modality` is "ordinary" or "privileged". The snapshot lands under
// <out_root>/pretrain/ keyed by a digest of dataset + geometry + optimizer
// settings, so every variant of an ablation shares the same snapshots.
PretrainResult pretrain_unimodal(const ExperimentConfig& cfg, const PairedDataset& ds,
                                 const std::string& modality, bool force = false);

// ===== joint training =====

struct StepReport {
  LossReport losses;
  double dist_marginal = 0.0;
  double dist_conditional = 0.0;
  double sigma = 0.0;
  double collapse_t1 = 0.0;
  double collapse_t2 = 0.0;
  double lr = 0.0;
  int64_t step = 0;   // 1-based global optimizer step
  int epoch = 0;      // 0-based epoch of this step
  int phase = 1;      // two-phase recipes: 1 or 2
};

// One training step of the joint objective: forward over the recipe's
// wiring, raw losses, per-task gradient norms on the shared encoder, weight
// update, weighted backward, and an SGD step over the recipe's trainable
// parameter set. Exposed for tests; run_experiment drives it.
class JointTrainer {
 public:
  JointTrainer(const ExperimentConfig& cfg, ModelGraph* graph, const Recipe& recipe);

  StepReport train_step(const PairedBatch& batch, double lr, int64_t step, int epoch);

  void set_phase(int phase);
  int phase() const { return phase_; }
  LossWeights weights;
  nn::Sgd sgd;

 private:
  std::vector<std::string> active_trainable() const;
  bool trains(const std::string& tag) const;

  ExperimentConfig cfg_;
  ModelGraph* graph_;
  Recipe recipe_;
  KernelConfig kernel_;
  BalanceConfig balance_;
  int phase_ = 1;
};

struct RunOptions {
  bool resume = false;
  bool force = false;          // redo a completed run
  std::string run_dir;         // empty = run_dir_for(cfg)
  int stop_after_epochs = 0;   // >0: stop this invocation after that many
                               // epochs (simulated interruption; no summary)
};

struct RunResult {
  std::string run_dir;
  MetricsRecord final_eval;
  double final_error = 0.0;  // 1 - accuracy
  double best_error = 0.0;
  int best_epoch = -1;
  int64_t steps = 0;
  bool resumed = false;
  bool already_complete = false;
};

// <out_root>/<variant>-s<seed>-<digest prefix>, deterministic per config.
std::string run_dir_for(const ExperimentConfig& cfg);

// Builds the dataset the config names (synthetic generation or directory
// ingestion).
PairedDataset load_dataset(const ExperimentConfig& cfg);

// Dev/train carve-up of the training split used for threshold calibration.
DatasetView train_subview(const PairedDataset& ds, double dev_fraction);
DatasetView dev_subview(const PairedDataset& ds, double dev_fraction);

// Full experiment: pretraining (reused when present), joint training with
// per-step logging, periodic evaluation, epoch-boundary checkpoints, and a
// machine-readable summary, all inside a self-contained run directory.
RunResult run_experiment(const ExperimentConfig& cfg, const RunOptions& opts = {});

// Re-evaluates the latest checkpoint of a run directory on the eval split.
MetricsRecord evaluate_run(const ExperimentConfig& cfg, const std::string& run_dir);

}  // namespace osmd
