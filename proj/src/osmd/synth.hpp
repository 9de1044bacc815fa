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

#include "osmd/common.hpp"
#include "osmd/tensor.hpp"

namespace osmd {

enum class TaskKind { classification, segmentation };

std::string task_name(TaskKind t);
TaskKind task_from_string(const std::string& s);

// Generative model: class-conditional Gaussian latents pushed through fixed
// random linear maps per modality plus per-modality noise. The noise latents
// of the two modalities share a common component with weight cross_corr.
struct SynthSpec {
  TaskKind task_kind = TaskKind::classification;
  int n_classes = 2;
  std::vector<int> dims_o = {2, 16, 16};  // [channels, h, w]
  std::vector<int> dims_p = {1, 16, 16};
  double ordinary_snr = 0.5;
  double privileged_snr = 3.0;
  double cross_corr = 0.5;
  int n_train = 512;
  int n_eval = 1024;
  uint64_t seed = 1;
  int latent_dim = 8;
  double pixel_noise = 0.05;
  int label_grid = 4;  // segmentation: low-res class grid edge length

  void validate() const;
  std::string canonical_string() const;
};

// Reference accuracies of the Bayes-optimal classifier under the true
// generative parameters, estimated by Monte Carlo with the closed-form
// class posterior. For segmentation these are per-position accuracies.
struct BayesRefs {
  double ordinary = 0.0;
  double privileged = 0.0;
  double joint = 0.0;
  int mc_samples = 0;
};

struct PairedSample {
  Tensor x_o;  // [c, h, w]
  Tensor x_p;
  int label = -1;               // classification
  std::vector<int> label_map;   // segmentation, h*w row-major
  int64_t instance_id = -1;
};

class PairedDataset;

struct DatasetView {
  const PairedDataset* ds = nullptr;
  int64_t begin = 0;
  int64_t end = 0;
  int64_t size() const { return end - begin; }
  const PairedSample& at(int64_t i) const;
};

class PairedDataset {
 public:
  TaskKind task = TaskKind::classification;
  int n_classes = 0;
  int n_train = 0;
  int n_eval = 0;
  std::vector<PairedSample> samples;  // train slice first, then eval slice
  SynthSpec spec;
  bool has_spec = false;
  BayesRefs bayes;
  bool has_bayes = false;
  uint64_t digest = 0;

  DatasetView train_view() const { return {this, 0, n_train}; }
  DatasetView eval_view() const { return {this, n_train, n_train + n_eval}; }
  DatasetView all_view() const { return {this, 0, static_cast<int64_t>(samples.size())}; }

  void compute_digest();
  void check_consistent() const;  // shared spatial dims, label ranges
};

// Deterministic: the same spec yields a bit-identical dataset. Balanced
// classification labels within each split (counts differ by at most one).
PairedDataset generate_synth_dataset(const SynthSpec& spec);

BayesRefs bayes_reference(const SynthSpec& spec, int mc_samples = 4000);

}  // namespace osmd
