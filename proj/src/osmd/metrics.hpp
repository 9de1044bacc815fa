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

#include <vector>

#include "osmd/graph.hpp"

namespace osmd {

// Binary anti-spoofing style error rates. Label 1 is the bona-fide (positive)
// class, label 0 the attack class; a score >= threshold predicts bona fide.
struct AcerResult {
  double apcer = 0.0;  // attacks accepted / attacks
  double bpcer = 0.0;  // bona fides rejected / bona fides
  double acer = 0.0;   // (apcer + bpcer) / 2
};

// Requires at least one sample of each class; a missing class is an error
// naming the class.
AcerResult compute_acer(const std::vector<double>& scores, const std::vector<int>& labels,
                        double threshold);

// Threshold at which accept/reject error rates are closest (equal error
// rate), scanned over the candidate set given by the scores themselves.
// Ties prefer the lower combined error, then the lower threshold.
double eer_threshold(const std::vector<double>& scores, const std::vector<int>& labels);

struct MiouResult {
  std::vector<double> per_class_iou;   // meaningful where class_present
  std::vector<bool> class_present;     // class appears in pred or gt
  double miou = 0.0;                   // mean over present classes
};

// Per-class IoU = TP/(TP+FP+FN) accumulated over all positions. Positions
// whose ground truth equals ignore_label are excluded everywhere; classes
// absent from both prediction and ground truth are excluded from the mean.
MiouResult compute_miou(const std::vector<int>& pred, const std::vector<int>& gt, int n_classes,
                        int ignore_label = -1);

struct MetricsRecord {
  double accuracy = 0.0;
  int64_t n_scored = 0;  // samples (classification) or valid positions (segmentation)
  bool has_acer = false;
  double apcer = 0.0, bpcer = 0.0, acer = 0.0;
  double threshold = 0.0;
  bool has_miou = false;
  double miou = 0.0;
  std::vector<double> per_class_iou;
};

// Ordinary-modality scores for the bona-fide class (logit 1 minus logit 0).
// Only defined for two-class classification.
std::vector<double> binary_scores(ModelGraph& graph, const DatasetView& view, FusionPath path,
                                  int batch_size, std::vector<int>* labels_out = nullptr);

// Runs ordinary-only inference over `view` in evaluation mode and computes
// task metrics. Two-class classification also reports ACER at a threshold
// calibrated by equal error rate on `dev_for_threshold` when provided (0.0
// otherwise), provided both classes appear in the scored split. Evaluation
// never mutates parameters or normalization statistics.
MetricsRecord evaluate(ModelGraph& graph, const DatasetView& view, FusionPath path,
                       int batch_size, const DatasetView* dev_for_threshold = nullptr,
                       int ignore_label = -1);

}  // namespace osmd
