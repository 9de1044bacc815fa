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
#include "osmd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "osmd/data.hpp"

namespace osmd {

AcerResult compute_acer(const std::vector<double>& scores, const std::vector<int>& labels,
                        double threshold) {
  if (scores.size() != labels.size())
    throw StructuralError("compute_acer: scores and labels differ in length");
  if (scores.empty()) throw DataError("compute_acer: no samples");
  int64_t n_attack = 0, n_bona = 0, attack_accepted = 0, bona_rejected = 0;
  for (size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i])) throw NumericError("compute_acer: non-finite score");
    bool accept = scores[i] >= threshold;
    if (labels[i] == 1) {
      ++n_bona;
      if (!accept) ++bona_rejected;
    } else if (labels[i] == 0) {
      ++n_attack;
      if (accept) ++attack_accepted;
    } else {
      throw DataError("compute_acer: labels must be 0 (attack) or 1 (bona fide), got " +
                      std::to_string(labels[i]));
    }
  }
  if (n_attack == 0) throw DataError("compute_acer: attack class (label 0) absent");
  if (n_bona == 0) throw DataError("compute_acer: bona-fide class (label 1) absent");
  AcerResult r;
  r.apcer = static_cast<double>(attack_accepted) / static_cast<double>(n_attack);
  r.bpcer = static_cast<double>(bona_rejected) / static_cast<double>(n_bona);
  r.acer = (r.apcer + r.bpcer) / 2.0;
  return r;
}

double eer_threshold(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw StructuralError("eer_threshold: scores and labels differ in length");
  if (scores.empty()) throw DataError("eer_threshold: no samples");
  std::vector<double> candidates = scores;
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
  // One candidate above every score: rejects everything, the far end of the
  // accept/reject trade-off.
  candidates.push_back(candidates.back() + 1.0);

  double best_thr = candidates.front();
  double best_gap = std::numeric_limits<double>::infinity();
  double best_sum = std::numeric_limits<double>::infinity();
  for (double thr : candidates) {
    AcerResult r = compute_acer(scores, labels, thr);
    double gap = std::abs(r.apcer - r.bpcer);
    double sum = r.apcer + r.bpcer;
    if (gap < best_gap || (gap == best_gap && sum < best_sum)) {
      best_gap = gap;
      best_sum = sum;
      best_thr = thr;
    }
  }
  return best_thr;
}

MiouResult compute_miou(const std::vector<int>& pred, const std::vector<int>& gt, int n_classes,
                        int ignore_label) {
  if (pred.size() != gt.size())
    throw StructuralError("compute_miou: prediction and ground truth differ in length");
  if (n_classes < 1) throw ConfigError("compute_miou: n_classes must be positive");
  std::vector<int64_t> tp(static_cast<size_t>(n_classes), 0);
  std::vector<int64_t> fp(static_cast<size_t>(n_classes), 0);
  std::vector<int64_t> fn(static_cast<size_t>(n_classes), 0);
  int64_t valid = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    if (gt[i] == ignore_label) continue;
    if (gt[i] < 0 || gt[i] >= n_classes)
      throw DataError("compute_miou: ground-truth label " + std::to_string(gt[i]) +
                      " out of range at position " + std::to_string(i));
    if (pred[i] < 0 || pred[i] >= n_classes)
      throw DataError("compute_miou: predicted label " + std::to_string(pred[i]) +
                      " out of range at position " + std::to_string(i));
    ++valid;
    if (pred[i] == gt[i]) {
      ++tp[static_cast<size_t>(gt[i])];
    } else {
      ++fp[static_cast<size_t>(pred[i])];
      ++fn[static_cast<size_t>(gt[i])];
    }
  }
  if (valid == 0) throw DataError("compute_miou: no valid positions (all ignored)");
  MiouResult r;
  r.per_class_iou.assign(static_cast<size_t>(n_classes), 0.0);
  r.class_present.assign(static_cast<size_t>(n_classes), false);
  double sum = 0.0;
  int present = 0;
  for (int k = 0; k < n_classes; ++k) {
    size_t ks = static_cast<size_t>(k);
    int64_t denom = tp[ks] + fp[ks] + fn[ks];
    if (denom == 0) continue;  // class absent from both pred and gt
    r.class_present[ks] = true;
    r.per_class_iou[ks] = static_cast<double>(tp[ks]) / static_cast<double>(denom);
    sum += r.per_class_iou[ks];
    ++present;
  }
  r.miou = sum / static_cast<double>(present);
  return r;
}

std::vector<double> binary_scores(ModelGraph& graph, const DatasetView& view, FusionPath path,
                                  int batch_size, std::vector<int>* labels_out) {
  if (graph.cfg.task != TaskKind::classification || graph.cfg.n_classes != 2)
    throw ConfigError("binary_scores: requires two-class classification");
  if (view.size() == 0) throw DataError("binary_scores: empty dataset");
  std::vector<double> scores;
  scores.reserve(static_cast<size_t>(view.size()));
  if (labels_out) labels_out->clear();
  auto batches = make_batches(view, batch_size, /*shuffle_seed=*/0, /*shuffle=*/false);
  for (const auto& b : batches) {
    Tensor logits = graph.forward_inference(b.x_o, path);
    for (int64_t i = 0; i < b.size(); ++i) {
      scores.push_back(logits.at2(i, 1) - logits.at2(i, 0));
      if (labels_out) labels_out->push_back(b.labels[static_cast<size_t>(i)]);
    }
  }
  return scores;
}

MetricsRecord evaluate(ModelGraph& graph, const DatasetView& view, FusionPath path,
                       int batch_size, const DatasetView* dev_for_threshold, int ignore_label) {
  if (view.size() == 0) throw DataError("evaluate: empty dataset");
  MetricsRecord rec;
  if (graph.cfg.task == TaskKind::classification) {
    std::vector<double> scores;
    std::vector<int> labels;
    int64_t correct = 0, total = 0;
    auto batches = make_batches(view, batch_size, 0, false);
    for (const auto& b : batches) {
      Tensor logits = graph.forward_inference(b.x_o, path);
      int64_t n = b.size();
      int k = static_cast<int>(logits.dim(1));
      for (int64_t i = 0; i < n; ++i) {
        int arg = 0;
        double best = logits.at2(i, 0);
        for (int c = 1; c < k; ++c) {
          if (logits.at2(i, c) > best) {
            best = logits.at2(i, c);
            arg = c;
          }
        }
        int y = b.labels[static_cast<size_t>(i)];
        if (arg == y) ++correct;
        ++total;
        if (k == 2) {
          scores.push_back(logits.at2(i, 1) - logits.at2(i, 0));
          labels.push_back(y);
        }
      }
    }
    rec.accuracy = static_cast<double>(correct) / static_cast<double>(total);
    rec.n_scored = total;
    if (graph.cfg.n_classes == 2) {
      bool has0 = false, has1 = false;
      for (int y : labels) (y == 0 ? has0 : has1) = true;
      if (has0 && has1) {
        double thr = 0.0;
        if (dev_for_threshold && dev_for_threshold->size() > 0) {
          std::vector<int> dev_labels;
          std::vector<double> dev_scores =
              binary_scores(graph, *dev_for_threshold, path, batch_size, &dev_labels);
          bool d0 = false, d1 = false;
          for (int y : dev_labels) (y == 0 ? d0 : d1) = true;
          if (d0 && d1) thr = eer_threshold(dev_scores, dev_labels);
        }
        AcerResult a = compute_acer(scores, labels, thr);
        rec.has_acer = true;
        rec.apcer = a.apcer;
        rec.bpcer = a.bpcer;
        rec.acer = a.acer;
        rec.threshold = thr;
      }
    }
  } else {
    std::vector<int> pred_all, gt_all;
    int64_t correct = 0, total = 0;
    auto batches = make_batches(view, batch_size, 0, false);
    for (const auto& b : batches) {
      Tensor logits = graph.forward_inference(b.x_o, path);
      int64_t n = logits.dim(0), h = logits.dim(2), w = logits.dim(3);
      int k = static_cast<int>(logits.dim(1));
      for (int64_t i = 0; i < n; ++i) {
        for (int64_t y = 0; y < h; ++y) {
          for (int64_t x = 0; x < w; ++x) {
            int arg = 0;
            double best = logits.at4(i, 0, y, x);
            for (int c = 1; c < k; ++c) {
              if (logits.at4(i, c, y, x) > best) {
                best = logits.at4(i, c, y, x);
                arg = c;
              }
            }
            int g = b.labels[static_cast<size_t>((i * h + y) * w + x)];
            pred_all.push_back(arg);
            gt_all.push_back(g);
            if (g != ignore_label) {
              if (arg == g) ++correct;
              ++total;
            }
          }
        }
      }
    }
    if (total == 0) throw DataError("evaluate: no valid positions (all ignored)");
    rec.accuracy = static_cast<double>(correct) / static_cast<double>(total);
    rec.n_scored = total;
    MiouResult m = compute_miou(pred_all, gt_all, graph.cfg.n_classes, ignore_label);
    rec.has_miou = true;
    rec.miou = m.miou;
    rec.per_class_iou = m.per_class_iou;
  }
  return rec;
}

}  // namespace osmd
