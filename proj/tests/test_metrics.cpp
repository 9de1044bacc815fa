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
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <set>

#include "doctest.h"
#include "helpers.hpp"
#include "osmd/metrics.hpp"
#include "osmd/synth.hpp"

using namespace osmd;

namespace {

// Brute-force ACER: count each error type with plain loops.
AcerResult naive_acer(const std::vector<double>& scores, const std::vector<int>& labels,
                      double thr) {
  int attacks = 0, bona = 0, accepted_attacks = 0, rejected_bona = 0;
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 0) {
      ++attacks;
      if (scores[i] >= thr) ++accepted_attacks;
    } else {
      ++bona;
      if (scores[i] < thr) ++rejected_bona;
    }
  }
  AcerResult r;
  r.apcer = static_cast<double>(accepted_attacks) / attacks;
  r.bpcer = static_cast<double>(rejected_bona) / bona;
  r.acer = (r.apcer + r.bpcer) / 2.0;
  return r;
}

// Brute-force per-class IoU via explicit TP/FP/FN counting.
MiouResult naive_miou(const std::vector<int>& pred, const std::vector<int>& gt, int k,
                      int ignore_label) {
  std::vector<int64_t> tp(k, 0), fp(k, 0), fn(k, 0);
  std::vector<bool> present(k, false);
  for (size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] == ignore_label) continue;
    present[static_cast<size_t>(gt[i])] = true;
    present[static_cast<size_t>(pred[i])] = true;
    if (pred[i] == gt[i]) {
      tp[static_cast<size_t>(gt[i])]++;
    } else {
      fp[static_cast<size_t>(pred[i])]++;
      fn[static_cast<size_t>(gt[i])]++;
    }
  }
  MiouResult r;
  r.per_class_iou.assign(static_cast<size_t>(k), 0.0);
  r.class_present.assign(static_cast<size_t>(k), false);
  double sum = 0.0;
  int n_present = 0;
  for (int c = 0; c < k; ++c) {
    auto uc = static_cast<size_t>(c);
    r.class_present[uc] = present[uc];
    if (!present[uc]) continue;
    double denom = static_cast<double>(tp[uc] + fp[uc] + fn[uc]);
    r.per_class_iou[uc] = denom > 0 ? static_cast<double>(tp[uc]) / denom : 0.0;
    sum += r.per_class_iou[uc];
    ++n_present;
  }
  r.miou = n_present > 0 ? sum / n_present : 0.0;
  return r;
}

}  // namespace

TEST_CASE("acer worked examples") {
  // 10 attacks with 1 accepted -> apcer 0.1; 20 bona fides with 1 rejected
  // -> bpcer 0.05; acer (0.1 + 0.05)/2 = 0.075.
  std::vector<double> scores;
  std::vector<int> labels;
  for (int i = 0; i < 10; ++i) {
    scores.push_back(i == 0 ? 1.0 : -1.0);
    labels.push_back(0);
  }
  for (int i = 0; i < 20; ++i) {
    scores.push_back(i == 0 ? -1.0 : 1.0);
    labels.push_back(1);
  }
  AcerResult r = compute_acer(scores, labels, 0.0);
  CHECK(r.apcer == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(r.bpcer == doctest::Approx(0.05).epsilon(1e-15));
  CHECK(r.acer == doctest::Approx(0.075).epsilon(1e-15));

  // Degenerate threshold below every score accepts everything: all attacks
  // pass (apcer 1), no bona fide is rejected (bpcer 0), acer 0.5.
  AcerResult all = compute_acer(scores, labels, -100.0);
  CHECK(all.apcer == 1.0);
  CHECK(all.bpcer == 0.0);
  CHECK(all.acer == 0.5);
}

TEST_CASE("acer requires both classes and names the missing one") {
  std::vector<double> scores = {0.2, 0.4};
  try {
    compute_acer(scores, {1, 1}, 0.0);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("attack") != std::string::npos);
  }
  try {
    compute_acer(scores, {0, 0}, 0.0);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("bona") != std::string::npos);
  }
  CHECK_THROWS_AS(compute_acer({0.1}, {1, 0}, 0.0), StructuralError);
}

TEST_CASE("acer matches brute force on randomized instances") {
  Rng rng(101);
  for (int trial = 0; trial < 1000; ++trial) {
    int n = 2 + static_cast<int>(rng.uniform_int(30));
    std::vector<double> scores;
    std::vector<int> labels;
    labels.push_back(0);
    labels.push_back(1);
    for (int i = 2; i < n; ++i) labels.push_back(static_cast<int>(rng.uniform_int(2)));
    for (int i = 0; i < n; ++i) scores.push_back(std::round(rng.normal() * 4.0) / 4.0);
    double thr = std::round(rng.normal() * 4.0) / 4.0;
    AcerResult got = compute_acer(scores, labels, thr);
    AcerResult want = naive_acer(scores, labels, thr);
    CHECK(got.apcer == want.apcer);
    CHECK(got.bpcer == want.bpcer);
    CHECK(got.acer == want.acer);
  }
}

TEST_CASE("eer threshold balances the two error rates and breaks ties low") {
  // Perfectly separable: any threshold in (0.4, 0.6] gives zero error; the
  // scanner must pick a candidate achieving apcer == bpcer == 0.
  std::vector<double> scores = {0.1, 0.2, 0.3, 0.4, 0.6, 0.7, 0.8, 0.9};
  std::vector<int> labels = {0, 0, 0, 0, 1, 1, 1, 1};
  double thr = eer_threshold(scores, labels);
  AcerResult at = compute_acer(scores, labels, thr);
  CHECK(at.apcer == 0.0);
  CHECK(at.bpcer == 0.0);

  // Anti-separable case: flipping labels forces a nonzero floor; the result
  // must still minimize |apcer - bpcer| then total error over candidates.
  std::vector<int> flipped = {1, 1, 1, 1, 0, 0, 0, 0};
  double thr2 = eer_threshold(scores, flipped);
  AcerResult at2 = compute_acer(scores, flipped, thr2);
  double best_gap = 1e9, best_total = 1e9;
  std::vector<double> cands = scores;
  cands.push_back(1.0 + *std::max_element(scores.begin(), scores.end()));
  for (double c : cands) {
    AcerResult r = compute_acer(scores, flipped, c);
    double gap = std::abs(r.apcer - r.bpcer);
    if (gap < best_gap - 1e-12 ||
        (std::abs(gap - best_gap) <= 1e-12 && r.acer < best_total - 1e-12)) {
      best_gap = gap;
      best_total = r.acer;
    }
  }
  CHECK(std::abs(at2.apcer - at2.bpcer) == doctest::Approx(best_gap).epsilon(1e-12));
  CHECK(at2.acer == doctest::Approx(best_total).epsilon(1e-12));
}

TEST_CASE("miou toy example: four pixels give 7/12") {
  // pred [0,0,1,1] vs gt [0,1,1,1]: class0 IoU = 1/2, class1 IoU = 2/3,
  // mean = (1/2 + 2/3)/2 = 7/12.
  MiouResult r = compute_miou({0, 0, 1, 1}, {0, 1, 1, 1}, 2);
  CHECK(r.per_class_iou[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(r.per_class_iou[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(r.miou == doctest::Approx(7.0 / 12.0).epsilon(1e-15));
}

TEST_CASE("miou respects ignore labels and absent classes") {
  // Ignored positions vanish from every count.
  MiouResult r = compute_miou({0, 0, 1, 1}, {0, -1, 1, -1}, 2);
  CHECK(r.per_class_iou[0] == 1.0);
  CHECK(r.per_class_iou[1] == 1.0);
  CHECK(r.miou == 1.0);

  // A class absent from both pred and gt is excluded from the mean.
  MiouResult r2 = compute_miou({0, 0}, {0, 1}, 3);
  CHECK(r2.class_present[2] == false);
  CHECK(r2.miou == doctest::Approx((0.5 + 0.0) / 2.0).epsilon(1e-15));

  // All positions ignored leaves nothing to score.
  CHECK_THROWS_AS(compute_miou({0, 1}, {-1, -1}, 2), DataError);

  CHECK_THROWS_AS(compute_miou({0, 5}, {0, 1}, 2), DataError);    // pred out of range
  CHECK_THROWS_AS(compute_miou({0, 1}, {0, 2}, 2), DataError);    // gt out of range
  CHECK_THROWS_AS(compute_miou({0}, {0, 1}, 2), StructuralError); // length mismatch
}

TEST_CASE("miou matches brute force on randomized instances") {
  Rng rng(202);
  for (int trial = 0; trial < 1000; ++trial) {
    int k = 2 + static_cast<int>(rng.uniform_int(4));
    int n = 1 + static_cast<int>(rng.uniform_int(40));
    bool use_ignore = rng.uniform() < 0.5;
    std::vector<int> pred, gt;
    for (int i = 0; i < n; ++i) {
      pred.push_back(static_cast<int>(rng.uniform_int(static_cast<uint64_t>(k))));
      if (use_ignore && i > 0 && rng.uniform() < 0.2)
        gt.push_back(-1);
      else
        gt.push_back(static_cast<int>(rng.uniform_int(static_cast<uint64_t>(k))));
    }
    MiouResult got = compute_miou(pred, gt, k, -1);
    MiouResult want = naive_miou(pred, gt, k, -1);
    CHECK(got.miou == want.miou);
    REQUIRE(got.per_class_iou.size() == want.per_class_iou.size());
    for (int c = 0; c < k; ++c) {
      CHECK(got.class_present[static_cast<size_t>(c)] ==
            want.class_present[static_cast<size_t>(c)]);
      CHECK(got.per_class_iou[static_cast<size_t>(c)] ==
            want.per_class_iou[static_cast<size_t>(c)]);
    }
  }
}

TEST_CASE("evaluation reports accuracy and leaves the model untouched") {
  SynthSpec spec;
  spec.task_kind = TaskKind::classification;
  spec.n_classes = 2;
  spec.dims_o = {2, 8, 8};
  spec.dims_p = {1, 8, 8};
  spec.n_train = 24;
  spec.n_eval = 24;
  spec.seed = 31;
  PairedDataset ds = generate_synth_dataset(spec);

  ModelConfig mc;
  mc.n_classes = 2;
  mc.in_c_ordinary = 2;
  mc.in_c_privileged = 1;
  mc.widths = {4, 6};
  ModelGraph g(mc, 55);

  auto all = ModelGraph::module_tags();
  uint64_t before = g.checksum_of(all);
  DatasetView eval_v = ds.eval_view();
  DatasetView dev_v = ds.train_view();
  MetricsRecord m = evaluate(g, eval_v, FusionPath::conv_fused, 7, &dev_v);
  CHECK(g.checksum_of(all) == before);  // evaluation is pure
  CHECK(m.n_scored == 24);
  CHECK(m.accuracy >= 0.0);
  CHECK(m.accuracy <= 1.0);
  CHECK(m.has_acer);  // two-class task with a dev split
  CHECK(m.acer == doctest::Approx((m.apcer + m.bpcer) / 2.0).epsilon(1e-12));

  // Without a dev split the threshold defaults to zero but ACER still exists.
  MetricsRecord m0 = evaluate(g, eval_v, FusionPath::conv_fused, 7, nullptr);
  CHECK(m0.has_acer);
  CHECK(m0.threshold == 0.0);

  // Repeat evaluation is deterministic.
  MetricsRecord m2 = evaluate(g, eval_v, FusionPath::conv_fused, 7, &dev_v);
  CHECK(m2.accuracy == m.accuracy);
  CHECK(m2.acer == m.acer);
  CHECK(m2.threshold == m.threshold);

  // Accuracy agrees with direct argmax counting over forward_inference.
  int64_t correct = 0;
  for (int64_t i = 0; i < eval_v.size(); ++i) {
    const PairedSample& s = eval_v.at(i);
    Tensor x({1, s.x_o.dim(0), s.x_o.dim(1), s.x_o.dim(2)});
    for (int64_t k = 0; k < s.x_o.size(); ++k) x.data()[k] = s.x_o.data()[k];
    Tensor logits = g.forward_inference(x, FusionPath::conv_fused);
    int arg = 0;
    for (int c = 1; c < mc.n_classes; ++c)
      if (logits.data()[c] > logits.data()[arg]) arg = c;
    if (arg == s.label) ++correct;
  }
  CHECK(m.accuracy ==
        doctest::Approx(static_cast<double>(correct) / static_cast<double>(eval_v.size()))
            .epsilon(1e-12));
}

TEST_CASE("binary scores align with labels and feed acer") {
  SynthSpec spec;
  spec.n_classes = 2;
  spec.dims_o = {2, 8, 8};
  spec.dims_p = {1, 8, 8};
  spec.n_train = 16;
  spec.n_eval = 16;
  spec.seed = 77;
  PairedDataset ds = generate_synth_dataset(spec);
  ModelConfig mc;
  mc.n_classes = 2;
  mc.in_c_ordinary = 2;
  mc.in_c_privileged = 1;
  mc.widths = {4};
  ModelGraph g(mc, 3);

  std::vector<int> labels;
  std::vector<double> scores = binary_scores(g, ds.eval_view(), FusionPath::conv_fused, 5, &labels);
  REQUIRE(scores.size() == 16);
  REQUIRE(labels.size() == 16);
  for (size_t i = 0; i < labels.size(); ++i)
    CHECK(labels[i] == ds.eval_view().at(static_cast<int64_t>(i)).label);

  // Scores are logit differences: recompute one by hand.
  const PairedSample& s0 = ds.eval_view().at(0);
  Tensor x({1, s0.x_o.dim(0), s0.x_o.dim(1), s0.x_o.dim(2)});
  for (int64_t k = 0; k < s0.x_o.size(); ++k) x.data()[k] = s0.x_o.data()[k];
  Tensor logits = g.forward_inference(x, FusionPath::conv_fused);
  CHECK(scores[0] == doctest::Approx(logits.data()[1] - logits.data()[0]).epsilon(1e-12));

  (void)compute_acer(scores, labels, eer_threshold(scores, labels));
}

TEST_CASE("segmentation evaluation reports miou and skips acer") {
  SynthSpec spec;
  spec.task_kind = TaskKind::segmentation;
  spec.n_classes = 3;
  spec.dims_o = {2, 8, 8};
  spec.dims_p = {1, 8, 8};
  spec.n_train = 8;
  spec.n_eval = 8;
  spec.seed = 13;
  spec.label_grid = 4;
  PairedDataset ds = generate_synth_dataset(spec);
  ModelConfig mc;
  mc.task = TaskKind::segmentation;
  mc.n_classes = 3;
  mc.in_c_ordinary = 2;
  mc.in_c_privileged = 1;
  mc.widths = {4, 6};
  ModelGraph g(mc, 71);
  MetricsRecord m = evaluate(g, ds.eval_view(), FusionPath::conv_fused, 4);
  CHECK(m.has_miou);
  CHECK(!m.has_acer);
  CHECK(m.n_scored == 8 * 64);
  CHECK(m.miou >= 0.0);
  CHECK(m.miou <= 1.0);
  CHECK(m.per_class_iou.size() == 3);
}
