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
#ifndef OSMD_REPORT_HPP_
#define OSMD_REPORT_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "osmd/config.hpp"
#include "osmd/trainer.hpp"

namespace osmd {

// ===== metrics-log parsing =====

struct EvalPoint {
  int epoch = 0;
  int64_t step = 0;
  double accuracy = 0.0;
  double error = 0.0;
  bool has_acer = false;
  double acer = 0.0;
  bool has_miou = false;
  double miou = 0.0;
};

struct StepSeries {
  std::string variant;
  std::string task;
  uint64_t seed = 0;
  std::string config_digest;
  std::string dataset_digest;
  std::vector<int64_t> steps;
  std::vector<int> epochs;
  std::vector<double> l_jdn, l_ctn, l_ttl;
  std::vector<double> alpha, beta;
  std::vector<double> l_total;
  std::vector<double> dist_marginal, dist_conditional;
  std::vector<double> collapse_t1, collapse_t2;
  std::vector<double> lr;
  std::vector<EvalPoint> evals;
  bool empty() const { return steps.empty(); }
};

// Reads a JSONL metrics log. Malformed lines raise IoError naming the line.
StepSeries parse_metrics_log(const std::string& path);

// ===== ablation grid =====

struct AblationRow {
  std::string variant;
  uint64_t seed = 0;
  bool ok = false;
  double error = 0.0;
  double accuracy = 0.0;
  bool has_acer = false;
  double acer = 0.0;
  bool has_miou = false;
  double miou = 0.0;
  std::string run_dir;
  std::string message;  // failure detail when !ok
};

struct VariantStats {
  std::string variant;
  int n = 0;
  double mean_error = 0.0;
  double std_error = 0.0;  // sample standard deviation over seeds
};

struct AblationResult {
  std::string dir;
  std::string table_path;
  std::string digest_path;
  std::string summary_path;
  std::vector<AblationRow> rows;
  std::vector<VariantStats> stats;
};

std::string ablation_dir_for(const ExperimentConfig& base);

// Runs every model variant across run.ablate_seeds, sharing pretraining
// snapshots, and writes a tab-separated table plus a sidecar content digest.
// Individual run failures are captured per row; the grid keeps going.
AblationResult run_ablation(const ExperimentConfig& base);

std::vector<VariantStats> summarize_ablation(const std::vector<AblationRow>& rows);
std::vector<AblationRow> read_ablation_table(const std::string& path);

// ===== SVG rendering (hand-written markup; returns false when empty) =====

bool render_loss_curves(const StepSeries& s, const std::string& path);
bool render_weight_curves(const StepSeries& s, const std::string& path);
bool render_collapse_curves(const StepSeries& s, const std::string& path);
bool render_ablation_bars(const std::vector<VariantStats>& stats, const std::string& path);

}  // namespace osmd

#endif  // OSMD_REPORT_HPP_
