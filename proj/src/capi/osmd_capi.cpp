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
#include "osmd.h"

#include <cstring>
#include <filesystem>
#include <string>

#include "json.hpp"
#include "osmd/baselines.hpp"
#include "osmd/config.hpp"
#include "osmd/jdn.hpp"
#include "osmd/report.hpp"
#include "osmd/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

struct osmd_config {
  osmd::ExperimentConfig cfg;
};

namespace {

thread_local std::string g_last_error;

void copy_out(char* buf, size_t len, const std::string& s) {
  if (buf == nullptr || len == 0) return;
  size_t n = std::min(len - 1, s.size());
  std::memcpy(buf, s.data(), n);
  buf[n] = '\0';
}

osmd_status fail(osmd_status st, const std::string& msg) {
  g_last_error = msg;
  return st;
}

template <typename Fn>
osmd_status guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return OSMD_OK;
  } catch (const osmd::ConfigError& e) {
    return fail(OSMD_ERR_CONFIG, e.what());
  } catch (const osmd::DataError& e) {
    return fail(OSMD_ERR_DATA, e.what());
  } catch (const osmd::TrainError& e) {
    return fail(OSMD_ERR_TRAIN, e.what());
  } catch (const osmd::IoError& e) {
    return fail(OSMD_ERR_IO, e.what());
  } catch (const std::exception& e) {
    return fail(OSMD_ERR_INVALID, e.what());
  }
}

json metrics_json(const osmd::MetricsRecord& m) {
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

}  // namespace

extern "C" {

const char* osmd_version(void) { return "1.0.0"; }

const char* osmd_last_error(void) { return g_last_error.c_str(); }

osmd_status osmd_config_load(const char* path, osmd_config** out) {
  if (path == nullptr || out == nullptr) return fail(OSMD_ERR_INVALID, "null argument");
  *out = nullptr;
  return guarded([&] {
    auto* h = new osmd_config{osmd::load_config_file(path)};
    *out = h;
  });
}

osmd_status osmd_config_parse(const char* json_text, osmd_config** out) {
  if (json_text == nullptr || out == nullptr) return fail(OSMD_ERR_INVALID, "null argument");
  *out = nullptr;
  return guarded([&] {
    auto* h = new osmd_config{osmd::parse_config_json(json_text)};
    *out = h;
  });
}

void osmd_config_free(osmd_config* cfg) { delete cfg; }

osmd_status osmd_config_set_variant(osmd_config* cfg, const char* name) {
  if (cfg == nullptr || name == nullptr) return fail(OSMD_ERR_INVALID, "null argument");
  return guarded([&] { cfg->cfg.variant.kind = osmd::variant_from_string(name); });
}

osmd_status osmd_config_set_seed(osmd_config* cfg, uint64_t seed) {
  if (cfg == nullptr) return fail(OSMD_ERR_INVALID, "null handle");
  cfg->cfg.run.seed = seed;
  g_last_error.clear();
  return OSMD_OK;
}

osmd_status osmd_config_set_out_root(osmd_config* cfg, const char* path) {
  if (cfg == nullptr || path == nullptr) return fail(OSMD_ERR_INVALID, "null argument");
  cfg->cfg.run.out_root = path;
  g_last_error.clear();
  return OSMD_OK;
}

osmd_status osmd_config_digest(const osmd_config* cfg, char* buf, size_t buf_len) {
  if (cfg == nullptr) return fail(OSMD_ERR_INVALID, "null handle");
  if (buf == nullptr || buf_len == 0) return fail(OSMD_ERR_INVALID, "null output buffer");
  return guarded([&] { copy_out(buf, buf_len, cfg->cfg.digest()); });
}

osmd_status osmd_pretrain(const osmd_config* cfg, const char* modality, int force,
                          char* snapshot_path_buf, size_t buf_len) {
  if (cfg == nullptr || modality == nullptr) return fail(OSMD_ERR_INVALID, "null argument");
  return guarded([&] {
    cfg->cfg.validate();
    osmd::PairedDataset ds = osmd::load_dataset(cfg->cfg);
    osmd::PretrainResult r = osmd::pretrain_unimodal(cfg->cfg, ds, modality, force != 0);
    copy_out(snapshot_path_buf, buf_len, r.snapshot_path);
  });
}

osmd_status osmd_train(const osmd_config* cfg, int resume, int force, char* run_dir_buf,
                       size_t run_dir_len, osmd_run_stats* stats) {
  if (cfg == nullptr) return fail(OSMD_ERR_INVALID, "null handle");
  return guarded([&] {
    osmd::RunOptions opts;
    opts.resume = resume != 0;
    opts.force = force != 0;
    osmd::RunResult r = osmd::run_experiment(cfg->cfg, opts);
    copy_out(run_dir_buf, run_dir_len, r.run_dir);
    if (stats != nullptr) {
      stats->final_error = r.final_error;
      stats->final_accuracy = r.final_eval.accuracy;
      stats->best_error = r.best_error;
      stats->best_epoch = r.best_epoch;
      stats->steps = r.steps;
      stats->resumed = r.resumed ? 1 : 0;
      stats->already_complete = r.already_complete ? 1 : 0;
    }
  });
}

osmd_status osmd_evaluate_run(const osmd_config* cfg, const char* run_dir, char* metrics_json_buf,
                              size_t buf_len) {
  if (cfg == nullptr) return fail(OSMD_ERR_INVALID, "null handle");
  return guarded([&] {
    std::string dir = run_dir == nullptr || run_dir[0] == '\0' ? osmd::run_dir_for(cfg->cfg)
                                                               : std::string(run_dir);
    osmd::MetricsRecord m = osmd::evaluate_run(cfg->cfg, dir);
    json j = metrics_json(m);
    j["run_dir"] = dir;
    copy_out(metrics_json_buf, buf_len, j.dump());
  });
}

osmd_status osmd_ablate(const osmd_config* cfg, char* table_path_buf, size_t buf_len) {
  if (cfg == nullptr) return fail(OSMD_ERR_INVALID, "null handle");
  return guarded([&] {
    osmd::AblationResult r = osmd::run_ablation(cfg->cfg);
    copy_out(table_path_buf, buf_len, r.table_path);
  });
}

osmd_status osmd_plot(const osmd_config* cfg, char* written_paths_buf, size_t buf_len) {
  if (cfg == nullptr) return fail(OSMD_ERR_INVALID, "null handle");
  return guarded([&] {
    std::string written;
    std::string run_dir = osmd::run_dir_for(cfg->cfg);
    std::string log_path = (fs::path(run_dir) / "metrics.log").string();
    if (fs::exists(log_path)) {
      osmd::StepSeries s = osmd::parse_metrics_log(log_path);
      fs::path plots = fs::path(run_dir) / "plots";
      fs::create_directories(plots);
      if (osmd::render_loss_curves(s, (plots / "losses.svg").string()))
        written += (plots / "losses.svg").string() + "\n";
      if (osmd::render_weight_curves(s, (plots / "weights.svg").string()))
        written += (plots / "weights.svg").string() + "\n";
      if (osmd::render_collapse_curves(s, (plots / "collapse.svg").string()))
        written += (plots / "collapse.svg").string() + "\n";
    }
    std::string abl_dir = osmd::ablation_dir_for(cfg->cfg);
    std::string table = (fs::path(abl_dir) / "ablation.dsv").string();
    if (fs::exists(table)) {
      auto rows = osmd::read_ablation_table(table);
      auto stats = osmd::summarize_ablation(rows);
      std::string bars = (fs::path(abl_dir) / "ablation.svg").string();
      if (osmd::render_ablation_bars(stats, bars)) written += bars + "\n";
    }
    copy_out(written_paths_buf, buf_len, written);
  });
}

osmd_status osmd_gaussian_kernel(const double* u, const double* v, int64_t dim, double sigma,
                                 double* out) {
  if (u == nullptr || v == nullptr || out == nullptr)
    return fail(OSMD_ERR_INVALID, "null argument");
  return guarded([&] { *out = osmd::gaussian_kernel(u, v, dim, sigma); });
}

osmd_status osmd_mmd_marginal(const double* rep_s, const double* rep_p, int64_t b, int64_t d,
                              int use_median, double sigma, double* out_value, double* out_sigma) {
  if (rep_s == nullptr || rep_p == nullptr || out_value == nullptr)
    return fail(OSMD_ERR_INVALID, "null argument");
  return guarded([&] {
    osmd::Tensor s({b, d}), p({b, d});
    std::memcpy(s.data(), rep_s, sizeof(double) * static_cast<size_t>(b * d));
    std::memcpy(p.data(), rep_p, sizeof(double) * static_cast<size_t>(b * d));
    osmd::KernelConfig kc;
    kc.mode = use_median != 0 ? osmd::KernelConfig::Bandwidth::median
                              : osmd::KernelConfig::Bandwidth::fixed;
    kc.sigma = sigma;
    osmd::MmdResult r = osmd::mmd_marginal(s, p, kc, nullptr);
    *out_value = r.value;
    if (out_sigma != nullptr) *out_sigma = r.sigma;
  });
}

osmd_status osmd_conditional_kl(const double* logits_p, const double* logits_s, int64_t rows,
                                int64_t cols, double* out) {
  if (logits_p == nullptr || logits_s == nullptr || out == nullptr)
    return fail(OSMD_ERR_INVALID, "null argument");
  return guarded([&] {
    osmd::Tensor p({rows, cols}), s({rows, cols});
    std::memcpy(p.data(), logits_p, sizeof(double) * static_cast<size_t>(rows * cols));
    std::memcpy(s.data(), logits_s, sizeof(double) * static_cast<size_t>(rows * cols));
    *out = osmd::conditional_kl(p, s, nullptr);
  });
}

}  // extern "C"
