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
 *
 * Command-line front end. Talks to the training library exclusively through
 * its C interface; exit codes mirror the library status codes.
 */
#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "osmd.h"

namespace {

struct CommonArgs {
  std::string config_path;
  std::string variant;
  std::string out_root;
  uint64_t seed = 0;
  bool seed_set = false;
  bool resume = false;
  bool force = false;
};

void add_common(CLI::App* sub, CommonArgs* a, bool with_resume_force) {
  sub->add_option("--config", a->config_path, "experiment configuration (JSON)")
      ->required();
  sub->add_option("--variant", a->variant,
                  "model variant override (full, minus_jdn, minus_jdn_plus_fkd, "
                  "minus_jdn_plus_rkd, minus_ctn, minus_ctn_plus_ae, ordinary_only, two_stage)");
  sub->add_option("--seed", a->seed, "run seed override")->each([a](const std::string&) {
    a->seed_set = true;
  });
  sub->add_option("--out", a->out_root, "output root override");
  if (with_resume_force) {
    sub->add_flag("--resume", a->resume, "continue an interrupted run from its last checkpoint");
    sub->add_flag("--force", a->force, "redo the run even if it already completed");
  }
}

int fail(osmd_status st) {
  std::cerr << "error: " << osmd_last_error() << "\n";
  return static_cast<int>(st);
}

// Loads the config and applies overrides; returns nullptr after printing the
// error (status stored in *st).
osmd_config* load_config(const CommonArgs& a, osmd_status* st) {
  osmd_config* cfg = nullptr;
  *st = osmd_config_load(a.config_path.c_str(), &cfg);
  if (*st != OSMD_OK) return nullptr;
  if (!a.variant.empty()) {
    *st = osmd_config_set_variant(cfg, a.variant.c_str());
    if (*st != OSMD_OK) {
      osmd_config_free(cfg);
      return nullptr;
    }
  }
  if (a.seed_set) osmd_config_set_seed(cfg, a.seed);
  if (!a.out_root.empty()) osmd_config_set_out_root(cfg, a.out_root.c_str());
  return cfg;
}

int cmd_pretrain(const CommonArgs& a, const std::string& modality) {
  osmd_status st;
  osmd_config* cfg = load_config(a, &st);
  if (cfg == nullptr) return fail(st);
  char path[4096] = {0};
  st = osmd_pretrain(cfg, modality.c_str(), a.force ? 1 : 0, path, sizeof(path));
  osmd_config_free(cfg);
  if (st != OSMD_OK) return fail(st);
  std::cout << "snapshot: " << path << "\n";
  return 0;
}

int cmd_train(const CommonArgs& a) {
  osmd_status st;
  osmd_config* cfg = load_config(a, &st);
  if (cfg == nullptr) return fail(st);
  char run_dir[4096] = {0};
  osmd_run_stats stats{};
  st = osmd_train(cfg, a.resume ? 1 : 0, a.force ? 1 : 0, run_dir, sizeof(run_dir), &stats);
  osmd_config_free(cfg);
  if (st != OSMD_OK) return fail(st);
  std::cout << "run_dir: " << run_dir << "\n";
  if (stats.already_complete) {
    std::cout << "status: already complete (use --force to redo)\n";
  } else {
    std::cout << "status: " << (stats.resumed ? "resumed and completed" : "completed") << "\n";
  }
  std::cout << "steps: " << stats.steps << "\n";
  std::cout << "final_error: " << stats.final_error << "\n";
  std::cout << "final_accuracy: " << stats.final_accuracy << "\n";
  std::cout << "best_error: " << stats.best_error << " (epoch " << stats.best_epoch << ")\n";
  return 0;
}

int cmd_ablate(const CommonArgs& a) {
  osmd_status st;
  osmd_config* cfg = load_config(a, &st);
  if (cfg == nullptr) return fail(st);
  char table[4096] = {0};
  st = osmd_ablate(cfg, table, sizeof(table));
  osmd_config_free(cfg);
  if (st != OSMD_OK) return fail(st);
  std::cout << "table: " << table << "\n";
  std::ifstream in(table);
  std::string line;
  while (std::getline(in, line)) std::cout << line << "\n";
  return 0;
}

int cmd_evaluate(const CommonArgs& a, const std::string& run_dir) {
  osmd_status st;
  osmd_config* cfg = load_config(a, &st);
  if (cfg == nullptr) return fail(st);
  char metrics[16384] = {0};
  st = osmd_evaluate_run(cfg, run_dir.empty() ? nullptr : run_dir.c_str(), metrics,
                         sizeof(metrics));
  osmd_config_free(cfg);
  if (st != OSMD_OK) return fail(st);
  std::cout << metrics << "\n";
  return 0;
}

int cmd_plot(const CommonArgs& a) {
  osmd_status st;
  osmd_config* cfg = load_config(a, &st);
  if (cfg == nullptr) return fail(st);
  char paths[16384] = {0};
  st = osmd_plot(cfg, paths, sizeof(paths));
  osmd_config_free(cfg);
  if (st != OSMD_OK) return fail(st);
  if (paths[0] == '\0') {
    std::cout << "nothing to plot: no run logs or ablation tables found for this config\n";
  } else {
    std::cout << "written:\n" << paths;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"one-stage modality distillation: train with a privileged modality, "
               "deploy on the ordinary one"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(osmd_version()));

  CommonArgs pre_args, train_args, abl_args, eval_args, plot_args;
  std::string modality, eval_run_dir;

  CLI::App* pre = app.add_subcommand("pretrain", "train a single-modality branch snapshot");
  add_common(pre, &pre_args, true);
  pre->add_option("--modality", modality, "which branch to pretrain: ordinary | privileged")
      ->required();

  CLI::App* train = app.add_subcommand("train", "run the joint distillation-and-fusion training");
  add_common(train, &train_args, true);

  CLI::App* abl = app.add_subcommand("ablate", "run every variant across the configured seeds");
  add_common(abl, &abl_args, false);

  CLI::App* ev = app.add_subcommand("evaluate", "evaluate the latest checkpoint of a run");
  add_common(ev, &eval_args, false);
  ev->add_option("--run", eval_run_dir, "run directory (default: derived from the config)");

  CLI::App* plot = app.add_subcommand("plot", "render SVG plots for existing artifacts");
  add_common(plot, &plot_args, false);

  CLI11_PARSE(app, argc, argv);

  if (pre->parsed()) return cmd_pretrain(pre_args, modality);
  if (train->parsed()) return cmd_train(train_args);
  if (abl->parsed()) return cmd_ablate(abl_args);
  if (ev->parsed()) return cmd_evaluate(eval_args, eval_run_dir);
  if (plot->parsed()) return cmd_plot(plot_args);
  return 0;
}
