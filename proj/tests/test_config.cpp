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
#include <cstdlib>
#include <fstream>

#include "doctest.h"
#include "helpers.hpp"
#include "osmd/config.hpp"

using namespace osmd;
using osmd_test::TempDir;

TEST_CASE("an empty object parses to documented defaults") {
  ExperimentConfig cfg = parse_config_json("{}");
  CHECK(cfg.dataset.source == "synth");
  CHECK(cfg.dataset.synth.n_classes == 2);
  CHECK(cfg.model.widths == std::vector<int>{8, 16, 32});
  CHECK(cfg.losses.kd_temperature == 4.0);
  CHECK(cfg.losses.target_ratio == 0.1);
  CHECK(cfg.losses.ema_decay == 0.9);
  CHECK(cfg.losses.clip_lo == 0.5);
  CHECK(cfg.losses.clip_hi == 2.0);
  CHECK(cfg.losses.kernel.mode == KernelConfig::Bandwidth::median);
  CHECK(cfg.variant.kind == VariantKind::full);
  CHECK(cfg.optimizer.momentum == 0.9);
  CHECK(cfg.optimizer.epochs == 6);
  CHECK(cfg.run.seed == 1);
  CHECK(cfg.run.deterministic);
  CHECK(cfg.run.ablate_seeds == std::vector<uint64_t>{1, 2, 3, 4, 5});

  // Task-dependent defaults.
  CHECK(cfg.task() == TaskKind::classification);
  CHECK(cfg.effective_lr() == 0.001);
  CHECK(cfg.effective_batch_size() == 64);
  CHECK(cfg.effective_schedule() == "constant");
  ExperimentConfig seg = parse_config_json(R"({"dataset":{"synth":{"task":"segmentation"}}})");
  CHECK(seg.effective_lr() == 0.01);
  CHECK(seg.effective_batch_size() == 8);
  CHECK(seg.effective_schedule() == "one_cycle");
  cfg.validate();
}

TEST_CASE("digest ignores key order but tracks values") {
  ExperimentConfig a = parse_config_json(R"({"run":{"seed":9},"optimizer":{"epochs":3}})");
  ExperimentConfig b = parse_config_json(R"({"optimizer":{"epochs":3},"run":{"seed":9}})");
  CHECK(a.digest() == b.digest());
  CHECK(a.canonical_json() == b.canonical_json());

  ExperimentConfig c = parse_config_json(R"({"run":{"seed":10},"optimizer":{"epochs":3}})");
  CHECK(c.digest() != a.digest());
}

TEST_CASE("canonical json round-trips to an identical config") {
  ExperimentConfig a = parse_config_json(
      R"({"variant":{"name":"minus_ctn","ae_width":3},
          "losses":{"kernel":{"bandwidth":"fixed","sigma":1.5},"kd_temperature":2.5},
          "optimizer":{"lr":0.02,"schedule":"one_cycle"},
          "run":{"seed":42,"augment_hflip":true}})");
  ExperimentConfig b = parse_config_json(a.canonical_json());
  CHECK(a.digest() == b.digest());
  CHECK(b.variant.kind == VariantKind::minus_ctn);
  CHECK(b.variant.ae_width == 3);
  CHECK(b.losses.kd_temperature == 2.5);
  CHECK(b.losses.kernel.mode == KernelConfig::Bandwidth::fixed);
  CHECK(b.losses.kernel.sigma == 1.5);
  CHECK(b.optimizer.lr == 0.02);
  CHECK(b.run.augment_hflip);
  // Pretty and compact forms describe the same config.
  ExperimentConfig c = parse_config_json(a.canonical_json(2));
  CHECK(c.digest() == a.digest());
}

TEST_CASE("unknown keys are rejected with their field path") {
  try {
    parse_config_json(R"({"optimizer":{"lr":0.1,"learning_rate":0.1}})");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    std::string msg = e.what();
    CHECK(msg.find("optimizer.learning_rate") != std::string::npos);
  }
  try {
    parse_config_json(R"({"typo_section":{}})");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("typo_section") != std::string::npos);
  }
}

TEST_CASE("type errors and malformed json are config errors") {
  CHECK_THROWS_AS(parse_config_json(R"({"run":{"seed":"not a number"}})"), ConfigError);
  CHECK_THROWS_AS(parse_config_json(R"({"optimizer":{"epochs":[1,2]}})"), ConfigError);
  CHECK_THROWS_AS(parse_config_json("{nope"), ConfigError);
  CHECK_THROWS_AS(parse_config_json("[1,2,3]"), ConfigError);
}

TEST_CASE("variant accepts either a name or an object") {
  ExperimentConfig s = parse_config_json(R"({"variant":"two_stage"})");
  CHECK(s.variant.kind == VariantKind::two_stage);
  ExperimentConfig o = parse_config_json(R"({"variant":{"name":"minus_jdn"}})");
  CHECK(o.variant.kind == VariantKind::minus_jdn);
  CHECK_THROWS_AS(parse_config_json(R"({"variant":"warp_drive"})"), ConfigError);
  CHECK_THROWS_AS(parse_config_json(R"({"variant":{"name":"full","warp":1}})"), ConfigError);
}

TEST_CASE("validation rejects out-of-range values naming the field") {
  auto reject = [](const std::string& text, const std::string& needle) {
    try {
      ExperimentConfig cfg = parse_config_json(text);  // parsing already validates
      cfg.validate();
      FAIL(("expected ConfigError for " + needle));
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find(needle) != std::string::npos);
    }
  };
  reject(R"({"losses":{"target_ratio":-0.5}})", "target_ratio");
  reject(R"({"losses":{"ema_decay":1.5}})", "ema_decay");
  reject(R"({"losses":{"clip_lo":3.0,"clip_hi":2.0}})", "clip");
  reject(R"({"optimizer":{"epochs":-1}})", "epochs");
  reject(R"({"optimizer":{"momentum":1.5}})", "momentum");
  reject(R"({"run":{"dev_fraction":0.9}})", "dev_fraction");
  reject(R"({"losses":{"kernel":{"bandwidth":"fixed","sigma":0.0}}})", "sigma");
  reject(R"({"optimizer":{"schedule":"cosine"}})", "schedule");
}

TEST_CASE("deployment-only knobs stay out of the digest") {
  ExperimentConfig a = parse_config_json(R"({"run":{"out_root":"/tmp/osmd-a"}})");
  ExperimentConfig b = parse_config_json(R"({"run":{"out_root":"/tmp/osmd-b"}})");
  ExperimentConfig c = parse_config_json(R"({"run":{"parallel_workers":8}})");
  CHECK(a.digest() == b.digest());
  CHECK(a.digest() == c.digest());
  // The knobs themselves still parse.
  CHECK(b.run.out_root == "/tmp/osmd-b");
  CHECK(c.run.parallel_workers == 8);
}

TEST_CASE("environment variable overrides the output root") {
  ExperimentConfig cfg = parse_config_json(R"({"run":{"out_root":"configured"}})");
  unsetenv("OSMD_OUT_ROOT");
  CHECK(resolve_out_root(cfg) == "configured");
  setenv("OSMD_OUT_ROOT", "/tmp/osmd-env", 1);
  CHECK(resolve_out_root(cfg) == "/tmp/osmd-env");
  unsetenv("OSMD_OUT_ROOT");
  CHECK(resolve_out_root(cfg) == "configured");
}

TEST_CASE("config files load and missing files are io errors naming the path") {
  TempDir tmp("cfg");
  {
    std::ofstream out(tmp.file("ok.json"));
    out << R"({"run":{"seed":123}})";
  }
  ExperimentConfig cfg = load_config_file(tmp.file("ok.json"));
  CHECK(cfg.run.seed == 123);
  try {
    load_config_file(tmp.file("absent.json"));
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("absent.json") != std::string::npos);
  }
}

TEST_CASE("model geometry derives from config and dataset") {
  ExperimentConfig cfg = parse_config_json(
      R"({"model":{"widths":[4,6],"finetune_ordinary":true,"warm_start_shared":true},
          "variant":{"name":"minus_ctn_plus_ae","ae_width":5},
          "dataset":{"synth":{"n_classes":3,"dims_o":[2,8,8],"dims_p":[1,8,8],
                              "n_train":12,"n_eval":6}}})");
  PairedDataset ds = generate_synth_dataset(cfg.dataset.synth);
  ModelConfig mc = derive_model_config(cfg, ds);
  CHECK(mc.task == TaskKind::classification);
  CHECK(mc.n_classes == 3);
  CHECK(mc.in_c_ordinary == 2);
  CHECK(mc.in_c_privileged == 1);
  CHECK(mc.widths == std::vector<int>{4, 6});
  CHECK(mc.finetune_ordinary);
  CHECK(mc.warm_start_shared);
  CHECK(mc.ae_width == 5);
  mc.validate();
}

TEST_CASE("synth dataset block round-trips through the canonical form") {
  ExperimentConfig cfg = parse_config_json(
      R"({"dataset":{"synth":{"task":"segmentation","n_classes":4,"ordinary_snr":0.7,
                              "privileged_snr":2.5,"cross_corr":0.3,"n_train":40,
                              "n_eval":20,"seed":77,"label_grid":2}}})");
  ExperimentConfig back = parse_config_json(cfg.canonical_json());
  CHECK(back.dataset.synth.task_kind == TaskKind::segmentation);
  CHECK(back.dataset.synth.n_classes == 4);
  CHECK(back.dataset.synth.ordinary_snr == 0.7);
  CHECK(back.dataset.synth.privileged_snr == 2.5);
  CHECK(back.dataset.synth.cross_corr == 0.3);
  CHECK(back.dataset.synth.seed == 77);
  CHECK(back.dataset.synth.label_grid == 2);
  CHECK(back.digest() == cfg.digest());
}

TEST_CASE("directory dataset block parses") {
  ExperimentConfig cfg = parse_config_json(
      R"({"dataset":{"source":"directory","root":"/data/x","task":"classification",
                     "n_classes":2,"ordinary_subdir":"rgb","privileged_subdir":"depth",
                     "labels_csv":"gt.csv"}})");
  CHECK(cfg.dataset.source == "directory");
  CHECK(cfg.dataset.directory_root == "/data/x");
  CHECK(cfg.dataset.layout.ordinary_subdir == "rgb");
  CHECK(cfg.dataset.layout.privileged_subdir == "depth");
  CHECK(cfg.dataset.layout.labels_csv == "gt.csv");
  CHECK(cfg.dataset.layout.n_classes == 2);
  CHECK_THROWS_AS(parse_config_json(R"({"dataset":{"source":"carrier_pigeon"}})"), ConfigError);
}
