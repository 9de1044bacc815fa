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
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "helpers.hpp"
#include "osmd/config.hpp"
#include "osmd/trainer.hpp"

using namespace osmd;
using osmd_test::TempDir;
namespace fs = std::filesystem;

namespace {

// Tiny experiment: 2 classes, 8x8 images, a handful of samples.
ExperimentConfig tiny_config(const std::string& out_root, const std::string& variant = "full") {
  ExperimentConfig cfg = parse_config_json(R"({
    "dataset": {"synth": {"n_classes": 2, "dims_o": [2,8,8], "dims_p": [1,8,8],
                          "n_train": 24, "n_eval": 12, "seed": 3}},
    "model": {"widths": [4, 6]},
    "optimizer": {"epochs": 2, "batch_size": 8, "pretrain_epochs": 1},
    "run": {"seed": 5, "dev_fraction": 0.25}
  })");
  cfg.run.out_root = out_root;
  cfg.variant.kind = variant_from_string(variant);
  return cfg;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("pretraining snapshots are cached by their inputs") {
  TempDir tmp("pre");
  ExperimentConfig cfg = tiny_config(tmp.path());
  PairedDataset ds = load_dataset(cfg);

  PretrainResult a = pretrain_unimodal(cfg, ds, "privileged");
  CHECK(!a.reused);
  CHECK(fs::exists(a.snapshot_path));
  PretrainResult b = pretrain_unimodal(cfg, ds, "privileged");
  CHECK(b.reused);
  CHECK(b.snapshot_path == a.snapshot_path);
  CHECK(b.train_accuracy == a.train_accuracy);
  CHECK(b.eval_accuracy == a.eval_accuracy);

  // force retrains in place and is bit-identical for a deterministic setup.
  PretrainResult c = pretrain_unimodal(cfg, ds, "privileged", true);
  CHECK(!c.reused);
  CHECK(c.snapshot_path == a.snapshot_path);
  CHECK(c.train_accuracy == a.train_accuracy);

  // A different seed or modality gets its own snapshot file.
  PretrainResult d = pretrain_unimodal(cfg, ds, "ordinary");
  CHECK(d.snapshot_path != a.snapshot_path);
  ExperimentConfig cfg2 = cfg;
  cfg2.run.seed = 6;
  PretrainResult e = pretrain_unimodal(cfg2, ds, "privileged");
  CHECK(e.snapshot_path != a.snapshot_path);

  CHECK_THROWS_AS(pretrain_unimodal(cfg, ds, "sideways"), ConfigError);
}

TEST_CASE("zero-epoch pretraining snapshots the untouched initialization") {
  TempDir tmp("pre0");
  ExperimentConfig cfg = tiny_config(tmp.path());
  cfg.optimizer.pretrain_epochs = 0;
  PairedDataset ds = load_dataset(cfg);
  PretrainResult r = pretrain_unimodal(cfg, ds, "ordinary");

  UnimodalNet fresh(cfg.task(), 2, cfg.model.widths, 2,
                    fnv1a64_str("pretrain.ordinary", cfg.run.seed));
  LoadedSnapshot snap = load_named_tensors(r.snapshot_path);
  for (nn::Parameter* p : fresh.params()) {
    auto it = snap.tensors.find(p->name);
    REQUIRE(it != snap.tensors.end());
    REQUIRE(it->second.size() == p->value.size());
    for (int64_t i = 0; i < p->value.size(); ++i)
      CHECK(it->second.data()[i] == p->value.data()[i]);
  }
}

TEST_CASE("joint training freezes the privileged and ordinary branches") {
  TempDir tmp("freeze");
  ExperimentConfig cfg = tiny_config(tmp.path());
  PairedDataset ds = load_dataset(cfg);
  ModelConfig mc = derive_model_config(cfg, ds);
  ModelGraph graph(mc, cfg.run.seed);
  Recipe recipe = build_variant(cfg.variant);
  JointTrainer trainer(cfg, &graph, recipe);

  uint64_t priv_before = graph.checksum_of({"priv_enc", "head_p"});
  uint64_t ord_before = graph.checksum_of({"ord_enc", "head_o"});
  uint64_t shared_before = graph.checksum_of({"shared_enc"});

  auto batches = make_batches(ds.train_view(), 8, 99);
  int64_t step = 0;
  for (int pass = 0; pass < 10; ++pass)
    for (const auto& b : batches) {
      StepReport rep = trainer.train_step(b, 0.01, ++step, pass);
      CHECK(rep.losses.eta == 1.0);
      CHECK(std::isfinite(rep.losses.l_total));
    }
  CHECK(step >= 30);
  CHECK(graph.checksum_of({"priv_enc", "head_p"}) == priv_before);
  CHECK(graph.checksum_of({"ord_enc", "head_o"}) == ord_before);
  CHECK(graph.checksum_of({"shared_enc"}) != shared_before);  // it does learn
}

TEST_CASE("finetuning the ordinary branch unfreezes exactly that encoder") {
  TempDir tmp("finetune");
  ExperimentConfig cfg = tiny_config(tmp.path());
  cfg.model.finetune_ordinary = true;
  PairedDataset ds = load_dataset(cfg);
  ModelConfig mc = derive_model_config(cfg, ds);
  ModelGraph graph(mc, cfg.run.seed);
  JointTrainer trainer(cfg, &graph, build_variant(cfg.variant));

  uint64_t priv_before = graph.checksum_of({"priv_enc", "head_p"});
  uint64_t ord_before = graph.checksum_of({"ord_enc"});
  auto batches = make_batches(ds.train_view(), 8, 99);
  int64_t step = 0;
  for (const auto& b : batches) trainer.train_step(b, 0.01, ++step, 0);
  CHECK(graph.checksum_of({"priv_enc", "head_p"}) == priv_before);
  CHECK(graph.checksum_of({"ord_enc"}) != ord_before);
}

TEST_CASE("train steps are reproducible across trainer instances") {
  TempDir tmp("repro");
  ExperimentConfig cfg = tiny_config(tmp.path());
  PairedDataset ds = load_dataset(cfg);
  ModelConfig mc = derive_model_config(cfg, ds);
  auto run = [&]() {
    ModelGraph graph(mc, cfg.run.seed);
    JointTrainer trainer(cfg, &graph, build_variant(cfg.variant));
    auto batches = make_batches(ds.train_view(), 8, 4242);
    std::vector<StepReport> reports;
    int64_t step = 0;
    for (const auto& b : batches) reports.push_back(trainer.train_step(b, 0.01, ++step, 0));
    return std::make_pair(reports, graph.checksum_of(ModelGraph::module_tags()));
  };
  auto [r1, sum1] = run();
  auto [r2, sum2] = run();
  CHECK(sum1 == sum2);
  REQUIRE(r1.size() == r2.size());
  for (size_t i = 0; i < r1.size(); ++i) {
    CHECK(r1[i].losses.l_total == r2[i].losses.l_total);
    CHECK(r1[i].losses.alpha == r2[i].losses.alpha);
    CHECK(r1[i].losses.beta == r2[i].losses.beta);
    CHECK(r1[i].dist_marginal == r2[i].dist_marginal);
    CHECK(r1[i].dist_conditional == r2[i].dist_conditional);
    CHECK(r1[i].sigma == r2[i].sigma);
  }
}

TEST_CASE("two-stage recipe trains distillation then the task head") {
  TempDir tmp("stage");
  ExperimentConfig cfg = tiny_config(tmp.path(), "two_stage");
  PairedDataset ds = load_dataset(cfg);
  ModelConfig mc = derive_model_config(cfg, ds);
  ModelGraph graph(mc, cfg.run.seed);
  Recipe recipe = build_variant(cfg.variant);
  JointTrainer trainer(cfg, &graph, recipe);
  auto batches = make_batches(ds.train_view(), 8, 1);

  // Phase 1: response distillation moves the shared encoder, not the heads
  // on the ordinary branch; transfer weights are off (plain distillation).
  trainer.set_phase(1);
  CHECK(trainer.phase() == 1);
  uint64_t shared_before = graph.checksum_of({"shared_enc"});
  uint64_t heado_before = graph.checksum_of({"head_o"});
  int64_t step = 0;
  StepReport rep = trainer.train_step(batches[0], 0.01, ++step, 0);
  CHECK(rep.phase == 1);
  CHECK(rep.losses.alpha == 0.0);
  CHECK(rep.losses.beta == 0.0);
  CHECK(graph.checksum_of({"shared_enc"}) != shared_before);
  CHECK(graph.checksum_of({"head_o"}) == heado_before);

  // Phase 2: only the shared task head moves.
  trainer.set_phase(2);
  shared_before = graph.checksum_of({"shared_enc"});
  uint64_t heads_before = graph.checksum_of({"head_s"});
  rep = trainer.train_step(batches[1], 0.01, ++step, 1);
  CHECK(rep.phase == 2);
  CHECK(graph.checksum_of({"shared_enc"}) == shared_before);
  CHECK(graph.checksum_of({"head_s"}) != heads_before);
}

TEST_CASE("experiments produce a complete run directory") {
  TempDir tmp("run");
  ExperimentConfig cfg = tiny_config(tmp.path());
  RunResult res = run_experiment(cfg);
  CHECK(fs::exists(res.run_dir));
  CHECK(fs::exists(fs::path(res.run_dir) / "config.copy"));
  CHECK(fs::exists(fs::path(res.run_dir) / "metrics.log"));
  CHECK(fs::exists(fs::path(res.run_dir) / "results.summary"));
  CHECK(fs::exists(fs::path(res.run_dir) / "environment.stamp"));
  CHECK(fs::exists(fs::path(res.run_dir) / "snapshots" / "epoch002.snap"));
  CHECK(res.steps == 2 * 3);  // 24 train - 6 dev = 18 samples, batch 8 -> 3
  CHECK(!res.resumed);
  CHECK(!res.already_complete);
  CHECK(res.final_error >= 0.0);
  CHECK(res.final_error <= 1.0);

  // The stored config copy parses back to the same digest.
  ExperimentConfig copy = parse_config_json(slurp((fs::path(res.run_dir) / "config.copy").string()));
  CHECK(copy.digest() == cfg.digest());

  // Re-running the identical config is a no-op.
  RunResult again = run_experiment(cfg);
  CHECK(again.already_complete);
  CHECK(again.run_dir == res.run_dir);
  CHECK(again.final_error == res.final_error);

  // evaluate_run reloads the checkpoint and reproduces the final metrics.
  MetricsRecord ev = evaluate_run(cfg, res.run_dir);
  CHECK(ev.accuracy == doctest::Approx(1.0 - res.final_error).epsilon(1e-12));
}

TEST_CASE("interrupted runs resume to the uninterrupted result") {
  TempDir tmp_a("full-run");
  TempDir tmp_b("split-run");
  ExperimentConfig cfg_a = tiny_config(tmp_a.path());
  cfg_a.optimizer.epochs = 3;
  ExperimentConfig cfg_b = cfg_a;
  cfg_b.run.out_root = tmp_b.path();

  RunResult full = run_experiment(cfg_a);

  RunOptions stop;
  stop.stop_after_epochs = 1;
  RunResult partial = run_experiment(cfg_b, stop);
  CHECK(!fs::exists(fs::path(partial.run_dir) / "results.summary"));
  RunOptions resume;
  resume.resume = true;
  RunResult resumed = run_experiment(cfg_b, resume);
  CHECK(resumed.resumed);

  CHECK(slurp((fs::path(full.run_dir) / "metrics.log").string()) ==
        slurp((fs::path(resumed.run_dir) / "metrics.log").string()));
  CHECK(slurp((fs::path(full.run_dir) / "results.summary").string()) ==
        slurp((fs::path(resumed.run_dir) / "results.summary").string()));
}

TEST_CASE("a collapse of the translated features aborts training") {
  TempDir tmp("collapse");
  ExperimentConfig cfg = tiny_config(tmp.path());
  cfg.losses.collapse_floor = 1e9;  // unreachable mean activation
  try {
    run_experiment(cfg);
    FAIL("expected TrainError");
  } catch (const TrainError& e) {
    CHECK(std::string(e.what()).find("collapse") != std::string::npos);
  }
}

TEST_CASE("mismatched run directories are refused on resume") {
  TempDir tmp("mismatch");
  ExperimentConfig cfg = tiny_config(tmp.path());
  RunOptions stop;
  stop.stop_after_epochs = 1;
  RunResult partial = run_experiment(cfg, stop);

  // Same run directory, different config: the checkpoint's digest disagrees.
  ExperimentConfig other = cfg;
  other.optimizer.lr = 0.123;
  RunOptions resume;
  resume.resume = true;
  resume.run_dir = partial.run_dir;
  CHECK_THROWS_AS(run_experiment(other, resume), ConfigError);
}

TEST_CASE("dev split comes off the tail of the train split") {
  TempDir tmp("dev");
  ExperimentConfig cfg = tiny_config(tmp.path());
  PairedDataset ds = load_dataset(cfg);
  DatasetView train = train_subview(ds, cfg.run.dev_fraction);
  DatasetView dev = dev_subview(ds, cfg.run.dev_fraction);
  CHECK(train.size() == 18);  // 24 - floor(24 * 0.25)
  CHECK(dev.size() == 6);
  CHECK(dev.at(0).instance_id == train.at(train.size() - 1).instance_id + 1);
  DatasetView none = dev_subview(ds, 0.0);
  CHECK(none.size() == 0);
}

TEST_CASE("every ablation variant completes a one-epoch run") {
  TempDir tmp("variants");
  for (VariantKind kind : all_variants()) {
    ExperimentConfig cfg = tiny_config(tmp.path(), variant_name(kind));
    cfg.optimizer.epochs = 1;
    RunResult res = run_experiment(cfg);
    CHECK(fs::exists(fs::path(res.run_dir) / "results.summary"));
    CHECK(res.final_error >= 0.0);
    CHECK(res.final_error <= 1.0);
  }
}
