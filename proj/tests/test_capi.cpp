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
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"
#include "helpers.hpp"
#include "osmd.h"

using osmd_test::TempDir;
namespace fs = std::filesystem;

namespace {

const char* kTinyConfig = R"({
  "dataset": {"synth": {"n_classes": 2, "dims_o": [2,8,8], "dims_p": [1,8,8],
                        "n_train": 16, "n_eval": 8, "seed": 21}},
  "model": {"widths": [4]},
  "optimizer": {"epochs": 1, "batch_size": 8, "pretrain_epochs": 1},
  "run": {"seed": 2, "dev_fraction": 0.25, "ablate_seeds": [1, 2]}
})";

struct ConfigHandle {
  osmd_config* cfg = nullptr;
  ~ConfigHandle() { osmd_config_free(cfg); }
};

}  // namespace

TEST_CASE("version and error reporting basics") {
  REQUIRE(osmd_version() != nullptr);
  CHECK(std::string(osmd_version()) == "1.0.0");
  // After a successful call the last error is the empty string.
  ConfigHandle h;
  REQUIRE(osmd_config_parse(kTinyConfig, &h.cfg) == OSMD_OK);
  CHECK(std::string(osmd_last_error()).empty());
}

TEST_CASE("config parsing reports failures through status and last_error") {
  osmd_config* cfg = nullptr;
  CHECK(osmd_config_parse("{broken", &cfg) == OSMD_ERR_CONFIG);
  CHECK(cfg == nullptr);
  CHECK(std::string(osmd_last_error()).find("JSON") != std::string::npos);

  CHECK(osmd_config_parse(R"({"mystery_block":{}})", &cfg) == OSMD_ERR_CONFIG);
  CHECK(std::string(osmd_last_error()).find("mystery_block") != std::string::npos);

  CHECK(osmd_config_parse(nullptr, &cfg) == OSMD_ERR_INVALID);
  CHECK(osmd_config_parse(kTinyConfig, nullptr) == OSMD_ERR_INVALID);
}

TEST_CASE("config accessors mutate and fingerprint the handle") {
  ConfigHandle h;
  REQUIRE(osmd_config_parse(kTinyConfig, &h.cfg) == OSMD_OK);

  char digest_a[64], digest_b[64];
  REQUIRE(osmd_config_digest(h.cfg, digest_a, sizeof(digest_a)) == OSMD_OK);
  CHECK(std::strlen(digest_a) == 16);  // 64-bit hex fingerprint

  REQUIRE(osmd_config_set_seed(h.cfg, 77) == OSMD_OK);
  REQUIRE(osmd_config_digest(h.cfg, digest_b, sizeof(digest_b)) == OSMD_OK);
  CHECK(std::string(digest_a) != digest_b);

  // The variant changes the digest too; a bogus name is a config error.
  REQUIRE(osmd_config_set_variant(h.cfg, "minus_jdn") == OSMD_OK);
  char digest_c[64];
  REQUIRE(osmd_config_digest(h.cfg, digest_c, sizeof(digest_c)) == OSMD_OK);
  CHECK(std::string(digest_b) != digest_c);
  CHECK(osmd_config_set_variant(h.cfg, "hyperspace") == OSMD_ERR_CONFIG);

  // The output root does not affect the fingerprint.
  REQUIRE(osmd_config_set_out_root(h.cfg, "/tmp/osmd-elsewhere") == OSMD_OK);
  char digest_d[64];
  REQUIRE(osmd_config_digest(h.cfg, digest_d, sizeof(digest_d)) == OSMD_OK);
  CHECK(std::string(digest_c) == digest_d);

  CHECK(osmd_config_digest(h.cfg, nullptr, 0) == OSMD_ERR_INVALID);
  CHECK(osmd_config_set_variant(nullptr, "full") == OSMD_ERR_INVALID);
}

TEST_CASE("config files load through the api") {
  TempDir tmp("capi-cfg");
  {
    std::ofstream out(tmp.file("c.json"));
    out << kTinyConfig;
  }
  ConfigHandle h;
  REQUIRE(osmd_config_load(tmp.file("c.json").c_str(), &h.cfg) == OSMD_OK);
  osmd_config* bad = nullptr;
  CHECK(osmd_config_load(tmp.file("absent.json").c_str(), &bad) == OSMD_ERR_CONFIG);
  CHECK(std::string(osmd_last_error()).find("absent.json") != std::string::npos);
}

TEST_CASE("math probes reproduce the frozen oracle values") {
  // Gaussian kernel: exp(-4).
  double k = 0.0;
  const double u[2] = {0.0, 0.0};
  const double v[2] = {2.0, 0.0};
  REQUIRE(osmd_gaussian_kernel(u, v, 2, 1.0, &k) == OSMD_OK);
  CHECK(k == doctest::Approx(std::exp(-4.0)).epsilon(1e-12));
  CHECK(osmd_gaussian_kernel(u, v, 2, 0.0, &k) == OSMD_ERR_CONFIG);

  // Marginal distance, single pair at squared distance 4, fixed sigma 1.
  double value = 0.0, sigma_out = 0.0;
  const double rep_s[1] = {0.0};
  const double rep_p[1] = {2.0};
  REQUIRE(osmd_mmd_marginal(rep_s, rep_p, 1, 1, 0, 1.0, &value, &sigma_out) == OSMD_OK);
  CHECK(value == doctest::Approx(1.9633687222225316).epsilon(1e-12));
  CHECK(sigma_out == 1.0);

  // Median mode on the same input: pooled squared distance median is 4.
  REQUIRE(osmd_mmd_marginal(rep_s, rep_p, 1, 1, 1, 0.0, &value, &sigma_out) == OSMD_OK);
  CHECK(sigma_out == 4.0);

  // Conditional transfer distance between (ln 2, 0) and (0, 0).
  const double logits_p[2] = {std::log(2.0), 0.0};
  const double logits_s[2] = {0.0, 0.0};
  double kl = 0.0;
  REQUIRE(osmd_conditional_kl(logits_p, logits_s, 1, 2, &kl) == OSMD_OK);
  CHECK(kl == doctest::Approx(0.05663301226513246).epsilon(1e-12));

  CHECK(osmd_mmd_marginal(nullptr, rep_p, 1, 1, 0, 1.0, &value, &sigma_out) == OSMD_ERR_INVALID);
  CHECK(osmd_conditional_kl(logits_p, logits_s, 1, 1, &kl) == OSMD_ERR_CONFIG);
}

TEST_CASE("pretrain, train, evaluate, and plot round-trip through the api") {
  TempDir tmp("capi-run");
  ConfigHandle h;
  REQUIRE(osmd_config_parse(kTinyConfig, &h.cfg) == OSMD_OK);
  REQUIRE(osmd_config_set_out_root(h.cfg, tmp.path().c_str()) == OSMD_OK);

  char snap[512];
  REQUIRE(osmd_pretrain(h.cfg, "privileged", 0, snap, sizeof(snap)) == OSMD_OK);
  CHECK(fs::exists(snap));
  CHECK(osmd_pretrain(h.cfg, "diagonal", 0, snap, sizeof(snap)) == OSMD_ERR_CONFIG);

  char run_dir[512];
  osmd_run_stats stats;
  REQUIRE(osmd_train(h.cfg, 0, 0, run_dir, sizeof(run_dir), &stats) == OSMD_OK);
  CHECK(fs::exists(fs::path(run_dir) / "results.summary"));
  CHECK(stats.final_error >= 0.0);
  CHECK(stats.final_error <= 1.0);
  CHECK(stats.final_accuracy == doctest::Approx(1.0 - stats.final_error).epsilon(1e-12));
  CHECK(stats.steps == 2);
  CHECK(stats.already_complete == 0);

  // A second identical run short-circuits.
  osmd_run_stats stats2;
  REQUIRE(osmd_train(h.cfg, 0, 0, run_dir, sizeof(run_dir), &stats2) == OSMD_OK);
  CHECK(stats2.already_complete == 1);
  CHECK(stats2.final_error == stats.final_error);

  // Evaluation returns a JSON document with the headline metrics.
  char metrics[2048];
  REQUIRE(osmd_evaluate_run(h.cfg, run_dir, metrics, sizeof(metrics)) == OSMD_OK);
  std::string mj(metrics);
  CHECK(mj.find("\"accuracy\"") != std::string::npos);
  REQUIRE(osmd_evaluate_run(h.cfg, nullptr, metrics, sizeof(metrics)) == OSMD_OK);

  // Plotting writes SVGs under the run directory.
  char written[2048];
  REQUIRE(osmd_plot(h.cfg, written, sizeof(written)) == OSMD_OK);
  std::string paths(written);
  CHECK(paths.find("losses.svg") != std::string::npos);
  size_t start = 0;
  while (start < paths.size()) {
    size_t nl = paths.find('\n', start);
    std::string p = paths.substr(start, nl == std::string::npos ? std::string::npos : nl - start);
    if (!p.empty()) CHECK(fs::exists(p));
    if (nl == std::string::npos) break;
    start = nl + 1;
  }

  CHECK(osmd_train(nullptr, 0, 0, run_dir, sizeof(run_dir), &stats) == OSMD_ERR_INVALID);
  CHECK(osmd_evaluate_run(h.cfg, "/nonexistent/osmd-run", metrics, sizeof(metrics)) !=
        OSMD_OK);
}

TEST_CASE("training failures surface as train errors with detail") {
  TempDir tmp("capi-fail");
  // An unreachable floor for the translated-feature activity monitor makes
  // the very first epoch abort.
  const char* doomed = R"({
    "dataset": {"synth": {"n_classes": 2, "dims_o": [2,8,8], "dims_p": [1,8,8],
                          "n_train": 16, "n_eval": 8, "seed": 21}},
    "model": {"widths": [4]},
    "losses": {"collapse_floor": 1e9},
    "optimizer": {"epochs": 1, "batch_size": 8, "pretrain_epochs": 1},
    "run": {"seed": 2, "dev_fraction": 0.25}
  })";
  ConfigHandle h;
  REQUIRE(osmd_config_parse(doomed, &h.cfg) == OSMD_OK);
  REQUIRE(osmd_config_set_out_root(h.cfg, tmp.path().c_str()) == OSMD_OK);
  char run_dir[512];
  osmd_run_stats stats;
  CHECK(osmd_train(h.cfg, 0, 0, run_dir, sizeof(run_dir), &stats) == OSMD_ERR_TRAIN);
  CHECK(std::string(osmd_last_error()).find("collapse") != std::string::npos);
}
