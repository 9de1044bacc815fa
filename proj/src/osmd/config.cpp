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
#include "osmd/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

using nlohmann::json;

namespace osmd {

TaskKind ExperimentConfig::task() const {
  return dataset.source == "synth" ? dataset.synth.task_kind : dataset.layout.task;
}

double ExperimentConfig::effective_lr() const {
  if (optimizer.lr > 0.0) return optimizer.lr;
  return task() == TaskKind::classification ? 0.001 : 0.01;
}

int ExperimentConfig::effective_batch_size() const {
  if (optimizer.batch_size > 0) return optimizer.batch_size;
  return task() == TaskKind::classification ? 64 : 8;
}

std::string ExperimentConfig::effective_schedule() const {
  if (!optimizer.schedule.empty()) return optimizer.schedule;
  return task() == TaskKind::classification ? "constant" : "one_cycle";
}

double ExperimentConfig::effective_pretrain_lr() const {
  return optimizer.pretrain_lr > 0.0 ? optimizer.pretrain_lr : effective_lr();
}

void ExperimentConfig::validate() const {
  if (schema_version != 1)
    throw ConfigError("config: schema_version must be 1, got " + std::to_string(schema_version));
  if (dataset.source != "synth" && dataset.source != "directory")
    throw ConfigError("config: dataset.source must be 'synth' or 'directory'");
  if (dataset.source == "synth") {
    dataset.synth.validate();
  } else {
    if (dataset.directory_root.empty())
      throw ConfigError("config: dataset.root is required for directory datasets");
    if (dataset.layout.n_classes < 0)
      throw ConfigError("config: dataset.n_classes must be non-negative");
  }
  if (model.widths.empty()) throw ConfigError("config: model.widths must not be empty");
  for (int w : model.widths)
    if (w < 1) throw ConfigError("config: model.widths entries must be positive");
  if (losses.kernel.sigma <= 0.0) throw ConfigError("config: losses.kernel.sigma must be positive");
  if (losses.kernel.sigma_floor <= 0.0)
    throw ConfigError("config: losses.kernel.sigma_floor must be positive");
  if (losses.kd_temperature <= 0.0)
    throw ConfigError("config: losses.kd_temperature must be positive");
  if (losses.target_ratio <= 0.0) throw ConfigError("config: losses.target_ratio must be positive");
  if (losses.ema_decay < 0.0 || losses.ema_decay >= 1.0)
    throw ConfigError("config: losses.ema_decay must lie in [0, 1)");
  if (losses.clip_lo <= 0.0 || losses.clip_hi < losses.clip_lo)
    throw ConfigError("config: losses.clip_lo/clip_hi must satisfy 0 < lo <= hi");
  if (losses.kl_position_cap < 1)
    throw ConfigError("config: losses.kl_position_cap must be positive");
  if (losses.collapse_floor < 0.0)
    throw ConfigError("config: losses.collapse_floor must be non-negative");
  if (variant.ae_width < 0) throw ConfigError("config: variant.ae_width must be non-negative");
  if (optimizer.lr < 0.0) throw ConfigError("config: optimizer.lr must be non-negative");
  if (optimizer.momentum < 0.0 || optimizer.momentum >= 1.0)
    throw ConfigError("config: optimizer.momentum must lie in [0, 1)");
  if (optimizer.batch_size < 0)
    throw ConfigError("config: optimizer.batch_size must be non-negative");
  if (optimizer.epochs < 0) throw ConfigError("config: optimizer.epochs must be non-negative");
  if (!optimizer.schedule.empty() && optimizer.schedule != "constant" &&
      optimizer.schedule != "one_cycle")
    throw ConfigError("config: optimizer.schedule must be 'constant' or 'one_cycle'");
  if (optimizer.pretrain_lr < 0.0)
    throw ConfigError("config: optimizer.pretrain_lr must be non-negative");
  if (optimizer.pretrain_epochs < 0)
    throw ConfigError("config: optimizer.pretrain_epochs must be non-negative");
  if (run.eval_every < 1) throw ConfigError("config: run.eval_every must be positive");
  if (run.checkpoint_every < 1) throw ConfigError("config: run.checkpoint_every must be positive");
  if (run.out_root.empty()) throw ConfigError("config: run.out_root must not be empty");
  if (run.dev_fraction < 0.0 || run.dev_fraction > 0.5)
    throw ConfigError("config: run.dev_fraction must lie in [0, 0.5]");
  if (run.parallel_workers < 1)
    throw ConfigError("config: run.parallel_workers must be positive");
  if (run.ablate_seeds.empty()) throw ConfigError("config: run.ablate_seeds must not be empty");
}

namespace {

void check_keys(const json& obj, const std::string& path, const std::set<std::string>& allowed) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!allowed.count(it.key()))
      throw ConfigError("config: unknown key '" + (path.empty() ? it.key() : path + "." + it.key()) +
                        "'");
  }
}

const json* find(const json& obj, const std::string& key) {
  auto it = obj.find(key);
  return it == obj.end() ? nullptr : &*it;
}

void get_bool(const json& obj, const std::string& path, const std::string& key, bool& dst) {
  if (const json* v = find(obj, key)) {
    if (!v->is_boolean()) throw ConfigError("config: " + path + key + " must be a boolean");
    dst = v->get<bool>();
  }
}

void get_int(const json& obj, const std::string& path, const std::string& key, int& dst) {
  if (const json* v = find(obj, key)) {
    if (!v->is_number_integer()) throw ConfigError("config: " + path + key + " must be an integer");
    dst = v->get<int>();
  }
}

void get_u64(const json& obj, const std::string& path, const std::string& key, uint64_t& dst) {
  if (const json* v = find(obj, key)) {
    if (!v->is_number_integer() || (v->is_number_integer() && !v->is_number_unsigned() &&
                                    v->get<int64_t>() < 0))
      throw ConfigError("config: " + path + key + " must be a non-negative integer");
    dst = v->get<uint64_t>();
  }
}

void get_double(const json& obj, const std::string& path, const std::string& key, double& dst) {
  if (const json* v = find(obj, key)) {
    if (!v->is_number()) throw ConfigError("config: " + path + key + " must be a number");
    dst = v->get<double>();
  }
}

void get_string(const json& obj, const std::string& path, const std::string& key,
                std::string& dst) {
  if (const json* v = find(obj, key)) {
    if (!v->is_string()) throw ConfigError("config: " + path + key + " must be a string");
    dst = v->get<std::string>();
  }
}

void get_int_array(const json& obj, const std::string& path, const std::string& key,
                   std::vector<int>& dst) {
  if (const json* v = find(obj, key)) {
    if (!v->is_array()) throw ConfigError("config: " + path + key + " must be an array");
    dst.clear();
    for (const auto& e : *v) {
      if (!e.is_number_integer())
        throw ConfigError("config: " + path + key + " entries must be integers");
      dst.push_back(e.get<int>());
    }
  }
}

void get_u64_array(const json& obj, const std::string& path, const std::string& key,
                   std::vector<uint64_t>& dst) {
  if (const json* v = find(obj, key)) {
    if (!v->is_array()) throw ConfigError("config: " + path + key + " must be an array");
    dst.clear();
    for (const auto& e : *v) {
      if (!e.is_number_integer())
        throw ConfigError("config: " + path + key + " entries must be integers");
      dst.push_back(e.get<uint64_t>());
    }
  }
}

void parse_synth(const json& obj, SynthSpec& s) {
  check_keys(obj, "dataset.synth",
             {"task", "n_classes", "dims_o", "dims_p", "ordinary_snr", "privileged_snr",
              "cross_corr", "n_train", "n_eval", "seed", "latent_dim", "pixel_noise",
              "label_grid"});
  std::string task = task_name(s.task_kind);
  get_string(obj, "dataset.synth.", "task", task);
  s.task_kind = task_from_string(task);
  get_int(obj, "dataset.synth.", "n_classes", s.n_classes);
  get_int_array(obj, "dataset.synth.", "dims_o", s.dims_o);
  get_int_array(obj, "dataset.synth.", "dims_p", s.dims_p);
  get_double(obj, "dataset.synth.", "ordinary_snr", s.ordinary_snr);
  get_double(obj, "dataset.synth.", "privileged_snr", s.privileged_snr);
  get_double(obj, "dataset.synth.", "cross_corr", s.cross_corr);
  get_int(obj, "dataset.synth.", "n_train", s.n_train);
  get_int(obj, "dataset.synth.", "n_eval", s.n_eval);
  get_u64(obj, "dataset.synth.", "seed", s.seed);
  get_int(obj, "dataset.synth.", "latent_dim", s.latent_dim);
  get_double(obj, "dataset.synth.", "pixel_noise", s.pixel_noise);
  get_int(obj, "dataset.synth.", "label_grid", s.label_grid);
}

void parse_dataset(const json& obj, DatasetConfig& d) {
  check_keys(obj, "dataset",
             {"source", "synth", "root", "ordinary_subdir", "privileged_subdir", "labels_csv",
              "label_subdir", "n_classes", "task"});
  get_string(obj, "dataset.", "source", d.source);
  if (const json* v = find(obj, "synth")) {
    if (!v->is_object()) throw ConfigError("config: dataset.synth must be an object");
    parse_synth(*v, d.synth);
  }
  get_string(obj, "dataset.", "root", d.directory_root);
  get_string(obj, "dataset.", "ordinary_subdir", d.layout.ordinary_subdir);
  get_string(obj, "dataset.", "privileged_subdir", d.layout.privileged_subdir);
  get_string(obj, "dataset.", "labels_csv", d.layout.labels_csv);
  get_string(obj, "dataset.", "label_subdir", d.layout.label_subdir);
  get_int(obj, "dataset.", "n_classes", d.layout.n_classes);
  std::string task = task_name(d.layout.task);
  get_string(obj, "dataset.", "task", task);
  d.layout.task = task_from_string(task);
}

void parse_model(const json& obj, ModelBlock& m) {
  check_keys(obj, "model", {"widths", "finetune_ordinary", "warm_start_shared"});
  get_int_array(obj, "model.", "widths", m.widths);
  get_bool(obj, "model.", "finetune_ordinary", m.finetune_ordinary);
  get_bool(obj, "model.", "warm_start_shared", m.warm_start_shared);
}

void parse_losses(const json& obj, LossesConfig& l) {
  check_keys(obj, "losses",
             {"kernel", "kd_temperature", "target_ratio", "ema_decay", "clip_lo", "clip_hi",
              "kl_position_cap", "collapse_floor"});
  if (const json* v = find(obj, "kernel")) {
    if (!v->is_object()) throw ConfigError("config: losses.kernel must be an object");
    check_keys(*v, "losses.kernel", {"bandwidth", "sigma", "sigma_floor"});
    std::string bw = l.kernel.mode == KernelConfig::Bandwidth::median ? "median" : "fixed";
    get_string(*v, "losses.kernel.", "bandwidth", bw);
    if (bw == "median")
      l.kernel.mode = KernelConfig::Bandwidth::median;
    else if (bw == "fixed")
      l.kernel.mode = KernelConfig::Bandwidth::fixed;
    else
      throw ConfigError("config: losses.kernel.bandwidth must be 'median' or 'fixed'");
    get_double(*v, "losses.kernel.", "sigma", l.kernel.sigma);
    get_double(*v, "losses.kernel.", "sigma_floor", l.kernel.sigma_floor);
  }
  get_double(obj, "losses.", "kd_temperature", l.kd_temperature);
  get_double(obj, "losses.", "target_ratio", l.target_ratio);
  get_double(obj, "losses.", "ema_decay", l.ema_decay);
  get_double(obj, "losses.", "clip_lo", l.clip_lo);
  get_double(obj, "losses.", "clip_hi", l.clip_hi);
  get_int(obj, "losses.", "kl_position_cap", l.kl_position_cap);
  get_double(obj, "losses.", "collapse_floor", l.collapse_floor);
}

void parse_variant(const json& v, VariantSpec& spec) {
  if (v.is_string()) {
    spec.kind = variant_from_string(v.get<std::string>());
    return;
  }
  if (!v.is_object()) throw ConfigError("config: variant must be a string or an object");
  check_keys(v, "variant", {"name", "ae_width"});
  std::string name = variant_name(spec.kind);
  get_string(v, "variant.", "name", name);
  spec.kind = variant_from_string(name);
  get_int(v, "variant.", "ae_width", spec.ae_width);
}

void parse_optimizer(const json& obj, OptimizerConfig& o) {
  check_keys(obj, "optimizer",
             {"lr", "momentum", "batch_size", "epochs", "schedule", "pretrain_lr",
              "pretrain_epochs"});
  get_double(obj, "optimizer.", "lr", o.lr);
  get_double(obj, "optimizer.", "momentum", o.momentum);
  get_int(obj, "optimizer.", "batch_size", o.batch_size);
  get_int(obj, "optimizer.", "epochs", o.epochs);
  get_string(obj, "optimizer.", "schedule", o.schedule);
  get_double(obj, "optimizer.", "pretrain_lr", o.pretrain_lr);
  get_int(obj, "optimizer.", "pretrain_epochs", o.pretrain_epochs);
}

void parse_run(const json& obj, RunConfig& r) {
  check_keys(obj, "run",
             {"seed", "eval_every", "checkpoint_every", "out_root", "deterministic",
              "dev_fraction", "parallel_workers", "ablate_seeds", "augment_hflip"});
  get_u64(obj, "run.", "seed", r.seed);
  get_int(obj, "run.", "eval_every", r.eval_every);
  get_int(obj, "run.", "checkpoint_every", r.checkpoint_every);
  get_string(obj, "run.", "out_root", r.out_root);
  get_bool(obj, "run.", "deterministic", r.deterministic);
  get_double(obj, "run.", "dev_fraction", r.dev_fraction);
  get_int(obj, "run.", "parallel_workers", r.parallel_workers);
  get_u64_array(obj, "run.", "ablate_seeds", r.ablate_seeds);
  get_bool(obj, "run.", "augment_hflip", r.augment_hflip);
}

}  // namespace

ExperimentConfig parse_config_json(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  if (!root.is_object()) throw ConfigError("config: top level must be an object");
  check_keys(root, "", {"schema_version", "dataset", "model", "losses", "variant", "optimizer",
                        "run"});
  ExperimentConfig cfg;
  get_int(root, "", "schema_version", cfg.schema_version);
  if (const json* v = find(root, "dataset")) {
    if (!v->is_object()) throw ConfigError("config: dataset must be an object");
    parse_dataset(*v, cfg.dataset);
  }
  if (const json* v = find(root, "model")) {
    if (!v->is_object()) throw ConfigError("config: model must be an object");
    parse_model(*v, cfg.model);
  }
  if (const json* v = find(root, "losses")) {
    if (!v->is_object()) throw ConfigError("config: losses must be an object");
    parse_losses(*v, cfg.losses);
  }
  if (const json* v = find(root, "variant")) parse_variant(*v, cfg.variant);
  if (const json* v = find(root, "optimizer")) {
    if (!v->is_object()) throw ConfigError("config: optimizer must be an object");
    parse_optimizer(*v, cfg.optimizer);
  }
  if (const json* v = find(root, "run")) {
    if (!v->is_object()) throw ConfigError("config: run must be an object");
    parse_run(*v, cfg.run);
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_json(ss.str());
}

std::string ExperimentConfig::canonical_json(int indent) const {
  json root;
  root["schema_version"] = schema_version;
  json d;
  d["source"] = dataset.source;
  if (dataset.source == "synth") {
    json s;
    s["task"] = task_name(dataset.synth.task_kind);
    s["n_classes"] = dataset.synth.n_classes;
    s["dims_o"] = dataset.synth.dims_o;
    s["dims_p"] = dataset.synth.dims_p;
    s["ordinary_snr"] = dataset.synth.ordinary_snr;
    s["privileged_snr"] = dataset.synth.privileged_snr;
    s["cross_corr"] = dataset.synth.cross_corr;
    s["n_train"] = dataset.synth.n_train;
    s["n_eval"] = dataset.synth.n_eval;
    s["seed"] = dataset.synth.seed;
    s["latent_dim"] = dataset.synth.latent_dim;
    s["pixel_noise"] = dataset.synth.pixel_noise;
    s["label_grid"] = dataset.synth.label_grid;
    d["synth"] = s;
  } else {
    d["root"] = dataset.directory_root;
    d["ordinary_subdir"] = dataset.layout.ordinary_subdir;
    d["privileged_subdir"] = dataset.layout.privileged_subdir;
    d["labels_csv"] = dataset.layout.labels_csv;
    d["label_subdir"] = dataset.layout.label_subdir;
    d["n_classes"] = dataset.layout.n_classes;
    d["task"] = task_name(dataset.layout.task);
  }
  root["dataset"] = d;
  json m;
  m["widths"] = model.widths;
  m["finetune_ordinary"] = model.finetune_ordinary;
  m["warm_start_shared"] = model.warm_start_shared;
  root["model"] = m;
  json l;
  l["kernel"] = {
      {"bandwidth", losses.kernel.mode == KernelConfig::Bandwidth::median ? "median" : "fixed"},
      {"sigma", losses.kernel.sigma},
      {"sigma_floor", losses.kernel.sigma_floor}};
  l["kd_temperature"] = losses.kd_temperature;
  l["target_ratio"] = losses.target_ratio;
  l["ema_decay"] = losses.ema_decay;
  l["clip_lo"] = losses.clip_lo;
  l["clip_hi"] = losses.clip_hi;
  l["kl_position_cap"] = losses.kl_position_cap;
  l["collapse_floor"] = losses.collapse_floor;
  root["losses"] = l;
  root["variant"] = {{"name", variant_name(variant.kind)}, {"ae_width", variant.ae_width}};
  json o;
  o["lr"] = optimizer.lr;
  o["momentum"] = optimizer.momentum;
  o["batch_size"] = optimizer.batch_size;
  o["epochs"] = optimizer.epochs;
  o["schedule"] = optimizer.schedule;
  o["pretrain_lr"] = optimizer.pretrain_lr;
  o["pretrain_epochs"] = optimizer.pretrain_epochs;
  root["optimizer"] = o;
  json r;
  r["seed"] = run.seed;
  r["eval_every"] = run.eval_every;
  r["checkpoint_every"] = run.checkpoint_every;
  r["out_root"] = run.out_root;
  r["deterministic"] = run.deterministic;
  r["dev_fraction"] = run.dev_fraction;
  r["parallel_workers"] = run.parallel_workers;
  r["ablate_seeds"] = run.ablate_seeds;
  r["augment_hflip"] = run.augment_hflip;
  root["run"] = r;
  return indent >= 0 ? root.dump(indent) : root.dump();
}

std::string ExperimentConfig::digest() const {
  // Deployment-only knobs (where artifacts land, how many worker threads) do
  // not change any computed value, so they do not change the run's identity.
  ExperimentConfig normalized = *this;
  normalized.run.out_root = "";
  normalized.run.parallel_workers = 1;
  return to_hex(fnv1a64_str(normalized.canonical_json()));
}

std::string resolve_out_root(const ExperimentConfig& cfg) {
  if (const char* env = std::getenv("OSMD_OUT_ROOT"); env && *env) return env;
  return cfg.run.out_root;
}

ModelConfig derive_model_config(const ExperimentConfig& cfg, const PairedDataset& ds) {
  if (ds.samples.empty()) throw DataError("derive_model_config: dataset is empty");
  ModelConfig m;
  m.task = ds.task;
  m.n_classes = ds.n_classes;
  m.in_c_ordinary = static_cast<int>(ds.samples[0].x_o.dim(0));
  m.in_c_privileged = static_cast<int>(ds.samples[0].x_p.dim(0));
  m.widths = cfg.model.widths;
  m.finetune_ordinary = cfg.model.finetune_ordinary;
  m.warm_start_shared = cfg.model.warm_start_shared;
  m.ae_width = cfg.variant.ae_width;
  m.validate();
  return m;
}

}  // namespace osmd
