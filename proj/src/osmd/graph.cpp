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
#include "osmd/graph.hpp"

#include <cstring>
#include <fstream>

#include "json.hpp"

using nlohmann::json;

namespace osmd {

void ModelConfig::validate() const {
  if (n_classes < 2) throw ConfigError("model: n_classes must be >= 2");
  if (in_c_ordinary < 1 || in_c_privileged < 1)
    throw ConfigError("model: modality channel counts must be positive");
  if (widths.empty()) throw ConfigError("model: encoder needs at least one stage");
  for (int w : widths)
    if (w < 1) throw ConfigError("model: encoder widths must be positive");
  if (ae_width < 0) throw ConfigError("model: ae_width must be non-negative");
}

// ===== snapshot container =====

namespace {
constexpr char kSnapMagic[] = "OSMDSNAP1\n";
}

void save_named_tensors(const std::string& path, const SnapshotMeta& meta,
                        const std::vector<std::pair<std::string, const Tensor*>>& tensors) {
  std::string payload;
  json names = json::array();
  for (const auto& [name, t] : tensors) {
    names.push_back({{"name", name}, {"shape", t->shape()}});
    payload.append(reinterpret_cast<const char*>(t->data()),
                   static_cast<size_t>(t->size()) * sizeof(double));
  }
  json header;
  header["schema_version"] = meta.schema_version;
  header["kind"] = meta.kind;
  header["config_digest"] = meta.config_digest;
  header["step"] = meta.step;
  header["metrics"] = meta.metrics;
  header["tensors"] = names;
  header["checksum"] = to_hex(fnv1a64(payload.data(), payload.size()));
  std::string htext = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write snapshot '" + path + "'");
  out.write(kSnapMagic, sizeof(kSnapMagic) - 1);
  uint32_t hlen = static_cast<uint32_t>(htext.size());
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw IoError("failed writing snapshot '" + path + "'");
}

LoadedSnapshot load_named_tensors(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open snapshot '" + path + "'");
  char magic[sizeof(kSnapMagic) - 1];
  in.read(magic, sizeof(magic));
  if (in.gcount() != sizeof(magic) ||
      std::string(magic, sizeof(magic)) != std::string(kSnapMagic, sizeof(magic)))
    throw IoError("'" + path + "' is not a snapshot file");
  uint32_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string htext(hlen, '\0');
  in.read(htext.data(), hlen);
  if (in.gcount() != static_cast<std::streamsize>(hlen))
    throw IoError("'" + path + "': truncated snapshot header");
  json header;
  try {
    header = json::parse(htext);
  } catch (const json::exception& e) {
    throw IoError("'" + path + "': bad snapshot header: " + e.what());
  }
  std::string payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::string want = header.at("checksum").get<std::string>();
  if (want != to_hex(fnv1a64(payload.data(), payload.size())))
    throw IoError("'" + path + "': snapshot payload checksum mismatch");

  LoadedSnapshot snap;
  snap.meta.schema_version = header.at("schema_version").get<int>();
  snap.meta.kind = header.at("kind").get<std::string>();
  snap.meta.config_digest = header.value("config_digest", "");
  snap.meta.step = header.value("step", static_cast<int64_t>(0));
  if (header.contains("metrics"))
    snap.meta.metrics = header.at("metrics").get<std::map<std::string, double>>();
  size_t off = 0;
  for (const auto& entry : header.at("tensors")) {
    std::string name = entry.at("name").get<std::string>();
    std::vector<int64_t> shape = entry.at("shape").get<std::vector<int64_t>>();
    Tensor t(shape);
    size_t bytes = static_cast<size_t>(t.size()) * sizeof(double);
    if (off + bytes > payload.size()) throw IoError("'" + path + "': truncated snapshot payload");
    std::memcpy(t.data(), payload.data() + off, bytes);
    off += bytes;
    snap.tensors.emplace(std::move(name), std::move(t));
  }
  if (off != payload.size()) throw IoError("'" + path + "': trailing bytes in snapshot payload");
  return snap;
}

// ===== ModelGraph =====

ModelGraph::ModelGraph(const ModelConfig& config, uint64_t init_seed) : cfg(config) {
  cfg.validate();
  int c = cfg.rep_channels();
  auto stream = [&](const char* tag) { return Rng::stream(init_seed, std::string("init.") + tag); };
  nn::HeadKind hk = cfg.task == TaskKind::classification ? nn::HeadKind::pooled : nn::HeadKind::dense;

  {
    Rng r = stream("shared_enc");
    shared_enc = nn::Encoder(cfg.in_c_ordinary, cfg.widths, "shared_enc", r);
  }
  {
    Rng r = stream("priv_enc");
    priv_enc = nn::Encoder(cfg.in_c_privileged, cfg.widths, "priv_enc", r);
  }
  {
    Rng r = stream("ord_enc");
    ord_enc = nn::Encoder(cfg.in_c_ordinary, cfg.widths, "ord_enc", r);
  }
  int ups = shared_enc.downsample_factor();
  {
    Rng r = stream("head_s");
    head_s = nn::Head(hk, c, cfg.n_classes, ups, "head_s", r);
  }
  {
    Rng r = stream("head_p");
    head_p = nn::Head(hk, c, cfg.n_classes, ups, "head_p", r);
  }
  {
    Rng r = stream("head_o");
    head_o = nn::Head(hk, c, cfg.n_classes, ups, "head_o", r);
  }
  {
    Rng r = stream("t1");
    t1 = nn::ConvBlock(c, c, 3, 1, 1, "t1", r);
  }
  {
    Rng r = stream("t2");
    t2 = nn::ConvBlock(c, c, 3, 1, 1, "t2", r);
  }
  {
    Rng r = stream("fusion");
    fusion = nn::Conv2d(4 * c, c, 1, 1, 0, "fusion", r);
  }
  {
    Rng r = stream("fusion_ae");
    fusion_ae = nn::Conv2d(2 * c, c, 1, 1, 0, "fusion_ae", r);
  }
  {
    Rng r = stream("task_head");
    task_head = nn::Head(hk, c, cfg.n_classes, ups, "task_head", r);
  }
  {
    Rng r = stream("ae");
    int aw = cfg.ae_width > 0 ? cfg.ae_width : std::max(1, c / 2);
    ae = AeTranslator(c, aw, "ae", r);
  }
}

const std::vector<std::string>& ModelGraph::module_tags() {
  static const std::vector<std::string> tags = {"shared_enc", "priv_enc", "ord_enc", "head_s",
                                                "head_p",     "head_o",   "t1",      "t2",
                                                "fusion",     "fusion_ae", "task_head", "ae"};
  return tags;
}

std::vector<nn::Parameter*> ModelGraph::params_of(const std::string& tag) {
  std::vector<nn::Parameter*> out;
  if (tag == "shared_enc") shared_enc.collect_params(out);
  else if (tag == "priv_enc") priv_enc.collect_params(out);
  else if (tag == "ord_enc") ord_enc.collect_params(out);
  else if (tag == "head_s") head_s.collect_params(out);
  else if (tag == "head_p") head_p.collect_params(out);
  else if (tag == "head_o") head_o.collect_params(out);
  else if (tag == "t1") t1.collect_params(out);
  else if (tag == "t2") t2.collect_params(out);
  else if (tag == "fusion") fusion.collect_params(out);
  else if (tag == "fusion_ae") fusion_ae.collect_params(out);
  else if (tag == "task_head") task_head.collect_params(out);
  else if (tag == "ae") ae.collect_params(out);
  else throw ConfigError("unknown module tag '" + tag + "'");
  return out;
}

std::vector<nn::Parameter*> ModelGraph::params_of(const std::vector<std::string>& tags) {
  std::vector<nn::Parameter*> out;
  for (const auto& t : tags) {
    auto ps = params_of(t);
    out.insert(out.end(), ps.begin(), ps.end());
  }
  return out;
}

std::vector<std::pair<std::string, Tensor*>> ModelGraph::buffers_of(const std::string& tag) {
  std::vector<std::pair<std::string, Tensor*>> out;
  if (tag == "shared_enc") shared_enc.collect_buffers(out);
  else if (tag == "priv_enc") priv_enc.collect_buffers(out);
  else if (tag == "ord_enc") ord_enc.collect_buffers(out);
  else if (tag == "t1") t1.collect_buffers(out);
  else if (tag == "t2") t2.collect_buffers(out);
  // heads, fusion convs and the translator have no buffers
  else if (tag != "head_s" && tag != "head_p" && tag != "head_o" && tag != "fusion" &&
           tag != "fusion_ae" && tag != "task_head" && tag != "ae")
    throw ConfigError("unknown module tag '" + tag + "'");
  return out;
}

std::vector<std::pair<std::string, Tensor*>> ModelGraph::buffers_of(const std::vector<std::string>& tags) {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (const auto& t : tags) {
    auto bs = buffers_of(t);
    out.insert(out.end(), bs.begin(), bs.end());
  }
  return out;
}

void ModelGraph::zero_grads() {
  for (const auto& tag : module_tags())
    for (nn::Parameter* p : params_of(tag)) p->grad.zero();
}

uint64_t ModelGraph::checksum_of(const std::vector<std::string>& tags) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& tag : tags) {
    for (nn::Parameter* p : params_of(tag))
      h = fnv1a64(p->value.data(), static_cast<size_t>(p->value.size()) * sizeof(double), h);
    for (auto& [name, t] : buffers_of(tag))
      h = fnv1a64(t->data(), static_cast<size_t>(t->size()) * sizeof(double), h);
  }
  return h;
}

ModelGraph::TrainingForward ModelGraph::forward_training(const PairedBatch& batch, nn::Mode mode,
                                                         ForwardCtx* ctx) {
  if (batch.x_o.ndim() != 4 || batch.x_p.ndim() != 4)
    throw StructuralError("forward_training: batch tensors must be [b,c,h,w]");
  TrainingForward f;
  f.rep_s = shared_enc.forward(batch.x_o, mode, ctx ? &ctx->enc_s : nullptr);
  f.rep_p = priv_enc.forward(batch.x_p, nn::Mode::eval, nullptr);
  nn::Mode omode = cfg.finetune_ordinary ? mode : nn::Mode::eval;
  f.rep_o = ord_enc.forward(batch.x_o, omode, ctx ? &ctx->enc_o : nullptr);
  f.logits_s = head_s.forward(f.rep_s, ctx ? &ctx->head_s_ctx : nullptr);
  f.logits_p = head_p.forward(f.rep_p, nullptr);
  FuseResult fr = fuse_features(t1, t2, fusion, f.rep_s, f.rep_o, mode, ctx ? &ctx->fuse : nullptr);
  f.t1_s = std::move(fr.t1_s);
  f.t1_o = std::move(fr.t1_o);
  f.t2_s = std::move(fr.t2_s);
  f.t2_o = std::move(fr.t2_o);
  f.fused_logits = task_head.forward(fr.fused, ctx ? &ctx->task_ctx : nullptr);
  return f;
}

Tensor ModelGraph::forward_inference(const Tensor& x_o, FusionPath path) {
  if (x_o.ndim() != 4)
    throw StructuralError("forward_inference: input must be [b,c,h,w]");
  if (x_o.dim(1) != cfg.in_c_ordinary)
    throw StructuralError("forward_inference: expected the ordinary modality with " +
                          std::to_string(cfg.in_c_ordinary) + " channels, got " +
                          std::to_string(x_o.dim(1)));
  if (path == FusionPath::ordinary_head) {
    Tensor rep_o = ord_enc.forward(x_o, nn::Mode::eval, nullptr);
    return head_o.forward(rep_o, nullptr);
  }
  Tensor rep_s = shared_enc.forward(x_o, nn::Mode::eval, nullptr);
  Tensor rep_o = ord_enc.forward(x_o, nn::Mode::eval, nullptr);
  switch (path) {
    case FusionPath::conv_fused: {
      FuseResult fr = fuse_features(t1, t2, fusion, rep_s, rep_o, nn::Mode::eval, nullptr);
      return task_head.forward(fr.fused, nullptr);
    }
    case FusionPath::logit_sum: {
      Tensor ls = head_s.forward(rep_s, nullptr);
      Tensor lo = head_o.forward(rep_o, nullptr);
      return logit_sum_fusion(ls, lo);
    }
    case FusionPath::ae_concat: {
      Tensor translated = ae.forward(rep_s, nullptr);
      Tensor cat = nn::concat_channels({&translated, &rep_o});
      Tensor fused = fusion_ae.forward(cat, nullptr);
      return task_head.forward(fused, nullptr);
    }
    default:
      throw StructuralError("forward_inference: unsupported wiring");
  }
}

void ModelGraph::save_snapshot(const std::string& path, const SnapshotMeta& meta) {
  std::vector<std::pair<std::string, const Tensor*>> tensors;
  for (const auto& tag : module_tags()) {
    for (nn::Parameter* p : params_of(tag)) tensors.emplace_back(p->name, &p->value);
    for (auto& [name, t] : buffers_of(tag)) tensors.emplace_back(name, t);
  }
  save_named_tensors(path, meta, tensors);
}

void ModelGraph::load_snapshot(const LoadedSnapshot& snap) {
  for (const auto& tag : module_tags()) {
    for (nn::Parameter* p : params_of(tag)) {
      auto it = snap.tensors.find(p->name);
      if (it == snap.tensors.end()) throw IoError("snapshot missing tensor '" + p->name + "'");
      if (!it->second.same_shape(p->value))
        throw StructuralError("snapshot tensor '" + p->name + "' has shape " +
                              it->second.shape_str() + ", expected " + p->value.shape_str());
      p->value = it->second;
    }
    for (auto& [name, t] : buffers_of(tag)) {
      auto it = snap.tensors.find(name);
      if (it == snap.tensors.end()) throw IoError("snapshot missing tensor '" + name + "'");
      if (!it->second.same_shape(*t))
        throw StructuralError("snapshot tensor '" + name + "' has shape " +
                              it->second.shape_str() + ", expected " + t->shape_str());
      *t = it->second;
    }
  }
}

void ModelGraph::load_branch(const LoadedSnapshot& snap, const std::string& enc_tag,
                             const std::string& head_tag) {
  auto assign = [&](const std::string& local_name, const std::string& local_prefix,
                    const std::string& snap_prefix, Tensor& dst) {
    std::string want = snap_prefix + local_name.substr(local_prefix.size());
    auto it = snap.tensors.find(want);
    if (it == snap.tensors.end())
      throw IoError("pretraining snapshot missing tensor '" + want + "'");
    if (!it->second.same_shape(dst))
      throw StructuralError("pretraining snapshot tensor '" + want + "' has shape " +
                            it->second.shape_str() + ", expected " + dst.shape_str() + " at " +
                            local_name);
    dst = it->second;
  };
  for (nn::Parameter* p : params_of(enc_tag)) assign(p->name, enc_tag, "enc", p->value);
  for (auto& [name, t] : buffers_of(enc_tag)) assign(name, enc_tag, "enc", *t);
  if (!head_tag.empty())
    for (nn::Parameter* p : params_of(head_tag)) assign(p->name, head_tag, "head", p->value);
}

// ===== UnimodalNet =====

UnimodalNet::UnimodalNet(TaskKind task, int in_c, const std::vector<int>& widths, int n_classes,
                         uint64_t init_seed) {
  {
    Rng r = Rng::stream(init_seed, "init.enc");
    enc = nn::Encoder(in_c, widths, "enc", r);
  }
  nn::HeadKind hk = task == TaskKind::classification ? nn::HeadKind::pooled : nn::HeadKind::dense;
  {
    Rng r = Rng::stream(init_seed, "init.head");
    head = nn::Head(hk, widths.back(), n_classes, enc.downsample_factor(), "head", r);
  }
}

std::vector<nn::Parameter*> UnimodalNet::params() {
  std::vector<nn::Parameter*> out;
  enc.collect_params(out);
  head.collect_params(out);
  return out;
}

std::vector<std::pair<std::string, Tensor*>> UnimodalNet::buffers() {
  std::vector<std::pair<std::string, Tensor*>> out;
  enc.collect_buffers(out);
  return out;
}

void UnimodalNet::zero_grads() {
  for (nn::Parameter* p : params()) p->grad.zero();
}

}  // namespace osmd
