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
#include "osmd/data.hpp"

#include <algorithm>
#include <cctype>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace osmd {

PairedBatch assemble_batch(const DatasetView& view, const std::vector<int64_t>& indices) {
  if (indices.empty()) throw DataError("assemble_batch: empty index list");
  const PairedSample& first = view.at(indices[0]);
  int64_t b = static_cast<int64_t>(indices.size());
  PairedBatch batch;
  batch.x_o = Tensor({b, first.x_o.dim(0), first.x_o.dim(1), first.x_o.dim(2)});
  batch.x_p = Tensor({b, first.x_p.dim(0), first.x_p.dim(1), first.x_p.dim(2)});
  bool seg = !first.label_map.empty();
  for (int64_t i = 0; i < b; ++i) {
    const PairedSample& s = view.at(indices[static_cast<size_t>(i)]);
    if (!s.x_o.same_shape(first.x_o) || !s.x_p.same_shape(first.x_p))
      throw DataError("assemble_batch: inconsistent sample shapes");
    std::copy(s.x_o.data(), s.x_o.data() + s.x_o.size(), batch.x_o.data() + i * s.x_o.size());
    std::copy(s.x_p.data(), s.x_p.data() + s.x_p.size(), batch.x_p.data() + i * s.x_p.size());
    if (seg)
      batch.labels.insert(batch.labels.end(), s.label_map.begin(), s.label_map.end());
    else
      batch.labels.push_back(s.label);
    batch.ids.push_back(s.instance_id);
  }
  return batch;
}

std::vector<PairedBatch> make_batches(const DatasetView& view, int batch_size,
                                      uint64_t shuffle_seed, bool shuffle, bool drop_incomplete) {
  if (batch_size < 1) throw ConfigError("make_batches: batch_size must be >= 1");
  int64_t n = view.size();
  if (n == 0) throw DataError("make_batches: empty dataset view");
  std::vector<int64_t> order(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  if (shuffle) {
    Rng rng(shuffle_seed);
    rng.shuffle(order);
  }
  std::vector<PairedBatch> batches;
  for (int64_t start = 0; start < n; start += batch_size) {
    int64_t stop = std::min(n, start + batch_size);
    if (drop_incomplete && stop - start < batch_size) break;
    std::vector<int64_t> idx(order.begin() + start, order.begin() + stop);
    batches.push_back(assemble_batch(view, idx));
  }
  if (batches.empty())
    throw DataError("make_batches: batch size " + std::to_string(batch_size) +
                    " larger than dataset with drop_incomplete set");
  return batches;
}

void hflip_inplace(Tensor& x, int64_t n) {
  int64_t c = x.dim(1), h = x.dim(2), w = x.dim(3);
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t i = 0; i < h; ++i)
      for (int64_t j = 0; j < w / 2; ++j)
        std::swap(x.at4(n, ch, i, j), x.at4(n, ch, i, w - 1 - j));
}

void hflip_label_map(std::vector<int>& map, int64_t offset, int h, int w) {
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w / 2; ++j)
      std::swap(map[static_cast<size_t>(offset + i * w + j)],
                map[static_cast<size_t>(offset + i * w + (w - 1 - j))]);
}

// ===== PNM =====

namespace {

int pnm_next_int(std::istream& in) {
  // Skips whitespace and '#' comments.
  while (true) {
    int ch = in.peek();
    if (ch == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(ch)) {
      in.get();
    } else {
      break;
    }
  }
  int v;
  if (!(in >> v)) throw DataError("pnm: truncated header");
  return v;
}

}  // namespace

Tensor read_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::string magic;
  in >> magic;
  bool gray = (magic == "P2" || magic == "P5");
  bool ascii = (magic == "P2" || magic == "P3");
  if (!gray && magic != "P3" && magic != "P6")
    throw DataError(path + ": unsupported format '" + magic + "' (want P2/P3/P5/P6)");
  int w = pnm_next_int(in);
  int h = pnm_next_int(in);
  int maxval = pnm_next_int(in);
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535)
    throw DataError(path + ": bad pnm header");
  int channels = gray ? 1 : 3;
  Tensor img({channels, h, w});
  int64_t count = static_cast<int64_t>(w) * h * channels;
  std::vector<int> raw(static_cast<size_t>(count));
  if (ascii) {
    for (int64_t i = 0; i < count; ++i) raw[static_cast<size_t>(i)] = pnm_next_int(in);
  } else {
    in.get();  // single whitespace after maxval
    int bytes = maxval > 255 ? 2 : 1;
    std::vector<unsigned char> buf(static_cast<size_t>(count * bytes));
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() != static_cast<std::streamsize>(buf.size()))
      throw DataError(path + ": truncated pnm payload");
    for (int64_t i = 0; i < count; ++i)
      raw[static_cast<size_t>(i)] = bytes == 1
                                        ? buf[static_cast<size_t>(i)]
                                        : (buf[static_cast<size_t>(2 * i)] << 8) | buf[static_cast<size_t>(2 * i + 1)];
  }
  // PNM interleaves channels per pixel; store planar.
  double inv = 1.0 / static_cast<double>(maxval);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      for (int c = 0; c < channels; ++c)
        img[static_cast<int64_t>(c) * h * w + static_cast<int64_t>(i) * w + j] =
            raw[static_cast<size_t>((static_cast<int64_t>(i) * w + j) * channels + c)] * inv;
  return img;
}

std::vector<int> read_pgm_raw(const std::string& path, int& h, int& w) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::string magic;
  in >> magic;
  if (magic != "P2" && magic != "P5") throw DataError(path + ": label maps must be PGM");
  w = pnm_next_int(in);
  h = pnm_next_int(in);
  int maxval = pnm_next_int(in);
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535) throw DataError(path + ": bad pgm header");
  int64_t count = static_cast<int64_t>(w) * h;
  std::vector<int> raw(static_cast<size_t>(count));
  if (magic == "P2") {
    for (int64_t i = 0; i < count; ++i) raw[static_cast<size_t>(i)] = pnm_next_int(in);
  } else {
    in.get();
    int bytes = maxval > 255 ? 2 : 1;
    std::vector<unsigned char> buf(static_cast<size_t>(count * bytes));
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() != static_cast<std::streamsize>(buf.size()))
      throw DataError(path + ": truncated pgm payload");
    for (int64_t i = 0; i < count; ++i)
      raw[static_cast<size_t>(i)] = bytes == 1
                                        ? buf[static_cast<size_t>(i)]
                                        : (buf[static_cast<size_t>(2 * i)] << 8) | buf[static_cast<size_t>(2 * i + 1)];
  }
  return raw;
}

namespace {

unsigned char quantize(double v) {
  int q = static_cast<int>(v * 255.0 + 0.5);
  return static_cast<unsigned char>(std::clamp(q, 0, 255));
}

}  // namespace

void write_pgm(const std::string& path, const Tensor& img) {
  if (img.ndim() != 3 || img.dim(0) != 1) throw StructuralError("write_pgm: expected [1,h,w]");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << "P5\n" << img.dim(2) << " " << img.dim(1) << "\n255\n";
  for (int64_t i = 0; i < img.size(); ++i) out.put(static_cast<char>(quantize(img[i])));
}

void write_ppm(const std::string& path, const Tensor& img) {
  if (img.ndim() != 3 || img.dim(0) != 3) throw StructuralError("write_ppm: expected [3,h,w]");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  int64_t h = img.dim(1), w = img.dim(2);
  out << "P6\n" << w << " " << h << "\n255\n";
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < w; ++j)
      for (int64_t c = 0; c < 3; ++c) out.put(static_cast<char>(quantize(img[(c * h + i) * w + j])));
}

void write_pgm_raw(const std::string& path, const std::vector<int>& v, int h, int w) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << "P5\n" << w << " " << h << "\n255\n";
  for (int x : v) out.put(static_cast<char>(std::clamp(x, 0, 255)));
}

// ===== directory ingestion =====

namespace {

bool has_pnm_ext(const fs::path& p) {
  auto e = p.extension().string();
  return e == ".pgm" || e == ".ppm";
}

std::map<std::string, fs::path> scan_stems(const fs::path& dir) {
  std::map<std::string, fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file() || !has_pnm_ext(entry.path())) continue;
    out[entry.path().stem().string()] = entry.path();
  }
  return out;
}

}  // namespace

PairedDataset load_directory_dataset(const std::string& root, const DirectoryLayout& layout,
                                     IngestReport* report) {
  fs::path rootp(root);
  if (!fs::is_directory(rootp)) throw DataError("dataset root '" + root + "' is not a directory");
  fs::path odir = rootp / layout.ordinary_subdir;
  fs::path pdir = rootp / layout.privileged_subdir;
  if (!fs::is_directory(odir))
    throw DataError("missing ordinary modality directory '" + odir.string() + "'");
  if (!fs::is_directory(pdir))
    throw DataError("missing privileged modality directory '" + pdir.string() + "'");

  IngestReport local;
  IngestReport& rep = report ? *report : local;

  std::map<std::string, int> csv_labels;
  fs::path ldir;
  if (layout.task == TaskKind::classification) {
    fs::path csv = rootp / layout.labels_csv;
    if (!fs::is_regular_file(csv)) throw DataError("missing label file '" + csv.string() + "'");
    std::ifstream in(csv);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      auto comma = line.find(',');
      if (comma == std::string::npos)
        throw DataError(csv.string() + ":" + std::to_string(lineno) + ": expected 'stem,label'");
      std::string stem = line.substr(0, comma);
      try {
        csv_labels[stem] = std::stoi(line.substr(comma + 1));
      } catch (const std::exception&) {
        throw DataError(csv.string() + ":" + std::to_string(lineno) + ": bad label value");
      }
    }
  } else {
    ldir = rootp / layout.label_subdir;
    if (layout.label_subdir.empty() || !fs::is_directory(ldir))
      throw DataError("missing label directory under '" + root + "'");
  }

  auto ord = scan_stems(odir);
  auto priv = scan_stems(pdir);

  PairedDataset ds;
  ds.task = layout.task;
  int max_label = -1;
  int64_t next_id = 0;
  for (const auto& [stem, opath] : ord) {
    auto pit = priv.find(stem);
    if (pit == priv.end()) {
      rep.rejected.push_back(stem + " (no privileged file)");
      continue;
    }
    PairedSample s;
    s.x_o = read_pnm(opath.string());
    s.x_p = read_pnm(pit->second.string());
    if (s.x_o.dim(1) != s.x_p.dim(1) || s.x_o.dim(2) != s.x_p.dim(2)) {
      rep.rejected.push_back(stem + " (spatial dims differ between modalities)");
      continue;
    }
    if (layout.task == TaskKind::classification) {
      auto lit = csv_labels.find(stem);
      if (lit == csv_labels.end()) {
        rep.rejected.push_back(stem + " (no label)");
        continue;
      }
      if (lit->second < 0) {
        rep.rejected.push_back(stem + " (negative label)");
        continue;
      }
      s.label = lit->second;
      max_label = std::max(max_label, s.label);
    } else {
      fs::path lp = ldir / (stem + ".pgm");
      if (!fs::is_regular_file(lp)) {
        rep.rejected.push_back(stem + " (no label map)");
        continue;
      }
      int lh = 0, lw = 0;
      s.label_map = read_pgm_raw(lp.string(), lh, lw);
      if (lh != s.x_o.dim(1) || lw != s.x_o.dim(2)) {
        rep.rejected.push_back(stem + " (label map dims differ from image)");
        continue;
      }
      for (int v : s.label_map) max_label = std::max(max_label, v);
    }
    s.instance_id = next_id++;
    ds.samples.push_back(std::move(s));
  }
  for (const auto& [stem, ppath] : priv)
    if (!ord.count(stem)) rep.rejected.push_back(stem + " (no ordinary file)");

  rep.accepted = static_cast<int>(ds.samples.size());
  if (ds.samples.empty()) rep.warnings.push_back("dataset under '" + root + "' is empty");

  ds.n_classes = layout.n_classes > 0 ? layout.n_classes : max_label + 1;
  if (!ds.samples.empty() && max_label >= ds.n_classes)
    throw DataError("label " + std::to_string(max_label) + " exceeds configured class count");
  ds.n_train = static_cast<int>(ds.samples.size());
  ds.n_eval = 0;
  ds.compute_digest();
  ds.check_consistent();
  return ds;
}

PairedDataset merge_train_eval(PairedDataset train, const PairedDataset& eval) {
  if (train.task != eval.task) throw DataError("merge_train_eval: task kinds differ");
  train.n_train = static_cast<int>(train.samples.size());
  train.n_eval = static_cast<int>(eval.samples.size());
  train.n_classes = std::max(train.n_classes, eval.n_classes);
  for (const PairedSample& s : eval.samples) {
    train.samples.push_back(s);
    train.samples.back().instance_id = static_cast<int64_t>(train.samples.size()) - 1;
  }
  train.compute_digest();
  train.check_consistent();
  return train;
}

// ===== archive =====

namespace {

constexpr char kArchiveMagic[] = "OSMDDATA1\n";

void append_bytes(std::string& buf, const void* p, size_t n) {
  buf.append(static_cast<const char*>(p), n);
}

}  // namespace

void export_dataset(const PairedDataset& ds, const std::string& path) {
  std::string payload;
  for (const PairedSample& s : ds.samples) {
    append_bytes(payload, s.x_o.data(), static_cast<size_t>(s.x_o.size()) * sizeof(double));
    append_bytes(payload, s.x_p.data(), static_cast<size_t>(s.x_p.size()) * sizeof(double));
    int64_t lab = s.label;
    append_bytes(payload, &lab, sizeof(lab));
    if (ds.task == TaskKind::segmentation)
      append_bytes(payload, s.label_map.data(), s.label_map.size() * sizeof(int));
  }

  json header;
  header["schema_version"] = 1;
  header["task"] = task_name(ds.task);
  header["n_classes"] = ds.n_classes;
  header["n_train"] = ds.n_train;
  header["n_eval"] = ds.n_eval;
  header["count"] = ds.samples.size();
  if (!ds.samples.empty()) {
    header["dims_o"] = ds.samples[0].x_o.shape();
    header["dims_p"] = ds.samples[0].x_p.shape();
  } else {
    header["dims_o"] = std::vector<int64_t>{};
    header["dims_p"] = std::vector<int64_t>{};
  }
  header["checksum"] = to_hex(fnv1a64(payload.data(), payload.size()));
  header["has_spec"] = ds.has_spec;
  if (ds.has_spec) {
    json spec;
    spec["task_kind"] = task_name(ds.spec.task_kind);
    spec["n_classes"] = ds.spec.n_classes;
    spec["dims_o"] = ds.spec.dims_o;
    spec["dims_p"] = ds.spec.dims_p;
    spec["ordinary_snr"] = ds.spec.ordinary_snr;
    spec["privileged_snr"] = ds.spec.privileged_snr;
    spec["cross_corr"] = ds.spec.cross_corr;
    spec["n_train"] = ds.spec.n_train;
    spec["n_eval"] = ds.spec.n_eval;
    spec["seed"] = ds.spec.seed;
    spec["latent_dim"] = ds.spec.latent_dim;
    spec["pixel_noise"] = ds.spec.pixel_noise;
    spec["label_grid"] = ds.spec.label_grid;
    header["spec"] = spec;
  }
  header["has_bayes"] = ds.has_bayes;
  if (ds.has_bayes) {
    header["bayes"] = {{"ordinary", ds.bayes.ordinary},
                       {"privileged", ds.bayes.privileged},
                       {"joint", ds.bayes.joint},
                       {"mc_samples", ds.bayes.mc_samples}};
  }

  std::string htext = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write archive '" + path + "'");
  out.write(kArchiveMagic, sizeof(kArchiveMagic) - 1);
  uint32_t hlen = static_cast<uint32_t>(htext.size());
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw IoError("failed writing archive '" + path + "'");
}

PairedDataset import_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open archive '" + path + "'");
  char magic[sizeof(kArchiveMagic) - 1];
  in.read(magic, sizeof(magic));
  if (in.gcount() != sizeof(magic) || std::string(magic, sizeof(magic)) != std::string(kArchiveMagic, sizeof(magic)))
    throw DataError("'" + path + "' is not a dataset archive");
  uint32_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string htext(hlen, '\0');
  in.read(htext.data(), hlen);
  if (in.gcount() != static_cast<std::streamsize>(hlen))
    throw DataError("'" + path + "': truncated header");
  json header;
  try {
    header = json::parse(htext);
  } catch (const json::exception& e) {
    throw DataError("'" + path + "': bad archive header: " + e.what());
  }

  PairedDataset ds;
  ds.task = task_from_string(header.at("task").get<std::string>());
  ds.n_classes = header.at("n_classes").get<int>();
  ds.n_train = header.at("n_train").get<int>();
  ds.n_eval = header.at("n_eval").get<int>();
  size_t count = header.at("count").get<size_t>();
  std::vector<int64_t> dims_o = header.at("dims_o").get<std::vector<int64_t>>();
  std::vector<int64_t> dims_p = header.at("dims_p").get<std::vector<int64_t>>();

  std::string payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::string want = header.at("checksum").get<std::string>();
  std::string got = to_hex(fnv1a64(payload.data(), payload.size()));
  if (want != got)
    throw DataError("'" + path + "': payload checksum mismatch (header " + want + ", payload " + got + ")");

  size_t off = 0;
  auto take = [&](void* dst, size_t n) {
    if (off + n > payload.size()) throw DataError("'" + path + "': truncated payload");
    std::memcpy(dst, payload.data() + off, n);
    off += n;
  };
  int64_t xo_n = dims_o.empty() ? 0 : dims_o[0] * dims_o[1] * dims_o[2];
  int64_t xp_n = dims_p.empty() ? 0 : dims_p[0] * dims_p[1] * dims_p[2];
  for (size_t i = 0; i < count; ++i) {
    PairedSample s;
    s.x_o = Tensor(dims_o);
    s.x_p = Tensor(dims_p);
    take(s.x_o.data(), static_cast<size_t>(xo_n) * sizeof(double));
    take(s.x_p.data(), static_cast<size_t>(xp_n) * sizeof(double));
    int64_t lab = 0;
    take(&lab, sizeof(lab));
    s.label = static_cast<int>(lab);
    if (ds.task == TaskKind::segmentation) {
      s.label_map.resize(static_cast<size_t>(dims_o[1] * dims_o[2]));
      take(s.label_map.data(), s.label_map.size() * sizeof(int));
    }
    s.instance_id = static_cast<int64_t>(i);
    ds.samples.push_back(std::move(s));
  }
  if (off != payload.size()) throw DataError("'" + path + "': trailing bytes in payload");

  ds.has_spec = header.value("has_spec", false);
  if (ds.has_spec) {
    const json& spec = header.at("spec");
    ds.spec.task_kind = task_from_string(spec.at("task_kind").get<std::string>());
    ds.spec.n_classes = spec.at("n_classes").get<int>();
    ds.spec.dims_o = spec.at("dims_o").get<std::vector<int>>();
    ds.spec.dims_p = spec.at("dims_p").get<std::vector<int>>();
    ds.spec.ordinary_snr = spec.at("ordinary_snr").get<double>();
    ds.spec.privileged_snr = spec.at("privileged_snr").get<double>();
    ds.spec.cross_corr = spec.at("cross_corr").get<double>();
    ds.spec.n_train = spec.at("n_train").get<int>();
    ds.spec.n_eval = spec.at("n_eval").get<int>();
    ds.spec.seed = spec.at("seed").get<uint64_t>();
    ds.spec.latent_dim = spec.at("latent_dim").get<int>();
    ds.spec.pixel_noise = spec.at("pixel_noise").get<double>();
    ds.spec.label_grid = spec.at("label_grid").get<int>();
  }
  ds.has_bayes = header.value("has_bayes", false);
  if (ds.has_bayes) {
    const json& b = header.at("bayes");
    ds.bayes.ordinary = b.at("ordinary").get<double>();
    ds.bayes.privileged = b.at("privileged").get<double>();
    ds.bayes.joint = b.at("joint").get<double>();
    ds.bayes.mc_samples = b.at("mc_samples").get<int>();
  }
  ds.compute_digest();
  ds.check_consistent();
  return ds;
}

}  // namespace osmd
