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
#pragma once

#include <string>
#include <vector>

#include "osmd/synth.hpp"
#include "osmd/tensor.hpp"

namespace osmd {

struct PairedBatch {
  Tensor x_o;  // [b, c, h, w]
  Tensor x_p;
  std::vector<int> labels;  // classification: b; segmentation: b*h*w row-major
  std::vector<int64_t> ids;
  int64_t size() const { return x_o.empty() ? 0 : x_o.dim(0); }
};

// Seeded shuffle, fixed batch size, short final batch kept. With
// drop_incomplete the short batch is dropped; dropping everything is an error.
std::vector<PairedBatch> make_batches(const DatasetView& view, int batch_size,
                                      uint64_t shuffle_seed, bool shuffle = true,
                                      bool drop_incomplete = false);

PairedBatch assemble_batch(const DatasetView& view, const std::vector<int64_t>& indices);

// Mirror-flip one sample of a [b,c,h,w] tensor along the width axis.
void hflip_inplace(Tensor& x, int64_t n);
void hflip_label_map(std::vector<int>& map, int64_t offset, int h, int w);

// Directory ingestion. Samples are matched across modality subdirectories by
// file stem; PGM/PPM files are accepted (pixel values scaled to [0,1]).
// Classification labels come from a CSV of "stem,label" lines; segmentation
// labels from per-stem PGM files whose raw pixel values are class ids.
struct DirectoryLayout {
  TaskKind task = TaskKind::classification;
  std::string ordinary_subdir = "ordinary";
  std::string privileged_subdir = "privileged";
  std::string labels_csv = "labels.csv";
  std::string label_subdir;  // used instead of the CSV when non-empty
  int n_classes = 0;         // 0 = infer from the labels
};

struct IngestReport {
  int accepted = 0;
  std::vector<std::string> rejected;  // stems missing a modality or a label
  std::vector<std::string> warnings;
};

PairedDataset load_directory_dataset(const std::string& root, const DirectoryLayout& layout,
                                     IngestReport* report = nullptr);

// Appends the eval dataset behind the train dataset.
PairedDataset merge_train_eval(PairedDataset train, const PairedDataset& eval);

// Single-file dataset archive (header + checksummed payload).
void export_dataset(const PairedDataset& ds, const std::string& path);
PairedDataset import_dataset(const std::string& path);

// Minimal PNM support (P2/P5 grayscale, P3/P6 color).
Tensor read_pnm(const std::string& path);                               // [c,h,w] in [0,1]
std::vector<int> read_pgm_raw(const std::string& path, int& h, int& w); // raw values
void write_pgm(const std::string& path, const Tensor& img);             // [1,h,w] in [0,1]
void write_ppm(const std::string& path, const Tensor& img);             // [3,h,w] in [0,1]
void write_pgm_raw(const std::string& path, const std::vector<int>& v, int h, int w);

}  // namespace osmd
