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
#include "osmd/report.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "osmd/baselines.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace osmd {

// ===== metrics-log parsing =====

StepSeries parse_metrics_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open metrics log '" + path + "'");
  StepSeries s;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json row;
    try {
      row = json::parse(line);
    } catch (const json::exception& e) {
      throw IoError("metrics log '" + path + "' line " + std::to_string(lineno) +
                    " is not valid JSON: " + e.what());
    }
    std::string type = row.value("type", "");
    if (type == "run") {
      s.variant = row.value("variant", "");
      s.task = row.value("task", "");
      s.seed = row.value("seed", static_cast<uint64_t>(0));
      s.config_digest = row.value("config_digest", "");
      s.dataset_digest = row.value("dataset_digest", "");
    } else if (type == "step") {
      s.steps.push_back(row.value("step", static_cast<int64_t>(0)));
      s.epochs.push_back(row.value("epoch", 0));
      s.l_jdn.push_back(row.value("l_jdn", 0.0));
      s.l_ctn.push_back(row.value("l_ctn", 0.0));
      s.l_ttl.push_back(row.value("l_ttl", 0.0));
      s.alpha.push_back(row.value("alpha", 0.0));
      s.beta.push_back(row.value("beta", 0.0));
      s.l_total.push_back(row.value("l_total", 0.0));
      s.dist_marginal.push_back(row.value("dist_marginal", 0.0));
      s.dist_conditional.push_back(row.value("dist_conditional", 0.0));
      s.collapse_t1.push_back(row.value("collapse_t1", 0.0));
      s.collapse_t2.push_back(row.value("collapse_t2", 0.0));
      s.lr.push_back(row.value("lr", 0.0));
    } else if (type == "eval") {
      EvalPoint p;
      p.epoch = row.value("epoch", 0);
      p.step = row.value("step", static_cast<int64_t>(0));
      p.accuracy = row.value("accuracy", 0.0);
      p.error = row.value("error", 1.0 - p.accuracy);
      if (row.contains("acer")) {
        p.has_acer = true;
        p.acer = row.at("acer").get<double>();
      }
      if (row.contains("miou")) {
        p.has_miou = true;
        p.miou = row.at("miou").get<double>();
      }
      s.evals.push_back(p);
    } else {
      throw IoError("metrics log '" + path + "' line " + std::to_string(lineno) +
                    " has unknown row type '" + type + "'");
    }
  }
  return s;
}

// ===== ablation grid =====

std::string ablation_dir_for(const ExperimentConfig& base) {
  return (fs::path(resolve_out_root(base)) / ("ablation-" + base.digest().substr(0, 8))).string();
}

namespace {

std::string sanitize_cell(std::string s) {
  for (char& c : s)
    if (c == '\t' || c == '\n' || c == '\r') c = ' ';
  return s;
}

std::string row_to_line(const AblationRow& r) {
  std::ostringstream os;
  os << r.variant << '\t' << r.seed << '\t' << (r.ok ? "ok" : "failed") << '\t'
     << (r.ok ? format_double(r.error) : "-") << '\t'
     << (r.ok ? format_double(r.accuracy) : "-") << '\t'
     << (r.ok && r.has_acer ? format_double(r.acer) : "-") << '\t'
     << (r.ok && r.has_miou ? format_double(r.miou) : "-") << '\t' << sanitize_cell(r.run_dir)
     << '\t' << sanitize_cell(r.message);
  return os.str();
}

const char* kTableHeader = "variant\tseed\tstatus\terror\taccuracy\tacer\tmiou\trun_dir\tdetail";

}  // namespace

std::vector<VariantStats> summarize_ablation(const std::vector<AblationRow>& rows) {
  std::vector<VariantStats> stats;
  for (VariantKind k : all_variants()) {
    VariantStats st;
    st.variant = variant_name(k);
    std::vector<double> errs;
    for (const auto& r : rows)
      if (r.ok && r.variant == st.variant) errs.push_back(r.error);
    st.n = static_cast<int>(errs.size());
    if (!errs.empty()) {
      double sum = 0.0;
      for (double e : errs) sum += e;
      st.mean_error = sum / static_cast<double>(errs.size());
      if (errs.size() > 1) {
        double ss = 0.0;
        for (double e : errs) ss += (e - st.mean_error) * (e - st.mean_error);
        st.std_error = std::sqrt(ss / static_cast<double>(errs.size() - 1));
      }
    }
    stats.push_back(st);
  }
  return stats;
}

AblationResult run_ablation(const ExperimentConfig& base) {
  base.validate();
  AblationResult result;
  result.dir = ablation_dir_for(base);
  fs::create_directories(result.dir);

  std::vector<ExperimentConfig> grid;
  for (VariantKind k : all_variants()) {
    for (uint64_t seed : base.run.ablate_seeds) {
      ExperimentConfig cfg = base;
      cfg.variant.kind = k;
      cfg.run.seed = seed;
      grid.push_back(cfg);
    }
  }
  result.rows.resize(grid.size());

  // Warm the per-seed pretraining snapshots serially so parallel workers only
  // ever read them.
  {
    PairedDataset ds = load_dataset(base);
    for (uint64_t seed : base.run.ablate_seeds) {
      ExperimentConfig cfg = base;
      cfg.run.seed = seed;
      pretrain_unimodal(cfg, ds, "ordinary", false);
      pretrain_unimodal(cfg, ds, "privileged", false);
    }
  }

  auto run_one = [&](size_t i) {
    const ExperimentConfig& cfg = grid[i];
    AblationRow row;
    row.variant = variant_name(cfg.variant.kind);
    row.seed = cfg.run.seed;
    try {
      RunResult r = run_experiment(cfg, {});
      row.ok = true;
      row.error = r.final_error;
      row.accuracy = r.final_eval.accuracy;
      row.has_acer = r.final_eval.has_acer;
      row.acer = r.final_eval.acer;
      row.has_miou = r.final_eval.has_miou;
      row.miou = r.final_eval.miou;
      row.run_dir = r.run_dir;
    } catch (const std::exception& e) {
      row.ok = false;
      row.message = e.what();
      row.run_dir = run_dir_for(cfg);
    }
    result.rows[i] = row;
  };

  int workers = std::max(1, base.run.parallel_workers);
  if (workers <= 1 || grid.size() <= 1) {
    for (size_t i = 0; i < grid.size(); ++i) run_one(i);
  } else {
    std::atomic<size_t> next{0};
    auto worker = [&] {
      for (;;) {
        size_t i = next.fetch_add(1);
        if (i >= grid.size()) return;
        run_one(i);
      }
    };
    std::vector<std::thread> pool;
    int n = std::min<int>(workers, static_cast<int>(grid.size()));
    pool.reserve(static_cast<size_t>(n));
    for (int t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  result.stats = summarize_ablation(result.rows);

  std::ostringstream table;
  table << kTableHeader << "\n";
  for (const auto& r : result.rows) table << row_to_line(r) << "\n";
  result.table_path = (fs::path(result.dir) / "ablation.dsv").string();
  {
    std::ofstream out(result.table_path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + result.table_path + "'");
    out << table.str();
  }
  result.digest_path = result.table_path + ".digest";
  {
    std::string bytes = table.str();
    std::ofstream out(result.digest_path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + result.digest_path + "'");
    out << to_hex(fnv1a64(bytes.data(), bytes.size())) << "\n";
  }

  json summary;
  summary["schema_version"] = 1;
  summary["config_digest"] = base.digest();
  summary["seeds"] = base.run.ablate_seeds;
  json jstats = json::array();
  for (const auto& st : result.stats)
    jstats.push_back({{"variant", st.variant},
                      {"n", st.n},
                      {"mean_error", st.mean_error},
                      {"std_error", st.std_error}});
  summary["variants"] = jstats;
  result.summary_path = (fs::path(result.dir) / "summary.json").string();
  {
    std::ofstream out(result.summary_path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + result.summary_path + "'");
    out << summary.dump(2) << "\n";
  }
  return result;
}

std::vector<AblationRow> read_ablation_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open ablation table '" + path + "'");
  std::vector<AblationRow> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (lineno == 1) {
      if (line != kTableHeader)
        throw IoError("ablation table '" + path + "' has an unexpected header");
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, '\t')) cells.push_back(cell);
    while (cells.size() < 9) cells.push_back("");
    AblationRow r;
    r.variant = cells[0];
    try {
      r.seed = std::stoull(cells[1]);
    } catch (const std::exception&) {
      throw IoError("ablation table '" + path + "' line " + std::to_string(lineno) +
                    ": bad seed '" + cells[1] + "'");
    }
    r.ok = cells[2] == "ok";
    auto num = [&](const std::string& c) { return c == "-" || c.empty() ? 0.0 : std::stod(c); };
    try {
      r.error = num(cells[3]);
      r.accuracy = num(cells[4]);
      r.has_acer = cells[5] != "-" && !cells[5].empty();
      r.acer = num(cells[5]);
      r.has_miou = cells[6] != "-" && !cells[6].empty();
      r.miou = num(cells[6]);
    } catch (const std::exception&) {
      throw IoError("ablation table '" + path + "' line " + std::to_string(lineno) +
                    ": bad numeric cell");
    }
    r.run_dir = cells[7];
    r.message = cells[8];
    rows.push_back(r);
  }
  return rows;
}

// ===== SVG rendering =====

namespace {

std::string fmt2(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string fmt_tick(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

struct Frame {
  double width = 760, height = 420;
  double left = 64, right = 16, top = 28, bottom = 44;
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  double px(double x) const {
    return left + (x - xmin) / (xmax - xmin) * (width - left - right);
  }
  double py(double y) const {
    return height - bottom - (y - ymin) / (ymax - ymin) * (height - top - bottom);
  }
};

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
                          "#8c564b", "#17becf", "#7f7f7f"};

void span_of(const std::vector<double>& v, double& lo, double& hi) {
  for (double x : v) {
    if (!std::isfinite(x)) continue;
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
}

void pad_span(double& lo, double& hi) {
  if (!(lo < hi)) {
    double pad = std::max(1e-6, std::abs(lo) * 0.1 + 1e-6);
    lo -= pad;
    hi += pad;
  } else {
    double pad = (hi - lo) * 0.05;
    lo -= pad;
    hi += pad;
  }
}

void open_svg(std::ostringstream& os, const Frame& f, const std::string& title) {
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << f.width << "\" height=\""
     << f.height << "\" viewBox=\"0 0 " << f.width << " " << f.height << "\">\n";
  os << "<rect x=\"0\" y=\"0\" width=\"" << f.width << "\" height=\"" << f.height
     << "\" fill=\"white\"/>\n";
  os << "<text x=\"" << f.width / 2 << "\" y=\"18\" text-anchor=\"middle\" "
     << "font-family=\"sans-serif\" font-size=\"13\">" << title << "</text>\n";
}

void draw_axes(std::ostringstream& os, const Frame& f, const std::string& xlabel,
               const std::string& ylabel) {
  os << "<line x1=\"" << f.left << "\" y1=\"" << f.height - f.bottom << "\" x2=\""
     << f.width - f.right << "\" y2=\"" << f.height - f.bottom
     << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
  os << "<line x1=\"" << f.left << "\" y1=\"" << f.top << "\" x2=\"" << f.left << "\" y2=\""
     << f.height - f.bottom << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    double ty = f.ymin + (f.ymax - f.ymin) * i / 4.0;
    double y = f.py(ty);
    os << "<line x1=\"" << f.left - 4 << "\" y1=\"" << fmt2(y) << "\" x2=\"" << f.left
       << "\" y2=\"" << fmt2(y) << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << f.left - 8 << "\" y=\"" << fmt2(y + 4)
       << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" << fmt_tick(ty)
       << "</text>\n";
    double tx = f.xmin + (f.xmax - f.xmin) * i / 4.0;
    double x = f.px(tx);
    os << "<line x1=\"" << fmt2(x) << "\" y1=\"" << f.height - f.bottom << "\" x2=\"" << fmt2(x)
       << "\" y2=\"" << f.height - f.bottom + 4 << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << fmt2(x) << "\" y=\"" << f.height - f.bottom + 16
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">" << fmt_tick(tx)
       << "</text>\n";
  }
  os << "<text x=\"" << (f.left + f.width - f.right) / 2 << "\" y=\"" << f.height - 8
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << xlabel
     << "</text>\n";
  os << "<text x=\"14\" y=\"" << (f.top + f.height - f.bottom) / 2
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\" "
     << "transform=\"rotate(-90 14 " << (f.top + f.height - f.bottom) / 2 << ")\">" << ylabel
     << "</text>\n";
}

void draw_polyline(std::ostringstream& os, const Frame& f, const std::vector<int64_t>& xs,
                   const std::vector<double>& ys, const char* color) {
  os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.4\" points=\"";
  for (size_t i = 0; i < xs.size(); ++i) {
    double y = ys[i];
    if (!std::isfinite(y)) y = f.ymin;
    os << fmt2(f.px(static_cast<double>(xs[i]))) << "," << fmt2(f.py(y));
    if (i + 1 < xs.size()) os << " ";
  }
  os << "\"/>\n";
}

void draw_legend(std::ostringstream& os, const Frame& f,
                 const std::vector<std::pair<std::string, const char*>>& entries) {
  double x = f.left + 10, y = f.top + 12;
  for (const auto& [label, color] : entries) {
    os << "<line x1=\"" << x << "\" y1=\"" << y - 4 << "\" x2=\"" << x + 18 << "\" y2=\"" << y - 4
       << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << x + 24 << "\" y=\"" << y
       << "\" font-family=\"sans-serif\" font-size=\"11\">" << label << "</text>\n";
    y += 16;
  }
}

void write_svg(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << body;
  if (!out) throw IoError("failed writing '" + path + "'");
}

}  // namespace

bool render_loss_curves(const StepSeries& s, const std::string& path) {
  if (s.empty()) return false;
  Frame f;
  f.xmin = static_cast<double>(s.steps.front());
  f.xmax = static_cast<double>(s.steps.back());
  if (!(f.xmin < f.xmax)) f.xmax = f.xmin + 1.0;
  double lo = 1e300, hi = -1e300;
  span_of(s.l_total, lo, hi);
  span_of(s.l_ttl, lo, hi);
  span_of(s.l_jdn, lo, hi);
  span_of(s.l_ctn, lo, hi);
  if (lo > hi) lo = 0.0, hi = 1.0;
  pad_span(lo, hi);
  f.ymin = lo;
  f.ymax = hi;
  std::ostringstream os;
  open_svg(os, f, "training losses (" + s.variant + ", seed " + std::to_string(s.seed) + ")");
  draw_axes(os, f, "step", "loss");
  draw_polyline(os, f, s.steps, s.l_total, kPalette[0]);
  draw_polyline(os, f, s.steps, s.l_ttl, kPalette[1]);
  draw_polyline(os, f, s.steps, s.l_jdn, kPalette[2]);
  draw_polyline(os, f, s.steps, s.l_ctn, kPalette[3]);
  draw_legend(os, f,
              {{"total", kPalette[0]}, {"task", kPalette[1]}, {"transfer", kPalette[2]},
               {"translation", kPalette[3]}});
  os << "</svg>\n";
  write_svg(path, os.str());
  return true;
}

bool render_weight_curves(const StepSeries& s, const std::string& path) {
  if (s.empty()) return false;
  Frame f;
  f.xmin = static_cast<double>(s.steps.front());
  f.xmax = static_cast<double>(s.steps.back());
  if (!(f.xmin < f.xmax)) f.xmax = f.xmin + 1.0;
  double lo = 1e300, hi = -1e300;
  span_of(s.alpha, lo, hi);
  span_of(s.beta, lo, hi);
  if (lo > hi) lo = 0.0, hi = 1.0;
  pad_span(lo, hi);
  f.ymin = lo;
  f.ymax = hi;
  std::ostringstream os;
  open_svg(os, f, "adaptive loss weights (" + s.variant + ", seed " + std::to_string(s.seed) + ")");
  draw_axes(os, f, "step", "weight");
  draw_polyline(os, f, s.steps, s.alpha, kPalette[2]);
  draw_polyline(os, f, s.steps, s.beta, kPalette[3]);
  draw_legend(os, f, {{"alpha (transfer)", kPalette[2]}, {"beta (translation)", kPalette[3]}});
  os << "</svg>\n";
  write_svg(path, os.str());
  return true;
}

bool render_collapse_curves(const StepSeries& s, const std::string& path) {
  if (s.empty()) return false;
  Frame f;
  f.xmin = static_cast<double>(s.steps.front());
  f.xmax = static_cast<double>(s.steps.back());
  if (!(f.xmin < f.xmax)) f.xmax = f.xmin + 1.0;
  double lo = 0.0, hi = -1e300;
  span_of(s.collapse_t1, lo, hi);
  span_of(s.collapse_t2, lo, hi);
  if (hi < lo) hi = 1.0;
  pad_span(lo, hi);
  f.ymin = std::max(0.0, lo);
  f.ymax = hi;
  std::ostringstream os;
  open_svg(os, f,
           "translated-feature magnitude (" + s.variant + ", seed " + std::to_string(s.seed) + ")");
  draw_axes(os, f, "step", "mean |T(rep)|");
  draw_polyline(os, f, s.steps, s.collapse_t1, kPalette[0]);
  draw_polyline(os, f, s.steps, s.collapse_t2, kPalette[4]);
  draw_legend(os, f, {{"T1", kPalette[0]}, {"T2", kPalette[4]}});
  os << "</svg>\n";
  write_svg(path, os.str());
  return true;
}

bool render_ablation_bars(const std::vector<VariantStats>& stats, const std::string& path) {
  std::vector<VariantStats> present;
  for (const auto& st : stats)
    if (st.n > 0) present.push_back(st);
  if (present.empty()) return false;
  Frame f;
  f.width = 820;
  f.bottom = 84;
  double hi = -1e300;
  for (const auto& st : present) hi = std::max(hi, st.mean_error + st.std_error);
  if (hi <= 0.0) hi = 1.0;
  f.ymin = 0.0;
  f.ymax = hi * 1.1;
  f.xmin = 0.0;
  f.xmax = static_cast<double>(present.size());
  std::ostringstream os;
  open_svg(os, f, "mean evaluation error by variant (whiskers: +/- 1 std over seeds)");
  os << "<line x1=\"" << f.left << "\" y1=\"" << f.height - f.bottom << "\" x2=\""
     << f.width - f.right << "\" y2=\"" << f.height - f.bottom << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << f.left << "\" y1=\"" << f.top << "\" x2=\"" << f.left << "\" y2=\""
     << f.height - f.bottom << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    double ty = f.ymax * i / 4.0;
    double y = f.py(ty);
    os << "<text x=\"" << f.left - 8 << "\" y=\"" << fmt2(y + 4)
       << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" << fmt_tick(ty)
       << "</text>\n";
  }
  for (size_t i = 0; i < present.size(); ++i) {
    const auto& st = present[i];
    double x0 = f.px(static_cast<double>(i) + 0.15);
    double x1 = f.px(static_cast<double>(i) + 0.85);
    double xc = (x0 + x1) / 2.0;
    double y = f.py(st.mean_error);
    os << "<rect x=\"" << fmt2(x0) << "\" y=\"" << fmt2(y) << "\" width=\"" << fmt2(x1 - x0)
       << "\" height=\"" << fmt2(f.py(0.0) - y) << "\" fill=\""
       << kPalette[i % (sizeof(kPalette) / sizeof(kPalette[0]))] << "\" fill-opacity=\"0.8\"/>\n";
    if (st.std_error > 0.0) {
      double yl = f.py(std::max(0.0, st.mean_error - st.std_error));
      double yh = f.py(st.mean_error + st.std_error);
      os << "<line x1=\"" << fmt2(xc) << "\" y1=\"" << fmt2(yl) << "\" x2=\"" << fmt2(xc)
         << "\" y2=\"" << fmt2(yh) << "\" stroke=\"black\" stroke-width=\"1.2\"/>\n";
      os << "<line x1=\"" << fmt2(xc - 5) << "\" y1=\"" << fmt2(yh) << "\" x2=\"" << fmt2(xc + 5)
         << "\" y2=\"" << fmt2(yh) << "\" stroke=\"black\"/>\n";
      os << "<line x1=\"" << fmt2(xc - 5) << "\" y1=\"" << fmt2(yl) << "\" x2=\"" << fmt2(xc + 5)
         << "\" y2=\"" << fmt2(yl) << "\" stroke=\"black\"/>\n";
    }
    os << "<text x=\"" << fmt2(xc) << "\" y=\"" << fmt2(y - 6)
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">"
       << fmt_tick(st.mean_error) << "</text>\n";
    os << "<text x=\"" << fmt2(xc) << "\" y=\"" << f.height - f.bottom + 14
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"9\" "
       << "transform=\"rotate(30 " << fmt2(xc) << " " << f.height - f.bottom + 14 << ")\">"
       << st.variant << "</text>\n";
  }
  os << "</svg>\n";
  write_svg(path, os.str());
  return true;
}

}  // namespace osmd
