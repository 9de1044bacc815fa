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
#include "osmd/synth.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <sstream>

namespace osmd {

std::string task_name(TaskKind t) {
  return t == TaskKind::classification ? "classification" : "segmentation";
}

TaskKind task_from_string(const std::string& s) {
  if (s == "classification") return TaskKind::classification;
  if (s == "segmentation") return TaskKind::segmentation;
  throw ConfigError("unknown task kind '" + s + "'");
}

void SynthSpec::validate() const {
  if (n_classes < 2) throw ConfigError("synth spec: n_classes must be >= 2");
  if (dims_o.size() != 3 || dims_p.size() != 3)
    throw ConfigError("synth spec: dims must be [channels, h, w]");
  for (int d : dims_o)
    if (d <= 0) throw ConfigError("synth spec: dims_o entries must be positive");
  for (int d : dims_p)
    if (d <= 0) throw ConfigError("synth spec: dims_p entries must be positive");
  if (dims_o[1] != dims_p[1] || dims_o[2] != dims_p[2])
    throw ConfigError("synth spec: modality spatial dims must match");
  if (ordinary_snr < 0.0 || privileged_snr < 0.0)
    throw ConfigError("synth spec: snr values must be non-negative");
  if (cross_corr < 0.0 || cross_corr > 1.0)
    throw ConfigError("synth spec: cross_corr must lie in [0, 1]");
  if (n_train < 1) throw ConfigError("synth spec: n_train must be >= 1");
  if (n_eval < 0) throw ConfigError("synth spec: n_eval must be >= 0");
  if (latent_dim < 1) throw ConfigError("synth spec: latent_dim must be >= 1");
  if (pixel_noise < 0.0) throw ConfigError("synth spec: pixel_noise must be non-negative");
  if (task_kind == TaskKind::segmentation) {
    if (label_grid < 1) throw ConfigError("synth spec: label_grid must be >= 1");
    if (dims_o[1] % label_grid != 0 || dims_o[2] % label_grid != 0)
      throw ConfigError("synth spec: label_grid must divide the spatial dims");
  }
}

std::string SynthSpec::canonical_string() const {
  std::ostringstream os;
  os << "task=" << task_name(task_kind) << ";k=" << n_classes << ";dims_o=" << dims_o[0] << "x"
     << dims_o[1] << "x" << dims_o[2] << ";dims_p=" << dims_p[0] << "x" << dims_p[1] << "x"
     << dims_p[2] << ";snr_o=" << format_double(ordinary_snr)
     << ";snr_p=" << format_double(privileged_snr) << ";rho=" << format_double(cross_corr)
     << ";n_train=" << n_train << ";n_eval=" << n_eval << ";seed=" << seed
     << ";dl=" << latent_dim << ";pn=" << format_double(pixel_noise) << ";grid=" << label_grid;
  return os.str();
}

const PairedSample& DatasetView::at(int64_t i) const {
  return ds->samples[static_cast<size_t>(begin + i)];
}

void PairedDataset::compute_digest() {
  uint64_t h = 0xcbf29ce484222325ULL;
  int64_t meta[4] = {static_cast<int64_t>(task), n_classes, n_train, n_eval};
  h = fnv1a64(meta, sizeof(meta), h);
  for (const PairedSample& s : samples) {
    h = fnv1a64(s.x_o.data(), static_cast<size_t>(s.x_o.size()) * sizeof(double), h);
    h = fnv1a64(s.x_p.data(), static_cast<size_t>(s.x_p.size()) * sizeof(double), h);
    int64_t lab = s.label;
    h = fnv1a64(&lab, sizeof(lab), h);
    if (!s.label_map.empty())
      h = fnv1a64(s.label_map.data(), s.label_map.size() * sizeof(int), h);
  }
  digest = h;
}

void PairedDataset::check_consistent() const {
  if (samples.empty()) return;
  const PairedSample& first = samples.front();
  for (const PairedSample& s : samples) {
    if (!s.x_o.same_shape(first.x_o) || !s.x_p.same_shape(first.x_p))
      throw DataError("dataset: inconsistent sample shapes");
    if (s.x_o.dim(1) != s.x_p.dim(1) || s.x_o.dim(2) != s.x_p.dim(2))
      throw DataError("dataset: modality spatial dims differ");
    if (task == TaskKind::classification) {
      if (s.label < 0 || s.label >= n_classes)
        throw DataError("dataset: label out of range");
    } else {
      for (int v : s.label_map)
        if (v < 0 || v >= n_classes) throw DataError("dataset: label map value out of range");
    }
  }
}

namespace {

// Balanced label assignment for one split: round-robin then shuffle.
std::vector<int> balanced_labels(int n, int k, Rng& rng) {
  std::vector<int> labels(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) labels[static_cast<size_t>(i)] = i % k;
  rng.shuffle(labels);
  return labels;
}

struct ClsModel {
  std::vector<std::vector<double>> means;  // [k][dl], unit norm, orthogonalized
  std::vector<double> a_o, a_p;            // row-major [D][dl]
  int64_t d_o = 0, d_p = 0, dl = 0;
};

ClsModel build_cls_model(const SynthSpec& spec) {
  ClsModel m;
  m.dl = spec.latent_dim;
  m.d_o = static_cast<int64_t>(spec.dims_o[0]) * spec.dims_o[1] * spec.dims_o[2];
  m.d_p = static_cast<int64_t>(spec.dims_p[0]) * spec.dims_p[1] * spec.dims_p[2];
  Rng rng = Rng::stream(spec.seed, "synth.structure");
  m.means.assign(static_cast<size_t>(spec.n_classes), std::vector<double>(static_cast<size_t>(m.dl)));
  for (auto& v : m.means)
    for (double& x : v) x = rng.normal();
  // Gram-Schmidt while the latent space has room; otherwise just normalize.
  for (size_t i = 0; i < m.means.size(); ++i) {
    auto& v = m.means[i];
    if (static_cast<int64_t>(i) < m.dl) {
      for (size_t j = 0; j < i; ++j) {
        double dot = 0.0;
        for (int64_t t = 0; t < m.dl; ++t) dot += v[static_cast<size_t>(t)] * m.means[j][static_cast<size_t>(t)];
        for (int64_t t = 0; t < m.dl; ++t) v[static_cast<size_t>(t)] -= dot * m.means[j][static_cast<size_t>(t)];
      }
    }
    double nrm = 0.0;
    for (double x : v) nrm += x * x;
    nrm = std::sqrt(nrm);
    if (nrm < 1e-9) nrm = 1.0;
    for (double& x : v) x /= nrm;
  }
  double scale = 1.0 / std::sqrt(static_cast<double>(m.dl));
  m.a_o.resize(static_cast<size_t>(m.d_o * m.dl));
  for (double& x : m.a_o) x = rng.normal() * scale;
  m.a_p.resize(static_cast<size_t>(m.d_p * m.dl));
  for (double& x : m.a_p) x = rng.normal() * scale;
  return m;
}

// Draws the latent noise pair shared between modalities: w_m = sqrt(rho) * w_c
// + sqrt(1 - rho) * v_m, so each is standard normal with cross-covariance rho.
void draw_latent_pair(Rng& rng, double rho, int64_t dl, std::vector<double>& w_o,
                      std::vector<double>& w_p) {
  double sc = std::sqrt(rho), sv = std::sqrt(1.0 - rho);
  w_o.resize(static_cast<size_t>(dl));
  w_p.resize(static_cast<size_t>(dl));
  std::vector<double> wc(static_cast<size_t>(dl));
  for (double& x : wc) x = rng.normal();
  for (int64_t t = 0; t < dl; ++t) w_o[static_cast<size_t>(t)] = sc * wc[static_cast<size_t>(t)] + sv * rng.normal();
  for (int64_t t = 0; t < dl; ++t) w_p[static_cast<size_t>(t)] = sc * wc[static_cast<size_t>(t)] + sv * rng.normal();
}

void render_cls_sample(const SynthSpec& spec, const ClsModel& m, int label, int64_t instance_id,
                       PairedSample& out) {
  Rng rng = Rng::stream(spec.seed, "synth.sample", static_cast<uint64_t>(instance_id));
  std::vector<double> w_o, w_p;
  draw_latent_pair(rng, spec.cross_corr, m.dl, w_o, w_p);
  const auto& mu = m.means[static_cast<size_t>(label)];
  std::vector<double> z_o(static_cast<size_t>(m.dl)), z_p(static_cast<size_t>(m.dl));
  for (int64_t t = 0; t < m.dl; ++t) {
    z_o[static_cast<size_t>(t)] = spec.ordinary_snr * mu[static_cast<size_t>(t)] + w_o[static_cast<size_t>(t)];
    z_p[static_cast<size_t>(t)] = spec.privileged_snr * mu[static_cast<size_t>(t)] + w_p[static_cast<size_t>(t)];
  }
  out.x_o = Tensor({spec.dims_o[0], spec.dims_o[1], spec.dims_o[2]});
  for (int64_t i = 0; i < m.d_o; ++i) {
    double acc = 0.0;
    const double* row = m.a_o.data() + i * m.dl;
    for (int64_t t = 0; t < m.dl; ++t) acc += row[t] * z_o[static_cast<size_t>(t)];
    out.x_o[i] = acc + spec.pixel_noise * rng.normal();
  }
  out.x_p = Tensor({spec.dims_p[0], spec.dims_p[1], spec.dims_p[2]});
  for (int64_t i = 0; i < m.d_p; ++i) {
    double acc = 0.0;
    const double* row = m.a_p.data() + i * m.dl;
    for (int64_t t = 0; t < m.dl; ++t) acc += row[t] * z_p[static_cast<size_t>(t)];
    out.x_p[i] = acc + spec.pixel_noise * rng.normal();
  }
  out.label = label;
  out.instance_id = instance_id;
}

struct SegModel {
  std::vector<std::vector<double>> sig_o, sig_p;  // [k][channels], unit rows
};

SegModel build_seg_model(const SynthSpec& spec) {
  SegModel m;
  Rng rng = Rng::stream(spec.seed, "synth.structure");
  auto draw = [&](int channels) {
    std::vector<std::vector<double>> sig(static_cast<size_t>(spec.n_classes),
                                         std::vector<double>(static_cast<size_t>(channels)));
    for (auto& v : sig) {
      double nrm = 0.0;
      for (double& x : v) {
        x = rng.normal();
        nrm += x * x;
      }
      nrm = std::sqrt(nrm);
      if (nrm < 1e-9) nrm = 1.0;
      for (double& x : v) x /= nrm;
    }
    return sig;
  };
  m.sig_o = draw(spec.dims_o[0]);
  m.sig_p = draw(spec.dims_p[0]);
  return m;
}

void render_seg_sample(const SynthSpec& spec, const SegModel& m, int64_t instance_id,
                       PairedSample& out) {
  Rng rng = Rng::stream(spec.seed, "synth.sample", static_cast<uint64_t>(instance_id));
  int h = spec.dims_o[1], w = spec.dims_o[2];
  int g = spec.label_grid;
  int bh = h / g, bw = w / g;
  std::vector<int> grid(static_cast<size_t>(g * g));
  for (int& v : grid) v = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(spec.n_classes)));
  out.label_map.resize(static_cast<size_t>(h * w));
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      out.label_map[static_cast<size_t>(i * w + j)] = grid[static_cast<size_t>((i / bh) * g + (j / bw))];

  int c_o = spec.dims_o[0], c_p = spec.dims_p[0];
  int cmax = std::max(c_o, c_p);
  out.x_o = Tensor({1, c_o, h, w});
  out.x_p = Tensor({1, c_p, h, w});
  double sc = std::sqrt(spec.cross_corr), sv = std::sqrt(1.0 - spec.cross_corr);
  std::vector<double> wc(static_cast<size_t>(cmax));
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      int y = out.label_map[static_cast<size_t>(i * w + j)];
      for (int t = 0; t < cmax; ++t) wc[static_cast<size_t>(t)] = rng.normal();
      for (int ch = 0; ch < c_o; ++ch) {
        double noise = sc * wc[static_cast<size_t>(ch)] + sv * rng.normal();
        out.x_o.at4(0, ch, i, j) = spec.ordinary_snr * m.sig_o[static_cast<size_t>(y)][static_cast<size_t>(ch)] + noise;
      }
      for (int ch = 0; ch < c_p; ++ch) {
        double noise = sc * wc[static_cast<size_t>(ch)] + sv * rng.normal();
        out.x_p.at4(0, ch, i, j) = spec.privileged_snr * m.sig_p[static_cast<size_t>(y)][static_cast<size_t>(ch)] + noise;
      }
    }
  out.label = -1;
  out.instance_id = instance_id;
}

}  // namespace

PairedDataset generate_synth_dataset(const SynthSpec& spec) {
  spec.validate();
  PairedDataset ds;
  ds.task = spec.task_kind;
  ds.n_classes = spec.n_classes;
  ds.n_train = spec.n_train;
  ds.n_eval = spec.n_eval;
  ds.spec = spec;
  ds.has_spec = true;
  int total = spec.n_train + spec.n_eval;
  ds.samples.resize(static_cast<size_t>(total));

  if (spec.task_kind == TaskKind::classification) {
    ClsModel model = build_cls_model(spec);
    Rng rng_train = Rng::stream(spec.seed, "synth.labels.train");
    Rng rng_eval = Rng::stream(spec.seed, "synth.labels.eval");
    std::vector<int> lab_train = balanced_labels(spec.n_train, spec.n_classes, rng_train);
    std::vector<int> lab_eval = balanced_labels(spec.n_eval, spec.n_classes, rng_eval);
    for (int i = 0; i < total; ++i) {
      int label = (i < spec.n_train) ? lab_train[static_cast<size_t>(i)]
                                     : lab_eval[static_cast<size_t>(i - spec.n_train)];
      render_cls_sample(spec, model, label, i, ds.samples[static_cast<size_t>(i)]);
    }
  } else {
    SegModel model = build_seg_model(spec);
    for (int i = 0; i < total; ++i) render_seg_sample(spec, model, i, ds.samples[static_cast<size_t>(i)]);
  }

  // Per-sample tensors are stored [c, h, w]; at4 above indexed them with a
  // leading singleton, so normalize the shapes here.
  for (PairedSample& s : ds.samples) {
    if (s.x_o.ndim() == 4) s.x_o = s.x_o.reshaped({spec.dims_o[0], spec.dims_o[1], spec.dims_o[2]});
    if (s.x_p.ndim() == 4) s.x_p = s.x_p.reshaped({spec.dims_p[0], spec.dims_p[1], spec.dims_p[2]});
  }

  ds.bayes = bayes_reference(spec);
  ds.has_bayes = true;
  ds.compute_digest();
  ds.check_consistent();
  return ds;
}

namespace {

// Bayes decision with equal class priors and shared covariance: pick the
// class maximizing mu_k' Sigma^-1 x - 0.5 mu_k' Sigma^-1 mu_k.
double lda_mc_accuracy(const Eigen::MatrixXd& class_means, const Eigen::MatrixXd& cov,
                       const std::function<Eigen::VectorXd(Rng&, int)>& sampler, int mc_samples,
                       Rng& rng, int n_classes) {
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success)
    throw NumericError("bayes_reference: covariance not positive definite");
  Eigen::MatrixXd w = llt.solve(class_means);  // [D, K]
  Eigen::VectorXd bias(n_classes);
  for (int k = 0; k < n_classes; ++k) bias(k) = -0.5 * class_means.col(k).dot(w.col(k));
  int correct = 0;
  for (int s = 0; s < mc_samples; ++s) {
    int y = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(n_classes)));
    Eigen::VectorXd x = sampler(rng, y);
    int best = 0;
    double best_score = w.col(0).dot(x) + bias(0);
    for (int k = 1; k < n_classes; ++k) {
      double sc = w.col(k).dot(x) + bias(k);
      if (sc > best_score) {
        best_score = sc;
        best = k;
      }
    }
    if (best == y) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(mc_samples);
}

}  // namespace

BayesRefs bayes_reference(const SynthSpec& spec, int mc_samples) {
  spec.validate();
  BayesRefs refs;
  refs.mc_samples = mc_samples;

  if (spec.task_kind == TaskKind::classification) {
    ClsModel m = build_cls_model(spec);
    int k = spec.n_classes;
    int64_t dl = m.dl;
    Eigen::MatrixXd a_o = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                                         Eigen::RowMajor>>(m.a_o.data(), m.d_o, dl);
    Eigen::MatrixXd a_p = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                                         Eigen::RowMajor>>(m.a_p.data(), m.d_p, dl);
    Eigen::MatrixXd mu(dl, k);
    for (int c = 0; c < k; ++c)
      for (int64_t t = 0; t < dl; ++t) mu(t, c) = m.means[static_cast<size_t>(c)][static_cast<size_t>(t)];

    double pn2 = spec.pixel_noise * spec.pixel_noise;
    Eigen::MatrixXd cov_oo = a_o * a_o.transpose();
    cov_oo.diagonal().array() += pn2 + 1e-12;
    Eigen::MatrixXd cov_pp = a_p * a_p.transpose();
    cov_pp.diagonal().array() += pn2 + 1e-12;

    Eigen::MatrixXd mean_o = spec.ordinary_snr * (a_o * mu);   // [D_o, K]
    Eigen::MatrixXd mean_p = spec.privileged_snr * (a_p * mu); // [D_p, K]

    auto draw_sample = [&](Rng& rng, int y, bool want_o, bool want_p) {
      std::vector<double> w_o, w_p;
      draw_latent_pair(rng, spec.cross_corr, dl, w_o, w_p);
      Eigen::VectorXd z_o(dl), z_p(dl);
      for (int64_t t = 0; t < dl; ++t) {
        z_o(t) = spec.ordinary_snr * mu(t, y) + w_o[static_cast<size_t>(t)];
        z_p(t) = spec.privileged_snr * mu(t, y) + w_p[static_cast<size_t>(t)];
      }
      Eigen::VectorXd x_o, x_p;
      if (want_o) {
        x_o = a_o * z_o;
        for (int64_t i = 0; i < m.d_o; ++i) x_o(i) += spec.pixel_noise * rng.normal();
      }
      if (want_p) {
        x_p = a_p * z_p;
        for (int64_t i = 0; i < m.d_p; ++i) x_p(i) += spec.pixel_noise * rng.normal();
      }
      return std::make_pair(x_o, x_p);
    };

    {
      Rng rng = Rng::stream(spec.seed, "synth.bayes.ordinary");
      refs.ordinary = lda_mc_accuracy(
          mean_o, cov_oo,
          [&](Rng& r, int y) { return draw_sample(r, y, true, false).first; }, mc_samples, rng, k);
    }
    {
      Rng rng = Rng::stream(spec.seed, "synth.bayes.privileged");
      refs.privileged = lda_mc_accuracy(
          mean_p, cov_pp,
          [&](Rng& r, int y) { return draw_sample(r, y, false, true).second; }, mc_samples, rng, k);
    }
    {
      Eigen::MatrixXd cov(m.d_o + m.d_p, m.d_o + m.d_p);
      cov.topLeftCorner(m.d_o, m.d_o) = cov_oo;
      cov.bottomRightCorner(m.d_p, m.d_p) = cov_pp;
      Eigen::MatrixXd cross = spec.cross_corr * (a_o * a_p.transpose());
      cov.topRightCorner(m.d_o, m.d_p) = cross;
      cov.bottomLeftCorner(m.d_p, m.d_o) = cross.transpose();
      Eigen::MatrixXd mean_joint(m.d_o + m.d_p, k);
      mean_joint.topRows(m.d_o) = mean_o;
      mean_joint.bottomRows(m.d_p) = mean_p;
      Rng rng = Rng::stream(spec.seed, "synth.bayes.joint");
      refs.joint = lda_mc_accuracy(
          mean_joint, cov,
          [&](Rng& r, int y) {
            auto [xo, xp] = draw_sample(r, y, true, true);
            Eigen::VectorXd x(m.d_o + m.d_p);
            x.head(m.d_o) = xo;
            x.tail(m.d_p) = xp;
            return x;
          },
          mc_samples, rng, k);
    }
    return refs;
  }

  // Segmentation: per-position channel-space Gaussians.
  SegModel m = build_seg_model(spec);
  int k = spec.n_classes;
  int c_o = spec.dims_o[0], c_p = spec.dims_p[0];
  int cmax = std::max(c_o, c_p);
  Eigen::MatrixXd mean_o(c_o, k), mean_p(c_p, k);
  for (int c = 0; c < k; ++c) {
    for (int t = 0; t < c_o; ++t) mean_o(t, c) = spec.ordinary_snr * m.sig_o[static_cast<size_t>(c)][static_cast<size_t>(t)];
    for (int t = 0; t < c_p; ++t) mean_p(t, c) = spec.privileged_snr * m.sig_p[static_cast<size_t>(c)][static_cast<size_t>(t)];
  }
  Eigen::MatrixXd cov_oo = Eigen::MatrixXd::Identity(c_o, c_o);
  Eigen::MatrixXd cov_pp = Eigen::MatrixXd::Identity(c_p, c_p);

  auto draw_pos = [&](Rng& rng, int y, bool want_o, bool want_p) {
    double sc = std::sqrt(spec.cross_corr), sv = std::sqrt(1.0 - spec.cross_corr);
    (void)want_o;
    (void)want_p;
    std::vector<double> wc(static_cast<size_t>(cmax));
    for (double& x : wc) x = rng.normal();
    Eigen::VectorXd x_o(c_o), x_p(c_p);
    for (int ch = 0; ch < c_o; ++ch)
      x_o(ch) = mean_o(ch, y) + sc * wc[static_cast<size_t>(ch)] + sv * rng.normal();
    for (int ch = 0; ch < c_p; ++ch)
      x_p(ch) = mean_p(ch, y) + sc * wc[static_cast<size_t>(ch)] + sv * rng.normal();
    return std::make_pair(x_o, x_p);
  };

  {
    Rng rng = Rng::stream(spec.seed, "synth.bayes.ordinary");
    refs.ordinary = lda_mc_accuracy(
        mean_o, cov_oo, [&](Rng& r, int y) { return draw_pos(r, y, true, false).first; },
        mc_samples, rng, k);
  }
  {
    Rng rng = Rng::stream(spec.seed, "synth.bayes.privileged");
    refs.privileged = lda_mc_accuracy(
        mean_p, cov_pp, [&](Rng& r, int y) { return draw_pos(r, y, false, true).second; },
        mc_samples, rng, k);
  }
  {
    Eigen::MatrixXd cov(c_o + c_p, c_o + c_p);
    cov.setZero();
    cov.topLeftCorner(c_o, c_o) = cov_oo;
    cov.bottomRightCorner(c_p, c_p) = cov_pp;
    int cmin = std::min(c_o, c_p);
    for (int t = 0; t < cmin; ++t) {
      cov(t, c_o + t) = spec.cross_corr;
      cov(c_o + t, t) = spec.cross_corr;
    }
    Eigen::MatrixXd mean_joint(c_o + c_p, k);
    mean_joint.topRows(c_o) = mean_o;
    mean_joint.bottomRows(c_p) = mean_p;
    Rng rng = Rng::stream(spec.seed, "synth.bayes.joint");
    refs.joint = lda_mc_accuracy(
        mean_joint, cov,
        [&](Rng& r, int y) {
          auto [xo, xp] = draw_pos(r, y, true, true);
          Eigen::VectorXd x(c_o + c_p);
          x.head(c_o) = xo;
          x.tail(c_p) = xp;
          return x;
        },
        mc_samples, rng, k);
  }
  return refs;
}

}  // namespace osmd
