#include "learn.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include <Eigen/Dense>

#include "common.hpp"
#include "solvers.hpp"

namespace eqm {

std::vector<int> central_sites(int h, int w, int ch, int cw) {
  require(ch >= 1 && cw >= 1 && ch <= h && cw <= w, Errc::invalid_argument,
          "central_sites: block exceeds grid");
  int v0 = (h - ch) / 2, u0 = (w - cw) / 2;
  std::vector<int> sites;
  sites.reserve(std::size_t(ch) * std::size_t(cw));
  for (int v = v0; v < v0 + ch; ++v)
    for (int u = u0; u < u0 + cw; ++u) sites.push_back(v * w + u);
  return sites;
}

PairSet assemble_pairs(const std::vector<Image>& images, const Affine2& g, const Extractor& phi,
                       int m, CropPolicy crop) {
  require(!images.empty(), Errc::invalid_argument, "assemble_pairs: no images");
  PairSet ps;
  ps.g = g;
  ps.m = m;
  ps.in_fields.reserve(images.size());
  ps.out_fields.reserve(images.size());
  for (const Image& img : images) {
    ps.in_fields.push_back(phi(img));
    ps.out_fields.push_back(phi(warp(img, g, Interp::bilinear, Pad::replicate)));
    const FeatureField& a = ps.in_fields.back();
    const FeatureField& b = ps.out_fields.back();
    require(a.h == ps.in_fields[0].h && a.w == ps.in_fields[0].w && a.d == ps.in_fields[0].d &&
                b.h == a.h && b.w == a.w && b.d == a.d,
            Errc::invalid_argument, "assemble_pairs: inconsistent field shapes");
  }
  const FeatureField& in0 = ps.in_fields[0];
  const FeatureField& out0 = ps.out_fields[0];
  std::vector<int> center;
  if (crop.kind == CropKind::center) center = central_sites(out0.h, out0.w, crop.ch, crop.cw);
  for (int v = 0; v < out0.h; ++v) {
    for (int u = 0; u < out0.w; ++u) {
      int s = v * out0.w + u;
      if (crop.kind == CropKind::center &&
          std::find(center.begin(), center.end(), s) == center.end())
        continue;
      if (!neighborhood_interior(out0.geom, in0.geom, in0.h, in0.w, g, m, u, v)) continue;
      ps.valid_sites.push_back(s);
    }
  }
  require(!ps.valid_sites.empty(), Errc::invalid_argument,
          "assemble_pairs: no output site survives the crop");
  return ps;
}

EquivariantMap learn_map(const PairSet& pairs, const LearnConfig& cfg) {
  require(cfg.method == "ls" || cfg.method == "rr" || cfg.method == "fs", Errc::invalid_argument,
          "learn_map: method must be ls|rr|fs");
  require(cfg.method != "fs" || cfg.k >= 0, Errc::invalid_argument, "learn_map: negative k");
  const int n = int(pairs.in_fields.size());
  const FeatureField& in0 = pairs.in_fields[0];
  const FeatureField& out0 = pairs.out_fields[0];
  const int d = in0.d;

  EquivariantMap map;
  map.out_h = out0.h;
  map.out_w = out0.w;
  map.out_d = out0.d;
  map.in_h = in0.h;
  map.in_w = in0.w;
  map.in_d = in0.d;
  map.out_geom = out0.geom;
  map.in_geom = in0.geom;
  map.g = pairs.g;
  map.method = cfg.method;
  map.k = cfg.method == "fs" ? cfg.k : 0;
  map.m = cfg.m;
  map.lambda = cfg.method == "rr" ? cfg.lambda : 0.0;
  map.valid_sites = pairs.valid_sites;
  map.rows.assign(std::size_t(map.out_components()), {});
  map.bias.assign(std::size_t(map.out_components()), 0.0);

  auto t0 = std::chrono::steady_clock::now();

  // Columns of a site's design matrix are input components in ascending
  // flat order, so FS tie-breaking lands on the lowest flat index.
  auto gather = [&](const std::vector<int>& sites) {
    Eigen::MatrixXd X(n, std::ptrdiff_t(sites.size()) * d);
    for (int i = 0; i < n; ++i) {
      const double* src = pairs.in_fields[std::size_t(i)].data.data();
      Eigen::Index c = 0;
      for (int s : sites)
        for (int t = 0; t < d; ++t) X(i, c++) = src[std::size_t(s) * std::size_t(d) + t];
    }
    return X;
  };
  auto columns_of = [&](const std::vector<int>& sites) {
    std::vector<std::uint32_t> cols;
    cols.reserve(sites.size() * std::size_t(d));
    for (int s : sites)
      for (int t = 0; t < d; ++t) cols.push_back(std::uint32_t(s * d + t));
    return cols;
  };
  auto emit_dense = [&](const std::vector<std::uint32_t>& cols, const Eigen::VectorXd& beta,
                        double bias, std::size_t r) {
    auto& row = map.rows[r];
    row.reserve(cols.size());
    for (std::size_t j = 0; j < cols.size(); ++j) row.push_back({cols[j], beta[Eigen::Index(j)]});
    map.bias[r] = bias;
  };

  if (cfg.m <= 0) {
    // Unstructured: every row sees the whole input field; one shared design.
    std::vector<int> all_sites(std::size_t(in0.sites()));
    for (int s = 0; s < in0.sites(); ++s) all_sites[std::size_t(s)] = s;
    Eigen::MatrixXd X = gather(all_sites);
    std::vector<std::uint32_t> cols = columns_of(all_sites);
    if (cfg.method == "fs") {
      Eigen::RowVectorXd xm = X.colwise().mean();
      Eigen::MatrixXd Xc = X.rowwise() - xm;
      Eigen::VectorXd cn2 = Xc.colwise().squaredNorm();
      Eigen::VectorXd y(n);
      for (int s : pairs.valid_sites) {
        for (int t = 0; t < d; ++t) {
          for (int i = 0; i < n; ++i)
            y[i] = pairs.out_fields[std::size_t(i)].data[std::size_t(s) * std::size_t(d) + t];
          FsResult fs = solve_fs(Xc, cn2, xm, y, cfg.k, cfg.fs_rel_tol);
          std::size_t r = std::size_t(s) * std::size_t(d) + std::size_t(t);
          auto& row = map.rows[r];
          for (std::size_t j = 0; j < fs.support.size(); ++j)
            row.push_back({cols[std::size_t(fs.support[j])], fs.coeffs[j]});
          map.bias[r] = fs.bias;
        }
      }
    } else {
      Eigen::MatrixXd Y(n, std::ptrdiff_t(pairs.valid_sites.size()) * d);
      Eigen::Index c = 0;
      for (int s : pairs.valid_sites)
        for (int t = 0; t < d; ++t, ++c)
          for (int i = 0; i < n; ++i)
            Y(i, c) = pairs.out_fields[std::size_t(i)].data[std::size_t(s) * std::size_t(d) + t];
      // The fit minimizes a per-sample average, so the ridge term scales
      // with n to keep lambda comparable across training set sizes.
      DenseSolveResult sol = solve_dense(X, Y, cfg.method == "rr", cfg.lambda * double(n));
      c = 0;
      for (int s : pairs.valid_sites)
        for (int t = 0; t < d; ++t, ++c)
          emit_dense(cols, sol.beta.col(c), sol.bias[c], std::size_t(s) * std::size_t(d) + std::size_t(t));
    }
  } else {
    for (int s : pairs.valid_sites) {
      int u = s % out0.w, v = s / out0.w;
      Neighborhood nb = neighborhood(out0.geom, in0.geom, in0.h, in0.w, pairs.g, cfg.m, u, v);
      Eigen::MatrixXd X = gather(nb.sites);
      std::vector<std::uint32_t> cols = columns_of(nb.sites);
      if (cfg.method == "fs") {
        Eigen::RowVectorXd xm = X.colwise().mean();
        Eigen::MatrixXd Xc = X.rowwise() - xm;
        Eigen::VectorXd cn2 = Xc.colwise().squaredNorm();
        Eigen::VectorXd y(n);
        for (int t = 0; t < d; ++t) {
          for (int i = 0; i < n; ++i)
            y[i] = pairs.out_fields[std::size_t(i)].data[std::size_t(s) * std::size_t(d) + t];
          FsResult fs = solve_fs(Xc, cn2, xm, y, cfg.k, cfg.fs_rel_tol);
          std::size_t r = std::size_t(s) * std::size_t(d) + std::size_t(t);
          auto& row = map.rows[r];
          for (std::size_t j = 0; j < fs.support.size(); ++j)
            row.push_back({cols[std::size_t(fs.support[j])], fs.coeffs[j]});
          map.bias[r] = fs.bias;
        }
      } else {
        Eigen::MatrixXd Y(n, d);
        for (int t = 0; t < d; ++t)
          for (int i = 0; i < n; ++i)
            Y(i, t) = pairs.out_fields[std::size_t(i)].data[std::size_t(s) * std::size_t(d) + t];
        DenseSolveResult sol = solve_dense(X, Y, cfg.method == "rr", cfg.lambda * double(n));
        for (int t = 0; t < d; ++t)
          emit_dense(cols, sol.beta.col(t), sol.bias[t], std::size_t(s) * std::size_t(d) + std::size_t(t));
      }
    }
  }

  map.learn_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  validate_map(map);
  return map;
}

MapEvalStats evaluate_map(const EquivariantMap& map, const std::vector<Image>& images,
                          const Extractor& phi, FieldMetric metric) {
  require(!images.empty(), Errc::invalid_argument, "evaluate_map: no images");
  MapEvalStats stats;
  std::vector<double> dists;
  double none_acc = 0.0, norm_acc = 0.0;
  for (const Image& img : images) {
    FeatureField fin = phi(img);
    FeatureField ftgt = phi(warp(img, map.g, Interp::bilinear, Pad::replicate));
    FeatureField fpred = apply(map, fin);
    if (metric != FieldMetric::l2)
      for (double& v : fpred.data) v = v < 0.0 ? 0.0 : v;
    double img_sum = 0.0;
    for (int s : map.valid_sites) {
      std::vector<int> one{s};
      double dv = field_distance(ftgt, fpred, metric, one);
      dists.push_back(dv);
      img_sum += dv;
    }
    stats.per_image.push_back(img_sum / double(map.valid_sites.size()));
    none_acc += field_distance(ftgt, fin, metric, map.valid_sites);
    norm_acc += field_norm(ftgt, map.valid_sites);
  }
  stats.n_images = int(images.size());
  stats.n_sites = int(map.valid_sites.size());
  double sum = 0.0;
  for (double v : dists) sum += v;
  stats.mean = sum / double(dists.size());
  double var = 0.0;
  for (double v : dists) var += (v - stats.mean) * (v - stats.mean);
  stats.stddev = dists.size() > 1 ? std::sqrt(var / double(dists.size() - 1)) : 0.0;
  std::vector<double> sorted = dists;
  std::sort(sorted.begin(), sorted.end());
  std::size_t mid = sorted.size() / 2;
  stats.median = sorted.size() % 2 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
  stats.none_mean = none_acc / double(images.size());
  stats.ref_norm = norm_acc / double(images.size());
  return stats;
}

}  // namespace eqm
