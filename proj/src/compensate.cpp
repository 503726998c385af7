#include "compensate.hpp"

#include <algorithm>
#include <cmath>

#include "common.hpp"
#include "geometry.hpp"

namespace eqm {

namespace {

std::vector<double> gather(const LinearClassifier& clf, const FeatureField& f) {
  require(f.h == clf.h && f.w == clf.w && f.d == clf.d, Errc::invalid_argument,
          "classifier: field shape mismatch");
  std::vector<double> x;
  x.reserve(clf.sites.size() * std::size_t(clf.d));
  for (int s : clf.sites) {
    const double* src = &f.data[std::size_t(s) * std::size_t(f.d)];
    x.insert(x.end(), src, src + f.d);
  }
  return x;
}

double score_of(const LinearClassifier& clf, const std::vector<double>& x, int cls) {
  const std::size_t stride = x.size() + 1;
  const double* w = &clf.W[std::size_t(cls) * stride];
  double s = w[x.size()];
  for (std::size_t i = 0; i < x.size(); ++i) s += w[i] * x[i];
  return s;
}

int argmax_of(const LinearClassifier& clf, const std::vector<double>& x) {
  int best = 0;
  double best_s = score_of(clf, x, 0);
  for (int c = 1; c < clf.classes; ++c) {
    double s = score_of(clf, x, c);
    if (s > best_s) {
      best_s = s;
      best = c;
    }
  }
  return best;
}

}  // namespace

LinearClassifier train_linear_hog(const Dataset& train, const HogConfig& hog,
                                  const std::vector<int>& sites, const LinearTrainConfig& cfg) {
  require(!train.items.empty(), Errc::invalid_argument, "train_linear_hog: empty dataset");
  require(!sites.empty(), Errc::invalid_argument, "train_linear_hog: no sites");

  std::vector<std::vector<double>> feats;
  std::vector<int> labels;
  LinearClassifier clf;
  for (const DatasetItem& item : train.items) {
    FeatureField f = extract_hog(item.image, hog);
    if (feats.empty()) {
      clf.h = f.h;
      clf.w = f.w;
      clf.d = f.d;
      clf.geom = f.geom;
      for (int s : sites)
        require(s >= 0 && s < f.sites(), Errc::invalid_argument,
                "train_linear_hog: site out of range");
      clf.sites = sites;
    }
    feats.push_back(gather(clf, f));
    require(item.cls >= 0, Errc::invalid_argument, "train_linear_hog: unlabeled item");
    labels.push_back(item.cls);
  }
  clf.classes = 1 + *std::max_element(labels.begin(), labels.end());
  require(clf.classes >= 2, Errc::invalid_argument, "train_linear_hog: need >= 2 classes");
  const std::size_t stride = feats[0].size() + 1;
  clf.W.assign(std::size_t(clf.classes) * stride, 0.0);

  Rng rng(cfg.seed);
  std::vector<int> order(feats.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = int(i);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order.data(), order.size());
    for (int idx : order) {
      const std::vector<double>& x = feats[std::size_t(idx)];
      const int y = labels[std::size_t(idx)];
      // Multiclass hinge: push the true class above the best rival by 1.
      int rival = -1;
      double rival_s = 0.0;
      for (int c = 0; c < clf.classes; ++c) {
        if (c == y) continue;
        double s = score_of(clf, x, c);
        if (rival < 0 || s > rival_s) {
          rival = c;
          rival_s = s;
        }
      }
      const double shrink = 1.0 - cfg.lr * cfg.reg;
      for (int c = 0; c < clf.classes; ++c)
        for (std::size_t i = 0; i < x.size(); ++i) clf.W[std::size_t(c) * stride + i] *= shrink;
      if (score_of(clf, x, y) - rival_s < 1.0) {
        double* wy = &clf.W[std::size_t(y) * stride];
        double* wr = &clf.W[std::size_t(rival) * stride];
        for (std::size_t i = 0; i < x.size(); ++i) {
          wy[i] += cfg.lr * x[i];
          wr[i] -= cfg.lr * x[i];
        }
        wy[x.size()] += cfg.lr;
        wr[x.size()] -= cfg.lr;
      }
    }
  }
  return clf;
}

double classifier_score(const LinearClassifier& clf, const FeatureField& f, int cls) {
  require(cls >= 0 && cls < clf.classes, Errc::invalid_argument, "classifier_score: bad class");
  return score_of(clf, gather(clf, f), cls);
}

int classify(const LinearClassifier& clf, const FeatureField& f) {
  return argmax_of(clf, gather(clf, f));
}

double classifier_error(const LinearClassifier& clf, const Dataset& ds, const HogConfig& hog) {
  require(!ds.items.empty(), Errc::invalid_argument, "classifier_error: empty dataset");
  int errors = 0;
  for (const DatasetItem& item : ds.items)
    errors += classify(clf, extract_hog(item.image, hog)) != item.cls;
  return double(errors) / double(ds.items.size());
}

std::vector<CompensationPoint> compensation_curve(const LinearClassifier& clf,
                                                  const HogConfig& hog,
                                                  const std::vector<double>& angles,
                                                  const std::vector<EquivariantMap>& maps,
                                                  const Dataset& test) {
  require(angles.size() == maps.size(), Errc::invalid_argument,
          "compensation_curve: angles/maps mismatch");
  require(!test.items.empty(), Errc::invalid_argument, "compensation_curve: empty dataset");
  for (const EquivariantMap& map : maps) {
    std::vector<std::uint8_t> mask = map.valid_mask();
    for (int s : clf.sites)
      require(mask[std::size_t(s)], Errc::invalid_argument,
              "compensation_curve: map does not cover a classifier site");
  }

  const double err_orig = classifier_error(clf, test, hog);
  std::vector<CompensationPoint> curve;
  for (std::size_t a = 0; a < angles.size(); ++a) {
    const Image& probe = test.items[0].image;
    Affine2 g = Affine2::rotation_deg(angles[a], image_center(probe.width, probe.height));
    Affine2 g_inv = inverse(g);
    int unc = 0, comp = 0;
    for (const DatasetItem& item : test.items) {
      Image rotated = warp(item.image, g_inv, Interp::bilinear, Pad::replicate);
      FeatureField f = extract_hog(rotated, hog);
      unc += classify(clf, f) != item.cls;
      comp += classify(clf, apply(maps[a], f)) != item.cls;
    }
    CompensationPoint pt;
    pt.angle = angles[a];
    pt.err_orig = err_orig;
    pt.err_unc = double(unc) / double(test.items.size());
    pt.err_comp = double(comp) / double(test.items.size());
    curve.push_back(pt);
  }
  return curve;
}

}  // namespace eqm
