// Linear HOG classification and feature-level rotation compensation: the
// classifier is trained on upright images; rotated inputs are either fed
// directly (uncompensated) or pushed through a learned map first.
#pragma once

#include <cstdint>
#include <vector>

#include "emap.hpp"
#include "hog.hpp"
#include "synth.hpp"

namespace eqm {

// Multiclass hinge classifier over a fixed subset of HOG sites. Scoring
// reads only those sites, so fields whose other sites are zeroed (map
// outputs) and full fields are treated identically.
struct LinearClassifier {
  int h = 0, w = 0, d = 0;
  FieldGeometry geom;
  int classes = 0;
  std::vector<int> sites;  // ascending flat site indices
  std::vector<double> W;   // [classes][sites.size() * d + 1], bias last
};

struct LinearTrainConfig {
  int epochs = 30;
  double lr = 0.01;
  double reg = 1e-4;
  std::uint64_t seed = 5;
};

LinearClassifier train_linear_hog(const Dataset& train, const HogConfig& hog,
                                  const std::vector<int>& sites, const LinearTrainConfig& cfg);

double classifier_score(const LinearClassifier& clf, const FeatureField& f, int cls);
int classify(const LinearClassifier& clf, const FeatureField& f);
double classifier_error(const LinearClassifier& clf, const Dataset& ds, const HogConfig& hog);

struct CompensationPoint {
  double angle = 0.0;
  double err_orig = 0.0;  // upright images (same every row)
  double err_unc = 0.0;   // g^{-1} x fed directly
  double err_comp = 0.0;  // M_g phi(g^{-1} x)
};

// maps[i] must be the learned map for g = rotation by angles[i] about the
// image center, with valid sites covering clf.sites.
std::vector<CompensationPoint> compensation_curve(const LinearClassifier& clf,
                                                  const HogConfig& hog,
                                                  const std::vector<double>& angles,
                                                  const std::vector<EquivariantMap>& maps,
                                                  const Dataset& test);

}  // namespace eqm
