// Structured pose regression over a discrete transformation set G: a linear
// scoring function max_j <w, phi(warp(x, g_j^{-1}))> trained as a
// margin-rescaled structured SVM, evaluated either by brute force (direct)
// or by pushing w through precomputed equivariant maps (one feature
// extraction total).
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "emap.hpp"
#include "hog.hpp"
#include "synth.hpp"

namespace eqm {

struct PoseSet {
  std::string family;            // "rotation" | "affine"
  int size = 0;                  // image side the poses act on
  std::vector<Affine2> poses;
  std::vector<double> angles;    // rotation family only, degrees
};

// rotation: count poses at angles 0, 360/count, ... . affine: the fixed
// 10-element family (count must be 10).
PoseSet build_pose_set(const std::string& family, int count, int size);

// Mismatch loss in [0, ~1]: rotation uses circular angle distance / 180,
// affine the mean displacement of three reference points / size.
double pose_loss(const PoseSet& G, int j, int j_true);
// Same loss against a continuous ground-truth item (rotation: its angle).
double pose_loss_item(const PoseSet& G, int j, const DatasetItem& item);
// Index of the grid pose nearest the item's ground truth.
int nearest_pose(const PoseSet& G, const DatasetItem& item);

struct PoseModel {
  PoseSet G;
  HogConfig hog;
  int fh = 0, fw = 0, fd = 0;
  FieldGeometry geom;
  std::vector<double> w_direct;            // flat field, site-major
  std::vector<double> w_equi;
  std::vector<EquivariantMap> maps;        // maps[j]: phi(x) -> phi(g_j^{-1} x)
  std::vector<FeatureField> templates;     // adjoint fields M_j^T w_equi
  std::vector<double> template_offsets;    // <w_equi, b_j>
  int baseline = 0;                        // train-median pose index
};

struct PoseTrainConfig {
  int epochs = 10;
  std::uint64_t seed = 3;
};

// maps[j] must map phi(x) to phi applied to the image warped by
// poses[j]^{-1} (so scoring pose j needs no warp). Both score modes are
// trained; templates are the pushed-through equivariant w.
PoseModel train_pose_model(const Dataset& train, const PoseSet& G,
                           const std::vector<EquivariantMap>& maps, const HogConfig& hog,
                           const PoseTrainConfig& cfg);

enum class PoseMode { direct, equivariant };

// Predicted pose index. scores, when given, receives all |G| scores.
int predict_pose(const PoseModel& model, const Image& x, PoseMode mode,
                 std::vector<double>* scores = nullptr);

struct PoseBench {
  double residual_direct = 0.0;  // mean loss of the predictions
  double residual_equi = 0.0;
  double residual_const = 0.0;   // always predicting model.baseline
  double ms_direct = 0.0;        // median per-image scoring time
  double ms_equi = 0.0;
  double ms_direct_per_pose = 0.0;
  double ms_equi_per_pose = 0.0;
  double speedup = 0.0;          // ms_direct / ms_equi
};

// poses_limit, when positive, times scoring restricted to the first
// poses_limit poses (residuals still use the full set).
PoseBench bench_pose(const PoseModel& model, const Dataset& test, int warmup,
                     int poses_limit = 0);

}  // namespace eqm
