// Transformation layers: a fixed site permutation for g followed by a bank
// of small learnable filters, splicable into a network at a probe boundary.
#pragma once

#include <cstdint>
#include <vector>

#include "emap.hpp"
#include "net.hpp"

namespace eqm {

enum class TableMode { round, bilinear };

struct PermEntry {
  int src = -1;   // input flat site
  double w = 0.0;
};

// Per output site: the input sites it reads. round mode has one unit-weight
// entry (the same nearest-site rule the map neighborhoods use); bilinear has
// up to four entries summing to 1 (exact-lattice points collapse to one).
// Sites whose sources fall outside the grid are dead: no entries, output 0.
struct PermutationTable {
  int h = 0, w = 0;
  TableMode mode = TableMode::round;
  std::vector<std::vector<PermEntry>> entries;
  std::vector<std::uint8_t> live;
};

PermutationTable build_permutation_table(const FieldGeometry& geom, int h, int w, const Affine2& g,
                                         TableMode mode);

struct TransformationLayer {
  PermutationTable table;
  Affine2 g;
  FieldGeometry geom;  // grid the table was built on
  Layer conv;          // k = m, stride 1, pad (m-1)/2, in_ch = out_ch = d
  int d = 0;
  int m = 1;
};

// Identity-initialized layer (center tap of each filter is 1 on its own
// channel), so an untrained layer is exactly the permutation.
TransformationLayer make_translayer(const FieldGeometry& geom, int h, int w, int d,
                                    const Affine2& g, int m, TableMode mode);

FeatureField permute_sites(const PermutationTable& table, const FeatureField& f);
FeatureField translayer_apply(const TransformationLayer& layer, const FeatureField& f);

// Gradients of the filter bank and the input; filters see the permuted field.
FeatureField translayer_backward(const TransformationLayer& layer, const FeatureField& input,
                                 const FeatureField& dout, LayerGrads& grads);

double grad_check_translayer(const TransformationLayer& layer, int h, int w, std::uint64_t seed);

// Converts a learned map whose support lies inside its own m x m
// neighborhoods into a translayer by averaging tied coefficients. residual
// reports the largest deviation of any row coefficient (or bias) from its
// tied value; coefficients landing outside the anchor-centered window count
// as their own magnitude.
struct TiedLayer {
  TransformationLayer layer;
  double residual = 0.0;
};
TiedLayer map_to_translayer(const EquivariantMap& map, int m);

// Error of phi2(layer(phi1(g^{-1} x))) against the original labels.
// layer == nullptr gives the uncompensated path; g == nullptr feeds x as-is.
double probe_error(const Network& net, int boundary, const TransformationLayer* layer,
                   const Dataset& ds, const Affine2* g_inverse);

struct TaskTrainConfig {
  int m = 3;
  TableMode mode = TableMode::round;
  int epochs = 5;
  int batch = 16;
  double lr = 0.02;
  double momentum = 0.9;
  std::uint64_t seed = 7;
};

struct TaskCurvePoint {
  int samples_seen = 0;
  double train_err = 0.0;
  double val_err = 0.0;
};

struct TaskTrainResult {
  TransformationLayer layer;
  std::vector<TaskCurvePoint> curve;  // includes the identity-init point
};

// Task-oriented learning: minimizes the network loss of
// phi2(layer(phi1(g^{-1} x))) over the filter bank, phi1 activations cached.
TaskTrainResult learn_map_task(const Network& net, int boundary, const Affine2& g,
                               const Dataset& train, const Dataset& val,
                               const TaskTrainConfig& cfg);

// Checkpoint: dir/manifest.json + filter/bias fields; the permutation table
// is rebuilt from the stored geometry on load.
void save_translayer(const TransformationLayer& layer, const std::string& dir);
TransformationLayer load_translayer(const std::string& dir);

}  // namespace eqm
