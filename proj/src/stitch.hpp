// Stitching layers: s x s filter banks mapping one network's representation
// into another's, plus Franken-network evaluation.
#pragma once

#include <cstdint>
#include <vector>

#include "net.hpp"
#include "translayer.hpp"

namespace eqm {

struct StitchingLayer {
  Layer conv;        // s x s, stride 1, pad (s-1)/2
  int resample = 0;  // 0 none, +1 nearest 2x upsample, -1 nearest 2x downsample
};

// Identity-like init: center tap 1 on matching channels (extra channels 0).
StitchingLayer make_stitch(int d_in, int d_out, int s, int resample);

FeatureField stitch_apply(const StitchingLayer& layer, const FeatureField& f);
FeatureField stitch_backward(const StitchingLayer& layer, const FeatureField& input,
                             const FeatureField& dout, LayerGrads& grads);
double grad_check_stitch(const StitchingLayer& layer, int h, int w, std::uint64_t seed);

// Error of phi2_B(stitch(phi1_A(x))) on the original labels.
double franken_error(const Network& net_a, const Network& net_b, int boundary,
                     const StitchingLayer& layer, const Dataset& ds);

struct StitchTrainConfig {
  int s = 1;
  int resample = 0;
  int epochs = 5;
  int batch = 16;
  double lr = 0.02;
  double momentum = 0.9;
  std::uint64_t seed = 11;
};

struct StitchTrainResult {
  StitchingLayer layer;
  std::vector<TaskCurvePoint> curve;  // includes the identity-init point
};

// Trains the filter bank by the downstream loss, phi1_A activations cached.
StitchTrainResult learn_stitch(const Network& net_a, const Network& net_b, int boundary,
                               const Dataset& train, const Dataset& val,
                               const StitchTrainConfig& cfg);

void save_stitch(const StitchingLayer& layer, const std::string& dir);
StitchingLayer load_stitch(const std::string& dir);

}  // namespace eqm
