// Invariant-channel analysis of a learned transformation layer: rank feature
// channels by how diagonal their filters are, then grow the largest set that
// can be frozen to a scaled identity without hurting the task.
#pragma once

#include <vector>

#include "translayer.hpp"

namespace eqm {

// Per output channel: |row| / |row with the center self-tap removed|.
// A channel whose filter is exactly a scaled center self-tap gets the
// sentinel 1e12. Biases are not part of the linear row and are ignored.
std::vector<double> invariance_scores(const TransformationLayer& layer);

// Channel indices sorted by descending score, ties to the lower index.
std::vector<int> invariance_order(const std::vector<double>& scores);

// Freezes the given channels: their filters become alpha * center self-tap
// with alpha the original center coefficient; biases are kept.
TransformationLayer freeze_channels(const TransformationLayer& layer,
                                    const std::vector<int>& channels);

struct InvarianceEval {
  int p = 0;
  double err = 0.0;
  bool accepted = false;
};

struct InvariantSetResult {
  int p = 0;                         // largest accepted prefix size
  double base_err = 0.0;             // unfrozen layer error
  double tol = 0.05;                 // acceptance: err <= (1 + tol) * base
  std::vector<double> scores;
  std::vector<int> order;
  std::vector<InvarianceEval> evals;  // every probe the search made
  bool monotone = true;               // false if some accepted p exceeds a rejected one
};

// Binary search for the largest score-ordered prefix whose frozen layer
// stays within (1 + tol) of the base probe error on ds.
InvariantSetResult max_invariant_set(const Network& net, int boundary,
                                     const TransformationLayer& layer, const Dataset& ds,
                                     const Affine2& g_inverse, double tol);

}  // namespace eqm
