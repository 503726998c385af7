// UoCTTI-style HOG: 3K+4 channels per cell (2K contrast-sensitive, K
// contrast-insensitive, 4 texture-energy).
#pragma once

#include <string>
#include <vector>

#include "emap.hpp"
#include "field.hpp"
#include "image.hpp"

namespace eqm {

struct HogConfig {
  int cell = 8;
  int orientations = 9;  // K; sensitive channels cover 2K signed bins
};

inline int hog_dim(const HogConfig& cfg) { return 3 * cfg.orientations + 4; }

// Channel layout: [0,2K) sensitive, [2K,3K) insensitive, [3K,3K+4) texture
// blocks ordered up-left, up-right, down-left, down-right.
FeatureField extract_hog(const Image& img, const HogConfig& cfg);

// Per-channel value ceilings implied by the 0.2 clamp; exposed for tests.
double hog_orientation_ceiling();          // sensitive + insensitive
double hog_texture_ceiling();

// Channel permutation table for g in {identity, hflip, vflip, rot180}:
// out channel t of phi(gx) equals in channel table[t] of phi(x).
std::vector<int> hog_channel_permutation(const HogConfig& cfg, const std::string& g);

// Exact permutation map P_g with phi(gx) = P_g phi(x) on an h x w cell grid.
// Only the listed g are lattice-exact for odd K; anything else (e.g. rot90,
// which needs a half-bin shift) throws Errc::unsupported.
EquivariantMap hog_permutation(int grid_h, int grid_w, const HogConfig& cfg,
                               const std::string& g);

}  // namespace eqm
