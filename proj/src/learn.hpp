// Learning equivariant maps from (phi(x), phi(gx)) pairs.
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "emap.hpp"
#include "field.hpp"
#include "image.hpp"

namespace eqm {

using Extractor = std::function<FeatureField(const Image&)>;

enum class CropKind { interior, center };
struct CropPolicy {
  CropKind kind = CropKind::interior;
  int ch = 0, cw = 0;  // central block size for CropKind::center
};

// Aligned feature pairs plus the output sites that survive cropping.
struct PairSet {
  std::vector<FeatureField> in_fields;
  std::vector<FeatureField> out_fields;
  Affine2 g;
  int m = 0;  // neighborhood size the crop was computed for (0 = unstructured)
  std::vector<int> valid_sites;
};

// phi(x) and phi(gx) for every image; image warps use bilinear/replicate.
// interior keeps output sites whose m x m neighborhoods need no clipping;
// center further restricts to the central ch x cw block. Throws if no site
// survives.
PairSet assemble_pairs(const std::vector<Image>& images, const Affine2& g, const Extractor& phi,
                       int m, CropPolicy crop);

struct LearnConfig {
  std::string method = "fs";  // "ls" | "rr" | "fs"
  int k = 5;                  // fs row sparsity
  int m = 3;                  // neighborhood side, 0 = unstructured
  double lambda = 0.1;        // rr only
  double fs_rel_tol = 1e-12;
  CropPolicy crop;
};

// Learns one row per (valid site, channel). learn_seconds on the returned
// map covers design assembly + solving, not feature extraction.
EquivariantMap learn_map(const PairSet& pairs, const LearnConfig& cfg);

struct MapEvalStats {
  double mean = 0.0, median = 0.0, stddev = 0.0;  // per-cell distances
  double none_mean = 0.0;   // baseline: predict phi(x) unchanged
  double ref_norm = 0.0;    // mean per-cell L2 norm of the target field
  int n_images = 0, n_sites = 0;
  std::vector<double> per_image;  // mean per-cell distance, one per image
};

// Held-out error over the map's valid sites. For hellinger/chi2 the
// predictions are clamped at zero first (linear rows can dip below the
// metric domain).
MapEvalStats evaluate_map(const EquivariantMap& map, const std::vector<Image>& images,
                          const Extractor& phi, FieldMetric metric);

// Central ch x cw block of flat site indices on an h x w grid.
std::vector<int> central_sites(int h, int w, int ch, int cw);

}  // namespace eqm
