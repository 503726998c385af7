// Dense feature fields (H x W x D) with grid-to-image geometry.
#pragma once

#include <string>
#include <vector>

#include "geometry.hpp"

namespace eqm {

// Site (u,v): u horizontal in [0,W), v vertical in [0,H). Flat site index is
// v*W + u and component index is site*D + t, so "lowest flat index" ties and
// (v,u)-lexicographic ordering agree everywhere.
struct FeatureField {
  int h = 0, w = 0, d = 0;
  FieldGeometry geom;
  std::vector<double> data;

  FeatureField() = default;
  FeatureField(int h_, int w_, int d_);

  int sites() const { return h * w; }
  int components() const { return h * w * d; }
  int site_index(int u, int v) const { return v * w + u; }

  double& at(int u, int v, int t) { return data[std::size_t((v * w + u) * d + t)]; }
  double at(int u, int v, int t) const { return data[std::size_t((v * w + u) * d + t)]; }
};

// Binary format, magic "EQF1": H, W, D as little-endian u32; geometry as
// f64 sx, sy, ox, oy; then H*W*D f64 in u-major order (v faster, channel
// innermost).
void save_field(const FeatureField& f, const std::string& path);
FeatureField load_field(const std::string& path);

enum class FieldMetric { l2, hellinger, chi2 };
FieldMetric parse_metric(const std::string& name);

// Distance between two fields: per-site distance over channels, averaged
// over sites. hellinger/chi2 require nonnegative entries (eps 1e-10 guards
// the chi2 denominator).
double field_distance(const FeatureField& f1, const FeatureField& f2, FieldMetric metric);

// Same, but only over the listed flat site indices.
double field_distance(const FeatureField& f1, const FeatureField& f2, FieldMetric metric,
                      const std::vector<int>& sites);

// Mean per-site L2 norm (distance to the zero field) over the given sites.
double field_norm(const FeatureField& f, const std::vector<int>& sites);

}  // namespace eqm
