// Sparse affine maps between feature fields: f_out ~ A f_in + b.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "field.hpp"
#include "geometry.hpp"

namespace eqm {

struct MapEntry {
  std::uint32_t col = 0;  // input component flat index
  double w = 0.0;
};

// One row per output component (site-major, channel innermost). Sites not in
// valid_sites have empty rows and zero bias; apply() writes zeros there.
struct EquivariantMap {
  int out_h = 0, out_w = 0, out_d = 0;
  int in_h = 0, in_w = 0, in_d = 0;
  FieldGeometry out_geom, in_geom;
  Affine2 g;
  std::string method;  // "analytic" | "ls" | "rr" | "fs"
  int k = 0;           // row sparsity target (fs), 0 otherwise
  int m = 0;           // neighborhood side; 0 = unstructured
  double lambda = 0.0;
  double learn_seconds = 0.0;
  std::vector<int> valid_sites;  // ascending flat out-site indices
  std::vector<std::vector<MapEntry>> rows;
  std::vector<double> bias;

  int out_components() const { return out_h * out_w * out_d; }
  int in_components() const { return in_h * in_w * in_d; }
  std::vector<std::uint8_t> valid_mask() const;  // per out site
};

// Structural checks: row/bias counts, column ranges, dead rows empty.
void validate_map(const EquivariantMap& map);

FeatureField apply(const EquivariantMap& map, const FeatureField& f);

// Adjoint of the linear part: in_field[col] += w_out[row] * coeff, plus the
// scalar <w_out, bias> needed to keep affine scores exact.
struct AdjointResult {
  FeatureField field;
  double offset = 0.0;
};
AdjointResult apply_adjoint(const EquivariantMap& map, const FeatureField& w_out);

// File format, magic "EQM1": u32 JSON header length + header, u64 triplet
// count + (u32 row, u32 col, f64 w) sorted by row, u32 bias count + f64
// biases for every output component.
void save_map(const EquivariantMap& map, const std::string& path);
EquivariantMap load_map(const std::string& path);

// The m^2 in-bounds input sites nearest to the back-projection of output
// site (u,v) under g (squared Euclidean distance in index units, ties by
// (v,u) i.e. lowest flat index). sites are sorted ascending by flat index;
// anchor is the single nearest site. m <= 0 means unstructured: all sites.
struct Neighborhood {
  std::vector<int> sites;
  Vec2 point;      // fractional back-projected input coordinates
  int anchor = -1;
};
Neighborhood neighborhood(const FieldGeometry& out_geom, const FieldGeometry& in_geom, int in_h,
                          int in_w, const Affine2& g, int m, int u, int v);

// True when the m^2 nearest lattice sites (unclipped) all fall inside the
// grid, i.e. the neighborhood needed no border clipping. m <= 0 behaves as
// m = 1 (nearest site in bounds).
bool neighborhood_interior(const FieldGeometry& out_geom, const FieldGeometry& in_geom, int in_h,
                           int in_w, const Affine2& g, int m, int u, int v);

}  // namespace eqm
