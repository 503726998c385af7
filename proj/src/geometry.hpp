// Planar affine transforms and feature-grid geometry.
#pragma once

#include <array>
#include <string>

namespace eqm {

struct Vec2 {
  double x = 0.0, y = 0.0;
};

// Affine map of image coordinates: (x,y) -> (a x + b y + tx, c x + d y + ty).
// Pixel centers sit at integer coordinates; an image of width W is centered
// at x = (W-1)/2. Flips and quarter-turn rotations about such centers have
// exactly representable matrix entries, which the exactness tests rely on.
struct Affine2 {
  double a = 1.0, b = 0.0, tx = 0.0;
  double c = 0.0, d = 1.0, ty = 0.0;

  Vec2 apply(Vec2 p) const { return {a * p.x + b * p.y + tx, c * p.x + d * p.y + ty}; }

  static Affine2 identity() { return {}; }
  static Affine2 translation(double dx, double dy);
  // Angle in degrees, counterclockwise in (x,y) with y pointing down the
  // rows; multiples of 90 use exact {0, +/-1} entries.
  static Affine2 rotation_deg(double deg, Vec2 center);
  static Affine2 scaling(double sx, double sy, Vec2 center);
  static Affine2 shear_x(double k, Vec2 center);
  static Affine2 hflip(Vec2 center);
  static Affine2 vflip(Vec2 center);
};

Affine2 compose(const Affine2& g2, const Affine2& g1);  // g2 after g1
Affine2 inverse(const Affine2& g);
double det(const Affine2& g);
bool approx_equal(const Affine2& g1, const Affine2& g2, double tol);
bool is_identity(const Affine2& g, double tol);

// Center of a width x height image in pixel-center coordinates.
Vec2 image_center(int width, int height);

// Parses a transform spec string relative to a width x height image:
//   "identity" | "hflip" | "vflip" | "rot90" | "rot180" | "rot:<deg>" |
//   "scale:<s>" | "affine:a,b,tx,c,d,ty"
// Throws Errc::invalid_argument on anything else.
Affine2 parse_transform(const std::string& spec, int width, int height);

// Serializes to the row-major 2x3 array used in JSON headers.
std::array<double, 6> to_array(const Affine2& g);
Affine2 from_array(const std::array<double, 6>& m);

// Affine map from feature-grid indices (u,v) to image coordinates:
// x = ox + sx u, y = oy + sy v. Composed through network layers.
struct FieldGeometry {
  double sx = 1.0, sy = 1.0;
  double ox = 0.0, oy = 0.0;

  Vec2 to_image(double u, double v) const { return {ox + sx * u, oy + sy * v}; }
  Vec2 from_image(Vec2 p) const { return {(p.x - ox) / sx, (p.y - oy) / sy}; }

  // Geometry after a sliding window of size k, padding p, stride s.
  FieldGeometry after_window(int k, int pad, int stride) const;
};

// Fractional input-grid coordinates of the site that feeds output site (u,v)
// under transform g: p_in^{-1}(g^{-1}(p_out(u,v))).
Vec2 backproject(const FieldGeometry& p_out, const Affine2& g, const FieldGeometry& p_in,
                 double u, double v);

}  // namespace eqm
