#include "geometry.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>

#include "common.hpp"

namespace eqm {

namespace {

// Linear part applied around a center point: T(c) L T(-c).
Affine2 about_center(double a, double b, double c, double d, Vec2 ctr) {
  Affine2 g;
  g.a = a;
  g.b = b;
  g.c = c;
  g.d = d;
  g.tx = ctr.x - (a * ctr.x + b * ctr.y);
  g.ty = ctr.y - (c * ctr.x + d * ctr.y);
  return g;
}

}  // namespace

Affine2 Affine2::translation(double dx, double dy) {
  Affine2 g;
  g.tx = dx;
  g.ty = dy;
  return g;
}

Affine2 Affine2::rotation_deg(double deg, Vec2 center) {
  double ca, sa;
  double r = std::fmod(deg, 360.0);
  if (r < 0) r += 360.0;
  // Quarter turns get exact entries; cos(pi/2) in doubles is 6e-17, not 0.
  if (r == 0.0) {
    ca = 1.0;
    sa = 0.0;
  } else if (r == 90.0) {
    ca = 0.0;
    sa = 1.0;
  } else if (r == 180.0) {
    ca = -1.0;
    sa = 0.0;
  } else if (r == 270.0) {
    ca = 0.0;
    sa = -1.0;
  } else {
    double rad = deg * (3.14159265358979323846 / 180.0);
    ca = std::cos(rad);
    sa = std::sin(rad);
  }
  return about_center(ca, -sa, sa, ca, center);
}

Affine2 Affine2::scaling(double sx, double sy, Vec2 center) {
  require(sx != 0.0 && sy != 0.0, Errc::invalid_argument, "scaling: zero factor");
  return about_center(sx, 0.0, 0.0, sy, center);
}

Affine2 Affine2::shear_x(double k, Vec2 center) { return about_center(1.0, k, 0.0, 1.0, center); }

Affine2 Affine2::hflip(Vec2 center) { return about_center(-1.0, 0.0, 0.0, 1.0, center); }

Affine2 Affine2::vflip(Vec2 center) { return about_center(1.0, 0.0, 0.0, -1.0, center); }

Affine2 compose(const Affine2& g2, const Affine2& g1) {
  Affine2 g;
  g.a = g2.a * g1.a + g2.b * g1.c;
  g.b = g2.a * g1.b + g2.b * g1.d;
  g.c = g2.c * g1.a + g2.d * g1.c;
  g.d = g2.c * g1.b + g2.d * g1.d;
  g.tx = g2.a * g1.tx + g2.b * g1.ty + g2.tx;
  g.ty = g2.c * g1.tx + g2.d * g1.ty + g2.ty;
  return g;
}

double det(const Affine2& g) { return g.a * g.d - g.b * g.c; }

Affine2 inverse(const Affine2& g) {
  double dt = det(g);
  require(std::abs(dt) > 1e-12, Errc::invalid_argument, "inverse: transform is singular");
  Affine2 inv;
  inv.a = g.d / dt;
  inv.b = -g.b / dt;
  inv.c = -g.c / dt;
  inv.d = g.a / dt;
  inv.tx = -(inv.a * g.tx + inv.b * g.ty);
  inv.ty = -(inv.c * g.tx + inv.d * g.ty);
  return inv;
}

bool approx_equal(const Affine2& g1, const Affine2& g2, double tol) {
  return std::abs(g1.a - g2.a) <= tol && std::abs(g1.b - g2.b) <= tol &&
         std::abs(g1.c - g2.c) <= tol && std::abs(g1.d - g2.d) <= tol &&
         std::abs(g1.tx - g2.tx) <= tol && std::abs(g1.ty - g2.ty) <= tol;
}

bool is_identity(const Affine2& g, double tol) { return approx_equal(g, Affine2::identity(), tol); }

Vec2 image_center(int width, int height) {
  return {0.5 * double(width - 1), 0.5 * double(height - 1)};
}

Affine2 parse_transform(const std::string& spec, int width, int height) {
  require(width > 0 && height > 0, Errc::invalid_argument, "parse_transform: bad image size");
  Vec2 ctr = image_center(width, height);
  if (spec == "identity") return Affine2::identity();
  if (spec == "hflip") return Affine2::hflip(ctr);
  if (spec == "vflip") return Affine2::vflip(ctr);
  if (spec == "rot90") return Affine2::rotation_deg(90.0, ctr);
  if (spec == "rot180") return Affine2::rotation_deg(180.0, ctr);
  if (spec == "rot270") return Affine2::rotation_deg(270.0, ctr);
  auto starts = [&](const char* p) { return spec.rfind(p, 0) == 0; };
  if (starts("rot:")) {
    char* end = nullptr;
    double deg = std::strtod(spec.c_str() + 4, &end);
    require(end && *end == '\0' && end != spec.c_str() + 4, Errc::invalid_argument,
            "parse_transform: bad angle in '" + spec + "'");
    return Affine2::rotation_deg(deg, ctr);
  }
  if (starts("scale:")) {
    char* end = nullptr;
    double s = std::strtod(spec.c_str() + 6, &end);
    require(end && *end == '\0' && s > 0.0, Errc::invalid_argument,
            "parse_transform: bad scale in '" + spec + "'");
    return Affine2::scaling(s, s, ctr);
  }
  if (starts("affine:")) {
    std::array<double, 6> m{};
    const char* p = spec.c_str() + 7;
    for (int i = 0; i < 6; ++i) {
      char* end = nullptr;
      m[std::size_t(i)] = std::strtod(p, &end);
      require(end != p, Errc::invalid_argument, "parse_transform: bad affine in '" + spec + "'");
      p = (*end == ',') ? end + 1 : end;
    }
    require(*p == '\0', Errc::invalid_argument, "parse_transform: trailing junk in '" + spec + "'");
    Affine2 g = from_array(m);
    require(std::abs(det(g)) > 1e-12, Errc::invalid_argument, "parse_transform: singular affine");
    return g;
  }
  fail(Errc::invalid_argument, "parse_transform: unknown spec '" + spec + "'");
}

std::array<double, 6> to_array(const Affine2& g) { return {g.a, g.b, g.tx, g.c, g.d, g.ty}; }

Affine2 from_array(const std::array<double, 6>& m) {
  Affine2 g;
  g.a = m[0];
  g.b = m[1];
  g.tx = m[2];
  g.c = m[3];
  g.d = m[4];
  g.ty = m[5];
  return g;
}

FieldGeometry FieldGeometry::after_window(int k, int pad, int stride) const {
  require(k >= 1 && pad >= 0 && stride >= 1, Errc::invalid_argument,
          "after_window: bad window parameters");
  FieldGeometry g;
  g.sx = sx * stride;
  g.sy = sy * stride;
  g.ox = ox + sx * (0.5 * (k - 1) - pad);
  g.oy = oy + sy * (0.5 * (k - 1) - pad);
  return g;
}

Vec2 backproject(const FieldGeometry& p_out, const Affine2& g, const FieldGeometry& p_in,
                 double u, double v) {
  Vec2 img = p_out.to_image(u, v);
  Vec2 src = inverse(g).apply(img);
  return p_in.from_image(src);
}

}  // namespace eqm
