#include "hog.hpp"

#include <cmath>

#include "common.hpp"

namespace eqm {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kClamp = 0.2;
constexpr double kOrientScale = 0.5;
constexpr double kTextureScale = 0.2357;  // ~ 1/sqrt(18)
constexpr double kEps = 1e-10;

}  // namespace

double hog_orientation_ceiling() { return 4.0 * kOrientScale * kClamp; }
double hog_texture_ceiling() { return 18.0 * kTextureScale * kClamp; }

FeatureField extract_hog(const Image& img, const HogConfig& cfg) {
  const int cell = cfg.cell;
  const int k = cfg.orientations;
  require(cell >= 2, Errc::invalid_argument, "extract_hog: cell must be >= 2");
  require(k >= 2, Errc::invalid_argument, "extract_hog: need at least 2 orientations");
  const int wc = img.width / cell, hc = img.height / cell;
  require(wc >= 1 && hc >= 1, Errc::invalid_argument, "extract_hog: image smaller than one cell");
  const int cw = wc * cell, ch = hc * cell;
  const int crop_x = (img.width - cw) / 2, crop_y = (img.height - ch) / 2;

  // Signed orientation histogram per cell, 2k bins.
  std::vector<double> hist(std::size_t(hc) * std::size_t(wc) * std::size_t(2 * k), 0.0);
  auto hslot = [&](int cu, int cv, int bin) -> double& {
    return hist[std::size_t((cv * wc + cu) * 2 * k + bin)];
  };

  for (int y = 0; y < ch; ++y) {
    for (int x = 0; x < cw; ++x) {
      // Central differences clamped to the cropped region; for a color
      // image the channel with the largest magnitude wins.
      int xm = x > 0 ? x - 1 : 0, xp = x < cw - 1 ? x + 1 : cw - 1;
      int ym = y > 0 ? y - 1 : 0, yp = y < ch - 1 ? y + 1 : ch - 1;
      double dx = 0.0, dy = 0.0, best = -1.0;
      for (int c = 0; c < img.channels; ++c) {
        double gx = 0.5 * (img.at(crop_x + xp, crop_y + y, c) - img.at(crop_x + xm, crop_y + y, c));
        double gy = 0.5 * (img.at(crop_x + x, crop_y + yp, c) - img.at(crop_x + x, crop_y + ym, c));
        double m2 = gx * gx + gy * gy;
        if (m2 > best) {
          best = m2;
          dx = gx;
          dy = gy;
        }
      }
      double mag = std::sqrt(dx * dx + dy * dy);
      if (mag == 0.0) continue;
      // Signed orientation in bin units, [0, 2k).
      double b = std::atan2(dy, dx) * double(k) / kPi;
      b = std::fmod(b + 2.0 * k, 2.0 * k);
      int o0 = int(b);
      double fo = b - o0;
      int o1 = (o0 + 1) % (2 * k);
      // Spatial bilinear over the four nearest cells; out-of-range cells
      // clamp to the border cell, which keeps flips exact.
      double cu = (x + 0.5) / double(cell) - 0.5;
      double cv = (y + 0.5) / double(cell) - 0.5;
      int u0 = int(std::floor(cu)), v0 = int(std::floor(cv));
      double fu = cu - u0, fv = cv - v0;
      for (int du = 0; du <= 1; ++du) {
        int u = u0 + du;
        double wu = du ? fu : 1.0 - fu;
        int uc = u < 0 ? 0 : (u >= wc ? wc - 1 : u);
        for (int dv = 0; dv <= 1; ++dv) {
          int v = v0 + dv;
          double wv = dv ? fv : 1.0 - fv;
          int vc = v < 0 ? 0 : (v >= hc ? hc - 1 : v);
          double w = wu * wv * mag;
          hslot(uc, vc, o0) += w * (1.0 - fo);
          hslot(uc, vc, o1) += w * fo;
        }
      }
    }
  }

  // Per-cell gradient energy of the insensitive histogram.
  std::vector<double> energy(std::size_t(hc) * std::size_t(wc), 0.0);
  for (int cv = 0; cv < hc; ++cv)
    for (int cu = 0; cu < wc; ++cu) {
      double e = 0.0;
      for (int o = 0; o < k; ++o) {
        double s = hslot(cu, cv, o) + hslot(cu, cv, o + k);
        e += s * s;
      }
      energy[std::size_t(cv * wc + cu)] = e;
    }
  auto energy_at = [&](int cu, int cv) {
    cu = cu < 0 ? 0 : (cu >= wc ? wc - 1 : cu);
    cv = cv < 0 ? 0 : (cv >= hc ? hc - 1 : cv);
    return energy[std::size_t(cv * wc + cu)];
  };

  FeatureField out(hc, wc, hog_dim(cfg));
  out.geom.sx = out.geom.sy = double(cell);
  out.geom.ox = crop_x + 0.5 * (cell - 1);
  out.geom.oy = crop_y + 0.5 * (cell - 1);
  for (int cv = 0; cv < hc; ++cv) {
    for (int cu = 0; cu < wc; ++cu) {
      // Block normalizers: up-left, up-right, down-left, down-right.
      double n[4];
      int idx = 0;
      for (int dv = -1; dv <= 1; dv += 2)
        for (int du = -1; du <= 1; du += 2) {
          double e = energy_at(cu, cv) + energy_at(cu + du, cv) + energy_at(cu, cv + dv) +
                     energy_at(cu + du, cv + dv);
          n[idx++] = 1.0 / std::sqrt(e + kEps);
        }
      double texture[4] = {0.0, 0.0, 0.0, 0.0};
      for (int o = 0; o < 2 * k; ++o) {
        double h = hslot(cu, cv, o);
        double acc = 0.0;
        for (int i = 0; i < 4; ++i) {
          double clipped = std::min(kClamp, h * n[i]);
          acc += clipped;
          texture[i] += clipped;
        }
        out.at(cu, cv, o) = kOrientScale * acc;
      }
      for (int o = 0; o < k; ++o) {
        double h = hslot(cu, cv, o) + hslot(cu, cv, o + k);
        double acc = 0.0;
        for (int i = 0; i < 4; ++i) acc += std::min(kClamp, h * n[i]);
        out.at(cu, cv, 2 * k + o) = kOrientScale * acc;
      }
      for (int i = 0; i < 4; ++i) out.at(cu, cv, 3 * k + i) = kTextureScale * texture[i];
    }
  }
  return out;
}

std::vector<int> hog_channel_permutation(const HogConfig& cfg, const std::string& g) {
  const int k = cfg.orientations;
  const int d = hog_dim(cfg);
  std::vector<int> table(static_cast<std::size_t>(d));
  for (int t = 0; t < d; ++t) table[std::size_t(t)] = t;
  auto sens = [&](int o) { return o; };
  auto ins = [&](int o) { return 2 * k + o; };
  auto tex = [&](int i) { return 3 * k + i; };
  if (g == "identity") return table;
  if (g == "hflip") {
    // Gradient angle maps to pi - theta: signed bin o -> (k - o) mod 2k.
    for (int o = 0; o < 2 * k; ++o) table[std::size_t(sens(o))] = sens(((k - o) % (2 * k) + 2 * k) % (2 * k));
    for (int o = 0; o < k; ++o) table[std::size_t(ins(o))] = ins((k - o) % k);
    table[std::size_t(tex(0))] = tex(1);
    table[std::size_t(tex(1))] = tex(0);
    table[std::size_t(tex(2))] = tex(3);
    table[std::size_t(tex(3))] = tex(2);
    return table;
  }
  if (g == "vflip") {
    // theta -> -theta: o -> (2k - o) mod 2k.
    for (int o = 0; o < 2 * k; ++o) table[std::size_t(sens(o))] = sens((2 * k - o) % (2 * k));
    for (int o = 0; o < k; ++o) table[std::size_t(ins(o))] = ins((k - o) % k);
    table[std::size_t(tex(0))] = tex(2);
    table[std::size_t(tex(1))] = tex(3);
    table[std::size_t(tex(2))] = tex(0);
    table[std::size_t(tex(3))] = tex(1);
    return table;
  }
  if (g == "rot180") {
    // theta -> theta + pi: o -> (o + k) mod 2k; insensitive unchanged.
    for (int o = 0; o < 2 * k; ++o) table[std::size_t(sens(o))] = sens((o + k) % (2 * k));
    table[std::size_t(tex(0))] = tex(3);
    table[std::size_t(tex(1))] = tex(2);
    table[std::size_t(tex(2))] = tex(1);
    table[std::size_t(tex(3))] = tex(0);
    return table;
  }
  fail(Errc::unsupported,
       "hog_channel_permutation: no exact channel permutation for '" + g +
           "' (rot90 would shift signed bins by K/2 = " + std::to_string(k / 2.0) + ")");
}

EquivariantMap hog_permutation(int grid_h, int grid_w, const HogConfig& cfg,
                               const std::string& g) {
  require(grid_h > 0 && grid_w > 0, Errc::invalid_argument, "hog_permutation: bad grid");
  std::vector<int> chan = hog_channel_permutation(cfg, g);
  const int d = hog_dim(cfg);
  EquivariantMap map;
  map.out_h = map.in_h = grid_h;
  map.out_w = map.in_w = grid_w;
  map.out_d = map.in_d = d;
  map.method = "analytic";
  map.m = 1;
  map.k = 1;
  FieldGeometry geom;
  geom.sx = geom.sy = double(cfg.cell);
  geom.ox = geom.oy = 0.5 * (cfg.cell - 1);
  map.out_geom = map.in_geom = geom;
  int img_w = grid_w * cfg.cell, img_h = grid_h * cfg.cell;
  map.g = parse_transform(g, img_w, img_h);
  map.rows.assign(std::size_t(grid_h * grid_w * d), {});
  map.bias.assign(map.rows.size(), 0.0);
  map.valid_sites.reserve(std::size_t(grid_h * grid_w));
  bool fx = (g == "hflip" || g == "rot180");
  bool fy = (g == "vflip" || g == "rot180");
  for (int v = 0; v < grid_h; ++v) {
    for (int u = 0; u < grid_w; ++u) {
      map.valid_sites.push_back(v * grid_w + u);
      int su = fx ? grid_w - 1 - u : u;
      int sv = fy ? grid_h - 1 - v : v;
      for (int t = 0; t < d; ++t) {
        std::size_t r = std::size_t((v * grid_w + u) * d + t);
        map.rows[r].push_back({std::uint32_t((sv * grid_w + su) * d + chan[std::size_t(t)]), 1.0});
      }
    }
  }
  return map;
}

}  // namespace eqm
