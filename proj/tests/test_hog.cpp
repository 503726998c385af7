// HOG extraction and its analytic permutations.
#include <doctest.h>

#include <cmath>

#include "common.hpp"
#include "hog.hpp"
#include "image.hpp"
#include "synth.hpp"

using namespace eqm;

namespace {

double max_perm_residual(const Image& img, const HogConfig& cfg, const std::string& g) {
  FeatureField f = extract_hog(img, cfg);
  Affine2 gt = parse_transform(g, img.width, img.height);
  FeatureField fg = extract_hog(warp(img, gt, Interp::bilinear, Pad::replicate), cfg);
  EquivariantMap P = hog_permutation(f.h, f.w, cfg, g);
  FeatureField mapped = apply(P, f);
  double worst = 0.0;
  for (std::size_t i = 0; i < fg.data.size(); ++i)
    worst = std::max(worst, std::abs(fg.data[i] - mapped.data[i]));
  return worst;
}

}  // namespace

TEST_CASE("dimensions, geometry and value bounds") {
  HogConfig cfg;
  CHECK(hog_dim(cfg) == 31);
  Dataset ds = synth_classification_set(2, 3, 2);
  FeatureField f = extract_hog(ds.items[0].image, cfg);
  CHECK(f.h == 8);
  CHECK(f.w == 8);
  CHECK(f.d == 31);
  CHECK(f.geom.sx == 8.0);
  CHECK(f.geom.sy == 8.0);
  CHECK(f.geom.ox == 3.5);
  CHECK(f.geom.oy == 3.5);
  for (const Image& img : {ds.items[0].image, ds.items[1].image, ds.items[2].image}) {
    FeatureField ff = extract_hog(img, cfg);
    for (int s = 0; s < ff.sites(); ++s)
      for (int t = 0; t < ff.d; ++t) {
        double v = ff.data[std::size_t(s * ff.d + t)];
        CHECK(v >= 0.0);
        CHECK(v <= (t < 27 ? hog_orientation_ceiling() : hog_texture_ceiling()) + 1e-12);
      }
  }
  // Odd image size: the cell grid is centered inside the crop.
  Image odd(66, 66, 1);
  FeatureField fo = extract_hog(odd, cfg);
  CHECK(fo.h == 8);
  CHECK(fo.geom.ox == 4.5);
}

TEST_CASE("constant image gives zero features") {
  Image img(32, 32, 1);
  for (double& v : img.data) v = 0.37;
  FeatureField f = extract_hog(img, HogConfig{});
  for (double v : f.data) CHECK(v == 0.0);
}

TEST_CASE("horizontal ramp concentrates in signed bin 0") {
  Image img(64, 64, 1);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) img.at(x, y, 0) = double(x) / 63.0;
  FeatureField f = extract_hog(img, HogConfig{});
  const int k = 9;
  for (int s = 0; s < f.sites(); ++s) {
    const double* cell = &f.data[std::size_t(s * f.d)];
    CHECK(cell[0] > 0.0);          // sensitive bin 0 (gradient angle 0)
    CHECK(cell[2 * k] > 0.0);      // insensitive bin 0
    for (int o = 1; o < 2 * k; ++o) CHECK(cell[o] == 0.0);
    for (int o = 1; o < k; ++o) CHECK(cell[2 * k + o] == 0.0);
    for (int i = 0; i < 4; ++i) CHECK(cell[3 * k + i] > 0.0);
  }
}

TEST_CASE("translation by one cell shifts the field by one site") {
  Dataset ds = synth_classification_set(17, 1, 2);
  const Image& img = ds.items[0].image;
  HogConfig cfg;
  FeatureField fo = extract_hog(img, cfg);
  Image shifted = warp(img, Affine2::translation(double(cfg.cell), 0.0), Interp::bilinear,
                       Pad::replicate);
  FeatureField ft = extract_hog(shifted, cfg);
  // Cells near the border see padded pixels through the histogram spill or
  // the block normalizers; the shifted field needs a two-cell margin on the
  // leading edge (spill + normalizer reach) and one on the trailing edge.
  for (int v = 1; v < fo.h - 1; ++v)
    for (int u = 3; u < fo.w - 2; ++u)
      for (int t = 0; t < fo.d; ++t) CHECK(ft.at(u, v, t) == fo.at(u - 1, v, t));
}

TEST_CASE("channel permutation tables") {
  HogConfig cfg;
  const int k = 9;
  std::vector<int> id = hog_channel_permutation(cfg, "identity");
  for (int t = 0; t < 31; ++t) CHECK(id[std::size_t(t)] == t);
  std::vector<int> r = hog_channel_permutation(cfg, "rot180");
  CHECK(r[0] == k);            // signed bin 0 <- bin k
  CHECK(r[std::size_t(k)] == 0);
  CHECK(r[std::size_t(2 * k)] == 2 * k);  // insensitive unchanged
  CHECK(r[std::size_t(3 * k)] == 3 * k + 3);  // texture blocks swap diagonally
  // The supported transforms are involutions; so are their tables.
  for (const char* g : {"hflip", "vflip", "rot180"}) {
    std::vector<int> p = hog_channel_permutation(cfg, g);
    for (int t = 0; t < 31; ++t) CHECK(p[std::size_t(p[std::size_t(t)])] == t);
  }
  CHECK_THROWS_AS(hog_channel_permutation(cfg, "rot90"), Error);
  try {
    hog_channel_permutation(cfg, "rot90");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::unsupported);
  }
  CHECK_THROWS_AS(hog_permutation(4, 4, cfg, "rot90"), Error);
}

TEST_CASE("permutation maps are exact on real images") {
  Dataset ds = synth_classification_set(23, 3, 2);
  HogConfig cfg;
  for (const char* g : {"hflip", "vflip", "rot180"})
    for (const auto& item : ds.items) CHECK(max_perm_residual(item.image, cfg, g) <= 1e-10);
  // Identity map really is the identity.
  FeatureField f = extract_hog(ds.items[0].image, cfg);
  FeatureField same = apply(hog_permutation(f.h, f.w, cfg, "identity"), f);
  CHECK(same.data == f.data);
}

TEST_CASE("permutation map structure") {
  HogConfig cfg;
  EquivariantMap P = hog_permutation(5, 7, cfg, "hflip");
  validate_map(P);
  CHECK(P.method == "analytic");
  CHECK(int(P.valid_sites.size()) == 35);
  for (const auto& row : P.rows) {
    REQUIRE(row.size() == 1);
    CHECK(row[0].w == 1.0);
  }
  // Site (u,v) reads site (W-1-u, v).
  int u = 2, v = 3, t = 5;
  const auto& row = P.rows[std::size_t((v * 7 + u) * 31 + t)];
  int src_site = int(row[0].col) / 31;
  CHECK(src_site % 7 == 4);
  CHECK(src_site / 7 == 3);
}
