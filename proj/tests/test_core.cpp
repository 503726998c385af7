// Geometry, images, synthetic data, fields, and the shared RNG.
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>

#include "common.hpp"
#include "field.hpp"
#include "geometry.hpp"
#include "image.hpp"
#include "synth.hpp"

using namespace eqm;

namespace {

std::string tmp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

Image random_image(Rng& rng, int w, int h, int c) {
  Image img(w, h, c);
  for (double& v : img.data) v = rng.uniform();
  return img;
}

}  // namespace

TEST_CASE("affine compose and inverse") {
  Affine2 g1 = Affine2::rotation_deg(33.0, {5.0, 7.0});
  Affine2 g2 = Affine2::scaling(1.5, 0.75, {2.0, 2.0});
  Affine2 gc = compose(g2, g1);
  Vec2 p{1.25, -0.5};
  Vec2 a = gc.apply(p);
  Vec2 b = g2.apply(g1.apply(p));
  CHECK(a.x == doctest::Approx(b.x).epsilon(1e-12));
  CHECK(a.y == doctest::Approx(b.y).epsilon(1e-12));
  Affine2 gi = compose(inverse(gc), gc);
  CHECK(is_identity(gi, 1e-9));
  CHECK(det(Affine2::hflip({3.0, 3.0})) == doctest::Approx(-1.0));
}

TEST_CASE("quarter-turn rotations have exact entries") {
  Vec2 c = image_center(8, 8);
  Affine2 r90 = Affine2::rotation_deg(90.0, c);
  CHECK(r90.a == 0.0);
  CHECK(r90.d == 0.0);
  CHECK(std::abs(r90.b) == 1.0);
  CHECK(std::abs(r90.c) == 1.0);
  // Pinned orientation: +90 deg sends pixel (row i, col j) to (row j, N-1-i).
  Vec2 q = r90.apply({1.0, 0.0});  // col 1, row 0
  CHECK(q.x == doctest::Approx(7.0));  // N-1-i = 7
  CHECK(q.y == doctest::Approx(1.0));  // row j = 1
  Affine2 r180 = Affine2::rotation_deg(180.0, c);
  Vec2 q2 = r180.apply({0.0, 0.0});
  CHECK(q2.x == doctest::Approx(7.0));
  CHECK(q2.y == doctest::Approx(7.0));
}

TEST_CASE("parse_transform specs") {
  CHECK(is_identity(parse_transform("identity", 10, 10), 0.0));
  CHECK(approx_equal(parse_transform("hflip", 10, 12), Affine2::hflip(image_center(10, 12)),
                     1e-12));
  CHECK(approx_equal(parse_transform("rot180", 9, 9),
                     Affine2::rotation_deg(180.0, image_center(9, 9)), 1e-12));
  CHECK(approx_equal(parse_transform("rot:45", 8, 8),
                     Affine2::rotation_deg(45.0, image_center(8, 8)), 1e-12));
  Affine2 s = parse_transform("scale:1.25", 8, 8);
  CHECK(s.a == doctest::Approx(1.25));
  Affine2 m = parse_transform("affine:1,0,2,0,1,-3", 8, 8);
  CHECK(m.tx == doctest::Approx(2.0));
  CHECK(m.ty == doctest::Approx(-3.0));
  CHECK_THROWS_AS(parse_transform("swirl", 8, 8), Error);
}

TEST_CASE("warp by lattice transform then inverse is bit-exact") {
  Rng rng(7);
  Image img = random_image(rng, 16, 16, 1);
  for (const char* spec : {"hflip", "vflip", "rot90", "rot180", "rot270"}) {
    Affine2 g = parse_transform(spec, img.width, img.height);
    Image back = warp(warp(img, g, Interp::bilinear, Pad::zero), inverse(g), Interp::bilinear,
                      Pad::zero);
    REQUIRE(back.data.size() == img.data.size());
    for (std::size_t i = 0; i < img.data.size(); ++i) {
      if (back.data[i] != img.data[i]) {
        CHECK(back.data[i] == img.data[i]);
        return;
      }
    }
  }
  Affine2 t = Affine2::translation(3.0, -2.0);
  Image back = warp(warp(img, t, Interp::bilinear, Pad::replicate), inverse(t), Interp::bilinear,
                    Pad::replicate);
  // Interior pixels (border was padded) survive the round trip exactly.
  for (int y = 4; y < 12; ++y)
    for (int x = 4; x < 12; ++x) CHECK(back.at(x, y, 0) == img.at(x, y, 0));
}

TEST_CASE("warp is deterministic") {
  Rng rng(9);
  Image img = random_image(rng, 12, 12, 1);
  Affine2 g = Affine2::rotation_deg(31.0, image_center(12, 12));
  Image a = warp(img, g, Interp::bilinear, Pad::replicate);
  Image b = warp(img, g, Interp::bilinear, Pad::replicate);
  CHECK(a.data == b.data);
}

TEST_CASE("grayscale weights") {
  Image img(2, 1, 3);
  img.at(0, 0, 0) = 1.0;  // pure red
  img.at(1, 0, 2) = 1.0;  // pure blue
  Image g = grayscale(img);
  CHECK(g.channels == 1);
  CHECK(g.at(0, 0, 0) == doctest::Approx(0.299));
  CHECK(g.at(1, 0, 0) == doctest::Approx(0.114));
}

TEST_CASE("pnm round trip") {
  Rng rng(11);
  Image img = random_image(rng, 9, 5, 1);
  // Quantize so the 8-bit file is lossless.
  for (double& v : img.data) v = std::round(v * 255.0) / 255.0;
  std::string path = tmp_path("eqm_test_img.pgm");
  save_pnm(img, path);
  Image back = load_pnm(path);
  CHECK(back.width == 9);
  CHECK(back.height == 5);
  CHECK(back.channels == 1);
  for (std::size_t i = 0; i < img.data.size(); ++i)
    CHECK(back.data[i] == doctest::Approx(img.data[i]).epsilon(1e-12));
  Image rgb = random_image(rng, 4, 6, 3);
  std::string path3 = tmp_path("eqm_test_img.ppm");
  save_pnm(rgb, path3);
  CHECK(load_pnm(path3).channels == 3);
  CHECK_THROWS_AS(load_pnm(tmp_path("eqm_missing.pgm")), Error);
  std::filesystem::remove(path);
  std::filesystem::remove(path3);
}

TEST_CASE("synthetic classification set is reproducible and labeled") {
  Dataset a = synth_classification_set(42, 12, 2);
  Dataset b = synth_classification_set(42, 12, 2);
  REQUIRE(a.items.size() == 12);
  for (std::size_t i = 0; i < a.items.size(); ++i) {
    CHECK(a.items[i].image.data == b.items[i].image.data);
    CHECK(a.items[i].cls == int(i) % 2);
    CHECK(a.items[i].image.width == 64);
    CHECK(a.items[i].image.height == 64);
  }
  Dataset c = synth_classification_set(43, 2, 2);
  CHECK(c.items[0].image.data != a.items[0].image.data);
}

TEST_CASE("splits partition the dataset round-robin") {
  Dataset ds = synth_classification_set(1, 20, 2);
  assign_splits(ds, 8);
  Dataset train = split_of(ds, "train");
  Dataset test = split_of(ds, "test");
  CHECK(train.items.size() == 12);
  CHECK(test.items.size() == 8);
  int c0 = 0;
  for (const auto& it : test.items) c0 += it.cls == 0 ? 1 : 0;
  CHECK(c0 == 4);  // class balance preserved in the tail
}

TEST_CASE("pose dataset records its ground truth") {
  Dataset ds = synth_pose_set(5, 6, "rotation");
  CHECK(ds.kind == "pose-rotation");
  Image tmpl = pose_template();
  for (const auto& it : ds.items) {
    REQUIRE(it.pose.has_value());
    CHECK(it.pose_angle >= 0.0);
    CHECK(it.pose_angle < 360.0);
    Image expect = warp(tmpl, *it.pose, Interp::bilinear, Pad::replicate);
    CHECK(expect.data == it.image.data);
  }
  Dataset aff = synth_pose_set(5, 4, "affine");
  auto family = affine_pose_family(64);
  CHECK(family.size() == 10);
  CHECK(is_identity(family[0], 0.0));
  for (const auto& it : aff.items) {
    REQUIRE(it.pose_index >= 0);
    REQUIRE(it.pose_index < 10);
    CHECK(approx_equal(*it.pose, family[std::size_t(it.pose_index)], 0.0));
  }
}

TEST_CASE("dataset directory round trip") {
  Dataset ds = synth_classification_set(3, 6, 3);
  assign_splits(ds, 2);
  std::string dir = tmp_path("eqm_test_ds");
  std::filesystem::remove_all(dir);
  save_dataset(ds, dir);
  Dataset back = load_dataset(dir);
  REQUIRE(back.items.size() == ds.items.size());
  CHECK(back.kind == ds.kind);
  CHECK(back.seed == ds.seed);
  for (std::size_t i = 0; i < ds.items.size(); ++i) {
    CHECK(back.items[i].cls == ds.items[i].cls);
    CHECK(back.items[i].split == ds.items[i].split);
    // PGM quantization: loaded pixels sit within half a step of the source.
    for (std::size_t j = 0; j < ds.items[i].image.data.size(); ++j)
      CHECK(std::abs(back.items[i].image.data[j] - ds.items[i].image.data[j]) <= 0.5 / 255.0 + 1e-12);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("field accessors and flat layout") {
  FeatureField f(3, 4, 2);
  CHECK(f.sites() == 12);
  CHECK(f.components() == 24);
  f.at(1, 2, 1) = 5.0;
  CHECK(f.data[std::size_t((2 * 4 + 1) * 2 + 1)] == 5.0);
  CHECK(f.site_index(1, 2) == 9);
}

TEST_CASE("field file round trip and on-disk order") {
  FeatureField f(2, 3, 2);
  f.geom = {8.0, 8.0, 3.5, 3.5};
  for (std::size_t i = 0; i < f.data.size(); ++i) f.data[i] = double(i) + 0.25;
  std::string path = tmp_path("eqm_test_field.eqf");
  save_field(f, path);
  FeatureField back = load_field(path);
  CHECK(back.h == f.h);
  CHECK(back.w == f.w);
  CHECK(back.d == f.d);
  CHECK(back.geom.sx == f.geom.sx);
  CHECK(back.geom.ox == f.geom.ox);
  CHECK(back.data == f.data);

  // On disk: u-major (v fastest among spatial, channel innermost).
  std::FILE* fp = std::fopen(path.c_str(), "rb");
  REQUIRE(fp != nullptr);
  std::fseek(fp, 4 + 3 * 4 + 4 * 8, SEEK_SET);
  std::vector<double> raw(f.data.size());
  REQUIRE(std::fread(raw.data(), 8, raw.size(), fp) == raw.size());
  std::fclose(fp);
  std::size_t i = 0;
  for (int u = 0; u < f.w; ++u)
    for (int v = 0; v < f.h; ++v)
      for (int t = 0; t < f.d; ++t) CHECK(raw[i++] == f.at(u, v, t));
  std::filesystem::remove(path);
}

TEST_CASE("field metrics") {
  FeatureField a(1, 2, 2), b(1, 2, 2);
  a.data = {1.0, 0.0, 0.25, 0.25};
  b.data = {0.0, 1.0, 0.25, 0.25};
  // Site 0: sqrt((1-0)^2 + (0-1)^2) = sqrt(2); site 1 identical -> 0.
  double h = field_distance(a, b, FieldMetric::hellinger);
  CHECK(h == doctest::Approx(0.5 * std::sqrt(2.0)));
  CHECK(field_distance(a, b, FieldMetric::l2) == doctest::Approx(0.5 * std::sqrt(2.0)));
  CHECK(field_distance(a, a, FieldMetric::chi2) == 0.0);
  std::vector<int> only1{1};
  CHECK(field_distance(a, b, FieldMetric::l2, only1) == 0.0);
  CHECK(field_norm(a, {0}) == doctest::Approx(1.0));
  CHECK(parse_metric("hellinger") == FieldMetric::hellinger);
  CHECK_THROWS_AS(parse_metric("cosine"), Error);
}

TEST_CASE("rng determinism and distribution sanity") {
  Rng a(123), b(123);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng r(5);
  double sum = 0.0;
  for (int i = 0; i < 20000; ++i) {
    double v = r.uniform();
    CHECK(v >= 0.0);
    CHECK(v < 1.0);
    sum += v;
  }
  CHECK(sum / 20000.0 == doctest::Approx(0.5).epsilon(0.02));
  double nsum = 0.0, nsq = 0.0;
  for (int i = 0; i < 20000; ++i) {
    double v = r.normal();
    nsum += v;
    nsq += v * v;
  }
  CHECK(nsum / 20000.0 == doctest::Approx(0.0).epsilon(0.05));
  CHECK(nsq / 20000.0 == doctest::Approx(1.0).epsilon(0.05));
  std::set<int> seen;
  for (int i = 0; i < 200; ++i) seen.insert(r.range(2, 5));
  CHECK(seen == std::set<int>{2, 3, 4, 5});
}

TEST_CASE("backproject matches hand composition") {
  FieldGeometry out_geom{8.0, 8.0, 3.5, 3.5};
  FieldGeometry in_geom{8.0, 8.0, 3.5, 3.5};
  Affine2 g = Affine2::rotation_deg(45.0, {31.5, 31.5});
  Vec2 p = backproject(out_geom, g, in_geom, 2.0, 3.0);
  Vec2 img = out_geom.to_image(2.0, 3.0);
  Vec2 pre = inverse(g).apply(img);
  Vec2 expect = in_geom.from_image(pre);
  CHECK(p.x == doctest::Approx(expect.x).epsilon(1e-12));
  CHECK(p.y == doctest::Approx(expect.y).epsilon(1e-12));
}

TEST_CASE("geometry window composition") {
  FieldGeometry g{1.0, 1.0, 0.0, 0.0};
  FieldGeometry after = g.after_window(6, 2, 2);
  // First window covers inputs [-2, 3]; its center is 0.5; stride doubles.
  CHECK(after.sx == doctest::Approx(2.0));
  CHECK(after.ox == doctest::Approx(0.5));
}
