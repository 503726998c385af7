// Transformation layers, map <-> layer conversion, task training, stitching.
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <vector>

#include "common.hpp"
#include "emap.hpp"
#include "hog.hpp"
#include "net.hpp"
#include "stitch.hpp"
#include "synth.hpp"
#include "translayer.hpp"

using namespace eqm;

namespace {

std::string tmp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / name;
  std::filesystem::create_directories(p);
  return p.string();
}

FeatureField rand_field(Rng& rng, int h, int w, int d) {
  FeatureField f(h, w, d);
  for (double& v : f.data) v = rng.normal();
  return f;
}

// Geometry whose grid midpoint coincides with the center of a (w*s) x (h*s)
// image, so flips and quarter turns permute sites exactly.
FieldGeometry centered_geom(int h, int w, double s) {
  double cx = (w * s - 1.0) / 2.0, cy = (h * s - 1.0) / 2.0;
  return {s, s, cx - s * (w - 1) / 2.0, cy - s * (h - 1) / 2.0};
}

// The linear map a translayer computes, reconstructed by probing it with
// basis fields. Biases come from the zero field.
EquivariantMap probe_translayer(const TransformationLayer& layer, int h, int w) {
  EquivariantMap map;
  map.out_h = map.in_h = h;
  map.out_w = map.in_w = w;
  map.out_d = map.in_d = layer.d;
  map.out_geom = map.in_geom = layer.geom;
  map.g = layer.g;
  map.method = "analytic";
  map.m = layer.m;
  FeatureField zero(h, w, layer.d);
  zero.geom = layer.geom;
  FeatureField base = translayer_apply(layer, zero);
  for (int s = 0; s < h * w; ++s)
    if (layer.table.live[std::size_t(s)]) map.valid_sites.push_back(s);
  map.rows.assign(std::size_t(map.out_components()), {});
  map.bias.assign(std::size_t(map.out_components()), 0.0);
  for (int s : map.valid_sites)
    for (int t = 0; t < layer.d; ++t) map.bias[std::size_t(s * layer.d + t)] = base.data[std::size_t(s * layer.d + t)];
  for (int j = 0; j < map.in_components(); ++j) {
    FeatureField e = zero;
    e.data[std::size_t(j)] = 1.0;
    FeatureField out = translayer_apply(layer, e);
    for (int s : map.valid_sites)
      for (int t = 0; t < layer.d; ++t) {
        std::size_t r = std::size_t(s * layer.d + t);
        double c = out.data[r] - base.data[r];
        if (c != 0.0) map.rows[r].push_back({std::uint32_t(j), c});
      }
  }
  validate_map(map);
  return map;
}

}  // namespace

TEST_CASE("permutation table for exact transforms") {
  FieldGeometry geom = centered_geom(8, 8, 4.0);  // 32x32 image frame
  Vec2 c = image_center(32, 32);

  PermutationTable id = build_permutation_table(geom, 8, 8, Affine2::identity(), TableMode::round);
  for (int s = 0; s < 64; ++s) {
    REQUIRE(id.live[std::size_t(s)]);
    REQUIRE(id.entries[std::size_t(s)].size() == 1);
    CHECK(id.entries[std::size_t(s)][0].src == s);
    CHECK(id.entries[std::size_t(s)][0].w == 1.0);
  }

  PermutationTable hf = build_permutation_table(geom, 8, 8, Affine2::hflip(c), TableMode::round);
  for (int v = 0; v < 8; ++v)
    for (int u = 0; u < 8; ++u) {
      REQUIRE(hf.live[std::size_t(v * 8 + u)]);
      CHECK(hf.entries[std::size_t(v * 8 + u)][0].src == v * 8 + (7 - u));
    }

  PermutationTable r90 =
      build_permutation_table(geom, 8, 8, Affine2::rotation_deg(90.0, c), TableMode::round);
  for (int v = 0; v < 8; ++v)
    for (int u = 0; u < 8; ++u) {
      REQUIRE(r90.live[std::size_t(v * 8 + u)]);
      // g^{-1} of out site (u,v) lands on input site (v, W-1-u).
      CHECK(r90.entries[std::size_t(v * 8 + u)][0].src == (7 - u) * 8 + v);
    }

  // Exact lattice hits collapse bilinear entries to a single unit weight.
  PermutationTable bhf =
      build_permutation_table(geom, 8, 8, Affine2::hflip(c), TableMode::bilinear);
  for (int s = 0; s < 64; ++s) {
    REQUIRE(bhf.entries[std::size_t(s)].size() == 1);
    CHECK(bhf.entries[std::size_t(s)][0].w == 1.0);
    CHECK(bhf.entries[std::size_t(s)][0].src == hf.entries[std::size_t(s)][0].src);
  }
}

TEST_CASE("bilinear tables are convex and in range") {
  FieldGeometry geom = centered_geom(9, 9, 4.0);
  Affine2 g = Affine2::rotation_deg(30.0, image_center(36, 36));
  PermutationTable t = build_permutation_table(geom, 9, 9, g, TableMode::bilinear);
  int live = 0, dead = 0;
  for (int s = 0; s < 81; ++s) {
    if (!t.live[std::size_t(s)]) {
      CHECK(t.entries[std::size_t(s)].empty());
      ++dead;
      continue;
    }
    ++live;
    CHECK(int(t.entries[std::size_t(s)].size()) <= 4);
    double sum = 0.0;
    for (const PermEntry& e : t.entries[std::size_t(s)]) {
      CHECK(e.src >= 0);
      CHECK(e.src < 81);
      CHECK(e.w > 0.0);
      sum += e.w;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK(live > 0);
  CHECK(dead > 0);  // 30 degrees swings corners off the grid

  // Round mode on the same transform keeps single entries.
  PermutationTable r = build_permutation_table(geom, 9, 9, g, TableMode::round);
  for (int s = 0; s < 81; ++s)
    if (r.live[std::size_t(s)]) CHECK(r.entries[std::size_t(s)].size() == 1);
}

TEST_CASE("permute_sites and identity-initialized layers") {
  FieldGeometry geom = centered_geom(6, 6, 4.0);
  Rng rng(41);
  FeatureField f = rand_field(rng, 6, 6, 3);
  f.geom = geom;

  PermutationTable hf =
      build_permutation_table(geom, 6, 6, Affine2::hflip(image_center(24, 24)), TableMode::round);
  FeatureField pf = permute_sites(hf, f);
  for (int v = 0; v < 6; ++v)
    for (int u = 0; u < 6; ++u)
      for (int t = 0; t < 3; ++t) CHECK(pf.at(u, v, t) == f.at(5 - u, v, t));

  // Identity-initialized filters leave the permuted field untouched; with an
  // identity table the layer is a no-op.
  TransformationLayer lid =
      make_translayer(geom, 6, 6, 3, Affine2::identity(), 3, TableMode::round);
  FeatureField out = translayer_apply(lid, f);
  for (std::size_t i = 0; i < f.data.size(); ++i) CHECK(out.data[i] == f.data[i]);

  TransformationLayer lhf =
      make_translayer(geom, 6, 6, 3, Affine2::hflip(image_center(24, 24)), 3, TableMode::round);
  FeatureField out2 = translayer_apply(lhf, f);
  for (std::size_t i = 0; i < pf.data.size(); ++i) CHECK(out2.data[i] == pf.data[i]);
}

TEST_CASE("translayer gradient check in both table modes") {
  FieldGeometry geom = centered_geom(6, 6, 4.0);
  Affine2 g = Affine2::rotation_deg(40.0, image_center(24, 24));
  Rng rng(42);
  for (TableMode mode : {TableMode::round, TableMode::bilinear}) {
    TransformationLayer layer = make_translayer(geom, 6, 6, 2, g, 3, mode);
    for (double& v : layer.conv.w) v += 0.3 * rng.normal();
    for (double& v : layer.conv.b) v = 0.1 * rng.normal();
    CHECK(grad_check_translayer(layer, 6, 6, 43) < 1e-4);
  }
}

TEST_CASE("map_to_translayer inverts translayer probing") {
  FieldGeometry geom = centered_geom(6, 6, 4.0);
  Affine2 g = Affine2::hflip(image_center(24, 24));
  TransformationLayer layer = make_translayer(geom, 6, 6, 3, g, 3, TableMode::round);
  Rng rng(44);
  for (double& v : layer.conv.w) v += 0.25 * rng.normal();
  for (double& v : layer.conv.b) v = 0.2 * rng.normal();

  EquivariantMap map = probe_translayer(layer, 6, 6);
  TiedLayer tied = map_to_translayer(map, 3);
  CHECK(tied.residual <= 1e-12);
  REQUIRE(tied.layer.conv.w.size() == layer.conv.w.size());
  for (std::size_t i = 0; i < layer.conv.w.size(); ++i)
    CHECK(tied.layer.conv.w[i] == doctest::Approx(layer.conv.w[i]).epsilon(1e-10));
  for (std::size_t i = 0; i < layer.conv.b.size(); ++i)
    CHECK(tied.layer.conv.b[i] == doctest::Approx(layer.conv.b[i]).epsilon(1e-10));

  FeatureField f = rand_field(rng, 6, 6, 3);
  f.geom = geom;
  FeatureField a = translayer_apply(tied.layer, f);
  FeatureField b = apply(map, f);
  for (std::size_t i = 0; i < a.data.size(); ++i)
    CHECK(a.data[i] == doctest::Approx(b.data[i]).epsilon(1e-10));
}

TEST_CASE("analytic hog permutation converts to a one-hot translayer") {
  HogConfig hog;
  EquivariantMap P = hog_permutation(8, 8, hog, "hflip");
  TiedLayer tied = map_to_translayer(P, 1);
  CHECK(tied.residual == 0.0);
  CHECK(tied.layer.m == 1);
  CHECK(tied.layer.d == 31);
  std::vector<int> chan = hog_channel_permutation(hog, "hflip");
  for (int o = 0; o < 31; ++o)
    for (int c = 0; c < 31; ++c)
      CHECK(tied.layer.conv.w[std::size_t(o * 31 + c)] == (c == chan[std::size_t(o)] ? 1.0 : 0.0));

  auto imgs = synth_texture_images(45, 1, 64);
  FeatureField f = extract_hog(imgs[0], hog);
  FeatureField a = translayer_apply(tied.layer, f);
  FeatureField b = apply(P, f);
  for (std::size_t i = 0; i < a.data.size(); ++i)
    CHECK(a.data[i] == doctest::Approx(b.data[i]).epsilon(1e-10));
}

TEST_CASE("probe_error reduces to classification error") {
  Dataset ds = synth_classification_set(51, 24, 2);
  Network net = make_t3(2, 52);
  TrainConfig cfg;
  cfg.epochs = 2;
  train_network(net, ds, cfg);
  double base = classification_error(net, ds);
  for (int probe = 1; probe <= 3; ++probe) {
    int b = t3_probe_boundary(probe);
    CHECK(probe_error(net, b, nullptr, ds, nullptr) == base);
    Affine2 id = Affine2::identity();
    CHECK(probe_error(net, b, nullptr, ds, &id) == base);
  }
}

TEST_CASE("task training starts from the base error under identity") {
  Dataset ds = synth_classification_set(53, 30, 2);
  assign_splits(ds, 10);
  Dataset train = split_of(ds, "train");
  Dataset val = split_of(ds, "test");
  Network net = make_t3(2, 54);
  TrainConfig ncfg;
  ncfg.epochs = 3;
  train_network(net, train, ncfg);

  TaskTrainConfig tcfg;
  tcfg.epochs = 1;
  TaskTrainResult res = learn_map_task(net, t3_probe_boundary(1), Affine2::identity(), train, val, tcfg);
  REQUIRE(!res.curve.empty());
  // Identity warp is exact at integer pixels and the identity-initialized
  // layer is exact, so the starting point equals the plain network error.
  CHECK(res.curve.front().val_err == classification_error(net, val));
  CHECK(res.curve.front().samples_seen == 0);
  for (const TaskCurvePoint& p : res.curve) {
    CHECK(std::isfinite(p.train_err));
    CHECK(std::isfinite(p.val_err));
  }
}

TEST_CASE("translayer checkpoint round trip") {
  FieldGeometry geom = centered_geom(6, 6, 4.0);
  Affine2 g = Affine2::rotation_deg(25.0, image_center(24, 24));
  TransformationLayer layer = make_translayer(geom, 6, 6, 4, g, 3, TableMode::bilinear);
  Rng rng(55);
  for (double& v : layer.conv.w) v += 0.1 * rng.normal();
  for (double& v : layer.conv.b) v = 0.05 * rng.normal();
  std::string dir = tmp_dir("eqm_translayer_ckpt");
  save_translayer(layer, dir);
  TransformationLayer back = load_translayer(dir);
  CHECK(back.m == 3);
  CHECK(back.d == 4);
  CHECK(back.table.mode == TableMode::bilinear);
  CHECK(approx_equal(back.g, layer.g, 0.0));
  FeatureField f = rand_field(rng, 6, 6, 4);
  f.geom = geom;
  FeatureField a = translayer_apply(layer, f);
  FeatureField b = translayer_apply(back, f);
  for (std::size_t i = 0; i < a.data.size(); ++i) CHECK(a.data[i] == b.data[i]);
  std::filesystem::remove_all(dir);
}

TEST_CASE("identity stitching reproduces the stitched network exactly") {
  Dataset ds = synth_classification_set(56, 20, 2);
  Network net = make_t3(2, 57);
  TrainConfig cfg;
  cfg.epochs = 2;
  train_network(net, ds, cfg);
  double base = classification_error(net, ds);
  for (int probe = 1; probe <= 3; ++probe) {
    StitchingLayer s = make_stitch(probe == 1 ? 16 : 32, probe == 1 ? 16 : 32, 1, 0);
    CHECK(franken_error(net, net, t3_probe_boundary(probe), s, ds) == base);
  }
}

TEST_CASE("stitch apply semantics") {
  Rng rng(58);
  FeatureField f = rand_field(rng, 6, 6, 3);
  f.geom = {2.0, 2.0, 0.5, 0.5};

  StitchingLayer id = make_stitch(3, 3, 1, 0);
  FeatureField same = stitch_apply(id, f);
  for (std::size_t i = 0; i < f.data.size(); ++i) CHECK(same.data[i] == f.data[i]);

  // Widening init zero-fills the extra channels.
  StitchingLayer widen = make_stitch(3, 5, 1, 0);
  FeatureField wide = stitch_apply(widen, f);
  REQUIRE(wide.d == 5);
  for (int v = 0; v < 6; ++v)
    for (int u = 0; u < 6; ++u) {
      for (int t = 0; t < 3; ++t) CHECK(wide.at(u, v, t) == f.at(u, v, t));
      CHECK(wide.at(u, v, 3) == 0.0);
      CHECK(wide.at(u, v, 4) == 0.0);
    }

  StitchingLayer up = make_stitch(3, 3, 1, +1);
  FeatureField fu = stitch_apply(up, f);
  CHECK(fu.h == 12);
  CHECK(fu.w == 12);
  CHECK(fu.geom.sx == 1.0);
  CHECK(fu.geom.ox == 0.0);
  CHECK(fu.at(5, 4, 1) == f.at(2, 2, 1));  // nearest-neighbour block copy

  StitchingLayer down = make_stitch(3, 3, 1, -1);
  FeatureField fd = stitch_apply(down, f);
  CHECK(fd.h == 3);
  CHECK(fd.w == 3);
  CHECK(fd.geom.sx == 4.0);
  CHECK(fd.geom.ox == 0.5);
  CHECK(fd.at(1, 2, 0) == f.at(2, 4, 0));

  CHECK_THROWS_AS(make_stitch(3, 3, 2, 0), Error);
  CHECK_THROWS_AS(make_stitch(3, 3, 1, 5), Error);
}

TEST_CASE("stitch gradient check") {
  Rng rng(59);
  for (int resample : {0, 1, -1}) {
    StitchingLayer layer = make_stitch(2, 3, 3, resample);
    for (double& v : layer.conv.w) v += 0.2 * rng.normal();
    for (double& v : layer.conv.b) v = 0.1 * rng.normal();
    CHECK(grad_check_stitch(layer, 6, 6, 60) < 1e-4);
  }
}

TEST_CASE("learn_stitch starts from the identity-init error") {
  Dataset ds = synth_classification_set(61, 30, 2);
  assign_splits(ds, 10);
  Dataset train = split_of(ds, "train");
  Dataset val = split_of(ds, "test");
  Network net = make_t3(2, 62);
  TrainConfig cfg;
  cfg.epochs = 3;
  train_network(net, train, cfg);

  StitchTrainConfig scfg;
  scfg.epochs = 1;
  StitchTrainResult res = learn_stitch(net, net, t3_probe_boundary(2), train, val, scfg);
  REQUIRE(!res.curve.empty());
  CHECK(res.curve.front().val_err == classification_error(net, val));
  REQUIRE(res.layer.conv.k == 1);

  std::string dir = tmp_dir("eqm_stitch_ckpt");
  save_stitch(res.layer, dir);
  StitchingLayer back = load_stitch(dir);
  CHECK(back.resample == res.layer.resample);
  CHECK(back.conv.w == res.layer.conv.w);
  CHECK(back.conv.b == res.layer.conv.b);
  std::filesystem::remove_all(dir);
}
