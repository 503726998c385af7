// Structured pose regression: pose grids, losses, direct vs equivariant
// scoring, and the benchmark plumbing.
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "common.hpp"
#include "emap.hpp"
#include "hog.hpp"
#include "pose.hpp"
#include "synth.hpp"

using namespace eqm;

namespace {

// Two-pose model (identity, rot180) with exact permutation maps and shared
// random w, so direct and equivariant scoring must agree to rounding.
PoseModel toy_model(std::uint64_t seed) {
  PoseModel model;
  model.G = build_pose_set("rotation", 2, 64);
  model.hog = HogConfig{};
  auto probe = extract_hog(pose_template(), model.hog);
  model.fh = probe.h;
  model.fw = probe.w;
  model.fd = probe.d;
  model.geom = probe.geom;
  Rng rng(seed);
  model.w_direct.resize(probe.data.size());
  for (double& v : model.w_direct) v = rng.normal();
  model.w_equi = model.w_direct;
  model.maps = {hog_permutation(probe.h, probe.w, model.hog, "identity"),
                hog_permutation(probe.h, probe.w, model.hog, "rot180")};
  FeatureField wf(model.fh, model.fw, model.fd);
  wf.geom = model.geom;
  wf.data = model.w_equi;
  for (const EquivariantMap& m : model.maps) {
    AdjointResult adj = apply_adjoint(m, wf);
    model.templates.push_back(adj.field);
    model.template_offsets.push_back(adj.offset);
  }
  model.baseline = 0;
  return model;
}

}  // namespace

TEST_CASE("pose grids") {
  PoseSet G = build_pose_set("rotation", 8, 64);
  REQUIRE(int(G.poses.size()) == 8);
  REQUIRE(int(G.angles.size()) == 8);
  for (int j = 0; j < 8; ++j) CHECK(G.angles[std::size_t(j)] == 45.0 * j);
  CHECK(is_identity(G.poses[0], 0.0));
  Vec2 c = image_center(64, 64);
  CHECK(approx_equal(G.poses[2], Affine2::rotation_deg(90.0, c), 1e-12));

  // The grid is closed under inversion: rot(360-a) undoes rot(a).
  for (int j = 0; j < 8; ++j) {
    Affine2 inv = inverse(G.poses[std::size_t(j)]);
    int jinv = (8 - j) % 8;
    CHECK(approx_equal(inv, G.poses[std::size_t(jinv)], 1e-9));
  }

  PoseSet A = build_pose_set("affine", 10, 64);
  REQUIRE(int(A.poses.size()) == 10);
  CHECK(is_identity(A.poses[0], 0.0));
  for (const Affine2& g : A.poses) CHECK(std::abs(det(g)) > 1e-3);  // invertible
  CHECK_THROWS_AS(build_pose_set("affine", 9, 64), Error);
  CHECK_THROWS_AS(build_pose_set("swirl", 8, 64), Error);
}

TEST_CASE("pose losses") {
  PoseSet G = build_pose_set("rotation", 36, 64);
  CHECK(pose_loss(G, 5, 5) == 0.0);
  CHECK(pose_loss(G, 0, 18) == doctest::Approx(1.0));            // 0 vs 180
  CHECK(pose_loss(G, 35, 1) == doctest::Approx(20.0 / 180.0));   // 350 vs 10 wraps
  CHECK(pose_loss(G, 1, 35) == doctest::Approx(20.0 / 180.0));

  DatasetItem item;
  item.pose_angle = 10.0;
  CHECK(pose_loss_item(G, 0, item) == doctest::Approx(10.0 / 180.0));
  CHECK(nearest_pose(G, item) == 1);
  item.pose_angle = 359.0;
  CHECK(nearest_pose(G, item) == 0);  // wraps past the top
  item.pose_angle = 44.0;
  PoseSet G8 = build_pose_set("rotation", 8, 64);
  CHECK(nearest_pose(G8, item) == 1);

  PoseSet A = build_pose_set("affine", 10, 64);
  for (int j = 0; j < 10; ++j) CHECK(pose_loss(A, j, j) == 0.0);
  for (int j = 1; j < 10; ++j) CHECK(pose_loss(A, j, 0) > 0.0);
}

TEST_CASE("direct and equivariant scoring agree through exact maps") {
  PoseModel model = toy_model(81);
  Dataset ds = synth_pose_set(82, 4, "rotation");
  for (const DatasetItem& item : ds.items) {
    std::vector<double> sd, se;
    int pd = predict_pose(model, item.image, PoseMode::direct, &sd);
    int pe = predict_pose(model, item.image, PoseMode::equivariant, &se);
    REQUIRE(sd.size() == 2);
    REQUIRE(se.size() == 2);
    for (int j = 0; j < 2; ++j)
      CHECK(sd[std::size_t(j)] ==
            doctest::Approx(se[std::size_t(j)]).epsilon(1e-9));
    CHECK(pd == pe);
  }
}

TEST_CASE("zero weights predict the first pose") {
  PoseModel model = toy_model(83);
  std::fill(model.w_direct.begin(), model.w_direct.end(), 0.0);
  std::fill(model.w_equi.begin(), model.w_equi.end(), 0.0);
  FeatureField wf(model.fh, model.fw, model.fd);
  wf.geom = model.geom;
  wf.data = model.w_equi;
  model.templates.clear();
  model.template_offsets.clear();
  for (const EquivariantMap& m : model.maps) {
    AdjointResult adj = apply_adjoint(m, wf);
    model.templates.push_back(adj.field);
    model.template_offsets.push_back(adj.offset);
  }
  Dataset ds = synth_pose_set(84, 2, "rotation");
  for (const DatasetItem& item : ds.items) {
    CHECK(predict_pose(model, item.image, PoseMode::direct) == 0);
    CHECK(predict_pose(model, item.image, PoseMode::equivariant) == 0);
  }
}

TEST_CASE("one identity-pose example trains to the identity pose") {
  Dataset ds;
  ds.kind = "pose-rotation";
  DatasetItem item;
  item.image = pose_template();
  item.pose = Affine2::identity();
  item.pose_angle = 0.0;
  ds.items.push_back(item);

  PoseSet G = build_pose_set("rotation", 2, 64);
  HogConfig hog;
  std::vector<EquivariantMap> maps = {hog_permutation(8, 8, hog, "identity"),
                                      hog_permutation(8, 8, hog, "rot180")};
  PoseTrainConfig cfg;
  cfg.epochs = 1;
  PoseModel model = train_pose_model(ds, G, maps, hog, cfg);
  CHECK(predict_pose(model, item.image, PoseMode::direct) == 0);
  CHECK(predict_pose(model, item.image, PoseMode::equivariant) == 0);
  CHECK(model.baseline == 0);
}

TEST_CASE("bench_pose smoke") {
  PoseModel model = toy_model(85);
  Dataset ds = synth_pose_set(86, 6, "rotation");
  PoseBench bench = bench_pose(model, ds, 1);
  CHECK(bench.speedup > 0.0);
  CHECK(bench.ms_direct > 0.0);
  CHECK(bench.ms_equi > 0.0);
  CHECK(std::isfinite(bench.residual_direct));
  CHECK(std::isfinite(bench.residual_equi));
  CHECK(bench.residual_direct >= 0.0);
  CHECK(bench.residual_equi >= 0.0);
  // Baseline 0 always predicts angle 0; residual_const is its mean loss.
  double expect = 0.0;
  for (const DatasetItem& item : ds.items) expect += pose_loss_item(model.G, 0, item);
  expect /= double(ds.items.size());
  CHECK(bench.residual_const == doctest::Approx(expect).epsilon(1e-12));

  PoseBench limited = bench_pose(model, ds, 1, 1);
  CHECK(limited.residual_direct == bench.residual_direct);  // residuals use the full set
  CHECK(limited.ms_direct_per_pose > 0.0);
}
