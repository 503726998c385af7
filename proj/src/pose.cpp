#include "pose.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "common.hpp"

namespace eqm {

namespace {

double circular_deg(double a, double b) {
  double d = std::fmod(std::abs(a - b), 360.0);
  return d > 180.0 ? 360.0 - d : d;
}

// Fixed reference points for the affine mismatch loss.
const Vec2 kRefOffsets[3] = {{12.0, 0.0}, {0.0, 12.0}, {-8.0, -8.0}};

double affine_point_loss(const PoseSet& G, const Affine2& g1, const Affine2& g2) {
  Vec2 c = image_center(G.size, G.size);
  double sum = 0.0;
  for (const Vec2& off : kRefOffsets) {
    Vec2 p{c.x + off.x, c.y + off.y};
    Vec2 q1 = g1.apply(p), q2 = g2.apply(p);
    sum += std::hypot(q1.x - q2.x, q1.y - q2.y);
  }
  return sum / (3.0 * double(G.size));
}

}  // namespace

PoseSet build_pose_set(const std::string& family, int count, int size) {
  require(size > 0, Errc::invalid_argument, "build_pose_set: bad size");
  PoseSet G;
  G.family = family;
  G.size = size;
  if (family == "rotation") {
    require(count >= 2, Errc::invalid_argument, "build_pose_set: need >= 2 poses");
    Vec2 c = image_center(size, size);
    for (int j = 0; j < count; ++j) {
      double angle = 360.0 * double(j) / double(count);
      G.angles.push_back(angle);
      G.poses.push_back(Affine2::rotation_deg(angle, c));
    }
  } else if (family == "affine") {
    G.poses = affine_pose_family(size);
    require(count == int(G.poses.size()), Errc::invalid_argument,
            "build_pose_set: affine family has a fixed size");
  } else {
    fail(Errc::invalid_argument, "build_pose_set: unknown family " + family);
  }
  return G;
}

double pose_loss(const PoseSet& G, int j, int j_true) {
  require(j >= 0 && j < int(G.poses.size()) && j_true >= 0 && j_true < int(G.poses.size()),
          Errc::invalid_argument, "pose_loss: index out of range");
  if (G.family == "rotation") return circular_deg(G.angles[std::size_t(j)], G.angles[std::size_t(j_true)]) / 180.0;
  return affine_point_loss(G, G.poses[std::size_t(j)], G.poses[std::size_t(j_true)]);
}

double pose_loss_item(const PoseSet& G, int j, const DatasetItem& item) {
  require(j >= 0 && j < int(G.poses.size()), Errc::invalid_argument,
          "pose_loss_item: index out of range");
  if (G.family == "rotation")
    return circular_deg(G.angles[std::size_t(j)], item.pose_angle) / 180.0;
  require(item.pose.has_value(), Errc::invalid_argument, "pose_loss_item: item has no pose");
  return affine_point_loss(G, G.poses[std::size_t(j)], *item.pose);
}

int nearest_pose(const PoseSet& G, const DatasetItem& item) {
  int best = 0;
  double best_l = pose_loss_item(G, 0, item);
  for (int j = 1; j < int(G.poses.size()); ++j) {
    double l = pose_loss_item(G, j, item);
    if (l < best_l) {
      best_l = l;
      best = j;
    }
  }
  return best;
}

namespace {

// Features for every (item, pose) pair, float to keep both caches resident.
struct FeatureCache {
  int dim = 0;
  int n_poses = 0;
  std::vector<std::vector<float>> feats;  // [item * n_poses + pose]
  const std::vector<float>& at(int i, int j) const {
    return feats[std::size_t(i) * std::size_t(n_poses) + std::size_t(j)];
  }
};

std::vector<float> to_floats(const FeatureField& f) {
  std::vector<float> out(f.data.size());
  for (std::size_t q = 0; q < out.size(); ++q) out[q] = float(f.data[q]);
  return out;
}

double dotf(const std::vector<double>& w, const std::vector<float>& x) {
  double s = 0.0;
  for (std::size_t q = 0; q < w.size(); ++q) s += w[q] * double(x[q]);
  return s;
}

// Margin-rescaled structured SVM, stochastic subgradient, step 1/(t+10).
std::vector<double> train_ssvm(const FeatureCache& cache, const PoseSet& G,
                               const Dataset& train, const std::vector<int>& true_pose,
                               const PoseTrainConfig& cfg) {
  const int J = cache.n_poses;
  std::vector<double> w(std::size_t(cache.dim), 0.0);
  Rng rng(cfg.seed);
  std::vector<int> order(train.items.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = int(i);
  long t = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order.data(), order.size());
    for (int i : order) {
      const int y = true_pose[std::size_t(i)];
      int viol = -1;
      double viol_v = 0.0;
      for (int j = 0; j < J; ++j) {
        double v = dotf(w, cache.at(i, j)) + pose_loss_item(G, j, train.items[std::size_t(i)]);
        if (viol < 0 || v > viol_v) {
          viol = j;
          viol_v = v;
        }
      }
      double eta = 1.0 / double(t + 10);
      ++t;
      if (viol == y) continue;
      if (viol_v <= dotf(w, cache.at(i, y))) continue;  // margin already met
      const std::vector<float>& fy = cache.at(i, y);
      const std::vector<float>& fv = cache.at(i, viol);
      for (std::size_t q = 0; q < w.size(); ++q)
        w[q] += eta * (double(fy[q]) - double(fv[q]));
    }
  }
  return w;
}

}  // namespace

PoseModel train_pose_model(const Dataset& train, const PoseSet& G,
                           const std::vector<EquivariantMap>& maps, const HogConfig& hog,
                           const PoseTrainConfig& cfg) {
  require(!train.items.empty(), Errc::invalid_argument, "train_pose_model: empty dataset");
  require(maps.size() == G.poses.size(), Errc::invalid_argument,
          "train_pose_model: one map per pose required");
  const int J = int(G.poses.size());

  PoseModel model;
  model.G = G;
  model.hog = hog;
  model.maps = maps;

  FeatureCache direct, equi;
  direct.n_poses = equi.n_poses = J;
  std::vector<int> true_pose;
  for (const DatasetItem& item : train.items) {
    require(item.image.width == G.size && item.image.height == G.size, Errc::invalid_argument,
            "train_pose_model: image size does not match the pose set");
    FeatureField f = extract_hog(item.image, hog);
    if (direct.feats.empty()) {
      model.fh = f.h;
      model.fw = f.w;
      model.fd = f.d;
      model.geom = f.geom;
      direct.dim = equi.dim = f.components();
      for (const EquivariantMap& map : maps)
        require(map.out_h == f.h && map.out_w == f.w && map.out_d == f.d && map.in_h == f.h &&
                    map.in_w == f.w && map.in_d == f.d,
                Errc::invalid_argument, "train_pose_model: map shape mismatch");
    }
    for (int j = 0; j < J; ++j) {
      Image unwarped = warp(item.image, inverse(G.poses[std::size_t(j)]), Interp::bilinear,
                            Pad::replicate);
      direct.feats.push_back(to_floats(extract_hog(unwarped, hog)));
      equi.feats.push_back(to_floats(apply(maps[std::size_t(j)], f)));
    }
    true_pose.push_back(nearest_pose(G, item));
  }

  model.w_direct = train_ssvm(direct, G, train, true_pose, cfg);
  model.w_equi = train_ssvm(equi, G, train, true_pose, cfg);

  FeatureField w_field(model.fh, model.fw, model.fd);
  w_field.geom = model.geom;
  w_field.data = model.w_equi;
  for (int j = 0; j < J; ++j) {
    AdjointResult adj = apply_adjoint(maps[std::size_t(j)], w_field);
    model.templates.push_back(std::move(adj.field));
    model.template_offsets.push_back(adj.offset);
  }

  // Constant baseline: rotation takes the pose nearest the median train
  // angle, affine the most frequent ground-truth element.
  if (G.family == "rotation") {
    std::vector<double> angles;
    for (const DatasetItem& item : train.items) angles.push_back(item.pose_angle);
    std::sort(angles.begin(), angles.end());
    DatasetItem median;
    median.pose_angle = angles[angles.size() / 2];
    model.baseline = nearest_pose(G, median);
  } else {
    std::vector<int> counts(std::size_t(J), 0);
    for (const DatasetItem& item : train.items) {
      require(item.pose_index >= 0 && item.pose_index < J, Errc::invalid_argument,
              "train_pose_model: item pose index out of range");
      ++counts[std::size_t(item.pose_index)];
    }
    model.baseline = int(std::max_element(counts.begin(), counts.end()) - counts.begin());
  }
  return model;
}

int predict_pose(const PoseModel& model, const Image& x, PoseMode mode,
                 std::vector<double>* scores) {
  const int J = int(model.G.poses.size());
  std::vector<double> s(std::size_t(J), 0.0);
  if (mode == PoseMode::direct) {
    for (int j = 0; j < J; ++j) {
      Image unwarped = warp(x, inverse(model.G.poses[std::size_t(j)]), Interp::bilinear,
                            Pad::replicate);
      FeatureField f = extract_hog(unwarped, model.hog);
      double v = 0.0;
      for (std::size_t q = 0; q < f.data.size(); ++q) v += model.w_direct[q] * f.data[q];
      s[std::size_t(j)] = v;
    }
  } else {
    FeatureField f = extract_hog(x, model.hog);
    for (int j = 0; j < J; ++j) {
      const FeatureField& tpl = model.templates[std::size_t(j)];
      double v = model.template_offsets[std::size_t(j)];
      for (std::size_t q = 0; q < f.data.size(); ++q) v += tpl.data[q] * f.data[q];
      s[std::size_t(j)] = v;
    }
  }
  int best = 0;
  for (int j = 1; j < J; ++j)
    if (s[std::size_t(j)] > s[std::size_t(best)]) best = j;
  if (scores) *scores = std::move(s);
  return best;
}

namespace {

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

PoseBench bench_pose(const PoseModel& model, const Dataset& test, int warmup, int poses_limit) {
  require(!test.items.empty(), Errc::invalid_argument, "bench_pose: empty dataset");
  const int J = int(model.G.poses.size());
  const int JT = poses_limit > 0 ? std::min(poses_limit, J) : J;
  using clock = std::chrono::steady_clock;

  PoseBench bench;
  double sum_d = 0.0, sum_e = 0.0, sum_c = 0.0;
  for (const DatasetItem& item : test.items) {
    sum_d += pose_loss_item(model.G, predict_pose(model, item.image, PoseMode::direct), item);
    sum_e += pose_loss_item(model.G, predict_pose(model, item.image, PoseMode::equivariant), item);
    sum_c += pose_loss_item(model.G, model.baseline, item);
  }
  bench.residual_direct = sum_d / double(test.items.size());
  bench.residual_equi = sum_e / double(test.items.size());
  bench.residual_const = sum_c / double(test.items.size());

  // Timing: per-image scoring over the first JT poses, median over images.
  std::vector<double> t_direct, t_equi;
  volatile double sink = 0.0;  // keep the scoring loops live
  for (int i = -warmup; i < int(test.items.size()); ++i) {
    const Image& x = test.items[std::size_t(std::max(i, 0))].image;
    auto t0 = clock::now();
    double acc = 0.0;
    for (int j = 0; j < JT; ++j) {
      Image unwarped = warp(x, inverse(model.G.poses[std::size_t(j)]), Interp::bilinear,
                            Pad::replicate);
      FeatureField f = extract_hog(unwarped, model.hog);
      double v = 0.0;
      for (std::size_t q = 0; q < f.data.size(); ++q) v += model.w_direct[q] * f.data[q];
      acc += v;
    }
    auto t1 = clock::now();
    FeatureField f = extract_hog(x, model.hog);
    for (int j = 0; j < JT; ++j) {
      const FeatureField& tpl = model.templates[std::size_t(j)];
      double v = model.template_offsets[std::size_t(j)];
      for (std::size_t q = 0; q < f.data.size(); ++q) v += tpl.data[q] * f.data[q];
      acc += v;
    }
    auto t2 = clock::now();
    sink = sink + acc;
    if (i < 0) continue;
    t_direct.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    t_equi.push_back(std::chrono::duration<double, std::milli>(t2 - t1).count());
  }
  bench.ms_direct = median_of(t_direct);
  bench.ms_equi = median_of(t_equi);
  bench.ms_direct_per_pose = bench.ms_direct / double(JT);
  bench.ms_equi_per_pose = bench.ms_equi / double(JT);
  bench.speedup = bench.ms_equi > 0.0 ? bench.ms_direct / bench.ms_equi : 0.0;
  return bench;
}

}  // namespace eqm
