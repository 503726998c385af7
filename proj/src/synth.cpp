#include "synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "common.hpp"

namespace eqm {

namespace {

constexpr int kSize = 64;

void clamp01(Image& img) {
  for (double& v : img.data) v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
}

// Additive stroke: intensity delta falling off linearly with distance to the
// segment, zero beyond `thick`.
void draw_stroke(Image& img, Vec2 c, double angle, double half_len, double thick, double delta) {
  Vec2 d{std::cos(angle), std::sin(angle)};
  Vec2 p0{c.x - d.x * half_len, c.y - d.y * half_len};
  Vec2 p1{c.x + d.x * half_len, c.y + d.y * half_len};
  int x0 = std::max(0, int(std::floor(std::min(p0.x, p1.x) - thick)));
  int x1 = std::min(img.width - 1, int(std::ceil(std::max(p0.x, p1.x) + thick)));
  int y0 = std::max(0, int(std::floor(std::min(p0.y, p1.y) - thick)));
  int y1 = std::min(img.height - 1, int(std::ceil(std::max(p0.y, p1.y) + thick)));
  double len2 = (p1.x - p0.x) * (p1.x - p0.x) + (p1.y - p0.y) * (p1.y - p0.y);
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      double t = len2 > 0 ? ((x - p0.x) * (p1.x - p0.x) + (y - p0.y) * (p1.y - p0.y)) / len2 : 0.0;
      t = t < 0.0 ? 0.0 : (t > 1.0 ? 1.0 : t);
      double qx = p0.x + t * (p1.x - p0.x), qy = p0.y + t * (p1.y - p0.y);
      double dist = std::hypot(x - qx, y - qy);
      if (dist < thick) img.at(x, y, 0) += delta * (1.0 - dist / thick);
    }
  }
}

void draw_disk(Image& img, Vec2 c, double radius, double delta) {
  int x0 = std::max(0, int(c.x - radius - 1)), x1 = std::min(img.width - 1, int(c.x + radius + 1));
  int y0 = std::max(0, int(c.y - radius - 1)), y1 = std::min(img.height - 1, int(c.y + radius + 1));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      double dist = std::hypot(x - c.x, y - c.y);
      if (dist < radius) img.at(x, y, 0) += delta * std::min(1.0, radius - dist);
    }
}

void fill_triangle(Image& img, Vec2 a, Vec2 b, Vec2 c, double value) {
  auto side = [](Vec2 p, Vec2 q, Vec2 r) {
    return (q.x - p.x) * (r.y - p.y) - (q.y - p.y) * (r.x - p.x);
  };
  int x0 = std::max(0, int(std::min({a.x, b.x, c.x})));
  int x1 = std::min(img.width - 1, int(std::max({a.x, b.x, c.x}) + 1));
  int y0 = std::max(0, int(std::min({a.y, b.y, c.y})));
  int y1 = std::min(img.height - 1, int(std::max({a.y, b.y, c.y}) + 1));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      Vec2 p{double(x), double(y)};
      double s1 = side(a, b, p), s2 = side(b, c, p), s3 = side(c, a, p);
      bool neg = s1 < 0 || s2 < 0 || s3 < 0, pos = s1 > 0 || s2 > 0 || s3 > 0;
      if (!(neg && pos)) img.at(x, y, 0) = value;
    }
}

// Oriented strokes everywhere; gives every HOG cell gradient energy. The
// stroke count scales with area so larger canvases stay equally dense
// (exactly the historical count at 64x64).
void texture_background(Image& img, Rng& rng) {
  double base = 0.40 + 0.15 * rng.uniform();
  std::fill(img.data.begin(), img.data.end(), base);
  int n = int(double(36 + rng.range(0, 8)) * double(img.width) * double(img.height) / 4096.0);
  for (int i = 0; i < n; ++i) {
    Vec2 c{rng.uniform(2.0, img.width - 3.0), rng.uniform(2.0, img.height - 3.0)};
    double angle = rng.uniform(0.0, 3.14159265358979323846);
    double half_len = rng.uniform(4.0, 9.0);
    double thick = rng.uniform(1.0, 1.8);
    double delta = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.10, 0.28);
    draw_stroke(img, c, angle, half_len, thick, delta);
  }
  for (double& v : img.data) v += 0.02 * (2.0 * rng.uniform() - 1.0);
}

// Blends toward `fill` outside the disk, with a soft feather band.
void mask_disk(Image& img, double radius, double feather, double fill) {
  Vec2 ctr = image_center(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      double r = std::hypot(x - ctr.x, y - ctr.y);
      double t = (r - radius) / feather;
      t = t < 0.0 ? 0.0 : (t > 1.0 ? 1.0 : t);
      img.at(x, y, 0) = (1.0 - t) * img.at(x, y, 0) + t * fill;
    }
}

}  // namespace

Dataset synth_classification_set(std::uint64_t seed, int n, int num_classes) {
  require(n > 0 && num_classes >= 2, Errc::invalid_argument,
          "synth_classification_set: need n > 0, classes >= 2");
  Dataset ds;
  ds.kind = "class";
  ds.seed = seed;
  ds.items.reserve(std::size_t(n));
  Rng rng(seed);
  Vec2 ctr = image_center(kSize, kSize);
  for (int i = 0; i < n; ++i) {
    DatasetItem item;
    item.cls = i % num_classes;
    Image img(kSize, kSize, 1);
    texture_background(img, rng);
    // Jitter is drawn symmetrically so vflip maps the class-0 distribution
    // onto class 1 and hflip maps each class onto itself.
    double jr = 6.0 * std::sqrt(rng.uniform());
    double ja = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    Vec2 c{ctr.x + jr * std::cos(ja), ctr.y + jr * std::sin(ja)};
    double half_w = rng.uniform(10.0, 14.0);
    double half_h = rng.uniform(8.0, 11.0);
    double fill = rng.uniform(0.82, 0.95);
    // Classes beyond the first two reuse the triangle at intermediate
    // apex offsets; the primary experiments use two classes.
    double dir = (item.cls % 2 == 0) ? -1.0 : 1.0;
    Vec2 apex{c.x, c.y + dir * half_h};
    Vec2 b0{c.x - half_w, c.y - dir * half_h};
    Vec2 b1{c.x + half_w, c.y - dir * half_h};
    fill_triangle(img, apex, b0, b1, fill);
    if (item.cls >= 2) {
      // Extra classes get a dark notch whose position encodes the label.
      double ang = 2.0 * 3.14159265358979323846 * double(item.cls) / double(num_classes);
      draw_disk(img, {c.x + 16.0 * std::cos(ang), c.y + 16.0 * std::sin(ang)}, 3.5, -0.5);
    }
    clamp01(img);
    item.image = std::move(img);
    ds.items.push_back(std::move(item));
  }
  return ds;
}

Image pose_template() {
  Rng rng(0x506f7365ull);  // fixed: the template never varies
  Image img(kSize, kSize, 1);
  texture_background(img, rng);
  Vec2 ctr = image_center(kSize, kSize);
  auto polar = [&](double r, double deg) {
    double a = deg * 3.14159265358979323846 / 180.0;
    return Vec2{ctr.x + r * std::cos(a), ctr.y + r * std::sin(a)};
  };
  // Orientation anchor plus two off-axis marks; no rotational symmetry.
  draw_stroke(img, polar(10.0, 25.0), 25.0 * 3.14159265358979323846 / 180.0, 14.0, 2.5, 0.45);
  draw_disk(img, polar(15.0, 140.0), 4.0, -0.5);
  fill_triangle(img, polar(17.0, 250.0), polar(11.0, 275.0), polar(18.0, 285.0), 0.92);
  clamp01(img);
  mask_disk(img, 28.0, 2.5, 0.5);
  return img;
}

std::vector<Affine2> affine_pose_family(int size) {
  Vec2 c = image_center(size, size);
  std::vector<Affine2> fam;
  fam.push_back(Affine2::identity());
  fam.push_back(Affine2::rotation_deg(20.0, c));
  fam.push_back(Affine2::rotation_deg(-20.0, c));
  fam.push_back(Affine2::rotation_deg(45.0, c));
  fam.push_back(Affine2::scaling(0.85, 0.85, c));
  fam.push_back(Affine2::scaling(1.15, 1.15, c));
  fam.push_back(Affine2::scaling(1.1, 0.9, c));
  fam.push_back(Affine2::shear_x(0.2, c));
  fam.push_back(Affine2::shear_x(-0.2, c));
  fam.push_back(compose(Affine2::rotation_deg(10.0, c), Affine2::scaling(1.08, 1.08, c)));
  return fam;
}

Dataset synth_pose_set(std::uint64_t seed, int n, const std::string& family) {
  require(n > 0, Errc::invalid_argument, "synth_pose_set: need n > 0");
  require(family == "rotation" || family == "affine", Errc::invalid_argument,
          "synth_pose_set: family must be rotation|affine");
  Dataset ds;
  ds.kind = "pose-" + family;
  ds.seed = seed;
  ds.items.reserve(std::size_t(n));
  Rng rng(seed);
  Image tmpl = pose_template();
  Vec2 ctr = image_center(kSize, kSize);
  std::vector<Affine2> fam = family == "affine" ? affine_pose_family(kSize) : std::vector<Affine2>{};
  for (int i = 0; i < n; ++i) {
    DatasetItem item;
    if (family == "rotation") {
      item.pose_angle = rng.uniform(0.0, 360.0);
      item.pose = Affine2::rotation_deg(item.pose_angle, ctr);
    } else {
      item.pose_index = int(rng.below(fam.size()));
      item.pose = fam[std::size_t(item.pose_index)];
    }
    item.image = warp(tmpl, *item.pose, Interp::bilinear, Pad::replicate);
    ds.items.push_back(std::move(item));
  }
  return ds;
}

std::vector<Image> synth_texture_images(std::uint64_t seed, int n, int size) {
  require(n > 0 && size >= 16, Errc::invalid_argument,
          "synth_texture_images: need n > 0, size >= 16");
  std::vector<Image> images;
  images.reserve(std::size_t(n));
  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    Image img(size, size, 1);
    texture_background(img, rng);
    clamp01(img);
    images.push_back(std::move(img));
  }
  return images;
}

void assign_splits(Dataset& ds, int test_n) {
  require(test_n >= 0 && test_n <= int(ds.items.size()), Errc::invalid_argument,
          "assign_splits: test_n out of range");
  std::size_t cut = ds.items.size() - std::size_t(test_n);
  for (std::size_t i = 0; i < ds.items.size(); ++i)
    ds.items[i].split = i < cut ? "train" : "test";
}

Dataset split_of(const Dataset& ds, const std::string& split) {
  Dataset out;
  out.kind = ds.kind;
  out.seed = ds.seed;
  for (const DatasetItem& item : ds.items)
    if (item.split == split) out.items.push_back(item);
  return out;
}

void save_dataset(const Dataset& ds, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec, Errc::io, "save_dataset: cannot create " + dir);
  nlohmann::json index;
  index["kind"] = ds.kind;
  index["seed"] = ds.seed;
  index["items"] = nlohmann::json::array();
  char name[32];
  for (std::size_t i = 0; i < ds.items.size(); ++i) {
    const DatasetItem& item = ds.items[i];
    std::snprintf(name, sizeof name, "img_%05zu.pgm", i);
    save_pnm(item.image, dir + "/" + name);
    nlohmann::json j;
    j["file"] = name;
    j["split"] = item.split;
    if (item.cls >= 0) j["class"] = item.cls;
    if (item.pose) {
      j["pose"] = to_array(*item.pose);
      j["angle"] = item.pose_angle;
      if (item.pose_index >= 0) j["pose_index"] = item.pose_index;
    }
    index["items"].push_back(std::move(j));
  }
  std::ofstream out(dir + "/index.json");
  require(bool(out), Errc::io, "save_dataset: cannot write index.json in " + dir);
  out << index.dump(2) << "\n";
}

Dataset load_dataset(const std::string& dir) {
  std::ifstream in(dir + "/index.json");
  require(bool(in), Errc::io, "load_dataset: missing index.json in " + dir);
  nlohmann::json index;
  try {
    in >> index;
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::io, std::string("load_dataset: bad index.json: ") + e.what());
  }
  Dataset ds;
  ds.kind = index.value("kind", "class");
  ds.seed = index.value("seed", std::uint64_t(0));
  for (const auto& j : index.at("items")) {
    DatasetItem item;
    item.image = load_pnm(dir + "/" + j.at("file").get<std::string>());
    item.split = j.value("split", "train");
    item.cls = j.value("class", -1);
    if (j.contains("pose")) {
      item.pose = from_array(j.at("pose").get<std::array<double, 6>>());
      item.pose_angle = j.value("angle", 0.0);
      item.pose_index = j.value("pose_index", -1);
    }
    ds.items.push_back(std::move(item));
  }
  return ds;
}

}  // namespace eqm
