// Synthetic labeled datasets and their on-disk form (PGM files + JSON index).
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "geometry.hpp"
#include "image.hpp"

namespace eqm {

struct DatasetItem {
  Image image;
  int cls = -1;               // classification label, -1 if none
  std::optional<Affine2> pose;  // canonical-template -> observed transform
  double pose_angle = 0.0;      // degrees, rotation family only
  int pose_index = -1;          // index into the fixed pose set, affine family
  std::string split = "train";
};

struct Dataset {
  std::string kind;  // "class" | "pose-rotation" | "pose-affine"
  std::uint64_t seed = 0;
  std::vector<DatasetItem> items;
};

// Two-class images: filled isoceles triangle pointing up (class 0) or down
// (class 1) over an oriented-stroke texture, 64x64 gray. Classes are mirror
// images under vflip, closed under hflip, and out-of-distribution under
// rot90. Class of item i is i % num_classes; same seed gives byte-identical
// pixels. Also serves as the generic textured corpus for map learning.
Dataset synth_classification_set(std::uint64_t seed, int n, int num_classes);

// One fixed asymmetric 64x64 template warped by a ground-truth pose.
// family "rotation": continuous angles in [0,360). family "affine": a
// documented 10-element transform set, items record the element index.
// Warps use bilinear/replicate; the template is constant outside a centered
// disk so every pose sees the same border.
Dataset synth_pose_set(std::uint64_t seed, int n, const std::string& family);

// The canonical pose template (deterministic, independent of dataset seed).
Image pose_template();

// The fixed affine pose family (element 0 is the identity), centered on a
// size x size image.
std::vector<Affine2> affine_pose_family(int size);

// Unlabeled size x size oriented-stroke texture images; the generic corpus
// for learning maps on grids larger than the 64x64 datasets allow.
std::vector<Image> synth_texture_images(std::uint64_t seed, int n, int size);

// Marks the last test_n items as the "test" split, the rest "train".
// Round-robin class labels keep both splits balanced.
void assign_splits(Dataset& ds, int test_n);

// The items carrying the given split tag (dataset metadata is shared).
Dataset split_of(const Dataset& ds, const std::string& split);

// Writes img_00000.pgm ... plus index.json; load reads them back.
void save_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

}  // namespace eqm
