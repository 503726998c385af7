// Images, PNM I/O, and affine warping.
#pragma once

#include <string>
#include <vector>

#include "geometry.hpp"

namespace eqm {

enum class Interp { nearest, bilinear };
enum class Pad { zero, replicate };

// Row-major H x W x C, C in {1,3}, values in [0,1].
struct Image {
  int width = 0, height = 0, channels = 1;
  std::vector<double> data;

  Image() = default;
  Image(int w, int h, int c);

  double& at(int x, int y, int ch) { return data[std::size_t((y * width + x) * channels + ch)]; }
  double at(int x, int y, int ch) const {
    return data[std::size_t((y * width + x) * channels + ch)];
  }
};

// 8-bit binary PGM (P5) / PPM (P6). Write picks the magic from channels.
Image load_pnm(const std::string& path);
void save_pnm(const Image& img, const std::string& path);

// Rec601 luminance; 1-channel input passes through.
Image grayscale(const Image& img);

// Inverse warp: out(q) = img(g^{-1} q). Output has the input's size.
Image warp(const Image& img, const Affine2& g, Interp interp, Pad pad);

// Samples one channel at fractional coordinates with the given padding.
double sample(const Image& img, double x, double y, int ch, Interp interp, Pad pad);

}  // namespace eqm
