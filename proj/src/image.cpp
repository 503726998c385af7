#include "image.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "common.hpp"

namespace eqm {

Image::Image(int w, int h, int c) : width(w), height(h), channels(c) {
  require(w > 0 && h > 0 && (c == 1 || c == 3), Errc::invalid_argument, "Image: bad dimensions");
  data.assign(std::size_t(w) * std::size_t(h) * std::size_t(c), 0.0);
}

namespace {

// Skips whitespace and '#' comment lines between PNM header tokens.
int next_header_int(std::istream& in, const std::string& path) {
  for (;;) {
    int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
  }
  int value = -1;
  in >> value;
  require(bool(in) && value >= 0, Errc::io, "load_pnm: malformed header in " + path);
  return value;
}

}  // namespace

Image load_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(bool(in), Errc::io, "load_pnm: cannot open " + path);
  char m0 = 0, m1 = 0;
  in.get(m0);
  in.get(m1);
  require(m0 == 'P' && (m1 == '5' || m1 == '6'), Errc::io, "load_pnm: not a P5/P6 file: " + path);
  int channels = (m1 == '5') ? 1 : 3;
  int w = next_header_int(in, path);
  int h = next_header_int(in, path);
  int maxval = next_header_int(in, path);
  require(maxval == 255, Errc::io, "load_pnm: only maxval 255 supported: " + path);
  in.get();  // single whitespace after maxval
  Image img(w, h, channels);
  std::size_t n = img.data.size();
  std::vector<unsigned char> raw(n);
  in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(n));
  require(std::size_t(in.gcount()) == n, Errc::io, "load_pnm: truncated pixel data in " + path);
  for (std::size_t i = 0; i < n; ++i) img.data[i] = double(raw[i]) / 255.0;
  return img;
}

void save_pnm(const Image& img, const std::string& path) {
  require(img.width > 0 && img.height > 0, Errc::invalid_argument, "save_pnm: empty image");
  std::ofstream out(path, std::ios::binary);
  require(bool(out), Errc::io, "save_pnm: cannot open " + path);
  out << (img.channels == 1 ? "P5" : "P6") << "\n"
      << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> raw(img.data.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    double v = img.data[i];
    v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    raw[i] = static_cast<unsigned char>(std::lround(v * 255.0));
  }
  out.write(reinterpret_cast<const char*>(raw.data()), std::streamsize(raw.size()));
  require(bool(out), Errc::io, "save_pnm: write failed for " + path);
}

Image grayscale(const Image& img) {
  if (img.channels == 1) return img;
  Image out(img.width, img.height, 1);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      out.at(x, y, 0) =
          0.299 * img.at(x, y, 0) + 0.587 * img.at(x, y, 1) + 0.114 * img.at(x, y, 2);
  return out;
}

double sample(const Image& img, double x, double y, int ch, Interp interp, Pad pad) {
  auto fetch = [&](int ix, int iy) -> double {
    if (pad == Pad::replicate) {
      ix = ix < 0 ? 0 : (ix >= img.width ? img.width - 1 : ix);
      iy = iy < 0 ? 0 : (iy >= img.height ? img.height - 1 : iy);
    } else if (ix < 0 || iy < 0 || ix >= img.width || iy >= img.height) {
      return 0.0;
    }
    return img.at(ix, iy, ch);
  };
  if (interp == Interp::nearest) {
    return fetch(int(std::floor(x + 0.5)), int(std::floor(y + 0.5)));
  }
  double fx = std::floor(x), fy = std::floor(y);
  int x0 = int(fx), y0 = int(fy);
  double ax = x - fx, ay = y - fy;
  double v00 = fetch(x0, y0), v10 = fetch(x0 + 1, y0);
  double v01 = fetch(x0, y0 + 1), v11 = fetch(x0 + 1, y0 + 1);
  // Exact when ax == ay == 0, so lattice-exact warps are bit-exact.
  return (1.0 - ay) * ((1.0 - ax) * v00 + ax * v10) + ay * ((1.0 - ax) * v01 + ax * v11);
}

Image warp(const Image& img, const Affine2& g, Interp interp, Pad pad) {
  Image out(img.width, img.height, img.channels);
  Affine2 ginv = inverse(g);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      Vec2 src = ginv.apply({double(x), double(y)});
      for (int c = 0; c < img.channels; ++c)
        out.at(x, y, c) = sample(img, src.x, src.y, c, interp, pad);
    }
  }
  return out;
}

}  // namespace eqm
