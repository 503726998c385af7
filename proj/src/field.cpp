#include "field.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "common.hpp"

namespace eqm {

FeatureField::FeatureField(int h_, int w_, int d_) : h(h_), w(w_), d(d_) {
  require(h_ > 0 && w_ > 0 && d_ > 0, Errc::invalid_argument, "FeatureField: bad dimensions");
  data.assign(std::size_t(h_) * std::size_t(w_) * std::size_t(d_), 0.0);
}

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  require(bool(in), Errc::io, "load_field: truncated header in " + path);
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
         std::uint32_t(b[3]) << 24;
}

void put_f64(std::ostream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
  out.write(reinterpret_cast<char*>(b), 8);
}

double get_f64(std::istream& in, const std::string& path) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  require(bool(in), Errc::io, "load_field: truncated data in " + path);
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= std::uint64_t(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

}  // namespace

void save_field(const FeatureField& f, const std::string& path) {
  require(f.h > 0 && f.w > 0 && f.d > 0, Errc::invalid_argument, "save_field: empty field");
  std::ofstream out(path, std::ios::binary);
  require(bool(out), Errc::io, "save_field: cannot open " + path);
  out.write("EQF1", 4);
  put_u32(out, std::uint32_t(f.h));
  put_u32(out, std::uint32_t(f.w));
  put_u32(out, std::uint32_t(f.d));
  put_f64(out, f.geom.sx);
  put_f64(out, f.geom.sy);
  put_f64(out, f.geom.ox);
  put_f64(out, f.geom.oy);
  // File order is u-major (v faster, channel innermost); memory is v-major.
  for (int u = 0; u < f.w; ++u)
    for (int v = 0; v < f.h; ++v)
      for (int t = 0; t < f.d; ++t) put_f64(out, f.at(u, v, t));
  require(bool(out), Errc::io, "save_field: write failed for " + path);
}

FeatureField load_field(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(bool(in), Errc::io, "load_field: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  require(bool(in) && std::memcmp(magic, "EQF1", 4) == 0, Errc::io,
          "load_field: bad magic in " + path);
  std::uint32_t h = get_u32(in, path), w = get_u32(in, path), d = get_u32(in, path);
  require(h > 0 && w > 0 && d > 0 && double(h) * w * d < 1e9, Errc::io,
          "load_field: implausible dimensions in " + path);
  FeatureField f(static_cast<int>(h), static_cast<int>(w), static_cast<int>(d));
  f.geom.sx = get_f64(in, path);
  f.geom.sy = get_f64(in, path);
  f.geom.ox = get_f64(in, path);
  f.geom.oy = get_f64(in, path);
  for (int u = 0; u < f.w; ++u)
    for (int v = 0; v < f.h; ++v)
      for (int t = 0; t < f.d; ++t) f.at(u, v, t) = get_f64(in, path);
  return f;
}

FieldMetric parse_metric(const std::string& name) {
  if (name == "l2") return FieldMetric::l2;
  if (name == "hellinger") return FieldMetric::hellinger;
  if (name == "chi2") return FieldMetric::chi2;
  fail(Errc::invalid_argument, "parse_metric: unknown metric '" + name + "'");
}

namespace {

double site_distance(const double* a, const double* b, int d, FieldMetric metric) {
  double acc = 0.0;
  switch (metric) {
    case FieldMetric::l2:
      for (int t = 0; t < d; ++t) acc += (a[t] - b[t]) * (a[t] - b[t]);
      return std::sqrt(acc);
    case FieldMetric::hellinger:
      for (int t = 0; t < d; ++t) {
        require(a[t] >= 0.0 && b[t] >= 0.0, Errc::invalid_argument,
                "field_distance: hellinger needs nonnegative entries");
        double s = std::sqrt(a[t]) - std::sqrt(b[t]);
        acc += s * s;
      }
      return std::sqrt(acc);
    case FieldMetric::chi2:
      for (int t = 0; t < d; ++t) {
        require(a[t] >= 0.0 && b[t] >= 0.0, Errc::invalid_argument,
                "field_distance: chi2 needs nonnegative entries");
        double diff = a[t] - b[t];
        acc += diff * diff / (a[t] + b[t] + 1e-10);
      }
      return acc;
  }
  return acc;
}

}  // namespace

double field_distance(const FeatureField& f1, const FeatureField& f2, FieldMetric metric,
                      const std::vector<int>& sites) {
  require(f1.h == f2.h && f1.w == f2.w && f1.d == f2.d, Errc::invalid_argument,
          "field_distance: dimension mismatch");
  require(!sites.empty(), Errc::invalid_argument, "field_distance: empty site list");
  double acc = 0.0;
  for (int s : sites) {
    require(s >= 0 && s < f1.sites(), Errc::invalid_argument, "field_distance: site out of range");
    acc += site_distance(&f1.data[std::size_t(s) * std::size_t(f1.d)],
                         &f2.data[std::size_t(s) * std::size_t(f1.d)], f1.d, metric);
  }
  return acc / double(sites.size());
}

double field_distance(const FeatureField& f1, const FeatureField& f2, FieldMetric metric) {
  std::vector<int> all(std::size_t(f1.sites()));
  for (int i = 0; i < f1.sites(); ++i) all[std::size_t(i)] = i;
  return field_distance(f1, f2, metric, all);
}

double field_norm(const FeatureField& f, const std::vector<int>& sites) {
  require(!sites.empty(), Errc::invalid_argument, "field_norm: empty site list");
  double acc = 0.0;
  for (int s : sites) {
    require(s >= 0 && s < f.sites(), Errc::invalid_argument, "field_norm: site out of range");
    const double* a = &f.data[std::size_t(s) * std::size_t(f.d)];
    double n = 0.0;
    for (int t = 0; t < f.d; ++t) n += a[t] * a[t];
    acc += std::sqrt(n);
  }
  return acc / double(sites.size());
}

}  // namespace eqm
