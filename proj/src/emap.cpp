#include "emap.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "common.hpp"

namespace eqm {

std::vector<std::uint8_t> EquivariantMap::valid_mask() const {
  std::vector<std::uint8_t> mask(std::size_t(out_h * out_w), 0);
  for (int s : valid_sites) mask[std::size_t(s)] = 1;
  return mask;
}

void validate_map(const EquivariantMap& map) {
  require(map.out_h > 0 && map.out_w > 0 && map.out_d > 0 && map.in_h > 0 && map.in_w > 0 &&
              map.in_d > 0,
          Errc::invalid_argument, "map: bad dimensions");
  require(int(map.rows.size()) == map.out_components(), Errc::invalid_argument,
          "map: row count mismatch");
  require(int(map.bias.size()) == map.out_components(), Errc::invalid_argument,
          "map: bias count mismatch");
  auto mask = map.valid_mask();
  for (int s = 0; s < map.out_h * map.out_w; ++s) {
    for (int t = 0; t < map.out_d; ++t) {
      const auto& row = map.rows[std::size_t(s * map.out_d + t)];
      if (!mask[std::size_t(s)]) {
        require(row.empty() && map.bias[std::size_t(s * map.out_d + t)] == 0.0,
                Errc::invalid_argument, "map: dead site has coefficients");
      }
      for (const MapEntry& e : row) {
        require(e.col < std::uint32_t(map.in_components()), Errc::invalid_argument,
                "map: column out of range");
        require(std::isfinite(e.w), Errc::numeric, "map: non-finite coefficient");
      }
    }
  }
}

FeatureField apply(const EquivariantMap& map, const FeatureField& f) {
  require(f.h == map.in_h && f.w == map.in_w && f.d == map.in_d, Errc::invalid_argument,
          "apply: field dimensions do not match map input");
  FeatureField out(map.out_h, map.out_w, map.out_d);
  out.geom = map.out_geom;
  for (int s : map.valid_sites) {
    for (int t = 0; t < map.out_d; ++t) {
      std::size_t r = std::size_t(s * map.out_d + t);
      double acc = map.bias[r];
      for (const MapEntry& e : map.rows[r]) acc += e.w * f.data[e.col];
      out.data[r] = acc;
    }
  }
  return out;
}

AdjointResult apply_adjoint(const EquivariantMap& map, const FeatureField& w_out) {
  require(w_out.h == map.out_h && w_out.w == map.out_w && w_out.d == map.out_d,
          Errc::invalid_argument, "apply_adjoint: field dimensions do not match map output");
  AdjointResult res;
  res.field = FeatureField(map.in_h, map.in_w, map.in_d);
  res.field.geom = map.in_geom;
  for (int s : map.valid_sites) {
    for (int t = 0; t < map.out_d; ++t) {
      std::size_t r = std::size_t(s * map.out_d + t);
      double wr = w_out.data[r];
      res.offset += wr * map.bias[r];
      for (const MapEntry& e : map.rows[r]) res.field.data[e.col] += wr * e.w;
    }
  }
  return res;
}

namespace {

void put_bytes(std::ostream& out, const void* p, std::size_t n) {
  out.write(static_cast<const char*>(p), std::streamsize(n));
}

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  put_bytes(out, b, 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  put_bytes(out, b, 8);
}

void put_f64(std::ostream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}

void get_bytes(std::istream& in, void* p, std::size_t n, const char* what) {
  in.read(static_cast<char*>(p), std::streamsize(n));
  require(bool(in), Errc::io, std::string("load_map: truncated ") + what);
}

std::uint32_t get_u32(std::istream& in, const char* what) {
  unsigned char b[4];
  get_bytes(in, b, 4, what);
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
         std::uint32_t(b[3]) << 24;
}

std::uint64_t get_u64(std::istream& in, const char* what) {
  unsigned char b[8];
  get_bytes(in, b, 8, what);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
  return v;
}

double get_f64(std::istream& in, const char* what) {
  std::uint64_t bits = get_u64(in, what);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

nlohmann::json geom_json(const FieldGeometry& g) {
  return nlohmann::json::array({g.sx, g.sy, g.ox, g.oy});
}

FieldGeometry geom_from_json(const nlohmann::json& j) {
  FieldGeometry g;
  g.sx = j.at(0);
  g.sy = j.at(1);
  g.ox = j.at(2);
  g.oy = j.at(3);
  return g;
}

}  // namespace

void save_map(const EquivariantMap& map, const std::string& path) {
  validate_map(map);
  std::ofstream out(path, std::ios::binary);
  require(bool(out), Errc::io, "save_map: cannot open " + path);
  std::uint64_t nnz = 0;
  for (const auto& row : map.rows) nnz += row.size();
  nlohmann::json hdr;
  hdr["out"] = {map.out_h, map.out_w, map.out_d};
  hdr["in"] = {map.in_h, map.in_w, map.in_d};
  hdr["out_geom"] = geom_json(map.out_geom);
  hdr["in_geom"] = geom_json(map.in_geom);
  hdr["g"] = to_array(map.g);
  hdr["method"] = map.method;
  hdr["k"] = map.k;
  hdr["m"] = map.m;
  hdr["lambda"] = map.lambda;
  hdr["learn_seconds"] = map.learn_seconds;
  hdr["valid_sites"] = map.valid_sites;
  hdr["nnz"] = nnz;
  std::string hs = hdr.dump();
  out.write("EQM1", 4);
  put_u32(out, std::uint32_t(hs.size()));
  put_bytes(out, hs.data(), hs.size());
  put_u64(out, nnz);
  for (std::size_t r = 0; r < map.rows.size(); ++r) {
    for (const MapEntry& e : map.rows[r]) {
      put_u32(out, std::uint32_t(r));
      put_u32(out, e.col);
      put_f64(out, e.w);
    }
  }
  put_u32(out, std::uint32_t(map.bias.size()));
  for (double b : map.bias) put_f64(out, b);
  require(bool(out), Errc::io, "save_map: write failed for " + path);
}

EquivariantMap load_map(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(bool(in), Errc::io, "load_map: cannot open " + path);
  char magic[4];
  get_bytes(in, magic, 4, "magic");
  require(std::memcmp(magic, "EQM1", 4) == 0, Errc::io, "load_map: bad magic in " + path);
  std::uint32_t hlen = get_u32(in, "header length");
  std::string hs(hlen, '\0');
  get_bytes(in, hs.data(), hlen, "header");
  nlohmann::json hdr;
  try {
    hdr = nlohmann::json::parse(hs);
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::io, std::string("load_map: bad header json: ") + e.what());
  }
  EquivariantMap map;
  map.out_h = hdr.at("out").at(0);
  map.out_w = hdr.at("out").at(1);
  map.out_d = hdr.at("out").at(2);
  map.in_h = hdr.at("in").at(0);
  map.in_w = hdr.at("in").at(1);
  map.in_d = hdr.at("in").at(2);
  map.out_geom = geom_from_json(hdr.at("out_geom"));
  map.in_geom = geom_from_json(hdr.at("in_geom"));
  map.g = from_array(hdr.at("g").get<std::array<double, 6>>());
  map.method = hdr.at("method");
  map.k = hdr.at("k");
  map.m = hdr.at("m");
  map.lambda = hdr.at("lambda");
  map.learn_seconds = hdr.value("learn_seconds", 0.0);
  map.valid_sites = hdr.at("valid_sites").get<std::vector<int>>();
  map.rows.assign(std::size_t(map.out_components()), {});
  map.bias.assign(std::size_t(map.out_components()), 0.0);
  std::uint64_t nnz = get_u64(in, "nnz");
  require(nnz == hdr.at("nnz").get<std::uint64_t>(), Errc::io, "load_map: nnz mismatch");
  std::int64_t prev_row = -1;
  for (std::uint64_t i = 0; i < nnz; ++i) {
    std::uint32_t r = get_u32(in, "triplet row");
    std::uint32_t c = get_u32(in, "triplet col");
    double w = get_f64(in, "triplet value");
    require(r < std::uint32_t(map.out_components()), Errc::io, "load_map: row out of range");
    require(std::int64_t(r) >= prev_row, Errc::io, "load_map: triplets not sorted by row");
    prev_row = std::int64_t(r);
    map.rows[r].push_back({c, w});
  }
  std::uint32_t nbias = get_u32(in, "bias count");
  require(nbias == std::uint32_t(map.bias.size()), Errc::io, "load_map: bias count mismatch");
  for (double& b : map.bias) b = get_f64(in, "bias");
  validate_map(map);
  return map;
}

namespace {

struct Cand {
  double d2;
  int flat;
  int u, v;
};

bool cand_less(const Cand& a, const Cand& b) {
  if (a.d2 != b.d2) return a.d2 < b.d2;
  return a.flat < b.flat;  // (v,u) lexicographic
}

}  // namespace

Neighborhood neighborhood(const FieldGeometry& out_geom, const FieldGeometry& in_geom, int in_h,
                          int in_w, const Affine2& g, int m, int u, int v) {
  require(in_h > 0 && in_w > 0, Errc::invalid_argument, "neighborhood: empty grid");
  Neighborhood nb;
  nb.point = backproject(out_geom, g, in_geom, double(u), double(v));
  std::size_t want = m <= 0 ? std::size_t(in_h) * std::size_t(in_w)
                            : std::min<std::size_t>(std::size_t(m) * std::size_t(m),
                                                    std::size_t(in_h) * std::size_t(in_w));
  std::vector<Cand> cands;
  cands.reserve(std::size_t(in_h) * std::size_t(in_w));
  for (int vv = 0; vv < in_h; ++vv)
    for (int uu = 0; uu < in_w; ++uu) {
      double du = uu - nb.point.x, dv = vv - nb.point.y;
      cands.push_back({du * du + dv * dv, vv * in_w + uu, uu, vv});
    }
  std::sort(cands.begin(), cands.end(), cand_less);
  nb.anchor = cands[0].flat;
  nb.sites.reserve(want);
  for (std::size_t i = 0; i < want; ++i) nb.sites.push_back(cands[i].flat);
  std::sort(nb.sites.begin(), nb.sites.end());
  return nb;
}

bool neighborhood_interior(const FieldGeometry& out_geom, const FieldGeometry& in_geom, int in_h,
                           int in_w, const Affine2& g, int m, int u, int v) {
  Vec2 pt = backproject(out_geom, g, in_geom, double(u), double(v));
  int me = m <= 0 ? 1 : m;
  // Enumerate an unclipped lattice window large enough to contain the m^2
  // nearest sites, then check those against the grid bounds.
  int cu = int(std::floor(pt.x)), cv = int(std::floor(pt.y));
  int r = me + 1;
  std::vector<Cand> cands;
  for (int vv = cv - r; vv <= cv + r + 1; ++vv)
    for (int uu = cu - r; uu <= cu + r + 1; ++uu) {
      double du = uu - pt.x, dv = vv - pt.y;
      // flat index on the infinite lattice for tie-breaking only
      cands.push_back({du * du + dv * dv, (vv + 1000) * 100000 + (uu + 1000), uu, vv});
    }
  std::size_t want = std::size_t(me) * std::size_t(me);
  std::partial_sort(cands.begin(), cands.begin() + std::ptrdiff_t(want), cands.end(), cand_less);
  for (std::size_t i = 0; i < want; ++i)
    if (cands[i].u < 0 || cands[i].u >= in_w || cands[i].v < 0 || cands[i].v >= in_h) return false;
  return true;
}

}  // namespace eqm
