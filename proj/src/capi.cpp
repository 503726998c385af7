#include "equimap/equimap.h"

#include <cstdlib>
#include <cstring>
#include <string>

#include <nlohmann/json.hpp>

#include "common.hpp"
#include "emap.hpp"
#include "experiments.hpp"
#include "field.hpp"
#include "geometry.hpp"
#include "hog.hpp"
#include "image.hpp"

using namespace eqm;

struct eqm_image {
  Image v;
};
struct eqm_field {
  FeatureField v;
};
struct eqm_map {
  EquivariantMap v;
};

namespace {

thread_local std::string t_last_error = "no error";

eqm_status to_status(Errc code) {
  switch (code) {
    case Errc::invalid_argument: return EQM_ERR_INVALID;
    case Errc::io: return EQM_ERR_IO;
    case Errc::numeric: return EQM_ERR_NUMERIC;
    case Errc::unsupported: return EQM_ERR_UNSUPPORTED;
  }
  return EQM_ERR_INTERNAL;
}

// Runs fn, translating exceptions into status codes + the thread-local
// message. All API entry points funnel through here.
template <typename Fn>
eqm_status guarded(Fn&& fn) {
  try {
    fn();
    return EQM_OK;
  } catch (const Error& e) {
    t_last_error = e.what();
    return to_status(e.code());
  } catch (const std::exception& e) {
    t_last_error = e.what();
    return EQM_ERR_INTERNAL;
  } catch (...) {
    t_last_error = "unknown error";
    return EQM_ERR_INTERNAL;
  }
}

eqm_status invalid(const char* msg) {
  t_last_error = msg;
  return EQM_ERR_INVALID;
}

}  // namespace

extern "C" {

const char* eqm_version(void) { return "0.1.0"; }

const char* eqm_last_error(void) { return t_last_error.c_str(); }

void eqm_set_threads(int n) { set_worker_threads(n); }

void eqm_set_verbosity(int level) { set_log_verbosity(level); }

/* ---- images ---- */

eqm_status eqm_image_load(const char* path, eqm_image** out) {
  if (!path || !out) return invalid("eqm_image_load: NULL argument");
  return guarded([&] { *out = new eqm_image{load_pnm(path)}; });
}

eqm_status eqm_image_save(const eqm_image* img, const char* path) {
  if (!img || !path) return invalid("eqm_image_save: NULL argument");
  return guarded([&] { save_pnm(img->v, path); });
}

eqm_status eqm_image_create(int width, int height, int channels, const double* data,
                            eqm_image** out) {
  if (!data || !out) return invalid("eqm_image_create: NULL argument");
  return guarded([&] {
    Image img(width, height, channels);
    std::memcpy(img.data.data(), data, img.data.size() * sizeof(double));
    *out = new eqm_image{std::move(img)};
  });
}

void eqm_image_free(eqm_image* img) { delete img; }

int eqm_image_width(const eqm_image* img) { return img ? img->v.width : 0; }
int eqm_image_height(const eqm_image* img) { return img ? img->v.height : 0; }
int eqm_image_channels(const eqm_image* img) { return img ? img->v.channels : 0; }

eqm_status eqm_image_pixels(const eqm_image* img, double* buf, size_t len) {
  if (!img || !buf) return invalid("eqm_image_pixels: NULL argument");
  if (len < img->v.data.size()) return invalid("eqm_image_pixels: buffer too small");
  std::memcpy(buf, img->v.data.data(), img->v.data.size() * sizeof(double));
  return EQM_OK;
}

eqm_status eqm_image_warp(const eqm_image* img, const double affine[6], int bilinear,
                          int replicate, eqm_image** out) {
  if (!img || !affine || !out) return invalid("eqm_image_warp: NULL argument");
  return guarded([&] {
    Affine2 g = from_array({affine[0], affine[1], affine[2], affine[3], affine[4], affine[5]});
    *out = new eqm_image{warp(img->v, g, bilinear ? Interp::bilinear : Interp::nearest,
                              replicate ? Pad::replicate : Pad::zero)};
  });
}

eqm_status eqm_parse_transform(const char* spec, int width, int height, double affine[6]) {
  if (!spec || !affine) return invalid("eqm_parse_transform: NULL argument");
  return guarded([&] {
    auto arr = to_array(parse_transform(spec, width, height));
    for (int i = 0; i < 6; ++i) affine[i] = arr[std::size_t(i)];
  });
}

/* ---- fields ---- */

eqm_status eqm_field_load(const char* path, eqm_field** out) {
  if (!path || !out) return invalid("eqm_field_load: NULL argument");
  return guarded([&] { *out = new eqm_field{load_field(path)}; });
}

eqm_status eqm_field_save(const eqm_field* f, const char* path) {
  if (!f || !path) return invalid("eqm_field_save: NULL argument");
  return guarded([&] { save_field(f->v, path); });
}

void eqm_field_free(eqm_field* f) { delete f; }

int eqm_field_height(const eqm_field* f) { return f ? f->v.h : 0; }
int eqm_field_width(const eqm_field* f) { return f ? f->v.w : 0; }
int eqm_field_depth(const eqm_field* f) { return f ? f->v.d : 0; }

eqm_status eqm_field_geometry(const eqm_field* f, double geom[4]) {
  if (!f || !geom) return invalid("eqm_field_geometry: NULL argument");
  geom[0] = f->v.geom.sx;
  geom[1] = f->v.geom.sy;
  geom[2] = f->v.geom.ox;
  geom[3] = f->v.geom.oy;
  return EQM_OK;
}

eqm_status eqm_field_data(const eqm_field* f, double* buf, size_t len) {
  if (!f || !buf) return invalid("eqm_field_data: NULL argument");
  if (len < f->v.data.size()) return invalid("eqm_field_data: buffer too small");
  std::memcpy(buf, f->v.data.data(), f->v.data.size() * sizeof(double));
  return EQM_OK;
}

eqm_status eqm_hog_extract(const eqm_image* img, int cell, int orientations, eqm_field** out) {
  if (!img || !out) return invalid("eqm_hog_extract: NULL argument");
  return guarded([&] {
    HogConfig cfg;
    cfg.cell = cell;
    cfg.orientations = orientations;
    *out = new eqm_field{extract_hog(img->v, cfg)};
  });
}

/* ---- maps ---- */

eqm_status eqm_map_load(const char* path, eqm_map** out) {
  if (!path || !out) return invalid("eqm_map_load: NULL argument");
  return guarded([&] { *out = new eqm_map{load_map(path)}; });
}

eqm_status eqm_map_save(const eqm_map* map, const char* path) {
  if (!map || !path) return invalid("eqm_map_save: NULL argument");
  return guarded([&] { save_map(map->v, path); });
}

void eqm_map_free(eqm_map* map) { delete map; }

eqm_status eqm_map_apply(const eqm_map* map, const eqm_field* f, eqm_field** out) {
  if (!map || !f || !out) return invalid("eqm_map_apply: NULL argument");
  return guarded([&] { *out = new eqm_field{apply(map->v, f->v)}; });
}

eqm_status eqm_hog_permutation(int grid_h, int grid_w, int cell, int orientations, const char* g,
                               eqm_map** out) {
  if (!g || !out) return invalid("eqm_hog_permutation: NULL argument");
  return guarded([&] {
    HogConfig cfg;
    cfg.cell = cell;
    cfg.orientations = orientations;
    *out = new eqm_map{hog_permutation(grid_h, grid_w, cfg, g)};
  });
}

/* ---- experiment runner ---- */

eqm_status eqm_run(const char* command, const char* config_json, char** summary_json) {
  if (!command) return invalid("eqm_run: NULL command");
  return guarded([&] {
    nlohmann::json config = nlohmann::json::object();
    if (config_json && config_json[0]) {
      config = nlohmann::json::parse(config_json, nullptr, false);
      require(!config.is_discarded(), Errc::invalid_argument, "eqm_run: config is not valid JSON");
    }
    nlohmann::json summary = run_command(command, config);
    if (summary_json) {
      std::string text = summary.dump(2);
      char* buf = static_cast<char*>(std::malloc(text.size() + 1));
      require(buf != nullptr, Errc::numeric, "eqm_run: out of memory");
      std::memcpy(buf, text.c_str(), text.size() + 1);
      *summary_json = buf;
    }
  });
}

void eqm_string_free(char* s) { std::free(s); }

}  // extern "C"
