/* equimap: equivariant feature maps for image representations.
 *
 * C interface to the shared library. All functions returning eqm_status
 * give EQM_OK on success; on failure eqm_last_error() describes the problem
 * for the calling thread. Objects are opaque; every *_free accepts NULL.
 */
#ifndef EQUIMAP_H
#define EQUIMAP_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum {
  EQM_OK = 0,
  EQM_ERR_INVALID = 1,     /* bad argument or config */
  EQM_ERR_IO = 2,          /* file missing, unreadable, or malformed */
  EQM_ERR_NUMERIC = 3,     /* solver or training diverged */
  EQM_ERR_UNSUPPORTED = 4, /* e.g. analytic permutation for rot90 */
  EQM_ERR_INTERNAL = 5
} eqm_status;

const char* eqm_version(void);

/* Message for the last failing call on this thread; never NULL. */
const char* eqm_last_error(void);

/* Caps internal worker threads (default 1). */
void eqm_set_threads(int n);

/* Stderr log level: 0 silent, 1 progress, 2 chatty. */
void eqm_set_verbosity(int level);

typedef struct eqm_image eqm_image;
typedef struct eqm_field eqm_field;
typedef struct eqm_map eqm_map;

/* ---- images (grayscale or RGB, doubles in [0,1], PGM/PPM files) ---- */

eqm_status eqm_image_load(const char* path, eqm_image** out);
eqm_status eqm_image_save(const eqm_image* img, const char* path);
/* data is row-major, channel innermost, width*height*channels doubles. */
eqm_status eqm_image_create(int width, int height, int channels, const double* data,
                            eqm_image** out);
void eqm_image_free(eqm_image* img);
int eqm_image_width(const eqm_image* img);
int eqm_image_height(const eqm_image* img);
int eqm_image_channels(const eqm_image* img);
eqm_status eqm_image_pixels(const eqm_image* img, double* buf, size_t len);

/* affine: row-major {a, b, tx, c, d, ty} mapping (x,y) -> (ax+by+tx, cx+dy+ty).
 * bilinear: 0 nearest, 1 bilinear. replicate: 0 zero-pad, 1 replicate. */
eqm_status eqm_image_warp(const eqm_image* img, const double affine[6], int bilinear,
                          int replicate, eqm_image** out);

/* Parses "identity" | "hflip" | "vflip" | "rot90" | "rot180" | "rot:<deg>" |
 * "scale:<s>" | "affine:a,b,tx,c,d,ty" relative to a width x height image. */
eqm_status eqm_parse_transform(const char* spec, int width, int height, double affine[6]);

/* ---- feature fields (H x W x D grids, EQF1 files) ---- */

eqm_status eqm_field_load(const char* path, eqm_field** out);
eqm_status eqm_field_save(const eqm_field* f, const char* path);
void eqm_field_free(eqm_field* f);
int eqm_field_height(const eqm_field* f);
int eqm_field_width(const eqm_field* f);
int eqm_field_depth(const eqm_field* f);
/* geom: {sx, sy, ox, oy}, grid index -> image coordinates. */
eqm_status eqm_field_geometry(const eqm_field* f, double geom[4]);
/* buf receives H*W*D doubles, site-major (v, then u), channel innermost. */
eqm_status eqm_field_data(const eqm_field* f, double* buf, size_t len);

eqm_status eqm_hog_extract(const eqm_image* img, int cell, int orientations, eqm_field** out);

/* ---- equivariant maps (EQM1 files) ---- */

eqm_status eqm_map_load(const char* path, eqm_map** out);
eqm_status eqm_map_save(const eqm_map* map, const char* path);
void eqm_map_free(eqm_map* map);
eqm_status eqm_map_apply(const eqm_map* map, const eqm_field* f, eqm_field** out);

/* Exact channel permutation for g in {identity, hflip, vflip, rot180};
 * rot90 with the default 9 orientations is EQM_ERR_UNSUPPORTED. */
eqm_status eqm_hog_permutation(int grid_h, int grid_w, int cell, int orientations, const char* g,
                               eqm_map** out);

/* ---- experiment runner ----
 *
 * command: synth | extract | train-net | learn-map | eval-map |
 *          learn-translayer | stitch | invariance | compensate |
 *          bench-pose | selftest
 * config_json: JSON object; artifacts are written to paths it names.
 * summary_json, when non-NULL, receives a malloc'd JSON summary; release it
 * with eqm_string_free. */
eqm_status eqm_run(const char* command, const char* config_json, char** summary_json);
void eqm_string_free(char* s);

#ifdef __cplusplus
}
#endif

#endif /* EQUIMAP_H */
