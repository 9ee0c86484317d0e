#ifndef TOPOMESH_H
#define TOPOMESH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum TmStatus {
  TM_STATUS_OK = 0,
  TM_STATUS_NULL_POINTER = 1,
  TM_STATUS_INVALID_ARGUMENT = 2,
  TM_STATUS_TOPOLOGY = 3,
  TM_STATUS_DEGENERATE_MESH = 4,
  TM_STATUS_SHAPE_MISMATCH = 5,
  TM_STATUS_FORMAT = 6,
  TM_STATUS_MISSING_PATH = 7,
  TM_STATUS_IO = 8,
  TM_STATUS_NON_FINITE = 9,
  TM_STATUS_CHECKPOINT = 10,
  TM_STATUS_BUFFER_TOO_SMALL = 11,
  TM_STATUS_PANIC = 12,
} TmStatus;

/**
 * Gaussians bound to the vertices of a mesh.
 */
typedef struct TmGaussians TmGaussians;

/**
 * Quad mesh with per-vertex UVs.
 */
typedef struct TmMesh TmMesh;

/**
 * Pinhole camera; `world_to_cam` is a row-major 4x4 rigid transform.
 */
typedef struct TmCamera {
  double focal[2];
  double principal_point[2];
  double world_to_cam[16];
  uint32_t width;
  uint32_t height;
} TmCamera;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *tm_version(void);

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length without the NUL.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t tm_last_error_message(char *buf, size_t len);

/**
 * Loads a quad OBJ.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum TmStatus tm_mesh_load_obj(const char *path, struct TmMesh **out);

/**
 * Unit quad sphere with `subdivision` quads per cube-face edge.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum TmStatus tm_mesh_quad_sphere(uint32_t subdivision, struct TmMesh **out);

/**
 * # Safety
 * `mesh` must come from this library and must not be used afterwards.
 */
void tm_mesh_free(struct TmMesh *mesh);

/**
 * # Safety
 * `mesh` and `path` must be valid.
 */
enum TmStatus tm_mesh_save_obj(const struct TmMesh *mesh, const char *path);

/**
 * # Safety
 * `mesh` must be valid or null (returns 0).
 */
size_t tm_mesh_vertex_count(const struct TmMesh *mesh);

/**
 * # Safety
 * `mesh` must be valid or null (returns 0).
 */
size_t tm_mesh_face_count(const struct TmMesh *mesh);

/**
 * Copies `4 * faces` vertex indices.
 *
 * # Safety
 * `out` must hold `len` values.
 */
enum TmStatus tm_mesh_faces(const struct TmMesh *mesh, uint32_t *out, size_t len);

/**
 * Copies `3 * vertices` coordinates.
 *
 * # Safety
 * `out` must hold `len` values.
 */
enum TmStatus tm_mesh_positions(const struct TmMesh *mesh, double *out, size_t len);

/**
 * Replaces all positions; `len` must be exactly `3 * vertices`.
 *
 * # Safety
 * `values` must hold `len` values.
 */
enum TmStatus tm_mesh_set_positions(struct TmMesh *mesh, const double *values, size_t len);

/**
 * Area-weighted unit vertex normals, `3 * vertices` values.
 *
 * # Safety
 * `out` must hold `len` values.
 */
enum TmStatus tm_mesh_normals(const struct TmMesh *mesh, double *out, size_t len);

/**
 * Binds one Gaussian to each vertex, colours sampled from an RGB texture of
 * `width * height * 3` doubles at the vertex UVs.
 *
 * # Safety
 * `mesh`, `texture` and `out` must be valid.
 */
enum TmStatus tm_gaussians_from_mesh(const struct TmMesh *mesh,
                                     const double *texture,
                                     uint32_t width,
                                     uint32_t height,
                                     struct TmGaussians **out);

/**
 * Loads a base checkpoint onto the topology of `mesh`.
 *
 * # Safety
 * `mesh`, `path` and `out` must be valid.
 */
enum TmStatus tm_gaussians_load(const struct TmMesh *mesh,
                                const char *path,
                                struct TmGaussians **out);

/**
 * # Safety
 * `g` and `path` must be valid.
 */
enum TmStatus tm_gaussians_save(const struct TmGaussians *g, const char *path);

/**
 * # Safety
 * `g` must come from this library and must not be used afterwards.
 */
void tm_gaussians_free(struct TmGaussians *g);

/**
 * # Safety
 * `g` must be valid or null (returns 0).
 */
size_t tm_gaussians_count(const struct TmGaussians *g);

/**
 * Copies `3 * count` centre coordinates.
 *
 * # Safety
 * `out` must hold `len` values.
 */
enum TmStatus tm_gaussians_positions(const struct TmGaussians *g, double *out, size_t len);

/**
 * Renders into `width * height * 3` colours and, when `alpha` is not null,
 * `width * height` accumulated opacities. `oracle` disables the low-pass
 * filter and both early-termination thresholds.
 *
 * # Safety
 * `g` and `camera` must be valid; the buffers must hold the stated lengths.
 */
enum TmStatus tm_render(const struct TmGaussians *g,
                        const struct TmCamera *camera,
                        bool oracle,
                        double *rgb,
                        size_t rgb_len,
                        double *alpha,
                        size_t alpha_len);

/**
 * Mesh vertices pushed out along their normals to the Gaussian surfaces,
 * `3 * count` values.
 *
 * # Safety
 * `out` must hold `len` values.
 */
enum TmStatus tm_extract_mesh(const struct TmGaussians *g, double *out, size_t len);

/**
 * Densifies every quad into an `n x n` lattice and bakes the interpolated
 * colours into a `resolution²` RGB texture. `coverage`, when not null,
 * receives 1 for texels inside a triangle and 0 elsewhere.
 *
 * # Safety
 * `g` must be valid; the buffers must hold the stated lengths.
 */
enum TmStatus tm_bake_texture(const struct TmGaussians *g,
                              uint32_t n,
                              uint32_t resolution,
                              double *rgb,
                              size_t rgb_len,
                              uint8_t *coverage,
                              size_t coverage_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TOPOMESH_H */
