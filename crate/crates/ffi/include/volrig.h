#ifndef VOLRIG_H
#define VOLRIG_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Which procedural character `volrig_synth_character` builds.
typedef enum VolrigCharacterKind {
  VOLRIG_CHARACTER_KIND_BIPED = 0,
  VOLRIG_CHARACTER_KIND_QUADRUPED = 1,
  VOLRIG_CHARACTER_KIND_STAR = 2,
} VolrigCharacterKind;

typedef enum VolrigStatus {
  VOLRIG_STATUS_OK = 0,
  VOLRIG_STATUS_NULL_POINTER = 1,
  VOLRIG_STATUS_INVALID_ARGUMENT = 2,
  VOLRIG_STATUS_NOT_FOUND = 3,
  VOLRIG_STATUS_IO = 4,
  VOLRIG_STATUS_PARSE = 5,
  VOLRIG_STATUS_NO_JOINTS = 6,
  VOLRIG_STATUS_FAILED = 7,
  VOLRIG_STATUS_PANIC = 8,
} VolrigStatus;

// A triangle mesh.
typedef struct VolrigMesh VolrigMesh;

// A trained network with its featurization settings.
typedef struct VolrigModel VolrigModel;

// A skeleton tree.
typedef struct VolrigSkeleton VolrigSkeleton;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. The pointer is
// valid until the next volrig call on the same thread.
const char *volrig_last_error(void);

// Library version as a static nul-terminated string.
const char *volrig_version(void);

// Reads a Wavefront OBJ file.
//
// # Safety
// `path` must be a nul-terminated string and `out` a writable pointer.
enum VolrigStatus volrig_mesh_load(const char *path, struct VolrigMesh **out);

// Builds a mesh from `vertex_count` xyz triples and `triangle_count` index
// triples.
//
// # Safety
// The buffers must hold `3 * vertex_count` doubles and `3 * triangle_count`
// indices.
enum VolrigStatus volrig_mesh_from_buffers(const double *vertices,
                                           size_t vertex_count,
                                           const uint32_t *triangles,
                                           size_t triangle_count,
                                           struct VolrigMesh **out);

// # Safety
// `mesh` must come from this library or be null.
void volrig_mesh_free(struct VolrigMesh *mesh);

// # Safety
// `mesh` must be a live handle.
size_t volrig_mesh_vertex_count(const struct VolrigMesh *mesh);

// # Safety
// `mesh` must be a live handle.
size_t volrig_mesh_triangle_count(const struct VolrigMesh *mesh);

// A procedural character in its normalized frame. Either output may be
// null when not wanted.
//
// # Safety
// Non-null outputs must be writable.
enum VolrigStatus volrig_synth_character(enum VolrigCharacterKind kind,
                                         uint64_t seed,
                                         struct VolrigMesh **out_mesh,
                                         struct VolrigSkeleton **out_skeleton);

// Loads a checkpoint written by `volrig train`.
//
// # Safety
// `path` must be a nul-terminated string and `out` writable.
enum VolrigStatus volrig_model_load(const char *path, struct VolrigModel **out);

// # Safety
// `model` must come from this library or be null.
void volrig_model_free(struct VolrigModel *model);

// Grid resolution the model expects, 0 for a null handle.
//
// # Safety
// `model` must be a live handle or null.
size_t volrig_model_resolution(const struct VolrigModel *model);

// Predicts a skeleton in the mesh's own frame. `granularity` lies in [0, 1];
// 0.02 is the usual default.
//
// # Safety
// Handles must be live and `out` writable.
enum VolrigStatus volrig_predict(const struct VolrigModel *model,
                                 const struct VolrigMesh *mesh,
                                 double granularity,
                                 struct VolrigSkeleton **out);

// # Safety
// `skeleton` must come from this library or be null.
void volrig_skeleton_free(struct VolrigSkeleton *skeleton);

// # Safety
// `skeleton` must be a live handle or null.
size_t volrig_skeleton_joint_count(const struct VolrigSkeleton *skeleton);

// # Safety
// `skeleton` must be a live handle or null.
size_t volrig_skeleton_root(const struct VolrigSkeleton *skeleton);

// Writes the position of joint `index` to `xyz[0..3]`.
//
// # Safety
// `xyz` must have room for three doubles.
enum VolrigStatus volrig_skeleton_joint_position(const struct VolrigSkeleton *skeleton,
                                                 size_t index,
                                                 double *xyz);

// Parent of joint `index`, or -1 for the root.
//
// # Safety
// `parent` must be writable.
enum VolrigStatus volrig_skeleton_parent(const struct VolrigSkeleton *skeleton,
                                         size_t index,
                                         int64_t *parent);

// Saves the skeleton in the rig text format, without a mesh reference.
//
// # Safety
// `path` must be a nul-terminated string.
enum VolrigStatus volrig_skeleton_save(const struct VolrigSkeleton *skeleton, const char *path);

// Joint and joint-to-bone Chamfer distances over `longest_axis`.
//
// # Safety
// Handles must be live; outputs may be null when not wanted.
enum VolrigStatus volrig_chamfer(const struct VolrigSkeleton *pred,
                                 const struct VolrigSkeleton *reference,
                                 double longest_axis,
                                 double *cd_joint_out,
                                 double *cd_joint2bone_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VOLRIG_H */
