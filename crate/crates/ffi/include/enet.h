/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#ifndef ENET_H
#define ENET_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes shared by every entry point.
typedef enum EnetStatus {
  ENET_STATUS_OK = 0,
  // A pointer was null, a string was not UTF-8, or a buffer had the wrong length.
  ENET_STATUS_INVALID_ARGUMENT = 1,
  // Incompatible shapes or an unsupported input size.
  ENET_STATUS_SHAPE = 2,
  // A weight or image file is malformed.
  ENET_STATUS_FORMAT = 3,
  ENET_STATUS_IO = 4,
  // A numeric argument is outside its domain.
  ENET_STATUS_DOMAIN = 5,
  // The graph or its weights are inconsistent.
  ENET_STATUS_INVALID = 6,
  // An unexpected internal failure (including a caught panic).
  ENET_STATUS_INTERNAL = 7,
} EnetStatus;

// A network with its weights, fixed input size and reusable scratch buffers.
typedef struct EnetModel EnetModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread; empty after a success.
// The pointer stays valid until the next call on the same thread.
const char *enet_last_error(void);

// Builds an ENet for `num_classes` classes and a `3 × height × width` input,
// with weights drawn deterministically from `seed`.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum EnetStatus enet_model_build(size_t num_classes,
                                 size_t height,
                                 size_t width,
                                 uint64_t seed,
                                 struct EnetModel **out);

// Loads ENWT weights for a `num_classes`-class ENet at the given input size.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum EnetStatus enet_model_load(const char *path,
                                size_t num_classes,
                                size_t height,
                                size_t width,
                                struct EnetModel **out);

// Writes the model's weights as ENWT, in half precision if `fp16` is non-zero.
//
// # Safety
// `model` must be a live handle and `path` a NUL-terminated string.
enum EnetStatus enet_model_save(const struct EnetModel *model, const char *path, int32_t fp16);

// Folds batch norms into convolutions and removes dropout in place.
//
// # Safety
// `model` must be a live handle.
enum EnetStatus enet_model_fuse(struct EnetModel *model);

// Number of graph nodes, including input and output.
//
// # Safety
// `model` must be a live handle; `out` must be writable.
enum EnetStatus enet_model_node_count(const struct EnetModel *model, size_t *out);

// Input height, width and the number of output classes.
//
// # Safety
// `model` must be a live handle; the out pointers must be writable.
enum EnetStatus enet_model_dims(const struct EnetModel *model,
                                size_t *height,
                                size_t *width,
                                size_t *num_classes);

// Learnable parameter count.
//
// # Safety
// `model` must be a live handle; `out` must be writable.
enum EnetStatus enet_model_param_count(const struct EnetModel *model, uint64_t *out);

// Floating-point operations for one inference at the model's input size,
// counting a multiply-accumulate as two operations if `fma2` is non-zero.
//
// # Safety
// `model` must be a live handle; `out` must be writable.
enum EnetStatus enet_model_flops(const struct EnetModel *model, int32_t fma2, uint64_t *out);

// Runs the network on a `3 × H × W` row-major input and writes
// `num_classes × H × W` logits.
//
// # Safety
// `input` must point to `input_len` floats and `logits` to `logits_len`
// writable floats.
enum EnetStatus enet_model_infer(struct EnetModel *model,
                                 const float *input,
                                 size_t input_len,
                                 float *logits,
                                 size_t logits_len);

// Like [`enet_model_infer`] but writes the per-pixel argmax class
// (`H × W` values).
//
// # Safety
// `input` must point to `input_len` floats and `labels` to `labels_len`
// writable values.
enum EnetStatus enet_model_segment(struct EnetModel *model,
                                   const float *input,
                                   size_t input_len,
                                   uint32_t *labels,
                                   size_t labels_len);

// Releases a model. Null is ignored.
//
// # Safety
// `model` must be null or a handle not yet freed.
void enet_model_free(struct EnetModel *model);

// Class weight `1 / ln(c + p)` for class probability `p`.
//
// # Safety
// `out` must be writable.
enum EnetStatus enet_class_weight(double p, double c, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ENET_H */
