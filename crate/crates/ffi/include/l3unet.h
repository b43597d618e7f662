#ifndef L3UNET_H
#define L3UNET_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define L3U_DTYPE_F32 0

#define L3U_DTYPE_I8 1

#define L3U_DTYPE_I32 2

typedef enum L3uStatus {
  L3U_STATUS_OK = 0,
  L3U_STATUS_NULL_POINTER = 1,
  L3U_STATUS_DIVISIBILITY = 2,
  L3U_STATUS_BINDING = 3,
  L3U_STATUS_SHAPE = 4,
  L3U_STATUS_FORMAT = 5,
  L3U_STATUS_IO = 6,
  L3U_STATUS_CONFIG = 7,
  L3U_STATUS_INVALID_ARGUMENT = 8,
  L3U_STATUS_PANIC = 9,
} L3uStatus;

typedef struct L3uConfusion L3uConfusion;

typedef struct L3uModel L3uModel;

typedef struct L3uTensor L3uTensor;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or NULL.
 * The string stays valid until the next failing call on the same thread.
 */
const char *l3u_last_error(void);

/**
 * # Safety
 * `s` must come from a function in this library that returns an owned
 * string, and must not be freed twice.
 */
void l3u_string_free(char *s);

/**
 * Copies `channels * height * width` elements of type `dtype` into a new
 * tensor.
 *
 * # Safety
 * `data` must point to that many readable elements; `out` must be writable.
 */
enum L3uStatus l3u_tensor_new(uint8_t dtype,
                              size_t channels,
                              size_t height,
                              size_t width,
                              const void *data,
                              struct L3uTensor **out);

/**
 * Reads an L3UT file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum L3uStatus l3u_tensor_read(const char *path, struct L3uTensor **out);

/**
 * # Safety
 * `t` must be a live tensor handle and `path` a NUL-terminated string.
 */
enum L3uStatus l3u_tensor_write(const struct L3uTensor *t, const char *path);

/**
 * # Safety
 * `t` must be a live tensor handle; each non-NULL output must be writable.
 */
enum L3uStatus l3u_tensor_shape(const struct L3uTensor *t,
                                size_t *channels,
                                size_t *height,
                                size_t *width);

/**
 * One of the `L3U_DTYPE_*` values, or 255 for a NULL handle.
 *
 * # Safety
 * `t` must be NULL or a live tensor handle.
 */
uint8_t l3u_tensor_dtype(const struct L3uTensor *t);

/**
 * Borrowed pointer to the CHW element buffer, valid while `t` lives.
 *
 * # Safety
 * `t` must be NULL or a live tensor handle.
 */
const void *l3u_tensor_data(const struct L3uTensor *t);

/**
 * # Safety
 * `t` must be NULL or a handle not yet freed.
 */
void l3u_tensor_free(struct L3uTensor *t);

/**
 * # Safety
 * `t` must be a live tensor handle; `out` must be writable.
 */
enum L3uStatus l3u_fold(const struct L3uTensor *t, size_t alpha, struct L3uTensor **out);

/**
 * # Safety
 * `t` must be a live tensor handle; `out` must be writable.
 */
enum L3uStatus l3u_unfold(const struct L3uTensor *t, size_t alpha, struct L3uTensor **out);

/**
 * Builds the model described by a JSON config with all weights zero.
 * An empty object gives the default model.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum L3uStatus l3u_model_from_json(const char *json, struct L3uModel **out);

/**
 * # Safety
 * `m` must be a live model handle.
 */
enum L3uStatus l3u_model_randomize(struct L3uModel *m, uint64_t seed);

/**
 * # Safety
 * `m` must be NULL or a handle not yet freed.
 */
void l3u_model_free(struct L3uModel *m);

/**
 * Binds an L3UW weight file; every conv layer must be covered exactly.
 *
 * # Safety
 * `m` must be a live model handle and `path` a NUL-terminated string.
 */
enum L3uStatus l3u_model_load_weights(struct L3uModel *m, const char *path);

/**
 * # Safety
 * `m` must be a live model handle and `path` a NUL-terminated string.
 */
enum L3uStatus l3u_model_save_weights(const struct L3uModel *m, const char *path);

/**
 * Stored weight plus bias elements, or 0 for a NULL handle.
 *
 * # Safety
 * `m` must be NULL or a live model handle.
 */
uint64_t l3u_model_param_count(const struct L3uModel *m);

/**
 * Runs the model. Float mode takes an F32 input; quantized mode takes I8
 * and converts the weights to Q7 first.
 *
 * # Safety
 * `m` and `input` must be live handles; `out` must be writable.
 */
enum L3uStatus l3u_model_run(const struct L3uModel *m,
                             const struct L3uTensor *input,
                             bool quantized,
                             struct L3uTensor **out);

/**
 * Per-layer cost CSV for `processors` channel-parallel processors.
 * Free the result with [`l3u_string_free`].
 *
 * # Safety
 * `m` must be a live model handle; `out` must be writable.
 */
enum L3uStatus l3u_model_cost_csv(const struct L3uModel *m, size_t processors, char **out);

/**
 * # Safety
 * `out` must be writable.
 */
enum L3uStatus l3u_confusion_new(size_t num_classes, struct L3uConfusion **out);

/**
 * Adds one pair of `height * width` row-major label maps.
 *
 * # Safety
 * `cm` must be a live handle; `gt` and `pred` must each point to
 * `height * width` readable bytes.
 */
enum L3uStatus l3u_confusion_accumulate(struct L3uConfusion *cm,
                                        const uint8_t *gt,
                                        const uint8_t *pred,
                                        size_t height,
                                        size_t width);

/**
 * # Safety
 * `cm` must be a live handle; each non-NULL output must be writable.
 */
enum L3uStatus l3u_confusion_metrics(const struct L3uConfusion *cm,
                                     double *pixel_accuracy,
                                     double *mean_iou);

/**
 * # Safety
 * `cm` must be NULL or a handle not yet freed.
 */
void l3u_confusion_free(struct L3uConfusion *cm);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* L3UNET_H */
