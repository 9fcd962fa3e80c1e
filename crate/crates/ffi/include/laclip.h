#ifndef LACLIP_H
#define LACLIP_H

/* Generated with cbindgen:0.27.0 */

/* Generated by cbindgen from crates/ffi/src. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LaclipScaling {
  LACLIP_SCALING_MEAN = 0,
  LACLIP_SCALING_PRINTED = 1,
} LaclipScaling;

typedef enum LaclipStatus {
  LACLIP_STATUS_OK = 0,
  LACLIP_STATUS_NULL_POINTER = 1,
  LACLIP_STATUS_INVALID_ARGUMENT = 2,
  LACLIP_STATUS_SHAPE_MISMATCH = 3,
  LACLIP_STATUS_NOT_UNIT_NORM = 4,
  LACLIP_STATUS_IO = 5,
  LACLIP_STATUS_PARSE = 6,
  LACLIP_STATUS_EMPTY_RESULT = 7,
  LACLIP_STATUS_BUFFER_TOO_SMALL = 8,
  LACLIP_STATUS_INTERNAL = 99,
} LaclipStatus;

/**
 * Loss values and gradients from one evaluation.
 */
typedef struct LaclipLoss LaclipLoss;

/**
 * A trained checkpoint.
 */
typedef struct LaclipModel LaclipModel;

/**
 * Holds the bundled example pairs.
 */
typedef struct LaclipPromptBuilder LaclipPromptBuilder;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or NULL. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *laclip_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *laclip_version(void);

/**
 * Releases a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void laclip_string_free(char *s);

/**
 * Symmetric InfoNCE over `n` unit-norm rows of width `d`. `s` is the log
 * inverse temperature.
 *
 * # Safety
 * `image` and `text` must point to `n * d` doubles; `out` must be writable.
 */
enum LaclipStatus laclip_clip_loss(const double *image,
                                   const double *text,
                                   size_t n,
                                   size_t d,
                                   double s,
                                   struct LaclipLoss **out);

/**
 * Multi-text loss. `texts` holds `n_slots` blocks of `n * d` doubles, slot
 * 0 being the original captions.
 *
 * # Safety
 * `image` must point to `n * d` doubles and `texts` to `n_slots * n * d`.
 */
enum LaclipStatus laclip_multitext_loss(const double *image,
                                        const double *texts,
                                        size_t n_slots,
                                        size_t n,
                                        size_t d,
                                        double s,
                                        enum LaclipScaling scaling,
                                        struct LaclipLoss **out);

/**
 * Writes the scalar results; any output pointer may be NULL.
 *
 * # Safety
 * `loss` must be a live handle; non-NULL outputs must be writable.
 */
enum LaclipStatus laclip_loss_values(const struct LaclipLoss *loss,
                                     double *l_image,
                                     double *l_text,
                                     double *total,
                                     double *grad_s);

/**
 * Copies the image gradient (`n * d` values).
 *
 * # Safety
 * `loss` must be a live handle and `buf` hold `len` doubles.
 */
enum LaclipStatus laclip_loss_grad_image(const struct LaclipLoss *loss, double *buf, size_t len);

/**
 * Copies the text gradient (`n_slots * n * d` values, slot-major).
 *
 * # Safety
 * `loss` must be a live handle and `buf` hold `len` doubles.
 */
enum LaclipStatus laclip_loss_grad_text(const struct LaclipLoss *loss, double *buf, size_t len);

/**
 * # Safety
 * `loss` must come from this library and not have been freed. NULL is ignored.
 */
void laclip_loss_free(struct LaclipLoss *loss);

struct LaclipPromptBuilder *laclip_prompt_builder_new(void);

/**
 * Renders the five-line rewrite prompt for `query`. `strategy` is one of
 * chatgpt, bard, mscoco, human. The result is freed with `laclip_string_free`.
 *
 * # Safety
 * Pointers must be valid; strings NUL-terminated.
 */
enum LaclipStatus laclip_build_prompt(const struct LaclipPromptBuilder *builder,
                                      const char *strategy,
                                      const char *query,
                                      uint64_t seed,
                                      char **out);

/**
 * # Safety
 * `builder` must come from this library and not have been freed. NULL is ignored.
 */
void laclip_prompt_builder_free(struct LaclipPromptBuilder *builder);

/**
 * First line of a completion, trimmed, without stray `=>` markers.
 * Returns `EmptyResult` when nothing is left.
 *
 * # Safety
 * `raw` must be NUL-terminated; `out` writable.
 */
enum LaclipStatus laclip_postprocess_completion(const char *raw, char **out);

/**
 * Token ids of `text`, written to `ids` (`context_len` values).
 *
 * # Safety
 * `text` must be NUL-terminated and `ids` hold `context_len` values.
 */
enum LaclipStatus laclip_tokenize(const char *text,
                                  size_t vocab_size,
                                  size_t context_len,
                                  uint32_t *ids);

/**
 * # Safety
 * `path` must be NUL-terminated; `out` writable.
 */
enum LaclipStatus laclip_model_load(const char *path, struct LaclipModel **out);

/**
 * Embedding width and expected image feature width.
 *
 * # Safety
 * `model` must be a live handle; non-NULL outputs writable.
 */
enum LaclipStatus laclip_model_dims(const struct LaclipModel *model,
                                    size_t *embed_dim,
                                    size_t *image_dim);

/**
 * Unit-norm text embeddings of `n` strings into `out` (`n * embed_dim` values).
 *
 * # Safety
 * `texts` must hold `n` NUL-terminated strings; `out` hold `len` doubles.
 */
enum LaclipStatus laclip_model_encode_texts(const struct LaclipModel *model,
                                            const char *const *texts,
                                            size_t n,
                                            double *out,
                                            size_t len);

/**
 * Unit-norm image embeddings of `n` feature rows of width `dim`.
 *
 * # Safety
 * `features` must hold `n * dim` doubles; `out` hold `len` doubles.
 */
enum LaclipStatus laclip_model_encode_images(const struct LaclipModel *model,
                                             const double *features,
                                             size_t n,
                                             size_t dim,
                                             double *out,
                                             size_t len);

/**
 * # Safety
 * `model` must come from this library and not have been freed. NULL is ignored.
 */
void laclip_model_free(struct LaclipModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LACLIP_H */
