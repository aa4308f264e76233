#ifndef EMCAD_H
#define EMCAD_H

/* Generated by cbindgen from emcad-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Success.
 */
#define EMCAD_OK 0

/**
 * A required pointer argument was null or an argument was invalid.
 */
#define EMCAD_ERR_ARG 1

/**
 * Tensor shapes violate an operation's preconditions.
 */
#define EMCAD_ERR_SHAPE 2

/**
 * Invalid configuration.
 */
#define EMCAD_ERR_CONFIG 3

/**
 * Malformed serialized data.
 */
#define EMCAD_ERR_FORMAT 4

/**
 * Underlying I/O failure.
 */
#define EMCAD_ERR_IO 5

/**
 * Opaque decoder handle; immutable after creation.
 */
typedef struct EmcadDecoder EmcadDecoder;

/**
 * Opaque NCHW f32 tensor handle.
 */
typedef struct EmcadTensor EmcadTensor;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (NUL
 * terminated, truncated to `cap`). Returns the full message length in
 * bytes, excluding the terminator.
 */
uintptr_t emcad_last_error(char *buf, uintptr_t cap);

/**
 * Creates a tensor from a row-major NCHW buffer of `len` floats;
 * `len` must equal `n*c*h*w`. The data is copied.
 */
int emcad_tensor_new(uintptr_t n,
                     uintptr_t c,
                     uintptr_t h,
                     uintptr_t w,
                     const float *data,
                     uintptr_t len,
                     struct EmcadTensor **out);

/**
 * Writes the tensor's (n, c, h, w) into `dims` (4 elements).
 */
int emcad_tensor_shape(const struct EmcadTensor *t, uintptr_t *dims);

/**
 * Exposes the tensor's backing buffer. The pointer is valid until the
 * tensor is freed.
 */
int emcad_tensor_data(const struct EmcadTensor *t, const float **data, uintptr_t *len);

void emcad_tensor_free(struct EmcadTensor *t);

/**
 * Builds the standard-width decoder (64/128/320/512 channels, 9 classes)
 * with deterministic seed-derived initialization.
 */
int emcad_decoder_standard(uint64_t seed, struct EmcadDecoder **out);

/**
 * Builds the tiny-width decoder (32/64/160/256 channels).
 */
int emcad_decoder_tiny(uint64_t seed, struct EmcadDecoder **out);

/**
 * Builds a decoder from a NUL-terminated TOML config string (the same
 * format as the CLI config file); the config's own `seed` is used.
 */
int emcad_decoder_from_toml(const char *config, struct EmcadDecoder **out);

void emcad_decoder_free(struct EmcadDecoder *d);

/**
 * Total learnable parameter count of the decoder.
 */
int emcad_decoder_param_count(const struct EmcadDecoder *d, uint64_t *out);

/**
 * Total forward FLOPs per batch element at the given input resolution.
 * `full` nonzero additionally counts elementwise ops at 1 FLOP each.
 */
int emcad_decoder_flops(const struct EmcadDecoder *d,
                        uintptr_t input_h,
                        uintptr_t input_w,
                        int full,
                        uint64_t *out);

/**
 * Runs the forward pass over the four pyramid features (x1 at 1/4
 * scale .. x4 at 1/32 scale) and writes the four prediction-map handles
 * into `maps_out` (deepest first: p1 .. p4). The caller owns and must
 * free all four on success; on failure nothing is written.
 */
int emcad_decoder_forward(const struct EmcadDecoder *d,
                          const struct EmcadTensor *x1,
                          const struct EmcadTensor *x2,
                          const struct EmcadTensor *x3,
                          const struct EmcadTensor *x4,
                          struct EmcadTensor **maps_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EMCAD_H */
