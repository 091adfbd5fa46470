#ifndef EVHDR_H
#define EVHDR_H

/* Generated by cbindgen from evhdr-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

#define EVHDR_OK 0

#define EVHDR_ERR_NULL_POINTER -1

#define EVHDR_ERR_INVALID_ARGUMENT -2

#define EVHDR_ERR_PARSE -3

#define EVHDR_ERR_RUNTIME -4

/**
 * Opaque event stream handle.
 */
typedef struct EvhdrEvents EvhdrEvents;

/**
 * Opaque voxel grid handle.
 */
typedef struct EvhdrVoxelGrid EvhdrVoxelGrid;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message (UTF-8, NUL-terminated when it fits)
 * into `buf` and returns the full message length in bytes, excluding
 * the terminator. A zero return means no error has been recorded.
 */
uintptr_t evhdr_last_error(char *buf, uintptr_t cap);

/**
 * Parses an EVT1 byte buffer into an event stream handle.
 */
int32_t evhdr_events_parse_evt1(const uint8_t *data, uintptr_t len, struct EvhdrEvents **out);

/**
 * Number of events in the stream; zero for a null handle.
 */
uint64_t evhdr_events_len(const struct EvhdrEvents *events);

/**
 * Sensor geometry of the stream.
 */
int32_t evhdr_events_geometry(const struct EvhdrEvents *events, uint32_t *width, uint32_t *height);

/**
 * Serializes the stream to EVT1. The returned buffer must be released
 * with `evhdr_buffer_free`.
 */
int32_t evhdr_events_write_evt1(const struct EvhdrEvents *events,
                                uint8_t **out_data,
                                uintptr_t *out_len);

/**
 * Releases a buffer returned by this library.
 */
void evhdr_buffer_free(uint8_t *data, uintptr_t len);

void evhdr_events_free(struct EvhdrEvents *events);

/**
 * Simulates an event stream from `frame_count` linear-intensity frames
 * (row-major, values in [0, 1]) with strictly increasing timestamps.
 */
int32_t evhdr_simulate(const double *frames,
                       const uint64_t *timestamps,
                       uintptr_t frame_count,
                       uint32_t width,
                       uint32_t height,
                       double contrast_threshold,
                       struct EvhdrEvents **out);

/**
 * Bins a stream over the half-open window `[t0, t0 + dt)` into a
 * 2B-channel voxel grid handle.
 */
int32_t evhdr_voxelize(const struct EvhdrEvents *events,
                       uint64_t t0,
                       uint64_t dt,
                       uintptr_t bins,
                       struct EvhdrVoxelGrid **out);

/**
 * Channel-major shape of a voxel grid (2B, H, W).
 */
int32_t evhdr_voxel_shape(const struct EvhdrVoxelGrid *grid,
                          uint64_t *channels,
                          uint64_t *height,
                          uint64_t *width);

/**
 * Borrowed pointer to the grid's contiguous channel-major values; valid
 * until the handle is freed.
 */
const double *evhdr_voxel_values(const struct EvhdrVoxelGrid *grid);

void evhdr_voxel_free(struct EvhdrVoxelGrid *grid);

/**
 * Merges a bright/dark LDR pair (row-major, `ldr_bit_depth`-bit values
 * in 16-bit containers) into a 16-bit linear HDR frame written to
 * `out`, which must hold `width * height` values. Returns the number of
 * all-saturated pixels through `saturated` when non-null.
 */
int32_t evhdr_fuse_ldr_pair(const uint16_t *bright,
                            const uint16_t *dark,
                            uint32_t width,
                            uint32_t height,
                            double alpha,
                            double saturation_fraction,
                            uint8_t ldr_bit_depth,
                            uint16_t *out,
                            uint64_t *saturated);

/**
 * Tone maps `n` 16-bit linear HDR values to 8 bits.
 */
int32_t evhdr_tone_map(const uint16_t *hdr, uintptr_t n, uint8_t *out);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* EVHDR_H */
