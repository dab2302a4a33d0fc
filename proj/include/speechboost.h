/*
 * speechboost — streaming low-latency speech enhancement inference and
 * model-compression toolkit.
 *
 * C interface to the shared library. Handles are opaque; every fallible call
 * returns sb_status and leaves a human-readable message in sb_last_error()
 * (thread-local) on failure. Strings and buffers returned through out
 * parameters are owned by the caller and released with sb_string_free /
 * sb_buffer_free.
 */

#ifndef SPEECHBOOST_H
#define SPEECHBOOST_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define SB_API __declspec(dllexport)
#else
#define SB_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum sb_status {
    SB_OK = 0,
    SB_ERR_IO = 1,
    SB_ERR_FORMAT = 2,
    SB_ERR_SHAPE = 3,
    SB_ERR_INFEASIBLE = 4,
    SB_ERR_INVALID_ARG = 5,
    SB_ERR_INTERNAL = 6
} sb_status;

typedef struct sb_model sb_model;   /* dense, sparse or quantized network */
typedef struct sb_stream sb_stream; /* chunk-by-chunk inference state */
typedef struct sb_calib sb_calib;   /* calibration audio + activations */

SB_API const char* sb_version(void);
SB_API const char* sb_last_error(void);
SB_API void sb_string_free(char* s);
SB_API void sb_buffer_free(float* p);

/* ---- models ----
 *
 * config_json (may be NULL or "{}" for the stock architecture) understands:
 *   {"sample_rate_hz":16000,"chunk_len":32,"lookahead":16,
 *    "strides":[4,4,2],"channels":[32,64,128],"kernel_sizes":[8,8,4],
 *    "lstm_hidden":512,"lookahead_copies":17}
 */
SB_API sb_status sb_model_random(const char* config_json, uint64_t seed, sb_model** out);
SB_API sb_status sb_model_load(const char* path, sb_model** out);
SB_API sb_status sb_model_save(const sb_model* m, const char* path);
SB_API void sb_model_free(sb_model* m);

/* header, per-layer shapes and sparsity, and the MAC cost report */
SB_API sb_status sb_model_info_json(const sb_model* m, char** json_out);
SB_API const char* sb_model_backend(const sb_model* m); /* dense-f32 | sparse-f32 | quant */
SB_API int sb_model_chunk_len(const sb_model* m);
SB_API int sb_model_lookahead(const sb_model* m);

/* fixed-point conversion; report_json (optional) carries saturation counts
 * and per-layer max quantization error */
SB_API sb_status sb_model_quantize(const sb_model* m, sb_model** out, char** report_json);

/* ---- inference ----
 *
 * Offline: out must hold n samples; the result is identical to streaming the
 * same samples through an sb_stream. Streaming: chunks are exactly
 * sb_model_chunk_len() samples; pushing chunk j returns chunk j-1 (the first
 * sb_model_lookahead() samples of chunk j are its look-ahead), so the
 * algorithmic latency is chunk_len + lookahead samples. The model must stay
 * alive while its streams are in use; sb_stream_push never allocates.
 */
SB_API sb_status sb_denoise_offline(const sb_model* m, const float* in, size_t n, float* out);
SB_API sb_status sb_stream_create(const sb_model* m, sb_stream** out);
SB_API sb_status sb_stream_push(sb_stream* s, const float* chunk, size_t chunk_len, float* out,
                                int* has_output);
SB_API sb_status sb_stream_flush(sb_stream* s, float* out, size_t* out_len);
SB_API sb_status sb_stream_reset(sb_stream* s);
SB_API uint64_t sb_stream_consumed(const sb_stream* s);
SB_API uint64_t sb_stream_emitted(const sb_stream* s);
SB_API void sb_stream_free(sb_stream* s);

/* ---- audio (mono PCM16 RIFF at 16 kHz; no resampling) ---- */
SB_API sb_status sb_wav_read(const char* path, float** samples, size_t* n);
SB_API sb_status sb_wav_write(const char* path, const float* samples, size_t n);

/* ---- compression ----
 *
 * sb_calibrate runs the model over the given clips and captures per-layer
 * activations (at most max_cols columns per layer; pass 0 for the 16000
 * default). The clip list is split 80/20 into capture and held-out scoring
 * audio.
 *
 * sb_prune options_json:
 *   {"method":"spdy-obc"|"magnitude","target_ratio":0.105,"one_shot":false,
 *    "per_layer_uniform":false,"seed":1,"threads":1,"trace_path":""}
 * history_json (optional) receives per-iteration budget/achieved MACs and
 * calibration loss.
 */
SB_API sb_status sb_calibrate(const sb_model* m, const char* const* wav_paths, size_t n_paths,
                              int max_cols, sb_calib** out);
SB_API sb_status sb_calib_save(const sb_calib* c, const char* path);
SB_API sb_status sb_calib_load(const char* path, sb_calib** out);
SB_API void sb_calib_free(sb_calib* c);
SB_API sb_status sb_prune(const sb_model* m, const sb_calib* calib, const char* options_json,
                          sb_model** out, char** history_json);

/* ---- benchmarking and metrics ---- */
SB_API sb_status sb_bench_json(const sb_model* m, double seconds, uint64_t seed, char** json_out);
SB_API sb_status sb_metric_si_sdr(const float* reference, const float* estimate, size_t n,
                                  double* out_db);
SB_API sb_status sb_metric_lsd(const float* reference, const float* estimate, size_t n,
                               double* out_db);

#ifdef __cplusplus
}
#endif

#endif /* SPEECHBOOST_H */
