#ifndef NMPG_NMPG_H
#define NMPG_NMPG_H

/* C interface to the N:M mask learning library. All handles are opaque and
 * owned by the caller; free them with the matching *_free function. Every
 * function returning nmpg_status leaves a message for nmpg_last_error() on
 * failure. The message is thread-local and valid until the next failing call
 * on the same thread. */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(NMPG_BUILDING_LIBRARY)
#    define NMPG_API __declspec(dllexport)
#  else
#    define NMPG_API __declspec(dllimport)
#  endif
#else
#  define NMPG_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Values double as process exit codes. */
typedef enum nmpg_status {
  NMPG_OK = 0,
  NMPG_PROPERTY_FAILURE = 1,
  NMPG_CONFIG_ERROR = 2, /* also invalid arguments and capacity limits */
  NMPG_NUMERIC_ERROR = 3,
  NMPG_IO_ERROR = 4
} nmpg_status;

typedef struct nmpg_config nmpg_config;
typedef struct nmpg_logits nmpg_logits;
typedef struct nmpg_mask nmpg_mask;

/* Receives one output line (no trailing newline). */
typedef void (*nmpg_line_fn)(const char* line, size_t length, void* user);

NMPG_API const char* nmpg_version(void);
NMPG_API const char* nmpg_last_error(void);

/* ---- configuration ---- */
NMPG_API nmpg_status nmpg_config_new(nmpg_config** out);
NMPG_API nmpg_status nmpg_config_load(const char* path, nmpg_config** out);
NMPG_API nmpg_status nmpg_config_parse(const char* text, nmpg_config** out);
NMPG_API nmpg_status nmpg_config_set(nmpg_config* config, const char* key, const char* value);
/* Copies the canonical text form into buf (NUL-terminated when it fits);
 * *needed receives the full length excluding the terminator. */
NMPG_API nmpg_status nmpg_config_to_text(const nmpg_config* config, char* buf, size_t capacity,
                                         size_t* needed);
NMPG_API void nmpg_config_free(nmpg_config* config);

/* ---- masks and logits ---- */
/* bits holds d bytes, each 0 or 1. */
NMPG_API nmpg_status nmpg_mask_new(int n_keep, int group_size, const uint8_t* bits, size_t d,
                                   nmpg_mask** out);
NMPG_API nmpg_status nmpg_mask_from_text(const char* text, nmpg_mask** out);
NMPG_API size_t nmpg_mask_dim(const nmpg_mask* mask);
NMPG_API nmpg_status nmpg_mask_bits(const nmpg_mask* mask, uint8_t* out, size_t d);
NMPG_API void nmpg_mask_free(nmpg_mask* mask);

NMPG_API nmpg_status nmpg_logits_new(int n_keep, int group_size, const double* values, size_t d,
                                     nmpg_logits** out);
/* pi = C at the kept positions of m0, 0 elsewhere. */
NMPG_API nmpg_status nmpg_logits_init(const nmpg_mask* m0, double magnitude, nmpg_logits** out);
NMPG_API void nmpg_logits_free(nmpg_logits* logits);

NMPG_API nmpg_status nmpg_sample_mask(const nmpg_logits* logits, uint64_t seed, uint64_t step,
                                      nmpg_mask** out);
NMPG_API nmpg_status nmpg_log_prob(const nmpg_mask* mask, const nmpg_logits* logits,
                                   double* out);
/* out receives d values. */
NMPG_API nmpg_status nmpg_grad_log_prob(const nmpg_mask* mask, const nmpg_logits* logits,
                                        double* out, size_t d);
NMPG_API nmpg_status nmpg_top_n_mask(const nmpg_logits* logits, nmpg_mask** out);

/* ---- reports ---- */
typedef struct nmpg_memory_report {
  uint64_t dim;
  uint64_t per_position_logits;
  uint64_t per_pattern_logits;
  uint64_t ratio_numerator;
  uint64_t ratio_denominator;
} nmpg_memory_report;

NMPG_API nmpg_status nmpg_memory_report_compute(int n_keep, int group_size, uint64_t d,
                                                nmpg_memory_report* out);
NMPG_API nmpg_status nmpg_run_memory_report(int n_keep, int group_size, uint64_t d,
                                            nmpg_line_fn sink, void* user);

/* ---- commands; output lines go to sink, which may be NULL ---- */
NMPG_API nmpg_status nmpg_run_train(const nmpg_config* config, const char* out_dir,
                                    nmpg_line_fn sink, void* user);
/* scope: algebra, probability, gradients, unbiasedness or all. */
NMPG_API nmpg_status nmpg_run_verify(const char* scope, uint64_t seed, nmpg_line_fn sink,
                                     void* user);
NMPG_API nmpg_status nmpg_run_variance_report(const nmpg_config* config, const char* out_dir,
                                              nmpg_line_fn sink, void* user);
NMPG_API nmpg_status nmpg_run_c_sweep(const nmpg_config* config, const double* c_values,
                                      size_t count, const char* out_dir, nmpg_line_fn sink,
                                      void* user);

#ifdef __cplusplus
}
#endif

#endif /* NMPG_NMPG_H */
