/* C interface to the energy-lens library: opaque handles, status codes,
 * thread-unsafe last-error string per process. */
#ifndef EBMLENS_H
#define EBMLENS_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum ebml_status {
  EBML_OK = 0,
  EBML_ERR_CONFIG = 2,   /* bad arguments, unreadable files, contract breach */
  EBML_ERR_NUMERIC = 3,  /* NaN/Inf surfaced during computation */
  EBML_ERR_UNKNOWN = 4
} ebml_status;

typedef struct ebml_model ebml_model;
typedef struct ebml_dataset ebml_dataset;

const char* ebml_version(void);

/* Message from the most recent failing call on this thread; never NULL. */
const char* ebml_last_error(void);

/* Full pipeline entry point: subcommand is one of train, attack,
 * analyze-energy, trace-overfit, generate, ablate-subsets,
 * verify-identities. config_path may be NULL (defaults apply);
 * overrides_json may be NULL or a flat JSON object such as
 * {"seed":1,"epochs":5}. Returns a process exit code (0/2/3). */
int ebml_run(const char* subcommand, const char* config_path,
             const char* overrides_json);

ebml_status ebml_model_load(const char* checkpoint_path, ebml_model** out);
void ebml_model_free(ebml_model* m);
ebml_status ebml_model_num_classes(const ebml_model* m, size_t* out);

/* Binary image batches: 3073-byte records (label byte + 3*32*32 pixels).
 * count = 0 loads every record. */
ebml_status ebml_dataset_load(const char* path, size_t count,
                              ebml_dataset** out);
void ebml_dataset_free(ebml_dataset* d);
ebml_status ebml_dataset_size(const ebml_dataset* d, size_t* out);

/* Per-sample marginal energy -logsumexp(f(x)) and joint energy -f(x)[y]
 * for the first `count` samples; either output array may be NULL. */
ebml_status ebml_energies(const ebml_model* m, const ebml_dataset* d,
                          size_t count, double* marginal, double* joint);

/* w(E) = 1 / ln(1 + exp(|E|)) */
double ebml_weat_weight(double marginal_energy);

/* Runs `trials` random checks of the energy identities; writes the largest
 * residual seen into max_residual (may be NULL). Non-zero on failure. */
ebml_status ebml_verify_identities(size_t trials, uint64_t seed,
                                   double* max_residual);

#ifdef __cplusplus
}
#endif

#endif /* EBMLENS_H */
