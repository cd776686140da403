/* ivaloc C API. Every function returns an iva_status; on failure the message
 * is available from iva_last_error() on the calling thread. Handles are opaque
 * and must be released with the matching destroy call. */
#ifndef IVALOC_IVALOC_H
#define IVALOC_IVALOC_H

#include <stddef.h>

#if defined(_WIN32)
#define IVA_API __declspec(dllexport)
#else
#define IVA_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum iva_status {
    IVA_OK = 0,
    IVA_ERR_ARGUMENT = 1, /* null handle, buffer too small */
    IVA_ERR_CONFIG = 2,
    IVA_ERR_DATA = 3,
    IVA_ERR_VERSION = 4, /* checkpoint format or config mismatch */
    IVA_ERR_SHAPE = 5,
    IVA_ERR_CONTRACT = 6,
    IVA_ERR_NUMERIC = 7,
    IVA_ERR_IO = 8,
    IVA_ERR_INTERNAL = 9
} iva_status;

typedef struct iva_config iva_config;
typedef struct iva_corpus iva_corpus;
typedef struct iva_model iva_model;

IVA_API const char* iva_version(void);
IVA_API const char* iva_status_name(iva_status status);
/* Message of the last failed call on this thread; empty if none. */
IVA_API const char* iva_last_error(void);

/* String outputs: copies into buf (NUL-terminated) when cap suffices, always
 * reports the required size including the terminator in *needed (may be NULL).
 * Returns IVA_ERR_ARGUMENT when buf is too small. */

IVA_API iva_status iva_config_create(iva_config** out);
IVA_API void iva_config_destroy(iva_config* config);
IVA_API iva_status iva_config_load_file(iva_config* config, const char* path);
IVA_API iva_status iva_config_set(iva_config* config, const char* key, const char* value);
IVA_API iva_status iva_config_get(const iva_config* config, const char* key, char* buf, size_t cap, size_t* needed);
IVA_API iva_status iva_config_validate(const iva_config* config);
IVA_API iva_status iva_config_hash(const iva_config* config, char* buf, size_t cap, size_t* needed);
IVA_API iva_status iva_config_text(const iva_config* config, char* buf, size_t cap, size_t* needed);

/* Loads and preprocesses every record of a manifest. Records that fail are
 * listed as issues; the call still succeeds if the manifest itself parses. */
IVA_API iva_status iva_corpus_load(const iva_config* config, const char* manifest, iva_corpus** out);
/* Generates and preprocesses the synthetic corpus described by synth.*. */
IVA_API iva_status iva_corpus_generate(const iva_config* config, iva_corpus** out);
IVA_API void iva_corpus_destroy(iva_corpus* corpus);
IVA_API iva_status iva_corpus_size(const iva_corpus* corpus, size_t* out);
IVA_API iva_status iva_corpus_issue_count(const iva_corpus* corpus, size_t* out);
IVA_API iva_status iva_corpus_issue(const iva_corpus* corpus, size_t index, char* buf, size_t cap, size_t* needed);
IVA_API iva_status iva_corpus_summary(const iva_corpus* corpus, char* buf, size_t cap, size_t* needed);
/* One N x 12 CSV per record under dir/records plus dir/summary.txt. */
IVA_API iva_status iva_corpus_write_prepared(const iva_corpus* corpus, const iva_config* config, const char* dir);

/* Writes the raw synthetic corpus (manifest.csv + records/) to dir. */
IVA_API iva_status iva_write_synthetic(const iva_config* config, const char* dir);

/* Fits on run.fold's train/validation split and scores its test split.
 * Writes model.ckpt, training_log.csv, test_metrics.json and run_config.ini.
 * out_model may be NULL. */
IVA_API iva_status iva_train(const iva_config* config, const iva_corpus* corpus, const char* out_dir,
                             iva_model** out_model);
/* cv_results.json, cv_results.csv, training_log_fold<N>.csv, run_config.ini. */
IVA_API iva_status iva_cv(const iva_config* config, const iva_corpus* corpus, const char* out_dir);
/* ablation_results.json, ablation.csv, run_config.ini. */
IVA_API iva_status iva_ablate(const iva_config* config, const iva_corpus* corpus, const char* out_dir);
/* search_log.csv, best_config.ini, run_config.ini on run.fold's split. */
IVA_API iva_status iva_search(const iva_config* config, const iva_corpus* corpus, const char* out_dir);

IVA_API iva_status iva_model_load(const char* path, iva_model** out);
IVA_API iva_status iva_model_save(const iva_model* model, const char* path);
IVA_API void iva_model_destroy(iva_model* model);
/* out must hold iva_corpus_size() probabilities. */
IVA_API iva_status iva_model_predict(const iva_model* model, const iva_corpus* corpus, double* out, size_t n);
/* Number of attention steps (encoded length) of a Full-variant model. */
IVA_API iva_status iva_model_attention_steps(const iva_model* model, size_t* out);
/* CSV record_id,step_index,time_s,weight for every record in the corpus. */
IVA_API iva_status iva_export_attention(const iva_model* model, const iva_corpus* corpus, const char* out_csv);

#ifdef __cplusplus
}
#endif

#endif
