/* C API for the IMTS-Mixer forecasting library.
 *
 * All functions return an imts_status code; 0 means success. On failure a
 * thread-local message is available via imts_last_error(). Objects returned
 * through out-parameters are owned by the caller and released with the
 * matching *_free function. Strings returned through char** out-parameters
 * are released with imts_string_free().
 */
#ifndef IMTS_CAPI_H
#define IMTS_CAPI_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define IMTS_API __declspec(dllexport)
#else
#define IMTS_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum imts_status {
    IMTS_OK = 0,
    IMTS_ERR_RUNTIME = 1, /* I/O, numeric, or generation failure */
    IMTS_ERR_INVALID = 2  /* bad arguments, configuration, or file schema */
} imts_status;

typedef struct imts_dataset imts_dataset;
typedef struct imts_model imts_model;

IMTS_API const char* imts_version(void);

/* Message describing the most recent failure on this thread. */
IMTS_API const char* imts_last_error(void);

IMTS_API void imts_string_free(char* s);

/* ---- datasets ---------------------------------------------------------- */

/* system: "damped_oscillator" or "lotka_volterra". drop in (0,1),
 * obs_fraction in (0,1), sigma >= 0 (relative to channel std). */
IMTS_API imts_status imts_dataset_generate(const char* system, size_t instances, double drop,
                                           double sigma, double obs_fraction, uint64_t seed,
                                           imts_dataset** out);

IMTS_API imts_status imts_dataset_load(const char* path, imts_dataset** out);
IMTS_API imts_status imts_dataset_save(const imts_dataset* dataset, const char* path);
IMTS_API imts_status imts_dataset_channel_count(const imts_dataset* dataset, size_t* out);
IMTS_API imts_status imts_dataset_instance_count(const imts_dataset* dataset, size_t* out);

/* Observed fraction of (timestamp, channel) slots and its complement. */
IMTS_API imts_status imts_dataset_stats(const imts_dataset* dataset, double* density,
                                        double* sparsity);

/* JSON array of invariant violations; "[]" for a clean dataset. */
IMTS_API imts_status imts_dataset_validate(const imts_dataset* dataset, char** violations_json);

IMTS_API void imts_dataset_free(imts_dataset* dataset);

/* ---- training and evaluation ------------------------------------------- */

/* config_text: flat "key = value" lines (see the documented config keys).
 * Splits the dataset 60/20/20 with the config seed, fits normalization on
 * the training split, trains with early stopping, and evaluates on the test
 * split. Any out-parameter may be NULL when the caller does not need it.
 * baseline_*_mse receive the mean and carry-forward baselines on the same
 * test split. */
IMTS_API imts_status imts_train(const imts_dataset* dataset, const char* config_text,
                                imts_model** out_model, char** report_json,
                                double* baseline_mean_mse, double* baseline_carry_mse);

IMTS_API imts_status imts_model_save(const imts_model* model, const char* path);
IMTS_API imts_status imts_model_load(const char* path, imts_model** out);
IMTS_API imts_status imts_model_parameter_count(const imts_model* model, size_t* out);

/* Evaluates the model on a whole dataset file (normalized with the model's
 * stored statistics): masked MSE and MAE over all queries. */
IMTS_API imts_status imts_model_evaluate(const imts_model* model, const imts_dataset* dataset,
                                         double* mse, double* mae);

IMTS_API void imts_model_free(imts_model* model);

/* ---- gradient checking --------------------------------------------------- */

/* Compares reverse-mode gradients against central finite differences
 * (h = 1e-5) on tiny models. With a NULL config_text the full sweep over
 * (encoder x decoder x L in {0,1,2}) runs; otherwise the given
 * configuration is checked. report_json receives per-case results. */
IMTS_API imts_status imts_gradcheck(const char* config_text, uint64_t seed,
                                    double* worst_rel_error, int* pass, char** report_json);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* IMTS_CAPI_H */
