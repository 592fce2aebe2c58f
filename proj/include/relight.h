/*
 * relight — image light-source-transfer engine.
 *
 * C interface to the shared library: opaque handles, integer status codes,
 * and a per-thread error message. All strings returned through char** are
 * heap-allocated and must be released with relight_string_free().
 */

#ifndef RELIGHT_H
#define RELIGHT_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#define RELIGHT_API_VERSION 1u

typedef enum relight_status {
  RELIGHT_OK = 0,
  RELIGHT_ERR_INVALID_ARGUMENT = 1,
  RELIGHT_ERR_IO = 2,
  RELIGHT_ERR_FORMAT = 3,
  RELIGHT_ERR_RUNTIME = 4
} relight_status;

uint32_t relight_api_version(void);

/* Message for the most recent failure on the calling thread; never NULL. */
const char* relight_last_error(void);

void relight_string_free(char* s);

/* ------------------------------------------------------------------ */
/* Synthetic corpus                                                     */

typedef struct relight_corpus_options {
  uint32_t scenes;
  uint32_t resolution;     /* square, >= 32 */
  uint64_t seed;
  const char* out_dir;
  int validation_split;    /* nonzero: draw scene seeds from the val range */
} relight_corpus_options;

typedef struct relight_corpus_summary {
  uint32_t scenes;
  uint32_t lit_images;
  uint32_t shadow_free_images;
  uint32_t pairs;
} relight_corpus_summary;

relight_status relight_corpus_generate(const relight_corpus_options* options,
                                       relight_corpus_summary* summary /* nullable */);

/* ------------------------------------------------------------------ */
/* Training                                                             */

typedef void (*relight_line_fn)(void* user, int32_t step, const char* line);

typedef struct relight_train_options {
  const char* data_dir;
  const char* config_path;       /* NULL: built-in defaults */
  const char* out_dir;
  int disable_adversarial;       /* nonzero: pure reconstruction training */
  const char* ablate;            /* NULL/"", "cal", "ms", or "cal+ms" */
  const char* resume_checkpoint; /* NULL: fresh run */
  relight_line_fn on_step;       /* nullable; step 0 carries the run header
                                    (parameter counts), then one call per step */
  void* user;
} relight_train_options;

typedef struct relight_train_summary {
  char* final_checkpoint;
  char* loss_log;
  double first_total_l1;
  double last_total_l1;
  int32_t steps;
  int64_t generator_params;
  int64_t discriminator_params;
} relight_train_summary;

relight_status relight_train(const relight_train_options* options,
                             relight_train_summary* summary /* nullable */);

/* ------------------------------------------------------------------ */
/* Inference                                                            */

typedef struct relight_model relight_model;

relight_status relight_model_open(const char* checkpoint_path, relight_model** out_model);
void relight_model_close(relight_model* model);
relight_status relight_model_resolution(const relight_model* model, uint32_t* out_resolution);

/* Reads an RGB PNG at the model resolution, writes the transfer result;
 * aux_dir (nullable) additionally receives shadow_free.png and relit.png. */
relight_status relight_model_infer_file(relight_model* model, const char* input_png,
                                        const char* output_png, const char* aux_dir);

/* ------------------------------------------------------------------ */
/* Evaluation and ablation                                              */

/* Mean PSNR/SSIM over every manifest pair; lpips_file (nullable) supplies one
 * LPIPS value per pair and enables the combined perceptual score. With
 * identity_baseline nonzero the unmodified input is scored instead of a model
 * and checkpoint_path may be NULL. Reports come back as key=value text and as
 * a single-line JSON document. */
relight_status relight_evaluate(const char* checkpoint_path, const char* data_dir,
                                const char* lpips_file, int identity_baseline,
                                char** kv_out /* nullable */, char** json_out /* nullable */);

typedef struct relight_ablate_options {
  const char* data_dir;
  const char* val_data_dir; /* NULL: evaluate on data_dir */
  const char* config_path;  /* NULL: defaults */
  const char* out_dir;
  const char* lpips_file;   /* nullable */
  relight_line_fn on_progress; /* nullable; step argument is -1 */
  void* user;
} relight_ablate_options;

/* Trains and evaluates the four gating/fusion variants; writes
 * <out>/ablation.tsv and returns the table text. */
relight_status relight_ablate(const relight_ablate_options* options,
                              char** table_out /* nullable */);

#ifdef __cplusplus
}
#endif

#endif /* RELIGHT_H */
