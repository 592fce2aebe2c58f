#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "relight/config.hpp"
#include "relight/metrics.hpp"

namespace relight {

struct TrainOptions {
  std::string data_dir;
  std::string out_dir;
  TrainConfig config;
  bool no_adv = false;  // forces pure reconstruction training
  bool ablate_cal = false;
  bool ablate_ms = false;
  std::string resume_checkpoint;  // training checkpoint to continue from
  std::function<void(const std::string& header)> on_start;  // run header line
  std::function<void(int step, const std::string& line)> on_step;
};

struct TrainResult {
  std::string final_checkpoint;
  std::string loss_log;
  double first_total_l1 = 0.0;
  double last_total_l1 = 0.0;
  int steps_run = 0;
  int64_t generator_params = 0;
  int64_t discriminator_params = 0;
};

// Runs the recipe: per batch one discriminator update (both critics) then
// one generator update; pure reconstruction when adversarial is off. Writes
// loss_log.tsv, interval checkpoints (ckpt_<step>.ckpt, with optimizer
// moments), and model_final.ckpt.
TrainResult train(const TrainOptions& options);

struct EvalOptions {
  std::string checkpoint;  // ignored in identity mode
  std::string data_dir;
  std::string lpips_file;  // optional: one value per manifest row
  bool identity = false;   // score the unmodified input against the target
  int resize_to = 0;       // identity mode: downsample pairs to this size first
};

MetricReport evaluate(const EvalOptions& options);

struct InferOptions {
  std::string checkpoint;
  std::string input_image;
  std::string output_image;
  std::string aux_dir;  // optional: also writes shadow_free.png / relit.png
};

void infer_file(const InferOptions& options);

// Same pipeline over an already-restored model, for callers that keep the
// bundle alive across images.
void infer_with_model(const ModelBundle& model, const std::string& input_image,
                      const std::string& output_image, const std::string& aux_dir);

struct AblateVariantResult {
  std::string name;  // no_cal_no_ms | no_cal | no_ms | full
  int64_t generator_params = 0;
  MetricReport metrics;
};

struct AblateOptions {
  std::string data_dir;
  std::string val_data_dir;  // empty: evaluate on data_dir
  std::string out_dir;
  TrainConfig config;
  std::string lpips_file;
  std::function<void(const std::string& line)> on_progress;
};

// Trains and evaluates the four gating/fusion variants with identical seeds
// and budgets; rows come back in fixed order (both off, gates off, fusion
// off, full). Also written to <out>/ablation.tsv.
std::vector<AblateVariantResult> run_ablation(const AblateOptions& options);

std::string format_ablation_table(const std::vector<AblateVariantResult>& rows, bool with_lpips);

}  // namespace relight
