#include "relight.h"

#include <cstdlib>
#include <cstring>
#include <memory>
#include <string>

#include "relight/checkpoint.hpp"
#include "relight/synth.hpp"
#include "relight/trainer.hpp"

namespace {

thread_local std::string g_last_error;

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out) std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

// Status codes follow the module prefixes the core uses in its diagnostics.
relight_status classify(const std::string& message) {
  if (message.rfind("io:", 0) == 0 || message.find("cannot open") != std::string::npos ||
      message.find("cannot create") != std::string::npos ||
      message.find("cannot write") != std::string::npos)
    return RELIGHT_ERR_IO;
  if (message.rfind("png:", 0) == 0 || message.rfind("checkpoint:", 0) == 0 ||
      message.rfind("corpus: malformed", 0) == 0)
    return RELIGHT_ERR_FORMAT;
  if (message.rfind("config:", 0) == 0) return RELIGHT_ERR_INVALID_ARGUMENT;
  return RELIGHT_ERR_RUNTIME;
}

template <typename Fn>
relight_status guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return RELIGHT_OK;
  } catch (const relight::Error& e) {
    g_last_error = e.what();
    return classify(g_last_error);
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return RELIGHT_ERR_RUNTIME;
  }
}

relight_status invalid(const char* message) {
  g_last_error = message;
  return RELIGHT_ERR_INVALID_ARGUMENT;
}

bool parse_ablate(const char* ablate, bool& cal, bool& ms) {
  cal = ms = false;
  if (ablate == nullptr) return true;
  const std::string v = ablate;
  if (v.empty()) return true;
  if (v == "cal") cal = true;
  else if (v == "ms") ms = true;
  else if (v == "cal+ms" || v == "ms+cal") cal = ms = true;
  else return false;
  return true;
}

}  // namespace

struct relight_model {
  relight::ModelBundle bundle;
};

extern "C" {

uint32_t relight_api_version(void) { return RELIGHT_API_VERSION; }

const char* relight_last_error(void) { return g_last_error.c_str(); }

void relight_string_free(char* s) { std::free(s); }

relight_status relight_corpus_generate(const relight_corpus_options* options,
                                       relight_corpus_summary* summary) {
  if (!options || !options->out_dir) return invalid("corpus options and out_dir are required");
  return guarded([&] {
    relight::CorpusOptions opts;
    opts.scenes = int(options->scenes);
    opts.resolution = int(options->resolution);
    opts.seed = options->seed;
    opts.out_dir = options->out_dir;
    opts.val_split = options->validation_split != 0;
    const auto result = relight::build_corpus(opts);
    if (summary) {
      summary->scenes = uint32_t(result.scenes);
      summary->lit_images = uint32_t(result.lit_images);
      summary->shadow_free_images = uint32_t(result.shadow_free_images);
      summary->pairs = uint32_t(result.pairs);
    }
  });
}

relight_status relight_train(const relight_train_options* options,
                             relight_train_summary* summary) {
  if (!options || !options->data_dir || !options->out_dir)
    return invalid("train options, data_dir and out_dir are required");
  bool cal = false, ms = false;
  if (!parse_ablate(options->ablate, cal, ms))
    return invalid("ablate must be one of \"cal\", \"ms\", \"cal+ms\"");
  return guarded([&] {
    relight::TrainOptions opts;
    opts.data_dir = options->data_dir;
    opts.out_dir = options->out_dir;
    if (options->config_path) opts.config = relight::TrainConfig::load(options->config_path);
    opts.no_adv = options->disable_adversarial != 0;
    opts.ablate_cal = cal;
    opts.ablate_ms = ms;
    if (options->resume_checkpoint) opts.resume_checkpoint = options->resume_checkpoint;
    if (options->on_step) {
      auto fn = options->on_step;
      void* user = options->user;
      opts.on_start = [fn, user](const std::string& line) { fn(user, 0, line.c_str()); };
      opts.on_step = [fn, user](int step, const std::string& line) {
        fn(user, int32_t(step), line.c_str());
      };
    }
    const auto result = relight::train(opts);
    if (summary) {
      summary->final_checkpoint = dup_string(result.final_checkpoint);
      summary->loss_log = dup_string(result.loss_log);
      summary->first_total_l1 = result.first_total_l1;
      summary->last_total_l1 = result.last_total_l1;
      summary->steps = int32_t(result.steps_run);
      summary->generator_params = result.generator_params;
      summary->discriminator_params = result.discriminator_params;
    }
  });
}

relight_status relight_model_open(const char* checkpoint_path, relight_model** out_model) {
  if (!checkpoint_path || !out_model) return invalid("checkpoint path and out handle required");
  *out_model = nullptr;
  return guarded([&] {
    const auto data = relight::load_checkpoint(checkpoint_path);
    auto model = std::make_unique<relight_model>(
        relight_model{relight::ModelBundle::build(data.config, 0)});
    relight::restore_generator(model->bundle, data);
    *out_model = model.release();
  });
}

void relight_model_close(relight_model* model) { delete model; }

relight_status relight_model_resolution(const relight_model* model, uint32_t* out_resolution) {
  if (!model || !out_resolution) return invalid("model handle and out pointer required");
  *out_resolution = uint32_t(model->bundle.config.resolution);
  return RELIGHT_OK;
}

relight_status relight_model_infer_file(relight_model* model, const char* input_png,
                                        const char* output_png, const char* aux_dir) {
  if (!model || !input_png || !output_png)
    return invalid("model handle, input and output paths required");
  return guarded([&] {
    relight::infer_with_model(model->bundle, input_png, output_png,
                              aux_dir ? aux_dir : std::string());
  });
}

relight_status relight_evaluate(const char* checkpoint_path, const char* data_dir,
                                const char* lpips_file, int identity_baseline, char** kv_out,
                                char** json_out) {
  if (!data_dir) return invalid("data_dir is required");
  if (!identity_baseline && !checkpoint_path)
    return invalid("checkpoint_path is required unless evaluating the identity baseline");
  return guarded([&] {
    relight::EvalOptions opts;
    if (checkpoint_path) opts.checkpoint = checkpoint_path;
    opts.data_dir = data_dir;
    if (lpips_file) opts.lpips_file = lpips_file;
    opts.identity = identity_baseline != 0;
    const auto report = relight::evaluate(opts);
    if (kv_out) *kv_out = dup_string(report.to_kv());
    if (json_out) *json_out = dup_string(report.to_json());
  });
}

relight_status relight_ablate(const relight_ablate_options* options, char** table_out) {
  if (!options || !options->data_dir || !options->out_dir)
    return invalid("ablate options, data_dir and out_dir are required");
  return guarded([&] {
    relight::AblateOptions opts;
    opts.data_dir = options->data_dir;
    if (options->val_data_dir) opts.val_data_dir = options->val_data_dir;
    if (options->config_path) opts.config = relight::TrainConfig::load(options->config_path);
    opts.out_dir = options->out_dir;
    if (options->lpips_file) opts.lpips_file = options->lpips_file;
    if (options->on_progress) {
      auto fn = options->on_progress;
      void* user = options->user;
      opts.on_progress = [fn, user](const std::string& line) { fn(user, -1, line.c_str()); };
    }
    const auto rows = relight::run_ablation(opts);
    if (table_out)
      *table_out =
          dup_string(relight::format_ablation_table(rows, options->lpips_file != nullptr));
  });
}

}  // extern "C"
