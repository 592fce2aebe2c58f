// Command-line front end. Talks to the engine exclusively through the C API
// in relight.h; every failure exits nonzero with a single "error:" line.

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <string>

#include "CLI11.hpp"
#include "relight.h"

namespace {

constexpr const char* kConfigHelp =
    "Config file: flat key=value lines, '#' comments. Keys:\n"
    "  steps, batch_size, lr, beta1, beta2, epsilon, seed,\n"
    "  checkpoint_interval, resize_factor (1|0.5|0.25), base_channels,\n"
    "  resolution, ms_branch_channels, ms_fused_channels, adversarial (0|1),\n"
    "  max_pairs, w_recon_scene, w_recon_shadow, w_recon_final, w_adv_scene,\n"
    "  w_adv_shadow, shadow_threshold";

[[noreturn]] void die(const std::string& message) {
  std::fprintf(stderr, "error: %s\n", message.c_str());
  std::exit(1);
}

void require_ok(relight_status status) {
  if (status != RELIGHT_OK) die(relight_last_error());
}

void print_step(void*, int32_t, const char* line) { std::printf("%s\n", line); }

struct OwnedString {
  char* value = nullptr;
  ~OwnedString() { relight_string_free(value); }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"relight: image light source transfer engine"};
  app.require_subcommand(1);

  // gen-data ----------------------------------------------------------
  auto* gen = app.add_subcommand("gen-data", "Generate a deterministic synthetic corpus");
  uint32_t scenes = 0, res = 0;
  uint64_t seed = 0;
  std::string out_dir, split = "train";
  gen->add_option("--scenes", scenes, "Number of scenes")->required();
  gen->add_option("--res", res, "Image resolution (square, >= 32, multiple of 16)")->required();
  gen->add_option("--seed", seed, "Base seed")->required();
  gen->add_option("--out", out_dir, "Output directory")->required();
  gen->add_option("--split", split, "Seed range: train or val")
      ->check(CLI::IsMember({"train", "val"}));

  // train --------------------------------------------------------------
  auto* train = app.add_subcommand("train", "Train on a corpus");
  train->footer(kConfigHelp);
  std::string data_dir, config_path, train_out, ablate, resume;
  bool no_adv = false;
  train->add_option("--data", data_dir, "Corpus directory (with manifest.tsv)")->required();
  train->add_option("--config", config_path, "Training config file")->required();
  train->add_option("--out", train_out, "Run output directory")->required();
  train->add_flag("--no-adv", no_adv, "Disable the adversarial terms");
  train->add_option("--ablate", ablate, "Drop architecture parts: cal, ms, or cal+ms")
      ->check(CLI::IsMember({"cal", "ms", "cal+ms"}));
  train->add_option("--resume", resume, "Training checkpoint to resume from");

  // infer --------------------------------------------------------------
  auto* infer = app.add_subcommand("infer", "Run the transfer on one image");
  std::string ckpt, input_img, output_img, aux_dir;
  infer->add_option("--ckpt", ckpt, "Checkpoint file")->required();
  infer->add_option("--input", input_img, "Input PNG")->required();
  infer->add_option("--out", output_img, "Output PNG")->required();
  infer->add_option("--dump-aux", aux_dir, "Also write intermediate images here");

  // eval ---------------------------------------------------------------
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a corpus");
  std::string eval_ckpt, eval_data, lpips_file;
  bool identity = false;
  eval->add_option("--ckpt", eval_ckpt, "Checkpoint file");
  eval->add_option("--data", eval_data, "Corpus directory")->required();
  eval->add_option("--lpips-file", lpips_file, "One externally computed LPIPS value per pair");
  eval->add_flag("--identity", identity, "Score the unmodified input instead of a model");

  // ablate ---------------------------------------------------------------
  auto* ablate_cmd = app.add_subcommand("ablate", "Train and evaluate the four variants");
  ablate_cmd->footer(kConfigHelp);
  std::string ab_data, ab_config, ab_out, ab_val, ab_lpips;
  ablate_cmd->add_option("--data", ab_data, "Training corpus")->required();
  ablate_cmd->add_option("--config", ab_config, "Training config file")->required();
  ablate_cmd->add_option("--out", ab_out, "Output directory")->required();
  ablate_cmd->add_option("--val-data", ab_val, "Evaluation corpus (defaults to --data)");
  ablate_cmd->add_option("--lpips-file", ab_lpips, "LPIPS values for the evaluation corpus");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    std::exit(app.exit(e));
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    std::exit(2);
  }

  if (gen->parsed()) {
    relight_corpus_options opts{};
    opts.scenes = scenes;
    opts.resolution = res;
    opts.seed = seed;
    opts.out_dir = out_dir.c_str();
    opts.validation_split = split == "val" ? 1 : 0;
    relight_corpus_summary summary{};
    require_ok(relight_corpus_generate(&opts, &summary));
    std::printf("scenes=%u\nlit_images=%u\nshadow_free_images=%u\npairs=%u\n", summary.scenes,
                summary.lit_images, summary.shadow_free_images, summary.pairs);
  } else if (train->parsed()) {
    relight_train_options opts{};
    opts.data_dir = data_dir.c_str();
    opts.config_path = config_path.c_str();
    opts.out_dir = train_out.c_str();
    opts.disable_adversarial = no_adv ? 1 : 0;
    opts.ablate = ablate.empty() ? nullptr : ablate.c_str();
    opts.resume_checkpoint = resume.empty() ? nullptr : resume.c_str();
    opts.on_step = print_step;
    relight_train_summary summary{};
    require_ok(relight_train(&opts, &summary));
    OwnedString final_ckpt{summary.final_checkpoint};
    OwnedString loss_log{summary.loss_log};
    std::printf("final_checkpoint=%s\nloss_log=%s\n", summary.final_checkpoint,
                summary.loss_log);
  } else if (infer->parsed()) {
    relight_model* model = nullptr;
    require_ok(relight_model_open(ckpt.c_str(), &model));
    const relight_status status = relight_model_infer_file(
        model, input_img.c_str(), output_img.c_str(), aux_dir.empty() ? nullptr : aux_dir.c_str());
    relight_model_close(model);
    require_ok(status);
    std::printf("wrote %s\n", output_img.c_str());
  } else if (eval->parsed()) {
    if (!identity && eval_ckpt.empty()) die("eval requires --ckpt (or --identity)");
    OwnedString kv, json;
    require_ok(relight_evaluate(eval_ckpt.empty() ? nullptr : eval_ckpt.c_str(),
                                eval_data.c_str(),
                                lpips_file.empty() ? nullptr : lpips_file.c_str(),
                                identity ? 1 : 0, &kv.value, &json.value));
    std::printf("%s%s\n", kv.value, json.value);
  } else if (ablate_cmd->parsed()) {
    relight_ablate_options opts{};
    opts.data_dir = ab_data.c_str();
    opts.val_data_dir = ab_val.empty() ? nullptr : ab_val.c_str();
    opts.config_path = ab_config.c_str();
    opts.out_dir = ab_out.c_str();
    opts.lpips_file = ab_lpips.empty() ? nullptr : ab_lpips.c_str();
    opts.on_progress = print_step;
    OwnedString table;
    require_ok(relight_ablate(&opts, &table.value));
    std::printf("%s", table.value);
  }
  return 0;
}
