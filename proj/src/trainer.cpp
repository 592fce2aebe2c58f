#include "relight/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "relight/adam.hpp"
#include "relight/checkpoint.hpp"
#include "relight/image_io.hpp"
#include "relight/synth.hpp"

namespace relight {

namespace fs = std::filesystem;

namespace {

std::string fmt9(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

// Caches corpus images resized to the training resolution, in [0,1].
class PairLoader {
 public:
  PairLoader(std::string corpus_dir, int target_resolution)
      : dir_(std::move(corpus_dir)), resolution_(target_resolution) {}

  const Tensor& image(const std::string& rel_path) {
    auto it = cache_.find(rel_path);
    if (it != cache_.end()) return it->second;
    const std::string full = (fs::path(dir_) / rel_path).string();
    Tensor img;
    try {
      img = read_png(full);
    } catch (const Error& e) {
      fail("corpus: cannot load '", full, "': ", e.what());
    }
    const Shape s = img.shape();
    check(s.h == s.w, "corpus: image '", rel_path, "' is not square: ", s.str());
    check(s.h % resolution_ == 0, "corpus: image '", rel_path, "' resolution ", s.h,
          " is not an integer multiple of the training resolution ", resolution_);
    img = downsample(img, s.h / resolution_);
    return cache_.emplace(rel_path, std::move(img)).first->second;
  }

 private:
  std::string dir_;
  int resolution_;
  std::map<std::string, Tensor> cache_;
};

// Stacks images (in [0,1]) into a batch tensor mapped to [-1,1].
Tensor stack_signed(const std::vector<const Tensor*>& images) {
  const Shape s0 = images.front()->shape();
  auto out = Tensor::zeros({int(images.size()), s0.c, s0.h, s0.w});
  const int64_t per = s0.numel();
  for (size_t i = 0; i < images.size(); ++i) {
    check(images[i]->shape() == s0, "batch: image shapes differ");
    const float* src = images[i]->ptr();
    float* dst = out.ptr() + int64_t(i) * per;
    for (int64_t j = 0; j < per; ++j) dst[j] = src[j] * 2.0f - 1.0f;
  }
  return out;
}

Tensor signed_to_unit(const Tensor& img) {
  auto out = Tensor::zeros(img.shape());
  for (int64_t i = 0; i < img.numel(); ++i) out.ptr()[i] = img.ptr()[i] * 0.5f + 0.5f;
  return out;
}

// Pre-discriminator clamp for the shadow branch: [-1,1] -> [0,1] -> min(thr).
template <typename T>
TensorT<T> rectified_view(TapeT<T>& tape, const TensorT<T>& signed_img, T threshold) {
  return shadow_rectify(tape, to_unit_range(tape, signed_img), threshold);
}

struct LogLine {
  int step = 0;
  std::vector<std::pair<std::string, double>> values;

  std::string str() const {
    std::ostringstream os;
    os << step;
    for (const auto& [k, v] : values) os << '\t' << k << '=' << fmt9(v);
    return os.str();
  }
};

NamedTensors training_snapshot(const ModelBundle& model, const Adam& adam_gen,
                               const Adam& adam_disc, int step) {
  NamedTensors out = snapshot_generator(model);
  for (const auto& [name, t] : model.disc.items()) out.emplace_back(name, t.detach());
  auto add_moments = [&out](const Adam& adam, const ParamStore& params) {
    for (const auto& [name, t] : params.items()) {
      if (!adam.has_state(name)) continue;
      out.emplace_back(name + ".adam_m", Tensor::from_data(t.shape(), adam.moment_m(name)));
      out.emplace_back(name + ".adam_v", Tensor::from_data(t.shape(), adam.moment_v(name)));
    }
  };
  add_moments(adam_gen, model.gen);
  add_moments(adam_disc, model.disc);
  auto meta = [&out](const std::string& name, int64_t v) {
    out.emplace_back(name, Tensor::from_data({1, 1, 1, 1}, {float(v)}));
  };
  meta("meta.step", step);
  meta("meta.adam_gen_t", adam_gen.step_count());
  meta("meta.adam_disc_t", adam_disc.step_count());
  return out;
}

int restore_training(ModelBundle& model, Adam& adam_gen, Adam& adam_disc,
                     const CheckpointData& data) {
  check(data.find("meta.step") != nullptr,
        "resume: not a training checkpoint (missing optimizer state)");
  restore_generator(model, data);
  for (auto& [name, t] : model.disc.items()) {
    const Tensor* stored = data.find(name);
    check(stored != nullptr, "resume: checkpoint lacks discriminator parameter '", name, "'");
    check(stored->shape() == t.shape(), "resume: shape mismatch for '", name, "'");
    t.data() = stored->data();
  }
  auto restore_moments = [&data](Adam& adam, const ParamStore& params) {
    for (const auto& [name, t] : params.items()) {
      const Tensor* m = data.find(name + ".adam_m");
      const Tensor* v = data.find(name + ".adam_v");
      check((m == nullptr) == (v == nullptr), "resume: half-present moments for '", name, "'");
      if (m) {
        check(m->shape() == t.shape() && v->shape() == t.shape(),
              "resume: moment shape mismatch for '", name, "'");
        adam.restore(name, m->data(), v->data());
      }
    }
  };
  restore_moments(adam_gen, model.gen);
  restore_moments(adam_disc, model.disc);
  const Tensor* step = data.find("meta.step");
  const Tensor* gt = data.find("meta.adam_gen_t");
  const Tensor* dt = data.find("meta.adam_disc_t");
  check(step && gt && dt, "resume: not a training checkpoint (missing optimizer state)");
  adam_gen.set_step_count(int64_t(gt->data()[0]));
  adam_disc.set_step_count(int64_t(dt->data()[0]));
  return int(step->data()[0]);
}

}  // namespace

TrainResult train(const TrainOptions& options) {
  options.config.validate();
  check(!options.out_dir.empty(), "train: output directory required");
  std::error_code ec;
  fs::create_directories(options.out_dir, ec);
  check(!ec, "train: cannot create output directory '", options.out_dir, "'");

  const TrainConfig& cfg = options.config;
  const bool adversarial = cfg.adversarial && !options.no_adv;
  const ArchConfig arch = cfg.arch(options.ablate_cal, options.ablate_ms);

  auto model = ModelBundle::build(arch, cfg.seed);
  AdamConfig adam_cfg{cfg.lr, cfg.beta1, cfg.beta2, cfg.epsilon};
  Adam adam_gen(adam_cfg), adam_disc(adam_cfg);

  int start_step = 0;
  if (!options.resume_checkpoint.empty())
    start_step = restore_training(model, adam_gen, adam_disc,
                                  load_checkpoint(options.resume_checkpoint));

  auto rows = load_manifest(options.data_dir);
  if (cfg.max_pairs > 0 && int(rows.size()) > cfg.max_pairs)
    rows.resize(size_t(cfg.max_pairs));
  check(int(rows.size()) >= 1, "train: no usable pairs in manifest");

  PairLoader loader(options.data_dir, cfg.resolution);

  const std::string log_path = (fs::path(options.out_dir) / "loss_log.tsv").string();
  std::ofstream log(log_path, std::ios::binary | std::ios::trunc);
  check(log.good(), "train: cannot write loss log '", log_path, "'");

  TrainResult result;
  result.generator_params = model.gen.parameter_count();
  result.discriminator_params = model.disc.parameter_count();
  result.loss_log = log_path;

  if (options.on_start)
    options.on_start(detail::concat("generator_params=", result.generator_params,
                                    "\tdiscriminator_params=", result.discriminator_params,
                                    "\tsteps=", cfg.steps, "\tpairs=", rows.size()));

  const float thr = cfg.weights.shadow_threshold;
  for (int step = start_step + 1; step <= start_step + cfg.steps; ++step) {
    // Stateless batch selection keyed by (seed, step, slot): resuming at any
    // step reproduces the straight-through sample sequence exactly.
    std::vector<const Tensor*> inputs, targets, proxies;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const auto& row = rows[mix64(cfg.seed, uint64_t(step), uint64_t(b)) % rows.size()];
      inputs.push_back(&loader.image(row.input_path));
      targets.push_back(&loader.image(row.target_path));
      proxies.push_back(&loader.image(row.shadow_free_path));
    }
    auto x = stack_signed(inputs);
    auto target = stack_signed(targets);
    auto proxy = stack_signed(proxies);

    Tape tape;
    auto out = model.full_forward(tape, x);

    auto loss_scene = ops::l1_loss(tape, out.shadow_free, proxy);
    auto loss_shadow = ops::l1_loss(tape, out.relit, target);
    auto loss_final = ops::l1_loss(tape, out.y_hat, target);
    auto recon = ops::add(
        tape, ops::scale(tape, loss_scene, cfg.weights.recon_scene),
        ops::add(tape, ops::scale(tape, loss_shadow, cfg.weights.recon_shadow),
                 ops::scale(tape, loss_final, cfg.weights.recon_final)));

    LogLine line;
    line.step = step;
    line.values.emplace_back("l1_scene", loss_scene.scalar());
    line.values.emplace_back("l1_shadow", loss_shadow.scalar());
    line.values.emplace_back("l1_final", loss_final.scalar());
    const double total_l1 = recon.scalar();
    line.values.emplace_back("total_l1", total_l1);

    auto total = recon;
    if (adversarial) {
      // Discriminator step first, on detached predictions.
      Tape d_tape;
      auto fake_sf = out.shadow_free.detach();
      auto fake_relit = out.relit.detach();
      auto d_scene = adversarial_losses(d_tape, model.disc_scene.forward(d_tape, proxy),
                                        model.disc_scene.forward(d_tape, fake_sf));
      auto d_shadow = adversarial_losses(
          d_tape, model.disc_shadow.forward(d_tape, rectified_view(d_tape, target, thr)),
          model.disc_shadow.forward(d_tape, rectified_view(d_tape, fake_relit, thr)));
      auto d_total = ops::add(d_tape, d_scene.d_loss, d_shadow.d_loss);
      model.disc.zero_grads();
      d_tape.backward(d_total);
      adam_disc.step(model.disc);
      line.values.emplace_back("d_scene", d_scene.d_loss.scalar());
      line.values.emplace_back("d_shadow", d_shadow.d_loss.scalar());

      // Generator step through the freshly updated critics.
      auto g_scene = adversarial_losses(tape, model.disc_scene.forward(tape, proxy).detach(),
                                        model.disc_scene.forward(tape, out.shadow_free));
      auto g_shadow = adversarial_losses(
          tape, model.disc_shadow.forward(tape, rectified_view(tape, target, thr)).detach(),
          model.disc_shadow.forward(tape, rectified_view(tape, out.relit, thr)));
      auto g_adv = ops::add(tape, ops::scale(tape, g_scene.g_loss, cfg.weights.adv_scene),
                            ops::scale(tape, g_shadow.g_loss, cfg.weights.adv_shadow));
      total = ops::add(tape, recon, g_adv);
      line.values.emplace_back("g_adv_scene", g_scene.g_loss.scalar());
      line.values.emplace_back("g_adv_shadow", g_shadow.g_loss.scalar());
    }
    line.values.emplace_back("total", total.scalar());

    check(std::isfinite(total.scalar()), "train: non-finite loss at step ", step);

    model.gen.zero_grads();
    tape.backward(total);
    adam_gen.step(model.gen);

    log << line.str() << '\n';
    check(log.good(), "train: loss log write failed at step ", step);
    if (options.on_step) options.on_step(step, line.str());

    if (step == start_step + 1) result.first_total_l1 = total_l1;
    result.last_total_l1 = total_l1;
    ++result.steps_run;

    if (cfg.checkpoint_interval > 0 && step % cfg.checkpoint_interval == 0) {
      char name[64];
      std::snprintf(name, sizeof name, "ckpt_%08d.ckpt", step);
      save_checkpoint((fs::path(options.out_dir) / name).string(), arch,
                      training_snapshot(model, adam_gen, adam_disc, step));
    }
  }

  const std::string final_path = (fs::path(options.out_dir) / "model_final.ckpt").string();
  save_checkpoint(final_path, arch, snapshot_generator(model));
  result.final_checkpoint = final_path;
  return result;
}

MetricReport evaluate(const EvalOptions& options) {
  auto rows = load_manifest(options.data_dir);

  std::optional<ModelBundle> model;
  if (!options.identity) {
    const auto data = load_checkpoint(options.checkpoint);
    model.emplace(ModelBundle::build(data.config, 0));
    restore_generator(*model, data);
  }
  const int resolution = options.identity ? 0 : model->config.resolution;

  std::vector<double> lpips_values;
  if (!options.lpips_file.empty()) {
    std::ifstream f(options.lpips_file);
    check(f.good(), "eval: cannot open lpips file '", options.lpips_file, "'");
    double v = 0;
    while (f >> v) lpips_values.push_back(v);
    check(lpips_values.size() == rows.size(), "eval: lpips file has ", lpips_values.size(),
          " values for ", rows.size(), " pairs");
    for (double lv : lpips_values)
      check(lv >= 0.0 && lv <= 1.0, "eval: lpips value outside [0,1]: ", lv);
  }

  std::vector<std::string> missing;
  for (const auto& row : rows) {
    for (const std::string& rel : {row.input_path, row.target_path})
      if (!fs::exists(fs::path(options.data_dir) / rel)) missing.push_back(rel);
  }
  if (!missing.empty()) {
    std::string joined;
    for (const auto& m : missing) joined += " " + m;
    fail("eval: missing pair files:", joined);
  }

  double psnr_sum = 0.0, ssim_sum = 0.0;
  int finite_psnr = 0, identical = 0;
  for (const auto& row : rows) {
    Tensor input = read_png((fs::path(options.data_dir) / row.input_path).string());
    Tensor target = read_png((fs::path(options.data_dir) / row.target_path).string());
    Tensor prediction;
    if (options.identity) {
      if (options.resize_to > 0) {
        const int divisor = input.shape().h / options.resize_to;
        check(divisor >= 1 && divisor * options.resize_to == input.shape().h,
              "eval: corpus resolution ", input.shape().h, " incompatible with resize_to ",
              options.resize_to);
        input = downsample(input, divisor);
        target = downsample(target, divisor);
      }
      prediction = input;
    } else {
      const int divisor = input.shape().h / resolution;
      check(divisor * resolution == input.shape().h, "eval: corpus resolution ",
            input.shape().h, " incompatible with model resolution ", resolution);
      input = downsample(input, divisor);
      target = downsample(target, divisor);
      auto batch = stack_signed({&input});
      Tape tape;
      auto out = model->full_forward(tape, batch);
      prediction = signed_to_unit(out.y_hat);
    }
    const double p = psnr(prediction, target);
    if (std::isinf(p)) {
      ++identical;
    } else {
      psnr_sum += p;
      ++finite_psnr;
    }
    ssim_sum += ssim(prediction, target);
  }

  MetricReport report;
  report.psnr = finite_psnr > 0 ? psnr_sum / finite_psnr
                                : std::numeric_limits<double>::infinity();
  report.ssim = ssim_sum / double(rows.size());
  if (!lpips_values.empty()) {
    double lpips_sum = 0.0;
    for (double v : lpips_values) lpips_sum += v;
    report.lpips = lpips_sum / double(lpips_values.size());
    report.mps = mps(report.ssim, *report.lpips);
  }
  return report;
}

void infer_file(const InferOptions& options) {
  const auto data = load_checkpoint(options.checkpoint);
  auto model = ModelBundle::build(data.config, 0);
  restore_generator(model, data);
  infer_with_model(model, options.input_image, options.output_image, options.aux_dir);
}

void infer_with_model(const ModelBundle& model, const std::string& input_image,
                      const std::string& output_image, const std::string& aux_dir) {
  Tensor input = read_png(input_image);
  const Shape s = input.shape();
  const int res = model.config.resolution;
  check(s.h == res && s.w == res, "infer: input is ", s.h, "x", s.w, ", checkpoint expects ",
        res, "x", res);

  auto batch = stack_signed({&input});
  Tape tape;
  auto out = model.full_forward(tape, batch);
  write_png(output_image, signed_to_unit(out.y_hat));
  if (!aux_dir.empty()) {
    std::error_code ec;
    fs::create_directories(aux_dir, ec);
    check(!ec, "infer: cannot create aux directory '", aux_dir, "'");
    write_png((fs::path(aux_dir) / "shadow_free.png").string(), signed_to_unit(out.shadow_free));
    write_png((fs::path(aux_dir) / "relit.png").string(), signed_to_unit(out.relit));
  }
}

std::vector<AblateVariantResult> run_ablation(const AblateOptions& options) {
  struct Variant {
    const char* name;
    bool cal_off, ms_off;
  };
  // Fixed row order: both removed, gates removed, fusion removed, full.
  const Variant variants[] = {{"no_cal_no_ms", true, true},
                              {"no_cal", true, false},
                              {"no_ms", false, true},
                              {"full", false, false}};

  std::vector<AblateVariantResult> results;
  for (const auto& v : variants) {
    TrainOptions t;
    t.data_dir = options.data_dir;
    t.out_dir = (fs::path(options.out_dir) / v.name).string();
    t.config = options.config;
    t.ablate_cal = v.cal_off;
    t.ablate_ms = v.ms_off;
    if (options.on_progress)
      options.on_progress(std::string("training variant ") + v.name);
    const auto train_result = train(t);

    EvalOptions e;
    e.checkpoint = train_result.final_checkpoint;
    e.data_dir = options.val_data_dir.empty() ? options.data_dir : options.val_data_dir;
    e.lpips_file = options.lpips_file;
    AblateVariantResult row;
    row.name = v.name;
    row.generator_params = train_result.generator_params;
    row.metrics = evaluate(e);
    results.push_back(std::move(row));
    if (options.on_progress)
      options.on_progress(std::string("evaluated variant ") + v.name);
  }

  const std::string table = format_ablation_table(results, !options.lpips_file.empty());
  std::ofstream f(fs::path(options.out_dir) / "ablation.tsv", std::ios::trunc);
  check(f.good(), "ablate: cannot write table in '", options.out_dir, "'");
  f << table;
  return results;
}

std::string format_ablation_table(const std::vector<AblateVariantResult>& rows,
                                  bool with_lpips) {
  std::ostringstream os;
  os << "variant\tparams\tpsnr\tssim";
  if (with_lpips) os << "\tlpips\tmps";
  os << '\n';
  for (const auto& r : rows) {
    os << r.name << '\t' << r.generator_params << '\t'
       << (std::isinf(r.metrics.psnr) ? "identical" : fmt9(r.metrics.psnr)) << '\t'
       << fmt9(r.metrics.ssim);
    if (with_lpips) os << '\t' << fmt9(r.metrics.lpips.value_or(0)) << '\t'
                       << fmt9(r.metrics.mps.value_or(0));
    os << '\n';
  }
  return os.str();
}

}  // namespace relight
