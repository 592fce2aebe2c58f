#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "relight/image_io.hpp"
#include "relight/synth.hpp"
#include "relight/trainer.hpp"

using namespace relight;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / "relight_trainer" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Shared tiny corpus: one scene at 32x32, 39 pairs.
const std::string& tiny_corpus() {
  static const std::string dir = [] {
    const auto d = fresh_dir("corpus");
    CorpusOptions opt;
    opt.scenes = 1;
    opt.resolution = 32;
    opt.seed = 77;
    opt.out_dir = d.string();
    build_corpus(opt);
    return d.string();
  }();
  return dir;
}

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.steps = 6;
  cfg.batch_size = 1;
  cfg.base_channels = 4;
  cfg.resolution = 32;
  cfg.resize_factor = 1.0;
  cfg.ms_branch_channels = 8;
  cfg.ms_fused_channels = 8;
  cfg.seed = 11;
  return cfg;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

std::vector<std::pair<int, std::vector<double>>> parse_log(const std::string& text) {
  std::vector<std::pair<int, std::vector<double>>> rows;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string field;
    std::getline(ls, field, '\t');
    std::pair<int, std::vector<double>> row{std::stoi(field), {}};
    while (std::getline(ls, field, '\t'))
      row.second.push_back(std::stod(field.substr(field.find('=') + 1)));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

TEST_CASE("training runs, logs every step, and writes checkpoints") {
  const auto out = fresh_dir("basic");
  TrainOptions opt;
  opt.data_dir = tiny_corpus();
  opt.out_dir = out.string();
  opt.config = tiny_config();
  opt.config.adversarial = false;
  int callback_steps = 0;
  opt.on_step = [&](int, const std::string&) { ++callback_steps; };
  const auto result = train(opt);

  CHECK(result.steps_run == 6);
  CHECK(callback_steps == 6);
  CHECK(fs::exists(result.final_checkpoint));
  CHECK(result.first_total_l1 > 0.0);
  CHECK(std::isfinite(result.last_total_l1));
  CHECK(result.generator_params > 0);

  const auto log = parse_log(slurp(result.loss_log));
  REQUIRE(log.size() == 6);
  CHECK(log.front().first == 1);
  CHECK(log.back().first == 6);
  for (const auto& [step, values] : log)
    for (double v : values) CHECK(std::isfinite(v));
}

TEST_CASE("adversarial training updates both critics and logs their losses") {
  const auto out = fresh_dir("adv");
  TrainOptions opt;
  opt.data_dir = tiny_corpus();
  opt.out_dir = out.string();
  opt.config = tiny_config();
  opt.config.steps = 3;
  const auto result = train(opt);
  CHECK(result.steps_run == 3);
  const auto log_text = slurp(result.loss_log);
  CHECK(log_text.find("d_scene=") != std::string::npos);
  CHECK(log_text.find("d_shadow=") != std::string::npos);
  CHECK(log_text.find("g_adv_scene=") != std::string::npos);
}

TEST_CASE("identical seed and config give byte-identical loss logs") {
  const auto out1 = fresh_dir("det1");
  const auto out2 = fresh_dir("det2");
  TrainOptions opt;
  opt.data_dir = tiny_corpus();
  opt.config = tiny_config();
  opt.config.adversarial = false;
  opt.out_dir = out1.string();
  const auto r1 = train(opt);
  opt.out_dir = out2.string();
  const auto r2 = train(opt);
  CHECK(slurp(r1.loss_log) == slurp(r2.loss_log));
  CHECK(read_file(r1.final_checkpoint) == read_file(r2.final_checkpoint));
}

TEST_CASE("resume reproduces the straight-through run") {
  TrainConfig cfg = tiny_config();
  cfg.adversarial = true;  // exercise optimizer state for both param sets
  cfg.steps = 8;
  cfg.checkpoint_interval = 4;

  const auto straight_dir = fresh_dir("straight");
  TrainOptions straight;
  straight.data_dir = tiny_corpus();
  straight.out_dir = straight_dir.string();
  straight.config = cfg;
  const auto full = train(straight);

  const auto half_dir = fresh_dir("half");
  TrainOptions half = straight;
  half.out_dir = half_dir.string();
  half.config.steps = 4;
  train(half);

  const auto resumed_dir = fresh_dir("resumed");
  TrainOptions resumed = straight;
  resumed.out_dir = resumed_dir.string();
  resumed.config.steps = 4;
  resumed.resume_checkpoint = (half_dir / "ckpt_00000004.ckpt").string();
  const auto tail = train(resumed);

  const auto full_log = parse_log(slurp(full.loss_log));
  const auto tail_log = parse_log(slurp(tail.loss_log));
  REQUIRE(full_log.size() == 8);
  REQUIRE(tail_log.size() == 4);
  for (size_t i = 0; i < 4; ++i) {
    CHECK(tail_log[i].first == full_log[4 + i].first);
    REQUIRE(tail_log[i].second.size() == full_log[4 + i].second.size());
    for (size_t j = 0; j < tail_log[i].second.size(); ++j)
      CHECK(std::abs(tail_log[i].second[j] - full_log[4 + i].second[j]) <= 1e-6);
  }
  CHECK(read_file(tail.final_checkpoint) == read_file(full.final_checkpoint));
}

TEST_CASE("resume rejects an inference-only checkpoint") {
  const auto base = fresh_dir("inference_only");
  TrainOptions opt;
  opt.data_dir = tiny_corpus();
  opt.out_dir = base.string();
  opt.config = tiny_config();
  opt.config.adversarial = false;
  const auto r = train(opt);

  TrainOptions resume = opt;
  resume.out_dir = fresh_dir("inference_only2").string();
  resume.resume_checkpoint = r.final_checkpoint;  // lacks optimizer state
  CHECK_THROWS_WITH_AS(train(resume), doctest::Contains("optimizer state"), Error);
}

TEST_CASE("corrupt corpus aborts with the file path") {
  const auto dir = fresh_dir("corrupt");
  const auto scene = SceneSpec::generate(4242, 32);
  fs::create_directories(dir / "4242");
  write_png((dir / "4242" / "N_2500.png").string(), render_scene(scene, {Direction::N, 2500}));
  write_png((dir / "4242" / "E_4500.png").string(), render_scene(scene, kTargetSetting));
  write_png((dir / "4242" / "shadow_free.png").string(), render_shadow_free(scene));
  {
    std::ofstream mf((dir / "manifest.tsv").string(), std::ios::binary);
    mf << "4242\t4242/N_2500.png\t4242/E_4500.png\t4242/shadow_free.png\tN\t2500\n";
  }
  // truncate one image
  auto bytes = read_file((dir / "4242" / "N_2500.png").string());
  bytes.resize(bytes.size() / 3);
  write_file((dir / "4242" / "N_2500.png").string(), bytes);

  TrainOptions opt;
  opt.data_dir = dir.string();
  opt.out_dir = fresh_dir("corrupt_out").string();
  opt.config = tiny_config();
  opt.config.adversarial = false;
  opt.config.steps = 1;
  CHECK_THROWS_WITH_AS(train(opt), doctest::Contains("N_2500.png"), Error);
}

TEST_CASE("max_pairs limits the sampled manifest") {
  const auto out = fresh_dir("maxpairs");
  TrainOptions opt;
  opt.data_dir = tiny_corpus();
  opt.out_dir = out.string();
  opt.config = tiny_config();
  opt.config.adversarial = false;
  opt.config.steps = 2;
  opt.config.max_pairs = 4;
  CHECK(train(opt).steps_run == 2);
}

TEST_CASE("evaluate in identity mode reports the sentinel on self-pairs") {
  // handcrafted manifest whose target equals its input
  const auto dir = fresh_dir("ident_corpus");
  const auto scene = SceneSpec::generate(5000, 32);
  fs::create_directories(dir / "5000");
  write_png((dir / "5000" / "E_4500.png").string(), render_scene(scene, kTargetSetting));
  write_png((dir / "5000" / "shadow_free.png").string(), render_shadow_free(scene));
  std::ofstream mf((dir / "manifest.tsv").string(), std::ios::binary);
  mf << "5000\t5000/E_4500.png\t5000/E_4500.png\t5000/shadow_free.png\tE\t4500\n";
  mf.close();

  EvalOptions eval;
  eval.data_dir = dir.string();
  eval.identity = true;
  const auto report = evaluate(eval);
  CHECK(std::isinf(report.psnr));
  CHECK(report.ssim == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(report.to_kv().find("psnr=identical") != std::string::npos);
}

TEST_CASE("evaluate computes means and applies a supplied lpips file") {
  const auto out = fresh_dir("eval_train");
  TrainOptions opt;
  opt.data_dir = tiny_corpus();
  opt.out_dir = out.string();
  opt.config = tiny_config();
  opt.config.adversarial = false;
  opt.config.steps = 2;
  const auto r = train(opt);

  const auto lpips_path = (out / "lpips.txt").string();
  {
    std::ofstream f(lpips_path);
    for (int i = 0; i < 39; ++i) f << "0.3794\n";
  }
  EvalOptions eval;
  eval.checkpoint = r.final_checkpoint;
  eval.data_dir = tiny_corpus();
  eval.lpips_file = lpips_path;
  const auto report = evaluate(eval);
  CHECK(std::isfinite(report.psnr));
  CHECK(report.ssim > -1.0);
  CHECK(report.ssim < 1.0);
  REQUIRE(report.lpips.has_value());
  CHECK(*report.lpips == doctest::Approx(0.3794));
  REQUIRE(report.mps.has_value());
  CHECK(*report.mps == doctest::Approx(0.5 * (report.ssim + 1.0 - 0.3794)).epsilon(1e-12));

  const auto parsed = MetricReport::from_json(report.to_json());
  CHECK(parsed.ssim == doctest::Approx(report.ssim).epsilon(1e-9));

  // wrong-length lpips file is rejected
  {
    std::ofstream f(lpips_path, std::ios::trunc);
    f << "0.5\n";
  }
  CHECK_THROWS_WITH_AS(evaluate(eval), doctest::Contains("lpips"), Error);
}

TEST_CASE("evaluate lists missing pair files") {
  const auto dir = fresh_dir("missing_corpus");
  std::ofstream mf((dir / "manifest.tsv").string(), std::ios::binary);
  mf << "1\t1/NE_2500.png\t1/E_4500.png\t1/shadow_free.png\tNE\t2500\n";
  mf.close();
  EvalOptions eval;
  eval.data_dir = dir.string();
  eval.identity = true;
  CHECK_THROWS_WITH_AS(evaluate(eval), doctest::Contains("1/NE_2500.png"), Error);
}

TEST_CASE("infer writes the output image, aux dumps, and validates inputs") {
  const auto out = fresh_dir("infer");
  TrainOptions opt;
  opt.data_dir = tiny_corpus();
  opt.out_dir = out.string();
  opt.config = tiny_config();
  opt.config.adversarial = false;
  opt.config.steps = 2;
  const auto r = train(opt);

  const auto rows = load_manifest(tiny_corpus());
  const auto input_path = (fs::path(tiny_corpus()) / rows[0].input_path).string();

  InferOptions inf;
  inf.checkpoint = r.final_checkpoint;
  inf.input_image = input_path;
  inf.output_image = (out / "result.png").string();
  inf.aux_dir = (out / "aux").string();
  infer_file(inf);
  CHECK(fs::exists(inf.output_image));
  CHECK(fs::exists(out / "aux" / "shadow_free.png"));
  CHECK(fs::exists(out / "aux" / "relit.png"));
  const auto first = read_file(inf.output_image);
  CHECK(read_png(inf.output_image).shape() == Shape{1, 3, 32, 32});

  // re-running is byte-identical
  infer_file(inf);
  CHECK(read_file(inf.output_image) == first);

  // resolution mismatch names the expected size
  const auto big = fresh_dir("infer_big");
  write_png((big / "big.png").string(), Tensor::zeros({1, 3, 64, 64}));
  InferOptions bad = inf;
  bad.input_image = (big / "big.png").string();
  CHECK_THROWS_WITH_AS(infer_file(bad), doctest::Contains("expects 32x32"), Error);

  // corrupt checkpoint fails the CRC
  auto bytes = read_file(r.final_checkpoint);
  bytes.resize(bytes.size() - 25);
  const auto corrupt = (out / "corrupt.ckpt").string();
  write_file(corrupt, bytes);
  InferOptions crc = inf;
  crc.checkpoint = corrupt;
  CHECK_THROWS_WITH_AS(infer_file(crc), doctest::Contains("CRC"), Error);
}

TEST_CASE("ablation runner produces four ordered rows with finite cells") {
  const auto out = fresh_dir("ablate");
  AblateOptions opt;
  opt.data_dir = tiny_corpus();
  opt.out_dir = out.string();
  opt.config = tiny_config();
  opt.config.adversarial = false;
  opt.config.steps = 2;
  const auto rows = run_ablation(opt);
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].name == "no_cal_no_ms");
  CHECK(rows[1].name == "no_cal");
  CHECK(rows[2].name == "no_ms");
  CHECK(rows[3].name == "full");
  for (const auto& row : rows) {
    CHECK(std::isfinite(row.metrics.psnr));
    CHECK(std::isfinite(row.metrics.ssim));
    CHECK(row.generator_params > 0);
    if (row.name != "full") CHECK(row.generator_params < rows[3].generator_params);
  }
  CHECK(fs::exists(out / "ablation.tsv"));
  const auto table = format_ablation_table(rows, false);
  CHECK(table.find("variant\tparams\tpsnr\tssim\n") == 0);
  CHECK(std::count(table.begin(), table.end(), '\n') == 5);
}
