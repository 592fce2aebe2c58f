#include "relight/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace relight {

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

double parse_number(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    const double v = std::stod(value, &used);
    check(used == value.size(), "config: trailing junk in '", key, "=", value, "'");
    return v;
  } catch (const Error&) {
    throw;
  } catch (const std::exception&) {
    fail("config: cannot parse number '", value, "' for key '", key, "'");
  }
}

int parse_int(const std::string& key, const std::string& value) {
  const double v = parse_number(key, value);
  check(v == std::floor(v), "config: key '", key, "' expects an integer, got ", value);
  return int(v);
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "1" || value == "true") return true;
  if (value == "0" || value == "false") return false;
  fail("config: key '", key, "' expects 0/1/true/false, got '", value, "'");
}

}  // namespace

void TrainConfig::validate() const {
  check(steps >= 1, "config: steps must be positive");
  check(batch_size >= 1, "config: batch_size must be positive");
  check(lr > 0, "config: lr must be positive");
  check(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1, "config: betas must lie in [0,1)");
  check(epsilon > 0, "config: epsilon must be positive");
  check(checkpoint_interval >= 0, "config: checkpoint_interval must be >= 0");
  check(resize_factor == 1.0 || resize_factor == 0.5 || resize_factor == 0.25,
        "config: resize_factor must be 1, 0.5 or 0.25, got ", resize_factor);
  check(max_pairs >= 0, "config: max_pairs must be >= 0");
  weights.validate();
  arch().validate();
}

ArchConfig TrainConfig::arch(bool ablate_cal, bool ablate_ms) const {
  ArchConfig cfg;
  cfg.base_channels = base_channels;
  cfg.resolution = resolution;
  cfg.ms_branch_channels = ms_branch_channels;
  cfg.ms_fused_channels = ms_fused_channels;
  cfg.calibration = !ablate_cal;
  cfg.multiscale = !ablate_ms;
  return cfg;
}

std::string TrainConfig::serialize() const {
  std::ostringstream os;
  os << "steps=" << steps << "\n";
  os << "batch_size=" << batch_size << "\n";
  os << "lr=" << fmt(lr) << "\n";
  os << "beta1=" << fmt(beta1) << "\n";
  os << "beta2=" << fmt(beta2) << "\n";
  os << "epsilon=" << fmt(epsilon) << "\n";
  os << "seed=" << seed << "\n";
  os << "checkpoint_interval=" << checkpoint_interval << "\n";
  os << "resize_factor=" << fmt(resize_factor) << "\n";
  os << "base_channels=" << base_channels << "\n";
  os << "resolution=" << resolution << "\n";
  os << "ms_branch_channels=" << ms_branch_channels << "\n";
  os << "ms_fused_channels=" << ms_fused_channels << "\n";
  os << "adversarial=" << (adversarial ? 1 : 0) << "\n";
  os << "max_pairs=" << max_pairs << "\n";
  os << "w_recon_scene=" << fmt(weights.recon_scene) << "\n";
  os << "w_recon_shadow=" << fmt(weights.recon_shadow) << "\n";
  os << "w_recon_final=" << fmt(weights.recon_final) << "\n";
  os << "w_adv_scene=" << fmt(weights.adv_scene) << "\n";
  os << "w_adv_shadow=" << fmt(weights.adv_shadow) << "\n";
  os << "shadow_threshold=" << fmt(weights.shadow_threshold) << "\n";
  return os.str();
}

TrainConfig TrainConfig::parse(const std::string& text) {
  TrainConfig cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    while (!line.empty() && (line.back() == ' ' || line.back() == '\r' || line.back() == '\t'))
      line.pop_back();
    size_t start = line.find_first_not_of(" \t");
    if (start == std::string::npos) continue;
    line.erase(0, start);
    const size_t eq = line.find('=');
    check(eq != std::string::npos, "config: line ", lineno, " is not key=value: '", line, "'");
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);

    if (key == "steps") cfg.steps = parse_int(key, value);
    else if (key == "batch_size") cfg.batch_size = parse_int(key, value);
    else if (key == "lr") cfg.lr = parse_number(key, value);
    else if (key == "beta1") cfg.beta1 = parse_number(key, value);
    else if (key == "beta2") cfg.beta2 = parse_number(key, value);
    else if (key == "epsilon") cfg.epsilon = parse_number(key, value);
    else if (key == "seed") cfg.seed = uint64_t(parse_number(key, value));
    else if (key == "checkpoint_interval") cfg.checkpoint_interval = parse_int(key, value);
    else if (key == "resize_factor") cfg.resize_factor = parse_number(key, value);
    else if (key == "base_channels") cfg.base_channels = parse_int(key, value);
    else if (key == "resolution") cfg.resolution = parse_int(key, value);
    else if (key == "ms_branch_channels") cfg.ms_branch_channels = parse_int(key, value);
    else if (key == "ms_fused_channels") cfg.ms_fused_channels = parse_int(key, value);
    else if (key == "adversarial") cfg.adversarial = parse_bool(key, value);
    else if (key == "max_pairs") cfg.max_pairs = parse_int(key, value);
    else if (key == "w_recon_scene") cfg.weights.recon_scene = float(parse_number(key, value));
    else if (key == "w_recon_shadow") cfg.weights.recon_shadow = float(parse_number(key, value));
    else if (key == "w_recon_final") cfg.weights.recon_final = float(parse_number(key, value));
    else if (key == "w_adv_scene") cfg.weights.adv_scene = float(parse_number(key, value));
    else if (key == "w_adv_shadow") cfg.weights.adv_shadow = float(parse_number(key, value));
    else if (key == "shadow_threshold")
      cfg.weights.shadow_threshold = float(parse_number(key, value));
    else
      fail("config: unknown key '", key, "' on line ", lineno);
  }
  cfg.validate();
  return cfg;
}

TrainConfig TrainConfig::load(const std::string& path) {
  std::ifstream f(path);
  check(f.good(), "config: cannot open '", path, "'");
  std::ostringstream os;
  os << f.rdbuf();
  return parse(os.str());
}

}  // namespace relight
