#include "relight/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "relight/image_io.hpp"
#include "relight/rng.hpp"

namespace relight {

namespace fs = std::filesystem;

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kAmbient = 0.25;
constexpr double kElevationDeg = 35.0;

// Image coordinates: +x east, +y south. The azimuth vector points from the
// surface toward the light.
std::array<double, 2> azimuth(Direction d) {
  const double s = std::sqrt(0.5);
  switch (d) {
    case Direction::N: return {0, -1};
    case Direction::NE: return {s, -s};
    case Direction::E: return {1, 0};
    case Direction::SE: return {s, s};
    case Direction::S: return {0, 1};
    case Direction::SW: return {-s, s};
    case Direction::W: return {-1, 0};
    case Direction::NW: return {-s, -s};
  }
  return {1, 0};
}

double height_at(const SceneSpec& spec, double x, double y) {
  double h = 0.0;
  for (const auto& o : spec.objects) {
    if (o.is_box) {
      if (std::abs(x - o.cx) <= o.half && std::abs(y - o.cy) <= o.half) h = std::max(h, o.height);
    } else {
      const double dx = x - o.cx, dy = y - o.cy;
      if (dx * dx + dy * dy <= o.half * o.half) h = std::max(h, o.height);
    }
  }
  return h;
}

const SceneObject* object_at(const SceneSpec& spec, double x, double y) {
  const SceneObject* hit = nullptr;
  double best = -1.0;
  for (const auto& o : spec.objects) {
    bool inside;
    if (o.is_box) {
      inside = std::abs(x - o.cx) <= o.half && std::abs(y - o.cy) <= o.half;
    } else {
      const double dx = x - o.cx, dy = y - o.cy;
      inside = dx * dx + dy * dy <= o.half * o.half;
    }
    if (inside && o.height > best) {
      best = o.height;
      hit = &o;
    }
  }
  return hit;
}

// Unit surface normal from central differences of the height field.
std::array<double, 3> normal_at(const SceneSpec& spec, int x, int y) {
  const double gx = (height_at(spec, x + 1, y) - height_at(spec, x - 1, y)) * 0.5;
  const double gy = (height_at(spec, x, y + 1) - height_at(spec, x, y - 1)) * 0.5;
  const double inv = 1.0 / std::sqrt(gx * gx + gy * gy + 1.0);
  return {-gx * inv, -gy * inv, inv};
}

bool occluded(const SceneSpec& spec, int x, int y, const std::array<double, 2>& az,
              double tan_elev) {
  const double h0 = height_at(spec, x, y);
  const double step = 0.5;
  const double max_dist = spec.resolution * 1.5;
  for (double t = step; t < max_dist; t += step) {
    const double px = x + az[0] * t;
    const double py = y + az[1] * t;
    if (px < 0 || py < 0 || px > spec.resolution - 1 || py > spec.resolution - 1) break;
    const double ray_z = h0 + tan_elev * t;
    if (height_at(spec, px, py) > ray_z) return true;
  }
  return false;
}

double diffuse_term(const SceneSpec& spec, int x, int y, Direction d) {
  const auto az = azimuth(d);
  const double elev = kElevationDeg * kPi / 180.0;
  const auto n = normal_at(spec, x, y);
  const std::array<double, 3> l{az[0] * std::cos(elev), az[1] * std::cos(elev), std::sin(elev)};
  const double ndotl = n[0] * l[0] + n[1] * l[1] + n[2] * l[2];
  return std::max(0.0, ndotl);
}

const std::array<double, 3>& albedo_at(const SceneSpec& spec, int x, int y) {
  const SceneObject* obj = object_at(spec, x, y);
  return obj ? obj->albedo : spec.ground_albedo;
}

std::string setting_filename(const LightSetting& s) {
  std::ostringstream os;
  os << direction_name(s.direction) << "_" << s.kelvin << ".png";
  return os.str();
}

}  // namespace

const char* direction_name(Direction d) {
  switch (d) {
    case Direction::N: return "N";
    case Direction::NE: return "NE";
    case Direction::E: return "E";
    case Direction::SE: return "SE";
    case Direction::S: return "S";
    case Direction::SW: return "SW";
    case Direction::W: return "W";
    case Direction::NW: return "NW";
  }
  return "E";
}

Direction direction_from_name(const std::string& name) {
  for (Direction d : kDirections)
    if (name == direction_name(d)) return d;
  fail("unknown direction '", name, "'");
}

Direction opposite(Direction d) {
  switch (d) {
    case Direction::N: return Direction::S;
    case Direction::NE: return Direction::SW;
    case Direction::E: return Direction::W;
    case Direction::SE: return Direction::NW;
    case Direction::S: return Direction::N;
    case Direction::SW: return Direction::NE;
    case Direction::W: return Direction::E;
    case Direction::NW: return Direction::SE;
  }
  return Direction::W;
}

std::array<double, 3> temperature_gain(int kelvin) {
  switch (kelvin) {
    case 2500: return {1.00, 0.65, 0.36};
    case 3500: return {1.00, 0.79, 0.57};
    case 4500: return {1.00, 0.89, 0.77};
    case 5500: return {1.00, 0.97, 0.94};
    case 6500: return {0.95, 0.97, 1.00};
  }
  fail("unsupported color temperature ", kelvin, " K");
}

SceneSpec SceneSpec::generate(uint64_t seed, int resolution) {
  check(resolution >= 32 && resolution <= 256 && (resolution & (resolution - 1)) == 0,
        "scene: resolution must be a power of two in [32, 256], got ", resolution);
  SceneSpec spec;
  spec.seed = seed;
  spec.resolution = resolution;
  Rng rng(seed);

  // Albedo stays below 0.8 so albedo * (ambient + diffuse) never clips and
  // the temperature-gain ordering survives quantization.
  auto sample_albedo = [&rng] {
    return std::array<double, 3>{rng.uniform(0.15, 0.78), rng.uniform(0.15, 0.78),
                                 rng.uniform(0.15, 0.78)};
  };
  spec.ground_albedo = sample_albedo();

  const double res = resolution;
  const double tan_elev = std::tan(kElevationDeg * kPi / 180.0);
  const int desired = rng.uniform_int(2, 6);

  // Keep each object's footprint plus full shadow sweep inside the border
  // and disjoint from every other zone; shrink on repeated failure. The
  // zones guarantee no shadow ever lands on another object or gets clipped,
  // which makes the opposite-direction mirror property exact up to raster.
  for (int i = 0; i < desired; ++i) {
    double scale = 1.0;
    bool placed = false;
    for (int round = 0; round < 3 && !placed; ++round, scale *= 0.6) {
      for (int attempt = 0; attempt < 120 && !placed; ++attempt) {
        SceneObject o;
        o.is_box = rng.uniform() < 0.5;
        o.half = rng.uniform(res / 24.0, res / 10.0) * scale;
        o.height = rng.uniform(res / 14.0, res / 7.0) * scale;
        o.albedo = sample_albedo();
        const double reach = o.half * (o.is_box ? std::sqrt(2.0) : 1.0) + o.height / tan_elev;
        const double margin = reach + 2.0;
        if (2.0 * margin >= res) continue;
        o.cx = rng.uniform(margin, res - margin);
        o.cy = rng.uniform(margin, res - margin);
        bool clear = true;
        for (const auto& other : spec.objects) {
          const double other_reach =
              other.half * (other.is_box ? std::sqrt(2.0) : 1.0) + other.height / tan_elev;
          const double dx = o.cx - other.cx, dy = o.cy - other.cy;
          if (std::sqrt(dx * dx + dy * dy) < reach + other_reach + 2.0) {
            clear = false;
            break;
          }
        }
        if (clear) {
          spec.objects.push_back(o);
          placed = true;
        }
      }
    }
  }
  check(spec.objects.size() >= 2, "scene: object placement failed for seed ", seed);
  return spec;
}

Tensor render_scene(const SceneSpec& spec, const LightSetting& light) {
  const int res = spec.resolution;
  const auto gain = temperature_gain(light.kelvin);
  const auto az = azimuth(light.direction);
  const double tan_elev = std::tan(kElevationDeg * kPi / 180.0);
  auto img = Tensor::zeros({1, 3, res, res});
  const int64_t hw = int64_t(res) * res;
  for (int y = 0; y < res; ++y)
    for (int x = 0; x < res; ++x) {
      const bool shadowed = occluded(spec, x, y, az, tan_elev);
      const double diffuse = shadowed ? 0.0 : diffuse_term(spec, x, y, light.direction);
      const double lighting = kAmbient + diffuse;
      const auto& albedo = albedo_at(spec, x, y);
      for (int c = 0; c < 3; ++c) {
        const double v = albedo[c] * lighting * gain[c];
        img.ptr()[c * hw + y * res + x] = float(std::clamp(v, 0.0, 1.0));
      }
    }
  return img;
}

Tensor render_shadow_free(const SceneSpec& spec) {
  const int res = spec.resolution;
  const auto gain = temperature_gain(4500);
  auto img = Tensor::zeros({1, 3, res, res});
  const int64_t hw = int64_t(res) * res;
  for (int y = 0; y < res; ++y)
    for (int x = 0; x < res; ++x) {
      double diffuse = 0.0;
      for (Direction d : kDirections) diffuse += diffuse_term(spec, x, y, d);
      diffuse /= double(kDirections.size());
      const double lighting = kAmbient + diffuse;
      const auto& albedo = albedo_at(spec, x, y);
      for (int c = 0; c < 3; ++c) {
        const double v = albedo[c] * lighting * gain[c];
        img.ptr()[c * hw + y * res + x] = float(std::clamp(v, 0.0, 1.0));
      }
    }
  return img;
}

std::vector<uint8_t> shadow_mask(const SceneSpec& spec, Direction direction) {
  const int res = spec.resolution;
  const auto az = azimuth(direction);
  const double tan_elev = std::tan(kElevationDeg * kPi / 180.0);
  std::vector<uint8_t> mask(size_t(res) * res, 0);
  for (int y = 0; y < res; ++y)
    for (int x = 0; x < res; ++x)
      mask[size_t(y) * res + x] = occluded(spec, x, y, az, tan_elev) ? 1 : 0;
  return mask;
}

std::string manifest_path(const std::string& corpus_dir) {
  return (fs::path(corpus_dir) / "manifest.tsv").string();
}

CorpusSummary build_corpus(const CorpusOptions& options) {
  // Validate everything before touching the filesystem.
  check(options.scenes >= 1, "corpus: need at least one scene, got ", options.scenes);
  check(options.scenes < 1000000, "corpus: scene count too large for the split seed ranges");
  check(options.resolution >= 32 && options.resolution <= 256 &&
            (options.resolution & (options.resolution - 1)) == 0,
        "corpus: resolution must be a power of two in [32, 256], got ", options.resolution);
  std::error_code ec;
  fs::create_directories(options.out_dir, ec);
  check(!ec, "corpus: cannot create output directory '", options.out_dir, "': ", ec.message());

  // Disjoint seed ranges: validation scenes start one million seeds up.
  const uint64_t base = options.seed + (options.val_split ? 1000000ull : 0ull);

  CorpusSummary summary;
  std::ostringstream manifest;
  for (int i = 0; i < options.scenes; ++i) {
    const uint64_t scene_seed = base + uint64_t(i);
    const auto spec = SceneSpec::generate(scene_seed, options.resolution);
    const fs::path scene_dir = fs::path(options.out_dir) / std::to_string(scene_seed);
    fs::create_directories(scene_dir, ec);
    check(!ec, "corpus: cannot create '", scene_dir.string(), "': ", ec.message());

    for (Direction d : kDirections)
      for (int kelvin : kTemperatures) {
        const LightSetting setting{d, kelvin};
        write_png((scene_dir / setting_filename(setting)).string(),
                  render_scene(spec, setting));
        ++summary.lit_images;
      }
    write_png((scene_dir / "shadow_free.png").string(), render_shadow_free(spec));
    ++summary.shadow_free_images;

    const std::string target_rel =
        std::to_string(scene_seed) + "/" + setting_filename(kTargetSetting);
    const std::string shadow_free_rel = std::to_string(scene_seed) + "/shadow_free.png";
    for (Direction d : kDirections)
      for (int kelvin : kTemperatures) {
        const LightSetting setting{d, kelvin};
        if (setting == kTargetSetting) continue;  // identity pairs excluded
        manifest << scene_seed << '\t' << std::to_string(scene_seed) + "/" +
                                              setting_filename(setting)
                 << '\t' << target_rel << '\t' << shadow_free_rel << '\t'
                 << direction_name(d) << '\t' << kelvin << '\n';
        ++summary.pairs;
      }
    ++summary.scenes;
  }

  // Manifest is written last, after every image landed.
  std::ofstream mf(manifest_path(options.out_dir), std::ios::binary | std::ios::trunc);
  check(mf.good(), "corpus: cannot write manifest in '", options.out_dir, "'");
  mf << manifest.str();
  check(mf.good(), "corpus: manifest write failed");
  return summary;
}

std::vector<ManifestRow> load_manifest(const std::string& corpus_dir) {
  std::ifstream f(manifest_path(corpus_dir));
  check(f.good(), "corpus: cannot open manifest '", manifest_path(corpus_dir), "'");
  std::vector<ManifestRow> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    ManifestRow row;
    std::string seed_str, dir_str, kelvin_str;
    if (!std::getline(ls, seed_str, '\t') || !std::getline(ls, row.input_path, '\t') ||
        !std::getline(ls, row.target_path, '\t') ||
        !std::getline(ls, row.shadow_free_path, '\t') || !std::getline(ls, dir_str, '\t') ||
        !std::getline(ls, kelvin_str))
      fail("corpus: malformed manifest line ", lineno);
    row.scene_seed = std::stoull(seed_str);
    row.src_direction = direction_from_name(dir_str);
    row.src_kelvin = std::stoi(kelvin_str);
    rows.push_back(std::move(row));
  }
  check(!rows.empty(), "corpus: manifest is empty");
  return rows;
}

}  // namespace relight
