#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "relight/tensor.hpp"

namespace relight {

enum class Direction { N, NE, E, SE, S, SW, W, NW };

inline constexpr std::array<Direction, 8> kDirections{
    Direction::N, Direction::NE, Direction::E, Direction::SE,
    Direction::S, Direction::SW, Direction::W, Direction::NW};

inline constexpr std::array<int, 5> kTemperatures{2500, 3500, 4500, 5500, 6500};

const char* direction_name(Direction d);
Direction direction_from_name(const std::string& name);
Direction opposite(Direction d);

struct LightSetting {
  Direction direction = Direction::E;
  int kelvin = 4500;

  bool operator==(const LightSetting&) const = default;
};

// The fixed transfer target: east light at 4500 K.
inline constexpr LightSetting kTargetSetting{Direction::E, 4500};

// RGB gains approximating blackbody tint per color temperature. Only the
// blue/red monotonicity is contractual; the exact values are frozen here.
std::array<double, 3> temperature_gain(int kelvin);

struct SceneObject {
  bool is_box = false;  // disk otherwise
  double cx = 0, cy = 0;    // center, pixels
  double half = 0;          // radius / half-extent, pixels
  double height = 0;        // pixels
  std::array<double, 3> albedo{};
};

// Procedural height-field scene, fully determined by its seed. Objects are
// placed so no shadow can reach another object or the image border, which
// keeps every shadow mask point-symmetric under opposite light directions.
struct SceneSpec {
  uint64_t seed = 0;
  int resolution = 0;
  std::array<double, 3> ground_albedo{};
  std::vector<SceneObject> objects;

  static SceneSpec generate(uint64_t seed, int resolution);
};

// Lambertian height-field render: ambient 0.25 plus a diffuse term under a
// 35-degree-elevation directional light; ray-marched hard shadows; per-pixel
// color = albedo * light * temperature gain, in [0,1].
Tensor render_scene(const SceneSpec& spec, const LightSetting& light);

// Ambient plus direction-averaged diffuse, no shadows, neutral 4500 K gain.
Tensor render_shadow_free(const SceneSpec& spec);

// 1 where the directional term is occluded, per pixel.
std::vector<uint8_t> shadow_mask(const SceneSpec& spec, Direction direction);

struct CorpusOptions {
  int scenes = 0;
  int resolution = 0;
  uint64_t seed = 0;
  std::string out_dir;
  bool val_split = false;  // train and val splits draw from disjoint seed ranges
};

struct CorpusSummary {
  int scenes = 0;
  int lit_images = 0;
  int shadow_free_images = 0;
  int pairs = 0;
};

struct ManifestRow {
  uint64_t scene_seed = 0;
  std::string input_path;
  std::string target_path;
  std::string shadow_free_path;
  Direction src_direction = Direction::N;
  int src_kelvin = 0;
};

// Renders scenes/<seed>/<direction>_<kelvin>.png plus shadow_free.png per
// scene and writes manifest.tsv last. Pairs map every non-target setting to
// the fixed east/4500K target.
CorpusSummary build_corpus(const CorpusOptions& options);

std::vector<ManifestRow> load_manifest(const std::string& corpus_dir);
std::string manifest_path(const std::string& corpus_dir);

}  // namespace relight
