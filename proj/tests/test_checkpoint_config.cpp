#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>

#include "relight/checkpoint.hpp"
#include "relight/config.hpp"
#include "relight/image_io.hpp"

using namespace relight;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
  auto dir = fs::temp_directory_path() / "relight_ckpt";
  fs::create_directories(dir);
  return dir / name;
}

ArchConfig small_arch() {
  ArchConfig cfg;
  cfg.base_channels = 4;
  cfg.resolution = 16;
  return cfg;
}

}  // namespace

TEST_CASE("checkpoint encode/decode round trip preserves everything") {
  auto model = ModelBundle::build(small_arch(), 3);
  const auto tensors = snapshot_generator(model);
  const auto bytes = encode_checkpoint(model.config, tensors);

  // leading magic bytes are fixed
  CHECK(bytes[0] == 'M');
  CHECK(bytes[1] == 'C');
  CHECK(bytes[2] == 'N');
  CHECK(bytes[3] == 'W');

  const auto data = decode_checkpoint(bytes);
  CHECK(data.config == model.config);
  REQUIRE(data.tensors.size() == tensors.size());
  for (size_t i = 0; i < tensors.size(); ++i) {
    CHECK(data.tensors[i].first == tensors[i].first);
    CHECK(data.tensors[i].second.shape() == tensors[i].second.shape());
    CHECK(data.tensors[i].second.data() == tensors[i].second.data());
  }
}

TEST_CASE("checkpoint save/load/save is byte-identical") {
  auto model = ModelBundle::build(small_arch(), 4);
  const auto p1 = temp_path("a.ckpt").string();
  const auto p2 = temp_path("b.ckpt").string();
  save_checkpoint(p1, model.config, snapshot_generator(model));
  const auto loaded = load_checkpoint(p1);
  save_checkpoint(p2, loaded.config, loaded.tensors);
  CHECK(read_file(p1) == read_file(p2));
}

TEST_CASE("checkpoint corruption and truncation are rejected") {
  auto model = ModelBundle::build(small_arch(), 5);
  auto bytes = encode_checkpoint(model.config, snapshot_generator(model));

  auto truncated = bytes;
  truncated.resize(truncated.size() - 10);
  CHECK_THROWS_WITH_AS(decode_checkpoint(truncated), doctest::Contains("CRC"), Error);

  auto flipped = bytes;
  flipped[100] ^= 0x40;
  CHECK_THROWS_WITH_AS(decode_checkpoint(flipped), doctest::Contains("CRC"), Error);

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  // CRC still covers the magic, so recompute it to reach the magic check
  const uint32_t crc = crc32(bad_magic.data(), bad_magic.size() - 4);
  for (int i = 0; i < 4; ++i) bad_magic[bad_magic.size() - 4 + i] = uint8_t(crc >> (8 * i));
  CHECK_THROWS_WITH_AS(decode_checkpoint(bad_magic), doctest::Contains("magic"), Error);
}

TEST_CASE("restore_generator validates names and shapes") {
  auto model = ModelBundle::build(small_arch(), 6);
  auto data = decode_checkpoint(encode_checkpoint(model.config, snapshot_generator(model)));

  auto fresh = ModelBundle::build(small_arch(), 7);
  restore_generator(fresh, data);
  for (size_t i = 0; i < fresh.gen.items().size(); ++i)
    CHECK(fresh.gen.items()[i].second.data() == model.gen.items()[i].second.data());

  // missing parameter
  auto short_data = data;
  short_data.tensors.pop_back();
  CHECK_THROWS_WITH_AS(restore_generator(fresh, short_data), doctest::Contains("missing"),
                       Error);

  // architecture mismatch
  auto other_arch = small_arch();
  other_arch.base_channels = 8;
  auto other = ModelBundle::build(other_arch, 8);
  CHECK_THROWS_WITH_AS(restore_generator(other, data), doctest::Contains("architecture"), Error);
}

TEST_CASE("train config serialize/parse round trip is lossless") {
  TrainConfig cfg;
  cfg.steps = 123;
  cfg.lr = 3.5e-4;
  cfg.seed = 99;
  cfg.resize_factor = 1.0;
  cfg.resolution = 32;
  cfg.weights.adv_scene = 0.02f;
  const auto text = cfg.serialize();
  const auto back = TrainConfig::parse(text);
  CHECK(back.serialize() == text);
  CHECK(back.steps == 123);
  CHECK(back.lr == doctest::Approx(3.5e-4).epsilon(1e-12));
  CHECK(back.seed == 99);
}

TEST_CASE("train config parser handles comments and rejects junk") {
  const auto cfg = TrainConfig::parse(
      "# comment line\n"
      "steps=10\n"
      "  resolution=32   # trailing comment\n"
      "resize_factor=1\n");
  CHECK(cfg.steps == 10);
  CHECK(cfg.resolution == 32);

  CHECK_THROWS_WITH_AS(TrainConfig::parse("bogus_key=1\n"), doctest::Contains("unknown key"),
                       Error);
  CHECK_THROWS_WITH_AS(TrainConfig::parse("steps=ten\n"), doctest::Contains("cannot parse"),
                       Error);
  CHECK_THROWS_WITH_AS(TrainConfig::parse("steps=0\n"), doctest::Contains("positive"), Error);
  CHECK_THROWS_WITH_AS(TrainConfig::parse("resize_factor=0.3\n"),
                       doctest::Contains("resize_factor"), Error);
}

TEST_CASE("default config is the desk preset") {
  TrainConfig cfg;
  CHECK(cfg.base_channels == 8);
  CHECK(cfg.resolution == 64);
  CHECK(cfg.batch_size == 2);
  CHECK(cfg.lr == doctest::Approx(2e-4));
  CHECK(cfg.beta1 == doctest::Approx(0.5));
  CHECK(cfg.beta2 == doctest::Approx(0.999));
  CHECK(cfg.epsilon == doctest::Approx(1e-8));
  cfg.validate();
}
