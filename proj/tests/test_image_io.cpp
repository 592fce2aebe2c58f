#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "relight/image_io.hpp"
#include "relight/rng.hpp"

using namespace relight;

namespace {

std::filesystem::path temp_dir() {
  auto dir = std::filesystem::temp_directory_path() / "relight_io_test";
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("crc32 known vectors") {
  // standard check value for "123456789"
  const char* s = "123456789";
  CHECK(crc32(reinterpret_cast<const uint8_t*>(s), 9) == 0xcbf43926u);
  CHECK(crc32(nullptr, 0) == 0u);
}

TEST_CASE("quantization rule") {
  auto t = Tensor::from_data({1, 3, 1, 1}, {1.0f, 0.0f, 1.2f});
  auto img = quantize(t);
  CHECK(img.rgb[0] == 255);
  CHECK(img.rgb[1] == 0);
  CHECK(img.rgb[2] == 255);  // clamped

  auto mid = Tensor::from_data({1, 3, 1, 1}, {0.5f, -0.25f, 0.25f});
  auto q = quantize(mid);
  CHECK(q.rgb[0] == 128);  // round(127.5)
  CHECK(q.rgb[1] == 0);
  CHECK(q.rgb[2] == 64);
}

TEST_CASE("png round trip is exact for quantized images") {
  Rng rng(1);
  ImageU8 img;
  img.width = 23;
  img.height = 17;
  img.rgb.resize(size_t(23) * 17 * 3);
  for (auto& v : img.rgb) v = uint8_t(rng.next_u64() & 0xff);
  const auto bytes = encode_png(img);
  const auto back = decode_png(bytes);
  CHECK(back.width == img.width);
  CHECK(back.height == img.height);
  CHECK(back.rgb == img.rgb);
}

TEST_CASE("png encoding is deterministic") {
  Rng rng(2);
  ImageU8 img;
  img.width = img.height = 16;
  img.rgb.resize(16 * 16 * 3);
  for (auto& v : img.rgb) v = uint8_t(rng.next_u64() & 0xff);
  CHECK(encode_png(img) == encode_png(img));
}

TEST_CASE("png rejects corruption") {
  ImageU8 img;
  img.width = img.height = 8;
  img.rgb.assign(8 * 8 * 3, 100);
  auto bytes = encode_png(img);

  auto bad_sig = bytes;
  bad_sig[0] ^= 0xff;
  CHECK_THROWS_WITH_AS(decode_png(bad_sig), doctest::Contains("signature"), Error);

  auto bad_crc = bytes;
  bad_crc[bad_crc.size() / 2] ^= 0xff;
  CHECK_THROWS_AS(decode_png(bad_crc), Error);

  auto truncated = bytes;
  truncated.resize(truncated.size() / 2);
  CHECK_THROWS_AS(decode_png(truncated), Error);
}

TEST_CASE("png rejects non-RGB color types") {
  // grayscale 1x1, 8-bit: signature + IHDR with color type 0
  ImageU8 img;
  img.width = img.height = 4;
  img.rgb.assign(4 * 4 * 3, 7);
  auto bytes = encode_png(img);
  // flip the color type byte inside IHDR (offset: 8 sig + 8 hdr + 9) and fix the CRC
  bytes[8 + 8 + 9] = 0;
  const uint32_t fixed = crc32(bytes.data() + 8 + 4, 4 + 13);
  bytes[8 + 8 + 13 + 0] = uint8_t(fixed >> 24);
  bytes[8 + 8 + 13 + 1] = uint8_t(fixed >> 16);
  bytes[8 + 8 + 13 + 2] = uint8_t(fixed >> 8);
  bytes[8 + 8 + 13 + 3] = uint8_t(fixed);
  CHECK_THROWS_WITH_AS(decode_png(bytes), doctest::Contains("RGB"), Error);
}

TEST_CASE("decoder handles stored-deflate streams and the up filter") {
  // Hand-built PNG: 3x2 RGB, first row unfiltered, second row filter type 2
  // (up), wrapped in a raw stored-block zlib stream. Exercises the decoder
  // against bytes our encoder never produces.
  ImageU8 reference;
  reference.width = 3;
  reference.height = 2;
  reference.rgb = {10, 20, 30, 40, 50, 60, 70, 80, 90,
                   15, 25, 35, 45, 55, 65, 75, 85, 95};

  std::vector<uint8_t> raw;
  raw.push_back(0);  // filter: none
  for (int i = 0; i < 9; ++i) raw.push_back(reference.rgb[i]);
  raw.push_back(2);  // filter: up
  for (int i = 0; i < 9; ++i) raw.push_back(uint8_t(reference.rgb[9 + i] - reference.rgb[i]));

  std::vector<uint8_t> idat{0x78, 0x01};  // zlib header
  idat.push_back(0x01);                   // final stored block
  idat.push_back(uint8_t(raw.size()));
  idat.push_back(uint8_t(raw.size() >> 8));
  idat.push_back(uint8_t(~raw.size()));
  idat.push_back(uint8_t(~(raw.size() >> 8)));
  idat.insert(idat.end(), raw.begin(), raw.end());
  uint32_t a = 1, b = 0;
  for (uint8_t v : raw) {
    a = (a + v) % 65521;
    b = (b + a) % 65521;
  }
  const uint32_t adler = (b << 16) | a;
  for (int shift = 24; shift >= 0; shift -= 8) idat.push_back(uint8_t(adler >> shift));

  std::vector<uint8_t> file{0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  auto put32 = [&file](uint32_t v) {
    for (int shift = 24; shift >= 0; shift -= 8) file.push_back(uint8_t(v >> shift));
  };
  auto chunk = [&](const char* type, const std::vector<uint8_t>& payload) {
    put32(uint32_t(payload.size()));
    const size_t start = file.size();
    file.insert(file.end(), type, type + 4);
    file.insert(file.end(), payload.begin(), payload.end());
    put32(crc32(file.data() + start, file.size() - start));
  };
  std::vector<uint8_t> ihdr;
  for (uint32_t v : {3u, 2u})
    for (int shift = 24; shift >= 0; shift -= 8) ihdr.push_back(uint8_t(v >> shift));
  ihdr.insert(ihdr.end(), {8, 2, 0, 0, 0});
  chunk("IHDR", ihdr);
  chunk("IDAT", idat);
  chunk("IEND", {});

  const auto decoded = decode_png(file);
  CHECK(decoded.width == 3);
  CHECK(decoded.height == 2);
  CHECK(decoded.rgb == reference.rgb);
}

TEST_CASE("tensor png file round trip and dequantize") {
  Rng rng(3);
  std::vector<float> d(3 * 8 * 8);
  for (auto& v : d) v = float(rng.uniform());
  auto img = Tensor::from_data({1, 3, 8, 8}, std::move(d));
  const auto path = (temp_dir() / "round.png").string();
  write_png(path, img);
  auto back = read_png(path);
  REQUIRE(back.shape() == img.shape());
  // values survive up to the 8-bit quantization grid, exactly
  for (int64_t i = 0; i < img.numel(); ++i) {
    const float q = float(std::lround(std::clamp(img.ptr()[i], 0.0f, 1.0f) * 255.0f)) / 255.0f;
    CHECK(back.ptr()[i] == doctest::Approx(q).epsilon(1e-9));
  }
  // a second write-read cycle is bit-stable
  write_png(path, back);
  auto again = read_png(path);
  for (int64_t i = 0; i < back.numel(); ++i) CHECK(again.ptr()[i] == back.ptr()[i]);
  std::filesystem::remove(path);
}

TEST_CASE("downsample box average") {
  auto img = Tensor::from_data({1, 1, 2, 2}, {1.0f, 2.0f, 3.0f, 4.0f});
  auto half = downsample(img, 2);
  CHECK(half.shape() == Shape{1, 1, 1, 1});
  CHECK(half.ptr()[0] == doctest::Approx(2.5));
  CHECK_THROWS_AS(downsample(img, 3), Error);
  auto same = downsample(img, 1);
  CHECK(same.ptr()[1] == 2.0f);
}

TEST_CASE("missing file produces a diagnostic with the path") {
  CHECK_THROWS_WITH_AS(read_png("/nonexistent/path/img.png"),
                       doctest::Contains("/nonexistent/path/img.png"), Error);
}
