#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "relight/tensor.hpp"

namespace relight {

// CRC-32 (IEEE, reflected); shared by the PNG container and the checkpoint
// trailer.
uint32_t crc32(const uint8_t* data, size_t len, uint32_t seed = 0);

struct ImageU8 {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> rgb;  // 3 bytes per pixel, row-major
};

// 8-bit RGB PNG, color type 2, no interlacing.
std::vector<uint8_t> encode_png(const ImageU8& image);
ImageU8 decode_png(const std::vector<uint8_t>& bytes);

// Quantization rule: round(clamp(v, 0, 1) * 255).
ImageU8 quantize(const Tensor& image01);
Tensor dequantize(const ImageU8& image);

// File-level helpers over (1, 3, h, w) tensors in [0, 1].
void write_png(const std::string& path, const Tensor& image01);
Tensor read_png(const std::string& path);

// Box average by an integer factor; used by the training-time resize.
Tensor downsample(const Tensor& image, int factor);

std::vector<uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, const std::vector<uint8_t>& bytes);

}  // namespace relight
