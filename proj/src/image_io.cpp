#include "relight/image_io.hpp"

#include <zlib.h>

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>

namespace relight {

uint32_t crc32(const uint8_t* data, size_t len, uint32_t seed) {
  static const auto table = [] {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  uint32_t c = seed ^ 0xffffffffu;
  for (size_t i = 0; i < len; ++i) c = table[(c ^ data[i]) & 0xffu] ^ (c >> 8);
  return c ^ 0xffffffffu;
}

namespace {

void put_u32_be(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(uint8_t(v >> 24));
  out.push_back(uint8_t(v >> 16));
  out.push_back(uint8_t(v >> 8));
  out.push_back(uint8_t(v));
}

uint32_t get_u32_be(const uint8_t* p) {
  return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

void append_chunk(std::vector<uint8_t>& out, const char type[4],
                  const std::vector<uint8_t>& payload) {
  put_u32_be(out, uint32_t(payload.size()));
  const size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  put_u32_be(out, crc32(out.data() + start, out.size() - start));
}

std::vector<uint8_t> zlib_compress(const std::vector<uint8_t>& raw) {
  uLongf bound = compressBound(uLong(raw.size()));
  std::vector<uint8_t> out(bound);
  const int rc = ::compress2(out.data(), &bound, raw.data(), uLong(raw.size()), 6);
  check(rc == Z_OK, "png: deflate failed with code ", rc);
  out.resize(bound);
  return out;
}

std::vector<uint8_t> zlib_decompress(const std::vector<uint8_t>& compressed, size_t expected) {
  std::vector<uint8_t> out(expected);
  uLongf len = uLongf(expected);
  const int rc = ::uncompress(out.data(), &len, compressed.data(), uLong(compressed.size()));
  check(rc == Z_OK && len == expected, "png: corrupt compressed image data");
  return out;
}

constexpr uint8_t kSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace

std::vector<uint8_t> encode_png(const ImageU8& image) {
  check(image.width >= 1 && image.height >= 1, "png: empty image");
  check(image.rgb.size() == size_t(image.width) * image.height * 3,
        "png: pixel buffer does not match dimensions");
  std::vector<uint8_t> out(kSignature, kSignature + 8);

  std::vector<uint8_t> ihdr;
  put_u32_be(ihdr, uint32_t(image.width));
  put_u32_be(ihdr, uint32_t(image.height));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(2);  // color type: truecolor RGB
  ihdr.push_back(0);  // compression
  ihdr.push_back(0);  // filter method
  ihdr.push_back(0);  // no interlace
  append_chunk(out, "IHDR", ihdr);

  // filter byte 0 (none) per scanline
  const size_t stride = size_t(image.width) * 3;
  std::vector<uint8_t> raw;
  raw.reserve((stride + 1) * image.height);
  for (int y = 0; y < image.height; ++y) {
    raw.push_back(0);
    raw.insert(raw.end(), image.rgb.begin() + y * stride, image.rgb.begin() + (y + 1) * stride);
  }
  append_chunk(out, "IDAT", zlib_compress(raw));
  append_chunk(out, "IEND", {});
  return out;
}

ImageU8 decode_png(const std::vector<uint8_t>& bytes) {
  check(bytes.size() > 8 && std::memcmp(bytes.data(), kSignature, 8) == 0,
        "png: bad signature");
  size_t pos = 8;
  ImageU8 img;
  std::vector<uint8_t> idat;
  bool seen_ihdr = false, seen_iend = false;
  while (pos + 8 <= bytes.size()) {
    const uint32_t len = get_u32_be(bytes.data() + pos);
    check(pos + 12 + len <= bytes.size(), "png: truncated chunk");
    const char* type = reinterpret_cast<const char*>(bytes.data() + pos + 4);
    const uint8_t* payload = bytes.data() + pos + 8;
    const uint32_t stored_crc = get_u32_be(payload + len);
    check(stored_crc == crc32(bytes.data() + pos + 4, len + 4), "png: chunk CRC mismatch");
    if (std::memcmp(type, "IHDR", 4) == 0) {
      check(len == 13, "png: malformed IHDR");
      img.width = int(get_u32_be(payload));
      img.height = int(get_u32_be(payload + 4));
      check(img.width >= 1 && img.height >= 1, "png: bad dimensions");
      check(payload[8] == 8 && payload[9] == 2,
            "png: only 8-bit RGB supported, got bit depth ", int(payload[8]), " color type ",
            int(payload[9]));
      check(payload[10] == 0 && payload[11] == 0 && payload[12] == 0,
            "png: unsupported compression/filter/interlace");
      seen_ihdr = true;
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), payload, payload + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      seen_iend = true;
      break;
    }
    pos += 12 + len;
  }
  check(seen_ihdr && seen_iend && !idat.empty(), "png: missing required chunks");

  const size_t stride = size_t(img.width) * 3;
  const auto raw = zlib_decompress(idat, (stride + 1) * img.height);

  img.rgb.resize(stride * img.height);
  std::vector<uint8_t> prev(stride, 0);
  for (int y = 0; y < img.height; ++y) {
    const uint8_t filter = raw[y * (stride + 1)];
    const uint8_t* src = raw.data() + y * (stride + 1) + 1;
    uint8_t* dst = img.rgb.data() + y * stride;
    for (size_t i = 0; i < stride; ++i) {
      const int left = i >= 3 ? dst[i - 3] : 0;
      const int up = prev[i];
      const int ul = i >= 3 ? prev[i - 3] : 0;
      int v = src[i];
      switch (filter) {
        case 0: break;
        case 1: v += left; break;
        case 2: v += up; break;
        case 3: v += (left + up) / 2; break;
        case 4: v += paeth(left, up, ul); break;
        default: fail("png: unknown filter type ", int(filter));
      }
      dst[i] = uint8_t(v);
    }
    std::memcpy(prev.data(), dst, stride);
  }
  return img;
}

ImageU8 quantize(const Tensor& image01) {
  const Shape s = image01.shape();
  check(s.n == 1 && s.c == 3, "quantize: expected (1,3,h,w), got ", s.str());
  ImageU8 img;
  img.width = s.w;
  img.height = s.h;
  img.rgb.resize(size_t(s.w) * s.h * 3);
  const int64_t hw = int64_t(s.h) * s.w;
  for (int c = 0; c < 3; ++c)
    for (int64_t i = 0; i < hw; ++i) {
      float v = image01.ptr()[c * hw + i];
      v = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
      img.rgb[i * 3 + c] = uint8_t(std::lround(v * 255.0f));
    }
  return img;
}

Tensor dequantize(const ImageU8& image) {
  auto t = Tensor::zeros({1, 3, image.height, image.width});
  const int64_t hw = int64_t(image.height) * image.width;
  for (int c = 0; c < 3; ++c)
    for (int64_t i = 0; i < hw; ++i) t.ptr()[c * hw + i] = float(image.rgb[i * 3 + c]) / 255.0f;
  return t;
}

void write_png(const std::string& path, const Tensor& image01) {
  write_file(path, encode_png(quantize(image01)));
}

Tensor read_png(const std::string& path) { return dequantize(decode_png(read_file(path))); }

Tensor downsample(const Tensor& image, int factor) {
  check(factor >= 1, "downsample: factor must be >= 1, got ", factor);
  if (factor == 1) return image;
  const Shape s = image.shape();
  check(s.h % factor == 0 && s.w % factor == 0, "downsample: ", s.str(),
        " not divisible by factor ", factor);
  auto out = Tensor::zeros({s.n, s.c, s.h / factor, s.w / factor});
  const float norm = 1.0f / float(factor * factor);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h / factor; ++y)
        for (int x = 0; x < s.w / factor; ++x) {
          float acc = 0.0f;
          for (int dy = 0; dy < factor; ++dy)
            for (int dx = 0; dx < factor; ++dx)
              acc += image.at(n, c, y * factor + dy, x * factor + dx);
          out.at(n, c, y, x) = acc * norm;
        }
  return out;
}

std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  check(f.good(), "io: cannot open '", path, "' for reading");
  f.seekg(0, std::ios::end);
  const auto size = f.tellg();
  f.seekg(0);
  std::vector<uint8_t> bytes(static_cast<size_t>(size));
  f.read(reinterpret_cast<char*>(bytes.data()), size);
  check(f.good(), "io: failed reading '", path, "'");
  return bytes;
}

void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  check(f.good(), "io: cannot open '", path, "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  check(f.good(), "io: failed writing '", path, "'");
}

}  // namespace relight
