#include "relight/checkpoint.hpp"

#include <cstring>
#include <set>

#include "relight/image_io.hpp"

namespace relight {

namespace {

constexpr char kMagic[4] = {'M', 'C', 'N', 'W'};

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(uint8_t(v));
  out.push_back(uint8_t(v >> 8));
  out.push_back(uint8_t(v >> 16));
  out.push_back(uint8_t(v >> 24));
}

void put_f32(std::vector<uint8_t>& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

struct Reader {
  const std::vector<uint8_t>& bytes;
  size_t pos = 0;

  uint32_t u32() {
    check(pos + 4 <= bytes.size(), "checkpoint: truncated file");
    uint32_t v = uint32_t(bytes[pos]) | (uint32_t(bytes[pos + 1]) << 8) |
                 (uint32_t(bytes[pos + 2]) << 16) | (uint32_t(bytes[pos + 3]) << 24);
    pos += 4;
    return v;
  }

  float f32() {
    const uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }

  std::string str(size_t len) {
    check(pos + len <= bytes.size(), "checkpoint: truncated file");
    std::string s(reinterpret_cast<const char*>(bytes.data() + pos), len);
    pos += len;
    return s;
  }
};

void put_arch(std::vector<uint8_t>& out, const ArchConfig& cfg) {
  put_u32(out, uint32_t(cfg.base_channels));
  put_u32(out, uint32_t(cfg.resolution));
  put_u32(out, uint32_t(cfg.stages));
  put_u32(out, uint32_t(cfg.res_blocks));
  put_u32(out, uint32_t(cfg.rerender_branch_channels));
  put_u32(out, uint32_t(cfg.recal_reduction));
  put_u32(out, uint32_t(cfg.ms_branch_channels));
  put_u32(out, uint32_t(cfg.ms_fused_channels));
  uint32_t flags = 0;
  if (cfg.calibration) flags |= 1;
  if (cfg.multiscale) flags |= 2;
  if (cfg.norm == Norm::instance) flags |= 4;
  put_u32(out, flags);
  put_u32(out, uint32_t(cfg.rerender_kernels.size()));
  for (int k : cfg.rerender_kernels) put_u32(out, uint32_t(k));
}

ArchConfig read_arch(Reader& r) {
  ArchConfig cfg;
  cfg.base_channels = int(r.u32());
  cfg.resolution = int(r.u32());
  cfg.stages = int(r.u32());
  cfg.res_blocks = int(r.u32());
  cfg.rerender_branch_channels = int(r.u32());
  cfg.recal_reduction = int(r.u32());
  cfg.ms_branch_channels = int(r.u32());
  cfg.ms_fused_channels = int(r.u32());
  const uint32_t flags = r.u32();
  cfg.calibration = flags & 1;
  cfg.multiscale = flags & 2;
  cfg.norm = (flags & 4) ? Norm::instance : Norm::none;
  const uint32_t n_kernels = r.u32();
  check(n_kernels >= 1 && n_kernels <= 64, "checkpoint: implausible kernel count ", n_kernels);
  cfg.rerender_kernels.clear();
  for (uint32_t i = 0; i < n_kernels; ++i) cfg.rerender_kernels.push_back(int(r.u32()));
  cfg.validate();
  return cfg;
}

}  // namespace

const Tensor* CheckpointData::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

std::vector<uint8_t> encode_checkpoint(const ArchConfig& config, const NamedTensors& tensors) {
  std::vector<uint8_t> out(kMagic, kMagic + 4);
  put_u32(out, kCheckpointVersion);
  put_arch(out, config);
  put_u32(out, uint32_t(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put_u32(out, uint32_t(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    const Shape s = t.shape();
    put_u32(out, uint32_t(s.n));
    put_u32(out, uint32_t(s.c));
    put_u32(out, uint32_t(s.h));
    put_u32(out, uint32_t(s.w));
    for (float v : t.data()) put_f32(out, v);
  }
  put_u32(out, crc32(out.data(), out.size()));
  return out;
}

CheckpointData decode_checkpoint(const std::vector<uint8_t>& bytes) {
  check(bytes.size() >= 8, "checkpoint: file too small");
  const uint32_t stored_crc = uint32_t(bytes[bytes.size() - 4]) |
                              (uint32_t(bytes[bytes.size() - 3]) << 8) |
                              (uint32_t(bytes[bytes.size() - 2]) << 16) |
                              (uint32_t(bytes[bytes.size() - 1]) << 24);
  check(stored_crc == crc32(bytes.data(), bytes.size() - 4),
        "checkpoint: CRC mismatch (truncated or corrupt file)");
  Reader r{bytes};
  check(std::memcmp(bytes.data(), kMagic, 4) == 0, "checkpoint: bad magic");
  r.pos = 4;
  const uint32_t version = r.u32();
  check(version == kCheckpointVersion, "checkpoint: unsupported version ", version);
  CheckpointData data;
  data.config = read_arch(r);
  const uint32_t count = r.u32();
  std::set<std::string> seen;
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t name_len = r.u32();
    check(name_len >= 1 && name_len <= 4096, "checkpoint: implausible name length");
    std::string name = r.str(name_len);
    check(seen.insert(name).second, "checkpoint: duplicate tensor '", name, "'");
    Shape s;
    s.n = int(r.u32());
    s.c = int(r.u32());
    s.h = int(r.u32());
    s.w = int(r.u32());
    s.validate("checkpoint tensor");
    std::vector<float> values(s.numel());
    for (auto& v : values) v = r.f32();
    data.tensors.emplace_back(std::move(name), Tensor::from_data(s, std::move(values)));
  }
  check(r.pos == bytes.size() - 4, "checkpoint: trailing bytes before CRC");
  return data;
}

void save_checkpoint(const std::string& path, const ArchConfig& config,
                     const NamedTensors& tensors) {
  write_file(path, encode_checkpoint(config, tensors));
}

CheckpointData load_checkpoint(const std::string& path) {
  return decode_checkpoint(read_file(path));
}

NamedTensors snapshot_generator(const ModelBundle& bundle) {
  NamedTensors out;
  for (const auto& [name, t] : bundle.gen.items()) out.emplace_back(name, t.detach());
  return out;
}

void restore_generator(ModelBundle& bundle, const CheckpointData& data) {
  check(data.config == bundle.config, "checkpoint: architecture does not match this model");
  for (auto& [name, t] : bundle.gen.items()) {
    const Tensor* stored = data.find(name);
    check(stored != nullptr, "checkpoint: missing parameter '", name, "'");
    check(stored->shape() == t.shape(), "checkpoint: parameter '", name, "' has shape ",
          stored->shape().str(), ", expected ", t.shape().str());
    t.data() = stored->data();
  }
}

}  // namespace relight
