#include "guild/nn/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <unordered_map>

#include "guild/errors.hpp"
#include "guild/nn/rng.hpp"

namespace guild::nn {

namespace {

constexpr char kMagic[4] = {'G', 'L', 'D', 'C'};
constexpr uint32_t kVersion = 1;

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

void put_str(std::string& out, const std::string& s) {
  put_u32(out, uint32_t(s.size()));
  out.append(s);
}

void put_f32(std::string& out, float f) {
  uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}

struct Reader {
  std::string data;
  size_t pos = 0;
  const std::string& path;

  explicit Reader(const std::string& p) : path(p) {}

  void need(size_t n) {
    if (pos + n > data.size())
      throw ConfigError("checkpoint " + path + ": truncated file");
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(uint8_t(data[pos + size_t(i)])) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    uint64_t lo = u32();
    uint64_t hi = u32();
    return lo | (hi << 32);
  }
  std::string str() {
    uint32_t n = u32();
    need(n);
    std::string s = data.substr(pos, n);
    pos += n;
    return s;
  }
  float f32() {
    uint32_t bits = u32();
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
  }
  uint8_t u8() {
    need(1);
    return uint8_t(data[pos++]);
  }
};

Reader open_and_check(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("checkpoint " + path + ": cannot open");
  Reader r(path);
  r.data.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  r.need(4);
  if (std::memcmp(r.data.data(), kMagic, 4) != 0)
    throw ConfigError("checkpoint " + path + ": bad magic");
  r.pos = 4;
  uint32_t version = r.u32();
  if (version != kVersion)
    throw ConfigError("checkpoint " + path + ": unsupported version " +
                      std::to_string(version));
  return r;
}

CheckpointMeta read_meta(Reader& r) {
  CheckpointMeta meta;
  meta.config_hash = r.u64();
  meta.spec_hash = r.u64();
  meta.role = r.str();
  uint32_t nd = r.u32();
  for (uint32_t i = 0; i < nd; ++i) {
    std::string key = r.str();
    uint32_t value = r.u32();
    meta.dims.emplace_back(std::move(key), value);
  }
  return meta;
}

}  // namespace

uint32_t CheckpointMeta::dim(const std::string& key) const {
  for (const auto& [k, v] : dims)
    if (k == key) return v;
  throw ConfigError("checkpoint meta: missing dimension '" + key + "'");
}

void save_checkpoint(const std::string& path, const CheckpointMeta& meta,
                     const std::vector<const ParamTensor*>& params) {
  std::string out;
  out.append(kMagic, 4);
  put_u32(out, kVersion);
  put_u64(out, meta.config_hash);
  put_u64(out, meta.spec_hash);
  put_str(out, meta.role);
  put_u32(out, uint32_t(meta.dims.size()));
  for (const auto& [k, v] : meta.dims) {
    put_str(out, k);
    put_u32(out, v);
  }
  put_u32(out, uint32_t(params.size()));
  for (const ParamTensor* p : params) {
    put_str(out, p->name);
    out.push_back(p->frozen ? char(1) : char(0));
    put_u32(out, uint32_t(p->value.shape.size()));
    for (int d : p->value.shape) put_u32(out, uint32_t(d));
    for (float f : p->value.values) put_f32(out, f);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ConfigError("checkpoint " + path + ": cannot write");
  f.write(out.data(), std::streamsize(out.size()));
  if (!f) throw ConfigError("checkpoint " + path + ": write failed");
}

CheckpointMeta peek_checkpoint(const std::string& path) {
  Reader r = open_and_check(path);
  return read_meta(r);
}

CheckpointMeta load_checkpoint(const std::string& path,
                               const std::vector<ParamTensor*>& params) {
  Reader r = open_and_check(path);
  CheckpointMeta meta = read_meta(r);

  std::unordered_map<std::string, ParamTensor*> by_name;
  for (ParamTensor* p : params) by_name.emplace(p->name, p);
  uint32_t np = r.u32();
  if (np != params.size())
    throw ConfigError("checkpoint " + path + ": parameter count mismatch");
  for (uint32_t i = 0; i < np; ++i) {
    std::string name = r.str();
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw ConfigError("checkpoint " + path + ": unexpected parameter '" + name + "'");
    ParamTensor* p = it->second;
    p->frozen = r.u8() != 0;
    uint32_t ndim = r.u32();
    std::vector<int> shape(ndim);
    for (uint32_t d = 0; d < ndim; ++d) shape[d] = int(r.u32());
    if (shape != p->value.shape)
      throw ConfigError("checkpoint " + path + ": shape mismatch for '" + name + "'");
    for (float& v : p->value.values) v = r.f32();
    p->zero_grad();
  }
  return meta;
}

uint64_t hash_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("hash_file: cannot open " + path);
  std::string data(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>{});
  return fnv1a(data);
}

}  // namespace guild::nn
