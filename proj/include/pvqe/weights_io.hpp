#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "pvqe/enrollment.hpp"
#include "pvqe/model.hpp"

namespace pvqe {

// Portable binary formats. Everything on disk is little-endian float32 with
// a trailing CRC32, composed byte by byte so the host byte order never
// leaks into files.

inline uint32_t crc32(const uint8_t* data, size_t len, uint32_t crc = 0) {
  static const auto table = [] {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  crc = ~crc;
  for (size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xFFu] ^ (crc >> 8);
  return ~crc;
}

namespace io_detail {

constexpr uint32_t kWeightVersion = 1;
constexpr uint32_t kEmbeddingVersion = 1;

struct Writer {
  std::vector<uint8_t> buf;
  void u8(uint8_t v) { buf.push_back(v); }
  void u16(uint16_t v) {
    buf.push_back(uint8_t(v));
    buf.push_back(uint8_t(v >> 8));
  }
  void u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(uint8_t(v >> (8 * i)));
  }
  void f32(float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    u32(bits);
  }
  void bytes(const void* p, size_t n) {
    const uint8_t* b = static_cast<const uint8_t*>(p);
    buf.insert(buf.end(), b, b + n);
  }
  void finish_crc() { u32(crc32(buf.data(), buf.size())); }

  void to_file(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write file: " + path);
    f.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size()));
    if (!f) throw IoError("short write: " + path);
  }
};

struct Reader {
  std::vector<uint8_t> buf;
  size_t pos = 0;

  explicit Reader(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open file: " + path);
    buf.assign((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  }

  void need(size_t n) const {
    if (pos + n > buf.size()) throw CorruptFile("file truncated");
  }
  uint8_t u8() {
    need(1);
    return buf[pos++];
  }
  uint16_t u16() {
    need(2);
    uint16_t v = uint16_t(buf[pos]) | uint16_t(uint32_t(buf[pos + 1]) << 8);
    pos += 2;
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(buf[pos + size_t(i)]) << (8 * i);
    pos += 4;
    return v;
  }
  float f32() {
    const uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string str(size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(buf.data() + pos), n);
    pos += n;
    return s;
  }

  // CRC over everything except the trailing 4 bytes.
  void check_crc(const char* what) const {
    if (buf.size() < 4) throw CorruptFile(std::string(what) + ": file too short");
    const uint32_t stored = uint32_t(buf[buf.size() - 4]) | uint32_t(buf[buf.size() - 3]) << 8 |
                            uint32_t(buf[buf.size() - 2]) << 16 |
                            uint32_t(buf[buf.size() - 1]) << 24;
    if (crc32(buf.data(), buf.size() - 4) != stored)
      throw CorruptFile(std::string(what) + ": CRC mismatch");
  }
  size_t payload_end() const { return buf.size() - 4; }
};

}  // namespace io_detail

// Weight file: "PVQE" | version | config JSON (u32 length prefix) |
// tensor count | per tensor (name u16+utf8, rank u8, dims u32..., float32
// data) | CRC32.
template <class T>
void save_weights(const Model<T>& model, const std::string& path) {
  io_detail::Writer w;
  w.bytes("PVQE", 4);
  w.u32(io_detail::kWeightVersion);
  const std::string cfg = model.config.to_json().dump();
  w.u32(uint32_t(cfg.size()));
  w.bytes(cfg.data(), cfg.size());
  w.u32(uint32_t(model.params.size()));
  for (const auto& [name, tensor] : model.params) {
    w.u16(uint16_t(name.size()));
    w.bytes(name.data(), name.size());
    w.u8(uint8_t(tensor.rank()));
    for (int d : tensor.shape) w.u32(uint32_t(d));
    for (T v : tensor.data) w.f32(float(v));
  }
  w.finish_crc();
  w.to_file(path);
}

template <class T = float>
Model<T> load_weights(const std::string& path) {
  io_detail::Reader r(path);
  r.check_crc("weight file");
  if (r.str(4) != "PVQE") throw CorruptFile("weight file: bad magic");
  const uint32_t version = r.u32();
  if (version != io_detail::kWeightVersion)
    throw UnsupportedVersion("weight file version " + std::to_string(version));
  const uint32_t cfg_len = r.u32();
  const std::string cfg_json = r.str(cfg_len);
  Model<T> model;
  try {
    model.config = ModelConfig::from_json(nlohmann::json::parse(cfg_json));
  } catch (const nlohmann::json::exception& e) {
    throw CorruptFile(std::string("weight file: bad config blob: ") + e.what());
  }
  model.config.validate();
  const uint32_t count = r.u32();
  for (uint32_t i = 0; i < count; ++i) {
    const uint16_t name_len = r.u16();
    const std::string name = r.str(name_len);
    const uint8_t rank = r.u8();
    std::vector<int> shape(rank);
    size_t numel = 1;
    for (auto& d : shape) {
      d = int(r.u32());
      if (d <= 0) throw CorruptFile("weight file: non-positive dimension in " + name);
      numel *= size_t(d);
    }
    Tensor<T> t(shape);
    for (size_t k = 0; k < numel; ++k) t.data[k] = T(r.f32());
    model.params.emplace(name, std::move(t));
  }
  if (r.pos != r.payload_end()) throw CorruptFile("weight file: trailing bytes");
  // The stored tensors must exactly satisfy the schema of the embedded
  // config.
  const auto schema = param_schema(model.config);
  if (schema.size() != model.params.size())
    throw InvalidConfig("weight file: tensor count does not match the config schema");
  for (const auto& spec : schema) {
    auto it = model.params.find(spec.name);
    if (it == model.params.end())
      throw InvalidConfig("weight file: missing tensor " + spec.name);
    if (it->second.shape != spec.shape)
      throw InvalidConfig("weight file: shape mismatch for " + spec.name + ": file " +
                          it->second.shape_str());
  }
  return model;
}

// Embedding file: "PEMB" | version | provenance u8 | dim u32 | float32 data
// | CRC32.
template <class T>
void save_embedding(const SpeakerEmbedding<T>& emb, const std::string& path) {
  io_detail::Writer w;
  w.bytes("PEMB", 4);
  w.u32(io_detail::kEmbeddingVersion);
  w.u8(uint8_t(emb.provenance));
  w.u32(uint32_t(emb.v.size()));
  for (T v : emb.v) w.f32(float(v));
  w.finish_crc();
  w.to_file(path);
}

template <class T = float>
SpeakerEmbedding<T> load_embedding(const std::string& path) {
  io_detail::Reader r(path);
  r.check_crc("embedding file");
  if (r.str(4) != "PEMB") throw CorruptFile("embedding file: bad magic");
  const uint32_t version = r.u32();
  if (version != io_detail::kEmbeddingVersion)
    throw UnsupportedVersion("embedding file version " + std::to_string(version));
  const uint8_t prov = r.u8();
  if (prov > uint8_t(Provenance::external)) throw CorruptFile("embedding file: bad provenance");
  const uint32_t dim = r.u32();
  if (dim == 0) throw CorruptFile("embedding file: zero dimension");
  SpeakerEmbedding<T> emb;
  emb.provenance = Provenance(prov);
  emb.v.resize(dim);
  for (uint32_t i = 0; i < dim; ++i) emb.v[i] = T(r.f32());
  if (r.pos != r.payload_end()) throw CorruptFile("embedding file: trailing bytes");
  return emb;
}

// External embeddings (from a separate speaker-verification model) are
// ingested through the same container.
template <class T = float>
SpeakerEmbedding<T> load_external_embedding(const std::string& path) {
  return load_embedding<T>(path);
}

}  // namespace pvqe
