#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "pvqe/common.hpp"

namespace pvqe {

// Strict 16 kHz / mono / 16-bit PCM WAV I/O. Anything else is rejected by
// name; there is no silent resampling.

namespace wav_detail {

inline uint32_t rd_u32(const uint8_t* p) {
  return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 | uint32_t(p[3]) << 24;
}
inline uint16_t rd_u16(const uint8_t* p) { return uint16_t(p[0]) | uint16_t(uint32_t(p[1]) << 8); }

inline void wr_u32(std::vector<uint8_t>& b, uint32_t v) {
  b.push_back(uint8_t(v));
  b.push_back(uint8_t(v >> 8));
  b.push_back(uint8_t(v >> 16));
  b.push_back(uint8_t(v >> 24));
}
inline void wr_u16(std::vector<uint8_t>& b, uint16_t v) {
  b.push_back(uint8_t(v));
  b.push_back(uint8_t(v >> 8));
}

}  // namespace wav_detail

template <class T = float>
std::vector<T> read_wav(const std::string& path, int expected_rate = 16000) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open wav file: " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw UnsupportedFormat("not a RIFF/WAVE file: " + path);

  size_t pos = 12;
  bool have_fmt = false;
  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  const uint8_t* data = nullptr;
  uint32_t data_len = 0;
  while (pos + 8 <= bytes.size()) {
    const uint8_t* hdr = bytes.data() + pos;
    const uint32_t len = wav_detail::rd_u32(hdr + 4);
    const uint8_t* body = hdr + 8;
    if (pos + 8 + len > bytes.size()) throw CorruptFile("truncated wav chunk in " + path);
    if (std::memcmp(hdr, "fmt ", 4) == 0 && len >= 16) {
      format = wav_detail::rd_u16(body);
      channels = wav_detail::rd_u16(body + 2);
      rate = wav_detail::rd_u32(body + 4);
      bits = wav_detail::rd_u16(body + 14);
      have_fmt = true;
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      data = body;
      data_len = len;
    }
    pos += 8 + len + (len & 1);  // chunks are word-aligned
  }
  if (!have_fmt || !data) throw CorruptFile("missing fmt/data chunk in " + path);
  if (format != 1) throw UnsupportedFormat("wav format tag " + std::to_string(format) +
                                           " (PCM required): " + path);
  if (channels != 1)
    throw UnsupportedFormat(std::to_string(channels) + " channels (mono required): " + path);
  if (bits != 16) throw UnsupportedFormat(std::to_string(bits) + "-bit samples (16 required): " + path);
  if (int(rate) != expected_rate)
    throw UnsupportedFormat(std::to_string(rate) + " Hz sample rate (" +
                            std::to_string(expected_rate) + " required): " + path);
  const size_t n = data_len / 2;
  std::vector<T> out(n);
  for (size_t i = 0; i < n; ++i) {
    const int16_t s = int16_t(wav_detail::rd_u16(data + 2 * i));
    out[i] = T(double(s) / 32768.0);
  }
  return out;
}

template <class T = float>
void write_wav(const std::string& path, const std::vector<T>& samples, int rate = 16000) {
  std::vector<uint8_t> b;
  b.reserve(44 + samples.size() * 2);
  auto tag = [&](const char* s) { b.insert(b.end(), s, s + 4); };
  tag("RIFF");
  wav_detail::wr_u32(b, uint32_t(36 + samples.size() * 2));
  tag("WAVE");
  tag("fmt ");
  wav_detail::wr_u32(b, 16);
  wav_detail::wr_u16(b, 1);  // PCM
  wav_detail::wr_u16(b, 1);  // mono
  wav_detail::wr_u32(b, uint32_t(rate));
  wav_detail::wr_u32(b, uint32_t(rate * 2));
  wav_detail::wr_u16(b, 2);
  wav_detail::wr_u16(b, 16);
  tag("data");
  wav_detail::wr_u32(b, uint32_t(samples.size() * 2));
  for (T v : samples) {
    double x = double(v);
    x = std::min(std::max(x, -1.0), 1.0 - 1.0 / 32768.0);
    const int16_t s = int16_t(std::lround(x * 32768.0));
    wav_detail::wr_u16(b, uint16_t(s));
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write wav file: " + path);
  f.write(reinterpret_cast<const char*>(b.data()), std::streamsize(b.size()));
  if (!f) throw IoError("short write: " + path);
}

}  // namespace pvqe
