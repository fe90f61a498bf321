#pragma once

// RIFF WAV read/write: mono PCM, 16-bit integer or 32-bit float,
// little-endian.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace vqtts {

struct AudioBuffer {
  std::vector<double> samples;  // amplitudes in [-1, 1]
  int sample_rate = 16000;
};

enum class WavFormat { pcm16, float32 };

namespace detail {

inline void put_u32(std::string& s, uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u16(std::string& s, uint16_t v) {
  for (int i = 0; i < 2; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline uint32_t get_u32(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | static_cast<uint32_t>(p[1]) << 8 |
         static_cast<uint32_t>(p[2]) << 16 | static_cast<uint32_t>(p[3]) << 24;
}
inline uint16_t get_u16(const unsigned char* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

}  // namespace detail

inline void write_wav(const AudioBuffer& audio, const std::string& path,
                      WavFormat format = WavFormat::pcm16) {
  const uint16_t bits = format == WavFormat::pcm16 ? 16 : 32;
  const uint16_t fmt_code = format == WavFormat::pcm16 ? 1 : 3;
  const uint32_t bytes_per_sample = bits / 8;
  const uint32_t data_size = static_cast<uint32_t>(audio.samples.size()) * bytes_per_sample;

  std::string out;
  out.reserve(44 + data_size);
  out += "RIFF";
  detail::put_u32(out, 36 + data_size);
  out += "WAVEfmt ";
  detail::put_u32(out, 16);
  detail::put_u16(out, fmt_code);
  detail::put_u16(out, 1);  // mono
  detail::put_u32(out, static_cast<uint32_t>(audio.sample_rate));
  detail::put_u32(out, static_cast<uint32_t>(audio.sample_rate) * bytes_per_sample);
  detail::put_u16(out, static_cast<uint16_t>(bytes_per_sample));
  detail::put_u16(out, bits);
  out += "data";
  detail::put_u32(out, data_size);

  for (double s : audio.samples) {
    const double c = std::max(-1.0, std::min(1.0, s));
    if (format == WavFormat::pcm16) {
      const int16_t q = static_cast<int16_t>(std::lrint(c * 32767.0));
      detail::put_u16(out, static_cast<uint16_t>(q));
    } else {
      const float f = static_cast<float>(c);
      uint32_t bitsv;
      std::memcpy(&bitsv, &f, 4);
      detail::put_u32(out, bitsv);
    }
  }

  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_wav: cannot open " + path);
  os.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!os) throw std::runtime_error("write_wav: write failed for " + path);
}

inline AudioBuffer read_wav(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_wav: cannot open " + path);
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(is)),
                                 std::istreambuf_iterator<char>());
  if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) != 0 ||
      std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
    throw std::runtime_error("read_wav: malformed RIFF header in " + path);

  uint16_t fmt_code = 0, channels = 0, bits = 0;
  uint32_t sample_rate = 0;
  size_t data_off = 0, data_size = 0;
  bool have_fmt = false, have_data = false;

  size_t pos = 12;
  while (pos + 8 <= buf.size()) {
    const char* id = reinterpret_cast<const char*>(buf.data() + pos);
    const uint32_t size = detail::get_u32(buf.data() + pos + 4);
    const size_t body = pos + 8;
    if (body + size > buf.size())
      throw std::runtime_error("read_wav: truncated chunk in " + path);
    if (std::memcmp(id, "fmt ", 4) == 0) {
      if (size < 16) throw std::runtime_error("read_wav: malformed fmt chunk in " + path);
      fmt_code = detail::get_u16(buf.data() + body);
      channels = detail::get_u16(buf.data() + body + 2);
      sample_rate = detail::get_u32(buf.data() + body + 4);
      bits = detail::get_u16(buf.data() + body + 14);
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      data_off = body;
      data_size = size;
      have_data = true;
    }
    pos = body + size + (size & 1);  // chunks are word-aligned
  }
  if (!have_fmt || !have_data)
    throw std::runtime_error("read_wav: missing fmt or data chunk in " + path);
  if (channels != 1)
    throw std::runtime_error("read_wav: unsupported channels (" + std::to_string(channels) +
                             ") in " + path);

  AudioBuffer audio;
  audio.sample_rate = static_cast<int>(sample_rate);
  if (fmt_code == 1 && bits == 16) {
    const size_t n = data_size / 2;
    audio.samples.resize(n);
    for (size_t i = 0; i < n; ++i) {
      const int16_t q = static_cast<int16_t>(detail::get_u16(buf.data() + data_off + 2 * i));
      audio.samples[i] = static_cast<double>(q) / 32767.0;
    }
  } else if (fmt_code == 3 && bits == 32) {
    const size_t n = data_size / 4;
    audio.samples.resize(n);
    for (size_t i = 0; i < n; ++i) {
      const uint32_t bv = detail::get_u32(buf.data() + data_off + 4 * i);
      float f;
      std::memcpy(&f, &bv, 4);
      audio.samples[i] = static_cast<double>(f);
    }
  } else {
    throw std::runtime_error("read_wav: unsupported format (code " + std::to_string(fmt_code) +
                             ", " + std::to_string(bits) + " bits) in " + path);
  }
  return audio;
}

}  // namespace vqtts
