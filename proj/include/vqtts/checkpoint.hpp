#pragma once

// Checkpoint container: magic "VQTTS", u32 format version, then
// length-prefixed named records. Numeric payloads are little-endian
// 64-bit reals. Records are written in a fixed order so identical state
// serialises to identical bytes.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

namespace vqtts {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are written as host little-endian doubles");

constexpr uint32_t kCheckpointVersion = 1;
constexpr char kCheckpointMagic[5] = {'V', 'Q', 'T', 'T', 'S'};

class CheckpointWriter {
 public:
  CheckpointWriter() {
    buf_.append(kCheckpointMagic, 5);
    append_u32(kCheckpointVersion);
  }

  void add(const std::string& name, const std::string& payload) {
    append_u32(static_cast<uint32_t>(name.size()));
    buf_ += name;
    append_u64(payload.size());
    buf_ += payload;
  }

  void add_doubles(const std::string& name, const std::vector<double>& values) {
    std::string payload(values.size() * 8, '\0');
    std::memcpy(payload.data(), values.data(), payload.size());
    add(name, payload);
  }

  const std::string& bytes() const { return buf_; }

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot write " + path);
    os.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
    if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
  }

 private:
  void append_u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void append_u64(uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }

  std::string buf_;
};

class CheckpointReader {
 public:
  explicit CheckpointReader(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    if (buf.size() < 9 || std::memcmp(buf.data(), kCheckpointMagic, 5) != 0)
      throw std::runtime_error("checkpoint: bad magic in " + path);
    const uint32_t version = read_u32(buf, 5);
    if (version != kCheckpointVersion)
      throw std::runtime_error("checkpoint: version mismatch in " + path + ": file has " +
                               std::to_string(version) + ", expected " +
                               std::to_string(kCheckpointVersion));
    size_t pos = 9;
    while (pos < buf.size()) {
      if (pos + 4 > buf.size()) throw std::runtime_error("checkpoint: truncated record header");
      const uint32_t name_len = read_u32(buf, pos);
      pos += 4;
      if (pos + name_len + 8 > buf.size())
        throw std::runtime_error("checkpoint: truncated record name");
      std::string name = buf.substr(pos, name_len);
      pos += name_len;
      uint64_t payload_len = 0;
      for (int i = 0; i < 8; ++i)
        payload_len |= static_cast<uint64_t>(static_cast<unsigned char>(buf[pos + static_cast<size_t>(i)])) << (8 * i);
      pos += 8;
      if (pos + payload_len > buf.size())
        throw std::runtime_error("checkpoint: truncated payload in record '" + name + "'");
      records_.emplace_back(std::move(name), buf.substr(pos, payload_len));
      pos += payload_len;
    }
  }

  bool has(const std::string& name) const {
    for (const auto& [n, p] : records_)
      if (n == name) return true;
    return false;
  }

  const std::string& get(const std::string& name) const {
    for (const auto& [n, p] : records_)
      if (n == name) return p;
    throw std::runtime_error("checkpoint: missing record '" + name + "'");
  }

  std::vector<double> get_doubles(const std::string& name) const {
    const std::string& p = get(name);
    if (p.size() % 8 != 0)
      throw std::runtime_error("checkpoint: record '" + name + "' has a malformed payload");
    std::vector<double> out(p.size() / 8);
    std::memcpy(out.data(), p.data(), p.size());
    return out;
  }

  const std::vector<std::pair<std::string, std::string>>& records() const { return records_; }

 private:
  static uint32_t read_u32(const std::string& b, size_t pos) {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<uint32_t>(static_cast<unsigned char>(b[pos + static_cast<size_t>(i)])) << (8 * i);
    return v;
  }

  std::vector<std::pair<std::string, std::string>> records_;
};

}  // namespace vqtts
