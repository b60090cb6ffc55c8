#pragma once

#include <cstdint>
#include <fstream>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "rsmg/error.hpp"

namespace rsmg {

/// Records every path the library opens for reading. Training code is
/// audited against it to prove target-domain files are never touched.
class FileAccessAudit {
 public:
  static FileAccessAudit& instance();

  void record(const std::string& path);
  std::vector<std::string> opened() const;
  bool was_opened(const std::string& path) const;
  void clear();

 private:
  mutable std::mutex mutex_;
  std::vector<std::string> opened_;
};

/// Opens a binary file for reading and records the access.
std::ifstream open_for_read(const std::string& path);
std::ofstream open_for_write(const std::string& path);

/// Little-endian reader over a byte buffer; throws TruncatedFile on underrun.
class ByteReader {
 public:
  explicit ByteReader(std::vector<char> bytes) : bytes_(std::move(bytes)) {}

  std::span<const char> take(std::size_t n);
  std::uint32_t u32();
  std::int32_t i32();
  void floats(std::span<float> out);
  void ints(std::span<std::int32_t> out);
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
};

std::vector<char> read_all(const std::string& path);

void write_u32(std::ostream& os, std::uint32_t v);
void write_floats(std::ostream& os, std::span<const float> v);
void write_ints(std::ostream& os, std::span<const std::int32_t> v);

}  // namespace rsmg
