#include "rsmg/io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <filesystem>
#include <iterator>

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace rsmg {

namespace {

std::string canonical_or_raw(const std::string& path) {
  std::error_code ec;
  auto p = std::filesystem::weakly_canonical(path, ec);
  return ec ? path : p.string();
}

}  // namespace

FileAccessAudit& FileAccessAudit::instance() {
  static FileAccessAudit audit;
  return audit;
}

void FileAccessAudit::record(const std::string& path) {
  std::lock_guard lock(mutex_);
  opened_.push_back(canonical_or_raw(path));
}

std::vector<std::string> FileAccessAudit::opened() const {
  std::lock_guard lock(mutex_);
  return opened_;
}

bool FileAccessAudit::was_opened(const std::string& path) const {
  const auto key = canonical_or_raw(path);
  std::lock_guard lock(mutex_);
  return std::find(opened_.begin(), opened_.end(), key) != opened_.end();
}

void FileAccessAudit::clear() {
  std::lock_guard lock(mutex_);
  opened_.clear();
}

std::ifstream open_for_read(const std::string& path) {
  FileAccessAudit::instance().record(path);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  return in;
}

std::ofstream open_for_write(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
  return out;
}

std::vector<char> read_all(const std::string& path) {
  auto in = open_for_read(path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::span<const char> ByteReader::take(std::size_t n) {
  if (remaining() < n) throw Error(ErrorCode::TruncatedFile, "unexpected end of data");
  std::span<const char> s(bytes_.data() + pos_, n);
  pos_ += n;
  return s;
}

std::uint32_t ByteReader::u32() {
  std::uint32_t v;
  std::memcpy(&v, take(4).data(), 4);
  return v;
}

std::int32_t ByteReader::i32() {
  std::int32_t v;
  std::memcpy(&v, take(4).data(), 4);
  return v;
}

void ByteReader::floats(std::span<float> out) {
  const auto bytes = take(out.size_bytes());
  std::memcpy(out.data(), bytes.data(), bytes.size());
}

void ByteReader::ints(std::span<std::int32_t> out) {
  const auto bytes = take(out.size_bytes());
  std::memcpy(out.data(), bytes.data(), bytes.size());
}

void write_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

void write_floats(std::ostream& os, std::span<const float> v) {
  os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size_bytes()));
}

void write_ints(std::ostream& os, std::span<const std::int32_t> v) {
  os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size_bytes()));
}

}  // namespace rsmg
