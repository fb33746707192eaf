#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace coldrec::binio {

// Little-endian binary encoding used by every checkpoint format. Integers are
// fixed width, reals are IEEE-754 binary64, strings are u64 length + bytes.
// Whole-file helpers; throw IoError.
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

class Writer {
 public:
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void str(std::string_view s);
  void f64s(std::span<const double> v);  // u64 count + values
  void magic(std::string_view tag);      // raw bytes, no length

  const std::string& bytes() const { return buf_; }
  void save(const std::filesystem::path& path) const;

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string bytes) : buf_(std::move(bytes)) {}
  static Reader open(const std::filesystem::path& path);

  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  std::string str();
  std::vector<double> f64s();
  // Throws ParseError unless the next bytes equal `tag`.
  void expect_magic(std::string_view tag);
  bool at_end() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n) const;
  std::string buf_;
  std::size_t pos_ = 0;
};

}  // namespace coldrec::binio
