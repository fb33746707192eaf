#include "coldrec/binio.hpp"

#include <bit>
#include <fstream>
#include <sstream>

#include "coldrec/error.hpp"

namespace coldrec::binio {

namespace {

void put_le(std::string& out, std::uint64_t v, int width) {
  for (int i = 0; i < width; ++i) {
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
  }
}

}  // namespace

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed: " + path.string());
  return std::move(ss).str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

void Writer::u32(std::uint32_t v) { put_le(buf_, v, 4); }
void Writer::u64(std::uint64_t v) { put_le(buf_, v, 8); }
void Writer::f64(double v) { put_le(buf_, std::bit_cast<std::uint64_t>(v), 8); }

void Writer::str(std::string_view s) {
  u64(s.size());
  buf_.append(s);
}

void Writer::f64s(std::span<const double> v) {
  u64(v.size());
  for (double x : v) f64(x);
}

void Writer::magic(std::string_view tag) { buf_.append(tag); }

void Writer::save(const std::filesystem::path& path) const { write_file(path, buf_); }

Reader Reader::open(const std::filesystem::path& path) { return Reader(read_file(path)); }

void Reader::need(std::size_t n) const {
  if (buf_.size() - pos_ < n) throw ParseError("truncated binary file");
}

static std::uint64_t read_le(const std::string& buf, std::size_t pos, int width) {
  std::uint64_t v = 0;
  for (int i = 0; i < width; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i]))
         << (8 * i);
  }
  return v;
}

std::uint32_t Reader::u32() {
  need(4);
  auto v = static_cast<std::uint32_t>(read_le(buf_, pos_, 4));
  pos_ += 4;
  return v;
}

std::uint64_t Reader::u64() {
  need(8);
  auto v = read_le(buf_, pos_, 8);
  pos_ += 8;
  return v;
}

double Reader::f64() { return std::bit_cast<double>(u64()); }

std::string Reader::str() {
  const auto n = u64();
  need(n);
  std::string s = buf_.substr(pos_, n);
  pos_ += n;
  return s;
}

std::vector<double> Reader::f64s() {
  const auto n = u64();
  need(n * 8);
  std::vector<double> v(n);
  for (auto& x : v) x = f64();
  return v;
}

void Reader::expect_magic(std::string_view tag) {
  need(tag.size());
  if (std::string_view(buf_).substr(pos_, tag.size()) != tag) {
    throw ParseError("bad file magic, expected " + std::string(tag));
  }
  pos_ += tag.size();
}

}  // namespace coldrec::binio
