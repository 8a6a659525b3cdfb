#include "coopir/io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "coopir/error.hpp"

namespace coopir {

namespace {

constexpr std::string_view kImageMagic = "OPIMG1";
constexpr std::uint64_t kMaxElements = 1ULL << 28;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f64(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  Reader(std::string_view bytes, const char* what) : bytes_(bytes), what_(what) {}

  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError(std::string(what_) + ": truncated payload");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(v);
  }
  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::string_view bytes_;
  const char* what_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_image(const Image& img) {
  validate(img);
  std::string out(kImageMagic);
  out.reserve(kImageMagic.size() + 12 + img.data.size() * 8);
  put_u32(out, static_cast<std::uint32_t>(img.height));
  put_u32(out, static_cast<std::uint32_t>(img.width));
  put_u32(out, static_cast<std::uint32_t>(img.channels));
  for (double v : img.data) put_f64(out, v);
  return out;
}

Image decode_image(std::string_view bytes) {
  if (bytes.size() < kImageMagic.size() || bytes.substr(0, kImageMagic.size()) != kImageMagic) {
    throw FormatError("OPIMG1: bad magic");
  }
  Reader r(bytes.substr(kImageMagic.size()), "OPIMG1");
  const std::uint64_t h = r.u32();
  const std::uint64_t w = r.u32();
  const std::uint64_t c = r.u32();
  if (h == 0 || w == 0 || c == 0 || h > kMaxElements || w > kMaxElements || c > 4 || h * w * c > kMaxElements) {
    throw FormatError("OPIMG1: dimension overflow");
  }
  const std::size_t n = static_cast<std::size_t>(h * w * c);
  if (r.remaining() < n * 8) throw FormatError("OPIMG1: truncated payload");
  Image img(static_cast<int>(h), static_cast<int>(w), static_cast<int>(c));
  for (std::size_t i = 0; i < n; ++i) img.data[i] = r.f64();
  if (r.remaining() != 0) throw FormatError("OPIMG1: trailing bytes after payload");
  validate(img);
  return img;
}

void save_image(const Image& img, const std::filesystem::path& path) { write_file_atomic(path, encode_image(img)); }

Image load_image(const std::filesystem::path& path) { return decode_image(read_file(path)); }

std::string encode_ppm(const Image& img) {
  validate(img);
  std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  const std::size_t pixels = static_cast<std::size_t>(img.height) * img.width;
  out.reserve(out.size() + pixels * 3);
  for (std::size_t i = 0; i < pixels; ++i) {
    for (int c = 0; c < 3; ++c) {
      const double v = img.data[i * img.channels + (img.channels == 1 ? 0 : c)];
      out.push_back(static_cast<char>(static_cast<unsigned char>(std::floor(v * 255.0 + 0.5))));
    }
  }
  return out;
}

void save_ppm(const Image& img, const std::filesystem::path& path) { write_file_atomic(path, encode_ppm(img)); }

std::string encode_named_arrays(std::string_view magic, const NamedArrays& arrays) {
  std::string out(magic);
  put_u32(out, static_cast<std::uint32_t>(arrays.size()));
  for (const auto& [name, values] : arrays) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(values.size()));
    for (double v : values) put_f64(out, v);
  }
  return out;
}

NamedArrays decode_named_arrays(std::string_view magic, std::string_view bytes) {
  const std::string tag(magic);
  if (bytes.size() < magic.size() || bytes.substr(0, magic.size()) != magic) {
    throw FormatError(tag + ": bad magic");
  }
  Reader r(bytes.substr(magic.size()), tag.c_str());
  const std::uint32_t count = r.u32();
  NamedArrays out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = r.u32();
    std::string name(r.take(name_len));
    const std::uint32_t n = r.u32();
    r.need(static_cast<std::size_t>(n) * 8);
    std::vector<double> values(n);
    for (auto& v : values) v = r.f64();
    out.emplace_back(std::move(name), std::move(values));
  }
  if (r.remaining() != 0) throw FormatError(tag + ": trailing bytes after payload");
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open file for writing: " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace coopir
