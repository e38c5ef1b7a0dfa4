#include "dms/image_io.hpp"

#include <cctype>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

namespace dms {
namespace {

class HeaderParser {
 public:
  explicit HeaderParser(std::string_view bytes) : bytes_(bytes) {}

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const char c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n' && bytes_[pos_] != '\r') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        return;
      }
    }
  }

  std::uint64_t number(const char* what) {
    skip_space_and_comments();
    if (pos_ >= bytes_.size() || !std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
      throw std::runtime_error(std::string("pnm: expected ") + what);
    }
    std::uint64_t value = 0;
    while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
      value = value * 10 + std::uint64_t(bytes_[pos_] - '0');
      if (value > (1u << 30)) throw std::runtime_error(std::string("pnm: ") + what + " too large");
      ++pos_;
    }
    return value;
  }

  // Exactly one whitespace byte separates maxval from the raster.
  void end_of_header() {
    if (pos_ >= bytes_.size() || !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
      throw std::runtime_error("pnm: missing whitespace after maxval");
    }
    ++pos_;
  }

  std::size_t pos() const { return pos_; }
  void advance(std::size_t n) { pos_ += n; }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

template <class T>
void put(std::string& out, T value) {
  char b[sizeof(T)];
  std::memcpy(b, &value, sizeof(T));
  out.append(b, sizeof(T));
}

template <class T>
T get(std::string_view bytes, std::size_t offset) {
  T value;
  std::memcpy(&value, bytes.data() + offset, sizeof(T));
  return value;
}

}  // namespace

std::string encode_pnm(const ImageU8& image) {
  const Shape3& s = image.shape();
  if (s.channels != 3 && s.channels != 1) {
    throw std::invalid_argument("pnm: only 1 or 3 channels can be stored, got " +
                                std::to_string(s.channels));
  }
  std::string out = s.channels == 3 ? "P6\n" : "P5\n";
  out += std::to_string(s.width) + " " + std::to_string(s.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(image.values().data()), image.size());
  return out;
}

ImageU8 decode_pnm(std::string_view bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '6' && bytes[1] != '5')) {
    throw std::runtime_error("pnm: bad magic, expected P6 or P5");
  }
  const std::size_t channels = bytes[1] == '6' ? 3 : 1;
  HeaderParser p(bytes);
  p.advance(2);
  const auto width = p.number("width");
  const auto height = p.number("height");
  const auto maxval = p.number("maxval");
  if (maxval != 255) {
    throw std::runtime_error("pnm: unsupported maxval " + std::to_string(maxval));
  }
  if (width == 0 || height == 0) throw std::runtime_error("pnm: empty image");
  p.end_of_header();
  const Shape3 shape{height, width, channels};
  if (bytes.size() - p.pos() < shape.size()) {
    throw std::runtime_error("pnm: truncated payload, expected " + std::to_string(shape.size()) +
                             " bytes, found " + std::to_string(bytes.size() - p.pos()));
  }
  const auto* data = reinterpret_cast<const std::uint8_t*>(bytes.data() + p.pos());
  return ImageU8(shape, std::vector<std::uint8_t>(data, data + shape.size()));
}

std::string encode_fimg(const ImageF& image) {
  std::string out = "DMSF";
  put<std::uint32_t>(out, static_cast<std::uint32_t>(image.shape().height));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(image.shape().width));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(image.shape().channels));
  out.append(reinterpret_cast<const char*>(image.values().data()), image.size() * sizeof(float));
  return out;
}

ImageF decode_fimg(std::string_view bytes) {
  if (bytes.size() < 4 || bytes.substr(0, 4) != "DMSF") {
    throw std::runtime_error("dmsf: bad magic");
  }
  if (bytes.size() < 16) throw std::runtime_error("dmsf: truncated header");
  const Shape3 shape{get<std::uint32_t>(bytes, 4), get<std::uint32_t>(bytes, 8),
                     get<std::uint32_t>(bytes, 12)};
  const std::size_t payload = bytes.size() - 16;
  if (payload != shape.size() * sizeof(float)) {
    throw std::runtime_error("dmsf: header declares " + std::to_string(shape.size()) +
                             " floats but payload holds " + std::to_string(payload) + " bytes");
  }
  std::vector<float> values(shape.size());
  std::memcpy(values.data(), bytes.data() + 16, payload);
  return ImageF(shape, std::move(values));
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw std::runtime_error(path.string() + ": cannot open for reading");
  return std::string((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw std::runtime_error(path.string() + ": cannot open for writing");
  file.write(bytes.data(), std::streamsize(bytes.size()));
  if (!file) throw std::runtime_error(path.string() + ": write failed");
}

void write_ppm(const ImageU8& image, const std::filesystem::path& path) {
  write_file(path, encode_pnm(image));
}

ImageU8 read_ppm(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  try {
    return decode_pnm(bytes);
  } catch (const std::runtime_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

void write_fimg(const ImageF& image, const std::filesystem::path& path) {
  write_file(path, encode_fimg(image));
}

ImageF read_fimg(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  try {
    return decode_fimg(bytes);
  } catch (const std::runtime_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

}  // namespace dms
