#include "trapeval/raster.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "trapeval/error.hpp"
#include "trapeval/text.hpp"

namespace trapeval::raster {
namespace {

char to_byte(double v) {
  const double c = std::clamp(std::round(v), 0.0, 255.0);
  return static_cast<char>(static_cast<unsigned char>(c));
}

std::string encode(const Tensor3& t, const char* magic) {
  std::string out = std::string(magic) + "\n" + std::to_string(t.width()) + " " + std::to_string(t.height()) + "\n255\n";
  out.reserve(out.size() + t.size());
  for (int y = 0; y < t.height(); ++y)
    for (int x = 0; x < t.width(); ++x)
      for (int c = 0; c < t.channels(); ++c) out.push_back(to_byte(t.at(c, y, x)));
  return out;
}

// Next whitespace-delimited header token, skipping '#' comments.
std::string header_token(std::string_view bytes, std::size_t& pos) {
  while (pos < bytes.size()) {
    const auto ch = static_cast<unsigned char>(bytes[pos]);
    if (std::isspace(ch)) {
      ++pos;
    } else if (ch == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else {
      break;
    }
  }
  const std::size_t start = pos;
  while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
  if (start == pos) throw ParseError("truncated image header");
  return std::string(bytes.substr(start, pos - start));
}

}  // namespace

std::string encode_ppm(const Tensor3& rgb) {
  if (rgb.channels() != 3) throw ShapeError("PPM needs a 3-channel tensor, got " + rgb.shape().to_string());
  return encode(rgb, "P6");
}

std::string encode_pgm(const Tensor3& gray) {
  if (gray.channels() != 1) throw ShapeError("PGM needs a 1-channel tensor, got " + gray.shape().to_string());
  return encode(gray, "P5");
}

Tensor3 decode_pnm(std::string_view bytes) {
  std::size_t pos = 0;
  const std::string magic = header_token(bytes, pos);
  int channels = 0;
  if (magic == "P6") {
    channels = 3;
  } else if (magic == "P5") {
    channels = 1;
  } else {
    throw ParseError("unsupported image magic '" + magic + "' (expected P6 or P5)");
  }
  const long long width = text::parse_int(header_token(bytes, pos), "image width");
  const long long height = text::parse_int(header_token(bytes, pos), "image height");
  const long long maxval = text::parse_int(header_token(bytes, pos), "image maxval");
  if (width < 1 || height < 1 || width > 1 << 16 || height > 1 << 16) throw ParseError("image dimensions out of range");
  if (maxval != 255) throw ParseError("only maxval 255 is supported, got " + std::to_string(maxval));
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw ParseError("truncated image header");
  }
  ++pos;  // single whitespace before the raster
  const auto need = static_cast<std::size_t>(width * height * channels);
  if (bytes.size() - pos < need) {
    throw ParseError("truncated image data: need " + std::to_string(need) + " bytes, have " +
                     std::to_string(bytes.size() - pos));
  }
  Tensor3 t(channels, static_cast<int>(height), static_cast<int>(width));
  for (int y = 0; y < t.height(); ++y)
    for (int x = 0; x < t.width(); ++x)
      for (int c = 0; c < channels; ++c) t.at(c, y, x) = static_cast<unsigned char>(bytes[pos++]);
  return t;
}

Tensor3 read_ppm(const std::string& path) {
  try {
    return decode_pnm(text::read_file(path));
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

void write_ppm(const Tensor3& rgb, const std::string& path) { text::write_file(path, encode_ppm(rgb)); }

void write_pgm(const Tensor3& gray, const std::string& path) { text::write_file(path, encode_pgm(gray)); }

}  // namespace trapeval::raster
