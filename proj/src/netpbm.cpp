#include "mlwc/netpbm.hpp"

#include <cmath>

namespace mlwc {
namespace {

struct ByteReader {
  const std::vector<std::uint8_t>& bytes;
  size_t pos = 0;

  bool eof() const { return pos >= bytes.size(); }
  std::uint8_t next() {
    if (eof()) throw DataError("netpbm: truncated header");
    return bytes[pos++];
  }

  // Whitespace and '#'-to-end-of-line comments may separate header tokens.
  void skip_separators() {
    while (!eof()) {
      const std::uint8_t c = bytes[pos];
      if (c == '#') {
        while (!eof() && bytes[pos] != '\n') ++pos;
      } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\v' || c == '\f') {
        ++pos;
      } else {
        break;
      }
    }
  }

  int read_int() {
    skip_separators();
    if (eof()) throw DataError("netpbm: truncated header");
    if (bytes[pos] < '0' || bytes[pos] > '9') {
      throw DataError("netpbm: expected integer in header");
    }
    long v = 0;
    while (!eof() && bytes[pos] >= '0' && bytes[pos] <= '9') {
      v = v * 10 + (bytes[pos] - '0');
      if (v > 1 << 20) throw DataError("netpbm: header value out of range");
      ++pos;
    }
    return static_cast<int>(v);
  }
};

}  // namespace

Tensor parse_netpbm(const std::vector<std::uint8_t>& bytes) {
  ByteReader r{bytes};
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw DataError("netpbm: bad magic, expected P5 or P6");
  }
  const int channels = bytes[1] == '5' ? 1 : 3;
  r.pos = 2;
  const int width = r.read_int();
  const int height = r.read_int();
  const int maxval = r.read_int();
  if (width < 1 || height < 1) throw DataError("netpbm: non-positive image dimensions");
  if (maxval < 1) throw DataError("netpbm: maxval must be positive");
  if (maxval > 255) throw DataError("netpbm: maxval " + std::to_string(maxval) + " exceeds 255");
  // Exactly one whitespace byte separates maxval from the pixel payload.
  if (r.eof()) throw DataError("netpbm: truncated after maxval");
  const std::uint8_t sep = r.next();
  if (sep != ' ' && sep != '\t' && sep != '\n' && sep != '\r') {
    throw DataError("netpbm: missing whitespace before pixel payload");
  }

  const size_t need = static_cast<size_t>(width) * height * channels;
  if (bytes.size() - r.pos < need) {
    throw DataError("netpbm: pixel payload truncated, need " + std::to_string(need) +
                    " bytes, have " + std::to_string(bytes.size() - r.pos));
  }
  Tensor image({channels, height, width});
  const std::uint8_t* p = bytes.data() + r.pos;
  const double scale = 1.0 / maxval;
  // Payload is interleaved per pixel; tensor is planar [C,H,W].
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      for (int c = 0; c < channels; ++c) {
        image.at({c, y, x}) = static_cast<double>(*p++) * scale;
      }
    }
  }
  return image;
}

std::vector<std::uint8_t> emit_netpbm(const Tensor& image, int maxval) {
  if (image.rank() != 3 || (image.dim(0) != 1 && image.dim(0) != 3)) {
    throw DataError("netpbm: image must be [C,H,W] with 1 or 3 channels, got " +
                    shape_str(image.shape()));
  }
  if (maxval < 1 || maxval > 255) throw DataError("netpbm: maxval must lie in [1,255]");
  const int channels = image.dim(0), height = image.dim(1), width = image.dim(2);
  std::string header = (channels == 1 ? "P5\n" : "P6\n") + std::to_string(width) + " " +
                       std::to_string(height) + "\n" + std::to_string(maxval) + "\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  bytes.reserve(bytes.size() + static_cast<size_t>(width) * height * channels);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      for (int c = 0; c < channels; ++c) {
        const double v = std::min(1.0, std::max(0.0, image.at({c, y, x})));
        bytes.push_back(static_cast<std::uint8_t>(std::lround(v * maxval)));
      }
    }
  }
  return bytes;
}

}  // namespace mlwc
