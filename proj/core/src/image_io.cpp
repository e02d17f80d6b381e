#include "side/image_io.hpp"

#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "side/errors.hpp"

namespace side {
namespace {

std::uint8_t quantize(double v) {
  const double scaled = std::llround(v * 255.0);
  return static_cast<std::uint8_t>(scaled < 0.0 ? 0.0 : (scaled > 255.0 ? 255.0 : scaled));
}

void require_plane(const Tensor& t, std::size_t channels, const char* what) {
  if (t.rank() != 3 || t.extent(0) != channels || t.extent(1) == 0 ||
      t.extent(2) == 0) {
    throw ShapeError(std::string(what) + ": expected " +
                     std::to_string(channels) + "xHxW, got " +
                     shape_str(t.shape()));
  }
}

std::ofstream open_out(const std::string& path, const char* what) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError(std::string(what) + ": cannot open " + path + " for writing");
  return out;
}

// Byte-offset-tracking reader for the Netpbm/PFM header grammar: tokens
// separated by whitespace, '#' starting a comment that runs to end of line.
struct PnmReader {
  std::ifstream in;
  std::string tag;
  std::size_t offset = 0;

  PnmReader(const std::string& path, const char* what) : in(path, std::ios::binary), tag(what) {
    if (!in) throw DataError(tag + ": cannot open " + path);
  }

  [[noreturn]] void fail(const std::string& message, std::size_t at) const {
    throw ParseError(tag + ": " + message, at);
  }

  int get() {
    const int c = in.get();
    if (c != EOF) ++offset;
    return c;
  }

  void expect_magic(const char* magic) {
    std::string got;
    for (const char* p = magic; *p != '\0'; ++p) {
      const int c = get();
      if (c == EOF || static_cast<char>(c) != *p) {
        fail("bad magic (expected \"" + std::string(magic) + "\")", 0);
      }
    }
  }

  void skip_separators() {
    while (true) {
      const int c = in.peek();
      if (c == '#') {
        while (in.peek() != EOF && in.peek() != '\n') get();
      } else if (c != EOF && std::isspace(c) != 0) {
        get();
      } else {
        return;
      }
    }
  }

  std::string token(const char* what) {
    skip_separators();
    const std::size_t start = offset;
    std::string tok;
    while (in.peek() != EOF && std::isspace(in.peek()) == 0 && in.peek() != '#') {
      tok.push_back(static_cast<char>(get()));
    }
    if (tok.empty()) fail(std::string("missing ") + what, start);
    return tok;
  }

  std::size_t parse_dim(const char* what) {
    skip_separators();
    const std::size_t at = offset;
    const std::string tok = token(what);
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(tok, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != tok.size() || v == 0) {
      fail(std::string("invalid ") + what + " \"" + tok + "\"", at);
    }
    return static_cast<std::size_t>(v);
  }

  double parse_scale() {
    skip_separators();
    const std::size_t at = offset;
    const std::string tok = token("scale");
    std::size_t pos = 0;
    double v = 0.0;
    try {
      v = std::stod(tok, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != tok.size() || v == 0.0 || !std::isfinite(v)) {
      fail("invalid scale \"" + tok + "\"", at);
    }
    if (v > 0.0) fail("big-endian payload unsupported (scale " + tok + ")", at);
    return v;
  }

  void expect_maxval() {
    skip_separators();
    const std::size_t at = offset;
    const std::string tok = token("maxval");
    if (tok != "255") fail("unsupported maxval " + tok + " (expected 255)", at);
  }

  // Exactly one whitespace byte separates the header from the payload.
  void enter_payload() {
    const std::size_t at = offset;
    const int c = get();
    if (c == EOF || std::isspace(c) == 0) {
      fail("missing whitespace before payload", at);
    }
  }

  std::vector<std::uint8_t> payload(std::size_t n) {
    std::vector<std::uint8_t> bytes(n);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(n));
    const std::size_t got = static_cast<std::size_t>(in.gcount());
    if (got != n) fail("truncated payload", offset + got);
    offset += n;
    return bytes;
  }
};

float f32_from_le(const std::uint8_t* b) {
  const std::uint32_t bits = static_cast<std::uint32_t>(b[0]) |
                             (static_cast<std::uint32_t>(b[1]) << 8) |
                             (static_cast<std::uint32_t>(b[2]) << 16) |
                             (static_cast<std::uint32_t>(b[3]) << 24);
  return std::bit_cast<float>(bits);
}

void f32_to_le(float v, std::uint8_t* b) {
  const std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
  b[0] = static_cast<std::uint8_t>(bits & 0xff);
  b[1] = static_cast<std::uint8_t>((bits >> 8) & 0xff);
  b[2] = static_cast<std::uint8_t>((bits >> 16) & 0xff);
  b[3] = static_cast<std::uint8_t>((bits >> 24) & 0xff);
}

}  // namespace

void write_ppm(const std::string& path, const Tensor& image) {
  require_plane(image, 3, "ppm");
  const std::size_t h = image.extent(1), w = image.extent(2);
  std::ofstream out = open_out(path, "ppm");
  out << "P6\n" << w << " " << h << "\n255\n";
  const std::vector<double>& v = image.data();
  std::vector<std::uint8_t> row(3 * w);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      for (std::size_t ch = 0; ch < 3; ++ch) {
        row[3 * c + ch] = quantize(v[(ch * h + r) * w + c]);
      }
    }
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw DataError("ppm: write failed for " + path);
}

Tensor read_ppm(const std::string& path) {
  PnmReader rd(path, "ppm");
  rd.expect_magic("P6");
  const std::size_t w = rd.parse_dim("width");
  const std::size_t h = rd.parse_dim("height");
  rd.expect_maxval();
  rd.enter_payload();
  const std::vector<std::uint8_t> bytes = rd.payload(3 * h * w);
  std::vector<double> v(3 * h * w);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      for (std::size_t ch = 0; ch < 3; ++ch) {
        v[(ch * h + r) * w + c] = bytes[(r * w + c) * 3 + ch] / 255.0;
      }
    }
  }
  return Tensor::from_data({3, h, w}, std::move(v));
}

void write_pfm(const std::string& path, const Tensor& depth) {
  require_plane(depth, 1, "pfm");
  const std::size_t h = depth.extent(1), w = depth.extent(2);
  std::ofstream out = open_out(path, "pfm");
  out << "Pf\n" << w << " " << h << "\n-1.0\n";
  const std::vector<double>& v = depth.data();
  std::vector<std::uint8_t> row(4 * w);
  for (std::size_t r = h; r-- > 0;) {  // bottom row first
    for (std::size_t c = 0; c < w; ++c) {
      f32_to_le(static_cast<float>(v[r * w + c]), row.data() + 4 * c);
    }
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw DataError("pfm: write failed for " + path);
}

Tensor read_pfm(const std::string& path) {
  PnmReader rd(path, "pfm");
  rd.expect_magic("Pf");
  const std::size_t w = rd.parse_dim("width");
  const std::size_t h = rd.parse_dim("height");
  const double scale = rd.parse_scale();
  rd.enter_payload();
  const std::vector<std::uint8_t> bytes = rd.payload(4 * h * w);
  const double magnitude = -scale;
  std::vector<double> v(h * w);
  for (std::size_t r = 0; r < h; ++r) {
    const std::size_t file_row = h - 1 - r;
    for (std::size_t c = 0; c < w; ++c) {
      double value = f32_from_le(bytes.data() + 4 * (file_row * w + c));
      if (magnitude != 1.0) value *= magnitude;
      v[r * w + c] = value;
    }
  }
  return Tensor::from_data({1, h, w}, std::move(v));
}

void write_pgm(const std::string& path, const Tensor& gray) {
  require_plane(gray, 1, "pgm");
  const std::size_t h = gray.extent(1), w = gray.extent(2);
  std::ofstream out = open_out(path, "pgm");
  out << "P5\n" << w << " " << h << "\n255\n";
  const std::vector<double>& v = gray.data();
  std::vector<std::uint8_t> row(w);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) row[c] = quantize(v[r * w + c]);
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw DataError("pgm: write failed for " + path);
}

Tensor read_pgm(const std::string& path) {
  PnmReader rd(path, "pgm");
  rd.expect_magic("P5");
  const std::size_t w = rd.parse_dim("width");
  const std::size_t h = rd.parse_dim("height");
  rd.expect_maxval();
  rd.enter_payload();
  const std::vector<std::uint8_t> bytes = rd.payload(h * w);
  std::vector<double> v(h * w);
  for (std::size_t i = 0; i < h * w; ++i) v[i] = bytes[i] / 255.0;
  return Tensor::from_data({1, h, w}, std::move(v));
}

}  // namespace side
