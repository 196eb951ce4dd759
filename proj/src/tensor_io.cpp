#include "hdgt/tensor_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include "hdgt/errors.hpp"

namespace hdgt {

namespace {

void put_u32le(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32le(std::istream& is, const std::string& path) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) {
    throw ConfigError("truncated tensor file: " + path);
  }
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f64le(std::ostream& os, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

double get_f64le(std::istream& is, const std::string& path) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) {
    throw ConfigError("truncated tensor file: " + path);
  }
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

std::ifstream open_input(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw MissingArtifactError("cannot open " + path);
  return is;
}

std::ofstream open_output(const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw MissingArtifactError("cannot write " + path);
  return os;
}

// Reads one whitespace/comment-delimited ASCII token from a PNM header.
std::string pnm_token(std::istream& is, const std::string& path) {
  std::string tok;
  int ch;
  while ((ch = is.get()) != EOF) {
    if (ch == '#') {
      while ((ch = is.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  if (tok.empty()) throw ConfigError("truncated image header: " + path);
  return tok;
}

std::size_t pnm_dim(std::istream& is, const std::string& path) {
  const std::string tok = pnm_token(is, path);
  try {
    const long long v = std::stoll(tok);
    if (v <= 0) throw ConfigError("bad image dimension in " + path);
    return static_cast<std::size_t>(v);
  } catch (const std::invalid_argument&) {
    throw ConfigError("bad image header token '" + tok + "' in " + path);
  }
}

unsigned char quantize(double v) {
  const double c = std::min(1.0, std::max(0.0, v));
  return static_cast<unsigned char>(std::lround(c * 255.0));
}

}  // namespace

void save_tensor(const std::string& path, const Tensor& t) {
  std::ofstream os = open_output(path);
  os.write("HDT1", 4);
  put_u32le(os, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape) put_u32le(os, static_cast<std::uint32_t>(d));
  for (double v : t.data) put_f64le(os, v);
  if (!os) throw MissingArtifactError("write failed: " + path);
}

Tensor load_tensor(const std::string& path) {
  std::ifstream is = open_input(path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "HDT1", 4) != 0) {
    throw ConfigError("not an HDT1 tensor file: " + path);
  }
  const std::uint32_t rank = get_u32le(is, path);
  if (rank > 8) throw ConfigError("implausible tensor rank in " + path);
  std::vector<std::size_t> shape(rank);
  for (auto& d : shape) d = get_u32le(is, path);
  Tensor t(shape);
  for (double& v : t.data) v = get_f64le(is, path);
  return t;
}

void save_ppm(const std::string& path, const Tensor& img) {
  if (img.rank() != 3 || img.shape[2] != 3) {
    throw ShapeError("save_ppm: image must be [h, w, 3], got " + shape_str(img.shape));
  }
  const std::size_t h = img.shape[0], w = img.shape[1];
  std::ofstream os = open_output(path);
  os << "P6\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> row(w * 3);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c)
      for (std::size_t q = 0; q < 3; ++q) row[c * 3 + q] = quantize(img(r, c, q));
    os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!os) throw MissingArtifactError("write failed: " + path);
}

Tensor load_ppm(const std::string& path) {
  std::ifstream is = open_input(path);
  if (pnm_token(is, path) != "P6") throw ConfigError("not a binary PPM (P6): " + path);
  const std::size_t w = pnm_dim(is, path), h = pnm_dim(is, path);
  const std::size_t maxval = pnm_dim(is, path);
  if (maxval != 255) throw ConfigError("unsupported PPM maxval in " + path);
  Tensor img({h, w, 3});
  std::vector<unsigned char> row(w * 3);
  for (std::size_t r = 0; r < h; ++r) {
    if (!is.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()))) {
      throw ConfigError("truncated PPM payload: " + path);
    }
    for (std::size_t c = 0; c < w; ++c)
      for (std::size_t q = 0; q < 3; ++q) img(r, c, q) = row[c * 3 + q] / 255.0;
  }
  return img;
}

void save_pgm_mask(const std::string& path, const Tensor& mask) {
  if (mask.rank() != 2) {
    throw ShapeError("save_pgm_mask: mask must be [h, w], got " + shape_str(mask.shape));
  }
  const std::size_t h = mask.shape[0], w = mask.shape[1];
  std::ofstream os = open_output(path);
  os << "P5\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> row(w);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) row[c] = mask(r, c) > 0.5 ? 255 : 0;
    os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!os) throw MissingArtifactError("write failed: " + path);
}

void save_pgm_gray(const std::string& path, const Tensor& img) {
  if (img.rank() != 2) {
    throw ShapeError("save_pgm_gray: image must be [h, w], got " + shape_str(img.shape));
  }
  const std::size_t h = img.shape[0], w = img.shape[1];
  std::ofstream os = open_output(path);
  os << "P5\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> row(w);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const double v = std::min(1.0, std::max(0.0, img(r, c)));
      row[c] = static_cast<unsigned char>(v * 255.0 + 0.5);
    }
    os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!os) throw MissingArtifactError("write failed: " + path);
}

Tensor load_pgm_mask(const std::string& path) {
  std::ifstream is = open_input(path);
  if (pnm_token(is, path) != "P5") throw ConfigError("not a binary PGM (P5): " + path);
  const std::size_t w = pnm_dim(is, path), h = pnm_dim(is, path);
  const std::size_t maxval = pnm_dim(is, path);
  if (maxval != 255) throw ConfigError("unsupported PGM maxval in " + path);
  Tensor mask({h, w});
  std::vector<unsigned char> row(w);
  for (std::size_t r = 0; r < h; ++r) {
    if (!is.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()))) {
      throw ConfigError("truncated PGM payload: " + path);
    }
    for (std::size_t c = 0; c < w; ++c) mask(r, c) = row[c] >= 128 ? 1.0 : 0.0;
  }
  return mask;
}

}  // namespace hdgt
