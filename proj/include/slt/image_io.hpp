#pragma once
// Binary PPM (P6) / PGM (P5) dumps for reconstructions, per-slot means, and
// masks. Values must lie in [0,1]; bytes are round(255 * v), row-major.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace slt {
namespace image_detail {

template <typename S>
std::vector<uint8_t> quantize(const Tensor<S>& img, int64_t channels,
                              const std::string& what) {
  const auto& v = img.data();
  std::vector<uint8_t> bytes(v.size());
  for (size_t i = 0; i < v.size(); ++i) {
    double x = static_cast<double>(v[i]);
    check(std::isfinite(x) && x >= 0.0 && x <= 1.0, what, ": value ", x,
          " at flat index ", i, " is outside [0,1]");
    bytes[i] = static_cast<uint8_t>(std::lround(x * 255.0));
  }
  check(static_cast<int64_t>(bytes.size()) % channels == 0, what,
        ": size not divisible by channel count");
  return bytes;
}

inline void write_binary(const std::string& path, const std::string& header,
                         const std::vector<uint8_t>& bytes) {
  FILE* f = std::fopen(path.c_str(), "wb");
  check(f != nullptr, "image: cannot open '", path, "' for writing");
  std::fwrite(header.data(), 1, header.size(), f);
  std::fwrite(bytes.data(), 1, bytes.size(), f);
  std::fclose(f);
}

inline std::string header(const char* magic, int64_t w, int64_t h) {
  return std::string(magic) + "\n" + std::to_string(w) + " " +
         std::to_string(h) + "\n255\n";
}

}  // namespace image_detail

// img: [H,W,3], values in [0,1].
template <typename S>
void write_ppm(const std::string& path, const Tensor<S>& img) {
  check(img.rank() == 3 && img.dim(2) == 3,
        "write_ppm: want [H,W,3], got ", shape_str(img.shape()));
  image_detail::write_binary(
      path, image_detail::header("P6", img.dim(1), img.dim(0)),
      image_detail::quantize(img, 3, "write_ppm"));
}

// img: [H,W] or [H,W,1], values in [0,1].
template <typename S>
void write_pgm(const std::string& path, const Tensor<S>& img) {
  check((img.rank() == 2) || (img.rank() == 3 && img.dim(2) == 1),
        "write_pgm: want [H,W] or [H,W,1], got ", shape_str(img.shape()));
  image_detail::write_binary(
      path, image_detail::header("P5", img.dim(1), img.dim(0)),
      image_detail::quantize(img, 1, "write_pgm"));
}

namespace image_detail {

inline void skip_space(FILE* f) {
  int c = std::fgetc(f);
  while (c == ' ' || c == '\n' || c == '\r' || c == '\t') c = std::fgetc(f);
  std::ungetc(c, f);
}

inline int64_t read_int(FILE* f, const std::string& path) {
  skip_space(f);
  int64_t x = 0;
  int c = std::fgetc(f);
  check(c >= '0' && c <= '9', "image '", path, "': malformed header");
  while (c >= '0' && c <= '9') {
    x = 10 * x + (c - '0');
    c = std::fgetc(f);
  }
  std::ungetc(c, f);
  return x;
}

template <typename S>
Tensor<S> read_netpbm(const std::string& path, const char* magic,
                      int64_t channels) {
  FILE* f = std::fopen(path.c_str(), "rb");
  check(f != nullptr, "image: cannot open '", path, "'");
  struct Closer {
    FILE* f;
    ~Closer() { std::fclose(f); }
  } closer{f};
  char m[2];
  check(std::fread(m, 1, 2, f) == 2 && m[0] == magic[0] && m[1] == magic[1],
        "image '", path, "': expected ", magic);
  int64_t w = read_int(f, path);
  int64_t h = read_int(f, path);
  int64_t maxval = read_int(f, path);
  check(maxval == 255, "image '", path, "': maxval ", maxval,
        " unsupported (want 255)");
  int c = std::fgetc(f);
  check(c == ' ' || c == '\n' || c == '\r' || c == '\t', "image '", path,
        "': missing whitespace after maxval");
  std::vector<uint8_t> bytes(static_cast<size_t>(h * w * channels));
  check(std::fread(bytes.data(), 1, bytes.size(), f) == bytes.size(),
        "image '", path, "': truncated pixel data");
  Tensor<S> out = channels == 1 ? Tensor<S>::zeros({h, w})
                                : Tensor<S>::zeros({h, w, channels});
  auto& v = out.data();
  for (size_t i = 0; i < bytes.size(); ++i)
    v[i] = static_cast<S>(bytes[i] / 255.0);
  return out;
}

}  // namespace image_detail

// Reads a binary PPM written by write_ppm back as [H,W,3] in [0,1].
template <typename S>
Tensor<S> read_ppm(const std::string& path) {
  return image_detail::read_netpbm<S>(path, "P6", 3);
}

// Reads a binary PGM written by write_pgm back as [H,W] in [0,1].
template <typename S>
Tensor<S> read_pgm(const std::string& path) {
  return image_detail::read_netpbm<S>(path, "P5", 1);
}

}  // namespace slt
