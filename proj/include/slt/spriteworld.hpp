#pragma once

// Synthetic sprite-video world: colored shapes moving linearly over a gray
// background, bouncing specularly off frame edges.  Sprite 0 is the "snitch"
// (gold circle, drawn first so other sprites can occlude it); labels are the
// grid cell of its final position and its dominant motion direction.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "common.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace slt {

constexpr int64_t kActionClasses = 9;  // 8 compass directions + stationary
constexpr double kBackgroundGray = 0.3;

struct WorldConfig {
  int64_t t = 8, h = 24, w = 24, grid = 6;
  int64_t objects_min = 2, objects_max = 4;
  double size_min = 0.08, size_max = 0.18;
  double speed_min = 0.01, speed_max = 0.05;
};

enum class SpriteShape { Square = 0, Circle = 1, Triangle = 2 };

struct Sprite {
  SpriteShape shape;
  double r, g, b;
  double u, v;    // center, in [0,1) x [0,1)
  double du, dv;  // per-frame velocity
  double size;    // half-extent / radius as a fraction of the frame
};

struct Scene {
  std::vector<Sprite> sprites;  // sprites[0] is the snitch
};

namespace world_detail {

constexpr double kPi = 3.14159265358979323846;

// Distractor palette; keeps clear of the snitch gold and the gray background.
inline const double kPalette[7][3] = {
    {0.85, 0.10, 0.10}, {0.10, 0.75, 0.20}, {0.15, 0.30, 0.90},
    {0.10, 0.80, 0.80}, {0.85, 0.15, 0.80}, {0.45, 0.20, 0.85},
    {0.95, 0.95, 0.95}};

inline void reflect_axis(double& x, double& dx) {
  for (int guard = 0; guard < 8 && (x < 0.0 || x >= 1.0); ++guard) {
    if (x < 0.0) {
      x = -x;
      dx = -dx;
    } else if (x >= 1.0) {
      x = 2.0 - x;
      dx = -dx;
    }
  }
  if (x < 0.0 || x >= 1.0) x = std::min(std::max(x, 0.0), 1.0 - 1e-9);
}

inline bool inside_triangle(double px, double py, double u, double v,
                            double s) {
  // upward-pointing triangle: apex above center, base below
  double ax = u, ay = v - s;
  double bx = u - 0.866 * s, by = v + 0.5 * s;
  double cx = u + 0.866 * s, cy = v + 0.5 * s;
  auto cross = [](double ox, double oy, double x1, double y1, double x2,
                  double y2) {
    return (x1 - ox) * (y2 - oy) - (y1 - oy) * (x2 - ox);
  };
  double d1 = cross(ax, ay, bx, by, px, py);
  double d2 = cross(bx, by, cx, cy, px, py);
  double d3 = cross(cx, cy, ax, ay, px, py);
  bool neg = d1 < 0 || d2 < 0 || d3 < 0;
  bool pos = d1 > 0 || d2 > 0 || d3 > 0;
  return !(neg && pos);
}

inline bool inside(const Sprite& s, double px, double py) {
  switch (s.shape) {
    case SpriteShape::Square:
      return std::abs(px - s.u) <= s.size && std::abs(py - s.v) <= s.size;
    case SpriteShape::Circle: {
      double dx = px - s.u, dy = py - s.v;
      return dx * dx + dy * dy <= s.size * s.size;
    }
    case SpriteShape::Triangle:
      return inside_triangle(px, py, s.u, s.v, s.size);
  }
  return false;
}

}  // namespace world_detail

// 8-way direction bin of a velocity, or the stationary class.
inline int direction_class(double du, double dv) {
  if (std::sqrt(du * du + dv * dv) < 1e-12)
    return static_cast<int>(kActionClasses) - 1;
  double th = std::atan2(dv, du) + world_detail::kPi / 8.0;
  if (th < 0) th += 2.0 * world_detail::kPi;
  int bin = static_cast<int>(th / (world_detail::kPi / 4.0));
  return bin % 8;
}

inline Scene make_scene(Rng& rng, const WorldConfig& cfg) {
  check(cfg.objects_min >= 1 && cfg.objects_max >= cfg.objects_min,
        "world: bad object count range");
  check(cfg.speed_max <= 0.5, "world: speed_max above 0.5 breaks bouncing");
  Scene scene;
  int64_t n =
      cfg.objects_min + rng.next_below(cfg.objects_max - cfg.objects_min + 1);
  for (int64_t i = 0; i < n; ++i) {
    Sprite s;
    if (i == 0) {
      s.shape = SpriteShape::Circle;  // snitch: always the gold circle
      s.r = 1.0;
      s.g = 0.84;
      s.b = 0.10;
    } else {
      s.shape = static_cast<SpriteShape>(rng.next_below(3));
      const double* c = world_detail::kPalette[rng.next_below(7)];
      s.r = c[0];
      s.g = c[1];
      s.b = c[2];
    }
    s.size = rng.uniform(cfg.size_min, cfg.size_max);
    s.u = rng.next_double();
    s.v = rng.next_double();
    double speed = rng.uniform(cfg.speed_min, cfg.speed_max);
    double angle = rng.uniform(0.0, 2.0 * world_detail::kPi);
    s.du = speed * std::cos(angle);
    s.dv = speed * std::sin(angle);
    scene.sprites.push_back(s);
  }
  return scene;
}

// One step of linear motion with specular wall reflection; |velocity| is
// preserved, only signs flip.
inline void step_scene(Scene& scene) {
  for (auto& s : scene.sprites) {
    s.u += s.du;
    s.v += s.dv;
    world_detail::reflect_axis(s.u, s.du);
    world_detail::reflect_axis(s.v, s.dv);
  }
}

// Rasterize at pixel centers, no anti-aliasing.  Later sprites overdraw
// earlier ones, so the snitch (index 0) sits at the bottom of the stack.
inline std::vector<double> render_frame(const Scene& scene, int64_t h,
                                        int64_t w) {
  std::vector<double> img(static_cast<size_t>(h * w * 3), kBackgroundGray);
  for (const auto& s : scene.sprites) {
    int64_t y0 = std::max<int64_t>(
        0, static_cast<int64_t>(std::floor((s.v - s.size) * static_cast<double>(h))));
    int64_t y1 = std::min<int64_t>(
        h - 1,
        static_cast<int64_t>(std::ceil((s.v + s.size) * static_cast<double>(h))));
    int64_t x0 = std::max<int64_t>(
        0, static_cast<int64_t>(std::floor((s.u - s.size) * static_cast<double>(w))));
    int64_t x1 = std::min<int64_t>(
        w - 1,
        static_cast<int64_t>(std::ceil((s.u + s.size) * static_cast<double>(w))));
    for (int64_t y = y0; y <= y1; ++y) {
      double py = (static_cast<double>(y) + 0.5) / static_cast<double>(h);
      for (int64_t x = x0; x <= x1; ++x) {
        double px = (static_cast<double>(x) + 0.5) / static_cast<double>(w);
        if (world_detail::inside(s, px, py)) {
          size_t at = static_cast<size_t>((y * w + x) * 3);
          img[at] = s.r;
          img[at + 1] = s.g;
          img[at + 2] = s.b;
        }
      }
    }
  }
  return img;
}

inline int grid_cell_of(double u, double v, int64_t grid) {
  int64_t col = std::min<int64_t>(
      static_cast<int64_t>(u * static_cast<double>(grid)), grid - 1);
  int64_t row = std::min<int64_t>(
      static_cast<int64_t>(v * static_cast<double>(grid)), grid - 1);
  return static_cast<int>(row * grid + col);
}

struct SeqExample {
  std::vector<uint8_t> pixels;  // T*H*W*3, round(255 * value)
  uint16_t grid_cell = 0;
  uint16_t action = 0;
};

// Renders a full sequence; pixels are quantized immediately so in-memory and
// file-loaded data are identical.
inline SeqExample make_sequence(Rng& rng, const WorldConfig& cfg) {
  Scene scene = make_scene(rng, cfg);
  SeqExample ex;
  ex.pixels.reserve(static_cast<size_t>(cfg.t * cfg.h * cfg.w * 3));
  std::vector<int> dir_votes(static_cast<size_t>(kActionClasses), 0);
  for (int64_t t = 0; t < cfg.t; ++t) {
    auto img = render_frame(scene, cfg.h, cfg.w);
    for (double p : img)
      ex.pixels.push_back(static_cast<uint8_t>(std::lround(255.0 * p)));
    if (t + 1 < cfg.t) {
      const Sprite& sn = scene.sprites[0];
      ++dir_votes[static_cast<size_t>(direction_class(sn.du, sn.dv))];
      step_scene(scene);
    }
  }
  const Sprite& snitch = scene.sprites[0];
  ex.grid_cell =
      static_cast<uint16_t>(grid_cell_of(snitch.u, snitch.v, cfg.grid));
  int best = 0;
  for (int a = 1; a < static_cast<int>(kActionClasses); ++a)
    if (dir_votes[static_cast<size_t>(a)] > dir_votes[static_cast<size_t>(best)])
      best = a;  // ties -> smallest class index
  ex.action = static_cast<uint16_t>(best);
  return ex;
}

struct Dataset {
  int64_t t = 0, h = 0, w = 0, grid = 0, actions = kActionClasses;
  uint64_t seed = 0;
  std::vector<SeqExample> seqs;

  int64_t size() const { return static_cast<int64_t>(seqs.size()); }
};

inline Dataset generate_dataset(const WorldConfig& cfg, int64_t n,
                                uint64_t seed) {
  Dataset ds;
  ds.t = cfg.t;
  ds.h = cfg.h;
  ds.w = cfg.w;
  ds.grid = cfg.grid;
  ds.seed = seed;
  Rng root(seed);
  for (int64_t i = 0; i < n; ++i) {
    Rng seq_rng = root.split(static_cast<uint64_t>(i));
    ds.seqs.push_back(make_sequence(seq_rng, cfg));
  }
  return ds;
}

// Dequantized frames of one sequence as a [T,H,W,3] tensor in [0,1].
template <typename S>
Tensor<S> sequence_to_tensor(const Dataset& ds, int64_t i) {
  check(i >= 0 && i < ds.size(), "sequence index ", i, " out of range");
  const auto& px = ds.seqs[static_cast<size_t>(i)].pixels;
  std::vector<S> v(px.size());
  for (size_t j = 0; j < px.size(); ++j)
    v[j] = static_cast<S>(px[j]) / S(255);
  return Tensor<S>::from_data({ds.t, ds.h, ds.w, 3}, std::move(v));
}

// --------------------------------------------------------------------------
// Binary dataset file: magic "SLTV", u32 version, u32 N,T,H,W,G,A, u64 seed,
// then per sequence T*H*W*3 bytes RGB + u16 grid cell + u16 action class.
// All integers little-endian.

namespace world_detail {

inline void put_u32(FILE* f, uint32_t x) {
  uint8_t b[4] = {static_cast<uint8_t>(x), static_cast<uint8_t>(x >> 8),
                  static_cast<uint8_t>(x >> 16), static_cast<uint8_t>(x >> 24)};
  std::fwrite(b, 1, 4, f);
}

inline void put_u64(FILE* f, uint64_t x) {
  put_u32(f, static_cast<uint32_t>(x));
  put_u32(f, static_cast<uint32_t>(x >> 32));
}

inline void put_u16(FILE* f, uint16_t x) {
  uint8_t b[2] = {static_cast<uint8_t>(x), static_cast<uint8_t>(x >> 8)};
  std::fwrite(b, 1, 2, f);
}

inline bool get_bytes(FILE* f, uint8_t* out, size_t n) {
  return std::fread(out, 1, n, f) == n;
}

inline bool get_u32(FILE* f, uint32_t& x) {
  uint8_t b[4];
  if (!get_bytes(f, b, 4)) return false;
  x = static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 |
      static_cast<uint32_t>(b[2]) << 16 | static_cast<uint32_t>(b[3]) << 24;
  return true;
}

inline bool get_u64(FILE* f, uint64_t& x) {
  uint32_t lo, hi;
  if (!get_u32(f, lo) || !get_u32(f, hi)) return false;
  x = static_cast<uint64_t>(hi) << 32 | lo;
  return true;
}

inline bool get_u16(FILE* f, uint16_t& x) {
  uint8_t b[2];
  if (!get_bytes(f, b, 2)) return false;
  x = static_cast<uint16_t>(b[0] | b[1] << 8);
  return true;
}

}  // namespace world_detail

inline void write_dataset(const std::string& path, const Dataset& ds) {
  FILE* f = std::fopen(path.c_str(), "wb");
  check(f != nullptr, "cannot open '", path, "' for writing");
  std::fwrite("SLTV", 1, 4, f);
  world_detail::put_u32(f, 1);  // version
  world_detail::put_u32(f, static_cast<uint32_t>(ds.size()));
  world_detail::put_u32(f, static_cast<uint32_t>(ds.t));
  world_detail::put_u32(f, static_cast<uint32_t>(ds.h));
  world_detail::put_u32(f, static_cast<uint32_t>(ds.w));
  world_detail::put_u32(f, static_cast<uint32_t>(ds.grid));
  world_detail::put_u32(f, static_cast<uint32_t>(ds.actions));
  world_detail::put_u64(f, ds.seed);
  for (const auto& s : ds.seqs) {
    std::fwrite(s.pixels.data(), 1, s.pixels.size(), f);
    world_detail::put_u16(f, s.grid_cell);
    world_detail::put_u16(f, s.action);
  }
  std::fclose(f);
}

inline Dataset read_dataset(const std::string& path) {
  FILE* f = std::fopen(path.c_str(), "rb");
  check(f != nullptr, "cannot open '", path, "'");
  auto fail_close = [&](const std::string& why) {
    std::fclose(f);
    fail("dataset '", path, "': ", why);
  };
  uint8_t magic[4];
  if (!world_detail::get_bytes(f, magic, 4)) fail_close("truncated header");
  if (std::memcmp(magic, "SLTV", 4) != 0) fail_close("bad magic");
  uint32_t version, n, t, h, w, g, a;
  if (!world_detail::get_u32(f, version)) fail_close("truncated header");
  if (version != 1)
    fail_close("unsupported version " + std::to_string(version));
  uint64_t seed;
  if (!world_detail::get_u32(f, n) || !world_detail::get_u32(f, t) ||
      !world_detail::get_u32(f, h) || !world_detail::get_u32(f, w) ||
      !world_detail::get_u32(f, g) || !world_detail::get_u32(f, a) ||
      !world_detail::get_u64(f, seed))
    fail_close("truncated header");
  Dataset ds;
  ds.t = t;
  ds.h = h;
  ds.w = w;
  ds.grid = g;
  ds.actions = a;
  ds.seed = seed;
  size_t frame_bytes = static_cast<size_t>(t) * h * w * 3;
  for (uint32_t i = 0; i < n; ++i) {
    SeqExample ex;
    ex.pixels.resize(frame_bytes);
    if (!world_detail::get_bytes(f, ex.pixels.data(), frame_bytes) ||
        !world_detail::get_u16(f, ex.grid_cell) ||
        !world_detail::get_u16(f, ex.action))
      fail_close("truncated at sequence " + std::to_string(i));
    ds.seqs.push_back(std::move(ex));
  }
  std::fclose(f);
  return ds;
}

}  // namespace slt
