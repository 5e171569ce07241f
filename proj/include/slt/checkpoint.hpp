#pragma once
// Binary checkpoints: magic "SLTC", u32 version, then the named parameters
// (u16 name length, name bytes, u8 dtype, u8 rank, rank x u32 dims,
// little-endian f32 payload), the optimizer moments in the same record form
// (names prefixed "m:" / "v:"), the training RNG state, and the step count.
// Save -> load -> save is byte-identical.

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "module.hpp"
#include "optim.hpp"
#include "rng.hpp"

namespace slt {
namespace ckpt_detail {

constexpr uint32_t kVersion = 1;
constexpr uint8_t kDtypeF32 = 0;

struct Record {
  std::string name;
  std::vector<int64_t> dims;
  std::vector<float> data;
};

inline void put_u16(FILE* f, uint16_t x) {
  uint8_t b[2] = {static_cast<uint8_t>(x), static_cast<uint8_t>(x >> 8)};
  std::fwrite(b, 1, 2, f);
}
inline void put_u32(FILE* f, uint32_t x) {
  uint8_t b[4] = {static_cast<uint8_t>(x), static_cast<uint8_t>(x >> 8),
                  static_cast<uint8_t>(x >> 16), static_cast<uint8_t>(x >> 24)};
  std::fwrite(b, 1, 4, f);
}
inline void put_u64(FILE* f, uint64_t x) {
  put_u32(f, static_cast<uint32_t>(x));
  put_u32(f, static_cast<uint32_t>(x >> 32));
}
inline void put_f32(FILE* f, float x) {
  uint32_t bits;
  std::memcpy(&bits, &x, 4);
  put_u32(f, bits);
}

inline bool get_bytes(FILE* f, uint8_t* out, size_t n) {
  return std::fread(out, 1, n, f) == n;
}
inline bool get_u16(FILE* f, uint16_t& x) {
  uint8_t b[2];
  if (!get_bytes(f, b, 2)) return false;
  x = static_cast<uint16_t>(b[0] | (b[1] << 8));
  return true;
}
inline bool get_u32(FILE* f, uint32_t& x) {
  uint8_t b[4];
  if (!get_bytes(f, b, 4)) return false;
  x = static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
      (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
  return true;
}
inline bool get_u64(FILE* f, uint64_t& x) {
  uint32_t lo, hi;
  if (!get_u32(f, lo) || !get_u32(f, hi)) return false;
  x = static_cast<uint64_t>(lo) | (static_cast<uint64_t>(hi) << 32);
  return true;
}
inline bool get_f32(FILE* f, float& x) {
  uint32_t bits;
  if (!get_u32(f, bits)) return false;
  std::memcpy(&x, &bits, 4);
  return true;
}

inline void write_record(FILE* f, const std::string& name,
                         const std::vector<int64_t>& dims,
                         const std::vector<float>& data) {
  check(name.size() <= 0xffff, "checkpoint: parameter name too long");
  put_u16(f, static_cast<uint16_t>(name.size()));
  std::fwrite(name.data(), 1, name.size(), f);
  std::fputc(kDtypeF32, f);
  check(dims.size() <= 0xff, "checkpoint: rank too large");
  std::fputc(static_cast<int>(dims.size()), f);
  for (int64_t d : dims) put_u32(f, static_cast<uint32_t>(d));
  for (float x : data) put_f32(f, x);
}

inline Record read_record(FILE* f, const std::string& path) {
  Record r;
  uint16_t name_len;
  check(get_u16(f, name_len), "checkpoint '", path, "': truncated record");
  r.name.resize(name_len);
  check(name_len == 0 ||
            get_bytes(f, reinterpret_cast<uint8_t*>(&r.name[0]), name_len),
        "checkpoint '", path, "': truncated name");
  int dtype = std::fgetc(f);
  check(dtype == kDtypeF32, "checkpoint '", path, "': parameter '", r.name,
        "' has unsupported dtype ", dtype);
  int rank = std::fgetc(f);
  check(rank >= 0, "checkpoint '", path, "': truncated rank");
  int64_t n = 1;
  for (int i = 0; i < rank; ++i) {
    uint32_t d;
    check(get_u32(f, d), "checkpoint '", path, "': truncated dims");
    r.dims.push_back(static_cast<int64_t>(d));
    n *= static_cast<int64_t>(d);
  }
  r.data.resize(static_cast<size_t>(n));
  for (auto& x : r.data)
    check(get_f32(f, x), "checkpoint '", path, "': truncated payload for '",
          r.name, "'");
  return r;
}

inline std::string shape_text(const std::vector<int64_t>& dims) {
  std::string s = "[";
  for (size_t i = 0; i < dims.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(dims[i]);
  }
  return s + "]";
}

}  // namespace ckpt_detail

template <typename S>
void checkpoint_save(const std::string& path, const ParamStore<S>& ps,
                     const Adam<S>& opt, const Rng& rng, int64_t step) {
  using namespace ckpt_detail;
  FILE* f = std::fopen(path.c_str(), "wb");
  check(f != nullptr, "checkpoint: cannot open '", path, "' for writing");
  std::fwrite("SLTC", 1, 4, f);
  put_u32(f, kVersion);
  put_u32(f, static_cast<uint32_t>(ps.size()));
  std::vector<float> buf;
  for (size_t i = 0; i < ps.size(); ++i) {
    const auto& p = ps.param(i);
    buf.assign(p.data().begin(), p.data().end());
    write_record(f, ps.name(i), p.shape(), buf);
  }
  check(opt.m.size() == ps.size(),
        "checkpoint: optimizer does not match the parameter store");
  put_u32(f, static_cast<uint32_t>(2 * ps.size()));
  for (size_t i = 0; i < ps.size(); ++i) {
    buf.assign(opt.m[i].begin(), opt.m[i].end());
    write_record(f, "m:" + ps.name(i), ps.param(i).shape(), buf);
  }
  for (size_t i = 0; i < ps.size(); ++i) {
    buf.assign(opt.v[i].begin(), opt.v[i].end());
    write_record(f, "v:" + ps.name(i), ps.param(i).shape(), buf);
  }
  put_u64(f, static_cast<uint64_t>(opt.t));
  put_u64(f, rng.key());
  put_u64(f, rng.counter());
  put_u64(f, static_cast<uint64_t>(step));
  std::fclose(f);
}

// Restores into an existing, identically configured model/optimizer pair.
// Any name or shape disagreement is an error naming the parameter.
template <typename S>
int64_t checkpoint_load(const std::string& path, ParamStore<S>& ps,
                        Adam<S>& opt, Rng& rng) {
  using namespace ckpt_detail;
  FILE* f = std::fopen(path.c_str(), "rb");
  check(f != nullptr, "checkpoint: cannot open '", path, "'");
  struct Closer {
    FILE* f;
    ~Closer() { std::fclose(f); }
  } closer{f};

  uint8_t magic[4];
  check(get_bytes(f, magic, 4) && std::memcmp(magic, "SLTC", 4) == 0,
        "checkpoint '", path, "': bad magic");
  uint32_t version;
  check(get_u32(f, version), "checkpoint '", path, "': truncated header");
  check(version == kVersion, "checkpoint '", path, "': version ", version,
        " but this build reads ", kVersion);
  uint32_t n_params;
  check(get_u32(f, n_params), "checkpoint '", path, "': truncated header");
  check(n_params == ps.size(), "checkpoint '", path, "': holds ", n_params,
        " parameters but the model has ", ps.size());

  auto restore = [&](const Record& r, const std::string& name,
                     const std::vector<int64_t>& want_shape, auto& dst) {
    check(r.name == name, "checkpoint '", path, "': expected parameter '",
          name, "', found '", r.name, "'");
    check(r.dims == want_shape, "checkpoint '", path, "': parameter '", name,
          "' has shape ", shape_text(r.dims), " but the model wants ",
          shape_text(want_shape));
    for (size_t j = 0; j < dst.size(); ++j) dst[j] = static_cast<S>(r.data[j]);
  };

  for (size_t i = 0; i < ps.size(); ++i)
    restore(read_record(f, path), ps.name(i), ps.param(i).shape(),
            ps.param(i).data());

  uint32_t n_moments;
  check(get_u32(f, n_moments), "checkpoint '", path, "': truncated moments");
  check(n_moments == 2 * ps.size(), "checkpoint '", path, "': holds ",
        n_moments, " moment records but the optimizer wants ", 2 * ps.size());
  check(opt.m.size() == ps.size(),
        "checkpoint: optimizer does not match the parameter store");
  for (size_t i = 0; i < ps.size(); ++i)
    restore(read_record(f, path), "m:" + ps.name(i), ps.param(i).shape(),
            opt.m[i]);
  for (size_t i = 0; i < ps.size(); ++i)
    restore(read_record(f, path), "v:" + ps.name(i), ps.param(i).shape(),
            opt.v[i]);

  uint64_t opt_t, key, counter, step;
  check(get_u64(f, opt_t) && get_u64(f, key) && get_u64(f, counter) &&
            get_u64(f, step),
        "checkpoint '", path, "': truncated tail");
  opt.t = static_cast<int64_t>(opt_t);
  rng.set_state(key, counter);
  return static_cast<int64_t>(step);
}

}  // namespace slt
