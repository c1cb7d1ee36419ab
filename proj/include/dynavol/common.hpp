// Copyright (c) 2026 dynavol authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace dynavol {

// ---------------------------------------------------------------------------
// Errors. Every failure in the library carries one of four kinds so the CLI
// can map it to a distinct exit code.
// ---------------------------------------------------------------------------

enum class ErrorKind { Config, Data, Checkpoint, Numeric };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void throw_config(const std::string& msg) { throw Error(ErrorKind::Config, msg); }
[[noreturn]] inline void throw_data(const std::string& msg) { throw Error(ErrorKind::Data, msg); }
[[noreturn]] inline void throw_checkpoint(const std::string& msg) { throw Error(ErrorKind::Checkpoint, msg); }
[[noreturn]] inline void throw_numeric(const std::string& msg) { throw Error(ErrorKind::Numeric, msg); }

inline void check(bool cond, ErrorKind kind, const std::string& msg) {
  if (!cond) throw Error(kind, msg);
}

// ---------------------------------------------------------------------------
// Small vector math. Nothing fancy; the heavy lifting happens in the
// autodiff arrays, these are for cameras, trajectories and bookkeeping.
// ---------------------------------------------------------------------------

struct Vec3 {
  double x = 0, y = 0, z = 0;

  Vec3() = default;
  Vec3(double x_, double y_, double z_) : x(x_), y(y_), z(z_) {}

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
  Vec3 operator-() const { return {-x, -y, -z}; }
  Vec3& operator+=(const Vec3& o) { x += o.x; y += o.y; z += o.z; return *this; }

  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  Vec3 cross(const Vec3& o) const {
    return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
  }
  double norm() const { return std::sqrt(dot(*this)); }
  Vec3 normalized() const {
    double n = norm();
    return n > 0 ? *this / n : Vec3{0, 0, 0};
  }
  double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }

struct Aabb {
  Vec3 lo, hi;

  Vec3 extent() const { return hi - lo; }
  Vec3 center() const { return (lo + hi) * 0.5; }
  double diameter() const { return extent().norm(); }
  bool contains(const Vec3& p) const {
    return p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y && p.z >= lo.z && p.z <= hi.z;
  }
  bool degenerate() const { return !(hi.x > lo.x && hi.y > lo.y && hi.z > lo.z); }

  // Slab intersection with ray o + t*d. Returns false when the ray misses.
  bool clip_ray(const Vec3& o, const Vec3& d, double& tmin, double& tmax) const {
    tmin = 0;
    tmax = 1e30;
    for (int a = 0; a < 3; a++) {
      double da = d[a], oa = o[a], l = lo[a], h = hi[a];
      if (std::abs(da) < 1e-12) {
        if (oa < l || oa > h) return false;
        continue;
      }
      double t0 = (l - oa) / da, t1 = (h - oa) / da;
      if (t0 > t1) std::swap(t0, t1);
      tmin = std::max(tmin, t0);
      tmax = std::min(tmax, t1);
    }
    return tmin < tmax;
  }
};

// Row-major 4x4 transform (camera-to-world).
struct Mat4 {
  std::array<double, 16> m{};

  static Mat4 identity() {
    Mat4 r;
    r.m = {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};
    return r;
  }
  double at(int r, int c) const { return m[r * 4 + c]; }
  double& at(int r, int c) { return m[r * 4 + c]; }

  Vec3 transform_point(const Vec3& p) const {
    return {at(0, 0) * p.x + at(0, 1) * p.y + at(0, 2) * p.z + at(0, 3),
            at(1, 0) * p.x + at(1, 1) * p.y + at(1, 2) * p.z + at(1, 3),
            at(2, 0) * p.x + at(2, 1) * p.y + at(2, 2) * p.z + at(2, 3)};
  }
  Vec3 rotate(const Vec3& v) const {
    return {at(0, 0) * v.x + at(0, 1) * v.y + at(0, 2) * v.z,
            at(1, 0) * v.x + at(1, 1) * v.y + at(1, 2) * v.z,
            at(2, 0) * v.x + at(2, 1) * v.y + at(2, 2) * v.z};
  }
  Vec3 translation() const { return {at(0, 3), at(1, 3), at(2, 3)}; }

  // Inverse assuming the upper-left block is a rotation.
  Mat4 rigid_inverse() const {
    Mat4 r = identity();
    for (int i = 0; i < 3; i++)
      for (int j = 0; j < 3; j++) r.at(i, j) = at(j, i);
    Vec3 t = translation();
    Vec3 ti = r.rotate(t);
    r.at(0, 3) = -ti.x;
    r.at(1, 3) = -ti.y;
    r.at(2, 3) = -ti.z;
    return r;
  }
};

// Rotation by `angle` around unit axis through the origin (Rodrigues).
inline Mat4 axis_angle(const Vec3& axis, double angle) {
  Vec3 u = axis.normalized();
  double c = std::cos(angle), s = std::sin(angle), t = 1 - c;
  Mat4 r = Mat4::identity();
  r.at(0, 0) = c + u.x * u.x * t;
  r.at(0, 1) = u.x * u.y * t - u.z * s;
  r.at(0, 2) = u.x * u.z * t + u.y * s;
  r.at(1, 0) = u.y * u.x * t + u.z * s;
  r.at(1, 1) = c + u.y * u.y * t;
  r.at(1, 2) = u.y * u.z * t - u.x * s;
  r.at(2, 0) = u.z * u.x * t - u.y * s;
  r.at(2, 1) = u.z * u.y * t + u.x * s;
  r.at(2, 2) = c + u.z * u.z * t;
  return r;
}

// ---------------------------------------------------------------------------
// Deterministic RNG. A small PCG32 variant with explicit 128 bits of state so
// checkpoints can save and restore it exactly. Distribution helpers are part
// of this struct on purpose: std:: distributions are not bit-stable across
// standard library implementations.
// ---------------------------------------------------------------------------

struct Rng {
  uint64_t state = 0x853c49e6748fea9bULL;
  uint64_t inc = 0xda3e39cb94b95bdbULL;

  Rng() = default;
  explicit Rng(uint64_t seed, uint64_t stream = 0) { reseed(seed, stream); }

  void reseed(uint64_t seed, uint64_t stream = 0) {
    state = 0;
    inc = (stream << 1u) | 1u;
    next_u32();
    state += seed;
    next_u32();
  }

  uint32_t next_u32() {
    uint64_t old = state;
    state = old * 6364136223846793005ULL + inc;
    uint32_t xorshifted = uint32_t(((old >> 18u) ^ old) >> 27u);
    uint32_t rot = uint32_t(old >> 59u);
    return (xorshifted >> rot) | (xorshifted << ((-rot) & 31u));
  }

  // Uniform in [0, 1) with 32-bit resolution.
  double uniform() { return next_u32() * (1.0 / 4294967296.0); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  uint32_t below(uint32_t n) { return uint32_t((uint64_t(next_u32()) * n) >> 32); }

  // Box-Muller.
  double normal() {
    double u1 = uniform(), u2 = uniform();
    if (u1 <= 0) u1 = 1e-12;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  Rng fork(uint64_t tag) const {
    Rng r;
    r.reseed(state ^ (0x9e3779b97f4a7c15ULL * (tag + 1)), inc >> 1);
    return r;
  }
};

// printf-style helper returning std::string.
template <typename... Args>
inline std::string strfmt(const char* fmt, Args... args) {
  int n = std::snprintf(nullptr, 0, fmt, args...);
  std::string s(size_t(n), '\0');
  std::snprintf(s.data(), size_t(n) + 1, fmt, args...);
  return s;
}

// Canonical double formatting used by metric logs and manifests: shortest
// representation that round-trips.
inline std::string fmt_double(double v) { return strfmt("%.17g", v); }

}  // namespace dynavol
