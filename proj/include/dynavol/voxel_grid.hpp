// Copyright (c) 2026 dynavol authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense voxel grids over an axis-aligned bbox, queried by trilinear
// interpolation of raw (pre-activation) values. Density is
// softplus(raw + shift); the shift is fixed at init so the starting density
// is small, and it travels with the grid through checkpoints.
#pragma once

#include <cmath>
#include <vector>

#include "dynavol/autodiff.hpp"
#include "dynavol/common.hpp"

namespace dynavol {

// Raw value standing in for -inf: softplus underflows to exactly 0, so empty
// cells contribute neither density nor gradient.
constexpr double kEmptyRaw = -1000.0;

struct GridDims {
  int nx = 2, ny = 2, nz = 2;
  size_t nvox() const { return size_t(nx) * ny * nz; }
  size_t flat(int ix, int iy, int iz) const { return (size_t(ix) * ny + iy) * nz + iz; }
};

struct GridSpec {
  GridDims dims;
  Aabb bbox;
  double softplus_shift = 0.0;

  void validate() const {
    check(dims.nx >= 2 && dims.ny >= 2 && dims.nz >= 2, ErrorKind::Config,
          "grid resolution must be >= 2 per axis");
    check(!bbox.degenerate(), ErrorKind::Config, "grid bbox is degenerate");
  }
  std::vector<double> lattice_scale() const {
    Vec3 e = bbox.extent();
    return {(dims.nx - 1) / e.x, (dims.ny - 1) / e.y, (dims.nz - 1) / e.z};
  }
  std::vector<double> lattice_offset() const { return {bbox.lo.x, bbox.lo.y, bbox.lo.z}; }
};

// bbox min corner -> (0,0,0); max corner -> (nx-1, ny-1, nz-1); affine.
inline Vec3 world_to_grid(const GridSpec& spec, const Vec3& p) {
  auto s = spec.lattice_scale();
  return {(p.x - spec.bbox.lo.x) * s[0], (p.y - spec.bbox.lo.y) * s[1],
          (p.z - spec.bbox.lo.z) * s[2]};
}

inline Vec3 grid_to_world(const GridSpec& spec, const Vec3& g) {
  auto s = spec.lattice_scale();
  return {spec.bbox.lo.x + g.x / s[0], spec.bbox.lo.y + g.y / s[1], spec.bbox.lo.z + g.z / s[2]};
}

// shift such that softplus(0 + shift) == target.
inline double shift_for_density(double target) { return std::log(std::expm1(target)); }

inline double activate_density(double raw, double shift) {
  double x = raw + shift;
  return x > 30.0 ? x : std::log1p(std::exp(x));
}

// 3D density grid F (one channel).
struct DensityGrid3D {
  GridSpec spec;
  ad::Parameter raw;

  DensityGrid3D() = default;
  DensityGrid3D(std::string name, GridSpec s) : spec(s), raw(std::move(name), {1, int(s.dims.nvox())}) {
    s.validate();
  }
};

// 4D occupancy grid V: one density channel per slot, channel-major storage so
// each channel's interpolation stencil stays within one contiguous plane.
struct OccupancyGrid4D {
  GridSpec spec;
  int channels = 1;
  ad::Parameter raw;

  OccupancyGrid4D() = default;
  OccupancyGrid4D(std::string name, GridSpec s, int n)
      : spec(s), channels(n), raw(std::move(name), {n, int(s.dims.nvox())}) {
    s.validate();
    check(n >= 1, ErrorKind::Config, "occupancy grid needs at least one channel");
    std::fill(raw.values.begin(), raw.values.end(), float(kEmptyRaw));
  }
};

// --- Tape queries --------------------------------------------------------------

// Raw per-channel values at world points [K x 3] (var or const). Out-of-bbox
// points return kEmptyRaw in every channel.
inline ad::Var query_grid_raw(ad::Tape& t, ad::Var grid_var, const GridSpec& spec, ad::Var world_pts) {
  ad::Var lattice = ad::normalize_points(t, world_pts, spec.lattice_scale(), spec.lattice_offset());
  return ad::trilinear_gather(t, grid_var, spec.dims.nx, spec.dims.ny, spec.dims.nz, lattice,
                              kEmptyRaw);
}

inline ad::Var activate_density_op(ad::Tape& t, ad::Var raw, double shift) {
  return ad::softplus(t, ad::add_const(t, raw, shift));
}

// --- Non-tape conveniences (tests, expansion, editing) ---------------------------

// interp over all channels at one world point; N raw values.
inline std::vector<double> interp4(const OccupancyGrid4D& g, const Vec3& x) {
  ad::Tape t(false);
  ad::Var gv = t.param(const_cast<ad::Parameter&>(g.raw), g.channels, int(g.spec.dims.nvox()));
  std::vector<double> p{x.x, x.y, x.z};
  ad::Var pts = t.constant(1, 3, p);
  ad::Var out = query_grid_raw(t, gv, g.spec, pts);
  return t.val(out);
}

inline double interp3(const DensityGrid3D& g, const Vec3& x) {
  ad::Tape t(false);
  ad::Var gv = t.param(const_cast<ad::Parameter&>(g.raw), 1, int(g.spec.dims.nvox()));
  std::vector<double> p{x.x, x.y, x.z};
  ad::Var pts = t.constant(1, 3, p);
  ad::Var out = query_grid_raw(t, gv, g.spec, pts);
  return t.val(out)[0];
}

// World positions of all lattice nodes, [nvox x 3] flattened, same order as
// the grid's spatial index.
inline std::vector<double> lattice_world_positions(const GridSpec& spec) {
  std::vector<double> out;
  out.reserve(spec.dims.nvox() * 3);
  for (int ix = 0; ix < spec.dims.nx; ix++)
    for (int iy = 0; iy < spec.dims.ny; iy++)
      for (int iz = 0; iz < spec.dims.nz; iz++) {
        Vec3 w = grid_to_world(spec, {double(ix), double(iy), double(iz)});
        out.push_back(w.x);
        out.push_back(w.y);
        out.push_back(w.z);
      }
  return out;
}

}  // namespace dynavol
