// Copyright (c) 2026 dynavol authors
// SPDX-License-Identifier: Apache-2.0
//
// Post-training scene edits: direct manipulation of the per-slot occupancy
// channels, the slot features, and per-slot trajectory overrides. Edits apply
// to an in-memory copy; persist them as (base checkpoint + edit spec).
//
// Edit spec files are plain text, one edit per line, slots 1-based:
//   remove <slot>
//   swap <slot_i> <slot_j>
//   retrajectory <slot|all> none
//   retrajectory <slot|all> axis <x y z> rate <rad/unit-time> vel <x y z> [center <x y z>]
//   duplicate <slot> offset <dx dy dz>        # lattice units
#pragma once

#include <fstream>
#include <sstream>

#include "dynavol/model.hpp"

namespace dynavol {

struct Edit {
  enum class Kind { Remove, Swap, Retrajectory, Duplicate };
  Kind kind = Kind::Remove;
  int slot = 0;       // 0-based
  int slot2 = 0;      // swap target
  bool all_slots = false;  // retrajectory applied to every slot
  RigidMotion motion;
  Vec3 offset;        // duplicate, lattice units
};

struct EditSpec {
  std::vector<Edit> edits;
};

inline void check_slot(const SceneModel& m, int slot) {
  check(slot >= 0 && slot < m.cfg.num_slots, ErrorKind::Config,
        strfmt("edit: slot %d out of range [1, %d]", slot + 1, m.cfg.num_slots));
}

// Channel goes fully empty; other parameters untouched.
inline void remove_object(SceneModel& m, int slot) {
  check_slot(m, slot);
  size_t nvox = m.grid_spec().dims.nvox();
  std::fill(m.occupancy4.raw.values.begin() + std::ptrdiff_t(size_t(slot) * nvox),
            m.occupancy4.raw.values.begin() + std::ptrdiff_t(size_t(slot + 1) * nvox),
            float(kEmptyRaw));
}

// Exchange the render-time slot feature rows; geometry channels stay put.
inline void swap_slots(SceneModel& m, int i, int j) {
  check_slot(m, i);
  check_slot(m, j);
  if (i == j) return;
  int d = m.cfg.slot_dim;
  auto swap_rows = [&](std::vector<double>& v) {
    for (int c = 0; c < d; c++)
      std::swap(v[size_t(i) * d + c], v[size_t(j) * d + c]);
  };
  swap_rows(m.slots.current);
  swap_rows(m.slots.prev_avg);
  swap_rows(m.slots.accum);
}

// The channel's backward warp becomes the inverse of the given rigid motion.
inline void replace_trajectory(SceneModel& m, int slot, const RigidMotion& motion) {
  check_slot(m, slot);
  motion.validate();
  m.warp_overrides[size_t(slot)] = motion;
}

// softplus inverse in raw space.
inline double inverse_activate(double sigma, double shift) {
  return std::log(std::expm1(sigma)) - shift;
}

// Copy a channel's density into a free (fully empty) channel, translated by
// `offset` lattice cells. Integer offsets copy raw values exactly;
// fractional offsets splat activated densities trilinearly.
inline int duplicate_object(SceneModel& m, int slot, const Vec3& offset) {
  check_slot(m, slot);
  size_t nvox = m.grid_spec().dims.nvox();
  const GridDims& dims = m.grid_spec().dims;
  int free_slot = -1;
  for (int n = 0; n < m.cfg.num_slots && free_slot < 0; n++) {
    bool empty = true;
    for (size_t i = 0; i < nvox && empty; i++)
      empty = m.occupancy4.raw.values[size_t(n) * nvox + i] == float(kEmptyRaw);
    if (empty) free_slot = n;
  }
  check(free_slot >= 0, ErrorKind::Config, "edit: no empty channel available for duplicate");

  const float* src = &m.occupancy4.raw.values[size_t(slot) * nvox];
  float* dst = &m.occupancy4.raw.values[size_t(free_slot) * nvox];
  bool integral = offset.x == std::floor(offset.x) && offset.y == std::floor(offset.y) &&
                  offset.z == std::floor(offset.z);
  if (integral) {
    int ox = int(offset.x), oy = int(offset.y), oz = int(offset.z);
    for (int ix = 0; ix < dims.nx; ix++)
      for (int iy = 0; iy < dims.ny; iy++)
        for (int iz = 0; iz < dims.nz; iz++) {
          float v = src[dims.flat(ix, iy, iz)];
          if (v == float(kEmptyRaw)) continue;
          int tx = ix + ox, ty = iy + oy, tz = iz + oz;
          if (tx < 0 || tx >= dims.nx || ty < 0 || ty >= dims.ny || tz < 0 || tz >= dims.nz)
            continue;
          dst[dims.flat(tx, ty, tz)] = v;
        }
  } else {
    double shift = m.grid_spec().softplus_shift;
    std::vector<double> accum(nvox, 0.0);
    for (int ix = 0; ix < dims.nx; ix++)
      for (int iy = 0; iy < dims.ny; iy++)
        for (int iz = 0; iz < dims.nz; iz++) {
          float v = src[dims.flat(ix, iy, iz)];
          if (v == float(kEmptyRaw)) continue;
          double sigma = activate_density(double(v), shift);
          double gx = ix + offset.x, gy = iy + offset.y, gz = iz + offset.z;
          int bx = int(std::floor(gx)), by = int(std::floor(gy)), bz = int(std::floor(gz));
          double fx = gx - bx, fy = gy - by, fz = gz - bz;
          for (int a = 0; a < 2; a++)
            for (int b = 0; b < 2; b++)
              for (int c = 0; c < 2; c++) {
                int tx = bx + a, ty = by + b, tz = bz + c;
                if (tx < 0 || tx >= dims.nx || ty < 0 || ty >= dims.ny || tz < 0 || tz >= dims.nz)
                  continue;
                double w = (a ? fx : 1 - fx) * (b ? fy : 1 - fy) * (c ? fz : 1 - fz);
                accum[dims.flat(tx, ty, tz)] += w * sigma;
              }
        }
    for (size_t i = 0; i < nvox; i++)
      if (accum[i] > 1e-12) dst[i] = float(inverse_activate(accum[i], shift));
  }

  // the duplicate shares the source object's appearance features
  int d = m.cfg.slot_dim;
  auto copy_row = [&](std::vector<double>& v) {
    for (int c = 0; c < d; c++) v[size_t(free_slot) * d + c] = v[size_t(slot) * d + c];
  };
  copy_row(m.slots.current);
  copy_row(m.slots.prev_avg);
  return free_slot;
}

// Applies the edits in order to a copy; the input model is not modified.
inline SceneModel apply_edits(const SceneModel& model, const EditSpec& spec) {
  SceneModel out = model;
  for (const Edit& e : spec.edits) {
    switch (e.kind) {
      case Edit::Kind::Remove:
        remove_object(out, e.slot);
        break;
      case Edit::Kind::Swap:
        swap_slots(out, e.slot, e.slot2);
        break;
      case Edit::Kind::Retrajectory:
        if (e.all_slots)
          for (int n = 0; n < out.cfg.num_slots; n++) replace_trajectory(out, n, e.motion);
        else
          replace_trajectory(out, e.slot, e.motion);
        break;
      case Edit::Kind::Duplicate:
        duplicate_object(out, e.slot, e.offset);
        break;
    }
  }
  out.assert_finite();
  return out;
}

inline EditSpec parse_edit_spec(const std::string& path) {
  std::ifstream f(path);
  check(f.good(), ErrorKind::Data, "cannot open edit spec: " + path);
  EditSpec spec;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    lineno++;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream ss(line);
    std::string cmd;
    if (!(ss >> cmd)) continue;
    auto bad = [&](const std::string& why) {
      throw_data(strfmt("edit spec %s:%d: %s", path.c_str(), lineno, why.c_str()));
    };
    Edit e;
    if (cmd == "remove") {
      e.kind = Edit::Kind::Remove;
      int s;
      if (!(ss >> s)) bad("remove needs a slot id");
      e.slot = s - 1;
    } else if (cmd == "swap") {
      e.kind = Edit::Kind::Swap;
      int a, b;
      if (!(ss >> a >> b)) bad("swap needs two slot ids");
      e.slot = a - 1;
      e.slot2 = b - 1;
    } else if (cmd == "retrajectory") {
      e.kind = Edit::Kind::Retrajectory;
      std::string target;
      if (!(ss >> target)) bad("retrajectory needs a slot id or 'all'");
      if (target == "all") e.all_slots = true;
      else {
        try {
          e.slot = std::stoi(target) - 1;
        } catch (const std::exception&) {
          bad("retrajectory slot must be an integer or 'all'");
        }
      }
      std::string tok;
      while (ss >> tok) {
        if (tok == "none") {
          e.motion = RigidMotion{};
        } else if (tok == "axis") {
          if (!(ss >> e.motion.axis.x >> e.motion.axis.y >> e.motion.axis.z)) bad("axis needs 3 numbers");
        } else if (tok == "rate") {
          if (!(ss >> e.motion.angle_rate)) bad("rate needs a number");
        } else if (tok == "vel") {
          if (!(ss >> e.motion.translation_velocity.x >> e.motion.translation_velocity.y >>
                e.motion.translation_velocity.z))
            bad("vel needs 3 numbers");
        } else if (tok == "center") {
          if (!(ss >> e.motion.center.x >> e.motion.center.y >> e.motion.center.z))
            bad("center needs 3 numbers");
        } else {
          bad("unknown retrajectory token '" + tok + "'");
        }
      }
      e.motion.validate();
    } else if (cmd == "duplicate") {
      e.kind = Edit::Kind::Duplicate;
      int s;
      std::string tok;
      if (!(ss >> s >> tok) || tok != "offset") bad("duplicate needs '<slot> offset <dx dy dz>'");
      e.slot = s - 1;
      if (!(ss >> e.offset.x >> e.offset.y >> e.offset.z)) bad("offset needs 3 numbers");
    } else {
      bad("unknown edit '" + cmd + "'");
    }
    spec.edits.push_back(e);
  }
  return spec;
}

}  // namespace dynavol
