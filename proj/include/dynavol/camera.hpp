// Copyright (c) 2026 dynavol authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>

#include "dynavol/common.hpp"

namespace dynavol {

// Pinhole camera. Camera frame: x right, y down, z forward (into the scene).
struct CameraPose {
  Mat4 cam_to_world = Mat4::identity();
  double focal = 50.0;  // pixels
  double cx = 0.0, cy = 0.0;
  int width = 0, height = 0;

  void validate() const {
    check(width > 0 && height > 0 && focal > 0, ErrorKind::Data, "camera: bad intrinsics");
    // rotation block orthonormal within 1e-5
    for (int i = 0; i < 3; i++)
      for (int j = 0; j < 3; j++) {
        double dot = 0;
        for (int k = 0; k < 3; k++) dot += cam_to_world.at(k, i) * cam_to_world.at(k, j);
        double want = i == j ? 1.0 : 0.0;
        check(std::abs(dot - want) < 1e-5, ErrorKind::Data, "camera: rotation not orthonormal");
      }
  }
};

struct Ray {
  Vec3 origin;
  Vec3 dir;  // unit
};

// Ray through continuous pixel coordinates (use px + 0.5 for pixel centers).
inline Ray camera_ray(const CameraPose& cam, double px, double py) {
  Vec3 d_cam{(px - cam.cx) / cam.focal, (py - cam.cy) / cam.focal, 1.0};
  Ray r;
  r.origin = cam.cam_to_world.translation();
  r.dir = cam.cam_to_world.rotate(d_cam).normalized();
  return r;
}

// Projects a world point; returns false when behind the camera.
inline bool project_point(const CameraPose& cam, const Vec3& p, double& px, double& py) {
  Mat4 w2c = cam.cam_to_world.rigid_inverse();
  Vec3 pc = w2c.transform_point(p);
  if (pc.z <= 1e-9) return false;
  px = cam.cx + cam.focal * pc.x / pc.z;
  py = cam.cy + cam.focal * pc.y / pc.z;
  return true;
}

// Camera at `eye` looking at `target`, world up `up` (defaults z-up).
inline Mat4 look_at(const Vec3& eye, const Vec3& target, const Vec3& up = {0, 0, 1}) {
  Vec3 fwd = (target - eye).normalized();
  Vec3 right = fwd.cross(up).normalized();
  if (right.norm() < 1e-9) right = fwd.cross(Vec3{0, 1, 0}).normalized();
  Vec3 down = fwd.cross(right);
  Mat4 m = Mat4::identity();
  // columns: camera axes expressed in world coordinates
  for (int i = 0; i < 3; i++) {
    m.at(i, 0) = right[i];
    m.at(i, 1) = down[i];
    m.at(i, 2) = fwd[i];
  }
  m.at(0, 3) = eye.x;
  m.at(1, 3) = eye.y;
  m.at(2, 3) = eye.z;
  return m;
}

}  // namespace dynavol
