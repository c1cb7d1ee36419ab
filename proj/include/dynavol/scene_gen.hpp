// Copyright (c) 2026 dynavol authors
// SPDX-License-Identifier: Apache-2.0
//
// Analytic scene generator: rigid spheres/boxes on parabolic trajectories,
// Lambertian shading under a single directional light, exact first-hit masks.
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dynavol/camera.hpp"
#include "dynavol/common.hpp"
#include "dynavol/dataset.hpp"

namespace dynavol {

struct SceneObject {
  enum class Kind { Sphere, Box };
  Kind kind = Kind::Sphere;
  Vec3 center;        // at t = 0
  Vec3 velocity;      // world units per normalized time
  Vec3 accel;
  double radius = 0.3;    // spheres
  Vec3 half{0.3, 0.3, 0.3};  // boxes (axis-aligned)
  Vec3 albedo{0.8, 0.8, 0.8};

  Vec3 position(double t) const { return center + velocity * t + accel * (0.5 * t * t); }
};

struct CameraPlan {
  enum class Kind { Orbit, Hemisphere };
  Kind kind = Kind::Orbit;
  double radius = 4.0;
  double elevation = 0.6;        // radians above horizon (orbit)
  double azimuth0 = 0.0;         // orbit start angle
  double span = 2.0 * M_PI;      // orbit azimuth span over the sequence
  double focal = 80.0;           // pixels
};

struct SceneSpec {
  Aabb bbox{{-1.5, -1.5, -1.5}, {1.5, 1.5, 1.5}};
  Vec3 background{0.05, 0.07, 0.12};
  Vec3 light_dir{-0.4, -0.5, -0.8};  // direction light travels
  double ambient = 0.3;
  bool ground_plane = false;
  double plane_z = -1.2;
  Vec3 plane_albedo{0.45, 0.45, 0.45};
  int width = 64, height = 64;
  int num_timestamps = 10;  // T
  int initial_views = 1;    // V
  CameraPlan camera;
  uint64_t seed = 1;
  std::vector<SceneObject> objects;
};

namespace gen_detail {

inline bool hit_sphere(const Vec3& c, double r, const Vec3& o, const Vec3& d, double& t) {
  Vec3 oc = o - c;
  double b = oc.dot(d);
  double disc = b * b - (oc.dot(oc) - r * r);
  if (disc < 0) return false;
  double s = std::sqrt(disc);
  double t0 = -b - s, t1 = -b + s;
  if (t0 > 1e-6) { t = t0; return true; }
  if (t1 > 1e-6) { t = t1; return true; }
  return false;
}

inline bool hit_box(const Vec3& c, const Vec3& half, const Vec3& o, const Vec3& d, double& t,
                    Vec3& n) {
  Aabb box{c - half, c + half};
  double tmin = -1e30, tmax = 1e30;
  int axis_min = -1;
  double sign_min = 1;
  for (int a = 0; a < 3; a++) {
    double da = d[a], oa = o[a], lo = box.lo[a], hi = box.hi[a];
    if (std::abs(da) < 1e-12) {
      if (oa < lo || oa > hi) return false;
      continue;
    }
    double t0 = (lo - oa) / da, t1 = (hi - oa) / da;
    double sgn = -1;
    if (t0 > t1) { std::swap(t0, t1); sgn = 1; }
    if (t0 > tmin) { tmin = t0; axis_min = a; sign_min = sgn; }
    tmax = std::min(tmax, t1);
    if (tmin > tmax) return false;
  }
  if (tmin <= 1e-6 || axis_min < 0) return false;  // inside or behind
  t = tmin;
  n = Vec3{0, 0, 0};
  if (axis_min == 0) n.x = sign_min;
  if (axis_min == 1) n.y = sign_min;
  if (axis_min == 2) n.z = sign_min;
  return true;
}

}  // namespace gen_detail

// First hit along a ray: returns object index + 1, or 0 for background/plane
// miss; fills shaded color.
inline int trace_first_hit(const SceneSpec& spec, double tnorm, const Vec3& o, const Vec3& d,
                           Vec3& color) {
  double best_t = 1e30;
  int best_id = 0;
  Vec3 best_n, best_albedo;
  for (size_t i = 0; i < spec.objects.size(); i++) {
    const SceneObject& obj = spec.objects[i];
    Vec3 c = obj.position(tnorm);
    double t;
    if (obj.kind == SceneObject::Kind::Sphere) {
      if (gen_detail::hit_sphere(c, obj.radius, o, d, t) && t < best_t) {
        best_t = t;
        best_id = int(i) + 1;
        best_n = ((o + d * t) - c).normalized();
        best_albedo = obj.albedo;
      }
    } else {
      Vec3 n;
      if (gen_detail::hit_box(c, obj.half, o, d, t, n) && t < best_t) {
        best_t = t;
        best_id = int(i) + 1;
        best_n = n;
        best_albedo = obj.albedo;
      }
    }
  }
  if (spec.ground_plane && std::abs(d.z) > 1e-12) {
    double t = (spec.plane_z - o.z) / d.z;
    if (t > 1e-6 && t < best_t) {
      best_t = t;
      best_id = 0;  // plane counts as background in masks
      best_n = Vec3{0, 0, 1};
      best_albedo = spec.plane_albedo;
    }
  }
  if (best_t > 1e29) {
    color = spec.background;
    return 0;
  }
  Vec3 l = -spec.light_dir.normalized();
  double diff = std::max(0.0, best_n.dot(l));
  double shade = spec.ambient + (1.0 - spec.ambient) * diff;
  color = best_albedo * shade;
  return best_id;
}

inline void render_view(const SceneSpec& spec, const CameraPose& cam, double tnorm, Image& img,
                        MaskImage* mask) {
  img = Image(cam.width, cam.height);
  if (mask) *mask = MaskImage(cam.width, cam.height);
  for (int y = 0; y < cam.height; y++)
    for (int x = 0; x < cam.width; x++) {
      Ray r = camera_ray(cam, x + 0.5, y + 0.5);
      Vec3 c;
      int id = trace_first_hit(spec, tnorm, r.origin, r.dir, c);
      float* p = img.pixel(x, y);
      p[0] = float(c.x);
      p[1] = float(c.y);
      p[2] = float(c.z);
      if (mask) mask->at(x, y) = uint8_t(id);
    }
}

inline CameraPose make_camera(const SceneSpec& spec, double azimuth, double elevation) {
  Vec3 center = spec.bbox.center();
  double r = spec.camera.radius;
  Vec3 eye = center + Vec3{r * std::cos(azimuth) * std::cos(elevation),
                           r * std::sin(azimuth) * std::cos(elevation), r * std::sin(elevation)};
  CameraPose cam;
  cam.cam_to_world = look_at(eye, center);
  cam.focal = spec.camera.focal;
  cam.width = spec.width;
  cam.height = spec.height;
  cam.cx = spec.width / 2.0;
  cam.cy = spec.height / 2.0;
  return cam;
}

// Camera pose for dynamic frame index i in [1, T-1]; i = 0 is the first
// initial view. Orbit sweeps azimuth smoothly; hemisphere samples randomly.
inline CameraPose plan_camera(const SceneSpec& spec, int frame_i, Rng& rng) {
  if (spec.camera.kind == CameraPlan::Kind::Orbit) {
    double frac = spec.num_timestamps < 2 ? 0.0 : double(frame_i) / double(spec.num_timestamps - 1);
    return make_camera(spec, spec.camera.azimuth0 + spec.camera.span * frac, spec.camera.elevation);
  }
  double az = rng.uniform(0, 2 * M_PI);
  double el = rng.uniform(0.25, 1.25);  // upper hemisphere, away from grazing
  return make_camera(spec, az, el);
}

inline void validate_scene(const SceneSpec& spec) {
  check(spec.num_timestamps >= 2, ErrorKind::Config, "scene: T must be >= 2");
  check(spec.initial_views >= 1, ErrorKind::Config, "scene: V must be >= 1");
  check(!spec.bbox.degenerate(), ErrorKind::Config, "scene: degenerate bbox");
  for (size_t i = 0; i < spec.objects.size(); i++) {
    const SceneObject& obj = spec.objects[i];
    for (int s = 0; s <= 32; s++) {
      double t = double(s) / 32.0;
      Vec3 c = obj.position(t);
      Vec3 ext = obj.kind == SceneObject::Kind::Sphere
                     ? Vec3{obj.radius, obj.radius, obj.radius}
                     : obj.half;
      Aabb inner{spec.bbox.lo + ext, spec.bbox.hi - ext};
      check(inner.contains(c), ErrorKind::Config,
            strfmt("scene: object %zu leaves the bbox at t=%.3f", i, t));
    }
  }
}

inline void check_camera_clear(const SceneSpec& spec, const CameraPose& cam, double tnorm) {
  Vec3 eye = cam.cam_to_world.translation();
  for (size_t i = 0; i < spec.objects.size(); i++) {
    const SceneObject& obj = spec.objects[i];
    Vec3 c = obj.position(tnorm);
    bool inside = obj.kind == SceneObject::Kind::Sphere
                      ? (eye - c).norm() <= obj.radius
                      : Aabb{c - obj.half, c + obj.half}.contains(eye);
    check(!inside, ErrorKind::Config, strfmt("scene: camera inside object %zu", i));
  }
}

// Produces the full dataset: V initial views at t=0 then one view per later
// timestamp. Bit-deterministic for a fixed spec (including seed).
inline Dataset generate_scene(const SceneSpec& spec) {
  validate_scene(spec);
  Rng rng(spec.seed, 77);
  Dataset ds;
  ds.initial_views = spec.initial_views;
  ds.num_timestamps = spec.num_timestamps;
  ds.scene_bbox = spec.bbox;
  ds.background = spec.background;

  auto add_frame = [&](const CameraPose& cam, double tnorm) {
    check_camera_clear(spec, cam, tnorm);
    Frame f;
    f.pose = cam;
    f.time = tnorm;
    MaskImage mask;
    render_view(spec, cam, tnorm, f.image, &mask);
    f.mask = std::move(mask);
    ds.frames.push_back(std::move(f));
  };

  // distinct initial views: spread azimuths, alternate elevations
  for (int v = 0; v < spec.initial_views; v++) {
    double az = spec.camera.azimuth0 + 2.0 * M_PI * double(v) / std::max(1, spec.initial_views);
    double el = spec.camera.elevation + (v % 2 == 1 ? 0.25 : 0.0);
    add_frame(make_camera(spec, az, el), 0.0);
  }
  for (int t = 1; t < spec.num_timestamps; t++) {
    double tnorm = double(t) / double(spec.num_timestamps - 1);
    add_frame(plan_camera(spec, t, rng), tnorm);
  }
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// Plain-text scene spec parser for the CLI `generate` command.
// ---------------------------------------------------------------------------

inline SceneSpec parse_scene_spec(const std::string& path) {
  std::ifstream f(path);
  check(f.good(), ErrorKind::Data, "cannot open scene spec: " + path);
  SceneSpec spec;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    lineno++;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream ss(line);
    std::string key;
    if (!(ss >> key)) continue;
    auto want = [&](bool ok) {
      check(ok && !ss.fail(), ErrorKind::Data,
            strfmt("scene spec %s:%d: malformed '%s' entry", path.c_str(), lineno, key.c_str()));
    };
    if (key == "bbox") {
      want(bool(ss >> spec.bbox.lo.x >> spec.bbox.lo.y >> spec.bbox.lo.z >> spec.bbox.hi.x >>
               spec.bbox.hi.y >> spec.bbox.hi.z));
    } else if (key == "background") {
      want(bool(ss >> spec.background.x >> spec.background.y >> spec.background.z));
    } else if (key == "light") {
      want(bool(ss >> spec.light_dir.x >> spec.light_dir.y >> spec.light_dir.z));
    } else if (key == "ambient") {
      want(bool(ss >> spec.ambient));
    } else if (key == "plane") {
      std::string mode;
      want(bool(ss >> mode));
      if (mode == "off") spec.ground_plane = false;
      else {
        spec.ground_plane = true;
        spec.plane_z = std::stod(mode);
        ss >> spec.plane_albedo.x >> spec.plane_albedo.y >> spec.plane_albedo.z;
      }
    } else if (key == "image") {
      want(bool(ss >> spec.width >> spec.height));
    } else if (key == "timestamps") {
      want(bool(ss >> spec.num_timestamps));
    } else if (key == "views") {
      want(bool(ss >> spec.initial_views));
    } else if (key == "camera") {
      std::string kind;
      want(bool(ss >> kind));
      if (kind == "orbit") spec.camera.kind = CameraPlan::Kind::Orbit;
      else if (kind == "hemisphere") spec.camera.kind = CameraPlan::Kind::Hemisphere;
      else throw_data(strfmt("scene spec %s:%d: unknown camera plan '%s'", path.c_str(), lineno, kind.c_str()));
    } else if (key == "camera_radius") {
      want(bool(ss >> spec.camera.radius));
    } else if (key == "camera_elevation") {
      want(bool(ss >> spec.camera.elevation));
    } else if (key == "camera_span") {
      want(bool(ss >> spec.camera.span));
    } else if (key == "focal") {
      want(bool(ss >> spec.camera.focal));
    } else if (key == "seed") {
      want(bool(ss >> spec.seed));
    } else if (key == "sphere" || key == "box") {
      SceneObject obj;
      obj.kind = key == "sphere" ? SceneObject::Kind::Sphere : SceneObject::Kind::Box;
      std::string tok;
      while (ss >> tok) {
        if (tok == "c") want(bool(ss >> obj.center.x >> obj.center.y >> obj.center.z));
        else if (tok == "r") want(bool(ss >> obj.radius));
        else if (tok == "h") want(bool(ss >> obj.half.x >> obj.half.y >> obj.half.z));
        else if (tok == "albedo") want(bool(ss >> obj.albedo.x >> obj.albedo.y >> obj.albedo.z));
        else if (tok == "vel") want(bool(ss >> obj.velocity.x >> obj.velocity.y >> obj.velocity.z));
        else if (tok == "acc") want(bool(ss >> obj.accel.x >> obj.accel.y >> obj.accel.z));
        else throw_data(strfmt("scene spec %s:%d: unknown object token '%s'", path.c_str(), lineno, tok.c_str()));
      }
      spec.objects.push_back(obj);
    } else {
      throw_data(strfmt("scene spec %s:%d: unknown key '%s'", path.c_str(), lineno, key.c_str()));
    }
  }
  return spec;
}

}  // namespace dynavol
