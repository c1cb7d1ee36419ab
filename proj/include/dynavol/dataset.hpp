// Copyright (c) 2026 dynavol authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dynavol/camera.hpp"
#include "dynavol/common.hpp"
#include "dynavol/image.hpp"

namespace dynavol {

// One observed frame. Timestamps are normalized to [0,1]; the initial
// timestamp maps to 0.0 (the canonical configuration).
struct Frame {
  Image image;
  std::optional<MaskImage> mask;
  CameraPose pose;
  double time = 0.0;
};

// Posed images: V views at the initial timestamp followed by one view per
// later timestamp. Immutable after load; concurrent readers are fine.
struct Dataset {
  std::vector<Frame> frames;
  int initial_views = 1;    // V
  int num_timestamps = 2;   // T
  Aabb scene_bbox;
  Vec3 background{0, 0, 0};

  int width() const { return frames.empty() ? 0 : frames[0].image.width; }
  int height() const { return frames.empty() ? 0 : frames[0].image.height; }

  double time_of_timestamp(int t_index) const {
    return num_timestamps < 2 ? 0.0 : double(t_index) / double(num_timestamps - 1);
  }
  // Frame indices observing timestamp t_index (all V initial views for 0).
  std::vector<int> frames_at_timestamp(int t_index) const {
    std::vector<int> out;
    if (t_index == 0)
      for (int i = 0; i < initial_views; i++) out.push_back(i);
    else
      out.push_back(initial_views + t_index - 1);
    return out;
  }

  void validate() const {
    check(initial_views >= 1, ErrorKind::Data, "dataset: V must be >= 1");
    check(num_timestamps >= 2, ErrorKind::Data, "dataset: T must be >= 2");
    check(int(frames.size()) == initial_views + num_timestamps - 1, ErrorKind::Data,
          "dataset: frame count does not match V + (T-1)");
    check(!scene_bbox.degenerate(), ErrorKind::Data, "dataset: degenerate scene bbox");
    for (const auto& f : frames) {
      check(f.image.width == width() && f.image.height == height(), ErrorKind::Data,
            "dataset: images must share dimensions");
      if (f.mask)
        check(f.mask->width == width() && f.mask->height == height(), ErrorKind::Data,
              "dataset: mask dimensions mismatch");
      f.pose.validate();
    }
  }
};

// A batch of rays with target colors. Directions are unit vectors; near/far
// are the ray's bbox clip range (near == far means the ray misses the scene).
struct RayBatch {
  std::vector<Vec3> origins, dirs;
  std::vector<float> target_rgb;  // 3 per ray
  std::vector<double> times;
  std::vector<double> near, far;
  std::vector<int> frame_index;

  size_t size() const { return origins.size(); }
  void reserve(size_t n) {
    origins.reserve(n); dirs.reserve(n); target_rgb.reserve(3 * n);
    times.reserve(n); near.reserve(n); far.reserve(n); frame_index.reserve(n);
  }
};

inline void append_ray(RayBatch& batch, const Dataset& ds, int fi, int px, int py) {
  const Frame& fr = ds.frames[size_t(fi)];
  Ray r = camera_ray(fr.pose, px + 0.5, py + 0.5);
  double t0, t1;
  if (!ds.scene_bbox.clip_ray(r.origin, r.dir, t0, t1)) t0 = t1 = 0.0;
  t0 = std::max(t0, 1e-4);
  if (t1 < t0) t1 = t0;
  batch.origins.push_back(r.origin);
  batch.dirs.push_back(r.dir);
  const float* px3 = fr.image.pixel(px, py);
  batch.target_rgb.insert(batch.target_rgb.end(), px3, px3 + 3);
  batch.times.push_back(fr.time);
  batch.near.push_back(t0);
  batch.far.push_back(t1);
  batch.frame_index.push_back(fi);
}

// Uniform over (frame, pixel) pairs across the given frame pool.
inline RayBatch sample_rays_from(const Dataset& ds, const std::vector<int>& pool, int batch_size,
                                 Rng& rng) {
  check(batch_size >= 1, ErrorKind::Config, "sample_rays: batch_size must be >= 1");
  check(!pool.empty(), ErrorKind::Data, "sample_rays: empty frame pool");
  RayBatch b;
  b.reserve(size_t(batch_size));
  int w = ds.width(), h = ds.height();
  for (int i = 0; i < batch_size; i++) {
    int fi = pool[rng.below(uint32_t(pool.size()))];
    int px = int(rng.below(uint32_t(w)));
    int py = int(rng.below(uint32_t(h)));
    append_ray(b, ds, fi, px, py);
  }
  return b;
}

inline RayBatch sample_rays(const Dataset& ds, int batch_size, Rng& rng) {
  std::vector<int> pool(ds.frames.size());
  for (size_t i = 0; i < pool.size(); i++) pool[i] = int(i);
  return sample_rays_from(ds, pool, batch_size, rng);
}

// ---------------------------------------------------------------------------
// On-disk layout: a plain-text manifest plus one PPM (and optional PGM mask)
// per frame.
//
//   dynavol-dataset 1
//   views <V>
//   timestamps <T>
//   bbox <6 reals>
//   background <3 reals>
//   frame <image> <mask|-> time <t> focal <f> pp <cx> <cy> pose <16 reals row-major>
// ---------------------------------------------------------------------------

inline void save_dataset(const Dataset& ds, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  fs::create_directories(dir + "/images");
  std::ofstream mf(dir + "/manifest.txt");
  check(mf.good(), ErrorKind::Data, "cannot write manifest in " + dir);
  mf << "dynavol-dataset 1\n";
  mf << "views " << ds.initial_views << "\n";
  mf << "timestamps " << ds.num_timestamps << "\n";
  mf << "bbox";
  for (double v : {ds.scene_bbox.lo.x, ds.scene_bbox.lo.y, ds.scene_bbox.lo.z, ds.scene_bbox.hi.x,
                   ds.scene_bbox.hi.y, ds.scene_bbox.hi.z})
    mf << " " << fmt_double(v);
  mf << "\nbackground " << fmt_double(ds.background.x) << " " << fmt_double(ds.background.y) << " "
     << fmt_double(ds.background.z) << "\n";
  for (size_t i = 0; i < ds.frames.size(); i++) {
    const Frame& f = ds.frames[i];
    std::string img = strfmt("images/frame_%04zu.ppm", i);
    std::string msk = f.mask ? strfmt("images/mask_%04zu.pgm", i) : "-";
    write_ppm(dir + "/" + img, f.image);
    if (f.mask) write_pgm(dir + "/" + msk, *f.mask);
    mf << "frame " << img << " " << msk << " time " << fmt_double(f.time) << " focal "
       << fmt_double(f.pose.focal) << " pp " << fmt_double(f.pose.cx) << " "
       << fmt_double(f.pose.cy) << " pose";
    for (double v : f.pose.cam_to_world.m) mf << " " << fmt_double(v);
    mf << "\n";
  }
  check(mf.good(), ErrorKind::Data, "short write on manifest in " + dir);
}

inline Dataset load_dataset(const std::string& dir) {
  std::ifstream mf(dir + "/manifest.txt");
  check(mf.good(), ErrorKind::Data, "cannot open manifest: " + dir + "/manifest.txt");
  Dataset ds;
  std::string line;
  check(bool(std::getline(mf, line)) && line.rfind("dynavol-dataset 1", 0) == 0, ErrorKind::Data,
        "malformed manifest: missing 'dynavol-dataset 1' header");
  while (std::getline(mf, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::string key;
    ss >> key;
    if (key == "views") {
      ss >> ds.initial_views;
    } else if (key == "timestamps") {
      ss >> ds.num_timestamps;
    } else if (key == "bbox") {
      ss >> ds.scene_bbox.lo.x >> ds.scene_bbox.lo.y >> ds.scene_bbox.lo.z >> ds.scene_bbox.hi.x >>
          ds.scene_bbox.hi.y >> ds.scene_bbox.hi.z;
    } else if (key == "background") {
      ss >> ds.background.x >> ds.background.y >> ds.background.z;
    } else if (key == "frame") {
      Frame f;
      std::string img, msk, tok;
      ss >> img >> msk;
      bool have_pose = false;
      while (ss >> tok) {
        if (tok == "time") ss >> f.time;
        else if (tok == "focal") ss >> f.pose.focal;
        else if (tok == "pp") ss >> f.pose.cx >> f.pose.cy;
        else if (tok == "pose") {
          for (auto& v : f.pose.cam_to_world.m) ss >> v;
          have_pose = !ss.fail();
        } else
          throw_data("malformed manifest: unknown token '" + tok + "'");
      }
      check(!ss.bad(), ErrorKind::Data, "malformed manifest frame line");
      check(have_pose, ErrorKind::Data, "missing pose entry for frame image " + img);
      f.image = read_ppm(dir + "/" + img);
      if (msk != "-") f.mask = read_pgm(dir + "/" + msk);
      f.pose.width = f.image.width;
      f.pose.height = f.image.height;
      ds.frames.push_back(std::move(f));
    } else {
      throw_data("malformed manifest: unknown key '" + key + "'");
    }
  }
  ds.validate();
  return ds;
}

}  // namespace dynavol
