// Copyright (c) 2026 dynavol authors
// SPDX-License-Identifier: Apache-2.0
//
// Versioned binary checkpoint container, little-endian throughout:
//
//   magic   "DVCKPT\n"            7 bytes
//   u32     version (currently 1)
//   u8      stage marker (last completed stage)
//   u64 x2  RNG state
//   f64 x6  scene bbox, f64 softplus shift, i32 T
//   u32 config text length, bytes   (key=value lines)
//   slot bank: i32 n, i32 d, i32 episode, u8 started, i32 accum_count,
//              f64 arrays current/prev_avg/accum
//   u32 parameter count, then per parameter:
//     u16 name length, name bytes, u32 ndim, i32 dims..., f32 data
//   magic   "DVEND"               (truncation guard)
#pragma once

#include <cstring>
#include <fstream>

#include "dynavol/model.hpp"

namespace dynavol {

namespace ckpt_detail {

template <typename T>
void put(std::ostream& o, const T& v) {
  o.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T get(std::istream& i) {
  T v{};
  i.read(reinterpret_cast<char*>(&v), sizeof(T));
  check(bool(i), ErrorKind::Checkpoint, "checkpoint: truncated file");
  return v;
}
inline void put_bytes(std::ostream& o, const void* p, size_t n) {
  o.write(reinterpret_cast<const char*>(p), std::streamsize(n));
}
inline void get_bytes(std::istream& i, void* p, size_t n) {
  i.read(reinterpret_cast<char*>(p), std::streamsize(n));
  check(size_t(i.gcount()) == n, ErrorKind::Checkpoint, "checkpoint: truncated file");
}

}  // namespace ckpt_detail

constexpr uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(SceneModel& model, const std::string& path) {
  using namespace ckpt_detail;
  std::ofstream f(path, std::ios::binary);
  check(f.good(), ErrorKind::Checkpoint, "cannot open checkpoint for writing: " + path);
  f.write("DVCKPT\n", 7);
  put(f, kCheckpointVersion);
  put(f, uint8_t(model.stage));
  put(f, model.rng.state);
  put(f, model.rng.inc);
  for (double v : {model.bbox.lo.x, model.bbox.lo.y, model.bbox.lo.z, model.bbox.hi.x,
                   model.bbox.hi.y, model.bbox.hi.z})
    put(f, v);
  put(f, model.grid_spec().softplus_shift);
  put(f, int32_t(model.num_timestamps));

  std::string cfg = model.cfg.serialize();
  put(f, uint32_t(cfg.size()));
  put_bytes(f, cfg.data(), cfg.size());

  const SlotBank& b = model.slots;
  put(f, int32_t(b.num_slots));
  put(f, int32_t(b.slot_dim));
  put(f, int32_t(b.episode));
  put(f, uint8_t(b.started));
  put(f, int32_t(b.accum_count));
  put_bytes(f, b.current.data(), b.current.size() * 8);
  put_bytes(f, b.prev_avg.data(), b.prev_avg.size() * 8);
  put_bytes(f, b.accum.data(), b.accum.size() * 8);

  auto params = model.named_params();
  put(f, uint32_t(params.size()));
  for (auto& [name, p] : params) {
    put(f, uint16_t(name.size()));
    put_bytes(f, name.data(), name.size());
    put(f, uint32_t(p->shape.size()));
    for (int d : p->shape) put(f, int32_t(d));
    put_bytes(f, p->values.data(), p->values.size() * 4);
  }
  f.write("DVEND", 5);
  check(f.good(), ErrorKind::Checkpoint, "short write on checkpoint: " + path);
}

inline SceneModel load_checkpoint(const std::string& path) {
  using namespace ckpt_detail;
  std::ifstream f(path, std::ios::binary);
  check(f.good(), ErrorKind::Checkpoint, "cannot open checkpoint: " + path);
  char magic[7];
  get_bytes(f, magic, 7);
  check(std::memcmp(magic, "DVCKPT\n", 7) == 0, ErrorKind::Checkpoint,
        "checkpoint: bad magic in " + path);
  uint32_t version = get<uint32_t>(f);
  check(version == kCheckpointVersion, ErrorKind::Checkpoint,
        strfmt("checkpoint: version mismatch (file %u, supported %u)", version, kCheckpointVersion));
  uint8_t stage = get<uint8_t>(f);
  uint64_t rng_state = get<uint64_t>(f), rng_inc = get<uint64_t>(f);
  Aabb bbox;
  bbox.lo.x = get<double>(f);
  bbox.lo.y = get<double>(f);
  bbox.lo.z = get<double>(f);
  bbox.hi.x = get<double>(f);
  bbox.hi.y = get<double>(f);
  bbox.hi.z = get<double>(f);
  double shift = get<double>(f);
  int32_t T = get<int32_t>(f);

  uint32_t cfg_len = get<uint32_t>(f);
  std::string cfg_text(cfg_len, '\0');
  get_bytes(f, cfg_text.data(), cfg_len);
  TrainConfig cfg;
  cfg.parse_text(cfg_text);

  SceneModel model = SceneModel::create(cfg, bbox, T);
  model.stage = int(stage);
  model.rng.state = rng_state;
  model.rng.inc = rng_inc;
  model.density3.spec.softplus_shift = shift;
  model.occupancy4.spec.softplus_shift = shift;

  SlotBank& b = model.slots;
  int32_t n = get<int32_t>(f), d = get<int32_t>(f);
  check(n == b.num_slots && d == b.slot_dim, ErrorKind::Checkpoint,
        "checkpoint: slot bank shape mismatch");
  b.episode = get<int32_t>(f);
  b.started = get<uint8_t>(f) != 0;
  b.accum_count = get<int32_t>(f);
  get_bytes(f, b.current.data(), b.current.size() * 8);
  get_bytes(f, b.prev_avg.data(), b.prev_avg.size() * 8);
  get_bytes(f, b.accum.data(), b.accum.size() * 8);

  auto params = model.named_params();
  uint32_t count = get<uint32_t>(f);
  check(count == params.size(), ErrorKind::Checkpoint,
        strfmt("checkpoint: parameter count mismatch (file %u, model %zu)", count, params.size()));
  for (auto& [name, p] : params) {
    uint16_t len = get<uint16_t>(f);
    std::string fname(len, '\0');
    get_bytes(f, fname.data(), len);
    check(fname == name, ErrorKind::Checkpoint,
          "checkpoint: parameter order mismatch at " + fname + " (expected " + name + ")");
    uint32_t ndim = get<uint32_t>(f);
    check(ndim == p->shape.size(), ErrorKind::Checkpoint, "checkpoint: rank mismatch for " + name);
    for (size_t i = 0; i < ndim; i++)
      check(get<int32_t>(f) == p->shape[i], ErrorKind::Checkpoint,
            "checkpoint: shape mismatch for " + name);
    get_bytes(f, p->values.data(), p->values.size() * 4);
  }
  char tail[5];
  get_bytes(f, tail, 5);
  check(std::memcmp(tail, "DVEND", 5) == 0, ErrorKind::Checkpoint,
        "checkpoint: missing end marker (truncated?) in " + path);
  return model;
}

}  // namespace dynavol
