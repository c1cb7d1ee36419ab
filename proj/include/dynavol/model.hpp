// Copyright (c) 2026 dynavol authors
// SPDX-License-Identifier: Apache-2.0
//
// The full trainable model: canonical density grids, bidirectional
// deformation nets, the two color nets, volume encoder, slot attention and
// the learned background, plus slot-bank state and per-slot trajectory
// overrides used by scene edits.
#pragma once

#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dynavol/deformation.hpp"
#include "dynavol/expansion.hpp"
#include "dynavol/losses.hpp"
#include "dynavol/renderer.hpp"
#include "dynavol/slot_attention.hpp"

namespace dynavol {

struct TrainConfig {
  // representation
  int grid_res = 110;
  int num_slots = 10;  // N
  int slot_dim = 64;   // D
  // rendering
  int samples_per_ray = 256;  // P
  int rays_per_batch = 1024;
  bool stratified = true;
  // stage schedules
  int warmup_iters = 50000;
  int stage3_episodes = 0;   // 0 -> ceil(stage3_iters / T)
  int stage3_iters = 35000;
  // learning rates (per stage: grids vs everything else)
  double lr_grid_warmup = 0.1, lr_net_warmup = 1e-3;
  double lr_grid_dynamic = 0.08, lr_net_dynamic = 8e-4;
  // losses
  LossWeights loss_weights;
  // expansion thresholds
  ExpansionConfig expansion;
  // networks
  PosEncConfig posenc;
  int deform_hidden = 64, deform_layers = 4;
  int color_hidden = 64, color_layers = 4;
  std::array<int, 3> encoder_channels{32, 64, 64};
  double density_init = 0.01;
  // misc
  uint64_t seed = 1;
  int workers = 1;

  // Paper-scale defaults as above; the desk profile fits a full three-stage
  // run in CPU minutes.
  static TrainConfig full_profile() { return TrainConfig{}; }

  static TrainConfig desk_profile() {
    TrainConfig c;
    c.grid_res = 48;
    c.num_slots = 5;
    c.samples_per_ray = 64;
    c.rays_per_batch = 192;
    c.warmup_iters = 1500;
    c.stage3_episodes = 25;
    c.deform_hidden = 32;
    c.encoder_channels = {16, 32, 32};
    // start well below the expansion density threshold so optimizer noise on
    // rarely-visited voxels stays under it
    c.density_init = 1e-3;
    return c;
  }

  void validate() const {
    check(grid_res >= 2, ErrorKind::Config, "config: grid_res must be >= 2");
    check(num_slots >= 1 && slot_dim >= 1, ErrorKind::Config, "config: bad slot shape");
    check(samples_per_ray >= 1 && rays_per_batch >= 1, ErrorKind::Config,
          "config: sampling counts must be >= 1");
    check(warmup_iters >= 0 && stage3_episodes >= 0 && stage3_iters >= 0, ErrorKind::Config,
          "config: iteration counts must be >= 0");
    check(lr_grid_warmup > 0 && lr_net_warmup > 0 && lr_grid_dynamic > 0 && lr_net_dynamic > 0,
          ErrorKind::Config, "config: learning rates must be positive");
    check(workers >= 1, ErrorKind::Config, "config: workers must be >= 1");
    check(deform_hidden >= 1 && deform_layers >= 1 && color_hidden >= 1 && color_layers >= 1,
          ErrorKind::Config, "config: net sizes must be >= 1");
    loss_weights.validate();
  }

  int episodes_for(int T) const {
    if (stage3_episodes > 0) return stage3_episodes;
    return (stage3_iters + T - 1) / std::max(1, T);
  }

  // key=value serialization; stable order so checkpoints are byte-stable.
  std::string serialize() const {
    std::ostringstream s;
    s << "grid_res=" << grid_res << "\nnum_slots=" << num_slots << "\nslot_dim=" << slot_dim
      << "\nsamples_per_ray=" << samples_per_ray << "\nrays_per_batch=" << rays_per_batch
      << "\nstratified=" << (stratified ? 1 : 0) << "\nwarmup_iters=" << warmup_iters
      << "\nstage3_episodes=" << stage3_episodes << "\nstage3_iters=" << stage3_iters
      << "\nlr_grid_warmup=" << fmt_double(lr_grid_warmup)
      << "\nlr_net_warmup=" << fmt_double(lr_net_warmup)
      << "\nlr_grid_dynamic=" << fmt_double(lr_grid_dynamic)
      << "\nlr_net_dynamic=" << fmt_double(lr_net_dynamic)
      << "\nalpha_w=" << fmt_double(loss_weights.alpha_w)
      << "\nalpha_p=" << fmt_double(loss_weights.alpha_p)
      << "\nalpha_e=" << fmt_double(loss_weights.alpha_e)
      << "\nalpha_c=" << fmt_double(loss_weights.alpha_c)
      << "\ndelta_den=" << fmt_double(expansion.delta_den)
      << "\ndelta_rgb=" << fmt_double(expansion.delta_rgb)
      << "\ndelta_vel=" << fmt_double(expansion.delta_vel)
      << "\nexpansion_rays=" << expansion.num_rays
      << "\nposenc_spatial=" << posenc.spatial_frequencies
      << "\nposenc_temporal=" << posenc.temporal_frequencies
      << "\ndeform_hidden=" << deform_hidden << "\ndeform_layers=" << deform_layers
      << "\ncolor_hidden=" << color_hidden << "\ncolor_layers=" << color_layers
      << "\nencoder_channels=" << encoder_channels[0] << "," << encoder_channels[1] << ","
      << encoder_channels[2] << "\ndensity_init=" << fmt_double(density_init)
      << "\nseed=" << seed << "\nworkers=" << workers << "\n";
    return s.str();
  }

  void apply_entry(const std::string& key, const std::string& value) {
    auto as_int = [&] { return std::stoi(value); };
    auto as_double = [&] { return std::stod(value); };
    try {
      if (key == "grid_res") grid_res = as_int();
      else if (key == "num_slots") num_slots = as_int();
      else if (key == "slot_dim") slot_dim = as_int();
      else if (key == "samples_per_ray") samples_per_ray = as_int();
      else if (key == "rays_per_batch") rays_per_batch = as_int();
      else if (key == "stratified") stratified = as_int() != 0;
      else if (key == "warmup_iters") warmup_iters = as_int();
      else if (key == "stage3_episodes") stage3_episodes = as_int();
      else if (key == "stage3_iters") stage3_iters = as_int();
      else if (key == "lr_grid_warmup") lr_grid_warmup = as_double();
      else if (key == "lr_net_warmup") lr_net_warmup = as_double();
      else if (key == "lr_grid_dynamic") lr_grid_dynamic = as_double();
      else if (key == "lr_net_dynamic") lr_net_dynamic = as_double();
      else if (key == "alpha_w") loss_weights.alpha_w = as_double();
      else if (key == "alpha_p") loss_weights.alpha_p = as_double();
      else if (key == "alpha_e") loss_weights.alpha_e = as_double();
      else if (key == "alpha_c") loss_weights.alpha_c = as_double();
      else if (key == "delta_den") expansion.delta_den = as_double();
      else if (key == "delta_rgb") expansion.delta_rgb = as_double();
      else if (key == "delta_vel") expansion.delta_vel = as_double();
      else if (key == "expansion_rays") expansion.num_rays = as_int();
      else if (key == "posenc_spatial") posenc.spatial_frequencies = as_int();
      else if (key == "posenc_temporal") posenc.temporal_frequencies = as_int();
      else if (key == "deform_hidden") deform_hidden = as_int();
      else if (key == "deform_layers") deform_layers = as_int();
      else if (key == "color_hidden") color_hidden = as_int();
      else if (key == "color_layers") color_layers = as_int();
      else if (key == "encoder_channels") {
        std::istringstream ss(value);
        std::string tok;
        for (int i = 0; i < 3; i++) {
          check(bool(std::getline(ss, tok, ',')), ErrorKind::Config,
                "config: encoder_channels needs three values");
          encoder_channels[size_t(i)] = std::stoi(tok);
        }
      } else if (key == "density_init") density_init = as_double();
      else if (key == "seed") seed = uint64_t(std::stoull(value));
      else if (key == "workers") workers = as_int();
      else if (key == "profile") {
        if (value == "desk") *this = desk_profile();
        else if (value == "full") *this = full_profile();
        else throw_config("config: unknown profile '" + value + "'");
      } else
        throw_config("config: unknown key '" + key + "'");
    } catch (const Error&) {
      throw;
    } catch (const std::exception&) {
      throw_config("config: cannot parse value for '" + key + "'");
    }
  }

  void parse_text(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      auto eq = line.find('=');
      if (eq == std::string::npos) {
        bool blank = line.find_first_not_of(" \t\r") == std::string::npos;
        check(blank, ErrorKind::Config, "config: malformed line '" + line + "'");
        continue;
      }
      auto trim = [](std::string s) {
        auto b = s.find_first_not_of(" \t\r");
        auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
      };
      apply_entry(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
  }
};

// Rigid trajectory override for one slot channel (scene editing): at render
// time channel points are pulled back through the inverse of this motion
// instead of the learned backward warp.
struct RigidMotion {
  Vec3 axis{0, 0, 1};
  double angle_rate = 0;  // radians per unit time
  Vec3 translation_velocity;
  Vec3 center;

  void validate() const {
    check(std::isfinite(angle_rate) && std::isfinite(translation_velocity.norm()) &&
              std::isfinite(center.norm()) && std::isfinite(axis.norm()),
          ErrorKind::Config, "edit: motion parameters must be finite");
    check(angle_rate == 0.0 || axis.norm() > 1e-9, ErrorKind::Config,
          "edit: rotation axis must be non-zero (motion not invertible)");
  }

  // Backward displacement: canonical position of query point x at time t,
  // minus x. Forward motion is x -> R(t)(x - c) + c + v t.
  Vec3 backward_displacement(const Vec3& x, double t) const {
    Vec3 shifted = x - center - translation_velocity * t;
    Vec3 canon = angle_rate == 0.0
                     ? shifted + center
                     : axis_angle(axis, -angle_rate * t).transform_point(shifted) + center;
    return canon - x;
  }
};

struct SceneModel {
  TrainConfig cfg;
  Aabb bbox;
  int num_timestamps = 2;
  int stage = 0;  // last completed stage
  Rng rng;

  DensityGrid3D density3;       // F
  OccupancyGrid4D occupancy4;   // V at the initial timestamp
  DeformationNet warp_back;     // f_psi
  DeformationNet warp_fwd;      // f_xi'
  WarmupColorNet color_warm;    // N_phi'
  CompColorNet color_comp;      // N_phi
  VolumeEncoder encoder;        // E_theta
  SlotAttention attention;      // Z_omega
  ad::Parameter background;
  SlotBank slots;

  // per-slot trajectory overrides (edits); not persisted in checkpoints
  std::vector<std::optional<RigidMotion>> warp_overrides;
  bool disable_learned_warp = false;

  static SceneModel create(const TrainConfig& cfg, const Aabb& bbox, int num_timestamps) {
    cfg.validate();
    check(num_timestamps >= 2, ErrorKind::Config, "model: need at least two timestamps");
    SceneModel m;
    m.cfg = cfg;
    m.bbox = bbox;
    m.num_timestamps = num_timestamps;
    m.rng = Rng(cfg.seed);

    GridSpec spec;
    spec.dims = {cfg.grid_res, cfg.grid_res, cfg.grid_res};
    spec.bbox = bbox;
    spec.softplus_shift = shift_for_density(cfg.density_init);
    spec.validate();

    m.density3 = DensityGrid3D("density3", spec);
    m.occupancy4 = OccupancyGrid4D("occupancy4", spec, cfg.num_slots);
    Rng net_rng = m.rng.fork(1);
    m.warp_back = make_deformation_net("warp_back", DeformationNet::Direction::Backward, cfg.posenc,
                                       cfg.deform_hidden, cfg.deform_layers, net_rng);
    m.warp_fwd = make_deformation_net("warp_fwd", DeformationNet::Direction::Forward, cfg.posenc,
                                      cfg.deform_hidden, cfg.deform_layers, net_rng);
    m.color_warm = WarmupColorNet::make("color_warm", cfg.posenc.spatial_frequencies,
                                        cfg.color_hidden, cfg.color_layers, net_rng);
    m.color_comp = CompColorNet::make("color_comp", cfg.posenc.spatial_frequencies, cfg.slot_dim,
                                      cfg.color_hidden, cfg.color_layers, net_rng);
    m.encoder = VolumeEncoder::make("encoder", spec.dims, cfg.num_slots, cfg.encoder_channels,
                                    cfg.slot_dim, net_rng);
    m.attention = SlotAttention::make("attention", cfg.slot_dim, net_rng);
    m.background = ad::Parameter("background", {3});
    m.slots = SlotBank(cfg.num_slots, cfg.slot_dim);
    m.warp_overrides.assign(size_t(cfg.num_slots), std::nullopt);
    return m;
  }

  const GridSpec& grid_spec() const { return density3.spec; }

  std::vector<double> timestamps() const {
    std::vector<double> out;
    for (int t = 0; t < num_timestamps; t++)
      out.push_back(num_timestamps < 2 ? 0.0 : double(t) / double(num_timestamps - 1));
    return out;
  }

  std::vector<std::pair<std::string, ad::Parameter*>> named_params() {
    std::vector<std::pair<std::string, ad::Parameter*>> out;
    auto push = [&](ad::Parameter* p) { out.push_back({p->name, p}); };
    push(&density3.raw);
    push(&occupancy4.raw);
    for (auto* p : warp_back.mlp.params()) push(p);
    for (auto* p : warp_fwd.mlp.params()) push(p);
    for (auto* p : color_warm.params()) push(p);
    for (auto* p : color_comp.params()) push(p);
    for (auto* p : encoder.params()) push(p);
    for (auto* p : attention.params()) push(p);
    push(&background);
    return out;
  }

  void assert_finite() const {
    auto& self = const_cast<SceneModel&>(*this);
    for (auto& [name, p] : self.named_params())
      check(p->finite(), ErrorKind::Numeric, "non-finite parameter values in " + name);
  }
};

}  // namespace dynavol
