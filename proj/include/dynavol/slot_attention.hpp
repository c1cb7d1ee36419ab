// Copyright (c) 2026 dynavol authors
// SPDX-License-Identifier: Apache-2.0
//
// Global object features: a strided 3D conv encoder flattens the activated
// occupancy volume into M local features, and an iterative attention block
// with a GRU refines N slot vectors against them. Slots carry state across
// the timestamps of an episode; episode averages seed the next episode.
#pragma once

#include <array>
#include <vector>

#include "dynavol/mlp.hpp"
#include "dynavol/voxel_grid.hpp"

namespace dynavol {

// --- Volume encoder E_theta -----------------------------------------------------

struct VolumeEncoder {
  GridDims input_dims;
  int in_channels = 1;
  std::array<int, 3> channels{32, 64, 64};
  int feature_dim = 64;  // D
  ad::Parameter w1, b1, w2, b2, w3, b3, wproj, bproj;

  static int down(int n) { return (n - 1) / 2 + 1; }

  GridDims dims_after(int layer) const {
    GridDims d = input_dims;
    for (int i = 0; i < layer; i++) d = {down(d.nx), down(d.ny), down(d.nz)};
    return d;
  }
  int out_locations() const { return int(dims_after(3).nvox()); }  // M

  static VolumeEncoder make(const std::string& name, GridDims dims, int in_channels,
                            std::array<int, 3> channels, int feature_dim, Rng& rng) {
    check(dims.nx >= 8 && dims.ny >= 8 && dims.nz >= 8, ErrorKind::Config,
          "volume encoder: resolution too small for 3 stride-2 downsamplings");
    VolumeEncoder e;
    e.input_dims = dims;
    e.in_channels = in_channels;
    e.channels = channels;
    e.feature_dim = feature_dim;
    auto conv_param = [&](const std::string& n, int cout, int cin) {
      ad::Parameter p(n, {cout, cin * 27});
      double bound = std::sqrt(6.0 / double(cin * 27));
      for (auto& v : p.values) v = float(rng.uniform(-bound, bound));
      return p;
    };
    e.w1 = conv_param(name + ".w1", channels[0], in_channels);
    e.b1 = ad::Parameter(name + ".b1", {channels[0]});
    e.w2 = conv_param(name + ".w2", channels[1], channels[0]);
    e.b2 = ad::Parameter(name + ".b2", {channels[1]});
    e.w3 = conv_param(name + ".w3", channels[2], channels[1]);
    e.b3 = ad::Parameter(name + ".b3", {channels[2]});
    e.wproj = ad::Parameter(name + ".wproj", {feature_dim, channels[2]});
    double bound = std::sqrt(6.0 / double(channels[2] + feature_dim));
    for (auto& v : e.wproj.values) v = float(rng.uniform(-bound, bound));
    e.bproj = ad::Parameter(name + ".bproj", {feature_dim});
    return e;
  }

  // volume is [nvox x in_channels]; returns h_t, [M x D].
  ad::Var forward(ad::Tape& t, ad::Var volume) const {
    check(t.rows(volume) == int(input_dims.nvox()) && t.cols(volume) == in_channels,
          ErrorKind::Numeric, "volume encoder: input shape mismatch");
    auto& self = const_cast<VolumeEncoder&>(*this);
    GridDims d0 = input_dims, d1 = dims_after(1), d2 = dims_after(2);
    ad::Var h = ad::conv3d(t, volume, {d0.nx, d0.ny, d0.nz}, 2, t.param(self.w1), t.param(self.b1),
                           ad::Act::Relu);
    h = ad::conv3d(t, h, {d1.nx, d1.ny, d1.nz}, 2, t.param(self.w2), t.param(self.b2),
                   ad::Act::Relu);
    h = ad::conv3d(t, h, {d2.nx, d2.ny, d2.nz}, 2, t.param(self.w3), t.param(self.b3),
                   ad::Act::Relu);
    return ad::affine(t, h, t.param(self.wproj), t.param(self.bproj), ad::Act::None);
  }

  std::vector<ad::Parameter*> params() {
    return {&w1, &b1, &w2, &b2, &w3, &b3, &wproj, &bproj};
  }
};

// --- Iterative attention Z_omega ---------------------------------------------------

struct AttentionStepVars {
  ad::Var attn;       // A [M x N], rows sum to 1 over slots
  ad::Var mixing;     // W [M x N], columns sum to 1 over locations
  ad::Var updates;    // U [N x D]
  ad::Var slots_new;  // GRU(U, S_prev)
};

struct SlotAttention {
  int dim = 64;        // D
  int iterations = 3;  // attention rounds per timestamp
  ad::Parameter proj_q, proj_k, proj_v;          // [D x D], no bias
  ad::Parameter gru_wih, gru_whh, gru_bih, gru_bhh;  // [3D x D], [3D]

  static SlotAttention make(const std::string& name, int dim, Rng& rng) {
    SlotAttention a;
    a.dim = dim;
    auto lin = [&](const std::string& n) {
      ad::Parameter p(n, {dim, dim});
      double bound = std::sqrt(6.0 / double(2 * dim));
      for (auto& v : p.values) v = float(rng.uniform(-bound, bound));
      return p;
    };
    a.proj_q = lin(name + ".q");
    a.proj_k = lin(name + ".k");
    a.proj_v = lin(name + ".v");
    double gb = 1.0 / std::sqrt(double(dim));
    auto gru = [&](const std::string& n, std::vector<int> shape) {
      ad::Parameter p(n, std::move(shape));
      for (auto& v : p.values) v = float(rng.uniform(-gb, gb));
      return p;
    };
    a.gru_wih = gru(name + ".gru_wih", {3 * dim, dim});
    a.gru_whh = gru(name + ".gru_whh", {3 * dim, dim});
    a.gru_bih = gru(name + ".gru_bih", {3 * dim});
    a.gru_bhh = gru(name + ".gru_bhh", {3 * dim});
    return a;
  }

  ad::Var gru_cell(ad::Tape& t, ad::Var input, ad::Var hidden) const {
    auto& self = const_cast<SlotAttention&>(*this);
    int D = dim;
    ad::Var gi = ad::affine(t, input, t.param(self.gru_wih), t.param(self.gru_bih), ad::Act::None);
    ad::Var gh = ad::affine(t, hidden, t.param(self.gru_whh), t.param(self.gru_bhh), ad::Act::None);
    ad::Var r = ad::sigmoid(t, ad::add(t, ad::slice_cols(t, gi, 0, D), ad::slice_cols(t, gh, 0, D)));
    ad::Var z = ad::sigmoid(
        t, ad::add(t, ad::slice_cols(t, gi, D, 2 * D), ad::slice_cols(t, gh, D, 2 * D)));
    ad::Var n = ad::tanh_op(
        t, ad::add(t, ad::slice_cols(t, gi, 2 * D, 3 * D),
                   ad::mul(t, r, ad::slice_cols(t, gh, 2 * D, 3 * D))));
    ad::Var one_minus_z = ad::add_const(t, ad::neg(t, z), 1.0);
    return ad::add(t, ad::mul(t, one_minus_z, n), ad::mul(t, z, hidden));
  }

  // One round: attention over locations, normalized mixing, GRU update.
  AttentionStepVars attention_step(ad::Tape& t, ad::Var features, ad::Var slots) const {
    auto& self = const_cast<SlotAttention&>(*this);
    ad::Var kh = ad::affine(t, features, t.param(self.proj_k), -1, ad::Act::None);  // [M x D]
    ad::Var qs = ad::affine(t, slots, t.param(self.proj_q), -1, ad::Act::None);     // [N x D]
    ad::Var vh = ad::affine(t, features, t.param(self.proj_v), -1, ad::Act::None);  // [M x D]
    ad::Var logits = ad::scale(t, ad::matmul(t, kh, qs, false, true), 1.0 / std::sqrt(double(dim)));
    AttentionStepVars out;
    out.attn = ad::softmax_rows(t, logits);      // rows over N
    out.mixing = ad::normalize_cols(t, out.attn);  // columns over M
    out.updates = ad::matmul(t, out.mixing, vh, true, false);  // [N x D]
    out.slots_new = gru_cell(t, out.updates, slots);
    return out;
  }

  // `iterations` rounds starting from slots_init.
  ad::Var refine(ad::Tape& t, ad::Var features, ad::Var slots_init) const {
    ad::Var s = slots_init;
    for (int i = 0; i < iterations; i++) s = attention_step(t, features, s).slots_new;
    return s;
  }

  std::vector<ad::Parameter*> params() {
    return {&proj_q, &proj_k, &proj_v, &gru_wih, &gru_whh, &gru_bih, &gru_bhh};
  }
};

// --- Episode bookkeeping -----------------------------------------------------------

// Slot state across a training episode (one sweep over t = 1..T). `current`
// holds the latest refined slots, detached; `prev_avg` is the previous
// episode's timestamp average used both to seed this episode and to stabilize
// the render-time features.
struct SlotBank {
  int num_slots = 0, slot_dim = 0;
  std::vector<double> current;
  std::vector<double> prev_avg;
  std::vector<double> accum;
  int accum_count = 0;
  int episode = 0;
  bool started = false;

  SlotBank() = default;
  SlotBank(int n, int d)
      : num_slots(n), slot_dim(d), current(size_t(n) * d, 0.0), prev_avg(size_t(n) * d, 0.0),
        accum(size_t(n) * d, 0.0) {}

  size_t size() const { return size_t(num_slots) * size_t(slot_dim); }
  bool has_prev_average() const { return episode > 0; }

  // Start episode e: slots come from a normal draw for the very first
  // episode, afterwards from the completed previous episode's average.
  void episode_init(int num_timestamps, Rng& rng) {
    if (!started) {
      for (auto& v : current) v = rng.normal();
      started = true;
      return;
    }
    roll_average(num_timestamps);
  }

  // Roll the last episode's accumulator after training so render-time
  // features settle on the final episode average.
  void finalize(int num_timestamps) { roll_average(num_timestamps); }

  // Record the refined slots of one timestamp (detached values).
  void record_timestamp(const std::vector<double>& slots) {
    check(slots.size() == size(), ErrorKind::Numeric, "slot bank: shape mismatch");
    for (size_t i = 0; i < size(); i++) accum[i] += slots[i];
    accum_count++;
    current = slots;
  }

  // Render-time features: mean of the current slots and the previous
  // episode's average (just the current slots during the first episode).
  std::vector<double> render_features() const {
    if (!has_prev_average()) return current;
    std::vector<double> out(size());
    for (size_t i = 0; i < size(); i++) out[i] = 0.5 * (current[i] + prev_avg[i]);
    return out;
  }

  // On-tape variant used during training so gradients flow into S_t.
  ad::Var render_features_op(ad::Tape& t, ad::Var slots_var) const {
    if (!has_prev_average()) return slots_var;
    ad::Var avg = t.constant(num_slots, slot_dim, prev_avg);
    return ad::scale(t, ad::add(t, slots_var, avg), 0.5);
  }

 private:
  void roll_average(int num_timestamps) {
    check(accum_count == num_timestamps, ErrorKind::Numeric,
          strfmt("episode_init: previous episode incomplete (%d of %d timestamps)", accum_count,
                 num_timestamps));
    for (size_t i = 0; i < size(); i++) prev_avg[i] = accum[i] / double(accum_count);
    std::fill(accum.begin(), accum.end(), 0.0);
    accum_count = 0;
    current = prev_avg;
    episode++;
  }
};

}  // namespace dynavol
