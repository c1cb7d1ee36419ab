// Copyright (c) 2026 dynavol authors
// SPDX-License-Identifier: Apache-2.0
//
// Quadrature volume rendering over per-slot densities: density-weighted
// composition of slot predictions at each sample, transmittance-weighted
// accumulation along each ray, and the two color MLPs (non-compositional
// warmup net and the slot-conditioned compositional net).
#pragma once

#include <vector>

#include "dynavol/dataset.hpp"
#include "dynavol/mlp.hpp"
#include "dynavol/voxel_grid.hpp"

namespace dynavol {

// --- Point sampling ----------------------------------------------------------

// Bin centers over [near, far]; jittered within bins when stratified.
// delta_i is the spacing to the next sample; the last sample closes out its
// far-boundary bin, so the unstratified case has all deltas equal.
inline void sample_ray_points(double near, double far, int P, bool stratified, Rng* rng,
                              std::vector<double>& ts, std::vector<double>& deltas) {
  check(P >= 1, ErrorKind::Config, "sample_points: P must be >= 1");
  double bin = (far - near) / double(P);
  ts.resize(size_t(P));
  deltas.resize(size_t(P));
  for (int i = 0; i < P; i++) {
    double u = stratified ? rng->uniform() : 0.5;
    ts[size_t(i)] = near + (double(i) + u) * bin;
  }
  for (int i = 0; i + 1 < P; i++) deltas[size_t(i)] = ts[size_t(i) + 1] - ts[size_t(i)];
  deltas[size_t(P) - 1] = bin;
}

// Flattened sample arrays for a ray batch, sample-major (ray r, sample p at
// row r*P + p).
struct SamplePlan {
  int rays = 0, samples_per_ray = 0;
  std::vector<double> points;  // [R*P x 3] world positions
  std::vector<double> deltas;  // [R*P]
  std::vector<double> times;   // [R*P]
  std::vector<double> dirs;    // [R*P x 3]
  size_t count() const { return size_t(rays) * size_t(samples_per_ray); }
};

inline SamplePlan sample_points(const RayBatch& batch, int P, bool stratified, Rng* rng) {
  SamplePlan plan;
  plan.rays = int(batch.size());
  plan.samples_per_ray = P;
  plan.points.reserve(plan.count() * 3);
  plan.deltas.reserve(plan.count());
  plan.times.reserve(plan.count());
  plan.dirs.reserve(plan.count() * 3);
  std::vector<double> ts, ds;
  for (size_t r = 0; r < batch.size(); r++) {
    sample_ray_points(batch.near[r], batch.far[r], P, stratified, rng, ts, ds);
    for (int p = 0; p < P; p++) {
      Vec3 x = batch.origins[r] + batch.dirs[r] * ts[size_t(p)];
      plan.points.insert(plan.points.end(), {x.x, x.y, x.z});
      plan.deltas.push_back(ds[size_t(p)]);
      plan.times.push_back(batch.times[r]);
      plan.dirs.insert(plan.dirs.end(), {batch.dirs[r].x, batch.dirs[r].y, batch.dirs[r].z});
    }
  }
  return plan;
}

// --- Composition (density-weighted mean over slots) ----------------------------

// Reference scalar form. With all densities zero the sample contributes
// nothing downstream, so it composes to (0, black) via the guarded
// denominator.
struct ComposedSample {
  double sigma_bar = 0;
  Vec3 c_bar;
};

inline ComposedSample compose(const std::vector<double>& sigmas, const std::vector<Vec3>& colors) {
  check(sigmas.size() == colors.size() && !sigmas.empty(), ErrorKind::Numeric,
        "compose: slot count mismatch");
  double sum = 0;
  for (double s : sigmas) {
    check(s >= 0, ErrorKind::Numeric, "compose: negative density");
    sum += s;
  }
  double denom = std::max(sum, 1e-10);
  ComposedSample out;
  for (size_t n = 0; n < sigmas.size(); n++) {
    double w = sigmas[n] / denom;
    out.sigma_bar += w * sigmas[n];
    out.c_bar += colors[n] * w;
  }
  return out;
}

// Tape form over [K x N] activated densities.
struct ComposeVars {
  ad::Var weights;    // [K x N], rows sum to 1 wherever the row has density
  ad::Var sigma_bar;  // [K x 1]
};

inline ComposeVars compose_op(ad::Tape& t, ad::Var sigma_act) {
  ad::Var s = ad::row_sum(t, sigma_act);
  ad::Var guarded = ad::clamp(t, s, 1e-10, 1e300);
  ad::Var w = ad::mul_colvec(t, sigma_act, ad::recip(t, guarded));
  ad::Var sbar = ad::row_sum(t, ad::mul(t, w, sigma_act));
  return {w, sbar};
}

// --- Quadrature --------------------------------------------------------------

struct RenderVars {
  ad::Var color_fg;  // [R x 3]
  ad::Var weights;   // [R x P] per-sample contribution T_i (1 - exp(-sigma delta))
  ad::Var w_last;    // [R x 1]
  ad::Var t_end;     // [R x 1] residual transmittance past the last sample
};

inline RenderVars render_quadrature(ad::Tape& t, ad::Var sigma_bar_flat /*[R*P x 1]*/,
                                    const std::vector<double>& deltas, int rays, int P,
                                    ad::Var cbar /*[R*P x 3]*/) {
  ad::Var sigma_rp = ad::reshape(t, sigma_bar_flat, rays, P);
  ad::Var delta_c = t.constant(rays, P, deltas);
  ad::Var sd = ad::mul(t, sigma_rp, delta_c);
  ad::Var transmittance = ad::exp_op(t, ad::neg(t, ad::cumsum_exclusive_rows(t, sd)));
  ad::Var alpha = ad::add_const(t, ad::neg(t, ad::exp_op(t, ad::neg(t, sd))), 1.0);
  ad::Var w = ad::mul(t, transmittance, alpha);
  ad::Var w_flat = ad::reshape(t, w, rays * P, 1);
  RenderVars out;
  out.weights = w;
  out.color_fg = ad::sum_groups(t, ad::mul_colvec(t, cbar, w_flat), P);
  out.w_last = ad::slice_cols(t, w, P - 1, P);
  out.t_end = ad::exp_op(t, ad::neg(t, ad::row_sum(t, sd)));
  return out;
}

// Learned constant background composited with residual transmittance.
inline ad::Var background_color(ad::Tape& t, ad::Parameter& bg_raw) {
  return ad::sigmoid(t, t.param(bg_raw, 1, 3));
}

inline ad::Var composite_background(ad::Tape& t, const RenderVars& rv, ad::Var bg_rgb) {
  return ad::add(t, rv.color_fg, ad::matmul(t, rv.t_end, bg_rgb));
}

// --- Color networks ------------------------------------------------------------

// Non-compositional warmup net: (x, d) -> rgb. The view direction is fed raw.
struct WarmupColorNet {
  int spatial_frequencies = 5;
  Mlp mlp;

  static WarmupColorNet make(const std::string& name, int Lx, int hidden, int n_hidden, Rng& rng) {
    WarmupColorNet net;
    net.spatial_frequencies = Lx;
    net.mlp = Mlp::make(name, ad::posenc_dim(3, Lx, true) + 3, hidden, n_hidden, 3,
                        ad::Act::Sigmoid, rng);
    return net;
  }

  ad::Var forward(ad::Tape& t, ad::Var pts, const std::vector<double>& dirs) const {
    ad::Var pe = ad::posenc(t, pts, spatial_frequencies, true);
    ad::Var d = t.constant(t.rows(pts), 3, dirs);
    return mlp.forward(t, ad::concat_cols(t, {pe, d}));
  }

  std::vector<ad::Parameter*> params() { return mlp.params(); }
};

// Compositional net: (x, d, slot feature) -> rgb, weights shared across
// slots. The first layer is split into point and slot halves so the point
// half is computed once per sample and the slot half once per slot.
struct CompColorNet {
  int spatial_frequencies = 5;
  int slot_dim = 64;
  int hidden = 64;
  ad::Parameter w_point, w_slot, b1;
  Mlp tail;  // remaining hidden layers + sigmoid head

  int point_feat_dim() const { return ad::posenc_dim(3, spatial_frequencies, true) + 3; }

  static CompColorNet make(const std::string& name, int Lx, int slot_dim, int hidden, int n_hidden,
                           Rng& rng) {
    CompColorNet net;
    net.spatial_frequencies = Lx;
    net.slot_dim = slot_dim;
    net.hidden = hidden;
    int fpt = net.point_feat_dim();
    net.w_point = ad::Parameter(name + ".w_point", {hidden, fpt});
    net.w_slot = ad::Parameter(name + ".w_slot", {hidden, slot_dim});
    net.b1 = ad::Parameter(name + ".b1", {hidden});
    double bp = std::sqrt(6.0 / double(fpt + slot_dim));
    for (auto& v : net.w_point.values) v = float(rng.uniform(-bp, bp));
    for (auto& v : net.w_slot.values) v = float(rng.uniform(-bp, bp));
    net.tail = Mlp::make(name + ".tail", hidden, hidden, n_hidden - 1, 3, ad::Act::Sigmoid, rng);
    return net;
  }

  // Per-sample feature block [K x Fpt]: embedded position then raw direction.
  ad::Var point_features(ad::Tape& t, ad::Var pts, const std::vector<double>& dirs) const {
    ad::Var pe = ad::posenc(t, pts, spatial_frequencies, true);
    ad::Var d = t.constant(t.rows(pts), 3, dirs);
    return ad::concat_cols(t, {pe, d});
  }

  // Colors for (point, slot) pairs.
  ad::Var forward_pairs(ad::Tape& t, ad::Var pt_feat, ad::Var slot_feats, ad::IndexVec pair_pt,
                        ad::IndexVec pair_slot) const {
    auto& self = const_cast<CompColorNet&>(*this);
    ad::Var zx = ad::affine(t, pt_feat, t.param(self.w_point), -1, ad::Act::None);
    ad::Var zs = ad::affine(t, slot_feats, t.param(self.w_slot), -1, ad::Act::None);
    ad::Var z = ad::gather_add_rows(t, zx, pair_pt, zs, pair_slot);
    ad::Var h = ad::bias_act(t, z, t.param(self.b1), ad::Act::Relu);
    return tail.forward(t, h);
  }

  std::vector<ad::Parameter*> params() {
    std::vector<ad::Parameter*> out{&w_point, &w_slot, &b1};
    for (auto* p : tail.params()) out.push_back(p);
    return out;
  }
};

}  // namespace dynavol
