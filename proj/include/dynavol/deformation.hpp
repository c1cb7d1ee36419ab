// Copyright (c) 2026 dynavol authors
// SPDX-License-Identifier: Apache-2.0
//
// Bidirectional canonical-space dynamics: the backward field maps a query
// point at time t to its position at the initial timestamp; the forward field
// maps an initial-time point to time t. Both take sinusoidally embedded
// (point, time) inputs and start from the identity warp (zero final layer).
#pragma once

#include <vector>

#include "dynavol/mlp.hpp"
#include "dynavol/voxel_grid.hpp"

namespace dynavol {

struct PosEncConfig {
  int spatial_frequencies = 5;  // L_x
  int temporal_frequencies = 4; // L_t
  bool include_input = true;

  int point_dim() const { return ad::posenc_dim(3, spatial_frequencies, include_input); }
  int time_dim() const { return ad::posenc_dim(1, temporal_frequencies, include_input); }
  int input_dim() const { return point_dim() + time_dim(); }
};

struct DeformationNet {
  enum class Direction { Backward, Forward };
  Direction direction = Direction::Backward;
  PosEncConfig posenc;
  Mlp mlp;
};

inline DeformationNet make_deformation_net(const std::string& name, DeformationNet::Direction dir,
                                           const PosEncConfig& pe, int hidden, int n_hidden,
                                           Rng& rng) {
  DeformationNet net;
  net.direction = dir;
  net.posenc = pe;
  net.mlp = Mlp::make(name, pe.input_dim(), hidden, n_hidden, 3, ad::Act::None, rng,
                      /*zero_init_last=*/true);
  return net;
}

// Embedded time block for K rows (constant data).
inline std::vector<double> time_features(const PosEncConfig& pe, const std::vector<double>& times) {
  int td = pe.time_dim();
  std::vector<double> out(times.size() * size_t(td));
  ad::posenc_fill(times.data(), int(times.size()), 1, pe.temporal_frequencies, pe.include_input,
                  out.data());
  return out;
}

// Displacement for constant points [K x 3] with per-row times [K].
inline ad::Var deform_displacement(ad::Tape& t, const DeformationNet& net,
                                   const std::vector<double>& pts,
                                   const std::vector<double>& times) {
  int K = int(times.size());
  check(pts.size() == size_t(K) * 3, ErrorKind::Numeric, "deform: pts/times size mismatch");
  const PosEncConfig& pe = net.posenc;
  int pd = pe.point_dim(), td = pe.time_dim();
  std::vector<double> input(size_t(K) * size_t(pd + td));
  // interleave [posenc(x) | posenc(t)] rows directly into one constant block
  std::vector<double> ppart(size_t(K) * size_t(pd));
  ad::posenc_fill(pts.data(), K, 3, pe.spatial_frequencies, pe.include_input, ppart.data());
  std::vector<double> tpart = time_features(pe, times);
  for (int r = 0; r < K; r++) {
    std::copy_n(&ppart[size_t(r) * pd], pd, &input[size_t(r) * (pd + td)]);
    std::copy_n(&tpart[size_t(r) * td], td, &input[size_t(r) * (pd + td) + pd]);
  }
  ad::Var x = t.constant(K, pd + td, input);
  return net.mlp.forward(t, x);
}

// Displacement for on-tape points (gradients flow into the points).
inline ad::Var deform_displacement_var(ad::Tape& t, const DeformationNet& net, ad::Var pts,
                                       const std::vector<double>& times) {
  const PosEncConfig& pe = net.posenc;
  check(size_t(t.rows(pts)) == times.size(), ErrorKind::Numeric, "deform: pts/times size mismatch");
  ad::Var ppart = ad::posenc(t, pts, pe.spatial_frequencies, pe.include_input);
  ad::Var tpart = t.constant(int(times.size()), pe.time_dim(), time_features(pe, times));
  return net.mlp.forward(t, ad::concat_cols(t, {ppart, tpart}));
}

// Warped points x + f(x, t) as an on-tape array.
inline ad::Var warp_points(ad::Tape& t, const DeformationNet& net, const std::vector<double>& pts,
                           const std::vector<double>& times) {
  ad::Var delta = deform_displacement(t, net, pts, times);
  ad::Var base = t.constant(int(times.size()), 3, pts);
  return ad::add(t, base, delta);
}

// Occupancy query through the backward warp: interp(x + f(x,t), V).
inline ad::Var query_warped_raw(ad::Tape& t, ad::Var grid_var, const GridSpec& spec,
                                const DeformationNet& backward_net, const std::vector<double>& pts,
                                const std::vector<double>& times) {
  ad::Var warped = warp_points(t, backward_net, pts, times);
  return query_grid_raw(t, grid_var, spec, warped);
}

// Forward-only displacement evaluation (no gradients), [K x 3].
inline std::vector<double> displacement_values(const DeformationNet& net,
                                               const std::vector<double>& pts,
                                               const std::vector<double>& times) {
  ad::Tape t(false);
  ad::Var d = deform_displacement(t, net, pts, times);
  return t.val(d);
}

// v_t = f'(x, timestamps[t]) - f'(x, timestamps[t-1]) for 1-based frame index
// t in [1, T-1]; `timestamps` holds the T normalized frame times.
inline Vec3 velocity(const DeformationNet& forward_net, const Vec3& x, int t_index,
                     const std::vector<double>& timestamps) {
  int T = int(timestamps.size());
  check(t_index >= 1 && t_index <= T - 1, ErrorKind::Config,
        strfmt("velocity: t_index %d out of range [1, %d]", t_index, T - 1));
  std::vector<double> pts{x.x, x.y, x.z};
  auto a = displacement_values(forward_net, pts, {timestamps[size_t(t_index)]});
  auto b = displacement_values(forward_net, pts, {timestamps[size_t(t_index) - 1]});
  return {a[0] - b[0], a[1] - b[1], a[2] - b[2]};
}

}  // namespace dynavol
