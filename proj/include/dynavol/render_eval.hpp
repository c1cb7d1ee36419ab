// Copyright (c) 2026 dynavol authors
// SPDX-License-Identifier: Apache-2.0
//
// Forward-only image rendering from a trained model. Warmup-stage models
// render through the canonical density grid and the non-compositional color
// net; stage-3 models render per-slot occupancy with slot-conditioned colors.
// Each slot channel can carry its own backward warp (trajectory edits); the
// learned field is the default.
#pragma once

#include <numeric>
#include <vector>

#include "dynavol/model.hpp"
#include "dynavol/renderer.hpp"

namespace dynavol {

struct RenderResult {
  Image image;
  // per-pixel per-slot color contribution beta_n (stage-3 models, on request)
  std::vector<double> betas;      // [pixels x N]
  std::vector<double> fg_weight;  // [pixels] total foreground weight
  int num_slots = 0;
};

// Renders one chunk of rays; plan must be unstratified for determinism.
inline void render_chunk(SceneModel& m, const RayBatch& batch, const SamplePlan& plan,
                         bool want_betas, std::vector<double>& pixel_out,
                         std::vector<double>& beta_out, std::vector<double>& fg_out) {
  ad::Tape t(false);
  int R = int(batch.size()), P = plan.samples_per_ray;
  int K = R * P;
  const GridSpec& spec = m.grid_spec();

  if (m.stage < 3) {
    std::vector<double> disp = m.disable_learned_warp
                                   ? std::vector<double>(size_t(K) * 3, 0.0)
                                   : displacement_values(m.warp_back, plan.points, plan.times);
    ad::Var warped = ad::add(t, t.constant(K, 3, plan.points), t.constant(K, 3, disp));
    ad::Var grid = t.param(m.density3.raw, 1, int(spec.dims.nvox()));
    ad::Var sigma =
        activate_density_op(t, query_grid_raw(t, grid, spec, warped), spec.softplus_shift);
    ad::Var colors = m.color_warm.forward(t, warped, plan.dirs);
    auto rv = render_quadrature(t, sigma, plan.deltas, R, P, colors);
    ad::Var pixel = composite_background(t, rv, background_color(t, m.background));
    pixel_out = t.val(pixel);
    fg_out.assign(size_t(R), 0.0);
    const auto& wv = t.val(rv.weights);
    for (int r = 0; r < R; r++)
      for (int p = 0; p < P; p++) fg_out[size_t(r)] += wv[size_t(r) * P + p];
    beta_out.clear();
    return;
  }

  int N = m.cfg.num_slots;
  size_t nvox = spec.dims.nvox();
  // per-channel warped positions and density columns; channels without an
  // override share one learned-warp evaluation
  std::vector<double> disp_shared;
  bool need_shared = false;
  for (int n = 0; n < N; n++) need_shared |= !m.warp_overrides[size_t(n)];
  if (need_shared)
    disp_shared = m.disable_learned_warp
                      ? std::vector<double>(size_t(K) * 3, 0.0)
                      : displacement_values(m.warp_back, plan.points, plan.times);
  ad::Var warped_shared = -1;
  if (need_shared)
    warped_shared = ad::add(t, t.constant(K, 3, plan.points), t.constant(K, 3, disp_shared));

  std::vector<ad::Var> sigma_cols(static_cast<size_t>(N));
  std::vector<ad::Var> warped_vars(static_cast<size_t>(N));
  for (int n = 0; n < N; n++) {
    if (!m.warp_overrides[size_t(n)]) {
      warped_vars[size_t(n)] = warped_shared;
    } else {
      std::vector<double> disp(size_t(K) * 3);
      const RigidMotion& motion = *m.warp_overrides[size_t(n)];
      for (int k = 0; k < K; k++) {
        Vec3 d = motion.backward_displacement(
            {plan.points[size_t(k) * 3], plan.points[size_t(k) * 3 + 1],
             plan.points[size_t(k) * 3 + 2]},
            plan.times[size_t(k)]);
        disp[size_t(k) * 3] = d.x;
        disp[size_t(k) * 3 + 1] = d.y;
        disp[size_t(k) * 3 + 2] = d.z;
      }
      warped_vars[size_t(n)] = ad::add(t, t.constant(K, 3, plan.points), t.constant(K, 3, disp));
    }
    std::vector<double> channel(m.occupancy4.raw.values.begin() + std::ptrdiff_t(size_t(n) * nvox),
                                m.occupancy4.raw.values.begin() +
                                    std::ptrdiff_t(size_t(n + 1) * nvox));
    ad::Var cgrid = t.constant(1, int(nvox), channel);
    sigma_cols[size_t(n)] = activate_density_op(
        t, query_grid_raw(t, cgrid, spec, warped_vars[size_t(n)]), spec.softplus_shift);
  }
  ad::Var sigma = ad::concat_cols(t, sigma_cols);
  auto comp = compose_op(t, sigma);

  std::vector<double> shat = m.slots.render_features();
  ad::Var shat_var = t.constant(N, m.cfg.slot_dim, shat);

  // colors per channel for samples with non-zero channel density
  // (copy: creating more ops below reallocates the tape's array storage)
  const std::vector<double> sv = t.val(sigma);
  ad::Var cbar = t.constant(K, 3);
  for (int n = 0; n < N; n++) {
    std::vector<int> active, flat;
    for (int k = 0; k < K; k++)
      if (sv[size_t(k) * N + n] > 0.0) {
        active.push_back(k);
        flat.push_back(k * N + n);
      }
    if (active.empty()) continue;
    std::vector<double> dirs_active;
    dirs_active.reserve(active.size() * 3);
    for (int k : active)
      dirs_active.insert(dirs_active.end(),
                         {plan.dirs[size_t(k) * 3], plan.dirs[size_t(k) * 3 + 1],
                          plan.dirs[size_t(k) * 3 + 2]});
    ad::Var pts_active = ad::gather_rows(t, warped_vars[size_t(n)], ad::make_index(active));
    ad::Var feat = m.color_comp.point_features(t, pts_active, dirs_active);
    std::vector<int> pair_pt(active.size());
    std::iota(pair_pt.begin(), pair_pt.end(), 0);
    std::vector<int> pair_slot(active.size(), n);
    ad::Var colors = m.color_comp.forward_pairs(t, feat, shat_var, ad::make_index(pair_pt),
                                                ad::make_index(pair_slot));
    ad::Var w_active = ad::gather_elems(t, comp.weights, ad::make_index(flat));
    cbar = ad::add(t, cbar,
                   ad::scatter_add_rows(t, ad::mul_colvec(t, colors, w_active),
                                        ad::make_index(active), K));
  }

  auto rv = render_quadrature(t, comp.sigma_bar, plan.deltas, R, P, cbar);
  ad::Var pixel = composite_background(t, rv, background_color(t, m.background));
  pixel_out = t.val(pixel);

  const auto& wv = t.val(rv.weights);
  fg_out.assign(size_t(R), 0.0);
  for (int r = 0; r < R; r++)
    for (int p = 0; p < P; p++) fg_out[size_t(r)] += wv[size_t(r) * P + p];
  if (want_betas) {
    const auto& slot_w = t.val(comp.weights);
    beta_out.assign(size_t(R) * size_t(N), 0.0);
    for (int r = 0; r < R; r++)
      for (int p = 0; p < P; p++) {
        double w = wv[size_t(r) * P + p];
        if (w == 0.0) continue;
        size_t row = size_t(r) * P + p;
        for (int n = 0; n < N; n++)
          beta_out[size_t(r) * N + n] += w * slot_w[row * N + n];
      }
  } else {
    beta_out.clear();
  }
}

// Renders a full view; deterministic (unstratified samples, no RNG).
inline RenderResult render_view_model(SceneModel& m, const CameraPose& cam, double time,
                                      bool want_betas = false) {
  RenderResult res;
  res.image = Image(cam.width, cam.height);
  res.num_slots = m.stage >= 3 ? m.cfg.num_slots : 0;
  size_t npix = size_t(cam.width) * size_t(cam.height);
  res.fg_weight.assign(npix, 0.0);
  if (want_betas && m.stage >= 3) res.betas.assign(npix * size_t(res.num_slots), 0.0);

  const int chunk_rays = 1024;
  std::vector<std::pair<int, int>> pixels;
  pixels.reserve(size_t(chunk_rays));
  auto flush = [&](int first_pixel) {
    if (pixels.empty()) return;
    RayBatch batch;
    batch.reserve(pixels.size());
    for (auto [x, y] : pixels) {
      Ray r = camera_ray(cam, x + 0.5, y + 0.5);
      double t0, t1;
      if (!m.bbox.clip_ray(r.origin, r.dir, t0, t1)) t0 = t1 = 0.0;
      t0 = std::max(t0, 1e-4);
      if (t1 < t0) t1 = t0;
      batch.origins.push_back(r.origin);
      batch.dirs.push_back(r.dir);
      batch.target_rgb.insert(batch.target_rgb.end(), {0, 0, 0});
      batch.times.push_back(time);
      batch.near.push_back(t0);
      batch.far.push_back(t1);
      batch.frame_index.push_back(0);
    }
    SamplePlan plan = sample_points(batch, m.cfg.samples_per_ray, false, nullptr);
    std::vector<double> pix, betas, fg;
    render_chunk(m, batch, plan, want_betas && m.stage >= 3, pix, betas, fg);
    for (size_t i = 0; i < pixels.size(); i++) {
      size_t pidx = size_t(first_pixel) + i;
      for (int c = 0; c < 3; c++)
        res.image.rgb[pidx * 3 + size_t(c)] = float(pix[i * 3 + size_t(c)]);
      res.fg_weight[pidx] = fg[i];
      if (!betas.empty())
        for (int n = 0; n < res.num_slots; n++)
          res.betas[pidx * size_t(res.num_slots) + size_t(n)] =
              betas[i * size_t(res.num_slots) + size_t(n)];
    }
    pixels.clear();
  };

  int emitted = 0;
  for (int y = 0; y < cam.height; y++)
    for (int x = 0; x < cam.width; x++) {
      pixels.push_back({x, y});
      if (int(pixels.size()) == chunk_rays) {
        flush(emitted);
        emitted += chunk_rays;
      }
    }
  flush(emitted);
  return res;
}

}  // namespace dynavol
