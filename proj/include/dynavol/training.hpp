// Copyright (c) 2026 dynavol authors
// SPDX-License-Identifier: Apache-2.0
//
// Three-stage optimization: (1) warmup of the canonical density grid, the
// bidirectional deformation fields and the non-compositional color net;
// (2) 3D-to-4D voxel expansion via the feature-graph components; (3) episodic
// optimization of the per-slot occupancy grid with slot attention and the
// compositional renderer.
//
// Ray batches may fan out over worker threads: each worker owns a tape over a
// contiguous ray chunk, and gradients are reduced into the shared parameters
// in fixed chunk order. Results are deterministic for a fixed worker count;
// --workers 1 is the reference mode.
#pragma once

#include <filesystem>
#include <fstream>
#include <thread>

#include "dynavol/checkpoint.hpp"
#include "dynavol/dataset.hpp"
#include "dynavol/losses.hpp"
#include "dynavol/model.hpp"
#include "dynavol/optim.hpp"
#include "dynavol/renderer.hpp"

namespace dynavol {

struct StepResult {
  double l_render = 0, l_point = 0, l_ent = 0, l_cyc = 0, total = 0;
  std::vector<double> refined_slots;  // stage 3 only
};

namespace train_detail {

// View of one contiguous ray chunk of a sample plan.
struct ChunkView {
  int rays = 0, P = 0;
  std::vector<double> points, deltas, times, dirs, targets;
};

inline ChunkView slice_plan(const SamplePlan& plan, const RayBatch& batch, int ray_begin,
                            int ray_end) {
  ChunkView c;
  c.rays = ray_end - ray_begin;
  c.P = plan.samples_per_ray;
  size_t s0 = size_t(ray_begin) * size_t(c.P), s1 = size_t(ray_end) * size_t(c.P);
  c.points.assign(plan.points.begin() + 3 * s0, plan.points.begin() + 3 * s1);
  c.deltas.assign(plan.deltas.begin() + s0, plan.deltas.begin() + s1);
  c.times.assign(plan.times.begin() + s0, plan.times.begin() + s1);
  c.dirs.assign(plan.dirs.begin() + 3 * s0, plan.dirs.begin() + 3 * s1);
  c.targets.reserve(size_t(c.rays) * 3);
  for (int r = ray_begin; r < ray_end; r++)
    for (int k = 0; k < 3; k++) c.targets.push_back(double(batch.target_rgb[size_t(r) * 3 + k]));
  return c;
}

struct ChunkVars {
  LossTerms terms;
  ad::Var total = -1;
  ad::Var shat_input = -1;  // stage 3 worker tapes: gradient junction for slots
};

// Stage-1 loss over one chunk: density from the warped canonical grid,
// colors from the warmup net at the warped (canonical) positions.
inline ChunkVars build_warmup_chunk(ad::Tape& t, SceneModel& m, const ChunkView& c) {
  ad::Var grid = t.param(m.density3.raw, 1, int(m.grid_spec().dims.nvox()));
  ad::Var disp = deform_displacement(t, m.warp_back, c.points, c.times);
  ad::Var warped = ad::add(t, t.constant(int(c.times.size()), 3, c.points), disp);
  ad::Var raw = query_grid_raw(t, grid, m.grid_spec(), warped);
  ad::Var sigma = activate_density_op(t, raw, m.grid_spec().softplus_shift);
  ad::Var colors = m.color_warm.forward(t, warped, c.dirs);
  auto rv = render_quadrature(t, sigma, c.deltas, c.rays, c.P, colors);
  ad::Var pixel = composite_background(t, rv, background_color(t, m.background));

  ad::Var disp_fwd = deform_displacement_var(t, m.warp_fwd, warped, c.times);

  ChunkVars out;
  out.terms.render = l_render(t, pixel, c.targets);
  out.terms.point = l_point(t, colors, c.targets, c.rays, c.P);
  out.terms.ent = l_ent(t, rv.w_last);
  out.terms.cyc = l_cyc(t, disp, disp_fwd);
  out.total = stage_objective(t, Stage::Warmup, out.terms, m.cfg.loss_weights);
  return out;
}

// Stage-3 loss over one chunk given the render-time slot features (either a
// var on the same tape or a junction constant on a worker tape). Colors are
// evaluated only for (sample, slot) pairs with non-zero interpolated density;
// empty channels underflow to exactly zero density, so this is exact.
inline ChunkVars build_dynamic_chunk(ad::Tape& t, SceneModel& m, const ChunkView& c,
                                     ad::Var shat) {
  int N = m.cfg.num_slots;
  int K = int(c.times.size());
  ad::Var grid = t.param(m.occupancy4.raw, N, int(m.grid_spec().dims.nvox()));
  ad::Var disp = deform_displacement(t, m.warp_back, c.points, c.times);
  ad::Var warped = ad::add(t, t.constant(K, 3, c.points), disp);
  ad::Var raw = query_grid_raw(t, grid, m.grid_spec(), warped);
  ad::Var sigma = activate_density_op(t, raw, m.grid_spec().softplus_shift);
  auto comp = compose_op(t, sigma);

  // active (sample, slot) pairs (copy the values; later ops may reallocate
  // the tape's array storage)
  const std::vector<double> sv = t.val(sigma);
  std::vector<int> active_pts, pt_slot_of(size_t(K), -1);
  std::vector<int> pair_pt_local, pair_slot, pair_flat, pair_row;
  for (int k = 0; k < K; k++) {
    int local = -1;
    for (int n = 0; n < N; n++) {
      if (sv[size_t(k) * N + n] <= 0.0) continue;
      if (local < 0) {
        local = int(active_pts.size());
        active_pts.push_back(k);
      }
      pair_pt_local.push_back(local);
      pair_slot.push_back(n);
      pair_flat.push_back(k * N + n);
      pair_row.push_back(k);
    }
  }

  ad::Var cbar;
  if (pair_row.empty()) {
    cbar = t.constant(K, 3);  // nothing visible anywhere in this chunk
  } else {
    ad::Var warped_active = ad::gather_rows(t, warped, ad::make_index(active_pts));
    std::vector<double> dirs_active;
    dirs_active.reserve(active_pts.size() * 3);
    for (int k : active_pts)
      dirs_active.insert(dirs_active.end(), {c.dirs[size_t(k) * 3], c.dirs[size_t(k) * 3 + 1],
                                             c.dirs[size_t(k) * 3 + 2]});
    ad::Var feat = m.color_comp.point_features(t, warped_active, dirs_active);
    ad::Var colors = m.color_comp.forward_pairs(t, feat, shat, ad::make_index(pair_pt_local),
                                                ad::make_index(pair_slot));
    ad::Var w_pairs = ad::gather_elems(t, comp.weights, ad::make_index(pair_flat));
    cbar = ad::scatter_add_rows(t, ad::mul_colvec(t, colors, w_pairs), ad::make_index(pair_row), K);
  }

  auto rv = render_quadrature(t, comp.sigma_bar, c.deltas, c.rays, c.P, cbar);
  ad::Var pixel = composite_background(t, rv, background_color(t, m.background));

  ChunkVars out;
  out.terms.render = l_render(t, pixel, c.targets);
  out.terms.point = l_point(t, cbar, c.targets, c.rays, c.P);
  out.terms.ent = l_ent(t, rv.w_last);
  out.total = stage_objective(t, Stage::Dynamic, out.terms, m.cfg.loss_weights);
  return out;
}

// Shared stage-3 slot path: warp the lattice nodes to time t, encode the
// activated per-slot volume, refine the slots.
struct SlotPathVars {
  ad::Var slots_refined = -1;  // S_t
  ad::Var shat = -1;           // render-time features
};

inline SlotPathVars build_slot_path(ad::Tape& t, SceneModel& m,
                                    const std::vector<double>& node_pos, double t_time) {
  int N = m.cfg.num_slots;
  size_t nvox = m.grid_spec().dims.nvox();
  ad::Var grid = t.param(m.occupancy4.raw, N, int(nvox));
  std::vector<double> times(nvox, t_time);
  ad::Var raw = query_warped_raw(t, grid, m.grid_spec(), m.warp_back, node_pos, times);
  ad::Var vol = activate_density_op(t, raw, m.grid_spec().softplus_shift);
  ad::Var h = m.encoder.forward(t, vol);
  ad::Var s_prev = t.constant(N, m.cfg.slot_dim, m.slots.current);
  SlotPathVars out;
  out.slots_refined = m.attention.refine(t, h, s_prev);
  out.shat = m.slots.render_features_op(t, out.slots_refined);
  return out;
}

// Multi-worker execution of chunk builders: each worker owns a tape over a
// contiguous chunk; parameter gradients are reduced in chunk order with the
// chunk's ray weight.
struct ChunkRun {
  std::unique_ptr<ad::Tape> tape;
  ChunkVars vars;
  int rays = 0;
};

template <typename BuildFn>
inline StepResult run_chunked(SceneModel& m, const RayBatch& batch, const SamplePlan& plan,
                              int workers, const std::vector<double>* shat_values,
                              ad::Tape* shared_tape, ad::Var shared_shat, BuildFn build) {
  int R = int(batch.size());
  StepResult res;
  if (workers <= 1) {
    // single tape; the shared slot path (if any) lives on the same tape
    ad::Tape local(true);
    ad::Tape& t = shared_tape ? *shared_tape : local;
    ChunkView view = slice_plan(plan, batch, 0, R);
    ChunkVars v = build(t, view, shared_shat);
    res.l_render = t.scalar(v.terms.render);
    res.l_point = v.terms.point >= 0 ? t.scalar(v.terms.point) : 0;
    res.l_ent = v.terms.ent >= 0 ? t.scalar(v.terms.ent) : 0;
    res.l_cyc = v.terms.cyc >= 0 ? t.scalar(v.terms.cyc) : 0;
    res.total = t.scalar(v.total);
    t.backward(v.total);
    return res;
  }

  int k = std::min(workers, R);
  int chunk = (R + k - 1) / k;
  std::vector<ChunkRun> runs;
  for (int b = 0; b < R; b += chunk) {
    ChunkRun run;
    run.tape = std::make_unique<ad::Tape>(true);
    run.rays = std::min(chunk, R - b);
    runs.push_back(std::move(run));
  }
  std::vector<std::thread> threads;
  std::vector<std::exception_ptr> errors(runs.size());
  for (size_t i = 0; i < runs.size(); i++) {
    threads.emplace_back([&, i] {
      try {
        int b = int(i) * chunk;
        ChunkView view = slice_plan(plan, batch, b, b + runs[i].rays);
        ad::Tape& t = *runs[i].tape;
        ad::Var shat = -1;
        if (shat_values)
          shat = t.input_grad(m.cfg.num_slots, m.cfg.slot_dim, shat_values->data());
        runs[i].vars = build(t, view, shat);
        t.backward(runs[i].vars.total, /*accumulate_params=*/false);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    });
  }
  for (auto& th : threads) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  // ordered reduction: losses, parameter grads, slot-feature seed
  std::vector<double> shat_seed;
  if (shat_values) shat_seed.assign(shat_values->size(), 0.0);
  for (auto& run : runs) {
    double w = double(run.rays) / double(R);
    ad::Tape& t = *run.tape;
    res.l_render += w * t.scalar(run.vars.terms.render);
    if (run.vars.terms.point >= 0) res.l_point += w * t.scalar(run.vars.terms.point);
    if (run.vars.terms.ent >= 0) res.l_ent += w * t.scalar(run.vars.terms.ent);
    if (run.vars.terms.cyc >= 0) res.l_cyc += w * t.scalar(run.vars.terms.cyc);
    res.total += w * t.scalar(run.vars.total);
    for (auto& [var, param] : t.leaves()) {
      if (!param->trainable) continue;
      const auto& g = t.grad_of(var);
      for (size_t j = 0; j < g.size(); j++) param->grad[j] += w * g[j];
    }
    if (shat_values) {
      const auto& g = t.grad_of(run.vars.shat_input);
      for (size_t j = 0; j < g.size(); j++) shat_seed[j] += w * g[j];
    }
  }
  if (shared_tape) shared_tape->backward_seed(shared_shat, shat_seed);
  return res;
}

}  // namespace train_detail

// One warmup optimization step's forward/backward (no optimizer update).
inline StepResult warmup_forward_backward(SceneModel& m, const RayBatch& batch,
                                          const SamplePlan& plan, int workers) {
  return train_detail::run_chunked(
      m, batch, plan, workers, nullptr, nullptr, -1,
      [&](ad::Tape& t, const train_detail::ChunkView& view, ad::Var) {
        return train_detail::build_warmup_chunk(t, m, view);
      });
}

// One dynamic-stage forward/backward at timestamp time; fills refined slots.
inline StepResult dynamic_forward_backward(SceneModel& m, const RayBatch& batch,
                                           const SamplePlan& plan,
                                           const std::vector<double>& node_pos, double t_time,
                                           int workers) {
  ad::Tape shared(true);
  auto slot_path = train_detail::build_slot_path(shared, m, node_pos, t_time);
  StepResult res;
  if (workers <= 1) {
    res = train_detail::run_chunked(
        m, batch, plan, 1, nullptr, &shared, slot_path.shat,
        [&](ad::Tape& t, const train_detail::ChunkView& view, ad::Var) {
          return train_detail::build_dynamic_chunk(t, m, view, slot_path.shat);
        });
  } else {
    std::vector<double> shat_values = shared.val(slot_path.shat);
    res = train_detail::run_chunked(
        m, batch, plan, workers, &shat_values, &shared, slot_path.shat,
        [&](ad::Tape& t, const train_detail::ChunkView& view, ad::Var shat) {
          auto v = train_detail::build_dynamic_chunk(t, m, view, shat);
          v.shat_input = shat;
          return v;
        });
  }
  res.refined_slots = shared.val(slot_path.slots_refined);
  return res;
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

class Trainer {
 public:
  Trainer(SceneModel model, const Dataset& data, std::string out_dir)
      : model_(std::move(model)), data_(data), out_dir_(std::move(out_dir)) {
    data_.validate();
    std::filesystem::create_directories(out_dir_);
    metrics_.open(out_dir_ + "/metrics.log", std::ios::app);
    check(metrics_.good(), ErrorKind::Data, "cannot open metrics log in " + out_dir_);
  }

  SceneModel& model() { return model_; }
  const std::string& out_dir() const { return out_dir_; }

  // Runs stages (last_completed_stage, stop_after]; saves a checkpoint after
  // each stage.
  void run(int stop_after_stage) {
    check(stop_after_stage >= 1 && stop_after_stage <= 3, ErrorKind::Config,
          "train: --stage must be 1, 2 or 3");
    if (model_.stage < 1 && stop_after_stage >= 1) stage1_warmup();
    if (model_.stage < 2 && stop_after_stage >= 2) stage2_expand();
    if (model_.stage < 3 && stop_after_stage >= 3) stage3_optimize();
  }

  void stage1_warmup() {
    check(model_.stage == 0, ErrorKind::Config, "stage 1 requires a fresh model");
    init_background_from_data();
    ad::AdamGroup grids, nets;
    grids.params = {&model_.density3.raw};
    grids.lr = model_.cfg.lr_grid_warmup;
    grids.init();
    nets.lr = model_.cfg.lr_net_warmup;
    for (auto* p : model_.warp_back.mlp.params()) nets.params.push_back(p);
    for (auto* p : model_.warp_fwd.mlp.params()) nets.params.push_back(p);
    for (auto* p : model_.color_warm.params()) nets.params.push_back(p);
    nets.params.push_back(&model_.background);
    nets.init();

    for (int step = 0; step < model_.cfg.warmup_iters; step++) {
      RayBatch batch = sample_rays(data_, model_.cfg.rays_per_batch, model_.rng);
      SamplePlan plan =
          sample_points(batch, model_.cfg.samples_per_ray, model_.cfg.stratified, &model_.rng);
      zero_grads(grids, nets);
      StepResult r = guarded_step(
          1, [&] { return warmup_forward_backward(model_, batch, plan, model_.cfg.workers); },
          {&grids, &nets});
      log_line(step, 1, 0, 0, grids.lr, nets.lr, r);
    }
    model_.stage = 1;
    save_checkpoint(model_, out_dir_ + "/stage1.ckpt");
  }

  void stage2_expand() {
    check(model_.stage == 1, ErrorKind::Config,
          "stage 2 requires a checkpoint with the stage-1 marker");
    ExpansionResult res;
    try {
      res = run_expansion(model_.density3, model_.color_warm, model_.warp_fwd,
                          model_.timestamps(), model_.cfg.num_slots, model_.cfg.expansion,
                          model_.rng);
    } catch (const Error& e) {
      throw Error(e.kind(), std::string("stage 2: ") + e.what());
    }
    res.occupancy.raw.name = "occupancy4";
    model_.occupancy4 = std::move(res.occupancy);
    write_cluster_map(out_dir_ + "/clusters.bin", model_.grid_spec().dims, res.nodes,
                      res.channels);
    metrics_ << "expansion components=" << res.num_components
             << " clusters=" << res.num_clusters << " sizes=";
    for (size_t i = 0; i < res.cluster_sizes.size(); i++)
      metrics_ << (i ? "," : "") << res.cluster_sizes[size_t(i)];
    metrics_ << " nodes=" << res.nodes.size() << "\n";
    metrics_.flush();
    model_.stage = 2;
    save_checkpoint(model_, out_dir_ + "/stage2.ckpt");
  }

  void stage3_optimize() {
    check(model_.stage == 2, ErrorKind::Config,
          "stage 3 requires a checkpoint with the stage-2 marker");
    ad::AdamGroup grids, nets;
    grids.params = {&model_.occupancy4.raw};
    grids.lr = model_.cfg.lr_grid_dynamic;
    grids.init();
    nets.lr = model_.cfg.lr_net_dynamic;
    for (auto* p : model_.warp_back.mlp.params()) nets.params.push_back(p);
    for (auto* p : model_.color_comp.params()) nets.params.push_back(p);
    for (auto* p : model_.encoder.params()) nets.params.push_back(p);
    for (auto* p : model_.attention.params()) nets.params.push_back(p);
    nets.params.push_back(&model_.background);
    nets.init();

    std::vector<double> node_pos = lattice_world_positions(model_.grid_spec());
    std::vector<double> stamps = model_.timestamps();
    int T = model_.num_timestamps;
    int episodes = model_.cfg.episodes_for(T);
    std::ofstream slot_log(out_dir_ + "/slot_means.txt", std::ios::app);

    int step = 0;
    for (int e = 0; e < episodes; e++) {
      model_.slots.episode_init(T, model_.rng);
      for (int ti = 0; ti < T; ti++) {
        RayBatch batch =
            sample_rays_from(data_, data_.frames_at_timestamp(ti), model_.cfg.rays_per_batch,
                             model_.rng);
        SamplePlan plan =
            sample_points(batch, model_.cfg.samples_per_ray, model_.cfg.stratified, &model_.rng);
        zero_grads(grids, nets);
        StepResult r = guarded_step(
            3,
            [&] {
              return dynamic_forward_backward(model_, batch, plan, node_pos, stamps[size_t(ti)],
                                              model_.cfg.workers);
            },
            {&grids, &nets});
        model_.slots.record_timestamp(r.refined_slots);
        log_line(step++, 3, e, ti, grids.lr, nets.lr, r);
      }
      // per-episode diagnostic: mean slot value across feature dimensions
      slot_log << "episode=" << e;
      for (int n = 0; n < model_.cfg.num_slots; n++) {
        double mean = 0;
        for (int d = 0; d < model_.cfg.slot_dim; d++)
          mean += model_.slots.accum[size_t(n) * model_.cfg.slot_dim + d] / double(T);
        slot_log << " s" << n << "=" << fmt_double(mean / model_.cfg.slot_dim);
      }
      slot_log << "\n";
    }
    model_.slots.finalize(T);
    model_.stage = 3;
    save_checkpoint(model_, out_dir_ + "/model.ckpt");
  }

 private:
  // Start the learned background at the dataset's mean color. Left at mid
  // gray it takes thousands of steps to darken, and in the meantime the
  // cheapest way to explain dark backgrounds is spurious volume fog.
  void init_background_from_data() {
    double mean[3] = {0, 0, 0};
    size_t count = 0;
    for (const auto& f : data_.frames) {
      for (size_t i = 0; i + 2 < f.image.rgb.size(); i += 3)
        for (int c = 0; c < 3; c++) mean[c] += double(f.image.rgb[i + size_t(c)]);
      count += f.image.rgb.size() / 3;
    }
    for (int c = 0; c < 3; c++) {
      double m = std::clamp(mean[c] / double(count), 1e-3, 1.0 - 1e-3);
      model_.background.values[size_t(c)] = float(std::log(m / (1.0 - m)));
    }
  }

  void zero_grads(ad::AdamGroup& a, ad::AdamGroup& b) {
    for (auto* p : a.params) p->zero_grad();
    for (auto* p : b.params) p->zero_grad();
  }

  // Runs forward/backward + optimizer; on numerical failure restores the last
  // finite parameters, checkpoints them and rethrows with stage context.
  template <typename Fn>
  StepResult guarded_step(int stage, Fn&& forward_backward, std::vector<ad::AdamGroup*> groups) {
    std::vector<std::vector<float>> snapshot;
    for (auto* g : groups)
      for (auto* p : g->params) snapshot.push_back(p->values);
    try {
      StepResult r = forward_backward();
      for (auto* g : groups) ad::adam_step(*g);
      bool finite = true;
      for (auto* g : groups)
        for (auto* p : g->params) finite &= p->finite();
      if (!finite) throw_numeric("optimizer step produced non-finite parameters");
      return r;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::Numeric) throw;
      size_t i = 0;
      for (auto* g : groups)
        for (auto* p : g->params) p->values = snapshot[i++];
      save_checkpoint(model_, out_dir_ + "/abort.ckpt");
      throw Error(ErrorKind::Numeric,
                  strfmt("stage %d diverged: %s (last finite state saved to %s/abort.ckpt)", stage,
                         e.what(), out_dir_.c_str()));
    }
  }

  void log_line(int step, int stage, int episode, int t_index, double lr_grid, double lr_net,
                const StepResult& r) {
    metrics_ << "step=" << step << " stage=" << stage << " episode=" << episode
             << " t=" << t_index << " lr_grid=" << fmt_double(lr_grid)
             << " lr_net=" << fmt_double(lr_net) << " l_render=" << fmt_double(r.l_render)
             << " l_point=" << fmt_double(r.l_point) << " l_ent=" << fmt_double(r.l_ent)
             << " l_cyc=" << fmt_double(r.l_cyc) << " total=" << fmt_double(r.total) << "\n";
    metrics_.flush();
  }

  SceneModel model_;
  const Dataset& data_;
  std::string out_dir_;
  std::ofstream metrics_;
};

}  // namespace dynavol
