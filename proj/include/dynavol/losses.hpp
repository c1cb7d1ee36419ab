// Copyright (c) 2026 dynavol authors
// SPDX-License-Identifier: Apache-2.0
//
// The four training loss terms and the per-stage objectives. All means are
// taken over the ray batch; per-point terms additionally average over the
// samples of each ray.
#pragma once

#include <vector>

#include "dynavol/autodiff.hpp"

namespace dynavol {

struct LossWeights {
  double alpha_w = 1.0;   // render-loss weight (exposed in config; see README)
  double alpha_p = 0.1;   // per-point RGB
  double alpha_e = 0.01;  // background entropy
  double alpha_c = 1.0;   // cycle consistency

  void validate() const {
    check(alpha_w >= 0 && alpha_p >= 0 && alpha_e >= 0 && alpha_c >= 0, ErrorKind::Config,
          "loss weights must be non-negative");
  }
};

enum class Stage { Warmup = 1, Expansion = 2, Dynamic = 3 };

// mean_r || C_hat(r) - C(r) ||^2
inline ad::Var l_render(ad::Tape& t, ad::Var pixel_rgb, const std::vector<double>& target_rgb) {
  int R = t.rows(pixel_rgb);
  ad::Var tgt = t.constant(R, 3, target_rgb);
  ad::Var d = ad::sub(t, pixel_rgb, tgt);
  return ad::scale(t, ad::sum_all(t, ad::mul(t, d, d)), 1.0 / double(R));
}

// mean_r of the binary entropy of the last-sample weight, clamped away from
// the log singularities.
inline ad::Var l_ent(ad::Tape& t, ad::Var w_last, double eps = 1e-6) {
  int R = t.rows(w_last);
  ad::Var w = ad::clamp(t, w_last, eps, 1.0 - eps);
  ad::Var one_minus = ad::add_const(t, ad::neg(t, w), 1.0);
  ad::Var ent = ad::neg(t, ad::add(t, ad::mul(t, w, ad::log_op(t, w)),
                                   ad::mul(t, one_minus, ad::log_op(t, one_minus))));
  return ad::scale(t, ad::sum_all(t, ent), 1.0 / double(R));
}

// mean_r mean_i || cbar_i - C(r) ||^2 over composed per-sample colors.
inline ad::Var l_point(ad::Tape& t, ad::Var cbar /*[R*P x 3]*/,
                       const std::vector<double>& target_rgb /*[R x 3]*/, int rays, int P) {
  std::vector<double> expanded(size_t(rays) * size_t(P) * 3);
  for (int r = 0; r < rays; r++)
    for (int p = 0; p < P; p++)
      for (int c = 0; c < 3; c++)
        expanded[(size_t(r) * P + p) * 3 + c] = target_rgb[size_t(r) * 3 + c];
  ad::Var tgt = t.constant(rays * P, 3, expanded);
  ad::Var d = ad::sub(t, cbar, tgt);
  return ad::scale(t, ad::sum_all(t, ad::mul(t, d, d)), 1.0 / double(size_t(rays) * size_t(P)));
}

// mean over rays and samples of || f_psi(x, t) + f_xi'(x', t) ||^2 where
// x' = x + f_psi(x, t). Operates on the evaluated displacement arrays.
inline ad::Var l_cyc(ad::Tape& t, ad::Var disp_backward, ad::Var disp_forward_at_warped) {
  int K = t.rows(disp_backward);
  ad::Var s = ad::add(t, disp_backward, disp_forward_at_warped);
  return ad::scale(t, ad::sum_all(t, ad::mul(t, s, s)), 1.0 / double(K));
}

struct LossTerms {
  ad::Var render = -1, point = -1, ent = -1, cyc = -1;
};

// L_Warm = a_w L_Render + a_p L_Point + a_e L_Ent + a_c L_Cyc;
// L_Dyn drops the cycle term.
inline ad::Var stage_objective(ad::Tape& t, Stage stage, const LossTerms& terms,
                               const LossWeights& w) {
  w.validate();
  ad::Var total = ad::scale(t, terms.render, w.alpha_w);
  if (terms.point >= 0) total = ad::add(t, total, ad::scale(t, terms.point, w.alpha_p));
  if (terms.ent >= 0) total = ad::add(t, total, ad::scale(t, terms.ent, w.alpha_e));
  if (stage == Stage::Warmup && terms.cyc >= 0)
    total = ad::add(t, total, ad::scale(t, terms.cyc, w.alpha_c));
  return total;
}

}  // namespace dynavol
