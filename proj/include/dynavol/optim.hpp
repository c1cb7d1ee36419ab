// Copyright (c) 2026 dynavol authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "dynavol/autodiff.hpp"
#include "dynavol/common.hpp"

namespace dynavol::ad {

// Adam with bias correction. Moments are double; parameter master values stay
// float32. One state per parameter group so stages can use distinct rates.
struct AdamState {
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  int64_t step_count = 0;
  double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;
};

struct AdamGroup {
  std::vector<Parameter*> params;
  double lr = 1e-3;
  AdamState state;

  void init() {
    state.first_moment.clear();
    state.second_moment.clear();
    for (auto* p : params) {
      state.first_moment.emplace_back(p->size(), 0.0);
      state.second_moment.emplace_back(p->size(), 0.0);
    }
    state.step_count = 0;
  }
};

inline void adam_step(AdamGroup& g) {
  check(g.lr > 0, ErrorKind::Config, "adam: learning rate must be positive");
  check(g.state.first_moment.size() == g.params.size(), ErrorKind::Numeric,
        "adam: state not initialized for this group");
  g.state.step_count++;
  double bc1 = 1.0 - std::pow(g.state.beta1, double(g.state.step_count));
  double bc2 = 1.0 - std::pow(g.state.beta2, double(g.state.step_count));
  for (size_t pi = 0; pi < g.params.size(); pi++) {
    Parameter& p = *g.params[pi];
    auto& m = g.state.first_moment[pi];
    auto& v = g.state.second_moment[pi];
    check(m.size() == p.size(), ErrorKind::Numeric, "adam: moment shape mismatch for " + p.name);
    if (!p.trainable) continue;
    for (size_t i = 0; i < p.size(); i++) {
      double grad = p.grad[i];
      m[i] = g.state.beta1 * m[i] + (1.0 - g.state.beta1) * grad;
      v[i] = g.state.beta2 * v[i] + (1.0 - g.state.beta2) * grad * grad;
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      p.values[i] = float(double(p.values[i]) - g.lr * mhat / (std::sqrt(vhat) + g.state.epsilon));
    }
  }
}

// ---------------------------------------------------------------------------
// Finite-difference verification harness.
//
// `build` constructs the scalar loss on the given tape from the current
// parameter values and returns its Var. It must be deterministic; the harness
// rejects builds that do not reproduce the same bits twice.
// ---------------------------------------------------------------------------

using LossBuilder = std::function<Var(Tape&)>;

// Central differences against externally supplied analytic gradients (one
// vector per parameter, same order). Exposed separately so tests can show a
// corrupted gradient trips the harness. Uses the perturbation that was
// actually applied after float32 rounding.
inline double fd_check_against(const LossBuilder& build, const std::vector<Parameter*>& params,
                               double eps, const std::vector<std::vector<double>>& analytic) {
  check(eps > 0, ErrorKind::Config, "finite_difference_check: eps must be positive");
  auto eval = [&]() {
    Tape t(false);
    Var l = build(t);
    return t.scalar(l);
  };
  double max_rel = 0.0;
  for (size_t pi = 0; pi < params.size(); pi++) {
    Parameter& p = *params[pi];
    check(analytic[pi].size() == p.size(), ErrorKind::Numeric, "fd_check: gradient size mismatch");
    for (size_t i = 0; i < p.size(); i++) {
      float saved = p.values[i];
      float hi = float(double(saved) + eps), lo = float(double(saved) - eps);
      double h = double(hi) - double(lo);
      if (h == 0.0) continue;  // eps below float32 resolution at this magnitude
      p.values[i] = hi;
      double fp = eval();
      p.values[i] = lo;
      double fm = eval();
      p.values[i] = saved;
      double cd = (fp - fm) / h;
      double a = analytic[pi][i];
      double denom = std::max({std::abs(a), std::abs(cd), 1e-8});
      max_rel = std::max(max_rel, std::abs(a - cd) / denom);
    }
  }
  return max_rel;
}

inline double finite_difference_check(const LossBuilder& build,
                                      const std::vector<Parameter*>& params, double eps) {
  for (auto* p : params) p->zero_grad();
  double base;
  std::vector<std::vector<double>> analytic;
  {
    Tape t(true);
    Var loss = build(t);
    base = t.scalar(loss);
    t.backward(loss);
    for (auto* p : params) analytic.push_back(p->grad);
  }
  {
    Tape t(false);
    Var loss = build(t);
    check(t.scalar(loss) == base, ErrorKind::Numeric,
          "finite_difference_check: scalar_fn is not deterministic under fixed inputs");
  }
  return fd_check_against(build, params, eps, analytic);
}

}  // namespace dynavol::ad
