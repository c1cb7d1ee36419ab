// Copyright (c) 2026 dynavol authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dynavol/autodiff.hpp"
#include "dynavol/common.hpp"

namespace dynavol {

struct LinearLayer {
  ad::Parameter w;  // [out x in]
  ad::Parameter b;  // [out]
};

struct Mlp {
  std::vector<LinearLayer> layers;
  ad::Act hidden_act = ad::Act::Relu;
  ad::Act out_act = ad::Act::None;

  // n_hidden layers of `hidden` channels, then a linear head. zero_init_last
  // starts the head at exactly zero (identity warp for deformation fields).
  static Mlp make(const std::string& name, int in, int hidden, int n_hidden, int out,
                  ad::Act out_act, Rng& rng, bool zero_init_last = false) {
    Mlp net;
    net.out_act = out_act;
    int prev = in;
    for (int i = 0; i <= n_hidden; i++) {
      bool last = i == n_hidden;
      int width = last ? out : hidden;
      LinearLayer l{ad::Parameter(name + strfmt(".w%d", i), {width, prev}),
                    ad::Parameter(name + strfmt(".b%d", i), {width})};
      if (last && zero_init_last) {
        // leave zeros
      } else {
        double bound = last ? std::sqrt(6.0 / double(prev + width)) : std::sqrt(6.0 / double(prev));
        for (auto& v : l.w.values) v = float(rng.uniform(-bound, bound));
      }
      net.layers.push_back(std::move(l));
      prev = width;
    }
    return net;
  }

  ad::Var forward(ad::Tape& t, ad::Var x) const {
    ad::Var h = x;
    for (size_t i = 0; i < layers.size(); i++) {
      bool last = i + 1 == layers.size();
      auto& l = const_cast<LinearLayer&>(layers[i]);
      h = ad::affine(t, h, t.param(l.w), t.param(l.b), last ? out_act : hidden_act);
    }
    return h;
  }

  std::vector<ad::Parameter*> params() {
    std::vector<ad::Parameter*> out;
    for (auto& l : layers) {
      out.push_back(&l.w);
      out.push_back(&l.b);
    }
    return out;
  }
  int in_dim() const { return layers.front().w.shape[1]; }
  int out_dim() const { return layers.back().w.shape[0]; }
};

}  // namespace dynavol
