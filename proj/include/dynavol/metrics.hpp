// Copyright (c) 2026 dynavol authors
// SPDX-License-Identifier: Apache-2.0
//
// Ray-to-slot segmentation and the evaluation metrics: foreground adjusted
// Rand index, PSNR and windowed SSIM.
#pragma once

#include <cmath>
#include <map>
#include <vector>

#include "dynavol/image.hpp"
#include "dynavol/render_eval.hpp"

namespace dynavol {

// Per-slot color contribution of one ray: beta_n = sum_i weight_i * w_in.
// `weights` are the P per-sample quadrature weights, `slot_w` the P x N
// per-sample slot probabilities.
inline std::vector<double> ray_slot_contributions(const std::vector<double>& weights,
                                                  const std::vector<double>& slot_w, int N) {
  check(slot_w.size() == weights.size() * size_t(N), ErrorKind::Numeric,
        "ray_slot_contributions: shape mismatch");
  std::vector<double> beta(static_cast<size_t>(N), 0.0);
  for (size_t p = 0; p < weights.size(); p++)
    for (int n = 0; n < N; n++) beta[size_t(n)] += weights[p] * slot_w[p * size_t(N) + size_t(n)];
  return beta;
}

// Per-pixel slot labels: argmax over beta with deterministic tie-break
// (lowest slot index); pixels whose total contribution falls below the
// cutoff are background (label 0, slots are 1-based).
struct SegmentationMap {
  int width = 0, height = 0, num_slots = 0;
  std::vector<uint8_t> labels;   // 0 = background, n+1 = slot n
  std::vector<double> betas;     // [pixels x N]

  MaskImage to_mask() const {
    MaskImage m(width, height);
    m.ids = labels;
    return m;
  }
};

constexpr double kBackgroundCutoff = 0.5;

inline SegmentationMap segment(const RenderResult& render, int width, int height) {
  check(render.num_slots > 0 && !render.betas.empty(), ErrorKind::Config,
        "segment: render result carries no slot contributions (stage-3 model required)");
  SegmentationMap seg;
  seg.width = width;
  seg.height = height;
  seg.num_slots = render.num_slots;
  seg.betas = render.betas;
  size_t npix = size_t(width) * size_t(height);
  seg.labels.assign(npix, 0);
  int N = render.num_slots;
  for (size_t p = 0; p < npix; p++) {
    double total = 0, best = -1;
    int best_n = 0;
    for (int n = 0; n < N; n++) {
      double b = render.betas[p * size_t(N) + size_t(n)];
      total += b;
      if (b > best) {
        best = b;
        best_n = n;
      }
    }
    seg.labels[p] = total < kBackgroundCutoff ? 0 : uint8_t(best_n + 1);
  }
  return seg;
}

// Adjusted Rand index restricted to ground-truth foreground pixels (gt id
// != 0), via the contingency-table formulation. Permutation invariant.
inline double fg_ari(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& gt) {
  check(pred.size() == gt.size(), ErrorKind::Data, "fg_ari: shape mismatch");
  std::map<std::pair<int, int>, int64_t> joint;
  std::map<int, int64_t> pa, pb;
  int64_t n = 0;
  for (size_t i = 0; i < gt.size(); i++) {
    if (gt[i] == 0) continue;  // foreground only
    joint[{int(pred[i]), int(gt[i])}]++;
    pa[int(pred[i])]++;
    pb[int(gt[i])]++;
    n++;
  }
  check(n >= 2, ErrorKind::Data, "fg_ari: need at least two foreground pixels");
  auto comb2 = [](int64_t k) { return double(k) * double(k - 1) / 2.0; };
  double sum_ij = 0, sum_a = 0, sum_b = 0;
  for (auto& [k, v] : joint) sum_ij += comb2(v);
  for (auto& [k, v] : pa) sum_a += comb2(v);
  for (auto& [k, v] : pb) sum_b += comb2(v);
  double total = comb2(n);
  double expected = sum_a * sum_b / total;
  double maximum = 0.5 * (sum_a + sum_b);
  if (maximum == expected) return 1.0;  // both partitions trivially agree
  return (sum_ij - expected) / (maximum - expected);
}

// 10 log10(1 / MSE) for images in [0,1]; identical images report the capped
// sentinel.
constexpr double kPsnrCap = 100.0;

inline double psnr(const Image& img, const Image& ref) {
  check(img.width == ref.width && img.height == ref.height, ErrorKind::Data,
        "psnr: image dimensions mismatch");
  double mse = 0;
  for (size_t i = 0; i < img.rgb.size(); i++) {
    double d = double(img.rgb[i]) - double(ref.rgb[i]);
    mse += d * d;
  }
  mse /= double(img.rgb.size());
  if (mse <= 0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

// Windowed SSIM, 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03, L=1,
// valid windows only, averaged over windows and channels.
inline double ssim(const Image& img, const Image& ref) {
  check(img.width == ref.width && img.height == ref.height, ErrorKind::Data,
        "ssim: image dimensions mismatch");
  const int W = 11, half = W / 2;
  check(img.width >= W && img.height >= W, ErrorKind::Data, "ssim: image smaller than the window");
  double kernel[W][W];
  double ksum = 0;
  for (int a = 0; a < W; a++)
    for (int b = 0; b < W; b++) {
      double dx = a - half, dy = b - half;
      kernel[a][b] = std::exp(-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5));
      ksum += kernel[a][b];
    }
  for (auto& row : kernel)
    for (auto& v : row) v /= ksum;

  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double total = 0;
  int64_t count = 0;
  for (int ch = 0; ch < 3; ch++)
    for (int y = half; y < img.height - half; y++)
      for (int x = half; x < img.width - half; x++) {
        double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
        for (int a = 0; a < W; a++)
          for (int b = 0; b < W; b++) {
            double wk = kernel[a][b];
            double px = img.pixel(x + b - half, y + a - half)[ch];
            double py = ref.pixel(x + b - half, y + a - half)[ch];
            mx += wk * px;
            my += wk * py;
            sxx += wk * px * px;
            syy += wk * py * py;
            sxy += wk * px * py;
          }
        double vx = sxx - mx * mx, vy = syy - my * my, cov = sxy - mx * my;
        double s = ((2 * mx * my + c1) * (2 * cov + c2)) /
                   ((mx * mx + my * my + c1) * (vx + vy + c2));
        total += s;
        count++;
      }
  return total / double(count);
}

// Deterministic palette for segmentation visualizations.
inline Image colorize_labels(const MaskImage& labels) {
  static const float palette[][3] = {{0.05f, 0.05f, 0.05f}, {0.90f, 0.25f, 0.20f},
                                     {0.20f, 0.45f, 0.95f}, {0.25f, 0.80f, 0.30f},
                                     {0.95f, 0.80f, 0.20f}, {0.70f, 0.30f, 0.85f},
                                     {0.25f, 0.80f, 0.80f}, {0.95f, 0.55f, 0.15f},
                                     {0.55f, 0.35f, 0.20f}, {0.80f, 0.80f, 0.80f},
                                     {0.45f, 0.60f, 0.25f}};
  const int npal = int(sizeof(palette) / sizeof(palette[0]));
  Image img(labels.width, labels.height);
  for (size_t i = 0; i < labels.ids.size(); i++) {
    const float* c = palette[labels.ids[i] % npal];
    img.rgb[i * 3] = c[0];
    img.rgb[i * 3 + 1] = c[1];
    img.rgb[i * 3 + 2] = c[2];
  }
  return img;
}

}  // namespace dynavol
