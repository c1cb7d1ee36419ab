// Copyright (c) 2026 dynavol authors
// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>
#include <map>
#include <set>

#include "dynavol/expansion.hpp"
#include "test_helpers.hpp"

using namespace dynavol;

namespace {

GridSpec spec8() {
  GridSpec s;
  s.dims = {8, 8, 8};
  s.bbox = {{-1, -1, -1}, {1, 1, 1}};
  s.softplus_shift = shift_for_density(0.01);
  return s;
}

// raw value whose activated density is `d`
float raw_for_density(const GridSpec& s, double d) {
  return float(std::log(std::expm1(d)) - s.softplus_shift);
}

// independent BFS component oracle
std::vector<int> bfs_components(int n, const std::vector<std::pair<int, int>>& edges, int& count) {
  std::vector<std::vector<int>> adj(static_cast<size_t>(n));
  for (auto& [u, v] : edges) {
    adj[size_t(u)].push_back(v);
    adj[size_t(v)].push_back(u);
  }
  std::vector<int> label(static_cast<size_t>(n), -1);
  count = 0;
  for (int s = 0; s < n; s++) {
    if (label[size_t(s)] >= 0) continue;
    std::vector<int> queue{s};
    label[size_t(s)] = count;
    while (!queue.empty()) {
      int u = queue.back();
      queue.pop_back();
      for (int v : adj[size_t(u)])
        if (label[size_t(v)] < 0) {
          label[size_t(v)] = count;
          queue.push_back(v);
        }
    }
    count++;
  }
  return label;
}

}  // namespace

TEST_CASE("filter_valid boundary semantics and errors") {
  GridSpec s = spec8();
  DensityGrid3D g("f", s);

  // uniform grid below the threshold -> ExpandEmpty
  std::fill(g.raw.values.begin(), g.raw.values.end(), raw_for_density(s, 0.005));
  try {
    filter_valid(g, 0.01);
    FAIL("expected ExpandEmpty");
  } catch (const Error& e) {
    REQUIRE(std::string(e.what()).find("ExpandEmpty") != std::string::npos);
  }

  // one voxel above -> singleton
  size_t idx = s.dims.flat(3, 4, 5);
  g.raw.values[idx] = raw_for_density(s, 0.5);
  auto nodes = filter_valid(g, 0.01);
  REQUIRE(nodes == std::vector<int>{int(idx)});

  // threshold exactly at a value is excluded (strict inequality)
  std::fill(g.raw.values.begin(), g.raw.values.end(), float(kEmptyRaw));
  g.raw.values[idx] = raw_for_density(s, 0.25);
  double exact = activate_density(double(g.raw.values[idx]), s.softplus_shift);
  REQUIRE_THROWS_AS(filter_valid(g, exact), Error);
  REQUIRE(filter_valid(g, exact - 1e-9).size() == 1);
}

TEST_CASE("color features average the emitted colors over shared directions") {
  Rng rng(3);
  WarmupColorNet net = WarmupColorNet::make("nc", 3, 12, 2, rng);

  std::vector<double> pos{0.1, 0.2, 0.3, -0.5, 0.0, 0.5};
  // view-independent net: zero the direction columns of the first layer
  WarmupColorNet flat_net = net;
  {
    auto& w0 = flat_net.mlp.layers[0].w;
    int in = flat_net.mlp.in_dim();
    for (int r = 0; r < w0.shape[0]; r++)
      for (int c = in - 3; c < in; c++) w0.values[size_t(r) * in + c] = 0.0f;
  }
  Rng ra(9), rb(9);
  auto avg = color_features(pos, flat_net, 6, ra);
  // single-direction query must equal the average for a view-independent net
  auto single = color_features(pos, flat_net, 1, rb);
  for (size_t i = 0; i < avg.size(); i++) REQUIRE(avg[i] == Catch::Approx(single[i]).margin(1e-12));

  // N_r = 1 is a single evaluation
  Rng rc(11);
  auto one = color_features(pos, net, 1, rc);
  REQUIRE(one.size() == 6);

  // random net, N_r = 8: naive double loop oracle
  Rng rd(13), re(13);
  auto got = color_features(pos, net, 8, rd);
  std::vector<double> naive(6, 0.0);
  for (int i = 0; i < 8; i++) {
    double z = re.uniform(-1, 1), phi = re.uniform(0, 2 * M_PI);
    double r = std::sqrt(std::max(0.0, 1 - z * z));
    std::vector<double> dir{r * std::cos(phi), r * std::sin(phi), z};
    for (int j = 0; j < 2; j++) {
      ad::Tape t(false);
      ad::Var pts = t.constant(1, 3, std::vector<double>{pos[size_t(j) * 3], pos[size_t(j) * 3 + 1],
                                                         pos[size_t(j) * 3 + 2]});
      ad::Var c = net.forward(t, pts, dir);
      for (int k = 0; k < 3; k++) naive[size_t(j) * 3 + k] += t.val(c)[size_t(k)] / 8.0;
    }
  }
  for (size_t i = 0; i < 6; i++) REQUIRE(got[i] == Catch::Approx(naive[i]).margin(1e-9));
}

TEST_CASE("pairwise distances: identity, dominance, naive oracle") {
  int tm1 = 4;
  std::vector<double> colors{0.5, 0.5, 0.5, 0.5, 0.5, 0.5};
  std::vector<double> vels(size_t(2) * tm1 * 3, 0.1);
  auto d = pairwise_distances(colors, vels, tm1, 0, 1);
  REQUIRE(d.rgb == 0.0);
  REQUIRE(d.vel == 0.0);

  // one differing timestep dominates the velocity distance
  vels[(size_t(1) * tm1 + 2) * 3 + 0] = 0.9;
  d = pairwise_distances(colors, vels, tm1, 0, 1);
  REQUIRE(d.vel == Catch::Approx(0.8));

  Rng rng(7);
  std::vector<double> c2 = dvt::random_vec(rng, 6, 0, 1);
  std::vector<double> v2 = dvt::random_vec(rng, size_t(2) * tm1 * 3, -1, 1);
  auto got = pairwise_distances(c2, v2, tm1, 0, 1);
  double rgb = 0;
  for (int c = 0; c < 3; c++) {
    double diff = c2[size_t(c)] - c2[size_t(3 + c)];
    rgb += diff * diff;
  }
  double vel = 0;
  for (int t = 0; t < tm1; t++) {
    double acc = 0;
    for (int c = 0; c < 3; c++) {
      double diff = v2[(size_t(0) * tm1 + t) * 3 + c] - v2[(size_t(1) * tm1 + t) * 3 + c];
      acc += diff * diff;
    }
    vel = std::max(vel, std::sqrt(acc));
  }
  REQUIRE(got.rgb == Catch::Approx(std::sqrt(rgb)).margin(1e-12));
  REQUIRE(got.vel == Catch::Approx(vel).margin(1e-12));
}

TEST_CASE("build_graph links only feature-compatible 6-neighbors") {
  GridDims dims{8, 8, 8};

  // two spatially separated 2-voxel blobs
  std::vector<int> nodes{int(GridDims{8, 8, 8}.flat(1, 1, 1)), int(GridDims{8, 8, 8}.flat(1, 1, 2)),
                         int(GridDims{8, 8, 8}.flat(6, 6, 5)), int(GridDims{8, 8, 8}.flat(6, 6, 6))};
  std::sort(nodes.begin(), nodes.end());
  std::vector<double> colors(12, 0.5);
  std::vector<double> vels(size_t(4) * 2 * 3, 0.0);
  auto g = build_graph(dims, nodes, colors, vels, 2, 0.1, 0.1);
  REQUIRE(g.edges.size() == 2);  // one edge inside each blob
  for (auto& [u, v] : g.edges) {
    // no cross-blob edges: both ends on the same side
    bool low_u = g.nodes[size_t(u)] < int(dims.flat(4, 0, 0));
    bool low_v = g.nodes[size_t(v)] < int(dims.flat(4, 0, 0));
    REQUIRE(low_u == low_v);
  }

  // identical adjacent nodes -> edge; differing color kills it
  colors[0] = 0.95;
  auto g2 = build_graph(dims, nodes, colors, vels, 2, 0.1, 0.1);
  REQUIRE(g2.edges.size() == 1);
}

TEST_CASE("build_graph agrees with a brute-force all-pairs oracle") {
  Rng rng(17);
  GridDims dims{6, 6, 6};
  for (int trial = 0; trial < 20; trial++) {
    std::set<int> picked;
    while (picked.size() < 30) picked.insert(int(rng.below(uint32_t(dims.nvox()))));
    std::vector<int> nodes(picked.begin(), picked.end());
    int n = int(nodes.size()), tm1 = 3;
    auto colors = dvt::random_vec(rng, size_t(n) * 3, 0, 1);
    auto vels = dvt::random_vec(rng, size_t(n) * tm1 * 3, -0.2, 0.2);
    double drgb = 0.5, dvel = 0.3;
    auto g = build_graph(dims, nodes, colors, vels, tm1, drgb, dvel);
    std::set<std::pair<int, int>> got(g.edges.begin(), g.edges.end());

    std::set<std::pair<int, int>> want;
    for (int i = 0; i < n; i++)
      for (int j = i + 1; j < n; j++) {
        int fa = nodes[size_t(i)], fb = nodes[size_t(j)];
        int ax = fa / 36, ay = (fa % 36) / 6, az = fa % 6;
        int bx = fb / 36, by = (fb % 36) / 6, bz = fb % 6;
        int manhattan = std::abs(ax - bx) + std::abs(ay - by) + std::abs(az - bz);
        if (manhattan != 1) continue;
        auto d = pairwise_distances(colors, vels, tm1, i, j);
        if (d.rgb < drgb && d.vel < dvel) want.insert({std::min(i, j), std::max(i, j)});
      }
    std::set<std::pair<int, int>> got_norm;
    for (auto [u, v] : got) got_norm.insert({std::min(u, v), std::max(u, v)});
    REQUIRE(got_norm == want);
  }
}

TEST_CASE("connected components: singletons, path, BFS oracle on random graphs") {
  int count = 0;
  std::vector<int> flats{0, 1, 2, 3, 4};
  auto lab = connected_components(5, {}, flats, count);
  REQUIRE(count == 5);
  REQUIRE(lab == std::vector<int>{0, 1, 2, 3, 4});

  auto lab2 = connected_components(5, {{0, 1}, {1, 2}, {2, 3}, {3, 4}}, flats, count);
  REQUIRE(count == 1);
  for (int l : lab2) REQUIRE(l == 0);

  Rng rng(19);
  for (int trial = 0; trial < 100; trial++) {
    int n = 2 + int(rng.below(499));
    std::vector<std::pair<int, int>> edges;
    int ne = int(rng.below(uint32_t(2 * n)));
    for (int e = 0; e < ne; e++) {
      int u = int(rng.below(uint32_t(n))), v = int(rng.below(uint32_t(n)));
      if (u != v) edges.push_back({u, v});
    }
    std::vector<int> flats2(static_cast<size_t>(n));
    std::iota(flats2.begin(), flats2.end(), 0);
    int got_count = 0, want_count = 0;
    auto got = connected_components(n, edges, flats2, got_count);
    auto want = bfs_components(n, edges, want_count);
    REQUIRE(got_count == want_count);
    // same partition up to identical labeling (both label by first occurrence)
    REQUIRE(got == want);
  }
}

TEST_CASE("sort_and_merge keeps the largest clusters and merges the tail") {
  // M == N: unchanged cluster count
  std::vector<int> labels{0, 0, 1, 2, 2, 2};
  int nc = 0;
  auto ch = sort_and_merge(labels, 3, 3, nc);
  REQUIRE(nc == 3);
  // order: cluster 2 (size 3), cluster 0 (size 2), cluster 1 (size 1)
  REQUIRE(ch == std::vector<int>{1, 1, 2, 0, 0, 0});

  // M = N + 2: sizes 10, 9, ... -> two smallest plus one merged together
  std::vector<int> big;
  for (int c = 0; c < 5; c++)
    for (int i = 0; i < 10 - c; i++) big.push_back(c);
  auto ch2 = sort_and_merge(big, 5, 3, nc);
  REQUIRE(nc == 3);
  std::map<int, std::set<int>> members;
  for (size_t i = 0; i < big.size(); i++) members[ch2[i]].insert(big[i]);
  REQUIRE(members[0] == std::set<int>{0});
  REQUIRE(members[1] == std::set<int>{1});
  REQUIRE(members[2] == std::set<int>{2, 3, 4});

  // M = 1: single cluster occupies one channel
  std::vector<int> one(7, 0);
  auto ch3 = sort_and_merge(one, 1, 4, nc);
  REQUIRE(nc == 1);
  for (int c : ch3) REQUIRE(c == 0);
}

TEST_CASE("expand copies densities one-hot into channels") {
  GridSpec s = spec8();
  DensityGrid3D f("f", s);
  std::fill(f.raw.values.begin(), f.raw.values.end(), float(kEmptyRaw));

  // two disjoint blobs
  std::vector<int> blob1{int(s.dims.flat(1, 1, 1)), int(s.dims.flat(1, 1, 2))};
  std::vector<int> blob2{int(s.dims.flat(6, 5, 5)), int(s.dims.flat(6, 5, 6)),
                         int(s.dims.flat(6, 6, 5))};
  Rng rng(23);
  for (int i : blob1) f.raw.values[size_t(i)] = raw_for_density(s, rng.uniform(0.5, 2.0));
  for (int i : blob2) f.raw.values[size_t(i)] = raw_for_density(s, rng.uniform(0.5, 2.0));

  std::vector<int> nodes = blob1;
  nodes.insert(nodes.end(), blob2.begin(), blob2.end());
  std::sort(nodes.begin(), nodes.end());
  std::vector<int> channels;
  for (int nflat : nodes)
    channels.push_back(std::find(blob1.begin(), blob1.end(), nflat) != blob1.end() ? 1 : 0);

  OccupancyGrid4D v = expand(f, nodes, channels, 4);
  size_t nvox = s.dims.nvox();
  // per-node raw preserved in exactly one channel; all others empty
  for (size_t i = 0; i < nodes.size(); i++) {
    for (int c = 0; c < 4; c++) {
      float got = v.raw.values[size_t(c) * nvox + size_t(nodes[i])];
      if (c == channels[i]) REQUIRE(got == f.raw.values[size_t(nodes[i])]);
      else REQUIRE(got == float(kEmptyRaw));
    }
  }
  // invalid nodes empty in all channels
  for (int c = 0; c < 4; c++)
    REQUIRE(v.raw.values[size_t(c) * nvox + s.dims.flat(0, 0, 0)] == float(kEmptyRaw));
  // channel-summed activated density at valid nodes matches the original
  for (size_t i = 0; i < nodes.size(); i++) {
    double total = 0;
    for (int c = 0; c < 4; c++)
      total += activate_density(double(v.raw.values[size_t(c) * nvox + size_t(nodes[i])]),
                                s.softplus_shift);
    REQUIRE(total ==
            Catch::Approx(activate_density(double(f.raw.values[size_t(nodes[i])]), s.softplus_shift))
                .margin(1e-9));
  }
}

TEST_CASE("full expansion pipeline separates two moving blobs") {
  GridSpec s = spec8();
  DensityGrid3D f("f", s);
  std::fill(f.raw.values.begin(), f.raw.values.end(), float(kEmptyRaw));
  std::vector<int> blob1, blob2;
  for (int d = 0; d < 3; d++) {
    blob1.push_back(int(s.dims.flat(1 + d, 1, 1)));
    blob2.push_back(int(s.dims.flat(5, 6, 4 + d)));
  }
  for (int i : blob1) f.raw.values[size_t(i)] = raw_for_density(s, 1.0);
  for (int i : blob2) f.raw.values[size_t(i)] = raw_for_density(s, 0.8);

  Rng rng(29);
  WarmupColorNet color = WarmupColorNet::make("nc", 3, 8, 2, rng);
  DeformationNet fwd = make_deformation_net("fx", DeformationNet::Direction::Forward, {}, 8, 1, rng);
  ExpansionConfig cfg;
  cfg.num_rays = 4;
  // thresholds wide open: the untrained color net is not smooth, and this
  // case is about spatial separation
  cfg.delta_rgb = 10.0;
  cfg.delta_vel = 10.0;
  std::vector<double> stamps{0, 0.5, 1.0};
  auto res = run_expansion(f, color, fwd, stamps, 5, cfg, rng);
  REQUIRE(res.num_components == 2);
  REQUIRE(res.num_clusters == 2);
  REQUIRE(res.cluster_sizes == std::vector<int>{3, 3});
  // argmax-channel support union equals the node set
  std::set<int> support;
  size_t nvox = s.dims.nvox();
  for (int c = 0; c < 5; c++)
    for (size_t i = 0; i < nvox; i++)
      if (res.occupancy.raw.values[size_t(c) * nvox + i] != float(kEmptyRaw)) support.insert(int(i));
  REQUIRE(support == std::set<int>(res.nodes.begin(), res.nodes.end()));

  // cluster map round-trips through the dump format header
  std::string path = "/tmp/dv_clusters.bin";
  write_cluster_map(path, s.dims, res.nodes, res.channels);
  std::ifstream in(path, std::ios::binary);
  std::string header;
  std::getline(in, header);
  REQUIRE(header == "dynavol-clusters 1 8 8 8");
}
