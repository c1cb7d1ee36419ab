// Copyright (c) 2026 dynavol authors
// SPDX-License-Identifier: Apache-2.0
//
// 3D-to-4D voxel expansion: valid voxels of the warmed-up density grid get
// appearance (averaged emitted color) and motion (per-interval forward
// displacement differences) features; 6-adjacent voxels whose features agree
// within thresholds are linked, connected components become clusters, and
// each surviving cluster's density is copied into its own slot channel.
#pragma once

#include <algorithm>
#include <fstream>
#include <functional>
#include <numeric>
#include <vector>

#include "dynavol/deformation.hpp"
#include "dynavol/renderer.hpp"
#include "dynavol/voxel_grid.hpp"

namespace dynavol {

struct ExpansionConfig {
  double delta_den = 0.01;   // density threshold (strict >)
  double delta_rgb = 0.15;   // color distance threshold (strict <)
  double delta_vel = -1.0;   // velocity distance threshold; < 0 -> 0.05 * bbox diameter
  int num_rays = 16;         // N_r random view directions for color averaging

  double resolved_delta_vel(const Aabb& bbox) const {
    return delta_vel >= 0 ? delta_vel : 0.05 * bbox.diameter();
  }
};

// Valid lattice nodes: activated density strictly above the threshold.
// Returns sorted flat voxel indices.
inline std::vector<int> filter_valid(const DensityGrid3D& grid, double delta_den) {
  check(delta_den > 0, ErrorKind::Config, "expansion: delta_den must be positive");
  std::vector<int> nodes;
  for (size_t i = 0; i < grid.spec.dims.nvox(); i++)
    if (activate_density(double(grid.raw.values[i]), grid.spec.softplus_shift) > delta_den)
      nodes.push_back(int(i));
  if (nodes.empty())
    throw_data("ExpandEmpty: no voxels above the density threshold (scene learned no geometry)");
  return nodes;
}

// World positions for a set of flat voxel indices, [n x 3].
inline std::vector<double> node_positions(const GridSpec& spec, const std::vector<int>& nodes) {
  std::vector<double> out;
  out.reserve(nodes.size() * 3);
  int ny = spec.dims.ny, nz = spec.dims.nz;
  for (int flat : nodes) {
    int ix = flat / (ny * nz), rem = flat % (ny * nz);
    Vec3 w = grid_to_world(spec, {double(ix), double(rem / nz), double(rem % nz)});
    out.insert(out.end(), {w.x, w.y, w.z});
  }
  return out;
}

// Averaged emitted color per node over num_rays random directions shared
// across nodes, [n x 3].
inline std::vector<double> color_features(const std::vector<double>& positions,
                                          const WarmupColorNet& net, int num_rays, Rng& rng) {
  check(num_rays >= 1, ErrorKind::Config, "expansion: num_rays must be >= 1");
  int n = int(positions.size() / 3);
  std::vector<double> avg(size_t(n) * 3, 0.0);
  for (int i = 0; i < num_rays; i++) {
    // uniform direction on the sphere
    double z = rng.uniform(-1, 1), phi = rng.uniform(0, 2 * M_PI);
    double r = std::sqrt(std::max(0.0, 1 - z * z));
    Vec3 d{r * std::cos(phi), r * std::sin(phi), z};
    std::vector<double> dirs;
    dirs.reserve(size_t(n) * 3);
    for (int j = 0; j < n; j++) dirs.insert(dirs.end(), {d.x, d.y, d.z});
    ad::Tape t(false);
    ad::Var pts = t.constant(n, 3, positions);
    ad::Var c = net.forward(t, pts, dirs);
    const auto& cv = t.val(c);
    for (size_t k = 0; k < avg.size(); k++) avg[k] += cv[k];
  }
  for (auto& v : avg) v /= double(num_rays);
  return avg;
}

// Per-node forward-motion features: v_t = f'(x, tau_t) - f'(x, tau_{t-1})
// for t = 1..T-1, flattened [n x (T-1) x 3].
inline std::vector<double> velocity_features(const std::vector<double>& positions,
                                             const DeformationNet& forward_net,
                                             const std::vector<double>& timestamps) {
  int n = int(positions.size() / 3);
  int T = int(timestamps.size());
  check(T >= 2, ErrorKind::Config, "expansion: need at least two timestamps");
  std::vector<double> out(size_t(n) * size_t(T - 1) * 3);
  std::vector<double> prev, cur;
  for (int t = 0; t < T; t++) {
    std::vector<double> times(size_t(n), timestamps[size_t(t)]);
    cur = displacement_values(forward_net, positions, times);
    if (t > 0)
      for (int j = 0; j < n; j++)
        for (int c = 0; c < 3; c++)
          out[(size_t(j) * (T - 1) + (t - 1)) * 3 + c] =
              cur[size_t(j) * 3 + c] - prev[size_t(j) * 3 + c];
    prev.swap(cur);
  }
  return out;
}

struct PairDistances {
  double rgb = 0, vel = 0;
};

inline PairDistances pairwise_distances(const std::vector<double>& colors,
                                        const std::vector<double>& velocities, int t_minus_1,
                                        int p, int q) {
  PairDistances d;
  double acc = 0;
  for (int c = 0; c < 3; c++) {
    double diff = colors[size_t(p) * 3 + c] - colors[size_t(q) * 3 + c];
    acc += diff * diff;
  }
  d.rgb = std::sqrt(acc);
  for (int t = 0; t < t_minus_1; t++) {
    double vv = 0;
    for (int c = 0; c < 3; c++) {
      double diff = velocities[(size_t(p) * t_minus_1 + t) * 3 + c] -
                    velocities[(size_t(q) * t_minus_1 + t) * 3 + c];
      vv += diff * diff;
    }
    d.vel = std::max(d.vel, std::sqrt(vv));
  }
  return d;
}

struct VoxelFeatureGraph {
  std::vector<int> nodes;                  // sorted flat voxel indices
  std::vector<double> colors;              // [n x 3]
  std::vector<double> velocities;          // [n x (T-1) x 3]
  int t_minus_1 = 0;
  std::vector<std::pair<int, int>> edges;  // indices into `nodes`, u < v
};

// Edges join 6-adjacent valid nodes whose color and velocity distances both
// pass their strict thresholds.
inline VoxelFeatureGraph build_graph(const GridDims& dims, std::vector<int> nodes,
                                     std::vector<double> colors, std::vector<double> velocities,
                                     int t_minus_1, double delta_rgb, double delta_vel) {
  VoxelFeatureGraph g;
  g.nodes = std::move(nodes);
  g.colors = std::move(colors);
  g.velocities = std::move(velocities);
  g.t_minus_1 = t_minus_1;
  std::vector<int> node_of(dims.nvox(), -1);
  for (size_t i = 0; i < g.nodes.size(); i++) node_of[size_t(g.nodes[i])] = int(i);
  int ny = dims.ny, nz = dims.nz;
  for (size_t i = 0; i < g.nodes.size(); i++) {
    int flat = g.nodes[i];
    int ix = flat / (ny * nz), rem = flat % (ny * nz), iy = rem / nz, iz = rem % nz;
    // +x/+y/+z neighbors cover each unordered 6-adjacent pair once
    const int nbr[3][4] = {{ix + 1, iy, iz, ix + 1 < dims.nx},
                           {ix, iy + 1, iz, iy + 1 < dims.ny},
                           {ix, iy, iz + 1, iz + 1 < dims.nz}};
    for (auto& nb : nbr) {
      if (!nb[3]) continue;
      int j = node_of[dims.flat(nb[0], nb[1], nb[2])];
      if (j < 0) continue;
      PairDistances d = pairwise_distances(g.colors, g.velocities, t_minus_1, int(i), j);
      if (d.rgb < delta_rgb && d.vel < delta_vel) g.edges.push_back({int(i), j});
    }
  }
  return g;
}

// Undirected components via union-find; component ids are assigned in order
// of each component's smallest lattice index. Returns per-node labels and the
// component count.
inline std::vector<int> connected_components(int n_nodes,
                                             const std::vector<std::pair<int, int>>& edges,
                                             const std::vector<int>& node_flat, int& num_components) {
  std::vector<int> parent(static_cast<size_t>(n_nodes));
  std::iota(parent.begin(), parent.end(), 0);
  std::function<int(int)> find = [&](int x) {
    while (parent[size_t(x)] != x) {
      parent[size_t(x)] = parent[size_t(parent[size_t(x)])];
      x = parent[size_t(x)];
    }
    return x;
  };
  for (auto& [u, v] : edges) {
    int ru = find(u), rv = find(v);
    if (ru != rv) parent[size_t(std::max(ru, rv))] = std::min(ru, rv);
  }
  // roots in ascending smallest-lattice-index order; nodes are sorted by flat
  // index so the root index order already matches
  std::vector<int> labels(static_cast<size_t>(n_nodes), -1);
  num_components = 0;
  (void)node_flat;
  for (int i = 0; i < n_nodes; i++) {
    int r = find(i);
    if (labels[size_t(r)] < 0) labels[size_t(r)] = num_components++;
  }
  std::vector<int> out(static_cast<size_t>(n_nodes));
  for (int i = 0; i < n_nodes; i++) out[size_t(i)] = labels[size_t(find(i))];
  return out;
}

// Keep the N-1 largest clusters, merge the remaining smallest into one; no-op
// when M <= N. Cluster order: size descending, ties by smallest lattice
// index. Returns per-node channel ids in [0, min(M, N)).
inline std::vector<int> sort_and_merge(const std::vector<int>& labels, int num_components,
                                       int num_slots, int& num_clusters_out) {
  struct Cl {
    int id, size, min_node;
  };
  std::vector<Cl> cls(static_cast<size_t>(num_components));
  for (int c = 0; c < num_components; c++) cls[size_t(c)] = {c, 0, 1 << 30};
  for (size_t i = 0; i < labels.size(); i++) {
    auto& c = cls[size_t(labels[i])];
    c.size++;
    c.min_node = std::min(c.min_node, int(i));
  }
  std::sort(cls.begin(), cls.end(), [](const Cl& a, const Cl& b) {
    if (a.size != b.size) return a.size > b.size;
    return a.min_node < b.min_node;
  });
  num_clusters_out = std::min(num_components, num_slots);
  std::vector<int> channel_of(static_cast<size_t>(num_components));
  for (int rank = 0; rank < num_components; rank++)
    channel_of[size_t(cls[size_t(rank)].id)] = std::min(rank, num_slots - 1);
  std::vector<int> out(labels.size());
  for (size_t i = 0; i < labels.size(); i++) out[i] = channel_of[size_t(labels[i])];
  return out;
}

// Copy each valid node's raw density into its cluster's channel; everything
// else stays at the empty raw value.
inline OccupancyGrid4D expand(const DensityGrid3D& grid, const std::vector<int>& nodes,
                              const std::vector<int>& channels, int num_slots,
                              const std::string& name = "occupancy") {
  check(nodes.size() == channels.size(), ErrorKind::Numeric, "expand: assignment size mismatch");
  OccupancyGrid4D v(name, grid.spec, num_slots);
  size_t nvox = grid.spec.dims.nvox();
  for (size_t i = 0; i < nodes.size(); i++) {
    check(channels[i] >= 0 && channels[i] < num_slots, ErrorKind::Numeric,
          "expand: channel id out of range");
    v.raw.values[size_t(channels[i]) * nvox + size_t(nodes[i])] =
        grid.raw.values[size_t(nodes[i])];
  }
  return v;
}

struct ExpansionResult {
  OccupancyGrid4D occupancy;
  std::vector<int> nodes;
  std::vector<int> channels;      // per node
  int num_components = 0;         // M before merging
  int num_clusters = 0;           // after merging, = min(M, N)
  std::vector<int> cluster_sizes; // post-merge, indexed by channel
};

inline ExpansionResult run_expansion(const DensityGrid3D& grid, const WarmupColorNet& color_net,
                                     const DeformationNet& forward_net,
                                     const std::vector<double>& timestamps, int num_slots,
                                     const ExpansionConfig& cfg, Rng& rng) {
  ExpansionResult res;
  res.nodes = filter_valid(grid, cfg.delta_den);
  std::vector<double> pos = node_positions(grid.spec, res.nodes);
  std::vector<double> colors = color_features(pos, color_net, cfg.num_rays, rng);
  std::vector<double> vels = velocity_features(pos, forward_net, timestamps);
  int tm1 = int(timestamps.size()) - 1;
  VoxelFeatureGraph g =
      build_graph(grid.spec.dims, res.nodes, std::move(colors), std::move(vels), tm1,
                  cfg.delta_rgb, cfg.resolved_delta_vel(grid.spec.bbox));
  std::vector<int> labels =
      connected_components(int(g.nodes.size()), g.edges, g.nodes, res.num_components);
  res.channels = sort_and_merge(labels, res.num_components, num_slots, res.num_clusters);
  res.occupancy = expand(grid, res.nodes, res.channels, num_slots);
  res.cluster_sizes.assign(size_t(res.num_clusters), 0);
  for (int c : res.channels) res.cluster_sizes[size_t(c)]++;
  return res;
}

// Inspection dump: one text header line, then per-voxel uint16 labels
// (0 = unassigned, channel + 1 otherwise) in lattice order, little-endian.
inline void write_cluster_map(const std::string& path, const GridDims& dims,
                              const std::vector<int>& nodes, const std::vector<int>& channels) {
  std::ofstream f(path, std::ios::binary);
  check(f.good(), ErrorKind::Data, "cannot write cluster map: " + path);
  f << "dynavol-clusters 1 " << dims.nx << " " << dims.ny << " " << dims.nz << "\n";
  std::vector<uint16_t> vol(dims.nvox(), 0);
  for (size_t i = 0; i < nodes.size(); i++) vol[size_t(nodes[i])] = uint16_t(channels[i] + 1);
  f.write(reinterpret_cast<const char*>(vol.data()), std::streamsize(vol.size() * 2));
}

}  // namespace dynavol
