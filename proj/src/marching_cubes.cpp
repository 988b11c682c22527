#include <algorithm>
#include <cmath>
#include <cstdint>
#include <unordered_map>

#include "semfuse/fusion3d.hpp"

namespace semfuse::fusion {

namespace {

#include "mc_tri_table.inc"

// Corner layout per cell (i,j,k):
//   0:(i,j,k) 1:(i+1,j,k) 2:(i+1,j+1,k) 3:(i,j+1,k)
//   4..7: same with k+1.
constexpr int kCornerOffset[8][3] = {
    {0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
    {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1},
};

constexpr int kEdgeCorners[12][2] = {
    {0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6},
    {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7},
};

// Canonical (voxel offset, axis) of each cell edge, for vertex sharing
// between neighboring cells. Axis: 0=x, 1=y, 2=z.
constexpr int kEdgeAnchor[12][4] = {
    {0, 0, 0, 0}, {1, 0, 0, 1}, {0, 1, 0, 0}, {0, 0, 0, 1},
    {0, 0, 1, 0}, {1, 0, 1, 1}, {0, 1, 1, 0}, {0, 0, 1, 1},
    {0, 0, 0, 2}, {1, 0, 0, 2}, {1, 1, 0, 2}, {0, 1, 0, 2},
};

// Edge activity derived from the corner incidence: edge e is crossed iff
// its two corners lie on opposite sides of the surface.
std::array<uint16_t, 256> build_edge_table() {
  std::array<uint16_t, 256> table{};
  for (int ci = 0; ci < 256; ++ci) {
    uint16_t mask = 0;
    for (int e = 0; e < 12; ++e) {
      const int a = kEdgeCorners[e][0], b = kEdgeCorners[e][1];
      if (((ci >> a) & 1) != ((ci >> b) & 1)) mask |= static_cast<uint16_t>(1u << e);
    }
    table[static_cast<size_t>(ci)] = mask;
  }
  return table;
}

const std::array<uint16_t, 256> kEdgeTable = build_edge_table();

// Central-difference tsdf gradient at a voxel, degrading to one-sided
// differences at unobserved or out-of-range neighbors.
Eigen::Vector3d gradient_at(const TsdfVolume& vol, int i, int j, int k) {
  Eigen::Vector3d g = Eigen::Vector3d::Zero();
  const int idx[3] = {i, j, k};
  for (int a = 0; a < 3; ++a) {
    int lo[3] = {i, j, k}, hi[3] = {i, j, k};
    --lo[a];
    ++hi[a];
    const bool has_lo = vol.weight_at(lo[0], lo[1], lo[2]) > 0.f;
    const bool has_hi = vol.weight_at(hi[0], hi[1], hi[2]) > 0.f;
    if (has_lo && has_hi) {
      g[a] = (vol.tsdf_at(hi[0], hi[1], hi[2]) - vol.tsdf_at(lo[0], lo[1], lo[2])) * 0.5;
    } else if (has_hi) {
      g[a] = vol.tsdf_at(hi[0], hi[1], hi[2]) - vol.tsdf_at(idx[0], idx[1], idx[2]);
    } else if (has_lo) {
      g[a] = vol.tsdf_at(idx[0], idx[1], idx[2]) - vol.tsdf_at(lo[0], lo[1], lo[2]);
    }
  }
  return g;
}

struct MeshBuilder {
  const TsdfVolume& vol;
  TriangleMesh mesh;
  // Vertex index per (voxel, axis) edge anchor.
  std::unordered_map<uint64_t, int> edge_vertex;

  explicit MeshBuilder(const TsdfVolume& v) : vol(v) {}

  uint64_t anchor_key(int i, int j, int k, int axis) const {
    const uint64_t lin = (static_cast<uint64_t>(k) * vol.dims().y() + j) * vol.dims().x() + i;
    return lin * 3 + static_cast<uint64_t>(axis);
  }

  int vertex_on_edge(int i, int j, int k, int edge, const float value[8]) {
    const int ai = i + kEdgeAnchor[edge][0];
    const int aj = j + kEdgeAnchor[edge][1];
    const int ak = k + kEdgeAnchor[edge][2];
    const int axis = kEdgeAnchor[edge][3];
    const uint64_t key = anchor_key(ai, aj, ak, axis);
    const auto it = edge_vertex.find(key);
    if (it != edge_vertex.end()) return it->second;

    const int ca = kEdgeCorners[edge][0];
    const int cb = kEdgeCorners[edge][1];
    const double va = value[ca];
    const double vb = value[cb];
    double t = (vb - va) == 0.0 ? 0.5 : (0.0 - va) / (vb - va);
    t = std::clamp(t, 0.0, 1.0);

    const Eigen::Vector3d pa = vol.voxel_center(i + kCornerOffset[ca][0], j + kCornerOffset[ca][1],
                                                k + kCornerOffset[ca][2]);
    const Eigen::Vector3d pb = vol.voxel_center(i + kCornerOffset[cb][0], j + kCornerOffset[cb][1],
                                                k + kCornerOffset[cb][2]);
    const Eigen::Vector3d pos = pa + t * (pb - pa);

    const Eigen::Vector3d ga = gradient_at(vol, i + kCornerOffset[ca][0],
                                           j + kCornerOffset[ca][1], k + kCornerOffset[ca][2]);
    const Eigen::Vector3d gb = gradient_at(vol, i + kCornerOffset[cb][0],
                                           j + kCornerOffset[cb][1], k + kCornerOffset[cb][2]);
    Eigen::Vector3d n = (1.0 - t) * ga + t * gb;
    const double len = n.norm();
    n = len > 1e-12 ? Eigen::Vector3d(n / len) : Eigen::Vector3d(0, 0, 1);

    const int index = static_cast<int>(mesh.vertices.size());
    mesh.vertices.push_back(pos.cast<float>());
    mesh.normals.push_back(n.cast<float>());
    edge_vertex.emplace(key, index);
    return index;
  }

  void process_cell(int i, int j, int k) {
    float value[8];
    int cube_index = 0;
    for (int c = 0; c < 8; ++c) {
      const int ci = i + kCornerOffset[c][0];
      const int cj = j + kCornerOffset[c][1];
      const int ck = k + kCornerOffset[c][2];
      if (vol.weight_at(ci, cj, ck) <= 0.f) return;  // needs all 8 corners observed
      value[c] = vol.tsdf_at(ci, cj, ck);
      if (value[c] < 0.f) cube_index |= 1 << c;
    }
    if (kEdgeTable[static_cast<size_t>(cube_index)] == 0) return;

    const int8_t* tri = kTriangleTable[cube_index];
    for (int t = 0; tri[t] != -1; t += 3) {
      const int v0 = vertex_on_edge(i, j, k, tri[t], value);
      const int v1 = vertex_on_edge(i, j, k, tri[t + 1], value);
      const int v2 = vertex_on_edge(i, j, k, tri[t + 2], value);
      if (v0 == v1 || v1 == v2 || v0 == v2) continue;
      mesh.faces.push_back({v0, v1, v2});
    }
  }
};

}  // namespace

TriangleMesh extract_mesh(const TsdfVolume& vol) {
  MeshBuilder builder(vol);
  const Eigen::Vector3i d = vol.dims();

  if (!vol.block_sparse()) {
    for (int k = 0; k + 1 < d.z(); ++k)
      for (int j = 0; j + 1 < d.y(); ++j)
        for (int i = 0; i + 1 < d.x(); ++i) builder.process_cell(i, j, k);
    return std::move(builder.mesh);
  }

  // Sparse: visit cells anchored in allocated blocks, in sorted block order
  // for deterministic vertex numbering. Cells whose anchor voxel sits in an
  // unallocated block have an unobserved corner and produce nothing.
  constexpr int bs = TsdfVolume::kBlockSize;
  for (const uint64_t key : vol.allocated_block_keys()) {
    const int bi = static_cast<int>(key & 0xfffff) * bs;
    const int bj = static_cast<int>((key >> 20) & 0xfffff) * bs;
    const int bk = static_cast<int>((key >> 40) & 0xfffff) * bs;
    for (int k = bk; k < bk + bs && k + 1 < d.z(); ++k)
      for (int j = bj; j < bj + bs && j + 1 < d.y(); ++j)
        for (int i = bi; i < bi + bs && i + 1 < d.x(); ++i) builder.process_cell(i, j, k);
  }
  return std::move(builder.mesh);
}

}  // namespace semfuse::fusion
