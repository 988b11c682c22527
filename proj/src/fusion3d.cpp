#include "semfuse/fusion3d.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace semfuse::fusion {

TsdfVolume::TsdfVolume(const Eigen::Vector3d& origin, const Eigen::Vector3i& dims,
                       const TsdfConfig& config)
    : config_(config), origin_(origin), dims_(dims) {
  if (config.voxel_size <= 0) throw std::runtime_error("tsdf: voxel_size must be positive");
  if (config.truncation < config.voxel_size)
    throw std::runtime_error("tsdf: truncation must be >= voxel_size");
  if ((dims.array() <= 0).any()) throw std::runtime_error("tsdf: dims must be positive");

  sparse_ = voxel_count() > config.dense_voxel_budget;
  if (!sparse_) {
    tsdf_.assign(voxel_count(), 0.f);
    weight_.assign(voxel_count(), 0.f);
  }
}

TsdfVolume TsdfVolume::bounded_by_frusta(std::span<const Pose> poses,
                                         const Intrinsics& intrinsics, const TsdfConfig& config) {
  if (poses.empty()) throw std::runtime_error("tsdf: no poses to bound");
  Eigen::Vector3d lo = Eigen::Vector3d::Constant(std::numeric_limits<double>::max());
  Eigen::Vector3d hi = Eigen::Vector3d::Constant(std::numeric_limits<double>::lowest());
  const auto grow = [&](const Eigen::Vector3d& p) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  };

  const double w = intrinsics.width, h = intrinsics.height;
  const std::array<Eigen::Vector2d, 4> corners = {
      Eigen::Vector2d{0, 0}, {w, 0}, {0, h}, {w, h}};
  for (const Pose& pose : poses) {
    grow(pose.translation);
    for (const auto& c : corners) {
      const Eigen::Vector3d dir((c.x() - intrinsics.cx) / intrinsics.fx,
                                (c.y() - intrinsics.cy) / intrinsics.fy, 1.0);
      grow(pose.to_world(dir * config.max_range));
    }
  }

  const Eigen::Vector3d extent = hi - lo;
  const Eigen::Vector3d pad = extent * config.bounds_padding;
  lo -= pad;
  hi += pad;
  Eigen::Vector3i dims;
  for (int a = 0; a < 3; ++a)
    dims[a] = std::max(1, static_cast<int>(std::ceil((hi[a] - lo[a]) / config.voxel_size)));
  return TsdfVolume(lo, dims, config);
}

float TsdfVolume::tsdf_at(int i, int j, int k) const {
  if (!in_bounds(i, j, k)) return 0.f;
  if (!sparse_)
    return tsdf_[(static_cast<size_t>(k) * dims_.y() + j) * dims_.x() + i];
  const auto it = blocks_.find(
      block_key(i >> kBlockShift, j >> kBlockShift, k >> kBlockShift));
  if (it == blocks_.end()) return 0.f;
  const int m = kBlockSize - 1;
  return it->second->tsdf[((k & m) * kBlockSize + (j & m)) * kBlockSize + (i & m)];
}

float TsdfVolume::weight_at(int i, int j, int k) const {
  if (!in_bounds(i, j, k)) return 0.f;
  if (!sparse_)
    return weight_[(static_cast<size_t>(k) * dims_.y() + j) * dims_.x() + i];
  const auto it = blocks_.find(
      block_key(i >> kBlockShift, j >> kBlockShift, k >> kBlockShift));
  if (it == blocks_.end()) return 0.f;
  const int m = kBlockSize - 1;
  return it->second->weight[((k & m) * kBlockSize + (j & m)) * kBlockSize + (i & m)];
}

std::vector<uint64_t> TsdfVolume::allocated_block_keys() const {
  std::vector<uint64_t> keys;
  keys.reserve(blocks_.size());
  for (const auto& [key, block] : blocks_) keys.push_back(key);
  std::sort(keys.begin(), keys.end());
  return keys;
}

struct TsdfVolume::FrameGeometry {
  Eigen::Matrix3d world_to_cam_rot;
  Eigen::Vector3d world_to_cam_trans;
  double fx, fy, cx, cy;
  int width, height;
  float trunc;
  float inv_trunc;
  float max_range;
  float weight_cap;

  FrameGeometry(const Pose& pose, const Intrinsics& k, const TsdfConfig& cfg)
      : world_to_cam_rot(pose.rotation.conjugate().toRotationMatrix()),
        world_to_cam_trans(-(world_to_cam_rot * pose.translation)),
        fx(k.fx),
        fy(k.fy),
        cx(k.cx),
        cy(k.cy),
        width(k.width),
        height(k.height),
        trunc(static_cast<float>(cfg.truncation)),
        inv_trunc(static_cast<float>(1.0 / cfg.truncation)),
        max_range(static_cast<float>(cfg.max_range)),
        weight_cap(cfg.weight_cap) {}

  // Shared per-voxel update so that dense/sparse and serial/parallel paths
  // apply identical arithmetic.
  inline void update(const Eigen::Vector3d& voxel_world, const Image<float>& depth, float& tsdf,
                     float& weight) const {
    const Eigen::Vector3d cam = world_to_cam_rot * voxel_world + world_to_cam_trans;
    if (cam.z() <= 0.0) return;
    const double u = fx * cam.x() / cam.z() + cx;
    const double v = fy * cam.y() / cam.z() + cy;
    const int ix = static_cast<int>(std::floor(u));
    const int iy = static_cast<int>(std::floor(v));
    if (ix < 0 || iy < 0 || ix >= width || iy >= height) return;
    const float d = depth.at(ix, iy);
    if (d <= 0.f || d > max_range) return;
    const float sdf = d - static_cast<float>(cam.z());
    if (sdf < -trunc) return;
    const float sample = std::clamp(sdf * inv_trunc, -1.f, 1.f);
    const float w_new = weight + 1.f;
    tsdf = (tsdf * weight + sample) / w_new;
    weight = std::min(w_new, weight_cap);
  }
};

void TsdfVolume::integrate_dense(const Image<float>& depth, const Pose& pose,
                                 const Intrinsics& intrinsics, bool parallel) {
  const FrameGeometry geom(pose, intrinsics, config_);
  const int nx = dims_.x(), ny = dims_.y(), nz = dims_.z();

#pragma omp parallel for schedule(static) if (parallel)
  for (int k = 0; k < nz; ++k) {
    size_t lin = static_cast<size_t>(k) * ny * nx;
    for (int j = 0; j < ny; ++j) {
      for (int i = 0; i < nx; ++i, ++lin) {
        geom.update(voxel_center(i, j, k), depth, tsdf_[lin], weight_[lin]);
      }
    }
  }
}

std::vector<uint64_t> TsdfVolume::touched_blocks(const Image<float>& depth, const Pose& pose,
                                                 const Intrinsics& intrinsics) const {
  // Mark every block overlapping a cube of half-side 2*truncation around
  // each back-projected depth sample; obliquity of the viewing ray keeps
  // the true band inside that margin.
  const double reach = 2.0 * config_.truncation;
  std::unordered_map<uint64_t, bool> marked;
  const double inv_voxel = 1.0 / voxel_size();
  for (int y = 0; y < depth.height; ++y) {
    for (int x = 0; x < depth.width; ++x) {
      const float d = depth.at(x, y);
      if (d <= 0.f || d > config_.max_range) continue;
      const Eigen::Vector3d cam = intrinsics.pixel_ray(x, y) * d;
      const Eigen::Vector3d p = pose.to_world(cam);
      const Eigen::Vector3d lo_w = p.array() - reach;
      const Eigen::Vector3d hi_w = p.array() + reach;
      Eigen::Vector3i lo, hi;
      for (int a = 0; a < 3; ++a) {
        lo[a] = std::max(0, static_cast<int>(std::floor((lo_w[a] - origin_[a]) * inv_voxel)) >>
                                kBlockShift);
        hi[a] = std::min((dims_[a] - 1) >> kBlockShift,
                         static_cast<int>(std::floor((hi_w[a] - origin_[a]) * inv_voxel)) >>
                             kBlockShift);
      }
      for (int bk = lo.z(); bk <= hi.z(); ++bk)
        for (int bj = lo.y(); bj <= hi.y(); ++bj)
          for (int bi = lo.x(); bi <= hi.x(); ++bi) marked[block_key(bi, bj, bk)] = true;
    }
  }
  std::vector<uint64_t> keys;
  keys.reserve(marked.size());
  for (const auto& [key, unused] : marked) keys.push_back(key);
  std::sort(keys.begin(), keys.end());
  return keys;
}

void TsdfVolume::integrate_sparse(const Image<float>& depth, const Pose& pose,
                                  const Intrinsics& intrinsics, bool parallel) {
  const FrameGeometry geom(pose, intrinsics, config_);
  const std::vector<uint64_t> keys = touched_blocks(depth, pose, intrinsics);
  for (const uint64_t key : keys) {
    auto& slot = blocks_[key];
    if (!slot) slot = std::make_unique<Block>();
  }

  const int n = static_cast<int>(keys.size());
#pragma omp parallel for schedule(dynamic, 4) if (parallel)
  for (int b = 0; b < n; ++b) {
    Block& block = *blocks_.at(keys[b]);
    const int bi = static_cast<int>(keys[b] & 0xfffff) << kBlockShift;
    const int bj = static_cast<int>((keys[b] >> 20) & 0xfffff) << kBlockShift;
    const int bk = static_cast<int>((keys[b] >> 40) & 0xfffff) << kBlockShift;
    int idx = 0;
    for (int dk = 0; dk < kBlockSize; ++dk) {
      for (int dj = 0; dj < kBlockSize; ++dj) {
        for (int di = 0; di < kBlockSize; ++di, ++idx) {
          const int i = bi + di, j = bj + dj, k = bk + dk;
          if (!in_bounds(i, j, k)) continue;
          geom.update(voxel_center(i, j, k), depth, block.tsdf[idx], block.weight[idx]);
        }
      }
    }
  }
}

namespace {
void check_depth_dims(const Image<float>& depth, const Intrinsics& intrinsics) {
  if (depth.width != intrinsics.width || depth.height != intrinsics.height)
    throw std::runtime_error("integrate_frame: depth dimensions do not match intrinsics");
}
}  // namespace

void integrate_frame(TsdfVolume& vol, const Image<float>& depth, const Pose& pose,
                     const Intrinsics& intrinsics) {
  check_depth_dims(depth, intrinsics);
  if (vol.block_sparse())
    vol.integrate_sparse(depth, pose, intrinsics, true);
  else
    vol.integrate_dense(depth, pose, intrinsics, true);
}

void integrate_frame_serial(TsdfVolume& vol, const Image<float>& depth, const Pose& pose,
                            const Intrinsics& intrinsics) {
  check_depth_dims(depth, intrinsics);
  if (vol.block_sparse())
    vol.integrate_sparse(depth, pose, intrinsics, false);
  else
    vol.integrate_dense(depth, pose, intrinsics, false);
}

LabeledCloud cloud_from_mesh(const TriangleMesh& mesh, const std::string& space) {
  LabeledCloud cloud;
  cloud.space = space;
  cloud.resize(mesh.vertices.size());
  cloud.points = mesh.vertices;
  cloud.normals = mesh.normals;
  return cloud;
}

namespace {

struct VoxelKey {
  int64_t x, y, z;
  bool operator<(const VoxelKey& o) const {
    if (x != o.x) return x < o.x;
    if (y != o.y) return y < o.y;
    return z < o.z;
  }
  bool operator==(const VoxelKey& o) const { return x == o.x && y == o.y && z == o.z; }
};

}  // namespace

LabeledCloud downsample(const LabeledCloud& cloud, double voxel) {
  if (voxel <= 0) throw std::runtime_error("downsample: voxel size must be positive");

  LabeledCloud out;
  out.space = cloud.space;
  if (cloud.size() == 0) return out;

  // Bucket by voxel, then canonicalize member order so the result does not
  // depend on input permutation.
  std::map<VoxelKey, std::vector<size_t>> buckets;
  const double inv = 1.0 / voxel;
  for (size_t i = 0; i < cloud.size(); ++i) {
    const Eigen::Vector3f& p = cloud.points[i];
    buckets[{static_cast<int64_t>(std::floor(p.x() * inv)),
             static_cast<int64_t>(std::floor(p.y() * inv)),
             static_cast<int64_t>(std::floor(p.z() * inv))}]
        .push_back(i);
  }

  const auto member_less = [&](size_t a, size_t b) {
    const auto pa = cloud.points[a], pb = cloud.points[b];
    if (pa.x() != pb.x()) return pa.x() < pb.x();
    if (pa.y() != pb.y()) return pa.y() < pb.y();
    if (pa.z() != pb.z()) return pa.z() < pb.z();
    const auto na = cloud.normals[a], nb = cloud.normals[b];
    if (na.x() != nb.x()) return na.x() < nb.x();
    if (na.y() != nb.y()) return na.y() < nb.y();
    if (na.z() != nb.z()) return na.z() < nb.z();
    return cloud.label1[a] < cloud.label1[b];
  };

  for (auto& [key, members] : buckets) {
    std::sort(members.begin(), members.end(), member_less);

    Eigen::Vector3d pos_sum = Eigen::Vector3d::Zero();
    Eigen::Vector3d nrm_sum = Eigen::Vector3d::Zero();
    std::map<uint16_t, uint32_t> votes;
    for (size_t idx : members) {
      pos_sum += cloud.points[idx].cast<double>();
      nrm_sum += cloud.normals[idx].cast<double>();
      ++votes[cloud.label1[idx]];
    }

    const Eigen::Vector3d centroid = pos_sum / static_cast<double>(members.size());
    Eigen::Vector3d normal = nrm_sum;
    if (normal.norm() < 1e-9) {
      normal = cloud.normals[members.front()].cast<double>();
    }
    const double nn = normal.norm();
    normal = nn > 0 ? Eigen::Vector3d(normal / nn) : Eigen::Vector3d(0, 0, 1);

    uint16_t l1 = 0, l2 = 0;
    uint32_t c1 = 0, c2 = 0;
    for (const auto& [label, count] : votes) {
      if (count > c1) {
        l2 = l1;
        c2 = c1;
        l1 = label;
        c1 = count;
      } else if (count > c2) {
        l2 = label;
        c2 = count;
      }
      // std::map iterates ids ascending, so ties keep the smaller id.
    }

    out.points.push_back(centroid.cast<float>());
    out.normals.push_back(normal.cast<float>());
    out.label1.push_back(l1);
    out.count1.push_back(static_cast<uint16_t>(std::min<uint32_t>(c1, 0xffff)));
    out.label2.push_back(l2);
    out.count2.push_back(static_cast<uint16_t>(std::min<uint32_t>(c2, 0xffff)));
  }
  return out;
}

}  // namespace semfuse::fusion
