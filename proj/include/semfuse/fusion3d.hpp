#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "semfuse/geometry.hpp"
#include "semfuse/image.hpp"

namespace semfuse::fusion {

struct TsdfConfig {
  double voxel_size = 0.008;
  double truncation = 0.04;
  // Depth samples of 0 or beyond max_range are skipped.
  double max_range = 6.0;
  // Fractional padding added around the frusta bounding box.
  double bounds_padding = 0.05;
  float weight_cap = 255.0f;
  // Volumes with more voxels than this use the block-sparse layout, which
  // only allocates near-surface blocks.
  size_t dense_voxel_budget = size_t{1} << 28;
};

// Truncated signed distance volume. Values live at voxel centers
// origin + (i+0.5, j+0.5, k+0.5) * voxel_size; weight 0 means never
// observed and |tsdf| <= 1 always.
class TsdfVolume {
 public:
  static constexpr int kBlockShift = 3;
  static constexpr int kBlockSize = 1 << kBlockShift;  // 8^3 voxels per block
  static constexpr int kBlockVoxels = kBlockSize * kBlockSize * kBlockSize;

  struct Block {
    std::array<float, kBlockVoxels> tsdf{};
    std::array<float, kBlockVoxels> weight{};
  };

  TsdfVolume(const Eigen::Vector3d& origin, const Eigen::Vector3i& dims, const TsdfConfig& config);

  // Bounding box of all camera frusta (out to max_range) plus padding.
  static TsdfVolume bounded_by_frusta(std::span<const Pose> poses, const Intrinsics& intrinsics,
                                      const TsdfConfig& config);

  const TsdfConfig& config() const { return config_; }
  const Eigen::Vector3d& origin() const { return origin_; }
  const Eigen::Vector3i& dims() const { return dims_; }
  double voxel_size() const { return config_.voxel_size; }
  double truncation() const { return config_.truncation; }
  bool block_sparse() const { return sparse_; }
  size_t voxel_count() const {
    return static_cast<size_t>(dims_.x()) * dims_.y() * dims_.z();
  }

  bool in_bounds(int i, int j, int k) const {
    return i >= 0 && j >= 0 && k >= 0 && i < dims_.x() && j < dims_.y() && k < dims_.z();
  }

  Eigen::Vector3d voxel_center(int i, int j, int k) const {
    return origin_ + voxel_size() * Eigen::Vector3d(i + 0.5, j + 0.5, k + 0.5);
  }

  // Out-of-bounds and unallocated voxels read as unobserved (weight 0).
  float tsdf_at(int i, int j, int k) const;
  float weight_at(int i, int j, int k) const;

  uint64_t block_key(int bi, int bj, int bk) const {
    return (static_cast<uint64_t>(bk) << 40) | (static_cast<uint64_t>(bj) << 20) |
           static_cast<uint64_t>(bi);
  }

  friend void integrate_frame(TsdfVolume&, const Image<float>&, const Pose&, const Intrinsics&);
  friend void integrate_frame_serial(TsdfVolume&, const Image<float>&, const Pose&,
                                     const Intrinsics&);

 private:
  struct FrameGeometry;

  void integrate_dense(const Image<float>& depth, const Pose& pose, const Intrinsics& intrinsics,
                       bool parallel);
  void integrate_sparse(const Image<float>& depth, const Pose& pose, const Intrinsics& intrinsics,
                        bool parallel);
  std::vector<uint64_t> touched_blocks(const Image<float>& depth, const Pose& pose,
                                       const Intrinsics& intrinsics) const;

  TsdfConfig config_;
  Eigen::Vector3d origin_ = Eigen::Vector3d::Zero();
  Eigen::Vector3i dims_ = Eigen::Vector3i::Zero();
  bool sparse_ = false;

  // Dense layout: x fastest.
  std::vector<float> tsdf_;
  std::vector<float> weight_;

  std::unordered_map<uint64_t, std::unique_ptr<Block>> blocks_;

 public:
  // Sorted keys of allocated blocks; empty in dense mode.
  std::vector<uint64_t> allocated_block_keys() const;
};

// Projective TSDF update: for every voxel center visible in the frame with
// valid depth d, sdf = d - z is folded into the running weighted average
// when sdf >= -truncation (voxels deeper behind the surface keep their
// state). The parallel and serial versions are bit-identical.
void integrate_frame(TsdfVolume& vol, const Image<float>& depth, const Pose& pose,
                     const Intrinsics& intrinsics);
void integrate_frame_serial(TsdfVolume& vol, const Image<float>& depth, const Pose& pose,
                            const Intrinsics& intrinsics);

struct TriangleMesh {
  std::vector<Eigen::Vector3f> vertices;
  std::vector<Eigen::Vector3f> normals;
  std::vector<std::array<int, 3>> faces;

  size_t vertex_count() const { return vertices.size(); }
  size_t face_count() const { return faces.size(); }
};

// Marching cubes over the zero level set, restricted to cells whose eight
// corners were all observed. Vertices interpolate the tsdf along cell
// edges; normals come from central-difference tsdf gradients.
TriangleMesh extract_mesh(const TsdfVolume& vol);

// Per-point labels with the two strongest votes, parallel arrays.
struct LabeledCloud {
  std::vector<Eigen::Vector3f> points;
  std::vector<Eigen::Vector3f> normals;
  std::vector<uint16_t> label1;
  std::vector<uint16_t> count1;
  std::vector<uint16_t> label2;
  std::vector<uint16_t> count2;
  std::string space;

  size_t size() const { return points.size(); }
  void resize(size_t n) {
    points.resize(n);
    normals.resize(n);
    label1.resize(n, 0);
    count1.resize(n, 0);
    label2.resize(n, 0);
    count2.resize(n, 0);
  }
};

LabeledCloud cloud_from_mesh(const TriangleMesh& mesh, const std::string& space = "");

// One output point per occupied voxel: centroid position, normalized mean
// normal (falling back to the first member when normals cancel), majority
// label with ties to the smaller id. Output is independent of input order.
LabeledCloud downsample(const LabeledCloud& cloud, double voxel);

}  // namespace semfuse::fusion
