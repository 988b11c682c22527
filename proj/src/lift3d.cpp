#include "semfuse/lift3d.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace semfuse::lift {

using labels::LabelId;

std::optional<std::pair<int, int>> visible(const Eigen::Vector3d& point, const Pose& pose,
                                           const Image<float>& depth,
                                           const Intrinsics& intrinsics, double tol,
                                           int boundary_margin) {
  const Eigen::Vector3d cam = pose.to_camera(point);
  if (cam.z() <= 0.0) return std::nullopt;
  const Eigen::Vector2d px = intrinsics.project(cam);
  const int ix = static_cast<int>(std::floor(px.x()));
  const int iy = static_cast<int>(std::floor(px.y()));
  if (ix < boundary_margin || iy < boundary_margin || ix >= intrinsics.width - boundary_margin ||
      iy >= intrinsics.height - boundary_margin)
    return std::nullopt;
  const float d = depth.at(ix, iy);
  if (d <= 0.f) return std::nullopt;
  if (std::fabs(static_cast<double>(d) - cam.z()) > tol) return std::nullopt;
  return std::make_pair(ix, iy);
}

namespace {

// Compact per-point tally; points rarely see more than a handful of
// distinct labels.
struct VoteSet {
  std::vector<std::pair<LabelId, uint32_t>> entries;

  void add(LabelId id) {
    for (auto& [l, c] : entries) {
      if (l == id) {
        ++c;
        return;
      }
    }
    entries.emplace_back(id, 1);
  }

  uint32_t total() const {
    uint32_t t = 0;
    for (const auto& [l, c] : entries) t += c;
    return t;
  }

  // Winner and runner-up by count, ties to the smaller id.
  void top2(LabelId& l1, uint32_t& c1, LabelId& l2, uint32_t& c2) const {
    l1 = l2 = 0;
    c1 = c2 = 0;
    for (const auto& [label, count] : entries) {
      if (count > c1 || (count == c1 && c1 > 0 && label < l1)) {
        l2 = l1;
        c2 = c1;
        l1 = label;
        c1 = count;
      } else if (count > c2 || (count == c2 && c2 > 0 && label < l2)) {
        l2 = label;
        c2 = count;
      }
    }
  }
};

fusion::LabeledCloud finalize(const fusion::LabeledCloud& geometry,
                              const std::vector<VoteSet>& votes, const LiftConfig& cfg,
                              std::vector<uint32_t>* total_votes) {
  fusion::LabeledCloud out;
  out.space = geometry.space;
  out.points = geometry.points;
  out.normals = geometry.normals;
  const size_t n = geometry.size();
  out.label1.assign(n, 0);
  out.count1.assign(n, 0);
  out.label2.assign(n, 0);
  out.count2.assign(n, 0);
  if (total_votes) total_votes->assign(n, 0);

  for (size_t i = 0; i < n; ++i) {
    const uint32_t total = votes[i].total();
    if (total_votes) (*total_votes)[i] = total;
    if (total < static_cast<uint32_t>(std::max(0, cfg.min_frame_votes))) continue;
    LabelId l1, l2;
    uint32_t c1, c2;
    votes[i].top2(l1, c1, l2, c2);
    out.label1[i] = l1;
    out.count1[i] = static_cast<uint16_t>(std::min<uint32_t>(c1, 0xffff));
    out.label2[i] = l2;
    out.count2[i] = static_cast<uint16_t>(std::min<uint32_t>(c2, 0xffff));
  }
  return out;
}

void vote_frame(const fusion::LabeledCloud& geometry, const LiftFrame& frame,
                const Intrinsics& intrinsics, const LiftConfig& cfg, std::vector<VoteSet>& votes,
                bool parallel) {
  const int64_t n = static_cast<int64_t>(geometry.size());
#pragma omp parallel for schedule(static) if (parallel)
  for (int64_t i = 0; i < n; ++i) {
    const Eigen::Vector3d p = geometry.points[static_cast<size_t>(i)].cast<double>();
    const auto px =
        visible(p, frame.pose, frame.depth, intrinsics, cfg.occlusion_tol, cfg.boundary_margin);
    if (!px) continue;
    const LabelId label = frame.labels.grid.at(px->first, px->second);
    if (label == 0) continue;
    votes[static_cast<size_t>(i)].add(label);
  }
}

fusion::LabeledCloud lift_impl(const fusion::LabeledCloud& geometry,
                               std::span<const LiftFrame> frames, const Intrinsics& intrinsics,
                               const LiftConfig& cfg, std::vector<uint32_t>* total_votes,
                               bool parallel) {
  if (frames.empty()) throw std::runtime_error("lift: no frames");
  if (cfg.occlusion_tol <= 0) throw std::runtime_error("lift: occlusion_tol must be positive");
  for (const auto& f : frames)
    if (f.labels.space != frames.front().labels.space)
      throw std::runtime_error("lift: label space mismatch across frames");

  std::vector<VoteSet> votes(geometry.size());
  const int stride = std::max(1, cfg.frame_stride);
  for (size_t fi = 0; fi < frames.size(); fi += static_cast<size_t>(stride))
    vote_frame(geometry, frames[fi], intrinsics, cfg, votes, parallel);
  return finalize(geometry, votes, cfg, total_votes);
}

}  // namespace

fusion::LabeledCloud lift(const fusion::LabeledCloud& geometry, std::span<const LiftFrame> frames,
                          const Intrinsics& intrinsics, const LiftConfig& cfg,
                          std::vector<uint32_t>* total_votes) {
  return lift_impl(geometry, frames, intrinsics, cfg, total_votes, true);
}

fusion::LabeledCloud lift_serial(const fusion::LabeledCloud& geometry,
                                 std::span<const LiftFrame> frames, const Intrinsics& intrinsics,
                                 const LiftConfig& cfg, std::vector<uint32_t>* total_votes) {
  return lift_impl(geometry, frames, intrinsics, cfg, total_votes, false);
}

fusion::LabeledCloud lift_streamed(const fusion::LabeledCloud& geometry, int frame_count,
                                   const std::function<LiftFrame(int)>& load_frame,
                                   const Intrinsics& intrinsics, const LiftConfig& cfg,
                                   std::vector<uint32_t>* total_votes) {
  if (frame_count <= 0) throw std::runtime_error("lift: no frames");
  if (cfg.occlusion_tol <= 0) throw std::runtime_error("lift: occlusion_tol must be positive");

  std::vector<VoteSet> votes(geometry.size());
  const int stride = std::max(1, cfg.frame_stride);
  std::string space;
  for (int fi = 0; fi < frame_count; fi += stride) {
    const LiftFrame frame = load_frame(fi);
    if (space.empty())
      space = frame.labels.space;
    else if (frame.labels.space != space)
      throw std::runtime_error("lift: label space mismatch across frames");
    vote_frame(geometry, frame, intrinsics, cfg, votes, true);
  }
  return finalize(geometry, votes, cfg, total_votes);
}

LiftStats compute_lift_stats(const fusion::LabeledCloud& cloud,
                             std::span<const uint32_t> total_votes) {
  LiftStats stats;
  stats.point_count = cloud.size();
  uint64_t unlabeled = 0;
  for (size_t i = 0; i < cloud.size(); ++i) {
    if (cloud.label1[i] == 0) ++unlabeled;
    ++stats.votes_histogram[i < total_votes.size() ? total_votes[i] : 0];
  }
  stats.unlabeled_fraction =
      cloud.size() == 0 ? 0.0 : static_cast<double>(unlabeled) / static_cast<double>(cloud.size());
  return stats;
}

void write_lift_stats(const std::filesystem::path& path, const LiftStats& stats) {
  nlohmann::json j;
  j["point_count"] = stats.point_count;
  j["unlabeled_fraction"] = stats.unlabeled_fraction;
  nlohmann::json hist = nlohmann::json::object();
  for (const auto& [votes, count] : stats.votes_histogram) hist[std::to_string(votes)] = count;
  j["votes_histogram"] = hist;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("lift: cannot write " + path.string());
  out << j.dump(2) << "\n";
}

}  // namespace semfuse::lift
