#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "semfuse/labelspace.hpp"

namespace semfuse::consensus {

// Per-pixel top-2 weighted vote results in a single label space.
struct ConsensusMap {
  int width = 0;
  int height = 0;
  std::vector<labels::LabelId> top1;
  std::vector<labels::LabelId> top2;
  std::vector<double> votes1;
  std::vector<double> votes2;
  std::string space;

  size_t pixel_count() const { return top1.size(); }
};

struct VoteConfig {
  // Prediction-source name -> non-negative weight.
  std::map<std::string, double> weights;
  double min_votes = 2.0;
};

// Weighted per-pixel vote across sources. Id 0 never accumulates votes
// (abstention); ties break to the smaller id; pixels whose winning weight
// falls below min_votes come out fully unlabeled. Input order does not
// matter: sources are processed in name order.
ConsensusMap aggregate(const std::vector<std::pair<std::string, labels::LabelMap>>& predictions,
                       const VoteConfig& cfg);
ConsensusMap aggregate_serial(
    const std::vector<std::pair<std::string, labels::LabelMap>>& predictions,
    const VoteConfig& cfg);

// Reduces test-time-augmentation variants of one source to a single map by
// strict unanimity: any disagreement abstains. Callers un-flip mirrored
// variants first.
labels::LabelMap merge_augmented(const std::vector<labels::LabelMap>& variants);

// On-disk layout per frame: %06d.png (top1 ids), %06d_top2.png,
// %06d_counts.png / %06d_top2_counts.png (weights scaled by 100, rounded).
void write_consensus(const std::filesystem::path& dir, int frame_index, const ConsensusMap& cm);
ConsensusMap read_consensus(const std::filesystem::path& dir, int frame_index,
                            const std::string& space);
labels::LabelMap read_consensus_top1(const std::filesystem::path& dir, int frame_index,
                                     const std::string& space);

}  // namespace semfuse::consensus
