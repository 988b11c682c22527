#include "semfuse/consensus.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "semfuse/image_io.hpp"

namespace semfuse::consensus {

using labels::LabelId;
using labels::LabelMap;

namespace {

struct SourceView {
  const LabelMap* map;
  double weight;
};

std::vector<SourceView> checked_sources(
    const std::vector<std::pair<std::string, LabelMap>>& predictions, const VoteConfig& cfg) {
  if (predictions.empty()) throw std::runtime_error("aggregate: no predictions");

  bool any_positive = false;
  for (const auto& [name, w] : cfg.weights) {
    if (w < 0) throw std::runtime_error("aggregate: negative weight for source " + name);
    if (w > 0) any_positive = true;
  }
  if (!any_positive) throw std::runtime_error("aggregate: at least one weight must be positive");

  // Canonical source order makes the weighted sums independent of the
  // order predictions were handed in.
  std::vector<size_t> order(predictions.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return predictions[a].first < predictions[b].first;
  });
  for (size_t i = 1; i < order.size(); ++i)
    if (predictions[order[i - 1]].first == predictions[order[i]].first)
      throw std::runtime_error("aggregate: duplicate source " + predictions[order[i]].first);

  const LabelMap& first = predictions[order[0]].second;
  std::vector<SourceView> views;
  views.reserve(order.size());
  for (size_t idx : order) {
    const auto& [name, map] = predictions[idx];
    const auto wit = cfg.weights.find(name);
    if (wit == cfg.weights.end()) throw std::runtime_error("aggregate: unknown source " + name);
    if (!map.grid.same_dims(first.grid))
      throw std::runtime_error("aggregate: dimension mismatch for source " + name);
    if (map.space != first.space)
      throw std::runtime_error("aggregate: space mismatch for source " + name);
    views.push_back({&map, wit->second});
  }
  return views;
}

constexpr size_t kMaxSources = 32;

ConsensusMap aggregate_impl(const std::vector<std::pair<std::string, LabelMap>>& predictions,
                            const VoteConfig& cfg, bool parallel) {
  const std::vector<SourceView> sources = checked_sources(predictions, cfg);
  if (sources.size() > kMaxSources) throw std::runtime_error("aggregate: too many sources");

  const LabelMap& first = *sources.front().map;
  ConsensusMap out;
  out.width = first.grid.width;
  out.height = first.grid.height;
  out.space = first.space;
  const size_t n = first.grid.size();
  out.top1.assign(n, 0);
  out.top2.assign(n, 0);
  out.votes1.assign(n, 0.0);
  out.votes2.assign(n, 0.0);

  const int64_t pixels = static_cast<int64_t>(n);
#pragma omp parallel for schedule(static) if (parallel)
  for (int64_t p = 0; p < pixels; ++p) {
    LabelId ids[kMaxSources];
    double sums[kMaxSources];
    size_t distinct = 0;
    for (const SourceView& s : sources) {
      const LabelId l = s.map->grid.data[static_cast<size_t>(p)];
      if (l == 0) continue;  // abstention
      size_t slot = 0;
      while (slot < distinct && ids[slot] != l) ++slot;
      if (slot == distinct) {
        ids[distinct] = l;
        sums[distinct] = 0.0;
        ++distinct;
      }
      sums[slot] += s.weight;
    }

    LabelId l1 = 0, l2 = 0;
    double v1 = 0, v2 = 0;
    for (size_t s = 0; s < distinct; ++s) {
      const bool beats1 = sums[s] > v1 || (sums[s] == v1 && l1 != 0 && ids[s] < l1);
      if (beats1) {
        l2 = l1;
        v2 = v1;
        l1 = ids[s];
        v1 = sums[s];
      } else if (sums[s] > v2 || (sums[s] == v2 && l2 != 0 && ids[s] < l2)) {
        l2 = ids[s];
        v2 = sums[s];
      }
    }
    if (v1 < cfg.min_votes) {
      // Below-threshold winners leave the pixel fully unlabeled.
      l1 = l2 = 0;
      v1 = v2 = 0;
    }
    out.top1[static_cast<size_t>(p)] = l1;
    out.top2[static_cast<size_t>(p)] = l2;
    out.votes1[static_cast<size_t>(p)] = v1;
    out.votes2[static_cast<size_t>(p)] = v2;
  }
  return out;
}

}  // namespace

ConsensusMap aggregate(const std::vector<std::pair<std::string, LabelMap>>& predictions,
                       const VoteConfig& cfg) {
  return aggregate_impl(predictions, cfg, true);
}

ConsensusMap aggregate_serial(const std::vector<std::pair<std::string, LabelMap>>& predictions,
                              const VoteConfig& cfg) {
  return aggregate_impl(predictions, cfg, false);
}

LabelMap merge_augmented(const std::vector<LabelMap>& variants) {
  if (variants.empty()) throw std::runtime_error("merge_augmented: no variants");
  LabelMap out = variants.front();
  for (size_t v = 1; v < variants.size(); ++v) {
    if (!variants[v].grid.same_dims(out.grid))
      throw std::runtime_error("merge_augmented: dimension mismatch");
    if (variants[v].space != out.space)
      throw std::runtime_error("merge_augmented: space mismatch");
    for (size_t i = 0; i < out.grid.size(); ++i)
      if (out.grid.data[i] != variants[v].grid.data[i]) out.grid.data[i] = 0;
  }
  return out;
}

namespace {
Image<uint16_t> scaled_counts(const std::vector<double>& votes, int w, int h) {
  Image<uint16_t> img(w, h);
  for (size_t i = 0; i < votes.size(); ++i) {
    const double v = std::round(votes[i] * 100.0);
    img.data[i] = static_cast<uint16_t>(std::clamp(v, 0.0, 65535.0));
  }
  return img;
}
}  // namespace

void write_consensus(const std::filesystem::path& dir, int frame_index, const ConsensusMap& cm) {
  using labels::frame_filename;
  std::filesystem::create_directories(dir);
  Image<uint16_t> ids(cm.width, cm.height);

  std::copy(cm.top1.begin(), cm.top1.end(), ids.data.begin());
  write_png16(dir / frame_filename(frame_index), ids);
  std::copy(cm.top2.begin(), cm.top2.end(), ids.data.begin());
  write_png16(dir / (frame_filename(frame_index, "") + "_top2.png"), ids);

  write_png16(dir / (frame_filename(frame_index, "") + "_counts.png"),
              scaled_counts(cm.votes1, cm.width, cm.height));
  write_png16(dir / (frame_filename(frame_index, "") + "_top2_counts.png"),
              scaled_counts(cm.votes2, cm.width, cm.height));
}

ConsensusMap read_consensus(const std::filesystem::path& dir, int frame_index,
                            const std::string& space) {
  using labels::frame_filename;
  const Image<uint16_t> t1 = read_png16(dir / frame_filename(frame_index));
  const Image<uint16_t> t2 = read_png16(dir / (frame_filename(frame_index, "") + "_top2.png"));
  const Image<uint16_t> c1 = read_png16(dir / (frame_filename(frame_index, "") + "_counts.png"));
  const Image<uint16_t> c2 =
      read_png16(dir / (frame_filename(frame_index, "") + "_top2_counts.png"));

  ConsensusMap cm;
  cm.width = t1.width;
  cm.height = t1.height;
  cm.space = space;
  cm.top1.assign(t1.data.begin(), t1.data.end());
  cm.top2.assign(t2.data.begin(), t2.data.end());
  cm.votes1.resize(c1.size());
  cm.votes2.resize(c2.size());
  for (size_t i = 0; i < c1.size(); ++i) cm.votes1[i] = c1.data[i] / 100.0;
  for (size_t i = 0; i < c2.size(); ++i) cm.votes2[i] = c2.data[i] / 100.0;
  return cm;
}

labels::LabelMap read_consensus_top1(const std::filesystem::path& dir, int frame_index,
                                     const std::string& space) {
  return labels::read_label_map(dir / labels::frame_filename(frame_index), space);
}

}  // namespace semfuse::consensus
