#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "semfuse/labelspace.hpp"

namespace semfuse::eval {

using labels::LabelId;

// Row = ground truth, column = prediction. Elements with gt id 0 are never
// accumulated; pred id 0 against nonzero gt lands in column 0, which acts
// as the miss column inside the gt row's off-diagonal mass.
class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(int n) : n_(n), counts_(static_cast<size_t>(n) * n, 0) {}

  int n() const { return n_; }
  uint64_t at(LabelId gt, LabelId pred) const {
    return counts_[static_cast<size_t>(gt) * n_ + pred];
  }
  void add(LabelId gt, LabelId pred, uint64_t count = 1) {
    if (gt == 0) return;
    counts_[static_cast<size_t>(gt) * n_ + pred] += count;
  }
  void merge(const ConfusionMatrix& other);

  uint64_t total() const;
  uint64_t row_sum(LabelId gt) const;
  uint64_t col_sum(LabelId pred) const;  // rows with gt >= 1 only, by construction

 private:
  int n_ = 0;
  std::vector<uint64_t> counts_;
};

// n_classes is the id bound (largest id + 1) of the shared space. Parallel
// accumulation merges per-worker partial matrices; results match the serial
// version exactly.
ConfusionMatrix confusion(std::span<const LabelId> gt, std::span<const LabelId> pred,
                          int n_classes);
ConfusionMatrix confusion_serial(std::span<const LabelId> gt, std::span<const LabelId> pred,
                                 int n_classes);

// IoU_c = TP/(TP+FP+FN). Classes with zero gt+pred mass are excluded from
// the means; mAcc averages TP/gt-count over classes present in gt.
double miou(const ConfusionMatrix& cm);
double macc(const ConfusionMatrix& cm);
double tacc(const ConfusionMatrix& cm);
std::map<LabelId, double> per_class_iou(const ConfusionMatrix& cm);

// Named disjoint class groups (e.g. head/common/tail).
struct ClassGroups {
  std::map<std::string, std::set<LabelId>> groups;
};

// CSV with header `group,id`.
ClassGroups load_class_groups(const std::filesystem::path& path);

// Per-group mean IoU over the group's classes present in gt; groups with no
// present class are omitted from the result.
std::map<std::string, double> group_summary(const ConfusionMatrix& cm, const ClassGroups& groups);

struct Metrics {
  std::map<LabelId, double> per_class_iou;
  double miou = 0;
  double macc = 0;
  double tacc = 0;
  std::map<std::string, double> groups;
};

Metrics compute_metrics(const ConfusionMatrix& cm, const ClassGroups* groups = nullptr);

// Zero-shot style evaluation: predictions live in a different space and are
// projected into the gt space through `m` restricted to the k most frequent
// target classes. Empty frequencies are filled from gt occurrence counts.
Metrics evaluate_projected(std::span<const LabelId> gt, std::span<const LabelId> pred,
                           const labels::LabelSpace& target_space, const labels::MappingTable& m,
                           int k, std::map<LabelId, uint64_t> class_frequencies = {});

}  // namespace semfuse::eval
