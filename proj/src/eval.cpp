#include "semfuse/eval.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace semfuse::eval {

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.n_ != n_) throw std::runtime_error("confusion: cannot merge different sizes");
  for (size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

uint64_t ConfusionMatrix::total() const {
  uint64_t t = 0;
  for (const uint64_t c : counts_) t += c;
  return t;
}

uint64_t ConfusionMatrix::row_sum(LabelId gt) const {
  uint64_t t = 0;
  for (int p = 0; p < n_; ++p) t += at(gt, static_cast<LabelId>(p));
  return t;
}

uint64_t ConfusionMatrix::col_sum(LabelId pred) const {
  uint64_t t = 0;
  for (int g = 1; g < n_; ++g) t += at(static_cast<LabelId>(g), pred);
  return t;
}

namespace {

void check_inputs(std::span<const LabelId> gt, std::span<const LabelId> pred, int n_classes) {
  if (gt.size() != pred.size()) throw std::runtime_error("confusion: length mismatch");
  if (n_classes <= 0) throw std::runtime_error("confusion: class count must be positive");
  for (const LabelId v : gt)
    if (v >= n_classes) throw std::runtime_error("confusion: gt id out of range");
  for (const LabelId v : pred)
    if (v >= n_classes) throw std::runtime_error("confusion: pred id out of range");
}

}  // namespace

ConfusionMatrix confusion_serial(std::span<const LabelId> gt, std::span<const LabelId> pred,
                                 int n_classes) {
  check_inputs(gt, pred, n_classes);
  ConfusionMatrix cm(n_classes);
  for (size_t i = 0; i < gt.size(); ++i) cm.add(gt[i], pred[i]);
  return cm;
}

ConfusionMatrix confusion(std::span<const LabelId> gt, std::span<const LabelId> pred,
                          int n_classes) {
  check_inputs(gt, pred, n_classes);
  ConfusionMatrix cm(n_classes);
#ifdef _OPENMP
#pragma omp parallel
  {
    ConfusionMatrix local(n_classes);
    const int64_t n = static_cast<int64_t>(gt.size());
#pragma omp for schedule(static)
    for (int64_t i = 0; i < n; ++i) local.add(gt[static_cast<size_t>(i)], pred[static_cast<size_t>(i)]);
#pragma omp critical
    cm.merge(local);
  }
#else
  for (size_t i = 0; i < gt.size(); ++i) cm.add(gt[i], pred[i]);
#endif
  return cm;
}

namespace {

void require_nonempty(const ConfusionMatrix& cm) {
  if (cm.n() == 0 || cm.total() == 0) throw std::runtime_error("metrics: no evaluated elements");
}

struct ClassStats {
  uint64_t tp = 0, row = 0, col = 0;
  bool present() const { return row + col > 0; }
  double iou() const {
    const uint64_t denom = row + col - tp;
    return denom == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(denom);
  }
};

ClassStats stats_for(const ConfusionMatrix& cm, LabelId c) {
  ClassStats s;
  s.tp = cm.at(c, c);
  s.row = cm.row_sum(c);
  s.col = cm.col_sum(c);
  return s;
}

}  // namespace

std::map<LabelId, double> per_class_iou(const ConfusionMatrix& cm) {
  require_nonempty(cm);
  std::map<LabelId, double> out;
  for (int c = 1; c < cm.n(); ++c) {
    const ClassStats s = stats_for(cm, static_cast<LabelId>(c));
    if (s.present()) out[static_cast<LabelId>(c)] = s.iou();
  }
  return out;
}

double miou(const ConfusionMatrix& cm) {
  const auto ious = per_class_iou(cm);
  if (ious.empty()) throw std::runtime_error("metrics: no classes present");
  double sum = 0;
  for (const auto& [id, v] : ious) sum += v;
  return sum / static_cast<double>(ious.size());
}

double macc(const ConfusionMatrix& cm) {
  require_nonempty(cm);
  double sum = 0;
  int n_present = 0;
  for (int c = 1; c < cm.n(); ++c) {
    const uint64_t row = cm.row_sum(static_cast<LabelId>(c));
    if (row == 0) continue;
    sum += static_cast<double>(cm.at(static_cast<LabelId>(c), static_cast<LabelId>(c))) /
           static_cast<double>(row);
    ++n_present;
  }
  if (n_present == 0) throw std::runtime_error("metrics: no classes present");
  return sum / n_present;
}

double tacc(const ConfusionMatrix& cm) {
  require_nonempty(cm);
  uint64_t trace = 0;
  for (int c = 1; c < cm.n(); ++c)
    trace += cm.at(static_cast<LabelId>(c), static_cast<LabelId>(c));
  return static_cast<double>(trace) / static_cast<double>(cm.total());
}

ClassGroups load_class_groups(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("groups: cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("groups: empty file " + path.string());

  ClassGroups groups;
  std::set<LabelId> assigned;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    std::istringstream ss(line);
    std::string group, id_str;
    if (!std::getline(ss, group, ',') || !std::getline(ss, id_str))
      throw std::runtime_error("groups: malformed line " + std::to_string(lineno));
    if (!id_str.empty() && id_str.back() == '\r') id_str.pop_back();
    const auto id = static_cast<LabelId>(std::stoul(id_str));
    if (!assigned.insert(id).second)
      throw std::runtime_error("groups: id " + std::to_string(id) + " assigned twice");
    groups.groups[group].insert(id);
  }
  return groups;
}

std::map<std::string, double> group_summary(const ConfusionMatrix& cm, const ClassGroups& groups) {
  require_nonempty(cm);
  std::map<std::string, double> out;
  for (const auto& [name, ids] : groups.groups) {
    double sum = 0;
    int n_present = 0;
    for (const LabelId id : ids) {
      if (id == 0 || id >= cm.n()) continue;
      if (cm.row_sum(id) == 0) continue;  // group membership counts gt presence
      sum += stats_for(cm, id).iou();
      ++n_present;
    }
    if (n_present > 0) out[name] = sum / n_present;
  }
  return out;
}

Metrics compute_metrics(const ConfusionMatrix& cm, const ClassGroups* groups) {
  Metrics m;
  m.per_class_iou = per_class_iou(cm);
  m.miou = miou(cm);
  m.macc = macc(cm);
  m.tacc = tacc(cm);
  if (groups) m.groups = group_summary(cm, *groups);
  return m;
}

Metrics evaluate_projected(std::span<const LabelId> gt, std::span<const LabelId> pred,
                           const labels::LabelSpace& target_space, const labels::MappingTable& m,
                           int k, std::map<LabelId, uint64_t> class_frequencies) {
  if (gt.size() != pred.size()) throw std::runtime_error("evaluate_projected: length mismatch");
  if (class_frequencies.empty())
    for (const LabelId g : gt)
      if (g != 0) ++class_frequencies[g];

  const labels::MappingTable restricted = labels::project_topk(target_space, m, k, class_frequencies);
  std::vector<LabelId> projected(pred.size());
  for (size_t i = 0; i < pred.size(); ++i) projected[i] = restricted.map_id(pred[i]);

  const ConfusionMatrix cm = confusion(gt, projected, target_space.id_bound());
  return compute_metrics(cm);
}

}  // namespace semfuse::eval
