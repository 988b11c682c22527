// Compares the OpenMP kernels against their serial reference
// implementations on synthetic workloads and reports speedups. The outputs
// are also checked for equality, so a silent divergence shows up here too.

#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "semfuse/consensus.hpp"
#include "semfuse/eval.hpp"
#include "semfuse/fusion3d.hpp"
#include "semfuse/lift3d.hpp"
#include "semfuse/synthetic.hpp"

using namespace semfuse;

namespace {

double time_call(const std::function<void()>& fn, int repeats = 3) {
  double best = 1e300;
  for (int i = 0; i < repeats; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
  }
  return best;
}

void report(const char* name, double serial_s, double parallel_s, bool equal) {
  std::printf("%-22s serial %8.3f ms   parallel %8.3f ms   speedup %.2fx   %s\n", name,
              serial_s * 1e3, parallel_s * 1e3, serial_s / parallel_s,
              equal ? "outputs equal" : "OUTPUTS DIFFER");
}

Intrinsics bench_intrinsics(int w, int h) {
  Intrinsics k;
  k.fx = k.fy = 0.8 * w;
  k.cx = w / 2.0;
  k.cy = h / 2.0;
  k.width = w;
  k.height = h;
  return k;
}

void bench_tsdf() {
  const Eigen::Vector3d center(0, 0, 1.0);
  const Intrinsics k = bench_intrinsics(160, 120);
  const auto poses = synth::orbit_trajectory(center, 1.6, 1.0, 8);
  const synth::World world = synth::make_room_world();

  std::vector<Image<float>> depths;
  for (const auto& pose : poses) depths.push_back(synth::render_depth(world, pose, k));

  fusion::TsdfConfig cfg;
  cfg.voxel_size = 0.02;
  cfg.truncation = 0.1;
  const auto make_volume = [&] {
    return fusion::TsdfVolume(Eigen::Vector3d(-2.2, -2.2, -0.1),
                              Eigen::Vector3i(220, 220, 140), cfg);
  };

  fusion::TsdfVolume vs = make_volume();
  fusion::TsdfVolume vp = make_volume();
  const double serial_s = time_call([&] {
    vs = make_volume();
    for (size_t i = 0; i < poses.size(); ++i)
      fusion::integrate_frame_serial(vs, depths[i], poses[i], k);
  }, 2);
  const double parallel_s = time_call([&] {
    vp = make_volume();
    for (size_t i = 0; i < poses.size(); ++i) fusion::integrate_frame(vp, depths[i], poses[i], k);
  }, 2);

  bool equal = true;
  for (int i = 0; i < 220 && equal; i += 2)
    for (int j = 0; j < 220 && equal; j += 2)
      for (int kk = 0; kk < 140; ++kk)
        if (vs.tsdf_at(i, j, kk) != vp.tsdf_at(i, j, kk) ||
            vs.weight_at(i, j, kk) != vp.weight_at(i, j, kk)) {
          equal = false;
          break;
        }
  report("tsdf integrate", serial_s, parallel_s, equal);
}

void bench_consensus() {
  std::mt19937 rng(1);
  std::uniform_int_distribution<int> label(0, 30);
  const int w = 640, h = 480;
  std::vector<std::pair<std::string, labels::LabelMap>> preds;
  consensus::VoteConfig cfg;
  for (int s = 0; s < 6; ++s) {
    labels::LabelMap lm;
    lm.space = "bench";
    lm.grid = Image<uint16_t>(w, h);
    for (auto& v : lm.grid.data) v = static_cast<uint16_t>(label(rng));
    const std::string name = "model" + std::to_string(s);
    preds.emplace_back(name, std::move(lm));
    cfg.weights[name] = 1.0;
  }

  consensus::ConsensusMap a, b;
  const double serial_s = time_call([&] { a = consensus::aggregate_serial(preds, cfg); });
  const double parallel_s = time_call([&] { b = consensus::aggregate(preds, cfg); });
  const bool equal = a.top1 == b.top1 && a.top2 == b.top2 && a.votes1 == b.votes1;
  report("consensus aggregate", serial_s, parallel_s, equal);
}

void bench_lift() {
  const synth::World world = synth::make_room_world();
  const Intrinsics k = bench_intrinsics(320, 240);
  const auto poses =
      synth::orbit_trajectory(Eigen::Vector3d(0.1, 0.1, 1.0), 1.2, 1.5, 12);

  std::vector<lift::LiftFrame> frames;
  for (const auto& pose : poses) {
    lift::LiftFrame f;
    f.pose = pose;
    f.depth = synth::render_depth(world, pose, k);
    f.labels = synth::render_labels(world, pose, k, "bench");
    frames.push_back(std::move(f));
  }
  const fusion::LabeledCloud points = synth::sample_surface_points(world, 0.05, 0.05, "bench");

  lift::LiftConfig cfg;
  fusion::LabeledCloud a, b;
  const double serial_s = time_call([&] { a = lift::lift_serial(points, frames, k, cfg); });
  const double parallel_s = time_call([&] { b = lift::lift(points, frames, k, cfg); });
  const bool equal = a.label1 == b.label1 && a.count1 == b.count1;
  report("point lifting", serial_s, parallel_s, equal);
}

void bench_confusion() {
  std::mt19937 rng(2);
  std::uniform_int_distribution<int> label(0, 185);
  const size_t n = 20'000'000;
  std::vector<labels::LabelId> gt(n), pred(n);
  for (auto& v : gt) v = static_cast<uint16_t>(label(rng));
  for (auto& v : pred) v = static_cast<uint16_t>(label(rng));

  eval::ConfusionMatrix a, b;
  const double serial_s = time_call([&] { a = eval::confusion_serial(gt, pred, 186); });
  const double parallel_s = time_call([&] { b = eval::confusion(gt, pred, 186); });
  bool equal = a.total() == b.total();
  for (int g = 1; g < 186 && equal; ++g)
    for (int p = 0; p < 186; ++p)
      if (a.at(static_cast<uint16_t>(g), static_cast<uint16_t>(p)) !=
          b.at(static_cast<uint16_t>(g), static_cast<uint16_t>(p))) {
        equal = false;
        break;
      }
  report("confusion matrix", serial_s, parallel_s, equal);
}

}  // namespace

int main() {
#ifdef _OPENMP
  std::printf("OpenMP threads: %d\n", omp_get_max_threads());
#else
  std::printf("built without OpenMP\n");
#endif
  bench_tsdf();
  bench_consensus();
  bench_lift();
  bench_confusion();
  return 0;
}
