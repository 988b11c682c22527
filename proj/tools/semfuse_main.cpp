#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <nlohmann/json.hpp>

#include "semfuse/consensus.hpp"
#include "semfuse/eval.hpp"
#include "semfuse/fusion3d.hpp"
#include "semfuse/image_io.hpp"
#include "semfuse/ingest.hpp"
#include "semfuse/labelspace.hpp"
#include "semfuse/lift3d.hpp"
#include "semfuse/log.hpp"
#include "semfuse/orchestrator.hpp"
#include "semfuse/ply_io.hpp"
#include "semfuse/render.hpp"

namespace fs = std::filesystem;
using namespace semfuse;

namespace {

struct RunConfig {
  fs::path scene_dir;
  fs::path config_path;
  double voxel = 0.008;
  double trunc = 0.04;
  double downsample = 0.02;
  double occlusion_tol = 0.05;
  double min_votes = 2.0;
  fs::path colormap_path;
  int max_parallel = 0;  // 0 = take the pipeline config value
};

void require_exists(const fs::path& path, const std::string& what) {
  if (!fs::exists(path))
    throw std::runtime_error("missing " + what + ": " + path.string());
}

labels::LabelSpace scene_label_space(const fs::path& scene_dir) {
  const fs::path path = scene_dir / "labelspace.csv";
  require_exists(path, "label space CSV");
  return labels::load_label_space(path);
}

sched::PipelineConfig pipeline_for(const RunConfig& cfg) {
  if (!cfg.config_path.empty()) return sched::load_pipeline_config(cfg.config_path);
  if (fs::exists(cfg.scene_dir / "pipeline.json"))
    return sched::load_pipeline_config(cfg.scene_dir / "pipeline.json");
  return sched::default_pipeline_config();
}

int scene_frame_count(const fs::path& scene_dir) {
  if (fs::exists(scene_dir / "synced" / "timestamps.json")) {
    return ingest::open_synced(scene_dir / "synced").frame_count();
  }
  if (fs::exists(scene_dir / "timestamps.json")) {
    std::ifstream in(scene_dir / "timestamps.json");
    const nlohmann::json j = nlohmann::json::parse(in);
    return static_cast<int>(j.at("color").size());
  }
  return 1;
}

// ---- pipeline stages -------------------------------------------------------

int stage_sync(const RunConfig& cfg) {
  require_exists(cfg.scene_dir / "timestamps.json", "raw recording timestamps.json");
  const ingest::RawRecording raw = ingest::load_raw_recording(cfg.scene_dir);
  ingest::SyncStats stats;
  const ingest::Scene scene =
      ingest::synchronize(raw, cfg.scene_dir.filename().string(), &stats);
  ingest::save_synced(scene, cfg.scene_dir / "synced", &stats);
  log_info("sync: " + std::to_string(scene.frames.size()) + " frames, max depth gap " +
           std::to_string(stats.max_depth_gap_s) + " s");
  return 0;
}

int stage_fuse(const RunConfig& cfg) {
  require_exists(cfg.scene_dir / "synced" / "intrinsics.txt", "synced scene (run sync first)");
  const ingest::SyncedSceneView view = ingest::open_synced(cfg.scene_dir / "synced");
  if (view.frame_count() == 0) throw std::runtime_error("fuse: synced scene has no frames");

  fusion::TsdfConfig tsdf_cfg;
  tsdf_cfg.voxel_size = cfg.voxel;
  tsdf_cfg.truncation = cfg.trunc;
  fusion::TsdfVolume vol =
      fusion::TsdfVolume::bounded_by_frusta(view.poses, view.intrinsics, tsdf_cfg);
  log_info("fuse: volume " + std::to_string(vol.dims().x()) + "x" +
           std::to_string(vol.dims().y()) + "x" + std::to_string(vol.dims().z()) +
           (vol.block_sparse() ? " (block-sparse)" : " (dense)"));

  for (int i = 0; i < view.frame_count(); ++i)
    fusion::integrate_frame(vol, view.load_depth(i), view.poses[static_cast<size_t>(i)],
                            view.intrinsics);

  const fusion::TriangleMesh mesh = fusion::extract_mesh(vol);
  fusion::write_mesh_ply(cfg.scene_dir / "mesh.ply", mesh);

  std::string space;
  if (fs::exists(cfg.scene_dir / "labelspace.csv")) space = scene_label_space(cfg.scene_dir).name;
  const fusion::LabeledCloud cloud =
      fusion::downsample(fusion::cloud_from_mesh(mesh, space), cfg.downsample);
  fusion::write_cloud_ply(cfg.scene_dir / "cloud.ply", cloud);
  log_info("fuse: mesh " + std::to_string(mesh.vertex_count()) + " vertices, cloud " +
           std::to_string(cloud.size()) + " points");
  return 0;
}

// Prediction directories under intermediate/, one per source; TTA variants
// use a `<source>_tta<n>` suffix and reduce by unanimity before voting.
std::map<std::string, std::vector<fs::path>> discover_sources(const fs::path& scene_dir) {
  const fs::path root = scene_dir / "intermediate";
  require_exists(root, "prediction directory intermediate/");
  std::map<std::string, std::vector<fs::path>> sources;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (!entry.is_directory()) continue;
    std::string name = entry.path().filename().string();
    const size_t tta = name.find("_tta");
    if (tta != std::string::npos) name = name.substr(0, tta);
    sources[name].push_back(entry.path());
  }
  for (auto& [name, dirs] : sources) std::sort(dirs.begin(), dirs.end());
  if (sources.empty()) throw std::runtime_error("consensus: no prediction sources found");
  return sources;
}

int stage_consensus(const RunConfig& cfg) {
  require_exists(cfg.scene_dir / "synced" / "intrinsics.txt", "synced scene (run sync first)");
  const ingest::SyncedSceneView view = ingest::open_synced(cfg.scene_dir / "synced");
  const labels::LabelSpace space = scene_label_space(cfg.scene_dir);
  const auto sources = discover_sources(cfg.scene_dir);

  const sched::PipelineConfig pipeline = pipeline_for(cfg);
  consensus::VoteConfig vote;
  vote.min_votes = cfg.min_votes;
  for (const auto& [name, dirs] : sources) {
    const auto it = pipeline.source_weights.find(name);
    vote.weights[name] = it == pipeline.source_weights.end() ? 1.0 : it->second;
  }

  const fs::path out_dir = cfg.scene_dir / "consensus";
  for (int i = 0; i < view.frame_count(); ++i) {
    std::vector<std::pair<std::string, labels::LabelMap>> predictions;
    for (const auto& [name, dirs] : sources) {
      std::vector<labels::LabelMap> variants;
      for (const auto& dir : dirs) {
        const fs::path path = dir / labels::frame_filename(i);
        require_exists(path, "prediction " + name + " frame " + std::to_string(i));
        variants.push_back(labels::read_label_map(path, space.name));
      }
      predictions.emplace_back(name, consensus::merge_augmented(variants));
    }
    consensus::write_consensus(out_dir, i, consensus::aggregate(predictions, vote));
  }
  log_info("consensus: " + std::to_string(view.frame_count()) + " frames from " +
           std::to_string(sources.size()) + " sources");
  return 0;
}

int stage_lift(const RunConfig& cfg) {
  require_exists(cfg.scene_dir / "synced" / "intrinsics.txt", "synced scene (run sync first)");
  require_exists(cfg.scene_dir / "cloud.ply", "downsampled cloud (run fuse first)");
  require_exists(cfg.scene_dir / "consensus", "consensus directory (run consensus first)");
  const ingest::SyncedSceneView view = ingest::open_synced(cfg.scene_dir / "synced");
  const labels::LabelSpace space = scene_label_space(cfg.scene_dir);

  const fusion::LabeledCloud cloud =
      fusion::read_cloud_ply(cfg.scene_dir / "cloud.ply", space.name);

  lift::LiftConfig lift_cfg;
  lift_cfg.occlusion_tol = cfg.occlusion_tol;
  const auto loader = [&](int i) {
    lift::LiftFrame f;
    f.pose = view.poses[static_cast<size_t>(i)];
    f.depth = view.load_depth(i);
    f.labels = consensus::read_consensus_top1(cfg.scene_dir / "consensus", i, space.name);
    return f;
  };
  std::vector<uint32_t> votes;
  const fusion::LabeledCloud labeled =
      lift::lift_streamed(cloud, view.frame_count(), loader, view.intrinsics, lift_cfg, &votes);
  fusion::write_cloud_ply(cfg.scene_dir / "labels.ply", labeled);
  lift::write_lift_stats(cfg.scene_dir / "lift_stats.json",
                         lift::compute_lift_stats(labeled, votes));
  return 0;
}

int stage_render(const RunConfig& cfg) {
  const fs::path labels_dir = cfg.scene_dir / "consensus";
  require_exists(labels_dir, "consensus directory (run consensus first)");
  const fs::path cmap_path =
      cfg.colormap_path.empty() ? cfg.scene_dir / "colormap.csv" : cfg.colormap_path;
  require_exists(cmap_path, "colormap CSV");
  const render::Colormap cmap = render::load_colormap(cmap_path);

  const fs::path out_dir = cfg.scene_dir / "render";
  fs::create_directories(out_dir);
  int count = 0;
  for (int i = 0;; ++i) {
    const fs::path src = labels_dir / labels::frame_filename(i);
    if (!fs::exists(src)) break;
    const labels::LabelMap lm = labels::read_label_map(src, "");
    write_png_rgb8(out_dir / labels::frame_filename(i), render::colorize(lm, cmap));
    ++count;
  }
  log_info("render: " + std::to_string(count) + " frames");
  return 0;
}

int stage_postprocess(const RunConfig& cfg) {
  // Collect per-task stats from the state directory and drop temporaries.
  nlohmann::json stats = nlohmann::json::object();
  const fs::path state_dir = cfg.scene_dir / "state";
  if (fs::exists(state_dir)) {
    for (const auto& entry : fs::directory_iterator(state_dir)) {
      if (entry.path().extension() != ".json") continue;
      std::ifstream in(entry.path());
      try {
        const nlohmann::json j = nlohmann::json::parse(in);
        const std::string task = entry.path().stem().string();
        stats[task] = {{"status", j.value("status", "unknown")},
                       {"duration_s", j.value("end", 0.0) - j.value("start", 0.0)},
                       {"exit_code", j.value("exit_code", 0)}};
      } catch (const std::exception&) {
        // Skip partial files; postprocess must not fail the scene.
      }
    }
  }
  std::ofstream out(cfg.scene_dir / "stats.json");
  out << stats.dump(2) << "\n";
  std::error_code ec;
  fs::remove_all(cfg.scene_dir / "tmp", ec);
  return 0;
}

std::map<std::string, sched::StageFn> builtin_stages(const RunConfig& cfg) {
  return {
      {"preprocess",
       [cfg](const sched::StageContext&) {
         if (const int rc = stage_sync(cfg); rc != 0) return rc;
         return stage_fuse(cfg);
       }},
      {"consensus", [cfg](const sched::StageContext&) { return stage_consensus(cfg); }},
      {"lift", [cfg](const sched::StageContext&) { return stage_lift(cfg); }},
      {"render", [cfg](const sched::StageContext&) { return stage_render(cfg); }},
      {"postprocess", [cfg](const sched::StageContext&) { return stage_postprocess(cfg); }},
  };
}

sched::TaskGraph restrict_to_stage(const sched::TaskGraph& graph, const std::string& stage) {
  const int idx = graph.index_of(stage);
  if (idx < 0) throw std::runtime_error("unknown stage: " + stage);
  std::set<int> keep{idx};
  for (const int a : graph.ancestors_of(idx)) keep.insert(a);
  sched::TaskGraph out;
  for (int i = 0; i < static_cast<int>(graph.tasks.size()); ++i)
    if (keep.count(i)) out.tasks.push_back(graph.tasks[static_cast<size_t>(i)]);
  return out;
}

int cmd_run(const RunConfig& cfg, const std::string& stage, const fs::path& emit_scripts_dir) {
  sched::PipelineConfig pipeline = pipeline_for(cfg);
  sched::TaskGraph graph = pipeline.graph;
  if (!stage.empty()) graph = restrict_to_stage(graph, stage);

  if (!emit_scripts_dir.empty()) {
    sched::SceneRef ref;
    ref.id = cfg.scene_dir.filename().string();
    ref.dir = cfg.scene_dir;
    ref.frames = scene_frame_count(cfg.scene_dir);
    sched::emit_batch_scripts(graph, {ref}, emit_scripts_dir);
    std::cout << "scripts emitted to " << emit_scripts_dir.string() << "\n";
    return 0;
  }

  sched::ExecuteOptions opts;
  opts.scene_dir = cfg.scene_dir;
  opts.frames = scene_frame_count(cfg.scene_dir);
  opts.max_parallel = cfg.max_parallel > 0 ? cfg.max_parallel : pipeline.max_parallel;
  opts.stages = builtin_stages(cfg);

  const sched::RunReport report = sched::execute(graph, opts);
  for (const auto& t : report.tasks) {
    std::string extra;
    if (t.blocked) extra += " (blocked)";
    if (t.executed) {
      char buf[48];
      std::snprintf(buf, sizeof(buf), "  %.2fs", t.duration_s);
      extra += buf;
    }
    std::printf("%-14s %-8s%s\n", t.name.c_str(), sched::to_string(t.status), extra.c_str());
  }
  return report.all_done ? 0 : 1;
}

int cmd_status(const RunConfig& cfg) {
  const sched::PipelineConfig pipeline = pipeline_for(cfg);
  const sched::StateStore store(cfg.scene_dir / "state");
  std::printf("%-16s %-8s %-5s %s\n", "task", "status", "exit", "log");
  for (const auto& name : pipeline.graph.topological_order()) {
    // Tasks with inspectable outputs are starred for QA browsing.
    const std::string shown = pipeline.graph.spec(name).visualizable ? name + " *" : name;
    const auto state = store.load(name);
    if (!state) {
      std::printf("%-16s %-8s %-5s %s\n", shown.c_str(), "pending", "-", "-");
    } else {
      std::printf("%-16s %-8s %-5d %s\n", shown.c_str(), sched::to_string(state->status),
                  state->exit_code, state->log.c_str());
    }
  }
  return 0;
}

// Label arrays from either a labeled-cloud PLY or a directory of label-map
// PNGs.
std::vector<labels::LabelId> load_label_array(const fs::path& path) {
  std::vector<labels::LabelId> out;
  if (fs::is_directory(path)) {
    for (int i = 0;; ++i) {
      const fs::path frame = path / labels::frame_filename(i);
      if (!fs::exists(frame)) break;
      const labels::LabelMap lm = labels::read_label_map(frame, "");
      out.insert(out.end(), lm.grid.data.begin(), lm.grid.data.end());
    }
    if (out.empty()) throw std::runtime_error("eval: no %06d.png label maps in " + path.string());
    return out;
  }
  require_exists(path, "label input");
  if (path.extension() == ".ply") {
    const fusion::LabeledCloud cloud = fusion::read_cloud_ply(path);
    return cloud.label1;
  }
  const labels::LabelMap lm = labels::read_label_map(path, "");
  return {lm.grid.data.begin(), lm.grid.data.end()};
}

int cmd_eval(const fs::path& gt_path, const fs::path& pred_path, const fs::path& space_path,
             const fs::path& groups_path, const fs::path& out_path) {
  const std::vector<labels::LabelId> gt = load_label_array(gt_path);
  const std::vector<labels::LabelId> pred = load_label_array(pred_path);
  if (gt.size() != pred.size())
    throw std::runtime_error("eval: gt and prediction have different element counts");

  int n_classes = 0;
  if (!space_path.empty()) {
    n_classes = labels::load_label_space(space_path).id_bound();
  } else {
    labels::LabelId max_id = 0;
    for (const auto v : gt) max_id = std::max(max_id, v);
    for (const auto v : pred) max_id = std::max(max_id, v);
    n_classes = max_id + 1;
  }

  const eval::ConfusionMatrix cm = eval::confusion(gt, pred, n_classes);
  std::optional<eval::ClassGroups> groups;
  if (!groups_path.empty()) groups = eval::load_class_groups(groups_path);
  const eval::Metrics m = eval::compute_metrics(cm, groups ? &*groups : nullptr);

  nlohmann::json j;
  nlohmann::json per_class = nlohmann::json::object();
  for (const auto& [id, iou] : m.per_class_iou) per_class[std::to_string(id)] = iou;
  j["per_class_iou"] = per_class;
  j["miou"] = m.miou;
  j["macc"] = m.macc;
  j["tacc"] = m.tacc;
  nlohmann::json jg = nlohmann::json::object();
  for (const auto& [name, v] : m.groups) jg[name] = v;
  j["groups"] = jg;

  const std::string text = j.dump(2) + "\n";
  if (!out_path.empty()) {
    std::ofstream out(out_path);
    out << text;
  }
  std::cout << text;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"semfuse: multi-view semantic annotation fusion pipeline"};
  app.require_subcommand(1);

  RunConfig cfg;
  std::string stage;
  fs::path emit_scripts_dir;
  fs::path gt_path, pred_path, space_path, groups_path, out_path;

  const auto add_scene = [&](CLI::App* sub) {
    sub->add_option("--scene", cfg.scene_dir, "scene directory")->required();
    sub->add_option("--config", cfg.config_path, "pipeline.json path");
  };
  const auto add_fusion_flags = [&](CLI::App* sub) {
    sub->add_option("--voxel", cfg.voxel, "TSDF voxel size in meters")
        ->check(CLI::PositiveNumber);
    sub->add_option("--trunc", cfg.trunc, "TSDF truncation distance in meters")
        ->check(CLI::PositiveNumber);
    sub->add_option("--downsample", cfg.downsample, "output cloud voxel size in meters")
        ->check(CLI::PositiveNumber);
  };

  CLI::App* sync = app.add_subcommand("sync", "synchronize raw streams");
  add_scene(sync);

  CLI::App* fuse = app.add_subcommand("fuse", "TSDF fusion + mesh extraction");
  add_scene(fuse);
  add_fusion_flags(fuse);

  CLI::App* cons = app.add_subcommand("consensus", "per-frame label consensus");
  add_scene(cons);
  cons->add_option("--min-votes", cfg.min_votes, "minimum winning weight");

  CLI::App* lift_cmd = app.add_subcommand("lift", "lift consensus labels onto the cloud");
  add_scene(lift_cmd);
  lift_cmd->add_option("--occlusion-tol", cfg.occlusion_tol, "visibility depth tolerance (m)");

  CLI::App* render_cmd = app.add_subcommand("render", "colorize label maps for QA");
  add_scene(render_cmd);
  render_cmd->add_option("--colormap", cfg.colormap_path, "colormap CSV (id,r,g,b)");

  CLI::App* run = app.add_subcommand("run", "execute the pipeline DAG");
  add_scene(run);
  add_fusion_flags(run);
  run->add_option("--stage", stage, "run only this stage and its dependencies");
  run->add_option("--max-parallel", cfg.max_parallel, "concurrent tasks");
  run->add_option("--min-votes", cfg.min_votes, "minimum winning weight");
  run->add_option("--occlusion-tol", cfg.occlusion_tol, "visibility depth tolerance (m)");
  run->add_option("--colormap", cfg.colormap_path, "colormap CSV");
  run->add_option("--emit-scripts", emit_scripts_dir,
                  "emit batch scripts for pending tasks instead of executing");

  CLI::App* status = app.add_subcommand("status", "show per-task state");
  add_scene(status);

  CLI::App* eval_cmd = app.add_subcommand("eval", "segmentation metrics");
  eval_cmd->add_option("--gt", gt_path, "ground truth (PLY or PNG directory)")->required();
  eval_cmd->add_option("--pred", pred_path, "prediction (PLY or PNG directory)")->required();
  eval_cmd->add_option("--space", space_path, "label space CSV");
  eval_cmd->add_option("--groups", groups_path, "class groups CSV (group,id)");
  eval_cmd->add_option("--out", out_path, "also write the JSON here");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sync->parsed()) return stage_sync(cfg);
    if (fuse->parsed()) return stage_fuse(cfg);
    if (cons->parsed()) return stage_consensus(cfg);
    if (lift_cmd->parsed()) return stage_lift(cfg);
    if (render_cmd->parsed()) return stage_render(cfg);
    if (run->parsed()) return cmd_run(cfg, stage, emit_scripts_dir);
    if (status->parsed()) return cmd_status(cfg);
    if (eval_cmd->parsed()) return cmd_eval(gt_path, pred_path, space_path, groups_path, out_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
