#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace semfuse::sched {

enum class TaskStatus { kPending, kRunning, kDone, kFailed };

const char* to_string(TaskStatus status);
TaskStatus status_from_string(const std::string& s);

// Requested resources measured at a reference scene size, interpolated
// between anchors for other sizes.
struct ResourceAnchor {
  int frames = 1;
  int cpus = 1;
  double ram_gb = 1.0;
  double hours = 1.0;
  int gpus = 0;
};

struct ResourceModel {
  std::vector<ResourceAnchor> anchors;  // sorted by frames
};

struct ResourceRequest {
  int cpus = 1;
  double ram_gb = 0;
  double hours = 0;
  int gpus = 0;
};

// Piecewise-linear interpolation per field between the bracketing anchors,
// clamped to the first/last anchor outside their range. cpus and gpus round
// up to whole units.
ResourceRequest estimate(const ResourceModel& model, int n_frames);

enum class TaskKind { kBuiltin, kCommand };

struct TaskSpec {
  std::string name;
  TaskKind kind = TaskKind::kBuiltin;
  // Command template for external tasks; {scene_dir} and {frames} expand at
  // launch time.
  std::string command;
  std::vector<std::string> deps;
  ResourceModel resources;
  bool visualizable = false;
};

struct TaskGraph {
  std::vector<TaskSpec> tasks;

  void validate() const;  // unique names, known deps, acyclic
  int index_of(const std::string& name) const;
  const TaskSpec& spec(const std::string& name) const;
  // Deterministic linear extension: ready tasks emit in declaration order.
  std::vector<std::string> topological_order() const;
  // Transitive dependency closure, as indices.
  std::vector<int> ancestors_of(int index) const;
};

// The per-scene pipeline: preprocess fans out to the five base models,
// omnidata feeds hha feeds cmx, the 2D model outputs join in consensus,
// then lift, then render and postprocess.
TaskGraph default_graph();

struct TaskState {
  TaskStatus status = TaskStatus::kPending;
  double start = 0;
  double end = 0;
  int exit_code = 0;
  std::string log;
};

// state/<task>.json per scene, written with write-rename discipline, plus a
// <task>.done marker written before the final state so that a `done` status
// always implies the marker exists.
class StateStore {
 public:
  explicit StateStore(std::filesystem::path dir);

  std::optional<TaskState> load(const std::string& task) const;
  void store(const std::string& task, const TaskState& state) const;
  bool is_done(const std::string& task) const;
  void write_done_marker(const std::string& task) const;
  void clear(const std::string& task) const;

  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
};

// Every task not in status done, in a valid topological order. Missing or
// corrupt state files count as pending.
std::vector<std::string> compute_pending(const TaskGraph& graph,
                                         const std::filesystem::path& statedir);

struct StageContext {
  std::filesystem::path scene_dir;
  int frames = 0;
  std::filesystem::path log_path;
};

// Builtin stage body; returns a process-style exit code.
using StageFn = std::function<int(const StageContext&)>;

struct ExecuteOptions {
  std::filesystem::path scene_dir;
  std::filesystem::path state_dir;  // defaults to scene_dir/state
  std::filesystem::path log_dir;    // defaults to scene_dir/logs
  int frames = 0;
  int max_parallel = 1;
  std::map<std::string, StageFn> stages;
  // Test hook, called before each launch; returning false simulates an
  // executor crash: nothing else is launched, in-flight tasks drain.
  std::function<bool(const std::string&)> before_launch;
  bool acquire_lock = true;
};

struct TaskReport {
  std::string name;
  TaskStatus status = TaskStatus::kPending;
  bool executed = false;
  bool blocked = false;  // a dependency failed; task was never started
  double duration_s = 0;
  int exit_code = 0;
};

struct RunReport {
  std::vector<TaskReport> tasks;
  bool all_done = false;
  bool crashed = false;
};

// Runs the pending work set with at most max_parallel tasks in flight.
// Completed tasks are never re-executed; failures leave independent
// branches running and mark dependents blocked.
RunReport execute(const TaskGraph& graph, const ExecuteOptions& options);

struct SceneRef {
  std::string id;
  std::filesystem::path dir;
  int frames = 0;
};

// One script per pending task per scene with #RES/#DEP header comments.
// Fully finished scenes emit nothing.
void emit_batch_scripts(const TaskGraph& graph, const std::vector<SceneRef>& scenes,
                        const std::filesystem::path& out_dir);

// Exclusive per-scene lock file holding the owner pid; stale locks from
// dead processes are taken over.
class SceneLock {
 public:
  explicit SceneLock(const std::filesystem::path& scene_dir);
  ~SceneLock();
  SceneLock(const SceneLock&) = delete;
  SceneLock& operator=(const SceneLock&) = delete;

 private:
  std::filesystem::path path_;
  bool held_ = false;
};

struct PipelineConfig {
  TaskGraph graph;
  int max_parallel = 2;
  double min_votes = 2.0;
  std::map<std::string, double> source_weights;
};

// pipeline.json: optional "tasks" array replacing the default graph,
// "commands" filling external command templates, "resources" overriding
// anchors, plus max_parallel / consensus settings.
PipelineConfig load_pipeline_config(const std::filesystem::path& path);
PipelineConfig default_pipeline_config();

}  // namespace semfuse::sched
