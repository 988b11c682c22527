#include "semfuse/orchestrator.hpp"

#include <fcntl.h>
#include <signal.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <deque>
#include <fstream>
#include <mutex>
#include <queue>
#include <set>
#include <stdexcept>
#include <thread>

#include <nlohmann/json.hpp>

#include "semfuse/log.hpp"

namespace semfuse::sched {

namespace fs = std::filesystem;

const char* to_string(TaskStatus status) {
  switch (status) {
    case TaskStatus::kPending: return "pending";
    case TaskStatus::kRunning: return "running";
    case TaskStatus::kDone: return "done";
    case TaskStatus::kFailed: return "failed";
  }
  return "?";
}

TaskStatus status_from_string(const std::string& s) {
  if (s == "pending") return TaskStatus::kPending;
  if (s == "running") return TaskStatus::kRunning;
  if (s == "done") return TaskStatus::kDone;
  if (s == "failed") return TaskStatus::kFailed;
  throw std::runtime_error("unknown task status '" + s + "'");
}

ResourceRequest estimate(const ResourceModel& model, int n_frames) {
  if (model.anchors.empty()) throw std::runtime_error("estimate: empty resource model");
  if (n_frames < 1) throw std::runtime_error("estimate: n_frames must be >= 1");
  for (size_t i = 1; i < model.anchors.size(); ++i)
    if (model.anchors[i].frames <= model.anchors[i - 1].frames)
      throw std::runtime_error("estimate: anchors must be sorted by frames");

  const auto& a = model.anchors;
  const auto interp = [&](auto field) -> double {
    if (n_frames <= a.front().frames) return field(a.front());
    if (n_frames >= a.back().frames) return field(a.back());
    size_t hi = 1;
    while (a[hi].frames < n_frames) ++hi;
    const auto& lo_a = a[hi - 1];
    const auto& hi_a = a[hi];
    const double u = static_cast<double>(n_frames - lo_a.frames) /
                     static_cast<double>(hi_a.frames - lo_a.frames);
    return field(lo_a) + u * (field(hi_a) - field(lo_a));
  };

  ResourceRequest r;
  r.cpus = static_cast<int>(std::ceil(interp([](const ResourceAnchor& x) { return double(x.cpus); }) - 1e-9));
  r.ram_gb = interp([](const ResourceAnchor& x) { return x.ram_gb; });
  r.hours = interp([](const ResourceAnchor& x) { return x.hours; });
  r.gpus = static_cast<int>(std::ceil(interp([](const ResourceAnchor& x) { return double(x.gpus); }) - 1e-9));
  return r;
}

int TaskGraph::index_of(const std::string& name) const {
  for (size_t i = 0; i < tasks.size(); ++i)
    if (tasks[i].name == name) return static_cast<int>(i);
  return -1;
}

const TaskSpec& TaskGraph::spec(const std::string& name) const {
  const int idx = index_of(name);
  if (idx < 0) throw std::runtime_error("task graph: unknown task " + name);
  return tasks[static_cast<size_t>(idx)];
}

void TaskGraph::validate() const {
  std::set<std::string> names;
  for (const auto& t : tasks) {
    if (t.name.empty()) throw std::runtime_error("task graph: empty task name");
    if (!names.insert(t.name).second)
      throw std::runtime_error("task graph: duplicate task " + t.name);
  }
  for (const auto& t : tasks)
    for (const auto& d : t.deps)
      if (!names.count(d))
        throw std::runtime_error("task graph: task " + t.name + " depends on unknown " + d);
  // Acyclicity falls out of the topological sort.
  if (topological_order().size() != tasks.size())
    throw std::runtime_error("task graph: dependency cycle detected");
}

std::vector<std::string> TaskGraph::topological_order() const {
  const size_t n = tasks.size();
  std::vector<int> indegree(n, 0);
  std::vector<std::vector<int>> out_edges(n);
  for (size_t i = 0; i < n; ++i) {
    for (const auto& d : tasks[i].deps) {
      const int di = index_of(d);
      if (di < 0) throw std::runtime_error("task graph: unknown dependency " + d);
      out_edges[static_cast<size_t>(di)].push_back(static_cast<int>(i));
      ++indegree[i];
    }
  }
  // Min-heap on declaration index keeps the extension deterministic.
  std::priority_queue<int, std::vector<int>, std::greater<int>> ready;
  for (size_t i = 0; i < n; ++i)
    if (indegree[i] == 0) ready.push(static_cast<int>(i));

  std::vector<std::string> order;
  order.reserve(n);
  while (!ready.empty()) {
    const int i = ready.top();
    ready.pop();
    order.push_back(tasks[static_cast<size_t>(i)].name);
    for (const int j : out_edges[static_cast<size_t>(i)])
      if (--indegree[static_cast<size_t>(j)] == 0) ready.push(j);
  }
  return order;
}

std::vector<int> TaskGraph::ancestors_of(int index) const {
  std::vector<int> out;
  std::vector<bool> seen(tasks.size(), false);
  std::deque<int> queue{index};
  while (!queue.empty()) {
    const int cur = queue.front();
    queue.pop_front();
    for (const auto& d : tasks[static_cast<size_t>(cur)].deps) {
      const int di = index_of(d);
      if (di >= 0 && !seen[static_cast<size_t>(di)]) {
        seen[static_cast<size_t>(di)] = true;
        out.push_back(di);
        queue.push_back(di);
      }
    }
  }
  return out;
}

namespace {

ResourceModel single_anchor(int cpus, double ram_gb, double hours, int gpus) {
  ResourceModel m;
  m.anchors.push_back({1, cpus, ram_gb, hours, gpus});
  return m;
}

TaskSpec make_task(std::string name, TaskKind kind, std::vector<std::string> deps,
                   ResourceModel resources, bool visualizable) {
  TaskSpec t;
  t.name = std::move(name);
  t.kind = kind;
  t.deps = std::move(deps);
  t.resources = std::move(resources);
  t.visualizable = visualizable;
  return t;
}

}  // namespace

TaskGraph default_graph() {
  TaskGraph g;
  const auto B = TaskKind::kBuiltin;
  const auto C = TaskKind::kCommand;
  g.tasks.push_back(make_task("preprocess", B, {}, single_anchor(2, 24, 4, 0), false));
  g.tasks.push_back(make_task("gsam", C, {"preprocess"}, single_anchor(2, 12, 6, 1), true));
  g.tasks.push_back(make_task("mask3d", C, {"preprocess"}, single_anchor(8, 16, 1.5, 1), true));
  g.tasks.push_back(make_task("ovseg", C, {"preprocess"}, single_anchor(2, 8, 8, 1), true));
  g.tasks.push_back(
      make_task("internimage", C, {"preprocess"}, single_anchor(2, 10, 8, 1), true));
  g.tasks.push_back(make_task("omnidata", C, {"preprocess"}, single_anchor(8, 8, 2, 1), false));
  g.tasks.push_back(make_task("hha", C, {"omnidata"}, single_anchor(18, 9, 2, 0), false));
  g.tasks.push_back(make_task("cmx", C, {"hha"}, single_anchor(2, 8, 3, 1), true));
  g.tasks.push_back(make_task("consensus", B,
                              {"gsam", "mask3d", "ovseg", "internimage", "cmx"},
                              single_anchor(16, 16, 2, 0), true));
  g.tasks.push_back(make_task("lift", B, {"consensus"}, single_anchor(2, 72, 4, 0), true));
  g.tasks.push_back(make_task("render", B, {"lift"}, single_anchor(8, 32, 0.5, 0), false));
  g.tasks.push_back(make_task("postprocess", B, {"lift"}, single_anchor(1, 4, 0.5, 0), false));

  // Default commands for the label-producing external models check that
  // their pre-staged predictions exist (plain or _tta variant directories);
  // deployments override these with real inference commands through
  // pipeline.json.
  for (const char* model : {"gsam", "mask3d", "ovseg", "internimage", "cmx"}) {
    g.tasks[static_cast<size_t>(g.index_of(model))].command =
        std::string("ls '{scene_dir}/intermediate' | grep -q '^") + model + "'";
  }
  g.tasks[static_cast<size_t>(g.index_of("omnidata"))].command = "true";
  g.tasks[static_cast<size_t>(g.index_of("hha"))].command = "true";
  return g;
}

StateStore::StateStore(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

std::optional<TaskState> StateStore::load(const std::string& task) const {
  const fs::path path = dir_ / (task + ".json");
  std::ifstream in(path);
  if (!in) return std::nullopt;
  try {
    const nlohmann::json j = nlohmann::json::parse(in);
    TaskState s;
    s.status = status_from_string(j.at("status").get<std::string>());
    s.start = j.value("start", 0.0);
    s.end = j.value("end", 0.0);
    s.exit_code = j.value("exit_code", 0);
    s.log = j.value("log", "");
    return s;
  } catch (const std::exception& e) {
    log_warn("state: corrupt " + path.string() + " (" + e.what() + "), treating as pending");
    return std::nullopt;
  }
}

void StateStore::store(const std::string& task, const TaskState& state) const {
  nlohmann::json j;
  j["status"] = to_string(state.status);
  j["start"] = state.start;
  j["end"] = state.end;
  j["exit_code"] = state.exit_code;
  j["log"] = state.log;

  const fs::path path = dir_ / (task + ".json");
  const fs::path tmp = dir_ / (task + ".json.tmp");
  {
    std::ofstream out(tmp);
    if (!out) throw std::runtime_error("state: cannot write " + tmp.string());
    out << j.dump(2) << "\n";
  }
  fs::rename(tmp, path);
}

void StateStore::write_done_marker(const std::string& task) const {
  std::ofstream out(dir_ / (task + ".done"));
  out << "done\n";
}

bool StateStore::is_done(const std::string& task) const {
  const auto state = load(task);
  if (!state || state->status != TaskStatus::kDone) return false;
  if (!fs::exists(dir_ / (task + ".done"))) {
    log_warn("state: " + task + " marked done without marker file, treating as pending");
    return false;
  }
  return true;
}

void StateStore::clear(const std::string& task) const {
  fs::remove(dir_ / (task + ".json"));
  fs::remove(dir_ / (task + ".done"));
}

std::vector<std::string> compute_pending(const TaskGraph& graph, const fs::path& statedir) {
  graph.validate();
  const StateStore store(statedir);
  std::vector<std::string> pending;
  for (const auto& name : graph.topological_order())
    if (!store.is_done(name)) pending.push_back(name);
  return pending;
}

SceneLock::SceneLock(const fs::path& scene_dir) : path_(scene_dir / "scene.lock") {
  fs::create_directories(scene_dir);
  for (int attempt = 0; attempt < 2; ++attempt) {
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd >= 0) {
      const std::string pid = std::to_string(::getpid()) + "\n";
      [[maybe_unused]] const ssize_t n = ::write(fd, pid.c_str(), pid.size());
      ::close(fd);
      held_ = true;
      return;
    }
    // Lock exists; take over only when the owning process is gone.
    std::ifstream in(path_);
    pid_t owner = 0;
    in >> owner;
    if (owner > 0 && (::kill(owner, 0) == 0 || errno != ESRCH))
      throw std::runtime_error("scene locked by running pid " + std::to_string(owner) + ": " +
                               path_.string());
    log_warn("scene lock: removing stale lock from pid " + std::to_string(owner));
    fs::remove(path_);
  }
  throw std::runtime_error("scene lock: could not acquire " + path_.string());
}

SceneLock::~SceneLock() {
  if (held_) {
    std::error_code ec;
    fs::remove(path_, ec);
  }
}

namespace {

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

std::string substitute_placeholders(std::string cmd, const fs::path& scene_dir, int frames) {
  const auto replace_all = [&cmd](const std::string& from, const std::string& to) {
    size_t pos = 0;
    while ((pos = cmd.find(from, pos)) != std::string::npos) {
      cmd.replace(pos, from.size(), to);
      pos += to.size();
    }
  };
  replace_all("{scene_dir}", scene_dir.string());
  replace_all("{frames}", std::to_string(frames));
  return cmd;
}

int run_task_body(const TaskSpec& spec, const ExecuteOptions& opts, const fs::path& log_path) {
  if (spec.kind == TaskKind::kBuiltin) {
    const auto it = opts.stages.find(spec.name);
    if (it == opts.stages.end()) {
      log_error("executor: no builtin stage bound for task " + spec.name);
      return 127;
    }
    StageContext ctx;
    ctx.scene_dir = opts.scene_dir;
    ctx.frames = opts.frames;
    ctx.log_path = log_path;
    try {
      return it->second(ctx);
    } catch (const std::exception& e) {
      std::ofstream log(log_path, std::ios::app);
      log << "exception: " << e.what() << "\n";
      return 1;
    }
  }
  if (spec.command.empty()) {
    std::ofstream log(log_path, std::ios::app);
    log << "no command configured for external task " << spec.name << "\n";
    return 126;
  }
  const std::string cmd = "( " +
                          substitute_placeholders(spec.command, opts.scene_dir, opts.frames) +
                          " ) >> '" + log_path.string() + "' 2>&1";
  const int rc = std::system(cmd.c_str());
  if (rc == -1) return 125;
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : 128 + WTERMSIG(rc);
}

}  // namespace

RunReport execute(const TaskGraph& graph, const ExecuteOptions& options) {
  graph.validate();

  ExecuteOptions opts = options;
  if (opts.state_dir.empty()) opts.state_dir = opts.scene_dir / "state";
  if (opts.log_dir.empty()) opts.log_dir = opts.scene_dir / "logs";
  if (opts.max_parallel < 1) opts.max_parallel = 1;
  fs::create_directories(opts.log_dir);

  std::optional<SceneLock> lock;
  if (opts.acquire_lock) lock.emplace(opts.scene_dir);

  const StateStore store(opts.state_dir);
  const std::vector<std::string> topo = graph.topological_order();

  std::map<std::string, TaskReport> reports;
  std::set<std::string> done;
  for (const auto& name : topo) {
    TaskReport r;
    r.name = name;
    if (store.is_done(name)) {
      r.status = TaskStatus::kDone;
      done.insert(name);
    }
    reports[name] = r;
  }

  std::set<std::string> failed;   // failed in this run (or doomed by one)
  std::set<std::string> started;
  std::set<std::string> running;

  std::mutex mu;
  std::condition_variable cv;
  struct Completion {
    std::string name;
    int exit_code;
    double start, end;
  };
  std::deque<Completion> completions;
  std::vector<std::thread> threads;
  bool crashed = false;

  const auto deps_done = [&](const std::string& name) {
    for (const auto& d : graph.spec(name).deps)
      if (!done.count(d)) return false;
    return true;
  };
  const auto deps_doomed = [&](const std::string& name) {
    for (const auto& d : graph.spec(name).deps)
      if (failed.count(d) || reports[d].blocked) return true;
    return false;
  };

  std::unique_lock<std::mutex> lk(mu);
  for (;;) {
    // Mark tasks whose dependency chain already failed as blocked.
    bool changed = true;
    while (changed) {
      changed = false;
      for (const auto& name : topo) {
        if (done.count(name) || started.count(name) || reports[name].blocked) continue;
        if (deps_doomed(name)) {
          reports[name].blocked = true;
          changed = true;
        }
      }
    }

    // Launch everything ready, up to the parallelism cap.
    while (static_cast<int>(running.size()) < opts.max_parallel && !crashed) {
      std::string next;
      for (const auto& name : topo) {
        if (done.count(name) || started.count(name) || reports[name].blocked) continue;
        if (deps_done(name)) {
          next = name;
          break;
        }
      }
      if (next.empty()) break;

      if (opts.before_launch && !opts.before_launch(next)) {
        crashed = true;
        break;
      }

      started.insert(next);
      running.insert(next);
      const fs::path log_path = opts.log_dir / (next + ".log");
      TaskState state;
      state.status = TaskStatus::kRunning;
      state.start = now_seconds();
      state.log = log_path.string();
      store.store(next, state);

      threads.emplace_back([&, next, log_path]() {
        const double start = now_seconds();
        const int code = run_task_body(graph.spec(next), opts, log_path);
        const double end = now_seconds();
        std::lock_guard<std::mutex> guard(mu);
        completions.push_back({next, code, start, end});
        cv.notify_all();
      });
    }

    if (running.empty()) {
      if (crashed) break;
      // Nothing runnable left: either finished or everything remaining is
      // blocked behind failures.
      bool anything_launchable = false;
      for (const auto& name : topo) {
        if (done.count(name) || started.count(name) || reports[name].blocked) continue;
        anything_launchable = true;
        break;
      }
      if (!anything_launchable) break;
      // Remaining tasks wait on failed deps; the doom pass above will have
      // marked them, so reaching here means progress stalled unexpectedly.
      break;
    }

    cv.wait(lk, [&] { return !completions.empty(); });
    while (!completions.empty()) {
      const Completion c = completions.front();
      completions.pop_front();
      running.erase(c.name);

      TaskState state;
      state.start = c.start;
      state.end = c.end;
      state.exit_code = c.exit_code;
      state.log = (opts.log_dir / (c.name + ".log")).string();
      TaskReport& r = reports[c.name];
      r.executed = true;
      r.duration_s = c.end - c.start;
      r.exit_code = c.exit_code;
      if (c.exit_code == 0) {
        state.status = TaskStatus::kDone;
        store.write_done_marker(c.name);
        store.store(c.name, state);
        done.insert(c.name);
        r.status = TaskStatus::kDone;
      } else {
        state.status = TaskStatus::kFailed;
        store.store(c.name, state);
        failed.insert(c.name);
        r.status = TaskStatus::kFailed;
        log_warn("task " + c.name + " failed with exit code " + std::to_string(c.exit_code));
      }
    }
  }
  lk.unlock();

  for (auto& t : threads) t.join();

  // Collect any completions that raced with shutdown.
  {
    std::lock_guard<std::mutex> guard(mu);
    while (!completions.empty()) {
      const Completion c = completions.front();
      completions.pop_front();
      TaskState state;
      state.start = c.start;
      state.end = c.end;
      state.exit_code = c.exit_code;
      state.log = (opts.log_dir / (c.name + ".log")).string();
      state.status = c.exit_code == 0 ? TaskStatus::kDone : TaskStatus::kFailed;
      if (c.exit_code == 0) store.write_done_marker(c.name);
      store.store(c.name, state);
      TaskReport& r = reports[c.name];
      r.executed = true;
      r.duration_s = c.end - c.start;
      r.exit_code = c.exit_code;
      r.status = state.status;
      if (c.exit_code == 0) done.insert(c.name);
    }
  }

  RunReport report;
  report.crashed = crashed;
  report.all_done = true;
  for (const auto& name : topo) {
    if (!done.count(name)) report.all_done = false;
    report.tasks.push_back(reports[name]);
  }
  return report;
}

void emit_batch_scripts(const TaskGraph& graph, const std::vector<SceneRef>& scenes,
                        const fs::path& out_dir) {
  graph.validate();
  fs::create_directories(out_dir);
  if (!fs::exists(out_dir)) throw std::runtime_error("emit_batch_scripts: cannot create " + out_dir.string());

  for (const auto& scene : scenes) {
    const auto pending = compute_pending(graph, scene.dir / "state");
    for (const auto& name : pending) {
      const TaskSpec& spec = graph.spec(name);
      const ResourceRequest res = estimate(spec.resources, std::max(1, scene.frames));

      std::ofstream out(out_dir / (scene.id + "_" + name + ".sh"));
      if (!out)
        throw std::runtime_error("emit_batch_scripts: cannot write script for " + name);
      out << "# semfuse batch task\n";
      out << "#TASK " << name << "\n";
      out << "#SCENE " << scene.id << "\n";
      char res_line[160];
      std::snprintf(res_line, sizeof(res_line), "#RES cpus=%d ram_gb=%g hours=%g gpus=%d\n",
                    res.cpus, res.ram_gb, res.hours, res.gpus);
      out << res_line;
      for (const auto& d : spec.deps) out << "#DEP " << d << "\n";
      if (spec.kind == TaskKind::kCommand && !spec.command.empty()) {
        out << substitute_placeholders(spec.command, scene.dir, scene.frames) << "\n";
      } else {
        out << "semfuse run --scene '" << scene.dir.string() << "' --stage " << name << "\n";
      }
    }
  }
}

PipelineConfig default_pipeline_config() {
  PipelineConfig cfg;
  cfg.graph = default_graph();
  for (const char* s : {"gsam", "mask3d", "ovseg", "internimage", "cmx"})
    cfg.source_weights[s] = 1.0;
  return cfg;
}

PipelineConfig load_pipeline_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("pipeline config: cannot open " + path.string());
  const nlohmann::json j = nlohmann::json::parse(in);

  PipelineConfig cfg;
  if (j.contains("tasks")) {
    for (const auto& jt : j.at("tasks")) {
      TaskSpec t;
      t.name = jt.at("name").get<std::string>();
      const std::string kind = jt.value("kind", std::string("builtin"));
      if (kind == "builtin")
        t.kind = TaskKind::kBuiltin;
      else if (kind == "command")
        t.kind = TaskKind::kCommand;
      else
        throw std::runtime_error("pipeline config: unknown kind '" + kind + "'");
      t.command = jt.value("command", std::string());
      if (jt.contains("deps"))
        for (const auto& d : jt.at("deps")) t.deps.push_back(d.get<std::string>());
      t.visualizable = jt.value("visualizable", false);
      if (jt.contains("resources")) {
        for (const auto& ja : jt.at("resources").at("anchors")) {
          ResourceAnchor a;
          a.frames = ja.value("frames", 1);
          a.cpus = ja.value("cpus", 1);
          a.ram_gb = ja.value("ram_gb", 1.0);
          a.hours = ja.value("hours", 1.0);
          a.gpus = ja.value("gpus", 0);
          t.resources.anchors.push_back(a);
        }
      } else {
        t.resources.anchors.push_back({});
      }
      cfg.graph.tasks.push_back(std::move(t));
    }
  } else {
    cfg.graph = default_graph();
  }

  if (j.contains("commands")) {
    for (const auto& [name, cmd] : j.at("commands").items()) {
      const int idx = cfg.graph.index_of(name);
      if (idx < 0) throw std::runtime_error("pipeline config: command for unknown task " + name);
      cfg.graph.tasks[static_cast<size_t>(idx)].command = cmd.get<std::string>();
    }
  }
  if (j.contains("resources")) {
    for (const auto& [name, jres] : j.at("resources").items()) {
      const int idx = cfg.graph.index_of(name);
      if (idx < 0) throw std::runtime_error("pipeline config: resources for unknown task " + name);
      ResourceModel model;
      for (const auto& ja : jres.at("anchors")) {
        ResourceAnchor a;
        a.frames = ja.value("frames", 1);
        a.cpus = ja.value("cpus", 1);
        a.ram_gb = ja.value("ram_gb", 1.0);
        a.hours = ja.value("hours", 1.0);
        a.gpus = ja.value("gpus", 0);
        model.anchors.push_back(a);
      }
      cfg.graph.tasks[static_cast<size_t>(idx)].resources = model;
    }
  }

  cfg.max_parallel = j.value("max_parallel", 2);
  cfg.min_votes = j.value("min_votes", 2.0);
  if (j.contains("sources")) {
    for (const auto& [name, w] : j.at("sources").items())
      cfg.source_weights[name] = w.get<double>();
  } else {
    cfg.source_weights = default_pipeline_config().source_weights;
  }
  cfg.graph.validate();
  return cfg;
}

}  // namespace semfuse::sched
