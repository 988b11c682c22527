#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <map>
#include <random>
#include <set>

#include "semfuse/log.hpp"
#include "semfuse/orchestrator.hpp"
#include "support/test_support.hpp"

using namespace semfuse;
using namespace semfuse::sched;
using semfuse::testing::TempDir;

namespace {

// Failure injection below is intentional; keep the log quiet.
const bool g_quiet = (set_log_level(LogLevel::kError), true);

TaskSpec task(const std::string& name, std::vector<std::string> deps,
              TaskKind kind = TaskKind::kBuiltin) {
  TaskSpec t;
  t.name = name;
  t.kind = kind;
  t.deps = std::move(deps);
  t.resources.anchors.push_back({});
  return t;
}

ResourceModel anchors(std::initializer_list<ResourceAnchor> list) {
  ResourceModel m;
  m.anchors = list;
  return m;
}

}  // namespace

TEST_CASE("estimate: single anchor is constant, midpoints interpolate, edges clamp") {
  const ResourceModel single = anchors({{500, 2, 72, 4, 0}});
  for (const int frames : {1, 65, 500, 13796}) {
    const ResourceRequest r = estimate(single, frames);
    CHECK(r.cpus == 2);
    CHECK(r.ram_gb == 72.0);
    CHECK(r.hours == 4.0);
    CHECK(r.gpus == 0);
  }

  const ResourceModel two = anchors({{100, 2, 10, 2, 0}, {200, 4, 20, 4, 1}});
  const ResourceRequest mid = estimate(two, 150);
  CHECK(mid.hours == 3.0);
  CHECK(mid.ram_gb == 15.0);
  CHECK(mid.cpus == 3);
  CHECK(mid.gpus == 1);  // 0.5 rounds up

  CHECK(estimate(two, 65).hours == 2.0);     // clamp below the first anchor
  CHECK(estimate(two, 13796).hours == 4.0);  // clamp above the last anchor

  CHECK(estimate(two, 170).cpus == 4);  // 3.4 rounds up

  CHECK_THROWS(estimate(ResourceModel{}, 100));
  CHECK_THROWS(estimate(two, 0));
  CHECK_THROWS(estimate(anchors({{200, 1, 1, 1, 0}, {100, 1, 1, 1, 0}}), 150));
}

TEST_CASE("estimate is monotone when anchors are monotone") {
  const ResourceModel m = anchors({{10, 1, 4, 1, 0}, {100, 4, 16, 3, 1}, {1000, 8, 64, 9, 2}});
  double prev = 0;
  for (int frames = 1; frames <= 1200; frames += 13) {
    const double h = estimate(m, frames).hours;
    CHECK(h >= prev);
    prev = h;
  }
}

TEST_CASE("default graph shape") {
  const TaskGraph g = default_graph();
  CHECK_NOTHROW(g.validate());

  const auto order = g.topological_order();
  REQUIRE(order.size() == g.tasks.size());
  CHECK(order.front() == "preprocess");
  CHECK(order.back() == "postprocess");

  const std::set<std::string> consensus_deps(g.spec("consensus").deps.begin(),
                                             g.spec("consensus").deps.end());
  CHECK(consensus_deps ==
        std::set<std::string>{"gsam", "mask3d", "ovseg", "internimage", "cmx"});
  CHECK(g.spec("cmx").deps == std::vector<std::string>{"hha"});
  CHECK(g.spec("hha").deps == std::vector<std::string>{"omnidata"});
  CHECK(g.spec("lift").deps == std::vector<std::string>{"consensus"});
}

TEST_CASE("graph validation rejects cycles, dupes and unknown deps") {
  TaskGraph cyclic;
  cyclic.tasks = {task("a", {"b"}), task("b", {"a"})};
  CHECK_THROWS_WITH_AS(cyclic.validate(), doctest::Contains("cycle"), std::runtime_error);

  TaskGraph dupe;
  dupe.tasks = {task("a", {}), task("a", {})};
  CHECK_THROWS_WITH_AS(dupe.validate(), doctest::Contains("duplicate"), std::runtime_error);

  TaskGraph unknown;
  unknown.tasks = {task("a", {"ghost"})};
  CHECK_THROWS_WITH_AS(unknown.validate(), doctest::Contains("unknown"), std::runtime_error);
}

TEST_CASE("state store round trip, markers and corruption handling") {
  TempDir dir;
  const StateStore store(dir.path());

  CHECK(!store.load("t").has_value());
  CHECK(!store.is_done("t"));

  TaskState s;
  s.status = TaskStatus::kDone;
  s.start = 10.5;
  s.end = 12.25;
  s.exit_code = 0;
  s.log = "logs/t.log";
  store.store("t", s);
  // Done without the marker is treated as not done.
  CHECK(!store.is_done("t"));
  store.write_done_marker("t");
  CHECK(store.is_done("t"));

  const auto loaded = store.load("t");
  REQUIRE(loaded.has_value());
  CHECK(loaded->status == TaskStatus::kDone);
  CHECK(loaded->start == 10.5);
  CHECK(loaded->exit_code == 0);

  // Corrupt state files read as pending with a warning.
  testing::write_text(dir / "broken.json", "{not json");
  CHECK(!store.load("broken").has_value());
  CHECK(!store.is_done("broken"));
}

TEST_CASE("compute_pending excludes done tasks and keeps a topological order") {
  TempDir dir;
  const TaskGraph g = default_graph();
  const StateStore store(dir.path());

  SUBCASE("fresh scene: everything pending in topological order") {
    const auto pending = compute_pending(g, dir.path());
    CHECK(pending == g.topological_order());
  }

  SUBCASE("everything done: empty") {
    for (const auto& t : g.tasks) {
      TaskState s;
      s.status = TaskStatus::kDone;
      store.write_done_marker(t.name);
      store.store(t.name, s);
    }
    CHECK(compute_pending(g, dir.path()).empty());
  }

  SUBCASE("failed consensus with done upstream leaves the downstream tail") {
    for (const auto& t : g.tasks) {
      if (t.name == "consensus" || t.name == "lift" || t.name == "render" ||
          t.name == "postprocess")
        continue;
      TaskState s;
      s.status = TaskStatus::kDone;
      store.write_done_marker(t.name);
      store.store(t.name, s);
    }
    TaskState failed;
    failed.status = TaskStatus::kFailed;
    failed.exit_code = 3;
    store.store("consensus", failed);

    const auto pending = compute_pending(g, dir.path());
    CHECK(pending ==
          std::vector<std::string>{"consensus", "lift", "render", "postprocess"});
  }
}

namespace {

struct StageHarness {
  std::map<std::string, int> executions;
  std::map<std::string, int> failures_remaining;  // fail this many times first

  std::map<std::string, StageFn> stages(const TaskGraph& g) {
    std::map<std::string, StageFn> out;
    for (const auto& t : g.tasks) {
      out[t.name] = [this, name = t.name](const StageContext&) {
        ++executions[name];
        auto it = failures_remaining.find(name);
        if (it != failures_remaining.end() && it->second != 0) {
          if (it->second > 0) --it->second;
          return 1;
        }
        return 0;
      };
    }
    return out;
  }
};

ExecuteOptions options_for(const TempDir& dir, StageHarness& harness, const TaskGraph& g,
                           int max_parallel = 1) {
  ExecuteOptions opts;
  opts.scene_dir = dir.path();
  opts.max_parallel = max_parallel;
  opts.stages = harness.stages(g);
  opts.acquire_lock = false;
  return opts;
}

}  // namespace

TEST_CASE("a failing middle task blocks its dependents only") {
  TempDir dir;
  TaskGraph g;
  g.tasks = {task("a", {}), task("b", {"a"}), task("c", {"b"}), task("side", {"a"})};

  StageHarness harness;
  harness.failures_remaining["b"] = -1;  // always fails
  const RunReport report = execute(g, options_for(dir, harness, g));

  CHECK(!report.all_done);
  std::map<std::string, TaskReport> by_name;
  for (const auto& t : report.tasks) by_name[t.name] = t;
  CHECK(by_name["a"].status == TaskStatus::kDone);
  CHECK(by_name["b"].status == TaskStatus::kFailed);
  CHECK(by_name["c"].status == TaskStatus::kPending);
  CHECK(by_name["c"].blocked);
  CHECK(!by_name["c"].executed);
  CHECK(by_name["side"].status == TaskStatus::kDone);  // independent branch kept running
  CHECK(harness.executions["c"] == 0);
}

TEST_CASE("diamond joins wait for both branches") {
  TempDir dir;
  TaskGraph g;
  g.tasks = {task("src", {}), task("left", {"src"}), task("right", {"src"}),
             task("join", {"left", "right"})};
  StageHarness harness;
  const RunReport report = execute(g, options_for(dir, harness, g, 2));
  CHECK(report.all_done);
  for (const auto& [name, n] : harness.executions) CHECK(n == 1);
}

TEST_CASE("re-running after a transient failure never re-executes done tasks") {
  TempDir dir;
  TaskGraph g;
  g.tasks = {task("a", {}), task("b", {"a"}), task("c", {"b"})};

  StageHarness harness;
  harness.failures_remaining["b"] = 1;  // fails once, then succeeds

  const RunReport first = execute(g, options_for(dir, harness, g));
  CHECK(!first.all_done);
  CHECK(harness.executions["a"] == 1);
  CHECK(harness.executions["b"] == 1);
  CHECK(harness.executions["c"] == 0);

  const RunReport second = execute(g, options_for(dir, harness, g));
  CHECK(second.all_done);
  CHECK(harness.executions["a"] == 1);  // done tasks stay done
  CHECK(harness.executions["b"] == 2);
  CHECK(harness.executions["c"] == 1);
}

TEST_CASE("external commands run through the shell with captured logs") {
  TempDir dir;
  TaskGraph g;
  TaskSpec ok = task("toucher", {}, TaskKind::kCommand);
  ok.command = "echo frames={frames} && touch '{scene_dir}/made_by_task'";
  TaskSpec bad = task("breaker", {"toucher"}, TaskKind::kCommand);
  bad.command = "exit 7";
  g.tasks = {ok, bad};

  ExecuteOptions opts;
  opts.scene_dir = dir.path();
  opts.frames = 42;
  opts.acquire_lock = false;
  const RunReport report = execute(g, opts);

  CHECK(std::filesystem::exists(dir / "made_by_task"));
  std::map<std::string, TaskReport> by_name;
  for (const auto& t : report.tasks) by_name[t.name] = t;
  CHECK(by_name["toucher"].status == TaskStatus::kDone);
  CHECK(by_name["breaker"].status == TaskStatus::kFailed);
  CHECK(by_name["breaker"].exit_code == 7);

  std::ifstream log(dir / "logs" / "toucher.log");
  std::string line;
  std::getline(log, line);
  CHECK(line == "frames=42");
}

TEST_CASE("missing builtin binding fails the task instead of crashing") {
  TempDir dir;
  TaskGraph g;
  g.tasks = {task("ghost_stage", {})};
  ExecuteOptions opts;
  opts.scene_dir = dir.path();
  opts.acquire_lock = false;
  const RunReport report = execute(g, opts);
  CHECK(!report.all_done);
  CHECK(report.tasks[0].status == TaskStatus::kFailed);
}

TEST_CASE("randomized DAGs with failures and crashes recover without waste") {
  std::mt19937 rng(2024);
  std::uniform_int_distribution<int> n_tasks_dist(4, 10);
  std::uniform_real_distribution<double> coin(0.0, 1.0);

  for (int trial = 0; trial < 40; ++trial) {
    TempDir dir;
    const int n = n_tasks_dist(rng);
    TaskGraph g;
    for (int i = 0; i < n; ++i) {
      std::vector<std::string> deps;
      for (int j = 0; j < i; ++j)
        if (coin(rng) < 0.3) deps.push_back("t" + std::to_string(j));
      g.tasks.push_back(task("t" + std::to_string(i), std::move(deps)));
    }

    StageHarness harness;
    std::set<std::string> permanent_failures;
    std::map<std::string, int> transient_plan;
    for (int i = 0; i < n; ++i) {
      const std::string name = "t" + std::to_string(i);
      const double r = coin(rng);
      if (r < 0.12) {
        harness.failures_remaining[name] = -1;  // permanent
        permanent_failures.insert(name);
      } else if (r < 0.35) {
        const int f = 1 + (coin(rng) < 0.3 ? 1 : 0);  // transient
        harness.failures_remaining[name] = f;
        transient_plan[name] = f;
      }
    }

    // The oracle: tasks reachable without touching a permanently failing
    // ancestor eventually complete.
    const auto has_doomed_ancestor = [&](int idx) {
      for (const int a : g.ancestors_of(idx))
        if (permanent_failures.count(g.tasks[static_cast<size_t>(a)].name)) return true;
      return false;
    };

    std::vector<std::string> launch_order;
    int rounds = 0;
    for (; rounds < 25; ++rounds) {
      std::uniform_int_distribution<int> crash_after(1, n + 2);
      int launch_budget = coin(rng) < 0.4 ? crash_after(rng) : -1;

      ExecuteOptions opts = options_for(dir, harness, g);
      opts.before_launch = [&](const std::string& name) {
        if (launch_budget == 0) return false;  // simulated executor crash
        if (launch_budget > 0) --launch_budget;
        launch_order.push_back(name);
        return true;
      };
      const RunReport report = execute(g, opts);
      if (report.all_done) break;

      bool can_progress = false;
      for (const auto& t : report.tasks)
        if (t.status != TaskStatus::kDone &&
            !has_doomed_ancestor(g.index_of(t.name)) &&
            !permanent_failures.count(t.name))
          can_progress = true;
      if (!report.crashed && !can_progress) break;
    }

    // Launch order is a linear extension: deps launched (and finished)
    // before their dependents.
    std::map<std::string, size_t> first_launch;
    for (size_t i = 0; i < launch_order.size(); ++i)
      if (!first_launch.count(launch_order[i])) first_launch[launch_order[i]] = i;
    for (const auto& t : g.tasks) {
      if (!first_launch.count(t.name)) continue;
      for (const auto& d : t.deps) {
        REQUIRE(first_launch.count(d));
        CHECK(first_launch[d] < first_launch[t.name]);
      }
    }

    const StateStore store(dir / "state");
    for (int i = 0; i < n; ++i) {
      const std::string name = "t" + std::to_string(i);
      const bool doomed = permanent_failures.count(name) || has_doomed_ancestor(i);
      if (doomed) {
        CHECK(!store.is_done(name));
      } else {
        CHECK(store.is_done(name));  // the oracle set completed
      }
      // No completed task is ever re-executed: a finished task ran exactly
      // once per planned failure plus one success.
      if (store.is_done(name)) {
        const auto plan = transient_plan.find(name);
        const int planned = plan == transient_plan.end() ? 0 : plan->second;
        CHECK(harness.executions[name] == 1 + planned);
      }
    }

    // compute_pending equals the not-done set, topologically ordered.
    const auto pending = compute_pending(g, dir / "state");
    std::set<std::string> pending_set(pending.begin(), pending.end());
    for (const auto& t : g.tasks) {
      CHECK(pending_set.count(t.name) == (store.is_done(t.name) ? 0u : 1u));
    }
  }
}

TEST_CASE("scene lock blocks concurrent executors and recovers stale locks") {
  TempDir dir;
  {
    const SceneLock lock(dir.path());
    CHECK_THROWS_WITH_AS(SceneLock(dir.path()), doctest::Contains("locked"),
                         std::runtime_error);
  }
  // Released on destruction.
  CHECK_NOTHROW(SceneLock(dir.path()));

  // A lock held by a dead process is taken over.
  testing::write_text(dir / "scene.lock", "99999999\n");
  CHECK_NOTHROW(SceneLock(dir.path()));
}

TEST_CASE("emit_batch_scripts reproduces the DAG and honors done state") {
  TempDir scripts_dir;
  TempDir scene_dir;
  TaskGraph g = default_graph();
  // Give one task a two-anchor model to exercise the clamp.
  const int lift_idx = g.index_of("lift");
  g.tasks[static_cast<size_t>(lift_idx)].resources =
      anchors({{100, 2, 36, 2, 0}, {1000, 2, 72, 4, 0}});

  SceneRef ref;
  ref.id = "scene42";
  ref.dir = scene_dir.path();
  ref.frames = 13796;
  emit_batch_scripts(g, {ref}, scripts_dir.path());

  // One script per task on a fresh scene; #DEP lines rebuild the edges.
  std::map<std::string, std::set<std::string>> rebuilt;
  std::map<std::string, std::string> res_lines;
  for (const auto& t : g.tasks) {
    const auto path = scripts_dir / ("scene42_" + t.name + ".sh");
    REQUIRE(std::filesystem::exists(path));
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line)) {
      if (line.rfind("#DEP ", 0) == 0) rebuilt[t.name].insert(line.substr(5));
      if (line.rfind("#RES ", 0) == 0) res_lines[t.name] = line;
    }
  }
  for (const auto& t : g.tasks)
    CHECK(rebuilt[t.name] == std::set<std::string>(t.deps.begin(), t.deps.end()));

  // The 13796-frame scene clamps to the last anchor.
  CHECK(res_lines["lift"] == "#RES cpus=2 ram_gb=72 hours=4 gpus=0");

  // Completed tasks emit no script.
  const StateStore store(scene_dir / "state");
  for (const auto& t : g.tasks) {
    TaskState s;
    s.status = TaskStatus::kDone;
    store.write_done_marker(t.name);
    store.store(t.name, s);
  }
  TempDir fresh_scripts;
  emit_batch_scripts(g, {ref}, fresh_scripts.path());
  CHECK(std::filesystem::is_empty(fresh_scripts.path()));
}

TEST_CASE("pipeline config parsing") {
  TempDir dir;
  SUBCASE("defaults with command overrides") {
    const auto path = testing::write_text(dir / "pipeline.json", R"({
      "max_parallel": 3,
      "min_votes": 1.5,
      "sources": {"gsam": 2.0},
      "commands": {"gsam": "run-gsam {scene_dir}"}
    })");
    const PipelineConfig cfg = load_pipeline_config(path);
    CHECK(cfg.max_parallel == 3);
    CHECK(cfg.min_votes == 1.5);
    CHECK(cfg.source_weights.at("gsam") == 2.0);
    CHECK(cfg.graph.spec("gsam").command == "run-gsam {scene_dir}");
    CHECK(cfg.graph.tasks.size() == default_graph().tasks.size());
  }
  SUBCASE("explicit task list replaces the default graph") {
    const auto path = testing::write_text(dir / "pipeline.json", R"({
      "tasks": [
        {"name": "a", "kind": "command", "command": "true"},
        {"name": "b", "deps": ["a"],
         "resources": {"anchors": [{"frames": 10, "cpus": 4, "ram_gb": 8, "hours": 1, "gpus": 0}]}}
      ]
    })");
    const PipelineConfig cfg = load_pipeline_config(path);
    CHECK(cfg.graph.tasks.size() == 2);
    CHECK(cfg.graph.spec("b").deps == std::vector<std::string>{"a"});
    CHECK(cfg.graph.spec("b").resources.anchors[0].cpus == 4);
  }
  SUBCASE("unknown command target is rejected") {
    const auto path = testing::write_text(dir / "pipeline.json",
                                          R"({"commands": {"nope": "true"}})");
    CHECK_THROWS(load_pipeline_config(path));
  }
}
