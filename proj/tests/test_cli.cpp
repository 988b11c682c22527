// End-to-end checks of the command-line surface, driving the real binaries.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "semfuse/fusion3d.hpp"
#include "semfuse/image_io.hpp"
#include "semfuse/ply_io.hpp"
#include "semfuse/render.hpp"
#include "support/test_support.hpp"

using semfuse::testing::TempDir;
namespace fs = std::filesystem;

namespace {

int run(const std::string& cmd) {
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

bool same_bytes(const fs::path& a, const fs::path& b) {
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  if (!fa || !fb) return false;
  std::ostringstream sa, sb;
  sa << fa.rdbuf();
  sb << fb.rdbuf();
  return sa.str() == sb.str();
}

struct SceneFixture {
  TempDir dir;
  fs::path scene;

  explicit SceneFixture(int frames = 9) {
    scene = dir / "scene";
    REQUIRE(run(std::string(MKSCENE_BIN) + " --out " + q(scene) +
                " --frames " + std::to_string(frames) + " > /dev/null") == 0);
  }
};

}  // namespace

TEST_CASE("full pipeline run completes and is idempotent") {
  SceneFixture fx;
  const std::string base = std::string(SEMFUSE_BIN) + " run --scene " + q(fx.scene);
  CHECK(run(base + " > /dev/null 2>&1") == 0);
  CHECK(fs::exists(fx.scene / "labels.ply"));
  CHECK(fs::exists(fx.scene / "mesh.ply"));
  CHECK(fs::exists(fx.scene / "lift_stats.json"));
  CHECK(fs::exists(fx.scene / "stats.json"));
  CHECK(fs::exists(fx.scene / "render" / "000000.png"));

  // The lifted cloud carries labels.
  const auto cloud = semfuse::fusion::read_cloud_ply(fx.scene / "labels.ply");
  REQUIRE(cloud.size() > 500);
  size_t labeled = 0;
  for (const auto l : cloud.label1)
    if (l != 0) ++labeled;
  CHECK(labeled > cloud.size() / 2);

  // A second run resubmits nothing and leaves outputs untouched.
  const auto before = fs::last_write_time(fx.scene / "labels.ply");
  CHECK(run(base + " > /dev/null 2>&1") == 0);
  CHECK(fs::last_write_time(fx.scene / "labels.ply") == before);
}

TEST_CASE("outputs do not depend on the OpenMP thread count") {
  SceneFixture one(7), two(7);
  const std::string bin(SEMFUSE_BIN);
  CHECK(run("OMP_NUM_THREADS=1 " + bin + " run --scene " + q(one.scene) +
            " > /dev/null 2>&1") == 0);
  CHECK(run("OMP_NUM_THREADS=4 " + bin + " run --scene " + q(two.scene) +
            " > /dev/null 2>&1") == 0);
  for (const char* rel : {"mesh.ply", "cloud.ply", "labels.ply", "consensus/000000.png"}) {
    CHECK(same_bytes(one.scene / rel, two.scene / rel));
  }
}

TEST_CASE("pure stages overwrite deterministically") {
  SceneFixture fx;
  const std::string bin(SEMFUSE_BIN);
  CHECK(run(bin + " sync --scene " + q(fx.scene) + " > /dev/null 2>&1") == 0);
  CHECK(run(bin + " fuse --scene " + q(fx.scene) + " > /dev/null 2>&1") == 0);
  fs::copy_file(fx.scene / "cloud.ply", fx.dir / "cloud_first.ply");
  CHECK(run(bin + " fuse --scene " + q(fx.scene) + " > /dev/null 2>&1") == 0);
  CHECK(same_bytes(fx.scene / "cloud.ply", fx.dir / "cloud_first.ply"));
}

TEST_CASE("status reflects progress and run --stage stops early") {
  SceneFixture fx;
  const std::string bin(SEMFUSE_BIN);
  CHECK(run(bin + " run --scene " + q(fx.scene) +
            " --stage consensus > /dev/null 2>&1") == 0);
  CHECK(fs::exists(fx.scene / "consensus" / "000000.png"));
  CHECK(!fs::exists(fx.scene / "labels.ply"));  // lift not requested

  const std::string out = fx.dir.path() / "status.txt";
  CHECK(run(bin + " status --scene " + q(fx.scene) + " > " + out) == 0);
  std::ifstream in(out);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(text.find("consensus") != std::string::npos);
  CHECK(text.find("pending") != std::string::npos);  // lift/render still pending
  CHECK(text.find("done") != std::string::npos);
}

TEST_CASE("eval CLI compares prediction directories against ground truth") {
  SceneFixture fx;
  const std::string bin(SEMFUSE_BIN);
  CHECK(run(bin + " run --scene " + q(fx.scene) + " --stage consensus > /dev/null 2>&1") == 0);

  const fs::path json = fx.dir / "metrics.json";
  CHECK(run(bin + " eval --gt " + q(fx.scene / "gt") + " --pred " + q(fx.scene / "consensus") +
            " --space " + q(fx.scene / "labelspace.csv") + " --out " + q(json) +
            " > /dev/null") == 0);
  std::ifstream in(json);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(text.find("\"miou\"") != std::string::npos);
  CHECK(text.find("\"tacc\"") != std::string::npos);

  // Identical inputs score a perfect tAcc.
  const fs::path perfect = fx.dir / "perfect.json";
  CHECK(run(bin + " eval --gt " + q(fx.scene / "gt") + " --pred " + q(fx.scene / "gt") +
            " --space " + q(fx.scene / "labelspace.csv") + " --out " + q(perfect) +
            " > /dev/null") == 0);
  std::ifstream pin(perfect);
  std::string ptext((std::istreambuf_iterator<char>(pin)), std::istreambuf_iterator<char>());
  CHECK(ptext.find("\"tacc\": 1.0") != std::string::npos);
}

TEST_CASE("test-time-augmentation variant directories merge before voting") {
  SceneFixture fx;
  const std::string bin(SEMFUSE_BIN);
  // Turn one source into two identical TTA variants; unanimity keeps it
  // equivalent to the original single directory.
  const fs::path inter = fx.scene / "intermediate";
  fs::rename(inter / "ovseg", inter / "ovseg_tta0");
  fs::copy(inter / "ovseg_tta0", inter / "ovseg_tta1", fs::copy_options::recursive);
  // The generated pipeline.json points at the plain ovseg path; fall back
  // to the default graph whose stand-ins accept variant directories.
  fs::remove(fx.scene / "pipeline.json");

  CHECK(run(bin + " sync --scene " + q(fx.scene) + " > /dev/null 2>&1") == 0);
  CHECK(run(bin + " consensus --scene " + q(fx.scene) + " > /dev/null 2>&1") == 0);
  CHECK(fs::exists(fx.scene / "consensus" / "000000.png"));

  // Full DAG still runs: the existence stand-ins accept the variant dirs.
  CHECK(run(bin + " run --scene " + q(fx.scene) + " > /dev/null 2>&1") == 0);
}

TEST_CASE("eval CLI accepts labeled-cloud PLY pairs") {
  SceneFixture fx;
  const std::string bin(SEMFUSE_BIN);
  CHECK(run(bin + " run --scene " + q(fx.scene) + " > /dev/null 2>&1") == 0);
  REQUIRE(fs::exists(fx.scene / "labels.ply"));

  const fs::path json = fx.dir / "self.json";
  CHECK(run(bin + " eval --gt " + q(fx.scene / "labels.ply") + " --pred " +
            q(fx.scene / "labels.ply") + " --space " + q(fx.scene / "labelspace.csv") +
            " --out " + q(json) + " > /dev/null") == 0);
  std::ifstream in(json);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(text.find("\"miou\": 1.0") != std::string::npos);
  CHECK(text.find("\"tacc\": 1.0") != std::string::npos);
}

TEST_CASE("missing inputs produce a nonzero exit and a named artifact") {
  TempDir dir;
  const fs::path empty_scene = dir / "empty";
  fs::create_directories(empty_scene);
  const std::string bin(SEMFUSE_BIN);
  const fs::path err = dir / "err.txt";
  CHECK(run(bin + " lift --scene " + q(empty_scene) + " 2> " + q(err) + " > /dev/null") != 0);
  std::ifstream in(err);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(text.find("missing") != std::string::npos);
}

TEST_CASE("emit-scripts writes one script per pending task") {
  SceneFixture fx;
  const fs::path scripts = fx.dir / "scripts";
  CHECK(run(std::string(SEMFUSE_BIN) + " run --scene " + q(fx.scene) + " --emit-scripts " +
            q(scripts) + " > /dev/null 2>&1") == 0);
  size_t count = 0;
  for (const auto& entry : fs::directory_iterator(scripts)) {
    ++count;
    CHECK(entry.path().extension() == ".sh");
  }
  CHECK(count == 12);  // the full default graph is pending
}

TEST_CASE("render obeys a custom colormap and paints unknown ids magenta") {
  SceneFixture fx;
  const std::string bin(SEMFUSE_BIN);
  CHECK(run(bin + " run --scene " + q(fx.scene) + " --stage consensus > /dev/null 2>&1") == 0);
  // A colormap that only covers id 0 forces magenta almost everywhere.
  semfuse::testing::write_text(fx.scene / "colormap.csv", "id,r,g,b\n0,0,0,0\n");
  CHECK(run(bin + " render --scene " + q(fx.scene) + " > /dev/null 2>&1") == 0);
  const auto img = semfuse::read_png_rgb8(fx.scene / "render" / "000000.png");
  size_t magenta = 0;
  for (const auto& px : img.data)
    if (px == semfuse::render::kUnknownColor) ++magenta;
  CHECK(magenta > img.size() / 2);
}
