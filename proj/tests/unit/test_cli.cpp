#include <doctest.h>

#include <filesystem>
#include <json.hpp>
#include <sstream>

#include "helpers.hpp"
#include "realm/cli.hpp"
#include "realm/raster.hpp"
#include "realm/matching.hpp"
#include "realm/representation.hpp"
#include "realm/synthetic.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace realm;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

const std::string kToy = std::string(REALM_SOURCE_DIR) + "/configs/toy.cfg";

json manifest(const fs::path& p) { return json::parse(raster::read_text(p.string())); }

// Short distillation shared by the checkpoint-consuming tests.
const fs::path& student_checkpoint() {
  static const fs::path path = [] {
    const auto dir = test::scratch("cli_student");
    const auto r = run({"distill", "--config", kToy, "--set", "train.epochs=1", "--set", "train.steps_per_epoch=2", "--out",
                        (dir / "student.rckp").string()});
    REQUIRE(r.code == 0);
    return dir / "student.rckp";
  }();
  return path;
}

}  // namespace

TEST_CASE("cli encode: one RVXG per count window") {
  const auto dir = test::scratch("cli_encode");
  events::EventStream s{64, 48, {}};
  for (std::uint64_t i = 0; i < 300'001; ++i)
    s.events.push_back({i, static_cast<std::uint16_t>(i % 64), static_cast<std::uint16_t>(i % 48), static_cast<std::int8_t>(i % 3 ? 1 : -1)});
  events::write_events_file((dir / "s.revt").string(), s);
  const auto r = run({"encode", "--events", (dir / "s.revt").string(), "--window", "count:150000", "--out", (dir / "o").string()});
  CHECK(r.code == 0);
  CHECK(fs::exists(dir / "o" / "window_00000.rvxg"));
  CHECK(fs::exists(dir / "o" / "window_00001.rvxg"));
  CHECK(!fs::exists(dir / "o" / "window_00002.rvxg"));
  const auto g = repr::read_voxel_grid_file((dir / "o" / "window_00000.rvxg").string());
  CHECK(g.values.shape == Shape{5, 48, 64});
  const auto m = manifest(dir / "o" / "encode.manifest.json");
  CHECK(m["windows"] == 2);
  CHECK(m["inputs"][0]["fnv1a64"] == raster::file_hash((dir / "s.revt").string()));
  CHECK(m["config"].get<std::string>().find("window.spec = count:150000") != std::string::npos);
  CHECK(fs::exists(dir / "o" / "encode.config.cfg"));
}

TEST_CASE("cli encode: empty stream warns and succeeds; corrupt file fails with BadMagic") {
  const auto dir = test::scratch("cli_encode_edge");
  events::write_events_file((dir / "e.revt").string(), events::EventStream{4, 4, {}});
  const auto r = run({"encode", "--events", (dir / "e.revt").string(), "--out", (dir / "o").string()});
  CHECK(r.code == 0);
  CHECK(r.err.find("warning") != std::string::npos);
  int rvxg = 0;
  for (const auto& e : fs::directory_iterator(dir / "o")) rvxg += e.path().extension() == ".rvxg";
  CHECK(rvxg == 0);

  raster::write_text((dir / "bad.revt").string(), "JUNKJUNKJUNK");
  const auto bad = run({"encode", "--events", (dir / "bad.revt").string(), "--out", (dir / "o2").string()});
  CHECK(bad.code == cli::kIo);
  CHECK(bad.err.find("BadMagic") != std::string::npos);
}

TEST_CASE("cli exit codes") {
  const auto dir = test::scratch("cli_codes");
  CHECK(run({"distill", "--set", "train.nope=1", "--out", (dir / "x").string()}).code == cli::kValidation);
  CHECK(run({"distill", "--set", "train.lr=-1", "--out", (dir / "x").string()}).code == cli::kValidation);
  CHECK(run({"frobnicate"}).code == cli::kValidation);
  CHECK(run({"encode", "--events", (dir / "missing.revt").string(), "--out", (dir / "o").string()}).code == cli::kIo);
  CHECK(run({"--version"}).code == 0);
}

TEST_CASE("cli distill is byte-reproducible") {
  const auto a = test::scratch("cli_distill_a"), b = test::scratch("cli_distill_b");
  for (const auto& d : {a, b}) {
    const auto r = run({"distill", "--config", kToy, "--set", "train.epochs=2", "--out", (d / "s.rckp").string()});
    REQUIRE(r.code == 0);
  }
  CHECK(raster::read_text((a / "distill.loss.csv").string()) == raster::read_text((b / "distill.loss.csv").string()));
  CHECK(raster::file_hash((a / "s.rckp").string()) == raster::file_hash((b / "s.rckp").string()));
  const auto m = manifest(a / "distill.manifest.json");
  CHECK(m["steps"] == 8);
  CHECK(m["seed"] == 7);
  CHECK(m["outputs"].size() == 2);
  // The embedded config alone reproduces the run.
  const auto c = test::scratch("cli_distill_c");
  raster::write_text((c / "replay.cfg").string(), m["config"].get<std::string>());
  REQUIRE(run({"distill", "--config", (c / "replay.cfg").string(), "--out", (c / "s.rckp").string()}).code == 0);
  CHECK(raster::read_text((c / "distill.loss.csv").string()) == raster::read_text((a / "distill.loss.csv").string()));
}

TEST_CASE("cli eval-match on the synthetic fixture") {
  const auto dir = test::scratch("cli_match");
  const auto r = run({"eval-match", "--config", kToy, "--out", dir.string()});
  REQUIRE(r.code == 0);
  const auto m = manifest(dir / "eval-match.manifest.json");
  CHECK(m["auc"]["5"].get<double>() >= 0.99);

  // File-based route: one pair written out and read back.
  synth::TwoViewSpec spec;
  const auto scene = synth::synth_two_view(3, spec);
  raster::write_text((dir / "p.csv").string(), match::correspondences_csv(scene.corrs));
  std::ostringstream rot;
  rot.precision(17);
  for (int i = 0; i < 9; ++i) rot << (i ? "," : "") << scene.rotation(i / 3, i % 3);
  raster::write_text((dir / "gt.txt").string(), rot.str() + "\n");
  const auto f = run({"eval-match", "--corrs", (dir / "p.csv").string(), "--gt-rotations", (dir / "gt.txt").string(),
                      "--out", (dir / "f").string()});
  REQUIRE(f.code == 0);
  CHECK(manifest(dir / "f" / "eval-match.manifest.json")["auc"]["5"].get<double>() >= 0.99);
}

TEST_CASE("cli infer depth with hold over [full, empty]") {
  const auto dir = test::scratch("cli_infer");
  REQUIRE(run({"synth", "--config", kToy, "--windows", "3", "--blank", "1", "--out", (dir / "ev.revt").string()}).code == 0);
  REQUIRE(run({"train-head", "--config", kToy, "--kind", "depth", "--set", "head.depth.steps=3", "--checkpoint",
               student_checkpoint().string(), "--out", (dir / "depth.rckp").string()})
              .code == 0);
  const auto r = run({"infer", "--config", kToy, "--task", "depth", "--hold", "on", "--checkpoint", student_checkpoint().string(),
                      "--head", (dir / "depth.rckp").string(), "--events", (dir / "ev.revt").string(), "--out",
                      (dir / "o").string()});
  REQUIRE(r.code == 0);
  const auto m = manifest(dir / "o" / "infer.manifest.json");
  REQUIRE(m["frames"].size() == 2);
  CHECK(m["frames"][0]["held"] == false);
  CHECK(m["frames"][1]["held"] == true);
  CHECK(m["frames"][1]["events"] == 0);
  const auto a = raster::read_bytes((dir / "o" / "window_00000.pfm").string());
  CHECK(a == raster::read_bytes((dir / "o" / "window_00001.pfm").string()));
  const auto d = raster::read_pfm((dir / "o" / "window_00000.pfm").string());
  CHECK(d.shape == Shape{112, 112});
  for (double v : d.data) {
    CHECK(v >= 1.0);
    CHECK(v <= 81.0);
  }

  const auto off = run({"infer", "--config", kToy, "--task", "depth", "--hold", "off", "--checkpoint",
                        student_checkpoint().string(), "--head", (dir / "depth.rckp").string(), "--events",
                        (dir / "ev.revt").string(), "--out", (dir / "off").string()});
  REQUIRE(off.code == 0);
  CHECK(manifest(dir / "off" / "infer.manifest.json")["frames"][1]["held"] == false);

  const auto wrong = run({"infer", "--task", "seg", "--checkpoint", student_checkpoint().string(), "--head",
                          (dir / "depth.rckp").string(), "--events", (dir / "ev.revt").string(), "--out", (dir / "w").string()});
  CHECK(wrong.code == cli::kValidation);
}

TEST_CASE("cli seg head, seg inference, viz") {
  const auto dir = test::scratch("cli_seg");
  REQUIRE(run({"synth", "--config", kToy, "--windows", "2", "--out", (dir / "ev.revt").string()}).code == 0);
  REQUIRE(run({"train-head", "--config", kToy, "--kind", "seg", "--set", "head.seg.steps=3", "--checkpoint",
               student_checkpoint().string(), "--out", (dir / "seg.rckp").string()})
              .code == 0);
  CHECK(fs::exists(dir / "train-head-seg.loss.csv"));
  REQUIRE(run({"infer", "--config", kToy, "--task", "seg", "--checkpoint", student_checkpoint().string(), "--head",
               (dir / "seg.rckp").string(), "--events", (dir / "ev.revt").string(), "--out", (dir / "o").string()})
              .code == 0);
  const auto labels = raster::read_pgm((dir / "o" / "window_00000.pgm").string());
  CHECK(labels.shape == Shape{112, 112});
  for (double v : labels.data) CHECK(v < 11);
  REQUIRE(run({"viz", "--checkpoint", student_checkpoint().string(), "--events", (dir / "ev.revt").string(), "--window",
               "time:33", "--out", (dir / "v").string()})
              .code == 0);
  CHECK(fs::exists(dir / "v" / "window_00000_pca.ppm"));
}

TEST_CASE("cli eval-seg and eval-depth on hand-made rasters") {
  const auto dir = test::scratch("cli_eval");
  raster::write_pgm((dir / "p.pgm").string(), Tensor({2, 2}, {0, 1, 1, 1}));
  raster::write_pgm((dir / "g.pgm").string(), Tensor({2, 2}, {0, 0, 1, 1}));
  auto r = run({"eval-seg", "--set", "seg.classes=2", "--pred", (dir / "p.pgm").string(), "--gt", (dir / "g.pgm").string(),
                "--out", (dir / "s").string()});
  REQUIRE(r.code == 0);
  auto m = manifest(dir / "s" / "eval-seg.manifest.json");
  CHECK(m["accuracy"].get<double>() == doctest::Approx(0.75));
  CHECK(m["miou"].get<double>() == doctest::Approx((0.5 + 2.0 / 3.0) / 2.0));

  raster::write_pfm((dir / "p.pfm").string(), Tensor({1, 2}, {6.0, 0.0}));
  raster::write_pfm((dir / "g.pfm").string(), Tensor({1, 2}, {5.0, 15.0}));
  r = run({"eval-depth", "--pred", (dir / "p.pfm").string(), "--gt", (dir / "g.pfm").string(), "--out", (dir / "d").string()});
  REQUIRE(r.code == 0);
  m = manifest(dir / "d" / "eval-depth.manifest.json");
  CHECK(m["abs_error_m"].get<double>() == doctest::Approx(1.0));
}

TEST_CASE("cli bench follows the 5 + 50 protocol; REALM_SEED overrides") {
  const auto dir = test::scratch("cli_bench");
  setenv("REALM_SEED", "99", 1);
  const auto r = run({"bench", "--out", dir.string()});
  unsetenv("REALM_SEED");
  REQUIRE(r.code == 0);
  const auto m = manifest(dir / "bench.manifest.json");
  CHECK(m["seed"] == 99);
  CHECK(m["warmup"] == 5);
  CHECK(m["samples"] == 50);
  CHECK(m["fps"].get<double>() > 0.0);
  CHECK(m["mean_ms"].get<double>() > 0.0);
  CHECK(m["median_ms"].get<double>() > 0.0);
}
