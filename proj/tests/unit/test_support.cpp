#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <random>

#include "helpers.hpp"
#include "realm/checkpoint.hpp"
#include "realm/config.hpp"
#include "realm/error.hpp"
#include "realm/raster.hpp"

using namespace realm;

TEST_CASE("student checkpoint round trip") {
  const auto c = model::StudentConfig::toy();
  const auto teacher = model::make_teacher(c, 1);
  auto student = model::make_student(teacher, 2);
  student.mask_token.mutable_value().data[3] = 0.125;
  const auto bytes = ckpt::serialize(ckpt::save_student(student, teacher));
  const auto loaded = ckpt::load_student(ckpt::parse(bytes));
  CHECK(loaded.student.config.d == c.d);
  CHECK(loaded.student.mask_token.value().data[3] == 0.125);
  std::vector<int> all(64);
  std::iota(all.begin(), all.end(), 0);
  std::mt19937_64 rng(3);
  Tensor grid({5, 112, 112});
  std::normal_distribution<double> n;
  for (auto& v : grid.data) v = n(rng);
  // float32 storage: compare reloaded models against each other, and against
  // the original within single precision.
  const auto a = model::student_forward(loaded.student, grid, all);
  const auto b = model::student_forward(ckpt::load_student(ckpt::parse(bytes)).student, grid, all);
  CHECK(a.patches == b.patches);
  const auto o = model::student_forward(student, grid, all);
  for (std::size_t i = 0; i < o.patches.size(); ++i) CHECK(a.patches[i] == doctest::Approx(o.patches[i]).epsilon(1e-4));
  CHECK(ckpt::serialize(ckpt::save_student(loaded.student, loaded.teacher)) == bytes);

  auto broken = bytes;
  broken[0] = 'Z';
  CHECK_THROWS_WITH_AS(ckpt::parse(broken), doctest::Contains("BadMagic"), Error);
  broken = bytes;
  broken.resize(bytes.size() / 2);
  CHECK_THROWS_WITH_AS(ckpt::parse(broken), doctest::Contains("TruncatedFile"), Error);
}

TEST_CASE("head checkpoints") {
  const auto seg = heads::make_seg_head(16, 11, 4);
  const auto back = ckpt::load_head(ckpt::parse(ckpt::serialize(ckpt::save_seg_head(seg))));
  CHECK(back.kind == ckpt::HeadCheckpoint::Kind::Seg);
  CHECK(back.seg.classes() == 11);
  const heads::DepthBins bins{32, 2.0, 50.0};
  const auto d = ckpt::load_head(ckpt::parse(ckpt::serialize(ckpt::save_depth_head(heads::make_depth_head(32, 32, 5), bins))));
  CHECK(d.kind == ckpt::HeadCheckpoint::Kind::Depth);
  CHECK(d.bins.count == 32);
  CHECK(d.bins.d_min == 2.0);
  CHECK(d.bins.d_max == 50.0);
}

TEST_CASE("config parsing, validation and environment") {
  const auto cfg = config::RunConfig::parse("seed = 9\n[train]\nlr = 0.5  # fast\nepochs=2\n\n[infer]\nhold = off\n");
  CHECK(cfg.seed() == 9);
  CHECK(cfg.number("train.lr") == 0.5);
  CHECK(cfg.integer("train.epochs") == 2);
  CHECK(!cfg.flag("infer.hold"));
  CHECK(cfg.resolved().find("train.lr = 0.5\n") != std::string::npos);

  CHECK_THROWS_WITH_AS(config::RunConfig::parse("train.bogus = 1\n"), doctest::Contains("train.bogus"), Error);
  CHECK_THROWS_WITH_AS(config::RunConfig::parse("train.lr = fast\n"), doctest::Contains("train.lr"), Error);
  CHECK_THROWS_WITH_AS(config::RunConfig::parse("geometry.preset = huge\n"), doctest::Contains("geometry.preset"), Error);
  CHECK_THROWS_WITH_AS(config::RunConfig::parse("no equals sign\n"), doctest::Contains("ConfigError"), Error);
  config::RunConfig bad;
  bad.set("train.grad_clip", "0");
  CHECK_THROWS_WITH_AS(config::train_config(bad), doctest::Contains("ConfigError"), Error);

  config::RunConfig env;
  setenv("REALM_SEED", "1234", 1);
  env.apply_environment();
  unsetenv("REALM_SEED");
  CHECK(env.seed() == 1234);

  const auto toy = config::RunConfig::load(std::string(REALM_SOURCE_DIR) + "/configs/toy.cfg");
  const auto t = config::train_config(toy);
  const auto ref = distill::TrainConfig::toy();
  CHECK(t.epochs == ref.epochs);
  CHECK(t.steps_per_epoch == ref.steps_per_epoch);
  CHECK(t.effective_batch() == ref.effective_batch());
  CHECK(t.lr == ref.lr);
  CHECK(t.seed == ref.seed);
  CHECK(config::geometry(config::RunConfig::parse("geometry.preset = paper\n")).d == 768);
}

TEST_CASE("raster formats round trip") {
  const auto dir = test::scratch("raster");
  Tensor depth({3, 5});
  for (std::size_t i = 0; i < depth.size(); ++i) depth.data[i] = 0.5 + static_cast<double>(i);
  raster::write_pfm((dir / "d.pfm").string(), depth);
  CHECK(raster::read_pfm((dir / "d.pfm").string()) == depth);
  Tensor labels({4, 2}, {0, 1, 2, 3, 255, 10, 7, 0});
  raster::write_pgm((dir / "l.pgm").string(), labels);
  CHECK(raster::read_pgm((dir / "l.pgm").string()) == labels);
  raster::write_ppm((dir / "c.ppm").string(), Tensor({2, 2, 3}, 0.5));
  CHECK(raster::read_bytes((dir / "c.ppm").string()).size() == std::string("P6\n2 2\n255\n").size() + 12);
  const std::string s = "hello";
  CHECK(raster::fnv1a64_hex({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()}) == "a430d84680aabd0b");
  CHECK_THROWS_WITH_AS(raster::read_pfm((dir / "missing.pfm").string()), doctest::Contains("IoError"), Error);
  raster::write_text((dir / "x.pfm").string(), "P6 nope");
  CHECK_THROWS_WITH_AS(raster::read_pfm((dir / "x.pfm").string()), doctest::Contains("BadMagic"), Error);
}
