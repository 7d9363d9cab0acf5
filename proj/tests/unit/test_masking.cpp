#include <doctest.h>

#include <random>

#include "realm/error.hpp"
#include "realm/masking.hpp"

using namespace realm;
using namespace realm::masking;

namespace {

// Chebyshev-ball dilation by direct neighbourhood search.
PatchMask chebyshev_oracle(const PatchMask& m, int r) {
  PatchMask out(m.rows, m.cols);
  for (int y = 0; y < m.rows; ++y)
    for (int x = 0; x < m.cols; ++x)
      for (int dy = -r; dy <= r && !out.at(y, x); ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          const int yy = y + dy, xx = x + dx;
          if (yy >= 0 && yy < m.rows && xx >= 0 && xx < m.cols && m.at(yy, xx)) {
            out.set(y, x);
            break;
          }
        }
  return out;
}

PatchMask random_mask(std::mt19937_64& rng, int n, double density) {
  PatchMask m(n, n);
  std::bernoulli_distribution b(density);
  for (auto& v : m.values) v = b(rng);
  return m;
}

repr::OccupancyGrid occ(int h, int w) { return {h, w, std::vector<std::uint8_t>(static_cast<std::size_t>(h) * w, 0)}; }

}  // namespace

TEST_CASE("patch_activity_mask: patch boundaries at 448 / 14") {
  auto o = occ(448, 448);
  o.values[13 * 448 + 13] = 1;
  auto m = patch_activity_mask(o, 14);
  CHECK(m.rows == 32);
  CHECK(m.size() == 1024);
  CHECK(m.active() == 1);
  CHECK(m.at(0, 0) == 1);

  o.values.assign(o.values.size(), 0);
  o.values[14 * 448 + 13] = 1;
  m = patch_activity_mask(o, 14);
  CHECK(m.active() == 1);
  CHECK(m.at(1, 0) == 1);
  CHECK(m.values[32] == 1);

  o.values.assign(o.values.size(), 1);
  CHECK(patch_activity_mask(o, 14).active() == 1024);
}

TEST_CASE("patch_activity_mask pads partial patches and is monotone") {
  auto o = occ(15, 29);
  o.values[14 * 29 + 28] = 1;
  const auto m = patch_activity_mask(o, 14);
  CHECK(m.rows == 2);
  CHECK(m.cols == 3);
  CHECK(m.at(1, 2) == 1);

  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    auto a = occ(56, 56);
    for (auto& v : a.values) v = rng() % 50 == 0;
    auto b = a;
    for (auto& v : b.values) v |= rng() % 40 == 0;
    CHECK(patch_activity_mask(a, 14).subset_of(patch_activity_mask(b, 14)));
  }
}

TEST_CASE("dilate: hand cases") {
  PatchMask m(32, 32);
  m.set(16, 16);
  CHECK(dilate(m, 1).active() == 9);
  PatchMask c(32, 32);
  c.set(0, 0);
  const auto d = dilate(c, 1);
  CHECK(d.active() == 4);
  CHECK(d.at(0, 1) == 1);
  CHECK(d.at(1, 0) == 1);
  CHECK(d.at(1, 1) == 1);
  std::mt19937_64 rng(2);
  const auto r = random_mask(rng, 32, 0.1);
  CHECK(dilate(r, 0) == r);
}

TEST_CASE("dilate agrees with the Chebyshev oracle and composes additively") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto m = random_mask(rng, 32, 0.002 + 0.05 * static_cast<double>(rng() % 10) / 10.0);
    const int r = static_cast<int>(rng() % 7);
    REQUIRE(dilate(m, r) == chebyshev_oracle(m, r));
    if (trial % 10 == 0) {
      const int a = static_cast<int>(rng() % 4), b = static_cast<int>(rng() % 4);
      CHECK(dilate(dilate(m, a), b) == dilate(m, a + b));
    }
  }
}

TEST_CASE("curriculum: default step schedule") {
  const MaskSchedule s;
  CHECK(s.radius_at(0) == 0);
  CHECK(s.radius_at(9) == 0);
  CHECK(s.radius_at(10) == 2);
  CHECK(s.radius_at(14) == 2);
  CHECK(s.radius_at(15) == 4);
  CHECK(s.radius_at(19) == 4);
  CHECK(s.radius_at(20) == 6);
  CHECK(s.radius_at(1000) == 6);

  PatchMask base(32, 32);
  base.set(5, 9);
  CHECK(mask_at_epoch(base, 9, s) == base);
  CHECK(mask_at_epoch(base, 15, s) == dilate(base, 4));
  CHECK(mask_at_epoch(base, 25, s) == dilate(base, 6));
}

TEST_CASE("curriculum: linear form and parsing") {
  const auto lin = MaskSchedule::parse_linear("alpha:0.01,sigma_max:6");
  CHECK(lin.radius_at(0, 99) == 0);
  CHECK(lin.radius_at(0, 100) == 1);
  CHECK(lin.radius_at(0, 100000) == 6);
  const auto steps = MaskSchedule::parse_steps("10:2,15:4,20:6");
  CHECK(steps.steps == MaskSchedule{}.steps);
  CHECK(MaskSchedule::parse_steps(steps.to_string()).steps == steps.steps);
  CHECK_THROWS_AS(MaskSchedule::parse_steps("10:4,15:2"), Error);
  CHECK_THROWS_AS(MaskSchedule::parse_steps("ten:2"), Error);
}

TEST_CASE("mask_at_epoch is monotone in epoch") {
  std::mt19937_64 rng(8);
  const MaskSchedule s;
  for (int trial = 0; trial < 50; ++trial) {
    const auto base = random_mask(rng, 16, 0.03);
    PatchMask prev = mask_at_epoch(base, 0, s);
    for (int e = 1; e < 30; ++e) {
      const auto cur = mask_at_epoch(base, e, s);
      CHECK(prev.subset_of(cur));
      prev = cur;
    }
  }
}

TEST_CASE("token dropout") {
  DropoutSpec spec;
  spec.seed = 42;
  CHECK(sample_token_dropout(1024, spec, 7, 3).size() == 1024);
  const auto kept = sample_token_dropout(1024, spec, 8, 3);
  CHECK(kept.size() == 717);
  CHECK(std::is_sorted(kept.begin(), kept.end()));
  CHECK(std::adjacent_find(kept.begin(), kept.end()) == kept.end());
  CHECK(kept == sample_token_dropout(1024, spec, 8, 3));
  CHECK(kept != sample_token_dropout(1024, spec, 8, 4));
  CHECK(kept != sample_token_dropout(1024, spec, 9, 3));

  DropoutSpec none;
  none.rho = 0.0;
  CHECK(sample_token_dropout(64, none, 50, 0).size() == 64);
}
