#include <cmath>
#include <numbers>

#include "doctest.h"
#include "support.hpp"
#include "tensorgrade/grading.hpp"

using namespace tensorgrade;
using tgtest::Rng;

namespace {

Volume constant_field(const Dims& d, const Sym3& s) {
  std::vector<double> v;
  for (std::size_t i = 0; i < d[0] * d[1] * d[2]; ++i) v.insert(v.end(), s.c.begin(), s.c.end());
  return Volume(d, {1, 1, 1}, 6, std::move(v));
}

TemplateEntry entry(const Volume& v, std::string id, double age, Label label, std::string scan = "s0") {
  return {std::make_shared<const Volume>(v), SubjectMeta{std::move(id), std::move(scan), age, label}};
}

RoiMask random_mask(Rng& rng, const Dims& d, double p) {
  std::vector<std::uint8_t> occ(d[0] * d[1] * d[2]);
  for (auto& o : occ) o = rng.uniform() < p ? 1 : 0;
  occ[rng.index(occ.size())] = 1;
  return RoiMask(d, occ);
}

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

} // namespace

TEST_CASE("patch distance examples") {
  const Dims d{3, 3, 3};
  const Volume a = constant_field(d, tensor_log(Sym3{{2, 2, 2, 0, 0, 0}}));
  const Volume b = constant_field(d, Sym3{});
  CHECK(patch_distance(a, a, {1, 1, 1}, 1) == 0.0);
  CHECK(patch_distance(a, b, {1, 1, 1}, 1) == doctest::Approx(27 * std::sqrt(3.0) * std::log(2.0)).epsilon(1e-13));
  CHECK(27 * std::sqrt(3.0) * std::log(2.0) == doctest::Approx(32.415).epsilon(1e-5));
  CHECK(patch_distance(a, b, {1, 1, 1}, 0) == log_distance_voxel(a.voxel(13), b.voxel(13)));
  // Corner patches are clipped to the 2x2x2 inside the grid.
  CHECK(patch_distance(a, b, {0, 0, 0}, 1) == doctest::Approx(8 * std::sqrt(3.0) * std::log(2.0)).epsilon(1e-13));
  // The whole-patch variant is the norm of the concatenated difference.
  CHECK(patch_distance(a, b, {1, 1, 1}, 1, DistanceMode::WholePatch) ==
        doctest::Approx(std::sqrt(27.0) * std::sqrt(3.0) * std::log(2.0)).epsilon(1e-13));
  CHECK_THROWS_AS(patch_distance(a, b, {3, 0, 0}, 1), GradingError);
}

TEST_CASE("patch distance is a metric") {
  Rng rng(21, 0);
  const Dims d{4, 4, 4};
  for (int i = 0; i < 200; ++i) {
    const Volume x = tgtest::random_log_field(rng, d), y = tgtest::random_log_field(rng, d),
                 z = tgtest::random_log_field(rng, d);
    const Index3 c{rng.index(4), rng.index(4), rng.index(4)};
    for (auto mode : {DistanceMode::PerVoxel, DistanceMode::WholePatch}) {
      const double xy = patch_distance(x, y, c, 1, mode), yx = patch_distance(y, x, c, 1, mode);
      CHECK(xy == yx);
      CHECK(xy <= patch_distance(x, z, c, 1, mode) + patch_distance(z, y, c, 1, mode) + 1e-12);
    }
  }
}

TEST_CASE("grade from distances") {
  // d1 = h labeled +1, d2 = 2h labeled -1.
  const std::vector<double> d{0.7, 1.4}, y{1.0, -1.0};
  CHECK(std::abs(grade_from_distances(d, y) - std::tanh(0.5)) <= 1e-12);
  CHECK(std::tanh(0.5) == doctest::Approx(0.46212).epsilon(1e-5));

  CHECK(grade_from_distances(std::vector<double>{1.0, 1.0}, y) == 0.0);
  CHECK(grade_from_distances(std::vector<double>{0.3, 5.0, 2.0}, std::vector<double>{1, 1, 1}) == 1.0);
  // An exact match takes all the weight.
  CHECK(grade_from_distances(std::vector<double>{0.0, 0.5}, y) == 1.0);
  // Scaling every distance leaves the grade unchanged.
  CHECK(grade_from_distances(std::vector<double>{1.5, 2.25}, y) ==
        doctest::Approx(grade_from_distances(std::vector<double>{3.0, 4.5}, y)).epsilon(1e-15));
  CHECK_THROWS_AS(grade_from_distances(std::vector<double>{}, std::vector<double>{}), GradingError);
}

TEST_CASE("grade_map matches the naive reference bit for bit") {
  Rng rng(22, 0);
  const Dims d{4, 4, 4};
  for (int inst = 0; inst < 25; ++inst) {
    const std::size_t nt = 4 + rng.index(5);
    const RoiMask mask = random_mask(rng, d, 0.6);
    std::vector<TemplateEntry> entries;
    std::vector<Volume> fields;
    std::vector<double> y;
    for (std::size_t t = 0; t < nt; ++t) {
      fields.push_back(tgtest::random_log_field(rng, d));
      const Label l = t % 2 == 0 ? Label::Control : Label::Disease;
      y.push_back(to_int(l));
      entries.push_back(entry(fields.back(), "t" + std::to_string(t), 40, l));
    }
    const TemplateLibrary lib(entries, mask);
    const Volume s = tgtest::random_log_field(rng, d);
    for (std::size_t radius : {0u, 1u, 2u}) {
      const auto ref = tgtest::naive_grade_map(s, fields, y, mask, radius);
      for (unsigned threads : {1u, 3u}) {
        const GradingMap g = grade_map(s, lib, radius, DistanceMode::PerVoxel, threads);
        for (std::size_t i = 0; i < ref.size(); ++i) {
          if (mask.contains(i)) {
            CHECK(same_bits(g.at(i), ref[i]));
            CHECK(g.at(i) >= -1.0);
            CHECK(g.at(i) <= 1.0);
          } else {
            CHECK(std::isnan(g.at(i)));
          }
        }
      }
    }
  }
}

TEST_CASE("grading properties") {
  Rng rng(23, 0);
  const Dims d{4, 3, 3};
  const RoiMask mask = RoiMask::full(d);
  std::vector<TemplateEntry> entries, flipped, permuted;
  for (int t = 0; t < 6; ++t) {
    const Volume f = tgtest::random_log_field(rng, d);
    const Label l = t < 3 ? Label::Control : Label::Disease;
    entries.push_back(entry(f, "t" + std::to_string(t), 40, l));
    flipped.push_back(entry(f, "t" + std::to_string(t), 40, l == Label::Control ? Label::Disease : Label::Control));
  }
  permuted = {entries[4], entries[1], entries[5], entries[0], entries[3], entries[2]};
  const Volume s = tgtest::random_log_field(rng, d);
  const GradingMap g = grade_map(s, TemplateLibrary(entries, mask), 1);
  const GradingMap gf = grade_map(s, TemplateLibrary(flipped, mask), 1);
  const GradingMap gp = grade_map(s, TemplateLibrary(permuted, mask), 1);
  for (std::size_t i = 0; i < g.values().size(); ++i) {
    CHECK(gf.at(i) == -g.at(i));
    CHECK(gp.at(i) == doctest::Approx(g.at(i)).epsilon(1e-14));
    CHECK(grade_voxel(s, TemplateLibrary(entries, mask), s.voxel_of(i), 1) == g.at(i));
  }

  // A subject equal to one template takes that template's label where it matches exactly.
  const GradingMap self = grade_map(*entries[4].log_field, TemplateLibrary(entries, mask), 1);
  for (double v : self.in_mask()) CHECK(v == -1.0);

  // One template: constant sign.
  const GradingMap one = grade_map(s, TemplateLibrary({entries[0]}, mask), 1);
  for (double v : one.in_mask()) CHECK(v == 1.0);

  // Single-voxel ROI.
  std::vector<std::uint8_t> occ(d[0] * d[1] * d[2], 0);
  occ[7] = 1;
  const RoiMask single(d, occ);
  const GradingMap gs = grade_map(s, TemplateLibrary(entries, single), 1);
  CHECK(gs.in_mask().size() == 1);
  CHECK(gs.at(7) == grade_voxel(s, TemplateLibrary(entries, single), s.voxel_of(7), 1));
  CHECK(gs.to_volume().at(0, 0, 0) == 0.0);
}

TEST_CASE("library validation") {
  const Dims d{2, 2, 2};
  const Volume f = constant_field(d, Sym3{});
  const RoiMask m = RoiMask::full(d);
  CHECK_THROWS_AS(TemplateLibrary({entry(f, "a", 40, Label::Unlabeled)}, m), GradingError);
  CHECK_THROWS_AS(TemplateLibrary({entry(f, "a", 40, Label::Control), entry(f, "a", 41, Label::Disease)}, m),
                  GradingError);
  CHECK_NOTHROW(TemplateLibrary({entry(f, "a", 40, Label::Control), entry(f, "a", 41, Label::Disease, "s1")}, m));
  CHECK_THROWS_AS(TemplateLibrary({entry(constant_field({3, 2, 2}, Sym3{}), "a", 40, Label::Control)}, m),
                  GradingError);
  CHECK_THROWS_AS(grade_map(constant_field({3, 2, 2}, Sym3{}), TemplateLibrary({entry(f, "a", 40, Label::Control)}, m),
                            1),
                  GradingError);
}

TEST_CASE("build_library") {
  const Dims d{2, 2, 2};
  const Volume f = constant_field(d, Sym3{});
  const RoiMask m = RoiMask::full(d);
  SubjectMeta query{"q", "s0", 40.0, Label::Unlabeled};

  SUBCASE("nearest ages win") {
    std::vector<TemplateEntry> pool{entry(f, "c1", 39, Label::Control), entry(f, "c2", 60, Label::Control),
                                    entry(f, "c3", 41, Label::Control), entry(f, "h1", 50, Label::Disease),
                                    entry(f, "h2", 45, Label::Disease)};
    const TemplateLibrary lib = build_library(pool, query, 2, m);
    std::vector<std::string> ids;
    for (const auto& e : lib.entries()) ids.push_back(e.meta.subject_id);
    CHECK(ids == std::vector<std::string>{"c1", "h2", "c3", "h1"});
  }
  SUBCASE("ties break on subject id") {
    std::vector<TemplateEntry> pool{entry(f, "cb", 42, Label::Control), entry(f, "ca", 38, Label::Control),
                                    entry(f, "h", 40, Label::Disease)};
    const TemplateLibrary lib = build_library(pool, query, 1, m);
    CHECK(lib.entries()[0].meta.subject_id == "ca");
  }
  SUBCASE("exact pool is taken whole") {
    std::vector<TemplateEntry> pool;
    for (int i = 0; i < 50; ++i) {
      pool.push_back(entry(f, "c" + std::to_string(i), 20 + i, Label::Control));
      pool.push_back(entry(f, "h" + std::to_string(i), 90 - i, Label::Disease));
    }
    const TemplateLibrary lib = build_library(pool, query, 50, m);
    CHECK(lib.size() == 100);
    CHECK(lib.count(Label::Control) == 50);
  }
  SUBCASE("own scans are excluded") {
    std::vector<TemplateEntry> pool{entry(f, "q", 40, Label::Control, "a"), entry(f, "q", 40, Label::Control, "b"),
                                    entry(f, "q", 40, Label::Disease, "c"), entry(f, "c1", 70, Label::Control),
                                    entry(f, "h1", 70, Label::Disease)};
    const TemplateLibrary lib = build_library(pool, query, 1, m);
    for (const auto& e : lib.entries()) CHECK(e.meta.subject_id != "q");
    CHECK_THROWS_AS(build_library(pool, query, 2, m), GradingError);
    for (const auto& e : library_from_pool(pool, query, m).entries()) CHECK(e.meta.subject_id != "q");
  }
  SUBCASE("library order is independent of the query age") {
    std::vector<TemplateEntry> pool;
    for (int i = 0; i < 6; ++i) {
      pool.push_back(entry(f, "c" + std::to_string(i), 30 + 5 * i, Label::Control));
      pool.push_back(entry(f, "h" + std::to_string(i), 32 + 5 * i, Label::Disease));
    }
    const SubjectMeta young{"y", "s", 20, Label::Unlabeled}, old{"o", "s", 80, Label::Unlabeled};
    CHECK(build_library(pool, young, 6, m).key() == build_library(pool, old, 6, m).key());
  }
}

TEST_CASE("leave-k-out template grading") {
  Rng rng(24, 0);
  const Dims d{3, 3, 3};
  const RoiMask m = RoiMask::full(d);

  SUBCASE("two opposite templates") {
    const TemplateLibrary lib({entry(tgtest::random_log_field(rng, d), "a", 40, Label::Control),
                               entry(tgtest::random_log_field(rng, d), "b", 40, Label::Disease)},
                              m);
    const auto maps = grade_templates(lib, 1, 1);
    for (double v : maps[0].in_mask()) CHECK(v == -1.0);
    for (double v : maps[1].in_mask()) CHECK(v == 1.0);
    CHECK_THROWS_AS(grade_templates(lib, 1, 2), GradingError);
    CHECK_THROWS_AS(grade_templates(lib, 1, 0), GradingError);
  }
  SUBCASE("each template is graded against the library minus its group") {
    std::vector<TemplateEntry> entries;
    for (int t = 0; t < 7; ++t)
      entries.push_back(entry(tgtest::random_log_field(rng, d), "t" + std::to_string(t), 40,
                              t % 2 ? Label::Disease : Label::Control));
    const TemplateLibrary lib(entries, m);
    for (std::size_t k : {1u, 3u}) {
      const auto maps = grade_templates(lib, 1, k, DistanceMode::PerVoxel, 2);
      REQUIRE(maps.size() == 7);
      for (std::size_t t = 0; t < 7; ++t) {
        std::vector<std::size_t> group;
        for (std::size_t g = (t / k) * k; g < std::min((t / k) * k + k, std::size_t{7}); ++g) group.push_back(g);
        const GradingMap ref = grade_map(*entries[t].log_field, lib.without(group), 1);
        for (std::size_t i = 0; i < ref.values().size(); ++i) CHECK(same_bits(maps[t].at(i), ref.at(i)));
      }
    }
  }
}

TEST_CASE("grading map storage") {
  std::vector<std::uint8_t> occ{1, 0, 1, 1, 0, 0, 1, 1};
  const RoiMask m({2, 2, 2}, occ);
  const GradingMap g(m, {1, 1, 1}, {0.5, 9.0, -0.5, 1.0, 7.0, 7.0, -1.0, 0.0});
  CHECK(std::isnan(g.at(1)));
  CHECK(g.mean() == doctest::Approx(0.0));
  const Volume v = g.to_volume();
  CHECK(v.at(1, 0, 0) == 0.0);
  const GradingMap back = GradingMap::from_volume(v, m);
  CHECK(back.in_mask() == g.in_mask());
  CHECK_THROWS_AS(GradingMap(m, {1, 1, 1}, {2.0, 0, 0, 0, 0, 0, 0, 0}), GradingError);
}

TEST_CASE("distance mode names") {
  CHECK(distance_mode_from_string("per-voxel") == DistanceMode::PerVoxel);
  CHECK(distance_mode_from_string("whole-patch") == DistanceMode::WholePatch);
  CHECK(to_string(DistanceMode::WholePatch) == "whole-patch");
  CHECK_THROWS_AS(distance_mode_from_string("patch"), GradingError);
}
