#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "hit/gradcheck.hpp"
#include "hit/geometry.hpp"

using namespace hit;

namespace {

BBox rand_box(Rng& rng, float min_side = 0.05f) {
  while (true) {
    float x1 = static_cast<float>(rng.uniform(0, 0.9));
    float y1 = static_cast<float>(rng.uniform(0, 0.9));
    float x2 = x1 + static_cast<float>(rng.uniform(min_side, 0.5));
    float y2 = y1 + static_cast<float>(rng.uniform(min_side, 0.5));
    BBox b = BBox::make(x1, y1, x2, y2);
    if (!b.degenerate()) return b;
  }
}

Keypoints wrists_at(float lx, float ly, float rx, float ry, float conf = 1.0f) {
  Keypoints kp;
  for (auto& j : kp.joints) j = {0.5f, 0.5f, 1.0f};
  kp.joints[Keypoints::kLeftWrist] = {lx, ly, conf};
  kp.joints[Keypoints::kRightWrist] = {rx, ry, conf};
  return kp;
}

}  // namespace

TEST_CASE("iou examples") {
  BBox b = BBox::make(0.1f, 0.2f, 0.4f, 0.6f);
  CHECK(iou(b, b) == doctest::Approx(1.0));

  BBox c = BBox::make(0.5f, 0.7f, 0.9f, 0.9f);
  CHECK(iou(b, c) == doctest::Approx(0.0));

  // direct area arithmetic: inter 0.01, union 0.07
  BBox p = BBox::make(0.0f, 0.0f, 0.2f, 0.2f);
  BBox q = BBox::make(0.1f, 0.1f, 0.3f, 0.3f);
  CHECK(iou(p, q) == doctest::Approx(1.0 / 7.0).epsilon(1e-6));
}

TEST_CASE("iou symmetry, range, identity-of-equals") {
  Rng rng(123);
  for (int i = 0; i < 500; ++i) {
    BBox a = rand_box(rng), b = rand_box(rng);
    double ab = iou(a, b), ba = iou(b, a);
    CHECK(ab == doctest::Approx(ba));
    CHECK(ab >= 0.0);
    CHECK(ab <= 1.0);
    CHECK(iou(a, a) == doctest::Approx(1.0));
    if (ab == 1.0) {
      CHECK(a.x1 == doctest::Approx(b.x1));
      CHECK(a.y2 == doctest::Approx(b.y2));
    }
  }
}

TEST_CASE("hand_box hull, margin and degenerate rules") {
  auto h0 = hand_box(wrists_at(0.2f, 0.5f, 0.6f, 0.7f), 0.0f);
  REQUIRE(h0.has_value());
  CHECK(h0->x1 == doctest::Approx(0.2f));
  CHECK(h0->y1 == doctest::Approx(0.5f));
  CHECK(h0->x2 == doctest::Approx(0.6f));
  CHECK(h0->y2 == doctest::Approx(0.7f));

  // hull +- 0.05 * max extent 0.4 = 0.02 per side
  auto h1 = hand_box(wrists_at(0.2f, 0.5f, 0.6f, 0.7f), 0.05f);
  REQUIRE(h1.has_value());
  CHECK(h1->x1 == doctest::Approx(0.18f));
  CHECK(h1->y1 == doctest::Approx(0.48f));
  CHECK(h1->x2 == doctest::Approx(0.62f));
  CHECK(h1->y2 == doctest::Approx(0.72f));

  auto h2 = hand_box(wrists_at(0.5f, 0.5f, 0.5f, 0.5f), 0.0f);
  REQUIRE(h2.has_value());
  CHECK(h2->width() == doctest::Approx(0.02f));
  CHECK(h2->height() == doctest::Approx(0.02f));
  CHECK(h2->cx() == doctest::Approx(0.5f));

  auto h3 = hand_box(wrists_at(0.5f, 0.5f, 0.5f, 0.5f), 0.05f);
  REQUIRE(h3.has_value());
  CHECK(h3->width() == doctest::Approx(0.1f));

  // absent-hands signal under the confidence floor
  CHECK_FALSE(hand_box(wrists_at(0.2f, 0.5f, 0.6f, 0.7f, 0.1f), 0.05f, 0.3f).has_value());
}

TEST_CASE("hand_box always contains both wrists") {
  Rng rng(9);
  for (int i = 0; i < 1000; ++i) {
    float lx = static_cast<float>(rng.uniform(0.05, 0.95));
    float ly = static_cast<float>(rng.uniform(0.05, 0.95));
    float rx = static_cast<float>(rng.uniform(0.05, 0.95));
    float ry = static_cast<float>(rng.uniform(0.05, 0.95));
    float margin = static_cast<float>(rng.uniform(0, 0.3));
    auto hb = hand_box(wrists_at(lx, ly, rx, ry), margin);
    REQUIRE(hb.has_value());
    CHECK(hb->x1 <= lx + 1e-6f);
    CHECK(hb->x2 >= lx - 1e-6f);
    CHECK(hb->x1 <= rx + 1e-6f);
    CHECK(hb->x2 >= rx - 1e-6f);
    CHECK(hb->y1 <= std::min(ly, ry) + 1e-6f);
    CHECK(hb->y2 >= std::max(ly, ry) - 1e-6f);
  }
}

TEST_CASE("roi_align of a constant grid is constant") {
  GraphD g;
  TensorD grid = TensorD::full({3, 5, 7}, 2.5);
  auto out = roi_align(g.leaf(grid), BBox::make(0.11f, 0.27f, 0.83f, 0.62f), 4);
  CHECK(out.value().shape() == Shape{3, 4, 4});
  for (Eigen::Index i = 0; i < out.value().size(); ++i)
    CHECK(out.value().data()[i] == doctest::Approx(2.5).epsilon(1e-9));
}

TEST_CASE("roi_align concentrates a delta cell, hand-evaluated bilinear weights") {
  // 4x4 grid, delta of 2.0 at cell (y=1, x=2); box covering exactly that
  // cell. Sample points land at grid coords {1.75,2.25} x {0.75,1.25},
  // each giving the delta cell bilinear weight 0.5625.
  GraphD g;
  TensorD grid(Shape{1, 4, 4});
  grid.mat()(1, 2) = 2.0;
  auto out = roi_align(g.leaf(grid), BBox::make(0.5f, 0.25f, 0.75f, 0.5f), 1);
  CHECK(out.value().mat()(0, 0) == doctest::Approx(0.5625 * 2.0).epsilon(1e-9));
}

TEST_CASE("roi_align full-image box on 2x2 grid: quadrant dominance vs enumeration") {
  // independent enumeration of the 2x2-per-cell sample points, clamped
  // bilinear, averaged
  auto oracle_cell = [](const Matrix<double>& grid2x2, int py, int px) {
    double acc = 0;
    for (double fy : {0.25, 0.75}) {
      for (double fx : {0.25, 0.75}) {
        double u = (px + fx) / 2.0, v = (py + fy) / 2.0;
        double gx = std::clamp(u * 2.0 - 0.5, 0.0, 1.0);
        double gy = std::clamp(v * 2.0 - 0.5, 0.0, 1.0);
        int x0 = static_cast<int>(std::floor(gx)), y0 = static_cast<int>(std::floor(gy));
        int x1 = std::min(x0 + 1, 1), y1 = std::min(y0 + 1, 1);
        double ax = gx - x0, ay = gy - y0;
        acc += (1 - ax) * (1 - ay) * grid2x2(y0, x0) + ax * (1 - ay) * grid2x2(y0, x1) +
               (1 - ax) * ay * grid2x2(y1, x0) + ax * ay * grid2x2(y1, x1);
      }
    }
    return acc / 4.0;
  };

  Rng rng(31);
  Matrix<double> vals(2, 2);
  vals << rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1);
  GraphD g;
  TensorD grid(Shape{1, 2, 2});
  grid.mat() = vals;
  auto out = roi_align(g.leaf(grid), BBox::make(0.0f, 0.0f, 1.0f, 1.0f), 2);
  for (int py = 0; py < 2; ++py)
    for (int px = 0; px < 2; ++px)
      CHECK(out.value().mat()(py, px) == doctest::Approx(oracle_cell(vals, py, px)).epsilon(1e-12));

  // quadrant dominance: the own-quadrant coefficient is 0.765625
  Matrix<double> delta = Matrix<double>::Zero(2, 2);
  delta(0, 0) = 1.0;
  GraphD g2;
  TensorD dg(Shape{1, 2, 2});
  dg.mat() = delta;
  auto dout = roi_align(g2.leaf(dg), BBox::make(0.0f, 0.0f, 1.0f, 1.0f), 2);
  CHECK(dout.value().mat()(0, 0) == doctest::Approx(0.765625));
  CHECK(dout.value().mat()(0, 1) == doctest::Approx(0.109375));
  CHECK(dout.value().mat()(1, 0) == doctest::Approx(0.109375));
  CHECK(dout.value().mat()(1, 1) == doctest::Approx(0.015625));
}

TEST_CASE("roi_align gradient w.r.t. the feature grid matches finite differences") {
  Rng rng(77);
  for (int trial = 0; trial < 5; ++trial) {
    ParamSetT<double> ps(trial);
    ps.add_uniform("grid", {2, 4, 4}, -1, 1);
    BBox box = rand_box(rng, 0.15f);
    TensorD v(Shape{2 * 3, 3});
    for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = rng.uniform(-1, 1);
    auto build = [&](GraphT<double>& g, BoundParams<double>& bp) {
      auto out = roi_align(bp("grid"), box, 3);
      return sum_all(mul(g.leaf(v), reshape(out, Shape{6, 3})));
    };
    GradCheckOptions opt;
    opt.h = 1e-5;
    opt.tol = 1e-3;
    opt.max_coords_per_tensor = 64;
    CHECK(finite_diff_check(build, ps, opt).pass);
  }
}

TEST_CASE("roi_align rejects a degenerate box, naming it") {
  GraphD g;
  auto grid = g.leaf(TensorD(Shape{1, 4, 4}));
  CHECK_THROWS_AS(roi_align(grid, BBox::make(0.3f, 0.2f, 0.3f, 0.6f), 2), std::invalid_argument);
}

TEST_CASE("filter_objects threshold and overlap rules") {
  std::vector<BBox> persons{BBox::make(0.1f, 0.1f, 0.5f, 0.5f)};
  ScoredBox touching{BBox::make(0.3f, 0.3f, 0.7f, 0.7f), 0.3f, 1};
  ScoredBox strong_far{BBox::make(0.8f, 0.8f, 0.95f, 0.95f), 0.9f, 2};
  ScoredBox weak{BBox::make(0.2f, 0.2f, 0.4f, 0.4f), 0.2f, 3};

  auto kept = filter_objects({touching, strong_far, weak}, persons, 0.25f);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].category == 1);

  CHECK(filter_objects({}, persons, 0.25f).empty());
}

TEST_CASE("filter_objects is a stable subset and monotone in the threshold") {
  Rng rng(55);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<BBox> persons;
    for (int i = 0; i < rng.uniform_int(0, 3); ++i) persons.push_back(rand_box(rng));
    std::vector<ScoredBox> objs;
    for (int i = 0; i < rng.uniform_int(0, 6); ++i)
      objs.push_back({rand_box(rng), static_cast<float>(rng.uniform(0, 1)), i});
    float lo = static_cast<float>(rng.uniform(0, 0.5));
    float hi = lo + static_cast<float>(rng.uniform(0, 0.5));
    auto keep_lo = filter_objects(objs, persons, lo);
    auto keep_hi = filter_objects(objs, persons, hi);
    CHECK(keep_hi.size() <= keep_lo.size());
    // subset of input, order preserved
    size_t cursor = 0;
    for (const auto& k : keep_lo) {
      while (cursor < objs.size() && objs[cursor].category != k.category) ++cursor;
      REQUIRE(cursor < objs.size());
    }
  }
}

TEST_CASE("jitter_box determinism and bounds") {
  BBox b = BBox::make(0.4f, 0.4f, 0.6f, 0.6f);

  Rng r0(1);
  BBox same = jitter_box(b, r0, 0.0f);
  CHECK(same.x1 == b.x1);
  CHECK(same.y2 == b.y2);

  Rng r1(42), r2(42);
  BBox j1 = jitter_box(b, r1, 0.05f);
  BBox j2 = jitter_box(b, r2, 0.05f);
  CHECK(j1.x1 == j2.x1);
  CHECK(j1.y1 == j2.y1);
  CHECK(j1.x2 == j2.x2);
  CHECK(j1.y2 == j2.y2);

  // every coordinate within amount * extent = 0.05 * 0.2 = 0.01
  Rng r3(7);
  for (int i = 0; i < 1000; ++i) {
    BBox j = jitter_box(b, r3, 0.05f);
    CHECK(std::abs(j.x1 - b.x1) <= 0.01f + 1e-6f);
    CHECK(std::abs(j.y1 - b.y1) <= 0.01f + 1e-6f);
    CHECK(std::abs(j.x2 - b.x2) <= 0.01f + 1e-6f);
    CHECK(std::abs(j.y2 - b.y2) <= 0.01f + 1e-6f);
  }

  // post-clamp bound also holds near the image border
  BBox edge = BBox::make(0.0f, 0.0f, 0.3f, 0.2f);
  Rng r4(8);
  for (int i = 0; i < 1000; ++i) {
    BBox j = jitter_box(edge, r4, 0.1f);
    CHECK(std::abs(j.x1 - edge.x1) <= 0.03f + 1e-6f);
    CHECK(std::abs(j.y2 - edge.y2) <= 0.02f + 1e-6f);
    CHECK(j.x1 >= 0.0f);
    CHECK(j.y1 >= 0.0f);
  }
}
