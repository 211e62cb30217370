#include "serialreg/metrics.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>

using namespace serialreg;

TEST_SUITE("metrics") {

TEST_CASE("transform_box: identity, translation, rotation hull") {
  const BoundingBox box{0, 0, 10, 10};
  const BoundingBox same = transform_box(Affine2D::identity(), box);
  CHECK(same.x_min == 0);
  CHECK(same.y_max == 10);

  const BoundingBox shifted = transform_box(Affine2D::translation(5, 0), box);
  CHECK(shifted.x_min == 5);
  CHECK(shifted.x_max == 15);
  CHECK(shifted.y_min == 0);

  // 90 degrees about the origin maps (x, y) -> (-y, x)
  const BoundingBox rot =
      transform_box(Affine2D::rotation(M_PI / 2), BoundingBox{0, 0, 2, 4});
  CHECK(rot.x_min == doctest::Approx(-4).epsilon(1e-12));
  CHECK(rot.y_min == doctest::Approx(0).epsilon(1e-12));
  CHECK(rot.x_max == doctest::Approx(0).epsilon(1e-12));
  CHECK(rot.y_max == doctest::Approx(2).epsilon(1e-12));
}

TEST_CASE("transform_box maps centers exactly") {
  oracles::TestRng rng(101);
  for (int i = 0; i < 30; ++i) {
    const Affine2D a = oracles::random_affine(rng);
    const BoundingBox box{rng.uniform(-20, 0), rng.uniform(-20, 0),
                          rng.uniform(1, 20), rng.uniform(1, 20)};
    const Point2D direct = apply_point(a, box.center());
    const Point2D hull_center = transform_box(a, box).center();
    CHECK(std::abs(direct.x - hull_center.x) < 1e-9);
    CHECK(std::abs(direct.y - hull_center.y) < 1e-9);
  }
}

TEST_CASE("center_distance") {
  const BoundingBox a{0, 0, 20, 20};
  CHECK(center_distance(a, a, 1.0) == 0.0);
  const BoundingBox b{6, 8, 26, 28}; // centers offset by (6, 8): distance 10
  CHECK(center_distance(a, b, 1.0) == doctest::Approx(10.0));
  const BoundingBox c{1, 0, 21, 20}; // offset (1, 0) in px
  CHECK(center_distance(a, c, 2.0) == doctest::Approx(2.0));
  CHECK_THROWS_AS(center_distance(a, b, 0.0), Error);
}

TEST_CASE("box_iou basics and derived value") {
  const BoundingBox a{0, 0, 2, 2};
  CHECK(box_iou(a, a) == 1.0);
  CHECK(box_iou(a, BoundingBox{5, 5, 7, 7}) == 0.0);
  const BoundingBox b{1, 1, 3, 3};
  CHECK(box_iou(a, b) == doctest::Approx(1.0 / 7.0).epsilon(1e-9));
  CHECK(box_iou(a, b) == doctest::Approx(oracles::raster_box_iou(a, b, 2000))
                             .epsilon(1e-3));
}

TEST_CASE("box_iou is symmetric and matches the raster oracle") {
  oracles::TestRng rng(102);
  for (int i = 0; i < 200; ++i) {
    const double x0 = rng.uniform(-20, 20), y0 = rng.uniform(-20, 20);
    const double x1 = rng.uniform(-20, 20), y1 = rng.uniform(-20, 20);
    const BoundingBox a{x0, y0, x0 + rng.uniform(0.5, 15), y0 + rng.uniform(0.5, 15)};
    const BoundingBox b{x1, y1, x1 + rng.uniform(0.5, 15), y1 + rng.uniform(0.5, 15)};
    CHECK(box_iou(a, b) == box_iou(b, a));
    CHECK(std::abs(box_iou(a, b) - oracles::raster_box_iou(a, b, 1000)) < 2e-3);
  }
}

TEST_CASE("inscribed_circle definition") {
  const BoundingCircle c1 = inscribed_circle({0, 0, 4, 2});
  CHECK(c1.cx == 2.0);
  CHECK(c1.cy == 1.0);
  CHECK(c1.r == 1.0);
  const BoundingCircle c2 = inscribed_circle({0, 0, 10, 10});
  CHECK(c2.cx == 5.0);
  CHECK(c2.r == 5.0);
  const BoundingCircle c3 = inscribed_circle({1, 1, 2, 5});
  CHECK(c3.cx == 1.5);
  CHECK(c3.cy == 3.0);
  CHECK(c3.r == 0.5);
}

TEST_CASE("inscribed circle is contained in its box") {
  oracles::TestRng rng(103);
  for (int i = 0; i < 50; ++i) {
    const double x0 = rng.uniform(-10, 10), y0 = rng.uniform(-10, 10);
    const BoundingBox box{x0, y0, x0 + rng.uniform(0.2, 12), y0 + rng.uniform(0.2, 12)};
    const BoundingCircle c = inscribed_circle(box);
    CHECK(c.r <= c.cx - box.x_min + 1e-15);
    CHECK(c.r <= box.x_max - c.cx + 1e-15);
    CHECK(c.r <= c.cy - box.y_min + 1e-15);
    CHECK(c.r <= box.y_max - c.cy + 1e-15);
  }
}

TEST_CASE("identical shapes give unit IoU through either metric") {
  const BoundingBox box{3, 4, 19, 11};
  CHECK(box_iou(box, box) == 1.0);
  CHECK(circle_iou(inscribed_circle(box), inscribed_circle(box)) == 1.0);
}

TEST_CASE("circle_iou: trivial branches") {
  const BoundingCircle a{0, 0, 2};
  CHECK(circle_iou(a, a) == 1.0);
  CHECK(circle_iou(a, BoundingCircle{4, 0, 2}) == 0.0);  // externally tangent
  CHECK(circle_iou(a, BoundingCircle{10, 0, 2}) == 0.0); // disjoint
  // containment: r=1 inside r=2 -> area ratio 1/4
  CHECK(circle_iou(a, BoundingCircle{0.3, 0, 1}) == doctest::Approx(0.25));
}

TEST_CASE("circle_iou: unit circles at distance 1 (Monte Carlo oracle)") {
  const BoundingCircle a{0, 0, 1};
  const BoundingCircle b{1, 0, 1};
  const double closed = circle_iou(a, b);
  CHECK(closed == doctest::Approx(0.2430).epsilon(1e-2));
  const double mc = oracles::mc_circle_iou(a, b, 10'000'000, 12345);
  CHECK(std::abs(closed - mc) < 1e-3);
}

TEST_CASE("circle_iou: symmetry is exact and matches Monte Carlo") {
  oracles::TestRng rng(104);
  for (int i = 0; i < 60; ++i) {
    const BoundingCircle a{rng.uniform(-5, 5), rng.uniform(-5, 5),
                           rng.uniform(0.1, 10)};
    const BoundingCircle b{a.cx + rng.uniform(-12, 12), a.cy + rng.uniform(-12, 12),
                           rng.uniform(0.1, 10)};
    CHECK(circle_iou(a, b) == circle_iou(b, a));
    const double mc = oracles::mc_circle_iou(a, b, 400'000, 999 + i);
    CHECK(std::abs(circle_iou(a, b) - mc) < 5e-3);
  }
}

TEST_CASE("circle_iou: continuity under center perturbation") {
  oracles::TestRng rng(105);
  const double eps = 1e-6;
  for (int i = 0; i < 40; ++i) {
    const BoundingCircle a{0, 0, rng.uniform(0.5, 5)};
    BoundingCircle b{rng.uniform(0.2, 4), rng.uniform(0.2, 4), rng.uniform(0.5, 5)};
    const double base = circle_iou(a, b);
    if (base <= 0.0 || base >= 1.0) continue; // skip degenerate configurations
    b.cx += eps;
    CHECK(std::abs(circle_iou(a, b) - base) <= 10 * eps);
  }
}

TEST_CASE("evaluate_series: identity registration with equal boxes") {
  const SeriesRegistration reg = assemble_series({"s0", "s1", "s2"},
                                                 {Affine2D::identity(),
                                                  Affine2D::identity()});
  GlomerulusTrack track;
  track.glomerulus_id = "g0";
  track.boxes[0] = track.boxes[1] = track.boxes[2] = BoundingBox{10, 10, 40, 35};
  const MetricsReport report = evaluate_series({track}, reg, 1.0);
  REQUIRE(report.rows.size() == 2);
  CHECK(report.distance_mean_um == 0.0);
  CHECK(report.distance_median_um == 0.0);
  CHECK(report.box_iou_mean == 1.0);
  CHECK(report.circle_iou_mean == 1.0);
}

TEST_CASE("evaluate_series: planted offset at identity registration") {
  const SeriesRegistration reg =
      assemble_series({"s0", "s1"}, {Affine2D::identity()});
  GlomerulusTrack track;
  track.glomerulus_id = "g0";
  track.boxes[0] = BoundingBox{30, 40, 80, 90}; // offset (30, 40) from middle's
  track.boxes[1] = BoundingBox{0, 0, 50, 50};
  const MetricsReport report = evaluate_series({track}, reg, 1.0);
  REQUIRE(report.rows.size() == 1);
  CHECK(report.rows[0].distance_um == doctest::Approx(50.0)); // 3-4-5 scaled
}

TEST_CASE("evaluate_series: downsample factors rescale annotations") {
  // working resolution is half the annotation resolution on both sections;
  // M(0) = +10 working px means s0 shows content 20 annotation px ahead
  SeriesRegistration reg =
      assemble_series({"s0", "s1"}, {Affine2D::translation(10, 0)});
  reg.downsample = {2.0, 2.0};
  GlomerulusTrack track;
  track.glomerulus_id = "g0";
  track.boxes[1] = BoundingBox{100, 100, 140, 140};
  track.boxes[0] = BoundingBox{120, 100, 160, 140};
  const MetricsReport report = evaluate_series({track}, reg, 1.0);
  REQUIRE(report.rows.size() == 1);
  CHECK(report.rows[0].distance_um == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(report.rows[0].box_iou == doctest::Approx(1.0));
}

TEST_CASE("evaluate_series: middle-box bookkeeping") {
  const SeriesRegistration reg =
      assemble_series({"s0", "s1", "s2"},
                      {Affine2D::identity(), Affine2D::identity()});
  GlomerulusTrack with_mid, without_mid;
  with_mid.glomerulus_id = "a";
  with_mid.boxes[1] = BoundingBox{0, 0, 10, 10};
  with_mid.boxes[0] = BoundingBox{0, 0, 10, 10};
  without_mid.glomerulus_id = "b";
  without_mid.boxes[0] = BoundingBox{0, 0, 10, 10};
  const MetricsReport report = evaluate_series({with_mid, without_mid}, reg, 1.0);
  CHECK(report.tracks_evaluated == 1);
  CHECK(report.tracks_skipped == 1);
  CHECK_THROWS_AS(evaluate_series({without_mid}, reg, 1.0), NoMiddleAnnotation);
}

TEST_CASE("metrics summary carries the four aggregates") {
  MetricsReport report;
  report.rows.push_back({"g0", 0, "s0", 36.41, 0.65, 0.58});
  report.distance_mean_um = 36.41;
  report.distance_median_um = 19.71;
  report.box_iou_mean = 0.65;
  report.circle_iou_mean = 0.58;
  report.tracks_evaluated = 1;
  const nlohmann::json j = metrics_summary_json(report, "two_stage");
  CHECK(j.at("distance_mean_um").get<double>() == 36.41);
  CHECK(j.at("distance_median_um").get<double>() == 19.71);
  CHECK(j.at("box_iou_mean").get<double>() == 0.65);
  CHECK(j.at("circle_iou_mean").get<double>() == 0.58);
  CHECK(j.at("method").get<std::string>() == "two_stage");
}

TEST_CASE("median uses the even-count midpoint average") {
  const SeriesRegistration reg = assemble_series(
      {"s0", "s1", "s2"}, {Affine2D::translation(2, 0), Affine2D::identity()});
  GlomerulusTrack t1, t2;
  t1.glomerulus_id = "a";
  t1.boxes[1] = BoundingBox{0, 0, 10, 10};
  t1.boxes[0] = BoundingBox{0, 0, 10, 10}; // maps 2 px off
  t2.glomerulus_id = "b";
  t2.boxes[1] = BoundingBox{0, 0, 10, 10};
  t2.boxes[2] = BoundingBox{6, 0, 16, 10}; // 6 px off, stays 6 off
  const MetricsReport report = evaluate_series({t1, t2}, reg, 1.0);
  REQUIRE(report.rows.size() == 2);
  CHECK(report.distance_median_um == doctest::Approx(4.0)); // (2 + 6) / 2
}

TEST_CASE("annotation CSV round trip") {
  const std::string dir = "./test_metrics_out";
  std::filesystem::create_directories(dir);
  const std::string path = dir + "/ann.csv";
  const std::vector<std::string> ids{"s0", "s1", "s2"};
  GlomerulusTrack track;
  track.glomerulus_id = "g7";
  track.boxes[0] = BoundingBox{1.5, 2.25, 10, 20};
  track.boxes[2] = BoundingBox{3, 4, 11.5, 21.5};
  write_annotations_csv(path, "caseX", ids, {track});
  const auto tracks = load_annotations_csv(path, ids);
  REQUIRE(tracks.size() == 1);
  CHECK(tracks[0].glomerulus_id == "g7");
  REQUIRE(tracks[0].boxes.count(0) == 1);
  CHECK(tracks[0].boxes.at(0).x_min == 1.5);
  CHECK(tracks[0].boxes.at(2).y_max == 21.5);
  CHECK(tracks[0].boxes.count(1) == 0);

  // unknown section id and case filtering
  CHECK_THROWS_AS(load_annotations_csv(path, {"other"}), ParseError);
  CHECK(load_annotations_csv(path, ids, "different_case").empty());
  std::filesystem::remove_all(dir);
}

} // TEST_SUITE
