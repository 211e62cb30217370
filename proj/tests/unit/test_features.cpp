#include "serialreg/features.hpp"

#include "serialreg/synthetic.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace serialreg;

namespace {

Keypoint unit_keypoint(double x, double y, std::vector<float> desc) {
  double norm = 0;
  for (float v : desc) norm += static_cast<double>(v) * v;
  norm = std::sqrt(norm);
  for (auto &v : desc) v = static_cast<float>(v / norm);
  return {{x, y}, 1.0, std::move(desc)};
}

// keypoint cloud with descriptors that only match their own counterpart
std::vector<Keypoint> distinct_cloud(oracles::TestRng &rng, int n, int dim = 16) {
  std::vector<Keypoint> kps;
  for (int i = 0; i < n; ++i) {
    std::vector<float> d(dim, 0.0f);
    d[i % dim] = 1.0f;
    d[(i * 7 + 3) % dim] = static_cast<float>(0.3 + 0.4 * ((i / dim) % 3));
    kps.push_back(unit_keypoint(rng.uniform(0, 200), rng.uniform(0, 200), d));
  }
  return kps;
}

MatchSet identity_matches(int n) {
  MatchSet m;
  for (int i = 0; i < n; ++i) m.pairs.push_back({i, i, 1.0});
  return m;
}

} // namespace

TEST_SUITE("features") {

TEST_CASE("detect_keypoints: constant image has no structure") {
  const ImageGrid img = make_image(64, 64, 1.0, 0.4f);
  CHECK(detect_keypoints(img, {}).empty());
}

TEST_CASE("detect_keypoints: bright square yields corner keypoints") {
  ImageGrid img = make_image(100, 100, 1.0, 0.05f);
  for (int y = 30; y < 70; ++y) {
    for (int x = 30; x < 70; ++x) img.at(x, y) = 0.9f;
  }
  const auto kps = detect_keypoints(img, {});
  REQUIRE(kps.size() >= 4);
  const Point2D corners[4] = {{30, 30}, {69, 30}, {30, 69}, {69, 69}};
  for (const auto &kp : kps) {
    double best = 1e9;
    for (const auto &c : corners) {
      best = std::min(best,
                      std::hypot(kp.position.x - c.x, kp.position.y - c.y));
    }
    CHECK(best <= 3.0);
  }
  // descriptors are unit length
  for (const auto &kp : kps) {
    double norm = 0;
    for (float v : kp.descriptor) norm += static_cast<double>(v) * v;
    CHECK(std::abs(std::sqrt(norm) - 1.0) < 1e-6);
  }
}

TEST_CASE("detect_keypoints: cap and determinism") {
  PhantomSpec spec;
  spec.seed = 3;
  spec.width = 320;
  spec.height = 120;
  const ImageGrid img = generate_phantom(spec).image;
  FeatureConfig cfg;
  cfg.max_keypoints = 25;
  const auto a = detect_keypoints(img, cfg);
  CHECK(a.size() <= 25);
  const auto b = detect_keypoints(img, cfg);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].position.x == b[i].position.x);
    CHECK(a[i].response == b[i].response);
    CHECK(a[i].descriptor == b[i].descriptor);
  }
  // sorted by descending response
  for (std::size_t i = 1; i < a.size(); ++i) {
    CHECK(a[i - 1].response >= a[i].response);
  }
}

TEST_CASE("match_keypoints: identical lists self-match with top scores") {
  oracles::TestRng rng(5);
  const auto kps = distinct_cloud(rng, 24);
  const MatchSet m = match_keypoints(kps, kps, {});
  REQUIRE(m.pairs.size() == kps.size());
  for (const auto &p : m.pairs) {
    CHECK(p.index_a == p.index_b);
    CHECK(p.score >= 1.0 - 1e-6);
  }
}

TEST_CASE("match_keypoints: planted pair among disjoint clusters") {
  // cluster A along one axis, cluster B along another, one exact duplicate
  std::vector<Keypoint> a, b;
  for (int i = 0; i < 8; ++i) {
    std::vector<float> d(16, 0.0f);
    d[0] = 1.0f;
    d[1] = 0.05f * i;
    a.push_back(unit_keypoint(i, 0, d));
  }
  for (int i = 0; i < 8; ++i) {
    std::vector<float> d(16, 0.0f);
    d[7] = 1.0f;
    d[8] = 0.05f * i;
    b.push_back(unit_keypoint(i, 50, d));
  }
  std::vector<float> planted(16, 0.0f);
  planted[3] = 1.0f;
  a.push_back(unit_keypoint(99, 0, planted));
  b.push_back(unit_keypoint(99, 50, planted));
  const MatchSet m = match_keypoints(a, b, {});
  REQUIRE(m.pairs.size() == 1);
  CHECK(m.pairs[0].index_a == 8);
  CHECK(m.pairs[0].index_b == 8);
  CHECK(m.pairs[0].score >= 1.0 - 1e-6);
}

TEST_CASE("match_keypoints: empty inputs and mismatched descriptors") {
  oracles::TestRng rng(6);
  const auto kps = distinct_cloud(rng, 4);
  CHECK(match_keypoints({}, kps, {}).pairs.empty());
  CHECK(match_keypoints(kps, {}, {}).pairs.empty());
  auto bad = distinct_cloud(rng, 4, 8);
  CHECK_THROWS_AS(match_keypoints(kps, bad, {}), DescriptorLengthMismatch);
}

TEST_CASE("match_keypoints is one-to-one") {
  oracles::TestRng rng(7);
  const auto a = distinct_cloud(rng, 40);
  const auto b = distinct_cloud(rng, 40);
  const MatchSet m = match_keypoints(a, b, {});
  std::vector<int> seen_a, seen_b;
  for (const auto &p : m.pairs) {
    seen_a.push_back(p.index_a);
    seen_b.push_back(p.index_b);
  }
  std::sort(seen_a.begin(), seen_a.end());
  std::sort(seen_b.begin(), seen_b.end());
  CHECK(std::adjacent_find(seen_a.begin(), seen_a.end()) == seen_a.end());
  CHECK(std::adjacent_find(seen_b.begin(), seen_b.end()) == seen_b.end());
}

TEST_CASE("estimate_affine_ransac: exact translation") {
  oracles::TestRng rng(8);
  auto a = distinct_cloud(rng, 50);
  auto b = a;
  for (auto &kp : b) {
    kp.position.x += 10;
    kp.position.y += 5;
  }
  const RansacResult res = estimate_affine_ransac(a, b, identity_matches(50), {});
  CHECK(res.inlier_count == 50);
  CHECK(std::abs(res.transform.m[2] - 10.0) < 1e-6);
  CHECK(std::abs(res.transform.m[5] - 5.0) < 1e-6);
  CHECK(std::abs(res.transform.m[0] - 1.0) < 1e-6);
  for (auto flag : res.matches.inlier_mask) CHECK(flag == 1);
}

TEST_CASE("estimate_affine_ransac: noisy inliers plus outliers") {
  oracles::TestRng rng(9);
  const Affine2D g = oracles::random_affine(rng, 20, 12);
  std::vector<Keypoint> a, b;
  int idx = 0;
  for (int i = 0; i < 60; ++i, ++idx) { // inliers with sigma 0.5 noise
    std::vector<float> d(16, 0.0f);
    d[idx % 16] = 1.0f;
    const Point2D p{rng.uniform(0, 400), rng.uniform(0, 300)};
    const Point2D q = apply_point(g, p);
    a.push_back(unit_keypoint(p.x, p.y, d));
    b.push_back(unit_keypoint(q.x + 0.5 * (rng.uniform() * 2 - 1),
                              q.y + 0.5 * (rng.uniform() * 2 - 1), d));
  }
  for (int i = 0; i < 40; ++i, ++idx) { // uniform outliers
    std::vector<float> d(16, 0.0f);
    d[idx % 16] = 1.0f;
    a.push_back(unit_keypoint(rng.uniform(0, 400), rng.uniform(0, 300), d));
    b.push_back(unit_keypoint(rng.uniform(0, 400), rng.uniform(0, 300), d));
  }
  const RansacResult res = estimate_affine_ransac(a, b, identity_matches(100), {});
  CHECK(res.inlier_count >= 50);
  CHECK(oracles::corner_error(res.transform, g, 400, 300) <= 1.5);
  // flagged inliers are consistent with the returned transform
  for (std::size_t i = 0; i < res.matches.pairs.size(); ++i) {
    if (!res.matches.inlier_mask[i]) continue;
    const Point2D q = apply_point(res.transform, a[i].position);
    const double err = std::hypot(q.x - b[i].position.x, q.y - b[i].position.y);
    CHECK(err <= 3.0);
  }
}

TEST_CASE("estimate_affine_ransac: contracts") {
  oracles::TestRng rng(10);
  const auto a = distinct_cloud(rng, 2);
  CHECK_THROWS_AS(estimate_affine_ransac(a, a, identity_matches(2), {}),
                  InsufficientMatches);

  // random correspondences admit no 12-point consensus
  std::vector<Keypoint> c, d;
  for (int i = 0; i < 30; ++i) {
    std::vector<float> desc(16, 0.0f);
    desc[i % 16] = 1.0f;
    c.push_back(unit_keypoint(rng.uniform(0, 500), rng.uniform(0, 500), desc));
    d.push_back(unit_keypoint(rng.uniform(0, 500), rng.uniform(0, 500), desc));
  }
  CHECK_THROWS_AS(estimate_affine_ransac(c, d, identity_matches(30), {}),
                  NoConsensus);
}

TEST_CASE("estimate_affine_ransac: deterministic per seed") {
  oracles::TestRng rng(12);
  const Affine2D g = oracles::random_affine(rng);
  std::vector<Keypoint> a, b;
  for (int i = 0; i < 40; ++i) {
    std::vector<float> d(16, 0.0f);
    d[i % 16] = 1.0f;
    const Point2D p{rng.uniform(0, 300), rng.uniform(0, 300)};
    const Point2D q = apply_point(g, p);
    const bool outlier = i % 4 == 3;
    a.push_back(unit_keypoint(p.x, p.y, d));
    b.push_back(unit_keypoint(outlier ? rng.uniform(0, 300) : q.x,
                              outlier ? rng.uniform(0, 300) : q.y, d));
  }
  FeatureConfig cfg;
  cfg.seed = 424242;
  const RansacResult r1 = estimate_affine_ransac(a, b, identity_matches(40), cfg);
  const RansacResult r2 = estimate_affine_ransac(a, b, identity_matches(40), cfg);
  CHECK(r1.transform.m == r2.transform.m);
  CHECK(r1.matches.inlier_mask == r2.matches.inlier_mask);
}

TEST_CASE("estimate symmetry: reverse direction gives the inverse") {
  oracles::TestRng rng(13);
  const Affine2D g = oracles::random_affine(rng);
  std::vector<Keypoint> a, b;
  for (int i = 0; i < 30; ++i) {
    std::vector<float> d(16, 0.0f);
    d[i % 16] = 1.0f;
    const Point2D p{rng.uniform(0, 300), rng.uniform(0, 300)};
    const Point2D q = apply_point(g, p);
    a.push_back(unit_keypoint(p.x, p.y, d));
    b.push_back(unit_keypoint(q.x, q.y, d));
  }
  const RansacResult fwd = estimate_affine_ransac(a, b, identity_matches(30), {});
  const RansacResult rev = estimate_affine_ransac(b, a, identity_matches(30), {});
  const Affine2D expect = invert(fwd.transform);
  for (int i = 0; i < 9; ++i) {
    CHECK(std::abs(rev.transform.m[i] - expect.m[i]) < 1e-6);
  }
}

TEST_CASE("ransac robustness: 50% exact inliers over 100 seeded trials") {
  int successes = 0;
  for (int trial = 0; trial < 100; ++trial) {
    oracles::TestRng rng(1000 + trial);
    const Affine2D g = oracles::random_affine(rng);
    std::vector<Keypoint> a, b;
    for (int i = 0; i < 60; ++i) {
      std::vector<float> d(16, 0.0f);
      d[i % 16] = 1.0f;
      const Point2D p{rng.uniform(0, 400), rng.uniform(0, 400)};
      const bool inlier = i < 30;
      const Point2D q = inlier
                            ? apply_point(g, p)
                            : Point2D{rng.uniform(0, 400), rng.uniform(0, 400)};
      a.push_back(unit_keypoint(p.x, p.y, d));
      b.push_back(unit_keypoint(q.x, q.y, d));
    }
    FeatureConfig cfg;
    cfg.seed = 77 * trial + 5;
    try {
      const RansacResult res =
          estimate_affine_ransac(a, b, identity_matches(60), cfg);
      if (oracles::corner_error(res.transform, g, 400, 400) <=
          cfg.inlier_tolerance_px) {
        ++successes;
      }
    } catch (const Error &) {
    }
  }
  CHECK(successes >= 99);
}

TEST_CASE("register_pair_features: self-registration is near identity") {
  PhantomSpec spec;
  spec.seed = 21;
  spec.width = 320;
  spec.height = 120;
  const ImageGrid img = generate_phantom(spec).image;
  const Stage1Result res = register_pair_features(img, img, {});
  CHECK(oracles::corner_error(res.transform, Affine2D::identity(), img.width,
                              img.height) <= 1.0);
}

TEST_CASE("register_pair_features: recovers a synthetic warp") {
  PhantomSpec spec;
  spec.seed = 22;
  spec.width = 400;
  spec.height = 160;
  const ImageGrid fixed = generate_phantom(spec).image;
  // moving(p) = fixed(G p): G maps moving coords into the fixed frame
  const Affine2D g = compose(
      compose(Affine2D::translation(-200, -80),
              Affine2D::rotation(15.0 * M_PI / 180.0)),
      Affine2D::translation(200 + 20, 80 - 10));
  const ImageGrid moving = warp_image(invert(g), fixed, 400, 160);
  const Stage1Result res = register_pair_features(fixed, moving, {});
  CHECK(oracles::corner_error(res.transform, g, 400, 160) <= 3.0);
}

TEST_CASE("register_pair_features: unrelated noise fails loudly") {
  oracles::TestRng rng(23);
  ImageGrid a = make_image(200, 120), b = make_image(200, 120);
  for (auto &v : a.data) v = static_cast<float>(rng.uniform());
  for (auto &v : b.data) v = static_cast<float>(rng.uniform());
  CHECK_THROWS_AS(register_pair_features(a, b, {}), Stage1Failure);
  try {
    register_pair_features(a, b, {});
  } catch (const Stage1Failure &e) {
    CHECK(e.diagnostics.keypoints_fixed > 0); // diagnostics carried
  }
}

} // TEST_SUITE
