#include "serialreg/series.hpp"

#include "serialreg/pipeline.hpp"
#include "serialreg/synthetic.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>

using namespace serialreg;

namespace {

const Affine2D kIdentity = Affine2D::identity();

bool is_exact_identity(const Affine2D &a) { return a.m == kIdentity.m; }

std::vector<Affine2D> random_chain(oracles::TestRng &rng, int pairs) {
  std::vector<Affine2D> out;
  for (int i = 0; i < pairs; ++i) out.push_back(oracles::random_affine(rng, 20, 8));
  return out;
}

} // namespace

TEST_SUITE("series") {

TEST_CASE("select_middle") {
  CHECK(select_middle(5) == 2);
  CHECK(select_middle(1) == 0);
  CHECK(select_middle(4) == 2); // floor convention for even counts
  CHECK_THROWS_AS(select_middle(0), EmptySeries);
}

TEST_CASE("propagate: identity chains stay identity") {
  const std::vector<Affine2D> pairs(6);
  const auto global = propagate(pairs, select_middle(7));
  for (const auto &g : global) CHECK(is_exact_identity(g));
}

TEST_CASE("propagate: unit translations accumulate by distance to middle") {
  const std::vector<Affine2D> pairs(4, Affine2D::translation(1, 0));
  const auto global = propagate(pairs, 2);
  CHECK(is_exact_identity(global[2]));
  CHECK(global[4].m == Affine2D::translation(2, 0).m);
  CHECK(global[3].m == Affine2D::translation(1, 0).m);
  CHECK(std::abs(global[1].m[2] - (-1.0)) < 1e-12);
  CHECK(std::abs(global[0].m[2] - (-2.0)) < 1e-12);
}

TEST_CASE("propagate matches step-by-step chaining for random chains") {
  oracles::TestRng rng(91);
  for (int count = 2; count <= 15; ++count) {
    const auto pairs = random_chain(rng, count - 1);
    const int mid = select_middle(count);
    const auto global = propagate(pairs, mid);
    CHECK(is_exact_identity(global[mid]));
    for (int t = 0; t < count; ++t) {
      for (int k = 0; k < 5; ++k) {
        const Point2D p{rng.uniform(-50, 50), rng.uniform(-50, 50)};
        const Point2D via_global = apply_point(global[t], p);
        const Point2D via_chain = oracles::chain_point(pairs, mid, t, p);
        CHECK(std::abs(via_global.x - via_chain.x) < 1e-9);
        CHECK(std::abs(via_global.y - via_chain.y) < 1e-9);
      }
    }
  }
}

TEST_CASE("propagate: locality across the middle") {
  oracles::TestRng rng(92);
  auto pairs = random_chain(rng, 8);
  const int mid = 4;
  const auto before = propagate(pairs, mid);
  pairs[6] = oracles::random_affine(rng); // k=6 is on the far side from t<=mid
  const auto after = propagate(pairs, mid);
  for (int t = 0; t <= mid; ++t) {
    CHECK(before[t].m == after[t].m);
  }
  CHECK(before[7].m != after[7].m);
}

TEST_CASE("propagate: singular pair transform is rejected") {
  std::vector<Affine2D> pairs(3);
  pairs[0] = Affine2D::scaling(0, 0); // below the middle, must be inverted
  CHECK_THROWS_AS(propagate(pairs, 2), SingularTransform);
}

TEST_CASE("error accumulation grows away from the middle") {
  // noisy unit translations; corner error of the global transform vs the
  // noise-free chain should increase with |t - middle| in rank
  const int count = 9, mid = 4;
  std::vector<double> err_by_distance(5, 0.0);
  std::vector<int> n_by_distance(5, 0);
  for (int seed = 0; seed < 100; ++seed) {
    oracles::TestRng rng(5000 + seed);
    std::vector<Affine2D> truth(count - 1, Affine2D::translation(3, 0));
    std::vector<Affine2D> noisy;
    for (const auto &t : truth) {
      noisy.push_back(compose(
          t, Affine2D::translation(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5))));
    }
    const auto g_true = propagate(truth, mid);
    const auto g_noisy = propagate(noisy, mid);
    for (int t = 0; t < count; ++t) {
      const int d = std::abs(t - mid);
      err_by_distance[d] += oracles::corner_error(g_true[t], g_noisy[t], 100, 100);
      n_by_distance[d] += 1;
    }
  }
  std::vector<double> mean(5);
  for (int d = 0; d < 5; ++d) mean[d] = err_by_distance[d] / n_by_distance[d];
  // rank correlation between distance and mean error is positive
  double corr = 0;
  for (int d = 1; d < 5; ++d) corr += (mean[d] > mean[d - 1]) ? 1 : -1;
  CHECK(corr > 0);
  CHECK(mean[0] == 0.0);
}

TEST_CASE("assemble_series: basic shapes and errors") {
  const auto one = assemble_series({"a"}, {});
  CHECK(one.middle_index == 0);
  REQUIRE(one.global_transforms.size() == 1);
  CHECK(is_exact_identity(one.global_transforms[0]));

  oracles::TestRng rng(93);
  const Affine2D m0 = oracles::random_affine(rng);
  const auto two = assemble_series({"a", "b"}, {m0});
  CHECK(two.middle_index == 1);
  const Point2D p{7, -3};
  const Point2D via = apply_point(two.global_transforms[0], p);
  const Point2D expect = oracles::chain_point({m0}, 1, 0, p);
  CHECK(std::abs(via.x - expect.x) < 1e-9);
  CHECK(std::abs(via.y - expect.y) < 1e-9);

  CHECK_THROWS_AS(assemble_series({"a", "b", "c"}, {m0}), LengthMismatch);
  CHECK_THROWS_AS(assemble_series({}, {}), EmptySeries);
}

TEST_CASE("series JSON round trip preserves matrices exactly") {
  oracles::TestRng rng(94);
  SeriesRegistration reg =
      assemble_series({"s0", "s1", "s2", "s3"}, random_chain(rng, 3));
  reg.downsample = {1.0, 2.0, 1.0, 1.5};
  reg.spacing_um = {1.0, 1.0, 1.0, 1.0};
  PairDiagnostics d;
  d.stage1_ok = true;
  d.inlier_count = 17;
  d.final_metric = 1.25;
  reg.pair_diagnostics = {d, d, d};
  const SeriesRegistration back = series_from_json(series_to_json(reg));
  REQUIRE(back.section_ids == reg.section_ids);
  CHECK(back.middle_index == reg.middle_index);
  for (std::size_t i = 0; i < reg.pair_transforms.size(); ++i) {
    CHECK(back.pair_transforms[i].m == reg.pair_transforms[i].m);
  }
  for (std::size_t i = 0; i < reg.global_transforms.size(); ++i) {
    CHECK(back.global_transforms[i].m == reg.global_transforms[i].m);
  }
  CHECK(back.downsample == reg.downsample);
  CHECK(back.pair_diagnostics.size() == 3);
  CHECK(back.pair_diagnostics[1].inlier_count == 17);
}

TEST_CASE("register_pair: self-registration is near identity") {
  PhantomSpec spec;
  spec.seed = 81;
  spec.width = 320;
  spec.height = 128;
  const ImageGrid img = generate_phantom(spec).image;
  const PairResult res = register_pair(img, img, {});
  CHECK(oracles::corner_error(res.transform, Affine2D::identity(), img.width,
                              img.height) <= 0.5);
  CHECK(res.diagnostics.stage1_ok);
  CHECK(!res.diagnostics.used_identity_fallback);
}

TEST_CASE("register_pair: two-stage beats stage 1 alone on a planted warp") {
  PhantomSpec spec;
  spec.seed = 82;
  spec.width = 384;
  spec.height = 144;
  const double cx = 192, cy = 72;
  const Affine2D g =
      compose(compose(Affine2D::translation(-cx, -cy),
                      Affine2D::rotation(6.0 * M_PI / 180.0)),
              Affine2D::translation(cx + 9, cy - 5));
  const SyntheticSeries pair = make_series(spec, 2, {g}, {});
  const PreprocessOptions opts;
  const ImageGrid fixed = preprocess(pair.sections[0], 1.0, opts, 1024).image;
  const ImageGrid moving = preprocess(pair.sections[1], 1.0, opts, 1024).image;

  PairConfig two_stage;
  const PairResult full = register_pair(fixed, moving, two_stage);
  PairConfig s1_only;
  s1_only.method = RegistrationMethod::stage1_only;
  const PairResult stage1 = register_pair(fixed, moving, s1_only);

  const double err_full = oracles::corner_error(full.transform, g, 384, 144);
  const double err_s1 = oracles::corner_error(stage1.transform, g, 384, 144);
  CHECK(err_full <= 1.0);
  CHECK(err_full <= err_s1);
}

TEST_CASE("register_pair: tolerates 30% occlusion") {
  PhantomSpec spec;
  spec.seed = 83;
  spec.width = 384;
  spec.height = 144;
  const Affine2D g = Affine2D::translation(7, -4);
  SeriesArtifacts artifacts;
  artifacts.occlusion_fraction = 0.3;
  const SyntheticSeries pair = make_series(spec, 2, {g}, artifacts);
  const PreprocessOptions opts;
  const ImageGrid fixed = preprocess(pair.sections[0], 1.0, opts, 1024).image;
  const ImageGrid moving = preprocess(pair.sections[1], 1.0, opts, 1024).image;
  const PairResult res = register_pair(fixed, moving, {});
  CHECK(oracles::corner_error(res.transform, g, 384, 144) <= 3.0);
}

TEST_CASE("register_pair: stage-1 failure falls back to identity-init stage 2") {
  // unrelated noise: stage 1 cannot find consensus, stage 2 still returns
  oracles::TestRng rng(84);
  ImageGrid a = make_image(160, 96), b = make_image(160, 96);
  for (auto &v : a.data) v = static_cast<float>(rng.uniform());
  for (auto &v : b.data) v = static_cast<float>(rng.uniform());
  const PairResult res = register_pair(a, b, {});
  CHECK(!res.diagnostics.stage1_ok);
  CHECK(res.diagnostics.used_identity_fallback);
  CHECK(res.transform.finite());

  // stage1_only on the same pair is a hard failure
  PairConfig s1;
  s1.method = RegistrationMethod::stage1_only;
  CHECK_THROWS_AS(register_pair(a, b, s1), PairRegistrationFailure);
}

TEST_CASE("method strings round trip") {
  for (auto m : {RegistrationMethod::stage1_only, RegistrationMethod::stage2_only,
                 RegistrationMethod::two_stage}) {
    CHECK(method_from_string(to_string(m)) == m);
  }
  CHECK_THROWS_AS(method_from_string("banana"), ParseError);
}

} // TEST_SUITE
