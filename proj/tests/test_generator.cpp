#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <random>

#include "backsplat/generator.hpp"
#include "backsplat/image.hpp"
#include "backsplat/metrics.hpp"
#include "support/oracles.hpp"

using namespace backsplat;
namespace fs = std::filesystem;

namespace {

void octahedron(Eigen::MatrixX3d& verts, Eigen::MatrixX3i& tris) {
  verts.resize(6, 3);
  verts << 0.5, 0, 0, -0.5, 0, 0, 0, 0.5, 0, 0, -0.5, 0, 0, 0, 0.5, 0, 0, -0.5;
  tris.resize(8, 3);
  tris << 0, 2, 4, 2, 1, 4, 1, 3, 4, 3, 0, 4, 2, 0, 5, 1, 2, 5, 3, 1, 5, 0, 3, 5;
}

// Four-dimensional latent: rows 0..2 recolor kernel pairs, row 3 recolors
// and lifts the last pair along its local normal.
GeneratorParams toy_generator() {
  GeneratorParams g;
  Eigen::MatrixX3d verts;
  Eigen::MatrixX3i tris;
  octahedron(verts, tris);
  g.template_vertices = verts;
  g.template_cloud = bind_kernels(verts, tris);
  for (auto& k : g.template_cloud.kernels) k.opacity_logit = 2.0;
  const int nk = static_cast<int>(g.template_cloud.size());
  g.w = Eigen::VectorXd::Zero(4);
  g.latent_map = Eigen::MatrixXd::Zero(4, 6 * nk);
  const Vec3 pat(0.35, -0.25, 0.15);
  for (int r = 0; r < 3; ++r) {
    for (int k = 2 * r; k < 2 * r + 2; ++k) {
      for (int c = 0; c < 3; ++c) g.latent_map(r, 6 * k + 3 + c) = pat(c);
    }
  }
  for (int k = 6; k < 8; ++k) {
    g.latent_map(3, 6 * k + 2) = 0.4;  // mu_local z, along the face normal
    g.latent_map(3, 6 * k + 3) = 0.2;
    g.latent_map(3, 6 * k + 4) = 0.2;
    g.latent_map(3, 6 * k + 5) = -0.3;
  }
  return g;
}

Camera view_cam(double az, double el) {
  return camera_from_orbit(az, el, 2.0, Vec3::Zero(), 55.0, 48, 48);
}

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "backsplat_generator_tests" / name;
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("materialize applies the latent offsets exactly and linearly") {
  GeneratorParams g = toy_generator();
  std::mt19937_64 rng(51);
  Eigen::VectorXd w1(4), w2(4);
  for (int i = 0; i < 4; ++i) {
    w1(i) = oracles::uniform(rng, -1, 1);
    w2(i) = oracles::uniform(rng, -1, 1);
  }

  g.w = w1;
  const SplatCloud c1 = materialize(g);
  const Eigen::VectorXd offsets = g.latent_map.transpose() * w1;
  for (size_t k = 0; k < c1.size(); ++k) {
    const Vec3 dmu = offsets.segment<3>(6 * static_cast<Eigen::Index>(k));
    const Vec3 dcol = offsets.segment<3>(6 * static_cast<Eigen::Index>(k) + 3);
    CHECK((c1.kernels[k].mu_local - (g.template_cloud.kernels[k].mu_local + dmu)).norm() <
          1e-14);
    CHECK((c1.kernels[k].color - (g.template_cloud.kernels[k].color + dcol)).norm() < 1e-14);
    // Fields outside the latent map stay at the template values.
    CHECK(c1.kernels[k].log_scale == g.template_cloud.kernels[k].log_scale);
    CHECK(c1.kernels[k].opacity_logit == g.template_cloud.kernels[k].opacity_logit);
  }

  // Linearity: offsets of a sum are the sum of offsets.
  g.w = w2;
  const SplatCloud c2 = materialize(g);
  g.w = w1 + w2;
  const SplatCloud c12 = materialize(g);
  for (size_t k = 0; k < c12.size(); ++k) {
    const Vec3 want_mu = c1.kernels[k].mu_local + c2.kernels[k].mu_local -
                         g.template_cloud.kernels[k].mu_local;
    CHECK((c12.kernels[k].mu_local - want_mu).norm() < 1e-13);
  }

  g.w = Eigen::VectorXd::Zero(4);
  const SplatCloud c0 = materialize(g);
  for (size_t k = 0; k < c0.size(); ++k) {
    CHECK((c0.kernels[k].mu_local - g.template_cloud.kernels[k].mu_local).norm() == 0.0);
    CHECK((c0.kernels[k].color - g.template_cloud.kernels[k].color).norm() == 0.0);
  }
}

TEST_CASE("generator parameter validation") {
  GeneratorParams g = toy_generator();
  CHECK_NOTHROW(g.validate());

  GeneratorParams bad = g;
  bad.latent_map.conservativeResize(4, 12);
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  bad = g;
  bad.w(1) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  bad = g;
  bad.template_cloud.binding.pop_back();
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("generate composes materialize, globalize and render") {
  GeneratorParams g = toy_generator();
  g.w << 0.5, -0.3, 0.2, 0.4;
  const Camera cam = view_cam(200, 5);
  const Image got = generate(g, cam);
  const Image want = render(globalize(materialize(g), g.template_vertices,
                                      SimilarityTransform::identity(), g.render),
                            cam, g.render);
  CHECK(got.rgb == want.rgb);
  CHECK(got.alpha == want.alpha);
}

TEST_CASE("hybrid sets keep order and origin tags") {
  const Camera cam = view_cam(0, 0);
  std::vector<std::pair<Image, Camera>> ori = {{Image(4, 4, 0.1), cam},
                                               {Image(4, 4, 0.2), cam}};
  std::vector<std::pair<Image, Camera>> renders = {{Image(4, 4, 0.3), cam}};
  const HybridSet set = build_hybrid_set(ori, renders);
  REQUIRE(set.items.size() == 3);
  CHECK(set.count_ori == 2);
  CHECK(set.count_render == 1);
  CHECK(set.items[0].origin == ViewOrigin::ori);
  CHECK(set.items[1].origin == ViewOrigin::ori);
  CHECK(set.items[2].origin == ViewOrigin::render);
  CHECK(set.items[0].image.rgb[0] == 0.1);
  CHECK(set.items[2].image.rgb[0] == 0.3);

  CHECK_THROWS_AS(build_hybrid_set({}, renders), std::invalid_argument);
}

TEST_CASE("inversion recovers the latent behind a set of captures") {
  GeneratorParams prior = toy_generator();
  GeneratorParams truth = prior;
  truth.w << 0.8, -0.5, 0.3, 0.6;

  std::vector<std::pair<Image, Camera>> ori;
  for (const auto& [az, el] :
       {std::pair{120.0, 10.0}, {180.0, 0.0}, {240.0, 10.0}, {90.0, -5.0}}) {
    const Camera cam = view_cam(az, el);
    ori.emplace_back(generate(truth, cam), cam);
  }
  const HybridSet hybrid = build_hybrid_set(ori, {});

  InversionConfig cfg;
  cfg.steps_w = 80;
  cfg.steps_theta = 40;

  const InversionResult res = invert(prior, hybrid, cfg);
  CHECK(res.trace.size() == static_cast<size_t>(cfg.steps_w + cfg.steps_theta + 2));
  CHECK(res.initial_loss == res.trace.front());
  double best = std::numeric_limits<double>::infinity();
  for (double v : res.trace) best = std::min(best, v);
  CHECK(res.final_loss == doctest::Approx(best).epsilon(1e-14));
  CHECK(res.final_loss <= res.initial_loss);
  CHECK(res.final_loss < 0.15 * res.initial_loss);
  CHECK((res.params.w - truth.w).norm() < 0.25 * truth.w.norm());

  const Camera back = view_cam(180, 0);
  CHECK(mean_abs_diff(generate(res.params, back), generate(truth, back)) < 0.01);
}

TEST_CASE("inversion input validation") {
  GeneratorParams g = toy_generator();
  InversionConfig cfg;
  CHECK_THROWS_AS(invert(g, HybridSet{}, cfg), std::invalid_argument);

  const Camera cam = view_cam(180, 0);
  HybridSet mismatched;
  mismatched.items.push_back({Image(10, 10), cam, ViewOrigin::ori});
  CHECK_THROWS_AS(invert(g, mismatched, cfg), std::invalid_argument);

  InversionConfig bad = cfg;
  bad.steps_w = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.lr_w = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.lambda_latent = -1.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("unseeded back cameras are evenly spaced over the rear arc") {
  const Vec3 target(0.1, 0.2, 0.3);
  const auto one = sample_back_cameras(1, 10.0, 2.5, target, 90.0, 32, 24);
  REQUIRE(one.size() == 1);
  CHECK(one[0].azimuth_deg == 180.0);
  CHECK(one[0].elevation_deg == 10.0);
  CHECK(one[0].radius == 2.5);
  CHECK((one[0].target - target).norm() == 0.0);
  CHECK(one[0].focal == 90.0);
  CHECK(one[0].width == 32);
  CHECK(one[0].height == 24);

  const auto three = sample_back_cameras(3, 0.0, 2.0, target, 90.0, 32, 32);
  REQUIRE(three.size() == 3);
  CHECK(three[0].azimuth_deg == 90.0);
  CHECK(three[1].azimuth_deg == 180.0);
  CHECK(three[2].azimuth_deg == 270.0);

  const auto five = sample_back_cameras(5, 0.0, 2.0, target, 90.0, 32, 32);
  for (int i = 0; i < 5; ++i) CHECK(five[i].azimuth_deg == doctest::Approx(90.0 + 45.0 * i));

  CHECK_THROWS_AS(sample_back_cameras(0, 0, 2, target, 90, 32, 32), std::invalid_argument);
}

TEST_CASE("seeded back cameras follow the pinned draw recipe") {
  const Vec3 target = Vec3::Zero();
  const auto cams = sample_back_cameras(6, 5.0, 2.0, target, 90.0, 32, 32, 1234);
  REQUIRE(cams.size() == 6);
  std::mt19937_64 rng(1234);
  for (const Camera& cam : cams) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    CHECK(cam.azimuth_deg == doctest::Approx(90.0 + 180.0 * u).epsilon(1e-15));
    CHECK(cam.azimuth_deg >= 90.0);
    CHECK(cam.azimuth_deg < 270.0);
  }
  const auto again = sample_back_cameras(6, 5.0, 2.0, target, 90.0, 32, 32, 1234);
  for (int i = 0; i < 6; ++i) CHECK(cams[i].azimuth_deg == again[i].azimuth_deg);
  const auto other = sample_back_cameras(6, 5.0, 2.0, target, 90.0, 32, 32, 99);
  bool any_diff = false;
  for (int i = 0; i < 6; ++i) any_diff |= (cams[i].azimuth_deg != other[i].azimuth_deg);
  CHECK(any_diff);
}

TEST_CASE("back view synthesis without a hook is plain generation") {
  GeneratorParams g = toy_generator();
  g.w << 0.4, 0.1, -0.2, 0.3;
  const auto cams = sample_back_cameras(3, 0.0, 2.0, Vec3::Zero(), 55.0, 48, 48);
  const auto views = synthesize_back_views(g, cams);
  REQUIRE(views.size() == 3);
  for (size_t i = 0; i < views.size(); ++i) {
    CHECK(views[i].camera.azimuth_deg == cams[i].azimuth_deg);
    const Image want = generate(g, cams[i]);
    CHECK(views[i].image.rgb == want.rgb);
  }
  CHECK_THROWS_AS(synthesize_back_views(g, {}), std::invalid_argument);
}

TEST_CASE("refinement hook contract") {
  // Baked in by the build; the environment variable covers manual runs.
#ifdef BACKSPLAT_BLUR_TOOL_PATH
  const char* tool = BACKSPLAT_BLUR_TOOL_PATH;
#else
  const char* tool = std::getenv("BACKSPLAT_BLUR_TOOL_PATH");
#endif
  REQUIRE_MESSAGE(tool != nullptr, "BACKSPLAT_BLUR_TOOL_PATH must point at the blur tool");

  GeneratorParams g = toy_generator();
  g.w << 0.5, -0.4, 0.3, 0.5;
  const auto cams = sample_back_cameras(2, 0.0, 2.0, Vec3::Zero(), 55.0, 48, 48);
  const fs::path work = temp_dir("hook_work");

  const auto raw = synthesize_back_views(g, cams);
  const auto refined =
      synthesize_back_views(g, cams, std::string("\"") + tool + "\"", work.string());
  REQUIRE(refined.size() == raw.size());
  for (size_t i = 0; i < refined.size(); ++i) {
    CHECK(refined[i].image.width == raw[i].image.width);
    CHECK(refined[i].image.height == raw[i].image.height);
    CHECK(mean_abs_diff(refined[i].image, raw[i].image) > 1e-5);
    for (double v : refined[i].image.rgb) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
  CHECK(fs::exists(work / "refine_in_0.png"));
  CHECK(fs::exists(work / "refine_out_1.png"));

  // A failing hook surfaces its exit status.
  CHECK_THROWS_WITH_AS(synthesize_back_views(g, cams, "/bin/false", work.string()),
                       doctest::Contains("exit status 1"), std::runtime_error);

  // A hook that changes dimensions is rejected.
  CHECK_THROWS_WITH_AS(
      synthesize_back_views(g, cams, std::string("\"") + tool + "\" --shrink", work.string()),
      doctest::Contains("changed dimensions"), std::runtime_error);
}
