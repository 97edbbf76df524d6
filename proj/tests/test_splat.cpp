#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <random>

#include "backsplat/splat.hpp"
#include "support/oracles.hpp"

using namespace backsplat;

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void flat_square(Eigen::MatrixX3d& verts, Eigen::MatrixX3i& tris) {
  verts.resize(4, 3);
  verts << -0.5, -0.5, 0, 0.5, -0.5, 0, 0.5, 0.5, 0, -0.5, 0.5, 0;
  tris.resize(2, 3);
  tris << 0, 1, 2, 0, 2, 3;
}

SplatCloud random_cloud(const Eigen::MatrixX3i& tris, std::mt19937_64& rng) {
  SplatCloud cloud;
  cloud.triangles = tris;
  for (int t = 0; t < tris.rows(); ++t) {
    GaussianKernel k;
    k.mu_local = oracles::uniform_vec3(rng, -0.3, 0.3);
    k.log_scale = oracles::uniform_vec3(rng, -1.2, -0.4);
    k.rot_local = oracles::uniform_vec3(rng, -0.5, 0.5);
    k.opacity_logit = oracles::uniform(rng, -0.5, 1.5);
    k.color = oracles::uniform_vec3(rng, 0.1, 0.9);
    cloud.kernels.push_back(k);
    cloud.binding.push_back(t);
  }
  return cloud;
}

// Per-pixel reference renderer written straight from the compositing
// contract: project every kernel, linearize its covariance at the mean,
// sort by depth, composite front to back over the background.
Image reference_render(const std::vector<WorldKernel>& kernels, const Camera& cam,
                       const SplatConfig& cfg) {
  struct Item {
    double depth, u, v, alpha;
    Eigen::Matrix2d conic;
    Vec3 color;
  };
  std::vector<Item> items;
  const Mat3 Rwc = cam.world_to_camera();
  for (const WorldKernel& k : kernels) {
    if (!(k.alpha > 0.0)) continue;
    const Projection p = project(cam, k.mean, cfg.eps_near);
    if (p.behind) continue;
    Item it;
    it.depth = p.depth;
    it.u = p.u;
    it.v = p.v;
    it.alpha = k.alpha;
    it.color = k.color;
    Eigen::Matrix<double, 2, 3> Jc;
    const double iz = 1.0 / p.depth;
    const Vec3 q = Rwc * (k.mean - cam.position());
    Jc << cam.focal * iz, 0, -cam.focal * q.x() * iz * iz,
          0, cam.focal * iz, -cam.focal * q.y() * iz * iz;
    const Eigen::Matrix<double, 2, 3> Jw = Jc * Rwc;
    Eigen::Matrix2d S = Jw * k.covariance * Jw.transpose();
    S(0, 0) += cfg.dilation;
    S(1, 1) += cfg.dilation;
    const double off = 0.5 * (S(0, 1) + S(1, 0));
    S(0, 1) = S(1, 0) = off;
    it.conic = S.inverse();
    items.push_back(it);
  }
  std::sort(items.begin(), items.end(),
            [](const Item& a, const Item& b) { return a.depth < b.depth; });
  Image img(cam.width, cam.height);
  const double fs2 = cfg.footprint_sigma * cfg.footprint_sigma;
  for (int y = 0; y < cam.height; ++y) {
    for (int x = 0; x < cam.width; ++x) {
      double T = 1.0;
      Vec3 acc = Vec3::Zero();
      for (const Item& it : items) {
        const Eigen::Vector2d d(x + 0.5 - it.u, y + 0.5 - it.v);
        const double m = d.dot(it.conic * d);
        if (m > fs2) continue;
        const double w = it.alpha * std::exp(-0.5 * m);
        acc += it.color * w * T;
        T *= 1.0 - w;
      }
      acc += cfg.background * T;
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = acc(c);
      img.alpha_at(x, y) = 1.0 - T;
    }
  }
  return img;
}

}  // namespace

TEST_CASE("bind_kernels seeds one prototype kernel per triangle slot") {
  Eigen::MatrixX3d verts;
  Eigen::MatrixX3i tris;
  flat_square(verts, tris);
  const SplatCloud cloud = bind_kernels(verts, tris, 3);
  REQUIRE(cloud.size() == 6);
  REQUIRE(cloud.binding.size() == 6);
  CHECK(cloud.triangles == tris);
  for (size_t i = 0; i < cloud.size(); ++i) {
    CHECK(cloud.binding[i] == static_cast<int>(i / 3));
    const GaussianKernel& k = cloud.kernels[i];
    CHECK(k.mu_local.norm() == 0.0);
    CHECK((k.log_scale - Vec3::Constant(std::log(0.5))).norm() == 0.0);
    CHECK(k.rot_local.norm() == 0.0);
    CHECK(sigmoid(k.opacity_logit) == doctest::Approx(0.7).epsilon(1e-12));
    CHECK((k.color - Vec3(0.5, 0.5, 0.5)).norm() == 0.0);
  }
  CHECK_THROWS_AS(bind_kernels(verts, tris, 0), std::invalid_argument);
  Eigen::MatrixX3i bad = tris;
  bad(1, 2) = 9;
  CHECK_THROWS_AS(bind_kernels(verts, bad, 1), std::invalid_argument);
}

TEST_CASE("globalize closed form on a known triangle") {
  Eigen::MatrixX3d verts;
  Eigen::MatrixX3i tris;
  flat_square(verts, tris);
  std::mt19937_64 rng(21);
  SplatCloud cloud = random_cloud(tris, rng);
  const SimilarityTransform id;
  const auto world = globalize(cloud, verts, id);
  REQUIRE(world.size() == cloud.size());

  const auto frames = triangle_frames(verts, tris);
  for (size_t i = 0; i < cloud.size(); ++i) {
    const GaussianKernel& k = cloud.kernels[i];
    const TriangleFrame& f = frames[cloud.binding[i]];
    const Vec3 mean = f.center + f.scale * (f.frame * k.mu_local);
    CHECK((world[i].mean - mean).norm() < 1e-13);
    const Mat3 A = f.scale * f.frame * rodrigues_exp(k.rot_local);
    const Mat3 cov = A * Vec3((2.0 * k.log_scale).array().exp()).asDiagonal() * A.transpose();
    CHECK((world[i].covariance - cov).norm() < 1e-13);
    CHECK(world[i].alpha == doctest::Approx(sigmoid(k.opacity_logit)).epsilon(1e-12));
    CHECK((world[i].color - k.color).norm() == 0.0);
    // Covariance must be symmetric positive definite.
    CHECK((world[i].covariance - world[i].covariance.transpose()).norm() < 1e-14);
    CHECK(Eigen::SelfAdjointEigenSolver<Mat3>(world[i].covariance).eigenvalues().minCoeff() > 0.0);
  }
}

TEST_CASE("kernels on degenerate triangles come back fully transparent") {
  Eigen::MatrixX3d verts(3, 3);
  verts << 0, 0, 0, 1, 1, 1, 2, 2, 2;
  Eigen::MatrixX3i tris(1, 3);
  tris << 0, 1, 2;
  SplatCloud cloud = bind_kernels(verts, tris, 2);
  const auto world = globalize(cloud, verts, SimilarityTransform{});
  for (const auto& w : world) CHECK(w.alpha == 0.0);
}

TEST_CASE("globalize is equivariant under a uniform similarity transform") {
  Eigen::MatrixX3d verts;
  Eigen::MatrixX3i tris;
  flat_square(verts, tris);
  std::mt19937_64 rng(22);
  SplatCloud cloud = random_cloud(tris, rng);

  SimilarityTransform xf;
  xf.scale = Vec3::Constant(1.7);
  xf.rotation = Vec3(0.3, -0.6, 0.2);
  xf.translation = Vec3(0.4, 1.1, -0.7);
  const Mat3 R = rodrigues_exp(xf.rotation);
  const double s = xf.scale.x();

  const auto base = globalize(cloud, verts, SimilarityTransform{});
  const auto moved = globalize(cloud, verts, xf);
  for (size_t i = 0; i < base.size(); ++i) {
    const Vec3 mean = s * (R * base[i].mean) + xf.translation;
    CHECK((moved[i].mean - mean).norm() < 1e-12);
    const Mat3 cov = s * s * R * base[i].covariance * R.transpose();
    CHECK((moved[i].covariance - cov).norm() < 1e-11);
    CHECK(moved[i].alpha == doctest::Approx(base[i].alpha).epsilon(1e-14));
  }
}

TEST_CASE("render over an empty kernel list returns the background") {
  SplatConfig cfg;
  cfg.background = Vec3(0.2, 0.4, 0.6);
  const Camera cam = camera_from_orbit(0, 0, 2.0, Vec3::Zero(), 80.0, 17, 13);
  const Image img = render({}, cam, cfg);
  for (int y = 0; y < 13; ++y) {
    for (int x = 0; x < 17; ++x) {
      CHECK(img.at(x, y, 0) == 0.2);
      CHECK(img.at(x, y, 1) == 0.4);
      CHECK(img.at(x, y, 2) == 0.6);
      CHECK(img.alpha_at(x, y) == 0.0);
    }
  }
}

TEST_CASE("single centered kernel composites exactly over the background") {
  // Odd resolution puts the optical axis through a pixel center.
  const Camera cam = camera_from_orbit(0, 0, 2.0, Vec3::Zero(), 90.0, 65, 65);
  WorldKernel k;
  k.mean = Vec3::Zero();
  k.covariance = 0.01 * Mat3::Identity();
  k.alpha = 0.65;
  k.color = Vec3(0.9, 0.3, 0.1);
  SplatConfig cfg;
  cfg.background = Vec3(0.1, 0.1, 0.5);
  const Image img = render({k}, cam, cfg);
  // The Mahalanobis distance vanishes at the projected center pixel.
  for (int c = 0; c < 3; ++c) {
    const double want = k.color(c) * k.alpha + cfg.background(c) * (1.0 - k.alpha);
    CHECK(img.at(32, 32, c) == doctest::Approx(want).epsilon(1e-12));
  }
  CHECK(img.alpha_at(32, 32) == doctest::Approx(k.alpha).epsilon(1e-12));
  // A kernel behind the camera leaves only background.
  WorldKernel behind = k;
  behind.mean = cam.position() + (cam.position() - Vec3::Zero());
  const Image img2 = render({behind}, cam, cfg);
  CHECK(img2.at(32, 32, 0) == doctest::Approx(0.1).epsilon(1e-14));
  CHECK(img2.alpha_at(32, 32) == 0.0);
}

TEST_CASE("two overlapping kernels composite front to back") {
  const Camera cam = camera_from_orbit(0, 0, 2.0, Vec3::Zero(), 90.0, 33, 33);
  WorldKernel front, back;
  front.mean = Vec3(0, 0, 0.3);  // closer to the camera at +z
  front.covariance = 0.02 * Mat3::Identity();
  front.alpha = 0.5;
  front.color = Vec3(1.0, 0.0, 0.0);
  back.mean = Vec3(0, 0, -0.3);
  back.covariance = 0.02 * Mat3::Identity();
  back.alpha = 0.8;
  back.color = Vec3(0.0, 1.0, 0.0);
  SplatConfig cfg;
  cfg.background = Vec3(0.0, 0.0, 1.0);

  const Image img = render({back, front}, cam, cfg);  // input order reversed on purpose
  const double T1 = 1.0 - front.alpha;
  const double T2 = T1 * (1.0 - back.alpha);
  CHECK(img.at(16, 16, 0) == doctest::Approx(front.alpha).epsilon(1e-12));
  CHECK(img.at(16, 16, 1) == doctest::Approx(back.alpha * T1).epsilon(1e-12));
  CHECK(img.at(16, 16, 2) == doctest::Approx(T2).epsilon(1e-12));
  CHECK(img.alpha_at(16, 16) == doctest::Approx(1.0 - T2).epsilon(1e-12));

  const Image sorted = render({front, back}, cam, cfg);
  CHECK(mean_abs_diff(img, sorted) == 0.0);
}

TEST_CASE("render agrees with a per-pixel reference renderer") {
  std::mt19937_64 rng(23);
  std::vector<WorldKernel> kernels;
  for (int i = 0; i < 6; ++i) {
    WorldKernel k;
    k.mean = oracles::uniform_vec3(rng, -0.4, 0.4);
    const Mat3 B = rodrigues_exp(oracles::uniform_vec3(rng, -1, 1)) *
                   Vec3(oracles::uniform(rng, 0.05, 0.2), oracles::uniform(rng, 0.05, 0.2),
                        oracles::uniform(rng, 0.05, 0.2))
                       .asDiagonal();
    k.covariance = B * B.transpose();
    k.alpha = oracles::uniform(rng, 0.2, 0.9);
    k.color = oracles::uniform_vec3(rng, 0.0, 1.0);
    kernels.push_back(k);
  }
  const Camera cam = camera_from_orbit(25.0, -10.0, 2.5, Vec3(0.05, 0, 0), 60.0, 48, 40);
  SplatConfig cfg;
  cfg.background = Vec3(0.05, 0.05, 0.05);
  cfg.footprint_sigma = 50.0;  // keep both paths clear of the cutoff boundary
  const Image got = render(kernels, cam, cfg);
  const Image want = reference_render(kernels, cam, cfg);
  REQUIRE(got.same_shape(want));
  for (size_t i = 0; i < got.rgb.size(); ++i) {
    CHECK(std::abs(got.rgb[i] - want.rgb[i]) < 1e-11);
  }
  for (size_t i = 0; i < got.alpha.size(); ++i) {
    CHECK(std::abs(got.alpha[i] - want.alpha[i]) < 1e-11);
  }
}

TEST_CASE("render is bitwise identical across thread counts") {
  std::mt19937_64 rng(24);
  std::vector<WorldKernel> kernels;
  for (int i = 0; i < 20; ++i) {
    WorldKernel k;
    k.mean = oracles::uniform_vec3(rng, -0.5, 0.5);
    k.covariance = 0.02 * Mat3::Identity();
    k.alpha = oracles::uniform(rng, 0.1, 0.9);
    k.color = oracles::uniform_vec3(rng, 0.0, 1.0);
    kernels.push_back(k);
  }
  const Camera cam = camera_from_orbit(0, 15.0, 2.2, Vec3::Zero(), 70.0, 64, 64);
  SplatConfig one, four;
  one.threads = 1;
  four.threads = 4;
  const Image a = render(kernels, cam, one);
  const Image b = render(kernels, cam, four);
  CHECK(a.rgb == b.rgb);
  CHECK(a.alpha == b.alpha);
}

TEST_CASE("render backward against guarded finite differences") {
  std::mt19937_64 rng(25);
  std::vector<WorldKernel> kernels;
  for (int i = 0; i < 3; ++i) {
    WorldKernel k;
    k.mean = oracles::uniform_vec3(rng, -0.25, 0.25);
    k.covariance = (0.03 + 0.02 * oracles::uniform(rng, 0, 1)) * Mat3::Identity();
    k.alpha = oracles::uniform(rng, 0.3, 0.8);
    k.color = oracles::uniform_vec3(rng, 0.2, 0.8);
    kernels.push_back(k);
  }
  const Camera cam = camera_from_orbit(10.0, 5.0, 2.0, Vec3::Zero(), 40.0, 24, 20);
  SplatConfig cfg;
  cfg.background = Vec3(0.3, 0.2, 0.1);

  Image G(cam.width, cam.height);
  for (auto& g : G.rgb) g = oracles::uniform(rng, -1.0, 1.0);

  const auto loss = [&](const std::vector<WorldKernel>& ks) {
    const Image img = render(ks, cam, cfg);
    double s = 0.0;
    for (size_t i = 0; i < img.rgb.size(); ++i) s += img.rgb[i] * G.rgb[i];
    return s;
  };
  const auto grads = render_backward(kernels, cam, G, cfg);
  REQUIRE(grads.size() == kernels.size());

  int checked = 0, gated = 0;
  const auto compare = [&](double analytic, auto setter) {
    const auto fd = oracles::guarded_diff(
        [&](double x) {
          auto ks = kernels;
          setter(ks, x);
          return loss(ks);
        },
        0.0, 1e-5);
    if (!fd.smooth) {
      ++gated;
      return;
    }
    ++checked;
    CHECK(oracles::rel_err(analytic, fd.value) < 5e-3);
  };

  for (size_t i = 0; i < kernels.size(); ++i) {
    for (int a = 0; a < 3; ++a) {
      compare(grads[i].d_mean(a), [&, i, a](auto& ks, double x) { ks[i].mean(a) += x; });
      compare(grads[i].d_color(a), [&, i, a](auto& ks, double x) { ks[i].color(a) += x; });
    }
    compare(grads[i].d_alpha, [&, i](auto& ks, double x) { ks[i].alpha += x; });
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) {
        compare(grads[i].d_cov(a, b),
                [&, i, a, b](auto& ks, double x) { ks[i].covariance(a, b) += x; });
      }
    }
  }
  // The footprint cutoffs may gate a few components, never the bulk.
  CHECK(checked > 0);
  CHECK(gated < (checked + gated) / 5 + 1);
}

TEST_CASE("globalize backward against finite differences") {
  Eigen::MatrixX3d verts;
  Eigen::MatrixX3i tris;
  flat_square(verts, tris);
  verts(2, 2) = 0.3;  // break planarity so vertex gradients exercise all axes
  std::mt19937_64 rng(26);
  SplatCloud cloud = random_cloud(tris, rng);
  SimilarityTransform xf;
  xf.scale = Vec3(1.2, 0.9, 1.1);
  xf.rotation = Vec3(0.2, 0.5, -0.3);
  xf.translation = Vec3(0.1, -0.2, 0.4);

  std::vector<WorldKernelGrad> wg(cloud.size());
  for (auto& g : wg) {
    g.d_mean = oracles::uniform_vec3(rng, -1, 1);
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) g.d_cov(a, b) = oracles::uniform(rng, -1, 1);
    g.d_alpha = oracles::uniform(rng, -1, 1);
    g.d_color = oracles::uniform_vec3(rng, -1, 1);
  }

  const auto loss = [&](const SplatCloud& c, const Eigen::MatrixX3d& v,
                        const SimilarityTransform& t) {
    const auto world = globalize(c, v, t);
    double s = 0.0;
    for (size_t i = 0; i < world.size(); ++i) {
      s += wg[i].d_mean.dot(world[i].mean);
      s += (wg[i].d_cov.array() * world[i].covariance.array()).sum();
      s += wg[i].d_alpha * world[i].alpha;
      s += wg[i].d_color.dot(world[i].color);
    }
    return s;
  };

  const GlobalizeGrads g = globalize_backward(cloud, verts, xf, wg);
  REQUIRE(g.kernels.size() == cloud.size());
  REQUIRE(g.d_vertices.rows() == verts.rows());

  const auto fd_check = [&](double analytic, auto setter) {
    const double fd = oracles::central_diff(
        [&](double x) {
          SplatCloud c = cloud;
          Eigen::MatrixX3d v = verts;
          SimilarityTransform t = xf;
          setter(c, v, t, x);
          return loss(c, v, t);
        },
        0.0, 1e-6);
    CHECK(oracles::rel_err(analytic, fd) < 1e-5);
  };

  for (int a = 0; a < 3; ++a) {
    fd_check(g.d_scale(a), [a](auto&, auto&, auto& t, double x) { t.scale(a) += x; });
    fd_check(g.d_rotation(a), [a](auto&, auto&, auto& t, double x) { t.rotation(a) += x; });
    fd_check(g.d_translation(a), [a](auto&, auto&, auto& t, double x) { t.translation(a) += x; });
  }
  for (int v = 0; v < verts.rows(); ++v) {
    for (int a = 0; a < 3; ++a) {
      fd_check(g.d_vertices(v, a), [v, a](auto&, auto& vv, auto&, double x) { vv(v, a) += x; });
    }
  }
  for (size_t i = 0; i < cloud.size(); ++i) {
    for (int a = 0; a < 3; ++a) {
      fd_check(g.kernels[i].d_mu_local(a),
               [i, a](auto& c, auto&, auto&, double x) { c.kernels[i].mu_local(a) += x; });
      fd_check(g.kernels[i].d_log_scale(a),
               [i, a](auto& c, auto&, auto&, double x) { c.kernels[i].log_scale(a) += x; });
      fd_check(g.kernels[i].d_rot_local(a),
               [i, a](auto& c, auto&, auto&, double x) { c.kernels[i].rot_local(a) += x; });
      fd_check(g.kernels[i].d_color(a),
               [i, a](auto& c, auto&, auto&, double x) { c.kernels[i].color(a) += x; });
    }
    fd_check(g.kernels[i].d_opacity_logit,
             [i](auto& c, auto&, auto&, double x) { c.kernels[i].opacity_logit += x; });
  }
}
