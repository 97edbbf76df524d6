#include "backsplat/scenario.hpp"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <vector>

#include "backsplat/checkpoint.hpp"
#include "backsplat/mesh_io.hpp"

namespace backsplat {

namespace {

constexpr double kHeadRadius = 0.5;
constexpr double kHeadYStretch = 1.2;
constexpr double kSubjectOpacityLogit = 2.9444389791664403;  // sigmoid^-1(0.95)
constexpr double kDefaultDefectDepth = 2.5;  // sqrt(area) units along the inward normal

uint64_t splitmix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

double hash_unit(uint64_t key) {
  return static_cast<double>(splitmix64(key) >> 11) * 0x1.0p-53;
}

Vec3 orbit_dir(double azimuth_deg, double elevation_deg) {
  const double az = azimuth_deg * M_PI / 180.0;
  const double el = elevation_deg * M_PI / 180.0;
  return Vec3(std::sin(az) * std::cos(el), std::sin(el), std::cos(az) * std::cos(el));
}

struct Palette {
  Vec3 face, top, back, left, right;
  const Vec3& operator[](HeadPatch p) const {
    switch (p) {
      case HeadPatch::face: return face;
      case HeadPatch::top: return top;
      case HeadPatch::back: return back;
      case HeadPatch::left: return left;
      default: return right;
    }
  }
};

const Palette kSubjectPalette = {
    {0.85, 0.66, 0.55}, {0.20, 0.15, 0.11}, {0.23, 0.17, 0.12},
    {0.62, 0.30, 0.26}, {0.30, 0.38, 0.62}};

// The template shares the subject's hair colors (the prior knows hair) and
// stays generic elsewhere.
const Palette kTemplatePalette = {
    {0.55, 0.50, 0.47}, {0.20, 0.15, 0.11}, {0.23, 0.17, 0.12},
    {0.50, 0.50, 0.50}, {0.50, 0.50, 0.50}};

int patch_index(HeadPatch p) { return static_cast<int>(p); }

// Recessed kernels stay inside the convex head, so the defect is occluded
// from every camera that sees the front surface.
bool in_defect_region(const Vec3& dir) { return dir.z() < -0.35 && dir.y() > 0.05; }

Vec3 triangle_dir(const Eigen::MatrixX3d& v, const Eigen::MatrixX3i& t, int row) {
  Vec3 c = ((v.row(t(row, 0)) + v.row(t(row, 1)) + v.row(t(row, 2))) / 3.0).transpose();
  return c.normalized();
}

}  // namespace

std::pair<Eigen::MatrixX3d, Eigen::MatrixX3i> icosphere(int subdivisions, double radius) {
  if (subdivisions < 0 || subdivisions > 7)
    throw std::invalid_argument("icosphere: subdivisions must be in [0, 7]");
  if (!(radius > 0.0)) throw std::invalid_argument("icosphere: radius must be positive");
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> verts = {
      {-1, t, 0}, {1, t, 0},  {-1, -t, 0}, {1, -t, 0},
      {0, -1, t}, {0, 1, t},  {0, -1, -t}, {0, 1, -t},
      {t, 0, -1}, {t, 0, 1},  {-t, 0, -1}, {-t, 0, 1}};
  std::vector<std::array<int, 3>> faces = {
      {0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
      {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
      {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
      {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  for (Vec3& v : verts) v.normalize();

  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<int, int>, int> midpoint;
    auto mid = [&](int a, int b) {
      auto key = std::minmax(a, b);
      auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      Vec3 m = (verts[a] + verts[b]).normalized();
      verts.push_back(m);
      int idx = static_cast<int>(verts.size()) - 1;
      midpoint.emplace(key, idx);
      return idx;
    };
    std::vector<std::array<int, 3>> next;
    next.reserve(faces.size() * 4);
    for (const auto& f : faces) {
      int ab = mid(f[0], f[1]), bc = mid(f[1], f[2]), ca = mid(f[2], f[0]);
      next.push_back({f[0], ab, ca});
      next.push_back({f[1], bc, ab});
      next.push_back({f[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    faces.swap(next);
  }

  Eigen::MatrixX3d v(static_cast<Eigen::Index>(verts.size()), 3);
  for (size_t i = 0; i < verts.size(); ++i)
    v.row(static_cast<Eigen::Index>(i)) = (radius * verts[i]).transpose();
  Eigen::MatrixX3i f(static_cast<Eigen::Index>(faces.size()), 3);
  for (size_t i = 0; i < faces.size(); ++i)
    for (int c = 0; c < 3; ++c) f(static_cast<Eigen::Index>(i), c) = faces[i][c];
  return {v, f};
}

HeadPatch classify_patch(const Vec3& d) {
  if (d.y() > 0.55) return HeadPatch::top;
  if (d.z() > 0.35) return HeadPatch::face;
  if (d.z() < -0.35) return HeadPatch::back;
  return d.x() < 0.0 ? HeadPatch::left : HeadPatch::right;
}

ToyScene build_toy_scene_with_defect(double defect_depth) {
  ToyScene scene;

  auto [sphere_v, tris] = icosphere(2, kHeadRadius);
  Eigen::MatrixX3d head = sphere_v;
  head.col(1) *= kHeadYStretch;

  scene.mesh.base_vertices = head;
  scene.mesh.triangles = tris;
  // 8 radial bump modes: 0..3 front-dominant, 4..7 back-dominant.
  const double bump_az[8] = {-35.0, 0.0, 35.0, 0.0, 145.0, 180.0, 215.0, 180.0};
  const double bump_el[8] = {0.0, -15.0, 0.0, 25.0, 0.0, -10.0, 0.0, 30.0};
  const double bump_width = 0.5, bump_amp = 0.08;
  const Eigen::Index nv = head.rows();
  for (int k = 0; k < 8; ++k) {
    const Vec3 center = orbit_dir(bump_az[k], bump_el[k]);
    Eigen::MatrixX3d disp(nv, 3);
    for (Eigen::Index i = 0; i < nv; ++i) {
      const Vec3 n = sphere_v.row(i).transpose().normalized();
      const double fall = std::exp(-(n - center).squaredNorm() / (bump_width * bump_width));
      disp.row(i) = (bump_amp * fall * n).transpose();
    }
    scene.mesh.blendshapes.push_back(disp);
  }
  scene.mesh.validate();

  scene.render.background = Vec3::Zero();

  const Eigen::Index nt = tris.rows();
  scene.subject = bind_kernels(head, tris, 1);
  SplatCloud tmpl = bind_kernels(head, tris, 1);
  std::vector<HeadPatch> patch(nt);
  std::vector<bool> defect(nt);
  for (Eigen::Index t = 0; t < nt; ++t) {
    const Vec3 d = triangle_dir(head, tris, static_cast<int>(t));
    patch[t] = classify_patch(d);
    defect[t] = in_defect_region(d);

    GaussianKernel& sk = scene.subject.kernels[t];
    sk.opacity_logit = kSubjectOpacityLogit;
    sk.color = kSubjectPalette[patch[t]];
    for (int c = 0; c < 3; ++c) {
      const double j = (hash_unit(static_cast<uint64_t>(t) * 3 + c) * 2.0 - 1.0) * 0.035;
      sk.color(c) = std::clamp(sk.color(c) + j, 0.0, 1.0);
    }

    GaussianKernel& tk = tmpl.kernels[t];
    tk.opacity_logit = kSubjectOpacityLogit;
    tk.color = kTemplatePalette[patch[t]];
    if (defect[t]) tk.mu_local = Vec3(0.0, -defect_depth, 0.0);
  }

  // Generator frame: uniform scale + y rotation + translation, chosen so
  // orbit cameras remap to orbit cameras.
  scene.generator_to_world.scale = Vec3(0.94, 0.94, 0.94);
  scene.generator_to_world.rotation = Vec3(0.0, 7.0 * M_PI / 180.0, 0.0);
  scene.generator_to_world.translation = Vec3(0.05, -0.03, 0.06);

  const Mat3 r_inv = rodrigues_exp(-scene.generator_to_world.rotation);
  const double inv_s = 1.0 / scene.generator_to_world.scale.x();
  Eigen::MatrixX3d tmpl_verts(nv, 3);
  for (Eigen::Index i = 0; i < nv; ++i) {
    const Vec3 p = head.row(i).transpose() - scene.generator_to_world.translation;
    tmpl_verts.row(i) = (inv_s * (r_inv * p)).transpose();
  }

  scene.generator.w = Eigen::VectorXd::Zero(16);
  scene.generator.template_cloud = tmpl;
  scene.generator.template_vertices = tmpl_verts;
  scene.generator.render = scene.render;
  scene.generator.latent_map = Eigen::MatrixXd::Zero(16, 6 * nt);
  for (Eigen::Index t = 0; t < nt; ++t) {
    for (int c = 0; c < 3; ++c)
      scene.generator.latent_map(patch_index(patch[t]) * 3 + c, 6 * t + 3 + c) = 1.0;
    if (defect[t]) scene.generator.latent_map(15, 6 * t + 1) = defect_depth;
  }
  scene.generator.validate();

  scene.subject_latent = Eigen::VectorXd::Zero(16);
  for (int p = 0; p < 5; ++p) {
    const HeadPatch hp = static_cast<HeadPatch>(p);
    for (int c = 0; c < 3; ++c)
      scene.subject_latent(p * 3 + c) = kSubjectPalette[hp](c) - kTemplatePalette[hp](c);
  }
  scene.subject_latent(15) = 1.0;
  return scene;
}

ToyScene build_toy_scene() { return build_toy_scene_with_defect(kDefaultDefectDepth); }

void write_scene_files(const ToyScene& scene, const std::string& dir, uint64_t seed) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const fs::path root(dir);
  save_mesh(scene.mesh, (root / "head.obj").string(), (root / "head.blendshapes").string());
  save_cloud(scene.subject, (root / "subject_cloud.json").string());
  save_generator(scene.generator, (root / "generator.json").string());

  std::ofstream out(root / "scene.toml");
  if (!out) throw std::runtime_error("cannot write scene.toml under " + dir);
  const Vec3& t = scene.generator_to_world.translation;
  out << "# bundled synthetic subject\n"
         "\n"
         "[scene]\n"
         "mesh = \"head.obj\"\n"
         "blendshapes = \"head.blendshapes\"\n"
         "subject_cloud = \"subject_cloud.json\"\n"
         "generator = \"generator.json\"\n"
      << "seed = " << seed << "\n"
      << "\n"
         "[cameras]\n"
         "count = 16\n"
         "azimuth_center_deg = 0.0\n"
         "azimuth_span_deg = 120.0\n"
         "elevation_deg = 15.0\n"
         "radius = 2.8\n"
         "focal = 130.0\n"
         "\n"
         "[resolution]\n"
         "real_width = 96\n"
         "real_height = 96\n"
         "pseudo_width = 96\n"
         "pseudo_height = 96\n"
         "\n"
         "[loop]\n"
         "rounds = 1\n"
         "fit_steps = 400\n"
         "align_steps = 500\n"
         "invert_steps_w = 120\n"
         "invert_steps_theta = 60\n"
         "back_views = 6\n"
         "back_camera_mode = \"seeded\"\n"
         "render_azimuths = [70.0, 290.0]\n"
         "eval_azimuths = [170.0, 180.0, 190.0]\n"
         "refine_hook = \"\"\n"
         "\n"
         "[fit]\n"
         "lr0 = 0.02\n"
         "\n"
         "[alignment]\n"
         "lr0 = 0.005\n"
         "lambda_flame = 0.5\n"
         "lambda_pseudo = 0.01\n"
         "w_l1 = 0.8\n"
         "w_ssim = 0.2\n"
         "train_kernels = true\n"
         "kernel_lr_scale = 1.0\n"
         "phi_cap = 0.0\n"
         "\n"
         "[inversion]\n"
         "lr_w = 0.05\n"
         "lr_theta = 0.01\n"
         "lambda_latent = 0.0001\n"
         "lambda_grad = 0.1\n"
         "\n"
         "[render]\n"
         "sigma_min = 0.001\n"
         "sigma_max = 4.0\n"
         "background = [0.0, 0.0, 0.0]\n"
         "footprint_sigma = 3.0\n"
         "dilation = 0.3\n"
         "\n"
         "[generator_frame]\n"
      << "scale = " << scene.generator_to_world.scale.x() << "\n"
      << "rotation_y_deg = 7.0\n"
      << "translation = [" << t.x() << ", " << t.y() << ", " << t.z() << "]\n";
  if (!out) throw std::runtime_error("write failed for scene.toml under " + dir);
}

}  // namespace backsplat
