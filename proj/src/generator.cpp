#include "backsplat/generator.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>
#include <sys/wait.h>

#include "backsplat/alignment.hpp"
#include "backsplat/image_io.hpp"

namespace backsplat {

namespace {

namespace fs = std::filesystem;

// Sobel correlation kernels, row index first.
constexpr double kSobelX[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
constexpr double kSobelY[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};

double sign_of(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// Mean L1 plus the Sobel edge proxy; fills d with the gradient w.r.t. a.
double inversion_view_loss(const Image& a, const Image& b, double lambda_grad,
                           Image& d) {
  if (!a.same_shape(b))
    throw std::invalid_argument("inversion loss: image shapes differ");
  d = Image(a.width, a.height);
  const double inv_count = 1.0 / static_cast<double>(a.rgb.size());
  double l1 = 0.0;
  for (size_t i = 0; i < a.rgb.size(); ++i) {
    const double diff = a.rgb[i] - b.rgb[i];
    l1 += std::abs(diff);
    d.rgb[i] = inv_count * sign_of(diff);
  }
  double loss = l1 * inv_count;

  const int w = a.width, h = a.height;
  if (lambda_grad > 0.0 && w >= 3 && h >= 3) {
    const int wv = w - 2, hv = h - 2;
    const double norm = lambda_grad / (2.0 * 3.0 * wv * hv);
    double edge = 0.0;
    for (int c = 0; c < 3; ++c)
      for (int py = 0; py < hv; ++py)
        for (int px = 0; px < wv; ++px) {
          double gxa = 0.0, gya = 0.0, gxb = 0.0, gyb = 0.0;
          for (int dy = 0; dy < 3; ++dy)
            for (int dx = 0; dx < 3; ++dx) {
              const double va = a.at(px + dx, py + dy, c);
              const double vb = b.at(px + dx, py + dy, c);
              gxa += kSobelX[dy][dx] * va;
              gya += kSobelY[dy][dx] * va;
              gxb += kSobelX[dy][dx] * vb;
              gyb += kSobelY[dy][dx] * vb;
            }
          const double ex = gxa - gxb, ey = gya - gyb;
          edge += std::abs(ex) + std::abs(ey);
          const double sx = norm * sign_of(ex), sy = norm * sign_of(ey);
          if (sx != 0.0 || sy != 0.0)
            for (int dy = 0; dy < 3; ++dy)
              for (int dx = 0; dx < 3; ++dx)
                d.at(px + dx, py + dy, c) +=
                    sx * kSobelX[dy][dx] + sy * kSobelY[dy][dx];
        }
    loss += edge * norm;
  }
  return loss;
}

}  // namespace

void GeneratorParams::validate() const {
  const Eigen::Index nk = static_cast<Eigen::Index>(template_cloud.kernels.size());
  if (latent_map.rows() != w.size() || latent_map.cols() != 6 * nk) {
    std::ostringstream os;
    os << "generator: latent map is " << latent_map.rows() << "x" << latent_map.cols()
       << " but needs " << w.size() << "x" << 6 * nk;
    throw std::invalid_argument(os.str());
  }
  if (!w.allFinite() || !latent_map.allFinite())
    throw std::invalid_argument("generator: non-finite latent or map");
  if (template_cloud.binding.size() != template_cloud.kernels.size())
    throw std::invalid_argument("generator: template binding size mismatch");
}

SplatCloud materialize(const GeneratorParams& params) {
  params.validate();
  SplatCloud cloud = params.template_cloud;
  if (cloud.kernels.empty()) return cloud;
  Eigen::VectorXd offsets = params.latent_map.transpose() * params.w;
  for (size_t k = 0; k < cloud.kernels.size(); ++k) {
    cloud.kernels[k].mu_local += offsets.segment<3>(6 * static_cast<Eigen::Index>(k));
    cloud.kernels[k].color += offsets.segment<3>(6 * static_cast<Eigen::Index>(k) + 3);
  }
  return cloud;
}

Image generate(const GeneratorParams& params, const Camera& cam) {
  SplatCloud cloud = materialize(params);
  std::vector<WorldKernel> world = globalize(cloud, params.template_vertices,
                                             SimilarityTransform::identity(), params.render);
  return render(world, cam, params.render);
}

HybridSet build_hybrid_set(const std::vector<std::pair<Image, Camera>>& ori_views,
                           const std::vector<std::pair<Image, Camera>>& avatar_renders) {
  if (ori_views.empty())
    throw std::invalid_argument("build_hybrid_set: at least one captured view required");
  HybridSet set;
  for (const auto& [img, cam] : ori_views)
    set.items.push_back({img, cam, ViewOrigin::ori});
  for (const auto& [img, cam] : avatar_renders)
    set.items.push_back({img, cam, ViewOrigin::render});
  set.count_ori = static_cast<int>(ori_views.size());
  set.count_render = static_cast<int>(avatar_renders.size());
  return set;
}

void InversionConfig::validate() const {
  if (steps_w <= 0 || steps_theta <= 0)
    throw std::invalid_argument("inversion config: step counts must be positive");
  if (!(lr_w > 0.0) || !(lr_theta > 0.0))
    throw std::invalid_argument("inversion config: learning rates must be positive");
  if (lambda_latent < 0.0 || lambda_grad < 0.0)
    throw std::invalid_argument("inversion config: lambdas must be nonnegative");
}

InversionResult invert(const GeneratorParams& initial, const HybridSet& hybrid,
                       const InversionConfig& cfg) {
  cfg.validate();
  initial.validate();
  if (hybrid.items.empty())
    throw std::invalid_argument("invert: hybrid set is empty");
  for (size_t i = 0; i < hybrid.items.size(); ++i) {
    const HybridItem& item = hybrid.items[i];
    if (item.image.width != item.camera.width || item.image.height != item.camera.height) {
      std::ostringstream os;
      os << "invert: hybrid item " << i << " image does not match its camera resolution";
      throw std::invalid_argument(os.str());
    }
  }

  GeneratorParams g = initial;
  const Eigen::Index nk = static_cast<Eigen::Index>(g.template_cloud.kernels.size());
  const double inv_n = 1.0 / static_cast<double>(hybrid.items.size());
  const SimilarityTransform identity = SimilarityTransform::identity();

  // grads: latent (D), template mu_local (3N), template color (3N).
  auto evaluate = [&](bool want, Eigen::VectorXd* gw, Eigen::VectorXd* gmu,
                      Eigen::VectorXd* gcol) -> double {
    SplatCloud cloud = materialize(g);
    std::vector<WorldKernel> world =
        globalize(cloud, g.template_vertices, identity, g.render);
    std::vector<WorldKernelGrad> wsum(world.size());
    double total = 0.0;
    for (const HybridItem& item : hybrid.items) {
      Image rendered = render(world, item.camera, g.render);
      Image d;
      total += inv_n * inversion_view_loss(rendered, item.image, cfg.lambda_grad, d);
      if (!want) continue;
      for (double& v : d.rgb) v *= inv_n;
      std::vector<WorldKernelGrad> wg = render_backward(world, item.camera, d, g.render);
      for (size_t k = 0; k < wsum.size(); ++k) {
        wsum[k].d_mean += wg[k].d_mean;
        wsum[k].d_cov += wg[k].d_cov;
        wsum[k].d_alpha += wg[k].d_alpha;
        wsum[k].d_color += wg[k].d_color;
      }
    }
    total += cfg.lambda_latent * g.w.squaredNorm();
    if (want) {
      GlobalizeGrads gg =
          globalize_backward(cloud, g.template_vertices, identity, wsum, g.render);
      Eigen::VectorXd offsets(6 * nk);
      for (Eigen::Index k = 0; k < nk; ++k) {
        offsets.segment<3>(6 * k) = gg.kernels[k].d_mu_local;
        offsets.segment<3>(6 * k + 3) = gg.kernels[k].d_color;
      }
      if (gw != nullptr) *gw = g.latent_map * offsets + 2.0 * cfg.lambda_latent * g.w;
      if (gmu != nullptr && gcol != nullptr) {
        gmu->resize(3 * nk);
        gcol->resize(3 * nk);
        for (Eigen::Index k = 0; k < nk; ++k) {
          gmu->segment<3>(3 * k) = gg.kernels[k].d_mu_local;
          gcol->segment<3>(3 * k) = gg.kernels[k].d_color;
        }
      }
    }
    return total;
  };

  InversionResult result;
  double best = std::numeric_limits<double>::infinity();
  GeneratorParams best_params = g;
  auto consider = [&](double total) {
    result.trace.push_back(total);
    if (total < best) {
      best = total;
      best_params = g;
    }
  };

  AdamState st_w;
  for (int step = 0; step <= cfg.steps_w; ++step) {
    Eigen::VectorXd gw;
    const bool last = (step == cfg.steps_w);
    consider(evaluate(!last, last ? nullptr : &gw, nullptr, nullptr));
    if (!last) adam_step(st_w, g.w, gw, cfg.lr_w);
  }

  AdamState st_mu, st_col;
  for (int step = 0; step <= cfg.steps_theta; ++step) {
    Eigen::VectorXd gmu, gcol;
    const bool last = (step == cfg.steps_theta);
    consider(evaluate(!last, nullptr, last ? nullptr : &gmu, last ? nullptr : &gcol));
    if (last) break;
    Eigen::VectorXd mu(3 * nk), col(3 * nk);
    for (Eigen::Index k = 0; k < nk; ++k) {
      mu.segment<3>(3 * k) = g.template_cloud.kernels[k].mu_local;
      col.segment<3>(3 * k) = g.template_cloud.kernels[k].color;
    }
    adam_step(st_mu, mu, gmu, cfg.lr_theta);
    adam_step(st_col, col, gcol, cfg.lr_theta);
    for (Eigen::Index k = 0; k < nk; ++k) {
      g.template_cloud.kernels[k].mu_local = mu.segment<3>(3 * k);
      g.template_cloud.kernels[k].color = col.segment<3>(3 * k);
    }
  }

  result.params = best_params;
  result.initial_loss = result.trace.front();
  result.final_loss = best;
  return result;
}

std::vector<Camera> sample_back_cameras(int count, double elevation_deg, double radius,
                                        const Vec3& target, double focal, int width,
                                        int height, std::optional<uint64_t> seed) {
  if (count < 1)
    throw std::invalid_argument("sample_back_cameras: count must be at least 1");
  std::vector<Camera> cams;
  cams.reserve(count);
  if (!seed.has_value()) {
    for (int i = 0; i < count; ++i) {
      const double az =
          (count == 1) ? 180.0
                       : 90.0 + 180.0 * static_cast<double>(i) / (count - 1);
      cams.push_back(camera_from_orbit(az, elevation_deg, radius, target, focal,
                                       width, height));
    }
  } else {
    std::mt19937_64 rng(*seed);
    for (int i = 0; i < count; ++i) {
      // top 53 bits to a double in [0,1); keeps the draw stable across stdlibs
      const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
      cams.push_back(camera_from_orbit(90.0 + 180.0 * u, elevation_deg, radius,
                                       target, focal, width, height));
    }
  }
  return cams;
}

std::vector<BackView> synthesize_back_views(const GeneratorParams& params,
                                            const std::vector<Camera>& cams,
                                            const std::string& refine_hook,
                                            const std::string& work_dir) {
  if (cams.empty())
    throw std::invalid_argument("synthesize_back_views: no cameras");
  std::vector<BackView> views;
  views.reserve(cams.size());
  fs::path dir;
  if (!refine_hook.empty()) {
    dir = work_dir.empty() ? fs::temp_directory_path() / "backsplat_refine"
                           : fs::path(work_dir);
    fs::create_directories(dir);
  }
  for (size_t i = 0; i < cams.size(); ++i) {
    Image img = generate(params, cams[i]);
    if (!refine_hook.empty()) {
      const fs::path in = dir / ("refine_in_" + std::to_string(i) + ".png");
      const fs::path out = dir / ("refine_out_" + std::to_string(i) + ".png");
      save_png(img, in.string());
      std::error_code ec;
      fs::remove(out, ec);
      const std::string cmd =
          refine_hook + " \"" + in.string() + "\" \"" + out.string() + "\"";
      const int rc = std::system(cmd.c_str());
      if (rc != 0) {
        std::ostringstream os;
        os << "refinement hook failed";
        if (WIFEXITED(rc))
          os << " with exit status " << WEXITSTATUS(rc);
        else
          os << " with raw status " << rc;
        os << ": " << cmd;
        throw std::runtime_error(os.str());
      }
      Image refined = load_png(out.string());
      if (refined.width != img.width || refined.height != img.height) {
        std::ostringstream os;
        os << "refinement hook changed dimensions from " << img.width << "x"
           << img.height << " to " << refined.width << "x" << refined.height;
        throw std::runtime_error(os.str());
      }
      img = std::move(refined);
    }
    views.push_back({std::move(img), cams[i]});
  }
  return views;
}

}  // namespace backsplat
