#include "backsplat/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "backsplat/metrics.hpp"

namespace backsplat {

namespace {

constexpr double kMinScaleComponent = 1e-4;

void check_same_size(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                     const char* op) {
  if (a.size() != b.size()) {
    std::ostringstream os;
    os << op << ": size mismatch (" << a.size() << " vs " << b.size() << ")";
    throw std::invalid_argument(os.str());
  }
}

struct KernelPack {
  Eigen::VectorXd mu, log_scale, rot, opacity, color;
};

KernelPack pack_kernels(const SplatCloud& cloud) {
  const Eigen::Index n = static_cast<Eigen::Index>(cloud.kernels.size());
  KernelPack p;
  p.mu.resize(3 * n);
  p.log_scale.resize(3 * n);
  p.rot.resize(3 * n);
  p.opacity.resize(n);
  p.color.resize(3 * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const GaussianKernel& k = cloud.kernels[i];
    p.mu.segment<3>(3 * i) = k.mu_local;
    p.log_scale.segment<3>(3 * i) = k.log_scale;
    p.rot.segment<3>(3 * i) = k.rot_local;
    p.opacity(i) = k.opacity_logit;
    p.color.segment<3>(3 * i) = k.color;
  }
  return p;
}

void unpack_kernels(const KernelPack& p, SplatCloud& cloud) {
  const Eigen::Index n = static_cast<Eigen::Index>(cloud.kernels.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    GaussianKernel& k = cloud.kernels[i];
    k.mu_local = p.mu.segment<3>(3 * i);
    k.log_scale = p.log_scale.segment<3>(3 * i);
    k.rot_local = p.rot.segment<3>(3 * i);
    k.opacity_logit = p.opacity(i);
    k.color = p.color.segment<3>(3 * i);
  }
}

KernelPack pack_grads(const std::vector<KernelGrad>& grads) {
  const Eigen::Index n = static_cast<Eigen::Index>(grads.size());
  KernelPack p;
  p.mu.setZero(3 * n);
  p.log_scale.setZero(3 * n);
  p.rot.setZero(3 * n);
  p.opacity.setZero(n);
  p.color.setZero(3 * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    p.mu.segment<3>(3 * i) = grads[i].d_mu_local;
    p.log_scale.segment<3>(3 * i) = grads[i].d_log_scale;
    p.rot.segment<3>(3 * i) = grads[i].d_rot_local;
    p.opacity(i) = grads[i].d_opacity_logit;
    p.color.segment<3>(3 * i) = grads[i].d_color;
  }
  return p;
}

}  // namespace

void AlignmentConfig::validate() const {
  if (!(lr0 > 0.0))
    throw std::invalid_argument("alignment config: lr0 must be positive");
  if (lambda_flame < 0.0 || lambda_pseudo < 0.0)
    throw std::invalid_argument("alignment config: lambdas must be nonnegative");
  if (std::abs(w_l1 + w_ssim - 1.0) > 1e-12)
    throw std::invalid_argument("alignment config: w_l1 + w_ssim must equal 1");
  if (w_l1 < 0.0 || w_ssim < 0.0)
    throw std::invalid_argument("alignment config: photometric weights must be nonnegative");
  if (max_steps <= 0)
    throw std::invalid_argument("alignment config: max_steps must be positive");
  if (kernel_lr_scale < 0.0)
    throw std::invalid_argument("alignment config: kernel_lr_scale must be nonnegative");
}

SupervisionView make_supervision_view(Image image, const Camera& camera,
                                      ViewKind kind, const AlignmentConfig& cfg) {
  SupervisionView v;
  v.image = std::move(image);
  v.camera = camera;
  v.kind = kind;
  v.weight = (kind == ViewKind::real) ? 1.0 : cfg.lambda_pseudo;
  return v;
}

void AdamState::init(Eigen::Index n) {
  m.setZero(n);
  v.setZero(n);
  step = 0;
}

void AdamState::reset_moments() {
  m.setZero();
  v.setZero();
  step = 0;
}

void adam_step(AdamState& state, Eigen::Ref<Eigen::VectorXd> params,
               const Eigen::VectorXd& grads, double lr) {
  if (params.size() != grads.size())
    throw std::invalid_argument("adam_step: parameter/gradient size mismatch");
  if (state.m.size() != params.size()) state.init(params.size());
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    const double g = grads(i);
    if (!std::isfinite(g)) {
      ++state.skipped;
      continue;
    }
    state.m(i) = state.beta1 * state.m(i) + (1.0 - state.beta1) * g;
    state.v(i) = state.beta2 * state.v(i) + (1.0 - state.beta2) * g * g;
    const double mhat = state.m(i) / c1;
    const double vhat = state.v(i) / c2;
    params(i) -= lr * mhat / (std::sqrt(vhat) + state.eps);
  }
}

double photometric_loss(const Image& rendered, const Image& target, double w_l1,
                        double w_ssim, Image& d_rendered) {
  if (!rendered.same_shape(target)) {
    std::ostringstream os;
    os << "photometric_loss: resolution mismatch (" << rendered.width << "x"
       << rendered.height << " vs " << target.width << "x" << target.height << ")";
    throw std::invalid_argument(os.str());
  }
  d_rendered = Image(rendered.width, rendered.height);
  const double inv_count = 1.0 / static_cast<double>(rendered.rgb.size());
  double l1 = 0.0;
  for (size_t i = 0; i < rendered.rgb.size(); ++i) {
    const double d = rendered.rgb[i] - target.rgb[i];
    l1 += std::abs(d);
    d_rendered.rgb[i] = w_l1 * inv_count * (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0));
  }
  double loss = w_l1 * l1 * inv_count;
  if (w_ssim != 0.0) {
    Image d_ssim;
    const double s = ssim_with_gradient(rendered, target, d_ssim);
    loss += w_ssim * (1.0 - s);
    for (size_t i = 0; i < d_rendered.rgb.size(); ++i)
      d_rendered.rgb[i] -= w_ssim * d_ssim.rgb[i];
  }
  return loss;
}

double flame_reg(const MeshParams& phi, const MeshParams& phi_orig, double lambda,
                 Eigen::VectorXd& d_phi) {
  check_same_size(phi, phi_orig, "flame_reg");
  Eigen::VectorXd delta = phi - phi_orig;
  d_phi = 2.0 * lambda * delta;
  return lambda * delta.squaredNorm();
}

double cosine_lr(int step, int max_steps, double lr0) {
  const double s = std::clamp(step, 0, max_steps);
  return lr0 * 0.5 * (1.0 + std::cos(M_PI * s / static_cast<double>(max_steps)));
}

void save_trace_csv(const std::vector<TraceRow>& trace, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write trace file: " + path);
  out.precision(17);
  out << "step,lr,total,photometric,flame\n";
  for (const TraceRow& row : trace)
    out << row.step << "," << row.lr << "," << row.total << ","
        << row.photometric << "," << row.flame << "\n";
  if (!out) throw std::runtime_error("write failed: " + path);
}

AlignmentResult optimize_alignment(const SplatCloud& cloud0, const ParametricMesh& mesh,
                                   const MeshParams& phi_init, const MeshParams& phi_orig,
                                   const std::vector<SupervisionView>& views,
                                   const AlignmentConfig& cfg,
                                   const SimilarityTransform& init_transform) {
  cfg.validate();
  if (views.empty())
    throw std::invalid_argument("optimize_alignment: at least one supervision view required");
  for (size_t i = 0; i < views.size(); ++i) {
    const SupervisionView& v = views[i];
    if (v.weight < 0.0)
      throw std::invalid_argument("optimize_alignment: negative view weight");
    if (v.image.width != v.camera.width || v.image.height != v.camera.height) {
      std::ostringstream os;
      os << "optimize_alignment: view " << i << " image is " << v.image.width << "x"
         << v.image.height << " but its camera renders " << v.camera.width << "x"
         << v.camera.height;
      throw std::invalid_argument(os.str());
    }
  }

  AlignmentResult result;
  SplatCloud cloud = cloud0;
  SimilarityTransform xf = init_transform;
  MeshParams phi = phi_init;

  AdamState st_scale, st_rot, st_trans, st_phi;
  AdamState st_k_mu, st_k_ls, st_k_rot, st_k_op, st_k_col;

  const SimilarityTransform identity = SimilarityTransform::identity();
  const double log_lo = std::log(cfg.render.sigma_min);
  const double log_hi = std::log(cfg.render.sigma_max);

  double best = std::numeric_limits<double>::infinity();
  SimilarityTransform best_xf = xf;
  MeshParams best_phi = phi;
  SplatCloud best_cloud = cloud;
  int best_step = -1;

  // Forward plus gradient accumulation over all views at the current iterate.
  auto evaluate = [&](bool want_grads, Vec3& g_s, Vec3& g_r, Vec3& g_t,
                      Eigen::VectorXd& g_phi, KernelPack& g_kernels,
                      double& photometric, bool* any_visible) {
    Eigen::MatrixX3d verts = mesh_eval(mesh, phi);
    photometric = 0.0;
    for (const SupervisionView& view : views) {
      const SimilarityTransform& xf_view =
          (view.kind == ViewKind::pseudo) ? xf : identity;
      std::vector<WorldKernel> world = globalize(cloud, verts, xf_view, cfg.render);
      Image rendered = render(world, view.camera, cfg.render);
      if (any_visible != nullptr)
        for (double a : rendered.alpha)
          if (a > 0.0) {
            *any_visible = true;
            break;
          }
      Image d_img;
      const double l = photometric_loss(rendered, view.image, cfg.w_l1, cfg.w_ssim, d_img);
      photometric += view.weight * l;
      if (!want_grads || view.weight == 0.0) continue;
      for (double& g : d_img.rgb) g *= view.weight;
      std::vector<WorldKernelGrad> wg = render_backward(world, view.camera, d_img, cfg.render);
      GlobalizeGrads gg = globalize_backward(cloud, verts, xf_view, wg, cfg.render);
      if (view.kind == ViewKind::pseudo) {
        g_s += gg.d_scale;
        g_r += gg.d_rotation;
        g_t += gg.d_translation;
      }
      g_phi += mesh_eval_backward(mesh, gg.d_vertices);
      KernelPack kp = pack_grads(gg.kernels);
      g_kernels.mu += kp.mu;
      g_kernels.log_scale += kp.log_scale;
      g_kernels.rot += kp.rot;
      g_kernels.opacity += kp.opacity;
      g_kernels.color += kp.color;
    }
  };

  const Eigen::Index nk = static_cast<Eigen::Index>(cloud.kernels.size());
  for (int step = 0; step <= cfg.max_steps; ++step) {
    const double lr = cosine_lr(step, cfg.max_steps, cfg.lr0);
    const bool last = (step == cfg.max_steps);

    Vec3 g_s = Vec3::Zero(), g_r = Vec3::Zero(), g_t = Vec3::Zero();
    Eigen::VectorXd g_phi = Eigen::VectorXd::Zero(phi.size());
    KernelPack g_kernels;
    g_kernels.mu.setZero(3 * nk);
    g_kernels.log_scale.setZero(3 * nk);
    g_kernels.rot.setZero(3 * nk);
    g_kernels.opacity.setZero(nk);
    g_kernels.color.setZero(3 * nk);

    bool any_visible = false;
    double photometric = 0.0;
    evaluate(!last, g_s, g_r, g_t, g_phi, g_kernels, photometric,
             step == 0 ? &any_visible : nullptr);
    if (step == 0 && !any_visible)
      throw std::runtime_error(
          "optimize_alignment: degenerate problem, no kernel is visible in any "
          "supervision view");

    Eigen::VectorXd g_flame;
    const double flame = flame_reg(phi, phi_orig, cfg.lambda_flame, g_flame);
    g_phi += g_flame;
    const double total = photometric + flame;

    result.trace.push_back({step, lr, total, photometric, flame});
    if (total < best) {
      best = total;
      best_xf = xf;
      best_phi = phi;
      best_cloud = cloud;
      best_step = step;
    }
    if (last) break;

    if (!cfg.freeze_scale) {
      adam_step(st_scale, xf.scale, g_s, lr);
      xf.scale = xf.scale.cwiseMax(kMinScaleComponent);
    }
    if (!cfg.freeze_rotation) {
      adam_step(st_rot, xf.rotation, g_r, lr);
      const double theta = xf.rotation.norm();
      // Rewrap only when it shrinks the norm; the Rodrigues Jacobian loses
      // rank as theta approaches pi.
      if (theta > cfg.rot_reparam_threshold && theta > M_PI) {
        xf.rotation *= (1.0 - 2.0 * M_PI / theta);
        st_rot.reset_moments();
      }
    }
    if (!cfg.freeze_translation) adam_step(st_trans, xf.translation, g_t, lr);
    if (!cfg.freeze_phi) {
      adam_step(st_phi, phi, g_phi, lr);
      if (cfg.phi_cap > 0.0)
        phi = phi.cwiseMax(-cfg.phi_cap).cwiseMin(cfg.phi_cap);
    }
    if (cfg.train_kernels && nk > 0) {
      const double klr = lr * cfg.kernel_lr_scale;
      KernelPack p = pack_kernels(cloud);
      adam_step(st_k_mu, p.mu, g_kernels.mu, klr);
      adam_step(st_k_ls, p.log_scale, g_kernels.log_scale, klr);
      adam_step(st_k_rot, p.rot, g_kernels.rot, klr);
      adam_step(st_k_op, p.opacity, g_kernels.opacity, klr);
      adam_step(st_k_col, p.color, g_kernels.color, klr);
      p.log_scale = p.log_scale.cwiseMax(log_lo).cwiseMin(log_hi);
      p.color = p.color.cwiseMax(0.0).cwiseMin(1.0);
      unpack_kernels(p, cloud);
    }
  }

  result.transform = best_xf;
  result.phi = best_phi;
  result.cloud = best_cloud;
  result.best_loss = best;
  result.best_step = best_step;
  for (const AdamState* st : {&st_scale, &st_rot, &st_trans, &st_phi, &st_k_mu,
                              &st_k_ls, &st_k_rot, &st_k_op, &st_k_col})
    result.skipped_updates += st->skipped;
  return result;
}

}  // namespace backsplat
