#pragma once

#include <vector>

#include "backsplat/geometry.hpp"
#include "backsplat/image.hpp"

namespace backsplat {

/// One Gaussian kernel expressed in the local frame of its triangle.
/// mu_local and the per-axis scales are in units of the triangle's
/// sqrt(area); log_scale holds log standard deviations.
struct GaussianKernel {
  Vec3 mu_local{0.0, 0.0, 0.0};
  Vec3 log_scale{0.0, 0.0, 0.0};
  RotationVector rot_local{0.0, 0.0, 0.0};
  double opacity_logit = 0.0;
  Vec3 color{0.5, 0.5, 0.5};
};

struct SplatCloud {
  std::vector<GaussianKernel> kernels;
  std::vector<int> binding;       // kernel -> triangle index
  Eigen::MatrixX3i triangles;     // anchor topology the bindings refer to

  size_t size() const { return kernels.size(); }
};

/// Kernel pushed to world space: mean, full covariance, opacity in (0,1).
struct WorldKernel {
  Vec3 mean = Vec3::Zero();
  Mat3 covariance = Mat3::Identity();
  double alpha = 0.0;
  Vec3 color{0.0, 0.0, 0.0};
};

struct SplatConfig {
  double sigma_min = 1e-3;   // lower clamp for exp(log_scale)
  double sigma_max = 4.0;    // upper clamp for exp(log_scale)
  Vec3 background{0.0, 0.0, 0.0};
  double eps_near = 1e-6;    // kernels at depth <= eps_near are culled
  double footprint_sigma = 3.0;  // Mahalanobis cutoff for splat footprints
  double dilation = 0.3;     // variance floor added to both 2D axes (pixels^2)
  int threads = 1;
};

/// Seeds `per_triangle` kernels on every triangle: mu_local = 0, scales at
/// half the triangle scale, opacity sigmoid^-1(0.7), mid-gray color.
SplatCloud bind_kernels(const Eigen::MatrixX3d& vertices, const Eigen::MatrixX3i& triangles,
                        int per_triangle = 1);

/// Pushes bound kernels through transform + triangle frames into world space.
/// Kernels on degenerate triangles come back with alpha = 0.
std::vector<WorldKernel> globalize(const SplatCloud& cloud, const Eigen::MatrixX3d& vertices,
                                   const SimilarityTransform& xf,
                                   const SplatConfig& cfg = {});

/// Forward splatting: project means, linearize covariances, depth sort,
/// front-to-back alpha compositing over a constant background. The alpha
/// channel is the accumulated opacity.
Image render(const std::vector<WorldKernel>& kernels, const Camera& cam,
             const SplatConfig& cfg = {});

struct WorldKernelGrad {
  Vec3 d_mean = Vec3::Zero();
  Mat3 d_cov = Mat3::Zero();
  double d_alpha = 0.0;
  Vec3 d_color = Vec3::Zero();
};

/// Analytic adjoint of render for the rgb channels. `dL_dimage.rgb` carries
/// the upstream gradient; the alpha plane of the input is ignored.
std::vector<WorldKernelGrad> render_backward(const std::vector<WorldKernel>& kernels,
                                             const Camera& cam, const Image& dL_dimage,
                                             const SplatConfig& cfg = {});

struct KernelGrad {
  Vec3 d_mu_local = Vec3::Zero();
  Vec3 d_log_scale = Vec3::Zero();
  Vec3 d_rot_local = Vec3::Zero();
  double d_opacity_logit = 0.0;
  Vec3 d_color = Vec3::Zero();
};

struct GlobalizeGrads {
  Vec3 d_scale = Vec3::Zero();
  Vec3 d_rotation = Vec3::Zero();
  Vec3 d_translation = Vec3::Zero();
  Eigen::MatrixX3d d_vertices;  // wrt the untransformed vertices
  std::vector<KernelGrad> kernels;
};

/// Analytic adjoint of globalize: chains per-world-kernel gradients back to
/// the transform parameters, the untransformed vertices and every kernel
/// field. Must be called with the same inputs as the matching globalize.
GlobalizeGrads globalize_backward(const SplatCloud& cloud, const Eigen::MatrixX3d& vertices,
                                  const SimilarityTransform& xf,
                                  const std::vector<WorldKernelGrad>& world_grads,
                                  const SplatConfig& cfg = {});

}  // namespace backsplat
