#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "backsplat/geometry.hpp"
#include "backsplat/image.hpp"
#include "backsplat/splat.hpp"

namespace backsplat {

/// Latent-conditioned splat scene: the weights are a template cloud anchored
/// to fixed template vertices plus a linear map from the latent to per-kernel
/// (delta mu_local, delta color) offsets. Rows of latent_map follow kernel
/// order, 6 values per kernel.
struct GeneratorParams {
  Eigen::VectorXd w;                    // D
  SplatCloud template_cloud;
  Eigen::MatrixX3d template_vertices;
  Eigen::MatrixXd latent_map;           // D x (6 * num_kernels)
  SplatConfig render;

  int latent_dim() const { return static_cast<int>(w.size()); }
  /// Throws std::invalid_argument on shape inconsistencies or non-finite w.
  void validate() const;
};

/// Template cloud with the latent offsets applied; exactly linear in w.
SplatCloud materialize(const GeneratorParams& params);

/// Renders the materialized cloud from the given camera. Pure.
Image generate(const GeneratorParams& params, const Camera& cam);

enum class ViewOrigin { ori, render };

struct HybridItem {
  Image image;
  Camera camera;
  ViewOrigin origin = ViewOrigin::ori;
};

struct HybridSet {
  std::vector<HybridItem> items;
  int count_ori = 0;
  int count_render = 0;
};

/// Concatenates captured views and avatar renders with origin tags.
/// Throws std::invalid_argument when ori_views is empty.
HybridSet build_hybrid_set(const std::vector<std::pair<Image, Camera>>& ori_views,
                           const std::vector<std::pair<Image, Camera>>& avatar_renders);

struct InversionConfig {
  int steps_w = 150;       // latent phase
  int steps_theta = 150;   // weight phase (template mu_local and color)
  double lr_w = 0.05;
  double lr_theta = 0.01;
  double lambda_latent = 1e-4;  // pull toward the latent mean (zero vector)
  double lambda_grad = 0.1;     // Sobel edge proxy for the perceptual term
  void validate() const;
};

struct InversionResult {
  GeneratorParams params;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::vector<double> trace;  // total loss per evaluated step, both phases
};

/// Two-phase inversion: first the latent with weights frozen, then the
/// template mu_local/color fields with the latent frozen. Loss per view is
/// mean L1 plus lambda_grad times L1 between Sobel gradient images, averaged
/// over views, plus lambda_latent * ||w||^2. Returns the best iterate, so
/// final_loss <= initial_loss.
InversionResult invert(const GeneratorParams& initial, const HybridSet& hybrid,
                       const InversionConfig& cfg);

/// Cameras over back azimuths [90, 270] at fixed elevation. Without a seed:
/// evenly spaced inclusive (count 1 gives 180). With a seed: uniform draws
/// from the interval via a pinned bit recipe.
std::vector<Camera> sample_back_cameras(int count, double elevation_deg, double radius,
                                        const Vec3& target, double focal, int width,
                                        int height,
                                        std::optional<uint64_t> seed = std::nullopt);

struct BackView {
  Image image;
  Camera camera;
};

/// generate() per camera, then the refinement hook. An empty hook is the
/// identity. Otherwise the hook command is invoked as
///   <hook> <input.png> <output.png>
/// under work_dir and must exit 0 and preserve dimensions.
std::vector<BackView> synthesize_back_views(const GeneratorParams& params,
                                            const std::vector<Camera>& cams,
                                            const std::string& refine_hook = "",
                                            const std::string& work_dir = "");

}  // namespace backsplat
