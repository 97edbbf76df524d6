#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "backsplat/geometry.hpp"
#include "backsplat/image.hpp"
#include "backsplat/splat.hpp"

namespace backsplat {

struct AlignmentConfig {
  double lr0 = 0.005;
  int max_steps = 500;
  double lambda_flame = 0.5;
  double lambda_pseudo = 0.01;
  double w_l1 = 0.8;
  double w_ssim = 0.2;
  bool train_kernels = true;
  double kernel_lr_scale = 1.0;  // multiplies lr0 for all kernel fields
  bool freeze_scale = false;
  bool freeze_rotation = false;
  bool freeze_translation = false;
  bool freeze_phi = false;
  double phi_cap = 0.0;  // componentwise |phi| bound; 0 disables
  double rot_reparam_threshold = 3.0;  // rotation norm that triggers rewrapping
  SplatConfig render;

  /// Throws std::invalid_argument on lr0 <= 0, negative lambdas,
  /// w_l1 + w_ssim != 1, or max_steps <= 0.
  void validate() const;
};

enum class ViewKind { real, pseudo };

struct SupervisionView {
  Image image;
  Camera camera;
  ViewKind kind = ViewKind::real;
  double weight = 1.0;
};

/// Sets the view weight per convention: 1 for real, cfg.lambda_pseudo for
/// pseudo.
SupervisionView make_supervision_view(Image image, const Camera& camera,
                                      ViewKind kind, const AlignmentConfig& cfg);

struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  long step = 0;
  long skipped = 0;  // components whose gradient was non-finite
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void init(Eigen::Index n);
  void reset_moments();
};

/// Bias-corrected Adam update in place. Components with non-finite gradients
/// are left untouched and counted in state.skipped.
void adam_step(AdamState& state, Eigen::Ref<Eigen::VectorXd> params,
               const Eigen::VectorXd& grads, double lr);

/// loss = w_l1 * mean|a-b| + w_ssim * (1 - SSIM(a,b)); d_rendered receives
/// the gradient with respect to the rendered image's rgb values.
double photometric_loss(const Image& rendered, const Image& target, double w_l1,
                        double w_ssim, Image& d_rendered);

/// lambda * ||phi - phi_orig||^2 with gradient 2*lambda*(phi - phi_orig).
double flame_reg(const MeshParams& phi, const MeshParams& phi_orig, double lambda,
                 Eigen::VectorXd& d_phi);

/// lr0 * 0.5 * (1 + cos(pi * step / max_steps)).
double cosine_lr(int step, int max_steps, double lr0);

struct TraceRow {
  int step = 0;
  double lr = 0.0;
  double total = 0.0;
  double photometric = 0.0;
  double flame = 0.0;
};

void save_trace_csv(const std::vector<TraceRow>& trace, const std::string& path);

struct AlignmentResult {
  SimilarityTransform transform;
  MeshParams phi;
  SplatCloud cloud;
  std::vector<TraceRow> trace;
  double best_loss = 0.0;
  int best_step = -1;
  long skipped_updates = 0;
};

/// Minimizes the weighted per-view photometric loss plus the blendshape
/// regularizer toward phi_orig. The learnable similarity transform applies
/// only when rendering pseudo views; real views anchor the untransformed
/// avatar. Parameter groups (scale, rotation, translation, phi, kernel
/// fields) hold independent Adam moments. Returns the best iterate seen.
/// Throws if no view sees any kernel at the initial evaluation.
AlignmentResult optimize_alignment(const SplatCloud& cloud, const ParametricMesh& mesh,
                                   const MeshParams& phi_init, const MeshParams& phi_orig,
                                   const std::vector<SupervisionView>& views,
                                   const AlignmentConfig& cfg,
                                   const SimilarityTransform& init_transform =
                                       SimilarityTransform::identity());

}  // namespace backsplat
