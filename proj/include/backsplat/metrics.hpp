#pragma once

#include <Eigen/Dense>
#include <array>
#include <string>
#include <utility>
#include <vector>

#include "backsplat/image.hpp"

namespace backsplat {

/// Peak signal-to-noise ratio in dB for [0,1] images, 10*log10(1/MSE).
/// Identical images return +infinity. Throws on shape mismatch.
double psnr(const Image& a, const Image& b);

/// Mean structural similarity, Gaussian window 11 (sigma 1.5), valid-region
/// windows only, averaged over the three channels. Throws if either image
/// dimension is below the window size.
double ssim(const Image& a, const Image& b);

/// Same value as ssim(); additionally writes d(mean SSIM)/d(a pixels) into
/// d_a (resized to a's shape, alpha plane left zero).
double ssim_with_gradient(const Image& a, const Image& b, Image& d_a);

/// Embedding matrix for a set of images, one row per image.
struct FeatureSet {
  Eigen::MatrixXd features;  // n x d
  std::string source;
};

/// Reads "features n d" header followed by n rows of d floats.
FeatureSet load_features(const std::string& path);
void save_features(const FeatureSet& set, const std::string& path);

struct FidStats {
  int clipped_eigenvalues = 0;
  double min_eigenvalue = 0.0;
};

/// Frechet distance between Gaussian fits of the two feature sets. Eigenvalues
/// of the symmetrized product falling below -1e-10*trace are clipped to zero
/// and counted in stats. Requires matching d and at least two rows per set.
double fid(const FeatureSet& a, const FeatureSet& b, FidStats* stats = nullptr);

/// Unbiased squared MMD with kernel (x.y/d + 1)^3; within-set sums exclude
/// the diagonal. Requires matching d and at least two rows per set.
double kid(const FeatureSet& a, const FeatureSet& b);

/// One scored rendering: subject, viewpoint azimuth, five criterion scores
/// in [0,10].
struct ScoreRecord {
  std::string subject;
  int azimuth_deg = 180;  // 135, 180, or 225
  double clarity = 0.0;
  double structural_integrity = 0.0;
  double texture_quality = 0.0;
  double color_lighting_consistency = 0.0;
  double overall_perception = 0.0;
};

/// JSON-lines ingestion; validates azimuth membership and score range.
std::vector<ScoreRecord> load_score_records(const std::string& path);
void save_score_records(const std::vector<ScoreRecord>& records, const std::string& path);

constexpr std::array<const char*, 5> kCriterionNames = {
    "clarity", "structural_integrity", "texture_quality",
    "color_lighting_consistency", "overall_perception"};

struct PerceptualReport {
  /// Mean over subjects of the view-weighted criterion score, one entry per
  /// criterion in kCriterionNames order.
  std::array<double, 5> criterion_means{};
  /// Mean of criterion_means; equals the mean over subjects of the weighted
  /// per-subject score by linearity.
  double overall = 0.0;
  /// Weighted per-subject scores, sorted by subject id.
  std::vector<std::pair<std::string, double>> per_subject;
};

/// Azimuth weighting: 0.5 for 180, 0.25 each for 135 and 225. Every subject
/// must cover all three azimuths; duplicates per (subject, azimuth) average.
PerceptualReport perceptual_aggregate(const std::vector<ScoreRecord>& records);

}  // namespace backsplat
