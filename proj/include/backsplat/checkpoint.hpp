#pragma once

#include <string>
#include <vector>

#include "backsplat/generator.hpp"
#include "backsplat/geometry.hpp"
#include "backsplat/splat.hpp"

namespace backsplat {

constexpr int kCheckpointFormatVersion = 1;

/// Splat cloud JSON file with format_version. Doubles are serialized with
/// shortest round-trip formatting, so load-then-save is byte idempotent.
void save_cloud(const SplatCloud& cloud, const std::string& path);
SplatCloud load_cloud(const std::string& path);

/// Generator checkpoint: latent, linear map, template cloud and vertices,
/// render settings (threads excluded; runtime knob).
void save_generator(const GeneratorParams& params, const std::string& path);
GeneratorParams load_generator(const std::string& path);

struct ReportRow {
  std::string stage;
  std::string metric;
  double value = 0.0;
};

/// Loop-stage cursor values, in execution order: "init", "fitted",
/// "inverted", "aligned", "done".
struct PipelineState {
  std::string stage = "init";
  int round = 0;  // completed alignment rounds
  SplatCloud cloud;
  SimilarityTransform transform;
  Eigen::VectorXd phi;
  Eigen::VectorXd phi_orig;
  GeneratorParams generator;
  bool has_generator = false;
  std::string rng_state;  // serialized std::mt19937_64
  std::vector<ReportRow> report;
};

/// Whole-state JSON checkpoint. Unsupported format_version and parse errors
/// (with byte offsets) surface as std::runtime_error; nothing is partially
/// loaded.
void save_checkpoint(const PipelineState& state, const std::string& path);
PipelineState load_checkpoint(const std::string& path);

void save_report_csv(const std::vector<ReportRow>& rows, const std::string& path);

}  // namespace backsplat
