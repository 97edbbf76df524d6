#pragma once

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "backsplat/alignment.hpp"
#include "backsplat/checkpoint.hpp"
#include "backsplat/config.hpp"
#include "backsplat/generator.hpp"
#include "backsplat/geometry.hpp"
#include "backsplat/splat.hpp"

namespace backsplat {

/// Capture ring at the real resolution: camera_count azimuths evenly spaced
/// over [center - span/2, center + span/2], both ends inclusive (count 1
/// sits at the center).
std::vector<Camera> ring_cameras(const SceneConfig& cfg);

/// Orbit camera on the configured rig (elevation, radius, focal, world
/// target at the origin) at an arbitrary azimuth and resolution.
Camera orbit_camera(const SceneConfig& cfg, double azimuth_deg, int width, int height);

/// Re-expresses a world orbit camera in the generator frame under a
/// calibration restricted to uniform scale + y rotation + translation:
/// azimuth - beta, radius / scale, target through the inverse transform,
/// focal unchanged. The remapped camera reproduces the identical image of
/// the transformed scene. Throws std::invalid_argument for calibrations
/// outside that family.
Camera remap_camera_to_generator(const Camera& world_cam,
                                 const SimilarityTransform& gen_to_world);

struct LoopOptions {
  std::string out_dir;
  std::optional<uint64_t> seed;  // overrides [scene] seed
  std::optional<int> rounds;     // overrides [loop] rounds
  int threads = 1;
  bool quiet = false;
};

/// Loaded assets plus derived run inputs. Captures are rendered from the
/// bundled subject cloud on the base mesh, so runs need no image files.
struct PipelineContext {
  SceneConfig cfg;
  LoopOptions opt;
  ParametricMesh mesh;
  SplatCloud subject;
  GeneratorParams generator_prior;
  std::vector<Camera> cams;
  std::vector<Image> captures;
};

PipelineContext make_context(const SceneConfig& cfg, const LoopOptions& opt);

/// State at stage "init": bound kernels on the base mesh, zero blendshape
/// params, identity transform, the generator prior, seeded rng.
PipelineState fresh_state(const PipelineContext& ctx);

std::string checkpoint_file(const std::string& out_dir);

/// init -> fitted: frontal fit of kernels and phi on the captures with the
/// similarity transform frozen at identity. Writes fit_trace.csv.
void stage_fit(const PipelineContext& ctx, PipelineState& state);

/// fitted/aligned -> inverted: avatar renders at the configured side
/// azimuths join the remapped captures in a hybrid set; the generator is
/// inverted against it (warm started from the state). Writes
/// invert_trace_round<r>.csv.
void stage_invert(const PipelineContext& ctx, PipelineState& state);

struct SynthesisResult {
  std::vector<BackView> views;   // generator-frame cameras
  std::string advanced_rng_state;
};

/// Samples back cameras (consuming one rng draw in seeded mode), remaps them
/// into the generator frame, synthesizes views, and writes
/// pseudo/round_<r>/back_<k>.png. Does not mutate the state; the caller
/// commits advanced_rng_state when the round completes.
SynthesisResult stage_synthesize(const PipelineContext& ctx, const PipelineState& state);

/// inverted -> aligned: avatar-to-scene alignment on captures (weight 1)
/// plus pseudo views (weight lambda_pseudo, generator-frame cameras, the
/// learnable transform warm started). Advances the round counter. Writes
/// align_trace_round<r>.csv.
void stage_align(const PipelineContext& ctx, PipelineState& state,
                 const std::vector<BackView>& pseudo_views);

/// Held-out comparison of the current avatar against subject renders at the
/// eval azimuths; appends psnr_az* and l1_az* rows tagged with `tag`.
void append_eval_rows(const PipelineContext& ctx, PipelineState& state, const std::string& tag);

/// Renders the current avatar (world frame) from a camera.
Image render_avatar(const PipelineContext& ctx, const PipelineState& state, const Camera& cam);

/// Renders the ground-truth subject from a camera.
Image render_subject(const PipelineContext& ctx, const Camera& cam);

/// Full loop: fit, rounds x (invert, synthesize, align), final eval. Resumes
/// from <out>/checkpoint.json when present; each stage transition saves the
/// checkpoint, so a rerun continues where the previous run stopped and a
/// finished run is a no-op apart from rewriting report.csv.
PipelineState run_loop(const SceneConfig& cfg, const LoopOptions& opt);

}  // namespace backsplat
