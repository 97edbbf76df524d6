#pragma once

#include <string>
#include <utility>

#include "backsplat/generator.hpp"
#include "backsplat/geometry.hpp"
#include "backsplat/splat.hpp"

namespace backsplat {

/// Geodesic sphere from a subdivided icosahedron; vertices lie on the radius
/// sphere, triangles wind outward.
std::pair<Eigen::MatrixX3d, Eigen::MatrixX3i> icosphere(int subdivisions, double radius);

enum class HeadPatch { face, top, back, left, right };

/// Region of a triangle by its normalized centroid direction. Priority:
/// top (y > 0.55), face (z > 0.35), back (z < -0.35), then left/right by x.
HeadPatch classify_patch(const Vec3& centroid_dir);

/// The bundled synthetic subject.
///
/// Appearance: the subject head has distinct per-patch colors with mild
/// deterministic per-triangle texture jitter; hair (top/back) is dark. The
/// generator template shares the mesh and the hair colors (the prior knows
/// hair), keeps generic gray for face/sides, and bakes in a hair-volume
/// defect at the back (mu_local recessed along the inward normal, so the
/// defect is occluded from every frontal camera and shows up only in back
/// and side silhouettes). Latent modes: 5 patches x 3 color channels (rows
/// 0..14) plus one defect-removal geometry mode (row 15), so subject_latent
/// reproduces the subject's patch means and restores the back geometry.
/// The generator lives in its own frame:
/// template vertices are the head vertices through the inverse of
/// generator_to_world (uniform scale + y rotation + translation), which
/// remaps orbit cameras to orbit cameras exactly.
struct ToyScene {
  ParametricMesh mesh;                    // base head + 8 blendshapes
  SplatCloud subject;                     // ground-truth cloud, world frame
  GeneratorParams generator;              // w = 0, generator frame
  SimilarityTransform generator_to_world; // the calibration misalignment
  Eigen::VectorXd subject_latent;         // latent that matches the subject
  SplatConfig render;
};

/// Deterministic scene construction (no RNG).
ToyScene build_toy_scene();

/// Defect depth knob for variant scenes (tests); depth is in units of the
/// triangle scale sqrt(area). The bundled scene uses build_toy_scene().
ToyScene build_toy_scene_with_defect(double defect_depth);

/// Writes head.obj, head.blendshapes, subject_cloud.json, generator.json and
/// scene.toml (seed recorded in the config) into dir, creating it if needed.
void write_scene_files(const ToyScene& scene, const std::string& dir, uint64_t seed);

}  // namespace backsplat
