#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace backsplat {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

// Axis-angle rotation: direction = axis, norm = angle in radians.
using RotationVector = Vec3;

// Blendshape coefficients of a parametric mesh.
using MeshParams = Eigen::VectorXd;

// Below this angle the Rodrigues terms switch to their Taylor expansions.
inline constexpr double kRotationTaylorThreshold = 1e-4;

// Triangles with area below this are treated as degenerate.
inline constexpr double kTriangleAreaEps = 1e-10;

Mat3 skew(const Vec3& v);

/// Rodrigues exponential map: rotation matrix for an axis-angle vector.
Mat3 rodrigues_exp(const RotationVector& r);

/// Jacobian d(R(r) * v)/dr as a 3x3 matrix (column j = derivative wrt r_j).
/// At r = 0 this equals -skew(v).
Mat3 rodrigues_jacobian(const RotationVector& r, const Vec3& v);

// Right Jacobian of SO(3): R(r + d) ~ R(r) * R(J_r(r) d) to first order.
Mat3 so3_right_jacobian(const RotationVector& r);

// Pull a loss gradient wrt the rotation matrix back to the rotation vector.
Vec3 rotation_backward(const RotationVector& r, const Mat3& dL_dR);

/// Per-axis scale + rotation + translation, applied in that order.
/// Identity by construction.
struct SimilarityTransform {
  Vec3 scale{1.0, 1.0, 1.0};
  RotationVector rotation{0.0, 0.0, 0.0};
  Vec3 translation{0.0, 0.0, 0.0};

  /// Homogeneous 4x4 matrix [R*diag(scale), t; 0, 1].
  /// Throws std::invalid_argument if any scale component is <= 0.
  Mat4 to_matrix() const;

  static SimilarityTransform identity() { return {}; }
};

/// Applies a homogeneous transform to each row of an N x 3 vertex matrix.
Eigen::MatrixX3d apply_transform(const Mat4& T, const Eigen::MatrixX3d& vertices);

/// Linear blendshape mesh: V(phi) = base + sum_k phi_k * B_k.
struct ParametricMesh {
  Eigen::MatrixX3d base_vertices;
  std::vector<Eigen::MatrixX3d> blendshapes;  // K entries, each N x 3
  Eigen::MatrixX3i triangles;

  int vertex_count() const { return static_cast<int>(base_vertices.rows()); }
  int triangle_count() const { return static_cast<int>(triangles.rows()); }
  int blendshape_count() const { return static_cast<int>(blendshapes.size()); }

  /// Checks index bounds, blendshape shapes, and that the base mesh has no
  /// degenerate triangle. Throws std::invalid_argument on violation.
  void validate(double eps_area = kTriangleAreaEps) const;
};

/// Evaluates blendshapes. phi must have exactly blendshape_count() entries.
Eigen::MatrixX3d mesh_eval(const ParametricMesh& mesh, const MeshParams& phi);

/// Adjoint of mesh_eval: contracts a per-vertex gradient into d/dphi.
Eigen::VectorXd mesh_eval_backward(const ParametricMesh& mesh,
                                   const Eigen::MatrixX3d& dL_dvertices);

/// Orthonormal tangent frame of one triangle.
/// columns of `frame`: normalized first edge, unit normal, their cross
/// product; `scale` = sqrt(area). Degenerate triangles keep an identity
/// frame and are flagged.
struct TriangleFrame {
  Vec3 center = Vec3::Zero();
  Mat3 frame = Mat3::Identity();
  double scale = 0.0;
  bool degenerate = false;
};

std::vector<TriangleFrame> triangle_frames(const Eigen::MatrixX3d& vertices,
                                           const Eigen::MatrixX3i& triangles,
                                           double eps_area = kTriangleAreaEps);

/// Orbit camera. Azimuth 0 places the camera at target + (0,0,radius)
/// (frontal), 90 degrees at target + (radius,0,0); elevation lifts it
/// toward +y. Pixel (i,j) has center (j + 0.5, i + 0.5) in (u,v).
struct Camera {
  double azimuth_deg = 0.0;
  double elevation_deg = 0.0;
  double radius = 1.0;
  Vec3 target{0.0, 0.0, 0.0};
  double focal = 100.0;  // pixels
  int width = 128;
  int height = 128;

  Vec3 position() const;
  // Rows: camera right, camera down (v grows downward), forward.
  Mat3 world_to_camera() const;
};

Camera camera_from_orbit(double azimuth_deg, double elevation_deg, double radius,
                         const Vec3& target, double focal, int width, int height);

struct Projection {
  double u = 0.0;
  double v = 0.0;
  double depth = 0.0;
  bool behind = false;  // set when the camera-space depth is <= eps_near
};

Projection project(const Camera& cam, const Vec3& point, double eps_near = 1e-6);

}  // namespace backsplat
