#include "backsplat/geometry.hpp"

#include <cmath>
#include <stdexcept>

namespace backsplat {

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m <<     0, -v.z(),  v.y(),
       v.z(),      0, -v.x(),
      -v.y(),  v.x(),      0;
  return m;
}

Mat3 rodrigues_exp(const RotationVector& r) {
  const double theta2 = r.squaredNorm();
  const double theta = std::sqrt(theta2);
  const Mat3 K = skew(r);
  double a, b;  // sin(t)/t and (1-cos(t))/t^2
  if (theta < kRotationTaylorThreshold) {
    a = 1.0 - theta2 / 6.0;
    b = 0.5 - theta2 / 24.0;
  } else {
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / theta2;
  }
  return Mat3::Identity() + a * K + b * K * K;
}

Mat3 so3_right_jacobian(const RotationVector& r) {
  const double theta2 = r.squaredNorm();
  const double theta = std::sqrt(theta2);
  const Mat3 K = skew(r);
  double b, c;  // (1-cos(t))/t^2 and (t-sin(t))/t^3
  if (theta < kRotationTaylorThreshold) {
    b = 0.5 - theta2 / 24.0;
    c = 1.0 / 6.0 - theta2 / 120.0;
  } else {
    b = (1.0 - std::cos(theta)) / theta2;
    c = (theta - std::sin(theta)) / (theta2 * theta);
  }
  return Mat3::Identity() - b * K + c * K * K;
}

Mat3 rodrigues_jacobian(const RotationVector& r, const Vec3& v) {
  // R(r+d)v ~ R(r)(v + (J_r d) x v), so d(Rv)/dr = -R [v]x J_r.
  return -rodrigues_exp(r) * skew(v) * so3_right_jacobian(r);
}

Vec3 rotation_backward(const RotationVector& r, const Mat3& dL_dR) {
  const Mat3 B = rodrigues_exp(r).transpose() * dL_dR;
  const Vec3 vee(B(2, 1) - B(1, 2), B(0, 2) - B(2, 0), B(1, 0) - B(0, 1));
  return so3_right_jacobian(r).transpose() * vee;
}

Mat4 SimilarityTransform::to_matrix() const {
  if (!(scale.array() > 0.0).all()) {
    throw std::invalid_argument("SimilarityTransform: scale components must be > 0");
  }
  Mat4 T = Mat4::Identity();
  T.topLeftCorner<3, 3>() = rodrigues_exp(rotation) * scale.asDiagonal();
  T.topRightCorner<3, 1>() = translation;
  return T;
}

Eigen::MatrixX3d apply_transform(const Mat4& T, const Eigen::MatrixX3d& vertices) {
  const Mat3 A = T.topLeftCorner<3, 3>();
  const Vec3 t = T.topRightCorner<3, 1>();
  Eigen::MatrixX3d out = vertices * A.transpose();
  out.rowwise() += t.transpose();
  return out;
}

void ParametricMesh::validate(double eps_area) const {
  const int n = vertex_count();
  for (const auto& b : blendshapes) {
    if (b.rows() != n) {
      throw std::invalid_argument("ParametricMesh: blendshape vertex count mismatch");
    }
  }
  if ((triangles.array() < 0).any() || (triangles.array() >= n).any()) {
    throw std::invalid_argument("ParametricMesh: triangle index out of range");
  }
  const auto frames = triangle_frames(base_vertices, triangles, eps_area);
  for (size_t k = 0; k < frames.size(); ++k) {
    if (frames[k].degenerate) {
      throw std::invalid_argument("ParametricMesh: base triangle " + std::to_string(k) +
                                  " is degenerate");
    }
  }
}

Eigen::MatrixX3d mesh_eval(const ParametricMesh& mesh, const MeshParams& phi) {
  if (phi.size() != mesh.blendshape_count()) {
    throw std::invalid_argument("mesh_eval: phi has " + std::to_string(phi.size()) +
                                " entries, mesh has " +
                                std::to_string(mesh.blendshape_count()) + " blendshapes");
  }
  Eigen::MatrixX3d v = mesh.base_vertices;
  for (int k = 0; k < phi.size(); ++k) {
    v += phi[k] * mesh.blendshapes[k];
  }
  return v;
}

Eigen::VectorXd mesh_eval_backward(const ParametricMesh& mesh,
                                   const Eigen::MatrixX3d& dL_dvertices) {
  if (dL_dvertices.rows() != mesh.base_vertices.rows()) {
    throw std::invalid_argument("mesh_eval_backward: gradient vertex count mismatch");
  }
  Eigen::VectorXd g(mesh.blendshape_count());
  for (int k = 0; k < g.size(); ++k) {
    g[k] = mesh.blendshapes[k].cwiseProduct(dL_dvertices).sum();
  }
  return g;
}

std::vector<TriangleFrame> triangle_frames(const Eigen::MatrixX3d& vertices,
                                           const Eigen::MatrixX3i& triangles,
                                           double eps_area) {
  std::vector<TriangleFrame> frames(triangles.rows());
  for (int k = 0; k < triangles.rows(); ++k) {
    const Vec3 a = vertices.row(triangles(k, 0));
    const Vec3 b = vertices.row(triangles(k, 1));
    const Vec3 c = vertices.row(triangles(k, 2));
    TriangleFrame& f = frames[k];
    f.center = (a + b + c) / 3.0;
    const Vec3 e1 = b - a;
    const Vec3 n_raw = e1.cross(Vec3(c - a));
    const double area = 0.5 * n_raw.norm();
    f.scale = std::sqrt(std::max(area, 0.0));
    if (area < eps_area || e1.norm() == 0.0) {
      f.degenerate = true;
      continue;  // frame stays identity
    }
    const Vec3 e = e1.normalized();
    const Vec3 n = n_raw.normalized();
    f.frame.col(0) = e;
    f.frame.col(1) = n;
    f.frame.col(2) = e.cross(n);
  }
  return frames;
}

Vec3 Camera::position() const {
  const double az = azimuth_deg * M_PI / 180.0;
  const double el = elevation_deg * M_PI / 180.0;
  return target + radius * Vec3(std::sin(az) * std::cos(el), std::sin(el),
                                std::cos(az) * std::cos(el));
}

Mat3 Camera::world_to_camera() const {
  const Vec3 fwd = (target - position()).normalized();
  Vec3 up(0.0, 1.0, 0.0);
  // Orbit cameras at +/-90 elevation look straight along up; fall back to z.
  if (std::abs(fwd.dot(up)) > 1.0 - 1e-9) {
    up = Vec3(0.0, 0.0, 1.0);
  }
  const Vec3 right = fwd.cross(up).normalized();
  const Vec3 down = fwd.cross(right);
  Mat3 R;
  R.row(0) = right;
  R.row(1) = down;
  R.row(2) = fwd;
  return R;
}

Camera camera_from_orbit(double azimuth_deg, double elevation_deg, double radius,
                         const Vec3& target, double focal, int width, int height) {
  if (radius <= 0.0 || focal <= 0.0 || width <= 0 || height <= 0) {
    throw std::invalid_argument("camera_from_orbit: radius, focal and resolution must be positive");
  }
  Camera cam;
  cam.azimuth_deg = azimuth_deg;
  cam.elevation_deg = elevation_deg;
  cam.radius = radius;
  cam.target = target;
  cam.focal = focal;
  cam.width = width;
  cam.height = height;
  return cam;
}

Projection project(const Camera& cam, const Vec3& point, double eps_near) {
  const Vec3 q = cam.world_to_camera() * (point - cam.position());
  Projection p;
  p.depth = q.z();
  if (q.z() <= eps_near) {
    p.behind = true;
    return p;
  }
  p.u = cam.focal * q.x() / q.z() + 0.5 * cam.width;
  p.v = cam.focal * q.y() / q.z() + 0.5 * cam.height;
  return p;
}

}  // namespace backsplat
