#include "backsplat/splat.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <thread>
#include <tuple>

namespace backsplat {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Everything render needs per visible kernel, precomputed once.
struct DrawItem {
  int kernel = 0;
  double depth = 0.0;
  double u = 0.0, v = 0.0;
  double ca = 0.0, cb = 0.0, cc = 0.0;  // conic = inverse 2D covariance
  double alpha = 0.0;
  Vec3 color = Vec3::Zero();
  int x0 = 0, x1 = -1, y0 = 0, y1 = -1;  // inclusive pixel bounds
  // retained for the backward pass
  Vec3 q = Vec3::Zero();
  Eigen::Matrix<double, 2, 3> Jw = Eigen::Matrix<double, 2, 3>::Zero();
  double s00 = 0.0, s01 = 0.0, s11 = 0.0;  // dilated 2D covariance
};

std::vector<DrawItem> build_draw_list(const std::vector<WorldKernel>& kernels,
                                      const Camera& cam, const SplatConfig& cfg) {
  const Mat3 Rwc = cam.world_to_camera();
  const Vec3 C = cam.position();
  std::vector<DrawItem> items;
  items.reserve(kernels.size());
  for (size_t i = 0; i < kernels.size(); ++i) {
    const WorldKernel& k = kernels[i];
    if (!(k.alpha > 0.0)) continue;
    const Vec3 q = Rwc * (k.mean - C);
    if (q.z() <= cfg.eps_near) continue;
    const double iz = 1.0 / q.z();
    DrawItem it;
    it.kernel = static_cast<int>(i);
    it.depth = q.z();
    it.q = q;
    it.u = cam.focal * q.x() * iz + 0.5 * cam.width;
    it.v = cam.focal * q.y() * iz + 0.5 * cam.height;
    Eigen::Matrix<double, 2, 3> Jc;
    Jc << cam.focal * iz, 0.0, -cam.focal * q.x() * iz * iz,
          0.0, cam.focal * iz, -cam.focal * q.y() * iz * iz;
    it.Jw = Jc * Rwc;
    Eigen::Matrix2d S2 = it.Jw * k.covariance * it.Jw.transpose();
    S2(0, 0) += cfg.dilation;
    S2(1, 1) += cfg.dilation;
    it.s00 = S2(0, 0);
    it.s01 = 0.5 * (S2(0, 1) + S2(1, 0));
    it.s11 = S2(1, 1);
    const double det = it.s00 * it.s11 - it.s01 * it.s01;
    if (!(det > 0.0)) continue;  // not reachable for PSD input + dilation
    it.ca = it.s11 / det;
    it.cb = -it.s01 / det;
    it.cc = it.s00 / det;
    // Axis-aligned extent of the footprint ellipse.
    const double ext_x = cfg.footprint_sigma * std::sqrt(it.s00);
    const double ext_y = cfg.footprint_sigma * std::sqrt(it.s11);
    it.x0 = std::max(0, static_cast<int>(std::ceil(it.u - ext_x - 0.5)));
    it.x1 = std::min(cam.width - 1, static_cast<int>(std::floor(it.u + ext_x - 0.5)));
    it.y0 = std::max(0, static_cast<int>(std::ceil(it.v - ext_y - 0.5)));
    it.y1 = std::min(cam.height - 1, static_cast<int>(std::floor(it.v + ext_y - 0.5)));
    if (it.x0 > it.x1 || it.y0 > it.y1) continue;
    it.alpha = k.alpha;
    it.color = k.color;
    items.push_back(it);
  }
  // Total order independent of the input permutation; ties across every
  // compared field mean identical contributions.
  std::sort(items.begin(), items.end(), [](const DrawItem& a, const DrawItem& b) {
    return std::tie(a.depth, a.u, a.v, a.alpha, a.color.x(), a.color.y(), a.color.z(),
                    a.ca, a.cb, a.cc) <
           std::tie(b.depth, b.u, b.v, b.alpha, b.color.x(), b.color.y(), b.color.z(),
                    b.ca, b.cb, b.cc);
  });
  return items;
}

// Transmittance below this stops accumulation for a pixel.
constexpr double kMinTransmittance = 1e-12;

void render_band(const std::vector<DrawItem>& items, int width, int row_begin, int row_end,
                 double fs2, std::vector<double>& rgb, std::vector<double>& trans) {
  for (const DrawItem& it : items) {
    const int yb = std::max(it.y0, row_begin);
    const int ye = std::min(it.y1, row_end - 1);
    for (int y = yb; y <= ye; ++y) {
      const double dy = y + 0.5 - it.v;
      for (int x = it.x0; x <= it.x1; ++x) {
        const double dx = x + 0.5 - it.u;
        const double m = it.ca * dx * dx + 2.0 * it.cb * dx * dy + it.cc * dy * dy;
        if (m > fs2) continue;
        const size_t px = static_cast<size_t>(y) * width + x;
        const double T = trans[px];
        if (T < kMinTransmittance) continue;
        const double w = it.alpha * std::exp(-0.5 * m);
        rgb[px * 3 + 0] += it.color.x() * w * T;
        rgb[px * 3 + 1] += it.color.y() * w * T;
        rgb[px * 3 + 2] += it.color.z() * w * T;
        trans[px] = T * (1.0 - w);
      }
    }
  }
}

}  // namespace

SplatCloud bind_kernels(const Eigen::MatrixX3d& vertices, const Eigen::MatrixX3i& triangles,
                        int per_triangle) {
  if (per_triangle < 1) {
    throw std::invalid_argument("bind_kernels: per_triangle must be >= 1");
  }
  if (triangles.rows() > 0 &&
      (triangles.maxCoeff() >= vertices.rows() || triangles.minCoeff() < 0)) {
    throw std::invalid_argument("bind_kernels: triangle index out of range");
  }
  SplatCloud cloud;
  cloud.triangles = triangles;
  cloud.kernels.reserve(static_cast<size_t>(triangles.rows()) * per_triangle);
  cloud.binding.reserve(cloud.kernels.capacity());
  GaussianKernel proto;
  proto.log_scale = Vec3::Constant(std::log(0.5));
  proto.opacity_logit = std::log(0.7 / 0.3);
  proto.color = Vec3(0.5, 0.5, 0.5);
  for (int t = 0; t < triangles.rows(); ++t) {
    for (int j = 0; j < per_triangle; ++j) {
      cloud.kernels.push_back(proto);
      cloud.binding.push_back(t);
    }
  }
  return cloud;
}

std::vector<WorldKernel> globalize(const SplatCloud& cloud, const Eigen::MatrixX3d& vertices,
                                   const SimilarityTransform& xf, const SplatConfig& cfg) {
  (void)cfg;
  if (cloud.binding.size() != cloud.kernels.size()) {
    throw std::invalid_argument("globalize: binding/kernel count mismatch");
  }
  const Eigen::MatrixX3d W = apply_transform(xf.to_matrix(), vertices);
  const auto frames = triangle_frames(W, cloud.triangles);
  std::vector<WorldKernel> out(cloud.size());
  for (size_t i = 0; i < cloud.size(); ++i) {
    const int t = cloud.binding[i];
    if (t < 0 || static_cast<size_t>(t) >= frames.size()) {
      throw std::invalid_argument("globalize: binding index out of range");
    }
    const GaussianKernel& k = cloud.kernels[i];
    const TriangleFrame& f = frames[t];
    WorldKernel& w = out[i];
    w.mean = f.center + f.scale * (f.frame * k.mu_local);
    const Mat3 A = f.scale * f.frame * rodrigues_exp(k.rot_local);
    const Vec3 d2 = (2.0 * k.log_scale).array().exp();
    w.covariance = A * d2.asDiagonal() * A.transpose();
    w.alpha = f.degenerate ? 0.0 : sigmoid(k.opacity_logit);
    w.color = k.color;
  }
  return out;
}

Image render(const std::vector<WorldKernel>& kernels, const Camera& cam,
             const SplatConfig& cfg) {
  Image img(cam.width, cam.height);
  const auto items = build_draw_list(kernels, cam, cfg);
  const double fs2 = cfg.footprint_sigma * cfg.footprint_sigma;
  std::vector<double> trans(img.pixel_count(), 1.0);

  const int threads = std::max(1, cfg.threads);
  if (threads == 1 || cam.height < 2 * threads) {
    render_band(items, cam.width, 0, cam.height, fs2, img.rgb, trans);
  } else {
    // Row bands: every pixel is owned by exactly one thread, so the
    // per-pixel compositing order is identical for any thread count.
    std::vector<std::thread> pool;
    const int rows = (cam.height + threads - 1) / threads;
    for (int b = 0; b < threads; ++b) {
      const int r0 = b * rows;
      const int r1 = std::min(cam.height, r0 + rows);
      if (r0 >= r1) break;
      pool.emplace_back([&, r0, r1] {
        render_band(items, cam.width, r0, r1, fs2, img.rgb, trans);
      });
    }
    for (auto& th : pool) th.join();
  }

  for (size_t px = 0; px < img.pixel_count(); ++px) {
    const double T = trans[px];
    img.rgb[px * 3 + 0] += cfg.background.x() * T;
    img.rgb[px * 3 + 1] += cfg.background.y() * T;
    img.rgb[px * 3 + 2] += cfg.background.z() * T;
    img.alpha[px] = 1.0 - T;
  }
  return img;
}

namespace {

struct Hit {
  int item = 0;
  double dx = 0.0, dy = 0.0;
  double w = 0.0, gw = 0.0;
  double T = 0.0;  // transmittance in front of this hit
  bool skipped = false;
};

struct ItemGrad {
  double d_u = 0.0, d_v = 0.0;
  double d_ca = 0.0, d_cb = 0.0, d_cc = 0.0;  // wrt conic entries (cb counted once)
  double d_alpha = 0.0;
  Vec3 d_color = Vec3::Zero();
};

void backward_band(const std::vector<DrawItem>& items, const SplatConfig& cfg,
                   const Image& dL, int row_begin, int row_end, double fs2,
                   std::vector<ItemGrad>& grads) {
  const int width = dL.width;
  const size_t band_pixels = static_cast<size_t>(row_end - row_begin) * width;
  std::vector<std::vector<Hit>> hits(band_pixels);
  for (size_t i = 0; i < items.size(); ++i) {
    const DrawItem& it = items[i];
    const int yb = std::max(it.y0, row_begin);
    const int ye = std::min(it.y1, row_end - 1);
    for (int y = yb; y <= ye; ++y) {
      const double dy = y + 0.5 - it.v;
      for (int x = it.x0; x <= it.x1; ++x) {
        const double dx = x + 0.5 - it.u;
        const double m = it.ca * dx * dx + 2.0 * it.cb * dx * dy + it.cc * dy * dy;
        if (m > fs2) continue;
        Hit h;
        h.item = static_cast<int>(i);
        h.dx = dx;
        h.dy = dy;
        h.gw = std::exp(-0.5 * m);
        h.w = it.alpha * h.gw;
        hits[static_cast<size_t>(y - row_begin) * width + x].push_back(h);
      }
    }
  }

  for (int y = row_begin; y < row_end; ++y) {
    for (int x = 0; x < width; ++x) {
      auto& list = hits[static_cast<size_t>(y - row_begin) * width + x];
      if (list.empty()) continue;
      // Replays the forward compositing, then walks it in reverse with a
      // running sum of everything composited behind the current hit.
      double T = 1.0;
      for (Hit& h : list) {
        if (T < kMinTransmittance) {
          h.skipped = true;
          continue;
        }
        h.T = T;
        T *= (1.0 - h.w);
      }
      const Vec3 g(dL.at(x, y, 0), dL.at(x, y, 1), dL.at(x, y, 2));
      Vec3 suffix = cfg.background * T;
      for (auto rit = list.rbegin(); rit != list.rend(); ++rit) {
        const Hit& h = *rit;
        if (h.skipped) continue;
        const DrawItem& it = items[h.item];
        ItemGrad& ig = grads[h.item];
        const double wT = h.w * h.T;
        ig.d_color += g * wT;
        const double dw = g.dot(it.color * h.T - suffix / (1.0 - h.w));
        suffix += it.color * wT;
        ig.d_alpha += dw * h.gw;
        const double dm = -0.5 * h.gw * (dw * it.alpha);
        // m = ca dx^2 + 2 cb dx dy + cc dy^2, d = pixel - mean2d
        const double px_ = 2.0 * (it.ca * h.dx + it.cb * h.dy);
        const double py_ = 2.0 * (it.cb * h.dx + it.cc * h.dy);
        ig.d_u -= dm * px_;
        ig.d_v -= dm * py_;
        ig.d_ca += dm * h.dx * h.dx;
        ig.d_cb += dm * 2.0 * h.dx * h.dy;
        ig.d_cc += dm * h.dy * h.dy;
      }
    }
  }
}

}  // namespace

std::vector<WorldKernelGrad> render_backward(const std::vector<WorldKernel>& kernels,
                                             const Camera& cam, const Image& dL_dimage,
                                             const SplatConfig& cfg) {
  if (dL_dimage.width != cam.width || dL_dimage.height != cam.height) {
    throw std::invalid_argument("render_backward: gradient image shape mismatch");
  }
  const auto items = build_draw_list(kernels, cam, cfg);
  const double fs2 = cfg.footprint_sigma * cfg.footprint_sigma;

  std::vector<ItemGrad> igrads(items.size());
  const int threads = std::max(1, cfg.threads);
  if (threads == 1 || cam.height < 2 * threads) {
    backward_band(items, cfg, dL_dimage, 0, cam.height, fs2, igrads);
  } else {
    const int rows = (cam.height + threads - 1) / threads;
    std::vector<std::vector<ItemGrad>> bufs;
    std::vector<std::thread> pool;
    std::vector<std::pair<int, int>> bands;
    for (int b = 0; b < threads; ++b) {
      const int r0 = b * rows;
      const int r1 = std::min(cam.height, r0 + rows);
      if (r0 >= r1) break;
      bands.emplace_back(r0, r1);
    }
    bufs.resize(bands.size(), std::vector<ItemGrad>(items.size()));
    for (size_t b = 0; b < bands.size(); ++b) {
      pool.emplace_back([&, b] {
        backward_band(items, cfg, dL_dimage, bands[b].first, bands[b].second, fs2, bufs[b]);
      });
    }
    for (auto& th : pool) th.join();
    // Reduce in band order so each thread count has one defined result.
    for (const auto& buf : bufs) {
      for (size_t i = 0; i < igrads.size(); ++i) {
        igrads[i].d_u += buf[i].d_u;
        igrads[i].d_v += buf[i].d_v;
        igrads[i].d_ca += buf[i].d_ca;
        igrads[i].d_cb += buf[i].d_cb;
        igrads[i].d_cc += buf[i].d_cc;
        igrads[i].d_alpha += buf[i].d_alpha;
        igrads[i].d_color += buf[i].d_color;
      }
    }
  }

  const Mat3 Rwc = cam.world_to_camera();
  std::vector<WorldKernelGrad> out(kernels.size());
  for (size_t i = 0; i < items.size(); ++i) {
    const DrawItem& it = items[i];
    const ItemGrad& ig = igrads[i];
    WorldKernelGrad& kg = out[it.kernel];
    kg.d_alpha = ig.d_alpha;
    kg.d_color = ig.d_color;

    // Conic -> dilated 2D covariance: d(S^-1) = -S^-1 dS S^-1.
    Eigen::Matrix2d GP;
    GP << ig.d_ca, 0.5 * ig.d_cb, 0.5 * ig.d_cb, ig.d_cc;
    Eigen::Matrix2d P;
    P << it.ca, it.cb, it.cb, it.cc;
    const Eigen::Matrix2d dS2 = -P * GP * P;

    kg.d_cov = it.Jw.transpose() * dS2 * it.Jw;

    // Mean gets two contributions: through the projected center and through
    // the projection Jacobian's dependence on the camera-space point.
    const double iz = 1.0 / it.q.z();
    const double f = cam.focal;
    Eigen::Matrix<double, 2, 3> Jc;
    Jc << f * iz, 0.0, -f * it.q.x() * iz * iz,
          0.0, f * iz, -f * it.q.y() * iz * iz;
    Vec3 dq = Jc.transpose() * Eigen::Vector2d(ig.d_u, ig.d_v);

    const WorldKernel& k = kernels[it.kernel];
    const Eigen::Matrix<double, 2, 3> dJw = 2.0 * dS2 * it.Jw * k.covariance;
    const Eigen::Matrix<double, 2, 3> dJc = dJw * Rwc.transpose();
    dq.x() += dJc(0, 2) * (-f * iz * iz);
    dq.y() += dJc(1, 2) * (-f * iz * iz);
    dq.z() += (dJc(0, 0) + dJc(1, 1)) * (-f * iz * iz) +
              dJc(0, 2) * (2.0 * f * it.q.x() * iz * iz * iz) +
              dJc(1, 2) * (2.0 * f * it.q.y() * iz * iz * iz);
    kg.d_mean = Rwc.transpose() * dq;
  }
  return out;
}

GlobalizeGrads globalize_backward(const SplatCloud& cloud, const Eigen::MatrixX3d& vertices,
                                  const SimilarityTransform& xf,
                                  const std::vector<WorldKernelGrad>& world_grads,
                                  const SplatConfig& cfg) {
  (void)cfg;
  if (world_grads.size() != cloud.size()) {
    throw std::invalid_argument("globalize_backward: gradient count mismatch");
  }
  const Mat4 T = xf.to_matrix();
  const Eigen::MatrixX3d W = apply_transform(T, vertices);
  const auto frames = triangle_frames(W, cloud.triangles);

  GlobalizeGrads out;
  out.kernels.resize(cloud.size());
  out.d_vertices = Eigen::MatrixX3d::Zero(vertices.rows(), 3);

  // Per-triangle accumulators for the frame adjoint.
  std::vector<Vec3> d_center(frames.size(), Vec3::Zero());
  std::vector<Mat3> d_frame(frames.size(), Mat3::Zero());
  std::vector<double> d_sigma(frames.size(), 0.0);

  for (size_t i = 0; i < cloud.size(); ++i) {
    const GaussianKernel& k = cloud.kernels[i];
    const WorldKernelGrad& g = world_grads[i];
    const int t = cloud.binding[i];
    const TriangleFrame& f = frames[t];
    KernelGrad& kg = out.kernels[i];

    kg.d_color = g.d_color;
    if (!f.degenerate) {
      const double a = sigmoid(k.opacity_logit);
      kg.d_opacity_logit = g.d_alpha * a * (1.0 - a);
    }

    // mean = center + sigma * F mu
    kg.d_mu_local = f.scale * f.frame.transpose() * g.d_mean;
    d_center[t] += g.d_mean;

    // cov = sigma^2 F M F^T with M = R_l D^2 R_l^T
    const Mat3 Rl = rodrigues_exp(k.rot_local);
    const Vec3 d2 = (2.0 * k.log_scale).array().exp();
    const Mat3 M = Rl * d2.asDiagonal() * Rl.transpose();
    const double s2 = f.scale * f.scale;

    const Mat3 dM = s2 * f.frame.transpose() * g.d_cov * f.frame;
    const Mat3 dD2 = Rl.transpose() * dM * Rl;
    for (int a = 0; a < 3; ++a) {
      kg.d_log_scale[a] = dD2(a, a) * 2.0 * d2[a];
    }
    const Mat3 dRl = (dM + dM.transpose()) * Rl * d2.asDiagonal();
    kg.d_rot_local = rotation_backward(k.rot_local, dRl);

    const Mat3 FM = f.frame * M;
    d_sigma[t] += g.d_mean.dot(f.frame * k.mu_local) +
                  2.0 * f.scale * g.d_cov.cwiseProduct(FM * f.frame.transpose()).sum();
    d_frame[t] += f.scale * g.d_mean * k.mu_local.transpose() +
                  s2 * (g.d_cov + g.d_cov.transpose()) * FM;
  }

  // Frame adjoint, then the transform adjoint on the accumulated vertex grads.
  Eigen::MatrixX3d dW = Eigen::MatrixX3d::Zero(vertices.rows(), 3);
  for (size_t t = 0; t < frames.size(); ++t) {
    const TriangleFrame& f = frames[t];
    if (f.degenerate) continue;
    if (d_center[t].isZero(0.0) && d_frame[t].isZero(0.0) && d_sigma[t] == 0.0) continue;
    const int ia = cloud.triangles(static_cast<int>(t), 0);
    const int ib = cloud.triangles(static_cast<int>(t), 1);
    const int ic = cloud.triangles(static_cast<int>(t), 2);
    const Vec3 a = W.row(ia), b = W.row(ib), c = W.row(ic);
    const Vec3 e1 = b - a;
    const Vec3 e2 = c - a;
    const Vec3 nr = e1.cross(e2);
    const double nlen = nr.norm();
    const Vec3 ehat = e1.normalized();
    const Vec3 nhat = nr / nlen;

    Vec3 d_ehat = d_frame[t].col(0);
    Vec3 d_nhat = d_frame[t].col(1);
    const Vec3 d_bhat = d_frame[t].col(2);
    // bhat = ehat x nhat
    d_ehat += nhat.cross(d_bhat);
    d_nhat += d_bhat.cross(ehat);

    Vec3 d_e1 = (Mat3::Identity() - ehat * ehat.transpose()) * d_ehat / e1.norm();
    Vec3 d_nr = (Mat3::Identity() - nhat * nhat.transpose()) * d_nhat / nlen;

    // sigma = sqrt(|nr| / 2)
    if (f.scale > 0.0) {
      d_nr += (d_sigma[t] / (4.0 * f.scale)) * nhat;
    }
    // nr = e1 x e2
    d_e1 += e2.cross(d_nr);
    Vec3 d_e2 = d_nr.cross(e1);

    const Vec3 dc3 = d_center[t] / 3.0;
    dW.row(ia) += (dc3 - d_e1 - d_e2).transpose();
    dW.row(ib) += (dc3 + d_e1).transpose();
    dW.row(ic) += (dc3 + d_e2).transpose();
  }

  // w_i = R S v_i + t
  const Mat3 Rx = rodrigues_exp(xf.rotation);
  out.d_translation = dW.colwise().sum().transpose();
  const Mat3 dRx = dW.transpose() * vertices * xf.scale.asDiagonal();
  out.d_rotation = rotation_backward(xf.rotation, dRx);
  out.d_scale = (Rx.transpose() * dW.transpose() * vertices).diagonal();
  out.d_vertices = dW * Rx * xf.scale.asDiagonal();
  return out;
}

}  // namespace backsplat
