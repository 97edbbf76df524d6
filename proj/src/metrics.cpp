#include "backsplat/metrics.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>
#include <stdexcept>

namespace backsplat {

namespace {

constexpr int kWindow = 11;
constexpr double kWindowSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

const std::array<double, kWindow>& ssim_window() {
  static const std::array<double, kWindow> w = [] {
    std::array<double, kWindow> g{};
    double sum = 0.0;
    for (int i = 0; i < kWindow; ++i) {
      double d = i - (kWindow - 1) / 2.0;
      g[i] = std::exp(-0.5 * d * d / (kWindowSigma * kWindowSigma));
      sum += g[i];
    }
    for (double& v : g) v /= sum;
    return g;
  }();
  return w;
}

// Valid-region windowed filtering. Planes are row-major vectors indexed
// [y * stride + x]; the valid grid has Hv = H - kWindow + 1 rows and
// Wv = W - kWindow + 1 columns.
void gather_h(const std::vector<double>& in, int width, int height,
              std::vector<double>& out, int wv) {
  const auto& g = ssim_window();
  for (int y = 0; y < height; ++y) {
    const double* row = in.data() + static_cast<size_t>(y) * width;
    double* orow = out.data() + static_cast<size_t>(y) * wv;
    for (int px = 0; px < wv; ++px) {
      double s = 0.0;
      for (int dx = 0; dx < kWindow; ++dx) s += g[dx] * row[px + dx];
      orow[px] = s;
    }
  }
}

void gather_v(const std::vector<double>& in, int wv,
              std::vector<double>& out, int hv) {
  const auto& g = ssim_window();
  for (int py = 0; py < hv; ++py) {
    double* orow = out.data() + static_cast<size_t>(py) * wv;
    std::fill(orow, orow + wv, 0.0);
    for (int dy = 0; dy < kWindow; ++dy) {
      const double* row = in.data() + static_cast<size_t>(py + dy) * wv;
      for (int x = 0; x < wv; ++x) orow[x] += g[dy] * row[x];
    }
  }
}

// Adjoints of the gathers: spread a valid-grid map back onto pixels.
void scatter_v(const std::vector<double>& in, int wv, int hv,
               std::vector<double>& out) {
  const auto& g = ssim_window();
  std::fill(out.begin(), out.end(), 0.0);
  for (int py = 0; py < hv; ++py) {
    const double* row = in.data() + static_cast<size_t>(py) * wv;
    for (int dy = 0; dy < kWindow; ++dy) {
      double* orow = out.data() + static_cast<size_t>(py + dy) * wv;
      for (int x = 0; x < wv; ++x) orow[x] += g[dy] * row[x];
    }
  }
}

void scatter_h(const std::vector<double>& in, int wv, int height,
               std::vector<double>& out, int width) {
  const auto& g = ssim_window();
  std::fill(out.begin(), out.end(), 0.0);
  for (int y = 0; y < height; ++y) {
    const double* row = in.data() + static_cast<size_t>(y) * wv;
    double* orow = out.data() + static_cast<size_t>(y) * width;
    for (int px = 0; px < wv; ++px) {
      double v = row[px];
      for (int dx = 0; dx < kWindow; ++dx) orow[px + dx] += g[dx] * v;
    }
  }
}

void windowed_mean(const std::vector<double>& plane, int width, int height,
                   std::vector<double>& tmp, std::vector<double>& out) {
  int wv = width - kWindow + 1;
  int hv = height - kWindow + 1;
  gather_h(plane, width, height, tmp, wv);
  gather_v(tmp, wv, out, hv);
}

void check_shapes(const Image& a, const Image& b, const char* op) {
  if (!a.same_shape(b)) {
    std::ostringstream os;
    os << op << ": image shapes differ (" << a.width << "x" << a.height
       << " vs " << b.width << "x" << b.height << ")";
    throw std::invalid_argument(os.str());
  }
}

// Shared forward/backward SSIM engine. When d_a is non-null it receives the
// gradient of the mean SSIM with respect to a's pixels.
double ssim_engine(const Image& a, const Image& b, Image* d_a) {
  check_shapes(a, b, "ssim");
  const int w = a.width, h = a.height;
  if (w < kWindow || h < kWindow) {
    std::ostringstream os;
    os << "ssim: image " << w << "x" << h << " smaller than the " << kWindow
       << "x" << kWindow << " window";
    throw std::invalid_argument(os.str());
  }
  const int wv = w - kWindow + 1, hv = h - kWindow + 1;
  const size_t np = static_cast<size_t>(w) * h;
  const size_t nv = static_cast<size_t>(wv) * hv;

  if (d_a != nullptr) *d_a = Image(w, h);

  std::vector<double> x(np), y(np), xx(np), yy(np), xy(np);
  std::vector<double> tmp(static_cast<size_t>(h) * wv);
  std::vector<double> mx(nv), my(nv), rxx(nv), ryy(nv), rxy(nv);
  std::vector<double> ca, cb, cc, stmp, sfull;
  if (d_a != nullptr) {
    ca.resize(nv);
    cb.resize(nv);
    cc.resize(nv);
    stmp.resize(static_cast<size_t>(h) * wv);
    sfull.resize(np);
  }

  double total = 0.0;
  const double inv_count = 1.0 / (3.0 * static_cast<double>(nv));
  for (int c = 0; c < 3; ++c) {
    for (int py = 0; py < h; ++py)
      for (int px = 0; px < w; ++px) {
        size_t i = static_cast<size_t>(py) * w + px;
        x[i] = a.at(px, py, c);
        y[i] = b.at(px, py, c);
        xx[i] = x[i] * x[i];
        yy[i] = y[i] * y[i];
        xy[i] = x[i] * y[i];
      }
    windowed_mean(x, w, h, tmp, mx);
    windowed_mean(y, w, h, tmp, my);
    windowed_mean(xx, w, h, tmp, rxx);
    windowed_mean(yy, w, h, tmp, ryy);
    windowed_mean(xy, w, h, tmp, rxy);

    for (size_t i = 0; i < nv; ++i) {
      double mux = mx[i], muy = my[i];
      double vx = rxx[i] - mux * mux;
      double vy = ryy[i] - muy * muy;
      double cov = rxy[i] - mux * muy;
      double n1 = 2.0 * mux * muy + kC1;
      double n2 = 2.0 * cov + kC2;
      double d1 = mux * mux + muy * muy + kC1;
      double d2 = vx + vy + kC2;
      double s = (n1 * n2) / (d1 * d2);
      total += s;
      if (d_a != nullptr) {
        double ds_dmu = 2.0 * muy * n2 / (d1 * d2) - 2.0 * mux * s / d1;
        double ds_dvx = -s / d2;
        double ds_dcov = 2.0 * n1 / (d1 * d2);
        ca[i] = ds_dmu - 2.0 * mux * ds_dvx - muy * ds_dcov;
        cb[i] = 2.0 * ds_dvx;
        cc[i] = ds_dcov;
      }
    }

    if (d_a != nullptr) {
      // grad = scatter(ca) + x .* scatter(cb) + y .* scatter(cc), through the
      // raw-moment parameterization (mean, E[x^2], E[xy]).
      auto scatter_into = [&](const std::vector<double>& m,
                              std::vector<double>& dst) {
        scatter_v(m, wv, hv, stmp);
        scatter_h(stmp, wv, h, dst, w);
      };
      scatter_into(ca, sfull);
      for (int py = 0; py < h; ++py)
        for (int px = 0; px < w; ++px)
          d_a->at(px, py, c) += sfull[static_cast<size_t>(py) * w + px];
      scatter_into(cb, sfull);
      for (int py = 0; py < h; ++py)
        for (int px = 0; px < w; ++px)
          d_a->at(px, py, c) +=
              sfull[static_cast<size_t>(py) * w + px] * x[static_cast<size_t>(py) * w + px];
      scatter_into(cc, sfull);
      for (int py = 0; py < h; ++py)
        for (int px = 0; px < w; ++px)
          d_a->at(px, py, c) +=
              sfull[static_cast<size_t>(py) * w + px] * y[static_cast<size_t>(py) * w + px];
    }
  }

  if (d_a != nullptr)
    for (double& v : d_a->rgb) v *= inv_count;
  return total * inv_count;
}

double poly_kernel_sum(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                       bool exclude_diagonal) {
  const double d = static_cast<double>(x.cols());
  const Eigen::Index block = 512;
  double sum = 0.0;
  for (Eigen::Index r0 = 0; r0 < x.rows(); r0 += block) {
    Eigen::Index rows = std::min(block, x.rows() - r0);
    Eigen::MatrixXd gram = x.middleRows(r0, rows) * y.transpose();
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < gram.cols(); ++j) {
        if (exclude_diagonal && r0 + i == j) continue;
        double k = gram(i, j) / d + 1.0;
        sum += k * k * k;
      }
  }
  return sum;
}

void check_feature_args(const FeatureSet& a, const FeatureSet& b, const char* op) {
  if (a.features.cols() != b.features.cols()) {
    std::ostringstream os;
    os << op << ": feature dimensions differ (" << a.features.cols() << " vs "
       << b.features.cols() << ")";
    throw std::invalid_argument(os.str());
  }
  if (a.features.rows() < 2 || b.features.rows() < 2)
    throw std::invalid_argument(std::string(op) +
                                ": each feature set needs at least 2 rows");
}

}  // namespace

double psnr(const Image& a, const Image& b) {
  check_shapes(a, b, "psnr");
  double se = 0.0;
  for (size_t i = 0; i < a.rgb.size(); ++i) {
    double d = a.rgb[i] - b.rgb[i];
    se += d * d;
  }
  if (a.rgb.empty()) throw std::invalid_argument("psnr: empty images");
  double mse = se / static_cast<double>(a.rgb.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

double ssim(const Image& a, const Image& b) { return ssim_engine(a, b, nullptr); }

double ssim_with_gradient(const Image& a, const Image& b, Image& d_a) {
  return ssim_engine(a, b, &d_a);
}

FeatureSet load_features(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open feature file: " + path);
  std::string tag;
  long n = 0, d = 0;
  if (!(in >> tag >> n >> d) || tag != "features" || n < 0 || d <= 0)
    throw std::runtime_error(path + ": expected header 'features n d'");
  FeatureSet set;
  set.source = path;
  set.features.resize(n, d);
  for (long i = 0; i < n; ++i)
    for (long j = 0; j < d; ++j) {
      // Token + strtod instead of stream extraction so literal inf and nan
      // reach the finiteness check rather than failing as unparseable.
      std::string tok;
      char* end = nullptr;
      const double v = (in >> tok) ? std::strtod(tok.c_str(), &end) : 0.0;
      if (tok.empty() || end != tok.c_str() + tok.size()) {
        std::ostringstream os;
        os << path << ": truncated at row " << i << " col " << j << " (expected "
           << n << "x" << d << " values)";
        throw std::runtime_error(os.str());
      }
      if (!std::isfinite(v)) {
        std::ostringstream os;
        os << path << ": non-finite value at row " << i << " col " << j;
        throw std::runtime_error(os.str());
      }
      set.features(i, j) = v;
    }
  return set;
}

void save_features(const FeatureSet& set, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write feature file: " + path);
  out.precision(17);
  out << "features " << set.features.rows() << " " << set.features.cols() << "\n";
  for (Eigen::Index i = 0; i < set.features.rows(); ++i) {
    for (Eigen::Index j = 0; j < set.features.cols(); ++j) {
      if (j) out << " ";
      out << set.features(i, j);
    }
    out << "\n";
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

double fid(const FeatureSet& a, const FeatureSet& b, FidStats* stats) {
  check_feature_args(a, b, "fid");
  const Eigen::MatrixXd& fa = a.features;
  const Eigen::MatrixXd& fb = b.features;
  Eigen::VectorXd mu_a = fa.colwise().mean();
  Eigen::VectorXd mu_b = fb.colwise().mean();
  Eigen::MatrixXd ca = fa.rowwise() - mu_a.transpose();
  Eigen::MatrixXd cb = fb.rowwise() - mu_b.transpose();
  Eigen::MatrixXd sig_a = (ca.transpose() * ca) / static_cast<double>(fa.rows() - 1);
  Eigen::MatrixXd sig_b = (cb.transpose() * cb) / static_cast<double>(fb.rows() - 1);

  // sqrt(Sigma_a) via eigendecomposition; sample covariances are PSD up to
  // roundoff so negatives here are floored without comment.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es_a(sig_a);
  Eigen::VectorXd root = es_a.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  Eigen::MatrixXd sqrt_a =
      es_a.eigenvectors() * root.asDiagonal() * es_a.eigenvectors().transpose();

  Eigen::MatrixXd prod = sqrt_a * sig_b * sqrt_a;
  prod = 0.5 * (prod + prod.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es_p(prod);
  Eigen::VectorXd lam = es_p.eigenvalues();
  double eps = 1e-10 * std::max(prod.trace(), 0.0);
  FidStats local;
  local.min_eigenvalue = lam.size() ? lam.minCoeff() : 0.0;
  double tr_sqrt = 0.0;
  for (Eigen::Index i = 0; i < lam.size(); ++i) {
    double v = lam(i);
    if (v < 0.0) {
      if (v < -eps) ++local.clipped_eigenvalues;
      v = 0.0;
    }
    tr_sqrt += std::sqrt(v);
  }
  if (stats != nullptr) *stats = local;
  double mean_term = (mu_a - mu_b).squaredNorm();
  double value = mean_term + sig_a.trace() + sig_b.trace() - 2.0 * tr_sqrt;
  return std::max(value, 0.0);
}

double kid(const FeatureSet& a, const FeatureSet& b) {
  check_feature_args(a, b, "kid");
  const double m = static_cast<double>(a.features.rows());
  const double n = static_cast<double>(b.features.rows());
  double sxx = poly_kernel_sum(a.features, a.features, true);
  double syy = poly_kernel_sum(b.features, b.features, true);
  double sxy = poly_kernel_sum(a.features, b.features, false);
  return sxx / (m * (m - 1.0)) + syy / (n * (n - 1.0)) - 2.0 * sxy / (m * n);
}

std::vector<ScoreRecord> load_score_records(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open score file: " + path);
  std::vector<ScoreRecord> records;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      ScoreRecord r;
      r.subject = j.at("subject").get<std::string>();
      r.azimuth_deg = j.at("azimuth").get<int>();
      r.clarity = j.at("clarity").get<double>();
      r.structural_integrity = j.at("structural_integrity").get<double>();
      r.texture_quality = j.at("texture_quality").get<double>();
      r.color_lighting_consistency = j.at("color_lighting_consistency").get<double>();
      r.overall_perception = j.at("overall_perception").get<double>();
      if (r.azimuth_deg != 135 && r.azimuth_deg != 180 && r.azimuth_deg != 225)
        throw std::runtime_error("azimuth must be 135, 180, or 225");
      for (double v : {r.clarity, r.structural_integrity, r.texture_quality,
                       r.color_lighting_consistency, r.overall_perception})
        if (!(v >= 0.0 && v <= 10.0))
          throw std::runtime_error("criterion scores must lie in [0,10]");
      records.push_back(std::move(r));
    } catch (const std::exception& e) {
      std::ostringstream os;
      os << path << ":" << lineno << ": " << e.what();
      throw std::runtime_error(os.str());
    }
  }
  return records;
}

void save_score_records(const std::vector<ScoreRecord>& records,
                        const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write score file: " + path);
  for (const ScoreRecord& r : records) {
    nlohmann::json j;
    j["subject"] = r.subject;
    j["azimuth"] = r.azimuth_deg;
    j["clarity"] = r.clarity;
    j["structural_integrity"] = r.structural_integrity;
    j["texture_quality"] = r.texture_quality;
    j["color_lighting_consistency"] = r.color_lighting_consistency;
    j["overall_perception"] = r.overall_perception;
    out << j.dump() << "\n";
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

PerceptualReport perceptual_aggregate(const std::vector<ScoreRecord>& records) {
  if (records.empty())
    throw std::invalid_argument("perceptual_aggregate: no records");
  struct Cell {
    std::array<double, 5> sum{};
    int count = 0;
  };
  std::map<std::string, std::map<int, Cell>> by_subject;
  for (const ScoreRecord& r : records) {
    Cell& cell = by_subject[r.subject][r.azimuth_deg];
    cell.sum[0] += r.clarity;
    cell.sum[1] += r.structural_integrity;
    cell.sum[2] += r.texture_quality;
    cell.sum[3] += r.color_lighting_consistency;
    cell.sum[4] += r.overall_perception;
    ++cell.count;
  }

  PerceptualReport report;
  const std::array<std::pair<int, double>, 3> weights = {
      {{180, 0.5}, {135, 0.25}, {225, 0.25}}};
  for (const auto& [subject, cells] : by_subject) {
    std::array<double, 5> weighted{};
    for (const auto& [az, weight] : weights) {
      auto it = cells.find(az);
      if (it == cells.end()) {
        std::ostringstream os;
        os << "perceptual_aggregate: subject '" << subject
           << "' has no records for azimuth " << az;
        throw std::invalid_argument(os.str());
      }
      for (int k = 0; k < 5; ++k)
        weighted[k] += weight * it->second.sum[k] / it->second.count;
    }
    double subject_score = 0.0;
    for (int k = 0; k < 5; ++k) {
      report.criterion_means[k] += weighted[k];
      subject_score += weighted[k];
    }
    report.per_subject.emplace_back(subject, subject_score / 5.0);
  }
  const double ns = static_cast<double>(by_subject.size());
  for (int k = 0; k < 5; ++k) {
    report.criterion_means[k] /= ns;
    report.overall += report.criterion_means[k];
  }
  report.overall /= 5.0;
  return report;
}

}  // namespace backsplat
