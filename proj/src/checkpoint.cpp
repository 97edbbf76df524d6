#include "backsplat/checkpoint.hpp"

#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <stdexcept>

namespace backsplat {

namespace {

using nlohmann::json;

json vec3_to_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 vec3_from_json(const json& j) {
  if (!j.is_array() || j.size() != 3)
    throw std::runtime_error("expected a 3-vector");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

json vector_to_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

Eigen::VectorXd vector_from_json(const json& j) {
  Eigen::VectorXd v(j.size());
  for (size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  return v;
}

json cloud_to_json(const SplatCloud& cloud) {
  json kernels = json::array();
  for (const GaussianKernel& k : cloud.kernels) {
    kernels.push_back({{"mu_local", vec3_to_json(k.mu_local)},
                       {"log_scale", vec3_to_json(k.log_scale)},
                       {"rot_local", vec3_to_json(k.rot_local)},
                       {"opacity_logit", k.opacity_logit},
                       {"color", vec3_to_json(k.color)}});
  }
  json triangles = json::array();
  for (Eigen::Index t = 0; t < cloud.triangles.rows(); ++t)
    triangles.push_back(
        {cloud.triangles(t, 0), cloud.triangles(t, 1), cloud.triangles(t, 2)});
  return {{"kernels", kernels}, {"binding", cloud.binding}, {"triangles", triangles}};
}

SplatCloud cloud_from_json(const json& j) {
  SplatCloud cloud;
  const json& kernels = j.at("kernels");
  cloud.kernels.reserve(kernels.size());
  for (const json& k : kernels) {
    GaussianKernel g;
    g.mu_local = vec3_from_json(k.at("mu_local"));
    g.log_scale = vec3_from_json(k.at("log_scale"));
    g.rot_local = vec3_from_json(k.at("rot_local"));
    g.opacity_logit = k.at("opacity_logit").get<double>();
    g.color = vec3_from_json(k.at("color"));
    cloud.kernels.push_back(g);
  }
  cloud.binding = j.at("binding").get<std::vector<int>>();
  const json& triangles = j.at("triangles");
  cloud.triangles.resize(static_cast<Eigen::Index>(triangles.size()), 3);
  for (size_t t = 0; t < triangles.size(); ++t) {
    const json& row = triangles[t];
    if (!row.is_array() || row.size() != 3)
      throw std::runtime_error("triangle rows must have 3 indices");
    for (int c = 0; c < 3; ++c)
      cloud.triangles(static_cast<Eigen::Index>(t), c) = row[c].get<int>();
  }
  if (cloud.binding.size() != cloud.kernels.size())
    throw std::runtime_error("binding size does not match kernel count");
  return cloud;
}

json transform_to_json(const SimilarityTransform& xf) {
  return {{"scale", vec3_to_json(xf.scale)},
          {"rotation", vec3_to_json(xf.rotation)},
          {"translation", vec3_to_json(xf.translation)}};
}

SimilarityTransform transform_from_json(const json& j) {
  SimilarityTransform xf;
  xf.scale = vec3_from_json(j.at("scale"));
  xf.rotation = vec3_from_json(j.at("rotation"));
  xf.translation = vec3_from_json(j.at("translation"));
  return xf;
}

json render_cfg_to_json(const SplatConfig& cfg) {
  return {{"sigma_min", cfg.sigma_min},
          {"sigma_max", cfg.sigma_max},
          {"background", vec3_to_json(cfg.background)},
          {"eps_near", cfg.eps_near},
          {"footprint_sigma", cfg.footprint_sigma},
          {"dilation", cfg.dilation}};
}

SplatConfig render_cfg_from_json(const json& j) {
  SplatConfig cfg;
  cfg.sigma_min = j.at("sigma_min").get<double>();
  cfg.sigma_max = j.at("sigma_max").get<double>();
  cfg.background = vec3_from_json(j.at("background"));
  cfg.eps_near = j.at("eps_near").get<double>();
  cfg.footprint_sigma = j.at("footprint_sigma").get<double>();
  cfg.dilation = j.at("dilation").get<double>();
  return cfg;
}

json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const json& j, Eigen::Index cols_hint = -1) {
  const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
  Eigen::Index cols = cols_hint;
  if (rows > 0) cols = static_cast<Eigen::Index>(j[0].size());
  if (cols < 0) cols = 0;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const json& row = j[static_cast<size_t>(r)];
    if (static_cast<Eigen::Index>(row.size()) != cols)
      throw std::runtime_error("ragged matrix rows");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row[static_cast<size_t>(c)].get<double>();
  }
  return m;
}

json generator_to_json(const GeneratorParams& g) {
  return {{"w", vector_to_json(g.w)},
          {"latent_map", matrix_to_json(g.latent_map)},
          {"template_vertices", matrix_to_json(g.template_vertices)},
          {"template_cloud", cloud_to_json(g.template_cloud)},
          {"render", render_cfg_to_json(g.render)}};
}

GeneratorParams generator_from_json(const json& j) {
  GeneratorParams g;
  g.w = vector_from_json(j.at("w"));
  g.latent_map = matrix_from_json(j.at("latent_map"));
  g.template_vertices = matrix_from_json(j.at("template_vertices"), 3);
  g.template_cloud = cloud_from_json(j.at("template_cloud"));
  g.render = render_cfg_from_json(j.at("render"));
  g.validate();
  return g;
}

json read_versioned_json(const std::string& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(std::string("cannot open ") + what + ": " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    std::ostringstream os;
    os << path << ": parse error at byte " << e.byte << ": " << e.what();
    throw std::runtime_error(os.str());
  }
  const int version = j.at("format_version").get<int>();
  if (version != kCheckpointFormatVersion) {
    std::ostringstream os;
    os << path << ": unsupported format_version " << version << " (supported: "
       << kCheckpointFormatVersion << ")";
    throw std::runtime_error(os.str());
  }
  return j;
}

void write_json(const json& j, const std::string& path, const char* what) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(std::string("cannot write ") + what + ": " + path);
  out << j.dump(1) << "\n";
  if (!out) throw std::runtime_error(std::string("write failed for ") + what + ": " + path);
}

}  // namespace

void save_cloud(const SplatCloud& cloud, const std::string& path) {
  json j = cloud_to_json(cloud);
  j["format_version"] = kCheckpointFormatVersion;
  write_json(j, path, "cloud");
}

SplatCloud load_cloud(const std::string& path) {
  try {
    return cloud_from_json(read_versioned_json(path, "cloud"));
  } catch (const json::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

void save_generator(const GeneratorParams& params, const std::string& path) {
  json j = generator_to_json(params);
  j["format_version"] = kCheckpointFormatVersion;
  write_json(j, path, "generator");
}

GeneratorParams load_generator(const std::string& path) {
  try {
    return generator_from_json(read_versioned_json(path, "generator"));
  } catch (const json::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

void save_checkpoint(const PipelineState& state, const std::string& path) {
  json j;
  j["format_version"] = kCheckpointFormatVersion;
  j["stage"] = state.stage;
  j["round"] = state.round;
  j["cloud"] = cloud_to_json(state.cloud);
  j["transform"] = transform_to_json(state.transform);
  j["phi"] = vector_to_json(state.phi);
  j["phi_orig"] = vector_to_json(state.phi_orig);
  if (state.has_generator)
    j["generator"] = generator_to_json(state.generator);
  else
    j["generator"] = nullptr;
  j["rng_state"] = state.rng_state;
  json rows = json::array();
  for (const ReportRow& r : state.report)
    rows.push_back({{"stage", r.stage}, {"metric", r.metric}, {"value", r.value}});
  j["report"] = rows;
  write_json(j, path, "checkpoint");
}

PipelineState load_checkpoint(const std::string& path) {
  json j = read_versioned_json(path, "checkpoint");
  try {
    PipelineState state;
    state.stage = j.at("stage").get<std::string>();
    state.round = j.at("round").get<int>();
    state.cloud = cloud_from_json(j.at("cloud"));
    state.transform = transform_from_json(j.at("transform"));
    state.phi = vector_from_json(j.at("phi"));
    state.phi_orig = vector_from_json(j.at("phi_orig"));
    if (!j.at("generator").is_null()) {
      state.generator = generator_from_json(j.at("generator"));
      state.has_generator = true;
    }
    state.rng_state = j.at("rng_state").get<std::string>();
    for (const json& r : j.at("report"))
      state.report.push_back({r.at("stage").get<std::string>(),
                              r.at("metric").get<std::string>(),
                              r.at("value").get<double>()});
    return state;
  } catch (const json::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

void save_report_csv(const std::vector<ReportRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write report: " + path);
  out.precision(17);
  out << "stage,metric,value\n";
  for (const ReportRow& r : rows)
    out << r.stage << "," << r.metric << "," << r.value << "\n";
  if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace backsplat
