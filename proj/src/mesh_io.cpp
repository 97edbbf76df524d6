#include "backsplat/mesh_io.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace backsplat {

namespace {

[[noreturn]] void fail(const std::string& path, int line, const std::string& what) {
  throw std::runtime_error(path + ":" + std::to_string(line) + ": " + what);
}

}  // namespace

Eigen::MatrixX3d load_obj_vertices(const std::string& path, Eigen::MatrixX3i* triangles) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open mesh file: " + path);
  }
  std::vector<Vec3> verts;
  std::vector<Eigen::Vector3i> faces;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    std::string tag;
    if (!(ss >> tag)) continue;
    if (tag == "v") {
      Vec3 v;
      if (!(ss >> v.x() >> v.y() >> v.z())) fail(path, lineno, "malformed vertex line");
      verts.push_back(v);
    } else if (tag == "f") {
      std::vector<long> idx;
      std::string tok;
      while (ss >> tok) {
        if (tok.find('/') != std::string::npos) {
          fail(path, lineno, "face indices with attributes are not supported");
        }
        size_t pos = 0;
        long i = 0;
        try {
          i = std::stol(tok, &pos);
        } catch (const std::exception&) {
          pos = 0;
        }
        if (pos != tok.size()) fail(path, lineno, "malformed face index '" + tok + "'");
        idx.push_back(i);
      }
      if (idx.size() != 3) fail(path, lineno, "only triangular faces are supported");
      Eigen::Vector3i f;
      for (int j = 0; j < 3; ++j) {
        if (idx[j] < 1 || idx[j] > static_cast<long>(verts.size())) {
          fail(path, lineno, "face index out of range");
        }
        f[j] = static_cast<int>(idx[j] - 1);
      }
      faces.push_back(f);
    }
    // anything else (comments, normals, groups, ...) is skipped
  }
  Eigen::MatrixX3d V(verts.size(), 3);
  for (size_t i = 0; i < verts.size(); ++i) V.row(i) = verts[i];
  if (triangles) {
    triangles->resize(faces.size(), 3);
    for (size_t i = 0; i < faces.size(); ++i) triangles->row(i) = faces[i];
  }
  return V;
}

namespace {

std::vector<Eigen::MatrixX3d> load_blendshapes(const std::string& path, int vertex_count) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open blendshape file: " + path);
  }
  std::string tag;
  int k = 0, n = 0;
  if (!(in >> tag >> k >> n) || tag != "blendshapes") {
    throw std::runtime_error(path + ": expected header 'blendshapes K N'");
  }
  if (k < 0 || n != vertex_count) {
    throw std::runtime_error(path + ": blendshape header does not match mesh (N=" +
                             std::to_string(n) + ", mesh has " +
                             std::to_string(vertex_count) + " vertices)");
  }
  std::vector<Eigen::MatrixX3d> shapes(k, Eigen::MatrixX3d(n, 3));
  for (int s = 0; s < k; ++s) {
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < 3; ++j) {
        if (!(in >> shapes[s](i, j))) {
          throw std::runtime_error(path + ": truncated blendshape data");
        }
      }
    }
  }
  return shapes;
}

}  // namespace

ParametricMesh load_mesh(const std::string& obj_path, const std::string& blendshape_path) {
  ParametricMesh mesh;
  mesh.base_vertices = load_obj_vertices(obj_path, &mesh.triangles);
  if (!blendshape_path.empty()) {
    mesh.blendshapes = load_blendshapes(blendshape_path, mesh.vertex_count());
  }
  mesh.validate();
  return mesh;
}

void save_mesh(const ParametricMesh& mesh, const std::string& obj_path,
               const std::string& blendshape_path) {
  {
    std::ofstream out(obj_path);
    if (!out) throw std::runtime_error("cannot write mesh file: " + obj_path);
    out.precision(17);
    for (int i = 0; i < mesh.vertex_count(); ++i) {
      out << "v " << mesh.base_vertices(i, 0) << ' ' << mesh.base_vertices(i, 1) << ' '
          << mesh.base_vertices(i, 2) << '\n';
    }
    for (int k = 0; k < mesh.triangle_count(); ++k) {
      out << "f " << mesh.triangles(k, 0) + 1 << ' ' << mesh.triangles(k, 1) + 1 << ' '
          << mesh.triangles(k, 2) + 1 << '\n';
    }
  }
  if (blendshape_path.empty()) return;
  std::ofstream out(blendshape_path);
  if (!out) throw std::runtime_error("cannot write blendshape file: " + blendshape_path);
  out.precision(17);
  out << "blendshapes " << mesh.blendshape_count() << ' ' << mesh.vertex_count() << '\n';
  for (const auto& b : mesh.blendshapes) {
    for (int i = 0; i < b.rows(); ++i) {
      out << b(i, 0) << ' ' << b(i, 1) << ' ' << b(i, 2) << '\n';
    }
  }
}

}  // namespace backsplat
