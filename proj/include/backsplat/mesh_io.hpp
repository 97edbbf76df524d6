#pragma once

#include <string>

#include "backsplat/geometry.hpp"

namespace backsplat {

// OBJ subset: only `v x y z` and `f i j k` lines are parsed (1-based plain
// indices, triangles only); every other line is ignored. Blendshapes live in
// a sidecar text file with header `blendshapes K N` followed by K*N rows of
// three whitespace-separated displacement components.

Eigen::MatrixX3d load_obj_vertices(const std::string& path, Eigen::MatrixX3i* triangles);

/// Loads mesh + optional blendshape sidecar (empty path = no blendshapes)
/// and validates the result.
ParametricMesh load_mesh(const std::string& obj_path, const std::string& blendshape_path = "");

void save_mesh(const ParametricMesh& mesh, const std::string& obj_path,
               const std::string& blendshape_path = "");

}  // namespace backsplat
