// Python module exposing the core avatar operations with numpy in and out.
// Images cross the boundary as (H, W, 4) float64 arrays, channels r g b a.
#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <stdexcept>
#include <string>

#include "backsplat/config.hpp"
#include "backsplat/geometry.hpp"
#include "backsplat/image.hpp"
#include "backsplat/metrics.hpp"
#include "backsplat/pipeline.hpp"
#include "backsplat/scenario.hpp"
#include "backsplat/splat.hpp"

namespace py = pybind11;
using namespace backsplat;

namespace {

py::array_t<double> image_to_array(const Image& img) {
  py::array_t<double> out({img.height, img.width, 4});
  auto r = out.mutable_unchecked<3>();
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < 3; ++c) r(y, x, c) = img.rgb[(static_cast<size_t>(y) * img.width + x) * 3 + c];
      r(y, x, 3) = img.alpha[static_cast<size_t>(y) * img.width + x];
    }
  return out;
}

Image array_to_image(py::array_t<double, py::array::c_style | py::array::forcecast> arr) {
  if (arr.ndim() != 3 || (arr.shape(2) != 3 && arr.shape(2) != 4))
    throw std::invalid_argument("image array must have shape (H, W, 3) or (H, W, 4)");
  const int h = static_cast<int>(arr.shape(0));
  const int w = static_cast<int>(arr.shape(1));
  const bool has_alpha = arr.shape(2) == 4;
  Image img(w, h);
  auto r = arr.unchecked<3>();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) img.rgb[(static_cast<size_t>(y) * w + x) * 3 + c] = r(y, x, c);
      img.alpha[static_cast<size_t>(y) * w + x] = has_alpha ? r(y, x, 3) : 0.0;
    }
  return img;
}

FeatureSet array_to_features(py::array_t<double, py::array::c_style | py::array::forcecast> arr) {
  if (arr.ndim() != 2) throw std::invalid_argument("feature array must have shape (n, d)");
  FeatureSet set;
  set.features.resize(arr.shape(0), arr.shape(1));
  auto r = arr.unchecked<2>();
  for (py::ssize_t i = 0; i < arr.shape(0); ++i)
    for (py::ssize_t j = 0; j < arr.shape(1); ++j) set.features(i, j) = r(i, j);
  return set;
}

}  // namespace

PYBIND11_MODULE(backsplat, m) {
  m.doc() = "Mesh-anchored Gaussian avatar operations";

  m.def("rodrigues_exp", &rodrigues_exp, py::arg("rotvec"),
        "Axis-angle rotation vector to a 3x3 rotation matrix.");

  py::class_<SimilarityTransform>(m, "SimilarityTransform")
      .def(py::init<>())
      .def_readwrite("scale", &SimilarityTransform::scale)
      .def_readwrite("rotation", &SimilarityTransform::rotation)
      .def_readwrite("translation", &SimilarityTransform::translation)
      .def("to_matrix", &SimilarityTransform::to_matrix)
      .def_static("identity", &SimilarityTransform::identity);

  py::class_<Camera>(m, "Camera")
      .def(py::init<>())
      .def_readwrite("azimuth_deg", &Camera::azimuth_deg)
      .def_readwrite("elevation_deg", &Camera::elevation_deg)
      .def_readwrite("radius", &Camera::radius)
      .def_readwrite("target", &Camera::target)
      .def_readwrite("focal", &Camera::focal)
      .def_readwrite("width", &Camera::width)
      .def_readwrite("height", &Camera::height)
      .def("position", &Camera::position)
      .def("world_to_camera", &Camera::world_to_camera);

  m.def("camera_from_orbit", &camera_from_orbit, py::arg("azimuth_deg"),
        py::arg("elevation_deg"), py::arg("radius"), py::arg("target"), py::arg("focal"),
        py::arg("width"), py::arg("height"));

  py::class_<ParametricMesh>(m, "ParametricMesh")
      .def(py::init<>())
      .def_readwrite("base_vertices", &ParametricMesh::base_vertices)
      .def_readwrite("triangles", &ParametricMesh::triangles)
      .def_property_readonly("blendshape_count", &ParametricMesh::blendshape_count)
      .def("validate", &ParametricMesh::validate, py::arg("eps_area") = kTriangleAreaEps);

  m.def("mesh_eval", &mesh_eval, py::arg("mesh"), py::arg("phi"),
        "Vertices for blendshape parameters phi.");

  py::class_<SplatCloud>(m, "SplatCloud")
      .def_property_readonly("kernel_count",
                             [](const SplatCloud& c) { return c.kernels.size(); })
      .def("color", [](const SplatCloud& c, size_t i) { return c.kernels.at(i).color; })
      .def("set_color", [](SplatCloud& c, size_t i, const Vec3& v) { c.kernels.at(i).color = v; });

  m.def("bind_kernels", &bind_kernels, py::arg("vertices"), py::arg("triangles"),
        py::arg("per_triangle") = 1,
        "Seeds kernels on every triangle of the mesh.");

  m.def(
      "render",
      [](const SplatCloud& cloud, const Eigen::MatrixX3d& vertices,
         const SimilarityTransform& xf, const Camera& cam, const Vec3& background,
         int threads) {
        SplatConfig cfg;
        cfg.background = background;
        cfg.threads = threads;
        Image img;
        {
          py::gil_scoped_release release;
          img = render(globalize(cloud, vertices, xf, cfg), cam, cfg);
        }
        return image_to_array(img);
      },
      py::arg("cloud"), py::arg("vertices"), py::arg("transform"), py::arg("camera"),
      py::arg("background") = Vec3(0, 0, 0), py::arg("threads") = 1,
      "Splats the bound cloud and returns an (H, W, 4) array, channels r g b a.");

  m.def("icosphere", &icosphere, py::arg("subdivisions"), py::arg("radius"));

  m.def("psnr", [](py::array_t<double> a, py::array_t<double> b) {
    return psnr(array_to_image(std::move(a)), array_to_image(std::move(b)));
  });
  m.def("ssim", [](py::array_t<double> a, py::array_t<double> b) {
    return ssim(array_to_image(std::move(a)), array_to_image(std::move(b)));
  });
  m.def("mean_abs_diff", [](py::array_t<double> a, py::array_t<double> b) {
    return mean_abs_diff(array_to_image(std::move(a)), array_to_image(std::move(b)));
  });
  m.def("fid", [](py::array_t<double> a, py::array_t<double> b) {
    return fid(array_to_features(std::move(a)), array_to_features(std::move(b)));
  });
  m.def("kid", [](py::array_t<double> a, py::array_t<double> b) {
    return kid(array_to_features(std::move(a)), array_to_features(std::move(b)));
  });

  py::class_<ToyScene>(m, "ToyScene")
      .def_readwrite("mesh", &ToyScene::mesh)
      .def_readwrite("subject", &ToyScene::subject)
      .def_readwrite("generator_to_world", &ToyScene::generator_to_world);

  m.def("build_toy_scene", &build_toy_scene);
  m.def("write_scene_files", &write_scene_files, py::arg("scene"), py::arg("dir"),
        py::arg("seed"));

  m.def(
      "run_loop",
      [](const std::string& config_path, const std::string& out_dir,
         std::optional<uint64_t> seed, std::optional<int> rounds, int threads, bool quiet) {
        const SceneConfig cfg = load_scene_config(config_path);
        LoopOptions opt;
        opt.out_dir = out_dir;
        opt.seed = seed;
        opt.rounds = rounds;
        opt.threads = threads;
        opt.quiet = quiet;
        PipelineState state;
        {
          py::gil_scoped_release release;
          state = run_loop(cfg, opt);
        }
        py::list rows;
        for (const ReportRow& row : state.report)
          rows.append(py::make_tuple(row.stage, row.metric, row.value));
        return rows;
      },
      py::arg("config_path"), py::arg("out_dir"), py::arg("seed") = std::nullopt,
      py::arg("rounds") = std::nullopt, py::arg("threads") = 1, py::arg("quiet") = true,
      "Runs the fit, invert, synthesize, align loop; returns (stage, metric, value) rows.");
}
