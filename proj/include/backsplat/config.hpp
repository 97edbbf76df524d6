#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "backsplat/alignment.hpp"
#include "backsplat/generator.hpp"
#include "backsplat/geometry.hpp"
#include "backsplat/splat.hpp"

namespace backsplat {

/// One parsed config value. Numbers are stored as double; integer-valued
/// keys are range checked on access.
using ConfigValue = std::variant<std::string, double, bool, std::vector<double>>;

/// TOML subset: [section] headers, key = value lines, # comments, blank
/// lines. Values are quoted strings, numbers, booleans, or flat arrays of
/// numbers. Errors carry path:line.
class ConfigDoc {
 public:
  static ConfigDoc parse_file(const std::string& path);
  static ConfigDoc parse_string(const std::string& text, const std::string& name);

  bool has(const std::string& section, const std::string& key) const;

  std::string get_string(const std::string& section, const std::string& key,
                         const std::string& fallback) const;
  double get_number(const std::string& section, const std::string& key, double fallback) const;
  long long get_integer(const std::string& section, const std::string& key,
                        long long fallback) const;
  bool get_bool(const std::string& section, const std::string& key, bool fallback) const;
  std::vector<double> get_number_list(const std::string& section, const std::string& key,
                                      const std::vector<double>& fallback) const;

  /// Keys present in the file but never read by any getter. Used to reject
  /// typos after a schema walk.
  std::vector<std::string> unread_keys() const;

  const std::string& name() const { return name_; }

 private:
  struct Slot {
    ConfigValue value;
    int line = 0;
    mutable bool read = false;
  };
  const Slot* find(const std::string& section, const std::string& key) const;

  std::string name_;
  std::map<std::string, std::map<std::string, Slot>> sections_;
};

/// Full scene + run configuration. Defaults reproduce the bundled scene's
/// settings; paths are resolved relative to the config file's directory.
struct SceneConfig {
  // [scene]
  std::string mesh_path;
  std::string blendshapes_path;
  std::string subject_cloud_path;
  std::string generator_path;
  uint64_t seed = 42;

  // [cameras] capture ring
  int camera_count = 16;
  double azimuth_center_deg = 0.0;
  double azimuth_span_deg = 120.0;
  double elevation_deg = 15.0;
  double radius = 2.8;
  double focal = 130.0;

  // [resolution]
  int real_width = 96;
  int real_height = 96;
  int pseudo_width = 96;
  int pseudo_height = 96;

  // [loop]
  int rounds = 1;
  int fit_steps = 400;
  int align_steps = 500;
  int invert_steps_w = 120;
  int invert_steps_theta = 60;
  int back_views = 6;
  std::string back_camera_mode = "seeded";  // "seeded" or "even"
  std::vector<double> render_azimuths{70.0, 290.0};
  std::vector<double> eval_azimuths{170.0, 180.0, 190.0};
  std::string refine_hook;

  // [fit]
  double fit_lr0 = 0.02;

  // [alignment] shared by the fit and align stages; step counts above
  AlignmentConfig alignment;

  // [inversion]
  InversionConfig inversion;

  // [render]
  SplatConfig render;

  // [generator_frame] calibration mapping the generator frame into world
  double generator_scale = 1.0;
  double generator_rotation_y_deg = 0.0;
  Vec3 generator_translation = Vec3::Zero();

  SimilarityTransform generator_to_world() const;

  /// Value ranges only; file existence is checked at load time.
  void validate() const;
};

/// Parses, resolves paths against the file's directory, validates ranges,
/// and rejects unknown keys.
SceneConfig load_scene_config(const std::string& path);

/// The same schema walk over an already parsed document; base_dir anchors
/// relative paths.
SceneConfig scene_config_from_doc(const ConfigDoc& doc, const std::string& base_dir);

}  // namespace backsplat
