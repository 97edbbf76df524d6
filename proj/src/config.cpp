#include "backsplat/config.hpp"

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace backsplat {

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool bare_key_ok(const std::string& k) {
  if (k.empty()) return false;
  for (char c : k)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-') return false;
  return true;
}

[[noreturn]] void fail(const std::string& name, int line, const std::string& msg) {
  throw std::runtime_error(name + ":" + std::to_string(line) + ": " + msg);
}

double parse_number(const std::string& name, int line, const std::string& text) {
  const std::string t = trim(text);
  if (t.empty()) fail(name, line, "missing number");
  const char* begin = t.c_str();
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(begin, &end);
  if (end != begin + t.size() || errno == ERANGE)
    fail(name, line, "invalid number '" + t + "'");
  if (!std::isfinite(v)) fail(name, line, "non-finite number '" + t + "'");
  return v;
}

std::string parse_quoted(const std::string& name, int line, const std::string& text) {
  if (text.size() < 2 || text.back() != '"')
    fail(name, line, "unterminated string");
  std::string out;
  for (size_t i = 1; i + 1 < text.size(); ++i) {
    char c = text[i];
    if (c == '\\') {
      if (i + 2 >= text.size()) fail(name, line, "dangling escape in string");
      char n = text[++i];
      switch (n) {
        case '"': out += '"'; break;
        case '\\': out += '\\'; break;
        case 'n': out += '\n'; break;
        case 't': out += '\t'; break;
        default: fail(name, line, std::string("unsupported escape '\\") + n + "'");
      }
    } else if (c == '"') {
      fail(name, line, "unexpected content after closing quote");
    } else {
      out += c;
    }
  }
  return out;
}

ConfigValue parse_value(const std::string& name, int line, const std::string& raw) {
  const std::string v = trim(raw);
  if (v.empty()) fail(name, line, "missing value");
  if (v.front() == '"') return parse_quoted(name, line, v);
  if (v == "true") return true;
  if (v == "false") return false;
  if (v.front() == '[') {
    if (v.back() != ']') fail(name, line, "unterminated array");
    std::vector<double> items;
    std::string inner = v.substr(1, v.size() - 2);
    size_t pos = 0;
    bool seen_comma = false;
    while (true) {
      size_t comma = inner.find(',', pos);
      std::string elem = trim(inner.substr(pos, comma == std::string::npos ? comma : comma - pos));
      if (elem.empty()) {
        const bool trailing = comma == std::string::npos && seen_comma && !items.empty();
        const bool empty_array = comma == std::string::npos && items.empty() && !seen_comma;
        if (!trailing && !empty_array) fail(name, line, "empty array element");
      } else {
        items.push_back(parse_number(name, line, elem));
      }
      if (comma == std::string::npos) break;
      seen_comma = true;
      pos = comma + 1;
    }
    return items;
  }
  return parse_number(name, line, v);
}

std::string strip_comment(const std::string& line) {
  bool in_string = false;
  for (size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (in_string && c == '\\') { ++i; continue; }
    if (c == '"') in_string = !in_string;
    else if (c == '#' && !in_string) return line.substr(0, i);
  }
  return line;
}

const char* type_name(const ConfigValue& v) {
  switch (v.index()) {
    case 0: return "string";
    case 1: return "number";
    case 2: return "boolean";
    default: return "array of numbers";
  }
}

}  // namespace

ConfigDoc ConfigDoc::parse_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_string(ss.str(), path);
}

ConfigDoc ConfigDoc::parse_string(const std::string& text, const std::string& name) {
  ConfigDoc doc;
  doc.name_ = name;
  std::istringstream in(text);
  std::string raw;
  std::string section;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(strip_comment(raw));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail(name, line_no, "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (!bare_key_ok(section)) fail(name, line_no, "invalid section name '" + section + "'");
      continue;
    }
    const size_t eq = line.find('=');
    if (eq == std::string::npos) fail(name, line_no, "expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (!bare_key_ok(key)) fail(name, line_no, "invalid key '" + key + "'");
    if (section.empty()) fail(name, line_no, "key '" + key + "' outside of any [section]");
    auto& slot_map = doc.sections_[section];
    if (slot_map.count(key))
      fail(name, line_no, "duplicate key '" + section + "." + key + "'");
    Slot slot;
    slot.value = parse_value(name, line_no, line.substr(eq + 1));
    slot.line = line_no;
    slot_map.emplace(key, std::move(slot));
  }
  return doc;
}

const ConfigDoc::Slot* ConfigDoc::find(const std::string& section, const std::string& key) const {
  auto sit = sections_.find(section);
  if (sit == sections_.end()) return nullptr;
  auto kit = sit->second.find(key);
  if (kit == sit->second.end()) return nullptr;
  kit->second.read = true;
  return &kit->second;
}

bool ConfigDoc::has(const std::string& section, const std::string& key) const {
  return find(section, key) != nullptr;
}

std::string ConfigDoc::get_string(const std::string& section, const std::string& key,
                                  const std::string& fallback) const {
  const Slot* s = find(section, key);
  if (!s) return fallback;
  if (!std::holds_alternative<std::string>(s->value))
    fail(name_, s->line, section + "." + key + ": expected string, got " + type_name(s->value));
  return std::get<std::string>(s->value);
}

double ConfigDoc::get_number(const std::string& section, const std::string& key,
                             double fallback) const {
  const Slot* s = find(section, key);
  if (!s) return fallback;
  if (!std::holds_alternative<double>(s->value))
    fail(name_, s->line, section + "." + key + ": expected number, got " + type_name(s->value));
  return std::get<double>(s->value);
}

long long ConfigDoc::get_integer(const std::string& section, const std::string& key,
                                 long long fallback) const {
  const Slot* s = find(section, key);
  if (!s) return fallback;
  if (!std::holds_alternative<double>(s->value))
    fail(name_, s->line, section + "." + key + ": expected integer, got " + type_name(s->value));
  const double v = std::get<double>(s->value);
  if (std::floor(v) != v || std::abs(v) > 9.007199254740992e15)
    fail(name_, s->line, section + "." + key + ": expected integer, got " + std::to_string(v));
  return static_cast<long long>(v);
}

bool ConfigDoc::get_bool(const std::string& section, const std::string& key, bool fallback) const {
  const Slot* s = find(section, key);
  if (!s) return fallback;
  if (!std::holds_alternative<bool>(s->value))
    fail(name_, s->line, section + "." + key + ": expected boolean, got " + type_name(s->value));
  return std::get<bool>(s->value);
}

std::vector<double> ConfigDoc::get_number_list(const std::string& section, const std::string& key,
                                               const std::vector<double>& fallback) const {
  const Slot* s = find(section, key);
  if (!s) return fallback;
  if (std::holds_alternative<double>(s->value)) return {std::get<double>(s->value)};
  if (!std::holds_alternative<std::vector<double>>(s->value))
    fail(name_, s->line,
         section + "." + key + ": expected array of numbers, got " + type_name(s->value));
  return std::get<std::vector<double>>(s->value);
}

std::vector<std::string> ConfigDoc::unread_keys() const {
  std::vector<std::string> out;
  for (const auto& [section, keys] : sections_)
    for (const auto& [key, slot] : keys)
      if (!slot.read)
        out.push_back(section + "." + key + " (line " + std::to_string(slot.line) + ")");
  return out;
}

SimilarityTransform SceneConfig::generator_to_world() const {
  SimilarityTransform xf;
  xf.scale = Vec3::Constant(generator_scale);
  xf.rotation = Vec3(0.0, generator_rotation_y_deg * M_PI / 180.0, 0.0);
  xf.translation = generator_translation;
  return xf;
}

void SceneConfig::validate() const {
  auto bad = [](const std::string& msg) { throw std::runtime_error("config: " + msg); };
  if (mesh_path.empty()) bad("scene.mesh is required");
  if (subject_cloud_path.empty()) bad("scene.subject_cloud is required");
  if (generator_path.empty()) bad("scene.generator is required");
  if (camera_count < 1) bad("cameras.count must be >= 1");
  if (!(azimuth_span_deg >= 0.0 && azimuth_span_deg <= 360.0))
    bad("cameras.azimuth_span_deg must be in [0, 360]");
  if (!(elevation_deg > -89.0 && elevation_deg < 89.0))
    bad("cameras.elevation_deg must be in (-89, 89)");
  if (!(radius > 0.0)) bad("cameras.radius must be positive");
  if (!(focal > 0.0)) bad("cameras.focal must be positive");
  for (int r : {real_width, real_height, pseudo_width, pseudo_height})
    if (r < 16) bad("resolution sides must be >= 16");
  if (rounds < 0) bad("loop.rounds must be >= 0");
  if (fit_steps < 1) bad("loop.fit_steps must be >= 1");
  if (align_steps < 1) bad("loop.align_steps must be >= 1");
  if (invert_steps_w < 0 || invert_steps_theta < 0) bad("loop inversion steps must be >= 0");
  if (back_views < 1) bad("loop.back_views must be >= 1");
  if (back_camera_mode != "seeded" && back_camera_mode != "even")
    bad("loop.back_camera_mode must be \"seeded\" or \"even\"");
  if (render_azimuths.empty()) bad("loop.render_azimuths must not be empty");
  if (eval_azimuths.empty()) bad("loop.eval_azimuths must not be empty");
  if (!(fit_lr0 > 0.0)) bad("fit.lr0 must be positive");
  if (!(generator_scale > 0.0)) bad("generator_frame.scale must be positive");
  if (!(render.sigma_min > 0.0)) bad("render.sigma_min must be positive");
  if (!(render.sigma_max >= render.sigma_min)) bad("render.sigma_max must be >= sigma_min");
  if (!(render.footprint_sigma > 0.0)) bad("render.footprint_sigma must be positive");
  if (render.dilation < 0.0) bad("render.dilation must be >= 0");
  for (int c = 0; c < 3; ++c)
    if (!(render.background(c) >= 0.0 && render.background(c) <= 1.0))
      bad("render.background components must be in [0, 1]");
  alignment.validate();
  inversion.validate();
}

SceneConfig scene_config_from_doc(const ConfigDoc& doc, const std::string& base_dir) {
  namespace fs = std::filesystem;
  SceneConfig cfg;
  auto resolve = [&](const std::string& p) {
    if (p.empty() || fs::path(p).is_absolute()) return p;
    return (fs::path(base_dir) / p).lexically_normal().string();
  };

  cfg.mesh_path = resolve(doc.get_string("scene", "mesh", ""));
  cfg.blendshapes_path = resolve(doc.get_string("scene", "blendshapes", ""));
  cfg.subject_cloud_path = resolve(doc.get_string("scene", "subject_cloud", ""));
  cfg.generator_path = resolve(doc.get_string("scene", "generator", ""));
  const long long seed = doc.get_integer("scene", "seed", static_cast<long long>(cfg.seed));
  if (seed < 0) throw std::runtime_error("config: scene.seed must be >= 0");
  cfg.seed = static_cast<uint64_t>(seed);

  cfg.camera_count = static_cast<int>(doc.get_integer("cameras", "count", cfg.camera_count));
  cfg.azimuth_center_deg = doc.get_number("cameras", "azimuth_center_deg", cfg.azimuth_center_deg);
  cfg.azimuth_span_deg = doc.get_number("cameras", "azimuth_span_deg", cfg.azimuth_span_deg);
  cfg.elevation_deg = doc.get_number("cameras", "elevation_deg", cfg.elevation_deg);
  cfg.radius = doc.get_number("cameras", "radius", cfg.radius);
  cfg.focal = doc.get_number("cameras", "focal", cfg.focal);

  cfg.real_width = static_cast<int>(doc.get_integer("resolution", "real_width", cfg.real_width));
  cfg.real_height = static_cast<int>(doc.get_integer("resolution", "real_height", cfg.real_height));
  cfg.pseudo_width =
      static_cast<int>(doc.get_integer("resolution", "pseudo_width", cfg.pseudo_width));
  cfg.pseudo_height =
      static_cast<int>(doc.get_integer("resolution", "pseudo_height", cfg.pseudo_height));

  cfg.rounds = static_cast<int>(doc.get_integer("loop", "rounds", cfg.rounds));
  cfg.fit_steps = static_cast<int>(doc.get_integer("loop", "fit_steps", cfg.fit_steps));
  cfg.align_steps = static_cast<int>(doc.get_integer("loop", "align_steps", cfg.align_steps));
  cfg.invert_steps_w =
      static_cast<int>(doc.get_integer("loop", "invert_steps_w", cfg.invert_steps_w));
  cfg.invert_steps_theta =
      static_cast<int>(doc.get_integer("loop", "invert_steps_theta", cfg.invert_steps_theta));
  cfg.back_views = static_cast<int>(doc.get_integer("loop", "back_views", cfg.back_views));
  cfg.back_camera_mode = doc.get_string("loop", "back_camera_mode", cfg.back_camera_mode);
  cfg.render_azimuths = doc.get_number_list("loop", "render_azimuths", cfg.render_azimuths);
  cfg.eval_azimuths = doc.get_number_list("loop", "eval_azimuths", cfg.eval_azimuths);
  cfg.refine_hook = doc.get_string("loop", "refine_hook", cfg.refine_hook);

  cfg.fit_lr0 = doc.get_number("fit", "lr0", cfg.fit_lr0);

  cfg.alignment.lr0 = doc.get_number("alignment", "lr0", cfg.alignment.lr0);
  cfg.alignment.lambda_flame = doc.get_number("alignment", "lambda_flame", cfg.alignment.lambda_flame);
  cfg.alignment.lambda_pseudo =
      doc.get_number("alignment", "lambda_pseudo", cfg.alignment.lambda_pseudo);
  cfg.alignment.w_l1 = doc.get_number("alignment", "w_l1", cfg.alignment.w_l1);
  cfg.alignment.w_ssim = doc.get_number("alignment", "w_ssim", cfg.alignment.w_ssim);
  cfg.alignment.train_kernels = doc.get_bool("alignment", "train_kernels", cfg.alignment.train_kernels);
  cfg.alignment.kernel_lr_scale =
      doc.get_number("alignment", "kernel_lr_scale", cfg.alignment.kernel_lr_scale);
  cfg.alignment.phi_cap = doc.get_number("alignment", "phi_cap", cfg.alignment.phi_cap);

  cfg.inversion.lr_w = doc.get_number("inversion", "lr_w", cfg.inversion.lr_w);
  cfg.inversion.lr_theta = doc.get_number("inversion", "lr_theta", cfg.inversion.lr_theta);
  cfg.inversion.lambda_latent =
      doc.get_number("inversion", "lambda_latent", cfg.inversion.lambda_latent);
  cfg.inversion.lambda_grad = doc.get_number("inversion", "lambda_grad", cfg.inversion.lambda_grad);
  cfg.inversion.steps_w = cfg.invert_steps_w;
  cfg.inversion.steps_theta = cfg.invert_steps_theta;

  cfg.render.sigma_min = doc.get_number("render", "sigma_min", cfg.render.sigma_min);
  cfg.render.sigma_max = doc.get_number("render", "sigma_max", cfg.render.sigma_max);
  const std::vector<double> bg = doc.get_number_list(
      "render", "background",
      {cfg.render.background.x(), cfg.render.background.y(), cfg.render.background.z()});
  if (bg.size() != 3) throw std::runtime_error("config: render.background needs 3 components");
  cfg.render.background = Vec3(bg[0], bg[1], bg[2]);
  cfg.render.footprint_sigma = doc.get_number("render", "footprint_sigma", cfg.render.footprint_sigma);
  cfg.render.dilation = doc.get_number("render", "dilation", cfg.render.dilation);

  cfg.generator_scale = doc.get_number("generator_frame", "scale", cfg.generator_scale);
  cfg.generator_rotation_y_deg =
      doc.get_number("generator_frame", "rotation_y_deg", cfg.generator_rotation_y_deg);
  const std::vector<double> tr = doc.get_number_list(
      "generator_frame", "translation",
      {cfg.generator_translation.x(), cfg.generator_translation.y(), cfg.generator_translation.z()});
  if (tr.size() != 3)
    throw std::runtime_error("config: generator_frame.translation needs 3 components");
  cfg.generator_translation = Vec3(tr[0], tr[1], tr[2]);

  const std::vector<std::string> unknown = doc.unread_keys();
  if (!unknown.empty()) {
    std::string msg = doc.name() + ": unknown keys:";
    for (const auto& k : unknown) msg += " " + k;
    throw std::runtime_error(msg);
  }

  cfg.alignment.render = cfg.render;
  cfg.validate();
  return cfg;
}

SceneConfig load_scene_config(const std::string& path) {
  namespace fs = std::filesystem;
  const ConfigDoc doc = ConfigDoc::parse_file(path);
  SceneConfig cfg = scene_config_from_doc(doc, fs::path(path).parent_path().string());
  for (const std::string* p : {&cfg.mesh_path, &cfg.subject_cloud_path, &cfg.generator_path})
    if (!fs::exists(*p)) throw std::runtime_error("config " + path + ": file not found: " + *p);
  if (!cfg.blendshapes_path.empty() && !fs::exists(cfg.blendshapes_path))
    throw std::runtime_error("config " + path + ": file not found: " + cfg.blendshapes_path);
  return cfg;
}

}  // namespace backsplat
