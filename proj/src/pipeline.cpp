#include "backsplat/pipeline.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include "backsplat/image_io.hpp"
#include "backsplat/mesh_io.hpp"
#include "backsplat/metrics.hpp"

namespace backsplat {

namespace fs = std::filesystem;

namespace {

std::string serialize_rng(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

std::mt19937_64 restore_rng(const std::string& text) {
  std::mt19937_64 rng;
  std::istringstream is(text);
  is >> rng;
  if (!is) throw std::runtime_error("corrupt rng state in checkpoint");
  return rng;
}

std::string az_label(double az) {
  std::ostringstream os;
  os << az;
  return os.str();
}

void save_loss_trace(const std::vector<double>& losses, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write trace: " + path);
  out << "step,loss\n";
  out.precision(17);
  for (size_t i = 0; i < losses.size(); ++i) out << i << "," << losses[i] << "\n";
}

int executing_round(const PipelineState& state) { return state.round + 1; }

void log_line(const PipelineContext& ctx, const std::string& msg) {
  if (!ctx.opt.quiet) std::cout << "[loop] " << msg << "\n";
}

}  // namespace

std::vector<Camera> ring_cameras(const SceneConfig& cfg) {
  std::vector<Camera> cams;
  cams.reserve(cfg.camera_count);
  const int n = cfg.camera_count;
  for (int i = 0; i < n; ++i) {
    const double frac = n == 1 ? 0.5 : static_cast<double>(i) / (n - 1);
    const double az = cfg.azimuth_center_deg + (frac - 0.5) * cfg.azimuth_span_deg;
    cams.push_back(camera_from_orbit(az, cfg.elevation_deg, cfg.radius, Vec3::Zero(),
                                     cfg.focal, cfg.real_width, cfg.real_height));
  }
  return cams;
}

Camera orbit_camera(const SceneConfig& cfg, double azimuth_deg, int width, int height) {
  return camera_from_orbit(azimuth_deg, cfg.elevation_deg, cfg.radius, Vec3::Zero(),
                           cfg.focal, width, height);
}

Camera remap_camera_to_generator(const Camera& world_cam,
                                 const SimilarityTransform& gen_to_world) {
  const double s = gen_to_world.scale.x();
  if (std::abs(gen_to_world.scale.y() - s) > 1e-12 ||
      std::abs(gen_to_world.scale.z() - s) > 1e-12)
    throw std::invalid_argument("camera remap needs a uniform calibration scale");
  if (!(s > 0.0)) throw std::invalid_argument("camera remap needs a positive scale");
  if (std::abs(gen_to_world.rotation.x()) > 1e-12 ||
      std::abs(gen_to_world.rotation.z()) > 1e-12)
    throw std::invalid_argument("camera remap needs a y-axis calibration rotation");
  const double beta = gen_to_world.rotation.y();

  Camera cam = world_cam;
  cam.azimuth_deg = world_cam.azimuth_deg - beta * 180.0 / M_PI;
  cam.radius = world_cam.radius / s;
  const Mat3 r_inv = rodrigues_exp(Vec3(0.0, -beta, 0.0));
  cam.target = (r_inv * (world_cam.target - gen_to_world.translation)) / s;
  return cam;
}

PipelineContext make_context(const SceneConfig& cfg, const LoopOptions& opt) {
  PipelineContext ctx;
  ctx.cfg = cfg;
  ctx.opt = opt;
  ctx.cfg.render.threads = opt.threads;
  ctx.cfg.alignment.render = ctx.cfg.render;

  ctx.mesh = load_mesh(cfg.mesh_path, cfg.blendshapes_path);
  ctx.subject = load_cloud(cfg.subject_cloud_path);
  if (ctx.subject.triangles.rows() != ctx.mesh.triangles.rows())
    throw std::runtime_error("subject cloud topology does not match the mesh");
  ctx.generator_prior = load_generator(cfg.generator_path);
  ctx.generator_prior.render = ctx.cfg.render;

  ctx.cams = ring_cameras(ctx.cfg);
  ctx.captures.reserve(ctx.cams.size());
  const std::vector<WorldKernel> world =
      globalize(ctx.subject, ctx.mesh.base_vertices, SimilarityTransform::identity(),
                ctx.cfg.render);
  for (const Camera& cam : ctx.cams) ctx.captures.push_back(render(world, cam, ctx.cfg.render));
  return ctx;
}

PipelineState fresh_state(const PipelineContext& ctx) {
  PipelineState state;
  state.stage = "init";
  state.round = 0;
  state.cloud = bind_kernels(ctx.mesh.base_vertices, ctx.mesh.triangles, 1);
  state.transform = SimilarityTransform::identity();
  state.phi = MeshParams::Zero(static_cast<Eigen::Index>(ctx.mesh.blendshape_count()));
  state.phi_orig = state.phi;
  state.generator = ctx.generator_prior;
  state.has_generator = true;
  std::mt19937_64 rng(ctx.opt.seed.value_or(ctx.cfg.seed));
  state.rng_state = serialize_rng(rng);
  return state;
}

std::string checkpoint_file(const std::string& out_dir) {
  return (fs::path(out_dir) / "checkpoint.json").string();
}

Image render_avatar(const PipelineContext& ctx, const PipelineState& state, const Camera& cam) {
  const Eigen::MatrixX3d verts = mesh_eval(ctx.mesh, state.phi);
  const std::vector<WorldKernel> world =
      globalize(state.cloud, verts, SimilarityTransform::identity(), ctx.cfg.render);
  return render(world, cam, ctx.cfg.render);
}

Image render_subject(const PipelineContext& ctx, const Camera& cam) {
  const std::vector<WorldKernel> world =
      globalize(ctx.subject, ctx.mesh.base_vertices, SimilarityTransform::identity(),
                ctx.cfg.render);
  return render(world, cam, ctx.cfg.render);
}

void stage_fit(const PipelineContext& ctx, PipelineState& state) {
  AlignmentConfig fit_cfg = ctx.cfg.alignment;
  fit_cfg.lr0 = ctx.cfg.fit_lr0;
  fit_cfg.max_steps = ctx.cfg.fit_steps;
  fit_cfg.freeze_scale = true;
  fit_cfg.freeze_rotation = true;
  fit_cfg.freeze_translation = true;
  fit_cfg.render = ctx.cfg.render;

  std::vector<SupervisionView> views;
  views.reserve(ctx.captures.size());
  for (size_t i = 0; i < ctx.captures.size(); ++i)
    views.push_back(
        make_supervision_view(ctx.captures[i], ctx.cams[i], ViewKind::real, fit_cfg));

  AlignmentResult res = optimize_alignment(state.cloud, ctx.mesh, state.phi, state.phi_orig,
                                           views, fit_cfg, SimilarityTransform::identity());
  state.cloud = res.cloud;
  state.phi = res.phi;
  save_trace_csv(res.trace, (fs::path(ctx.opt.out_dir) / "fit_trace.csv").string());
  log_line(ctx, "fit: best loss " + std::to_string(res.best_loss) + " at step " +
                    std::to_string(res.best_step));
}

void stage_invert(const PipelineContext& ctx, PipelineState& state) {
  const SimilarityTransform calib = ctx.cfg.generator_to_world();

  std::vector<std::pair<Image, Camera>> ori;
  ori.reserve(ctx.captures.size());
  for (size_t i = 0; i < ctx.captures.size(); ++i)
    ori.emplace_back(ctx.captures[i], remap_camera_to_generator(ctx.cams[i], calib));

  std::vector<std::pair<Image, Camera>> renders;
  renders.reserve(ctx.cfg.render_azimuths.size());
  for (double az : ctx.cfg.render_azimuths) {
    const Camera wc = orbit_camera(ctx.cfg, az, ctx.cfg.pseudo_width, ctx.cfg.pseudo_height);
    renders.emplace_back(render_avatar(ctx, state, wc), remap_camera_to_generator(wc, calib));
  }

  const HybridSet hybrid = build_hybrid_set(ori, renders);
  GeneratorParams init = state.generator;
  init.render = ctx.cfg.render;
  const InversionResult inv = invert(init, hybrid, ctx.cfg.inversion);
  state.generator = inv.params;

  const std::string trace = (fs::path(ctx.opt.out_dir) /
                             ("invert_trace_round" + std::to_string(executing_round(state)) +
                              ".csv")).string();
  save_loss_trace(inv.trace, trace);
  log_line(ctx, "invert round " + std::to_string(executing_round(state)) + ": loss " +
                    std::to_string(inv.initial_loss) + " -> " + std::to_string(inv.final_loss));
}

SynthesisResult stage_synthesize(const PipelineContext& ctx, const PipelineState& state) {
  std::mt19937_64 rng = restore_rng(state.rng_state);
  std::optional<uint64_t> sub_seed;
  if (ctx.cfg.back_camera_mode == "seeded") sub_seed = rng();

  const std::vector<Camera> world_cams = sample_back_cameras(
      ctx.cfg.back_views, ctx.cfg.elevation_deg, ctx.cfg.radius, Vec3::Zero(), ctx.cfg.focal,
      ctx.cfg.pseudo_width, ctx.cfg.pseudo_height, sub_seed);

  const SimilarityTransform calib = ctx.cfg.generator_to_world();
  std::vector<Camera> gen_cams;
  gen_cams.reserve(world_cams.size());
  for (const Camera& cam : world_cams) gen_cams.push_back(remap_camera_to_generator(cam, calib));

  GeneratorParams gen = state.generator;
  gen.render = ctx.cfg.render;
  std::string work_dir;
  if (!ctx.cfg.refine_hook.empty()) {
    work_dir = (fs::path(ctx.opt.out_dir) / "work").string();
    fs::create_directories(work_dir);
  }

  SynthesisResult out;
  out.views = synthesize_back_views(gen, gen_cams, ctx.cfg.refine_hook, work_dir);
  out.advanced_rng_state = serialize_rng(rng);

  const fs::path dir = fs::path(ctx.opt.out_dir) / "pseudo" /
                       ("round_" + std::to_string(executing_round(state)));
  fs::create_directories(dir);
  for (size_t k = 0; k < out.views.size(); ++k)
    save_png(out.views[k].image, (dir / ("back_" + std::to_string(k) + ".png")).string());
  log_line(ctx, "synthesize round " + std::to_string(executing_round(state)) + ": " +
                    std::to_string(out.views.size()) + " pseudo views");
  return out;
}

void stage_align(const PipelineContext& ctx, PipelineState& state,
                 const std::vector<BackView>& pseudo_views) {
  AlignmentConfig acfg = ctx.cfg.alignment;
  acfg.max_steps = ctx.cfg.align_steps;
  acfg.render = ctx.cfg.render;

  std::vector<SupervisionView> views;
  views.reserve(ctx.captures.size() + pseudo_views.size());
  for (size_t i = 0; i < ctx.captures.size(); ++i)
    views.push_back(make_supervision_view(ctx.captures[i], ctx.cams[i], ViewKind::real, acfg));
  for (const BackView& bv : pseudo_views)
    views.push_back(make_supervision_view(bv.image, bv.camera, ViewKind::pseudo, acfg));

  AlignmentResult res = optimize_alignment(state.cloud, ctx.mesh, state.phi, state.phi_orig,
                                           views, acfg, state.transform);
  state.cloud = res.cloud;
  state.phi = res.phi;
  state.transform = res.transform;

  const int round = executing_round(state);
  save_trace_csv(res.trace, (fs::path(ctx.opt.out_dir) /
                             ("align_trace_round" + std::to_string(round) + ".csv")).string());

  const std::string tag = "round" + std::to_string(round);
  state.report.push_back({tag, "xf_scale", res.transform.scale.x()});
  state.report.push_back({tag, "xf_rot_deg", res.transform.rotation.norm() * 180.0 / M_PI});
  state.report.push_back({tag, "xf_t_norm", res.transform.translation.norm()});
  log_line(ctx, "align round " + std::to_string(round) + ": best loss " +
                    std::to_string(res.best_loss) + " at step " + std::to_string(res.best_step));
}

void append_eval_rows(const PipelineContext& ctx, PipelineState& state, const std::string& tag) {
  for (double az : ctx.cfg.eval_azimuths) {
    const Camera cam = orbit_camera(ctx.cfg, az, ctx.cfg.real_width, ctx.cfg.real_height);
    const Image truth = render_subject(ctx, cam);
    const Image avatar = render_avatar(ctx, state, cam);
    state.report.push_back({tag, "psnr_az" + az_label(az), psnr(avatar, truth)});
    state.report.push_back({tag, "l1_az" + az_label(az), mean_abs_diff(avatar, truth)});
  }
}

PipelineState run_loop(const SceneConfig& cfg, const LoopOptions& opt) {
  if (opt.out_dir.empty()) throw std::invalid_argument("run_loop needs an output directory");
  const PipelineContext ctx = make_context(cfg, opt);
  fs::create_directories(opt.out_dir);
  const std::string ckpt = checkpoint_file(opt.out_dir);

  PipelineState state;
  if (fs::exists(ckpt)) {
    state = load_checkpoint(ckpt);
    if (state.cloud.size() != static_cast<size_t>(ctx.mesh.triangle_count()))
      throw std::runtime_error("checkpoint cloud does not match the scene mesh");
    if (state.phi.size() != static_cast<Eigen::Index>(ctx.mesh.blendshape_count()))
      throw std::runtime_error("checkpoint blendshape params do not match the mesh");
    log_line(ctx, "resuming from " + ckpt + " at stage " + state.stage + ", round " +
                      std::to_string(state.round));
  } else {
    state = fresh_state(ctx);
  }

  const int rounds = opt.rounds.value_or(cfg.rounds);

  if (state.stage == "init") {
    stage_fit(ctx, state);
    append_eval_rows(ctx, state, "fit");
    state.stage = "fitted";
    save_checkpoint(state, ckpt);
  }

  while (state.round < rounds &&
         (state.stage == "fitted" || state.stage == "aligned" || state.stage == "inverted")) {
    if (state.stage == "fitted" || state.stage == "aligned") {
      stage_invert(ctx, state);
      state.stage = "inverted";
      save_checkpoint(state, ckpt);
    }
    const SynthesisResult syn = stage_synthesize(ctx, state);
    stage_align(ctx, state, syn.views);
    state.rng_state = syn.advanced_rng_state;
    state.round += 1;
    append_eval_rows(ctx, state, "round" + std::to_string(state.round));
    state.stage = "aligned";
    save_checkpoint(state, ckpt);
  }

  if (state.stage != "done") {
    append_eval_rows(ctx, state, "final");
    state.stage = "done";
    save_checkpoint(state, ckpt);
  }
  save_report_csv(state.report, (fs::path(opt.out_dir) / "report.csv").string());
  log_line(ctx, "done: " + std::to_string(state.round) + " round(s), report at " +
                    (fs::path(opt.out_dir) / "report.csv").string());
  return state;
}

}  // namespace backsplat
