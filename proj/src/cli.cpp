#include "backsplat/cli.hpp"

#include <CLI11.hpp>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "backsplat/checkpoint.hpp"
#include "backsplat/config.hpp"
#include "backsplat/image_io.hpp"
#include "backsplat/pipeline.hpp"
#include "backsplat/scenario.hpp"

namespace backsplat {

namespace {

namespace fs = std::filesystem;

struct CommonArgs {
  std::string config;
  std::string out;
  uint64_t seed = 0;
  int threads = 1;
  bool quiet = false;
  CLI::Option* seed_opt = nullptr;
};

void add_common(CLI::App* cmd, CommonArgs& a, bool with_config) {
  if (with_config)
    cmd->add_option("--config", a.config, "scene config file (toml)")
        ->required()
        ->check(CLI::ExistingFile);
  cmd->add_option("--out", a.out, "output directory")->required();
  a.seed_opt = cmd->add_option("--seed", a.seed, "seed override");
  cmd->add_option("--threads", a.threads, "render threads")->check(CLI::PositiveNumber);
  cmd->add_flag("--quiet", a.quiet, "suppress progress lines");
}

LoopOptions to_options(const CommonArgs& a) {
  LoopOptions opt;
  opt.out_dir = a.out;
  if (a.seed_opt && a.seed_opt->count()) opt.seed = a.seed;
  opt.threads = a.threads;
  opt.quiet = a.quiet;
  return opt;
}

PipelineState require_checkpoint(const PipelineContext& ctx) {
  const std::string path = checkpoint_file(ctx.opt.out_dir);
  if (!fs::exists(path))
    throw std::runtime_error("no checkpoint at " + path + "; run fit or loop first");
  return load_checkpoint(path);
}

}  // namespace

int cli_main(int argc, char** argv) {
  CLI::App app{"mesh-anchored splat avatars with generative back-view completion"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "0.1.0");

  // make-scene
  auto* cmd_scene = app.add_subcommand("make-scene", "write the bundled synthetic scene");
  std::string scene_out;
  uint64_t scene_seed = 42;
  cmd_scene->add_option("--out", scene_out, "scene directory")->required();
  cmd_scene->add_option("--seed", scene_seed, "seed recorded in scene.toml");
  cmd_scene->callback([&] {
    write_scene_files(build_toy_scene(), scene_out, scene_seed);
    std::cout << "scene written to " << scene_out << "\n";
  });

  // loop
  auto* cmd_loop = app.add_subcommand("loop", "fit, then rounds of invert/synthesize/align");
  CommonArgs loop_args;
  int loop_rounds = -1;
  add_common(cmd_loop, loop_args, true);
  auto* rounds_opt = cmd_loop->add_option("--rounds", loop_rounds, "rounds override");
  cmd_loop->callback([&] {
    const SceneConfig cfg = load_scene_config(loop_args.config);
    LoopOptions opt = to_options(loop_args);
    if (rounds_opt->count()) {
      if (loop_rounds < 0) throw CLI::ValidationError("--rounds must be >= 0");
      opt.rounds = loop_rounds;
    }
    run_loop(cfg, opt);
  });

  // fit
  auto* cmd_fit = app.add_subcommand("fit", "frontal fit only (a loop with zero rounds)");
  CommonArgs fit_args;
  add_common(cmd_fit, fit_args, true);
  cmd_fit->callback([&] {
    const SceneConfig cfg = load_scene_config(fit_args.config);
    LoopOptions opt = to_options(fit_args);
    opt.rounds = 0;
    run_loop(cfg, opt);
  });

  // invert
  auto* cmd_invert = app.add_subcommand("invert", "invert the generator against the hybrid set");
  CommonArgs invert_args;
  add_common(cmd_invert, invert_args, true);
  cmd_invert->callback([&] {
    const SceneConfig cfg = load_scene_config(invert_args.config);
    const PipelineContext ctx = make_context(cfg, to_options(invert_args));
    PipelineState state = require_checkpoint(ctx);
    if (state.stage != "fitted" && state.stage != "aligned")
      throw std::runtime_error("invert needs stage fitted or aligned, checkpoint is at stage " +
                               state.stage);
    stage_invert(ctx, state);
    state.stage = "inverted";
    save_checkpoint(state, checkpoint_file(ctx.opt.out_dir));
  });

  // synthesize
  auto* cmd_synth = app.add_subcommand(
      "synthesize", "sample back cameras and write pseudo views (checkpoint unchanged)");
  CommonArgs synth_args;
  add_common(cmd_synth, synth_args, true);
  cmd_synth->callback([&] {
    const SceneConfig cfg = load_scene_config(synth_args.config);
    const PipelineContext ctx = make_context(cfg, to_options(synth_args));
    const PipelineState state = require_checkpoint(ctx);
    stage_synthesize(ctx, state);
  });

  // align
  auto* cmd_align = app.add_subcommand("align", "one avatar-to-scene alignment round");
  CommonArgs align_args;
  add_common(cmd_align, align_args, true);
  cmd_align->callback([&] {
    const SceneConfig cfg = load_scene_config(align_args.config);
    const PipelineContext ctx = make_context(cfg, to_options(align_args));
    PipelineState state = require_checkpoint(ctx);
    if (state.stage != "inverted")
      throw std::runtime_error("align needs stage inverted, checkpoint is at stage " +
                               state.stage);
    const SynthesisResult syn = stage_synthesize(ctx, state);
    stage_align(ctx, state, syn.views);
    state.rng_state = syn.advanced_rng_state;
    state.round += 1;
    append_eval_rows(ctx, state, "round" + std::to_string(state.round));
    state.stage = "aligned";
    save_checkpoint(state, checkpoint_file(ctx.opt.out_dir));
  });

  // render
  auto* cmd_render = app.add_subcommand(
      "render", "write the capture ring and, with a checkpoint, avatar renders");
  CommonArgs render_args;
  add_common(cmd_render, render_args, true);
  cmd_render->callback([&] {
    const SceneConfig cfg = load_scene_config(render_args.config);
    const PipelineContext ctx = make_context(cfg, to_options(render_args));
    const fs::path captures = fs::path(ctx.opt.out_dir) / "captures";
    fs::create_directories(captures);
    for (size_t i = 0; i < ctx.captures.size(); ++i)
      save_png(ctx.captures[i], (captures / ("cam_" + std::to_string(i) + ".png")).string());
    std::cout << ctx.captures.size() << " captures in " << captures.string() << "\n";
    const std::string ckpt = checkpoint_file(ctx.opt.out_dir);
    if (fs::exists(ckpt)) {
      const PipelineState state = load_checkpoint(ckpt);
      const fs::path renders = fs::path(ctx.opt.out_dir) / "renders";
      fs::create_directories(renders);
      for (double az : cfg.eval_azimuths) {
        const Camera cam = orbit_camera(cfg, az, cfg.real_width, cfg.real_height);
        std::ostringstream name;
        name << "az_" << az << ".png";
        save_png(render_avatar(ctx, state, cam), (renders / name.str()).string());
      }
      std::cout << cfg.eval_azimuths.size() << " avatar renders in " << renders.string() << "\n";
    }
  });

  // eval
  auto* cmd_eval = app.add_subcommand("eval", "held-out metrics for the current checkpoint");
  CommonArgs eval_args;
  add_common(cmd_eval, eval_args, true);
  cmd_eval->callback([&] {
    const SceneConfig cfg = load_scene_config(eval_args.config);
    const PipelineContext ctx = make_context(cfg, to_options(eval_args));
    PipelineState state = require_checkpoint(ctx);
    const size_t first = state.report.size();
    append_eval_rows(ctx, state, "eval");
    std::cout << "metric,value\n";
    std::cout.precision(10);
    for (size_t i = first; i < state.report.size(); ++i)
      std::cout << state.report[i].metric << "," << state.report[i].value << "\n";
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace backsplat
