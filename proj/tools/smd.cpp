// smd: depth from small motion on the command line.
//
//   smd run --input frames/ --output-dir out
//   smd synth --output-dir out --init-mode flat
//   smd bench --trials 10 --rot-max 0.5
//   smd calib-eval --focal 1300 --k1 -0.1 --k2 0.02
//   smd --config smd.ini synth        (sections named after subcommands)

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>

#include "smd/pipeline.hpp"
#include "smd/synth.hpp"

namespace {

void add_ba_options(CLI::App& app, smd::BAOptions& ba) {
  app.add_option("--max-iter", ba.max_iter, "LM iteration cap")->capture_default_str();
  app.add_option("--ftol", ba.ftol, "relative cost decrease for convergence")->capture_default_str();
  app.add_option("--xtol", ba.xtol, "relative step norm for convergence")->capture_default_str();
  app.add_option("--delta", ba.delta, "Huber threshold in pixels")->capture_default_str();
  app.add_option("--lambda0", ba.lambda0, "initial damping")->capture_default_str();
}

void add_pipeline_options(CLI::App& app, smd::PipelineConfig& cfg, std::string& init_mode) {
  app.add_option("--output-dir", cfg.output_dir, "directory for depth.pfm, depth_preview.png, report.json")
      ->capture_default_str();
  app.add_option("--grid-size", cfg.grid_size, "feature grid cell size in pixels")->capture_default_str();
  app.add_option("--n-planes", cfg.n_planes, "depth planes")->capture_default_str();
  app.add_option("--sweep-downscale", cfg.sweep_downscale, "integer reduction for the sweep")
      ->capture_default_str();
  app.add_option("--median-radius", cfg.median_radius, "depth median filter radius")->capture_default_str();
  app.add_option("--init-mode", init_mode, "rank1 or flat")
      ->check(CLI::IsMember({"rank1", "flat"}))
      ->capture_default_str();
  app.add_option("--seed", cfg.seed, "seed for synthetic scenes")->capture_default_str();
  app.add_option("--threads", cfg.threads, "worker cap, 0 = auto")->capture_default_str();
  add_ba_options(app, cfg.ba);
}

void add_scene_options(CLI::App& app, smd::SceneConfig& sc) {
  app.add_option("--n-frames", sc.n_frames, "non-reference frames")->capture_default_str();
  app.add_option("--m-points", sc.m_points, "points before culling")->capture_default_str();
  app.add_option("--width", sc.width)->capture_default_str();
  app.add_option("--height", sc.height)->capture_default_str();
  app.add_option("--focal-true", sc.focal_true)->capture_default_str();
  app.add_option("--k1-true", sc.k1_true)->capture_default_str();
  app.add_option("--k2-true", sc.k2_true)->capture_default_str();
  app.add_option("--depth-min", sc.depth_min)->capture_default_str();
  app.add_option("--depth-max", sc.depth_max)->capture_default_str();
  app.add_option("--baseline-frac", sc.baseline_frac, "max |t| / mean depth")->capture_default_str();
  app.add_option("--rot-max", sc.rot_max_deg, "max rotation in degrees")->capture_default_str();
  app.add_option("--noise-px", sc.noise_px, "tracking noise sigma")->capture_default_str();
}

// SMD_SEED wins over flags and config files.
void apply_seed_env(std::uint64_t& seed) {
  if (const char* env = std::getenv("SMD_SEED")) {
    try {
      seed = std::stoull(env);
    } catch (const std::exception&) {
      throw smd::Error(smd::ErrorKind::InvalidArgument, std::string("SMD_SEED is not an integer: ") + env);
    }
  }
}

int finish_run(const smd::RunReport& rep) {
  if (rep.ok) {
    std::cout << "wrote " << rep.depth_pfm.string() << ", " << rep.depth_preview.string() << ", "
              << rep.report_json.string() << "\n";
    std::cout << "features " << rep.feature_count << ", BA " << rep.ba.iterations << " iterations"
              << (rep.ba.converged ? " (converged)" : " (not converged)") << ", focal " << rep.focal << "\n";
    return 0;
  }
  std::cerr << "stage " << rep.failed_stage << " failed: " << rep.error << "\n";
  return smd::exit_code(rep.error_kind.value_or(smd::ErrorKind::IoError));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Depth from small motion"};
  app.require_subcommand(1);
  app.set_config("--config", "", "key = value file, one [run]/[synth]/[bench]/[calib-eval] section per subcommand; flags win");

  smd::PipelineConfig run_cfg;
  std::string run_init = "rank1";
  CLI::App* run = app.add_subcommand("run", "estimate a depth map from a frame sequence");
  run->add_option("--input", run_cfg.input, "directory of PNG/PGM frames or a file pattern")->required();
  add_pipeline_options(*run, run_cfg, run_init);

  smd::PipelineConfig synth_cfg;
  std::string synth_init = "rank1";
  CLI::App* synth = app.add_subcommand("synth", "render a synthetic two-plane scene and run the pipeline");
  add_pipeline_options(*synth, synth_cfg, synth_init);
  add_scene_options(*synth, synth_cfg.scene);

  smd::SceneConfig bench_scene;
  smd::BAOptions bench_ba;
  int trials = 10;
  std::string bench_out;
  CLI::App* bench = app.add_subcommand("bench", "rank-1 versus flat initialization, one JSON line per run");
  add_scene_options(*bench, bench_scene);
  add_ba_options(*bench, bench_ba);
  bench->add_option("--trials", trials)->capture_default_str();
  bench->add_option("--seed", bench_scene.seed, "seed of the first trial")->capture_default_str();
  bench->add_option("--out", bench_out, "write records here instead of stdout");

  smd::CameraModel est, truth;
  est.k = truth.k = smd::Intrinsicsd::from_image_size(1280, 720);
  truth.k.focal = 1280;
  truth.d = {-0.12, 0.03};
  int width = 1280, height = 720;
  double grid_step = 20;
  CLI::App* calib = app.add_subcommand("calib-eval", "pixel-grid distortion error and focal error");
  calib->add_option("--width", width)->capture_default_str();
  calib->add_option("--height", height)->capture_default_str();
  calib->add_option("--focal", est.k.focal, "estimated focal")->required();
  calib->add_option("--k1", est.d.k1)->capture_default_str();
  calib->add_option("--k2", est.d.k2)->capture_default_str();
  calib->add_option("--truth-focal", truth.k.focal)->capture_default_str();
  calib->add_option("--truth-k1", truth.d.k1)->capture_default_str();
  calib->add_option("--truth-k2", truth.d.k2)->capture_default_str();
  calib->add_option("--grid-step", grid_step)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*run) {
      run_cfg.init_mode = smd::parse_init_mode(run_init);
      apply_seed_env(run_cfg.seed);
      return finish_run(smd::run(run_cfg));
    }
    if (*synth) {
      synth_cfg.synthetic = true;
      synth_cfg.init_mode = smd::parse_init_mode(synth_init);
      apply_seed_env(synth_cfg.seed);
      return finish_run(smd::run(synth_cfg));
    }
    if (*bench) {
      apply_seed_env(bench_scene.seed);
      const auto records = smd::bench_convergence(bench_scene, trials, bench_ba);
      std::ofstream file;
      if (!bench_out.empty()) {
        file.open(bench_out);
        if (!file) throw smd::Error(smd::ErrorKind::IoError, "cannot write " + bench_out);
      }
      std::ostream& out = bench_out.empty() ? std::cout : file;
      for (const auto& r : records) out << smd::to_json_line(r) << "\n";
      return 0;
    }
    if (*calib) {
      const smd::Intrinsicsd size = smd::Intrinsicsd::from_image_size(width, height);
      est.k.principal_point = truth.k.principal_point = size.principal_point;
      est.k.width = truth.k.width = width;
      est.k.height = truth.k.height = height;
      std::printf("grid_error_px %.6f\nfocal_error_pct %.6f\n",
                  smd::grid_distortion_error(est, truth, grid_step),
                  smd::eval_focal(est.k.focal, truth.k.focal));
      return 0;
    }
  } catch (const smd::Error& e) {
    std::cerr << e.what() << "\n";
    return smd::exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return 2;
  }
  return 2;
}
