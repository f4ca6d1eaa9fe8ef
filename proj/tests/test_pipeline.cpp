#include <doctest.h>

#include <json.hpp>

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "smd/image_io.hpp"
#include "smd/pipeline.hpp"
#include "smd/rank1.hpp"

using namespace smd;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "smd_test_pipeline" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

PipelineConfig small_synthetic(const fs::path& out) {
  PipelineConfig cfg;
  cfg.synthetic = true;
  cfg.scene.width = 640;
  cfg.scene.height = 360;
  cfg.scene.focal_true = 640;
  cfg.scene.n_frames = 6;
  cfg.grid_size = 40;
  cfg.n_planes = 32;
  cfg.threads = 1;
  cfg.seed = 2;
  cfg.output_dir = out;
  return cfg;
}

nlohmann::json without_timing(const fs::path& report) {
  auto j = nlohmann::json::parse(slurp(report));
  j.erase("timing");
  j.erase("outputs");
  return j;
}

int cli(const std::string& args) {
  const std::string cmd = std::string(SMD_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("init modes and exit codes") {
  CHECK(parse_init_mode("rank1") == InitMode::Rank1);
  CHECK(parse_init_mode("flat") == InitMode::Flat);
  CHECK(to_string(InitMode::Flat) == "flat");
  CHECK_THROWS_AS(parse_init_mode("svd"), Error);
  CHECK(exit_code(ErrorKind::DegenerateMotion) == 3);
  CHECK(exit_code(ErrorKind::NonConvergent) == 4);
  CHECK(exit_code(ErrorKind::NumericalFailure) == 4);
  CHECK(exit_code(ErrorKind::DecodeError) == 2);
  CHECK(exit_code(ErrorKind::TooFewFrames) == 2);
  CHECK(exit_code(ErrorKind::SizeMismatch) == 2);
}

TEST_CASE("config defaults") {
  const PipelineConfig cfg;
  CHECK(cfg.grid_size == 80);
  CHECK(cfg.n_planes == 128);
  CHECK(cfg.sweep_downscale == 2);
  CHECK(cfg.init_mode == InitMode::Rank1);
  CHECK(kStageNames == std::vector<std::string>{"read", "features", "init", "ba", "sweep"});
}

TEST_CASE("frame listing and loading") {
  const fs::path dir = fresh_dir("frames");
  const GrayImage a = texture_image(24, 16, 1), b = texture_image(24, 16, 2);
  write_pgm(dir / "f_10.pgm", b);
  write_pgm(dir / "f_02.pgm", a);
  write_pgm(dir / "g_01.pgm", a);
  std::ofstream(dir / "notes.txt") << "x";

  const auto all = list_frames(dir.string());
  REQUIRE(all.size() == 3);
  CHECK(all[0].filename() == "f_02.pgm");
  CHECK(all[1].filename() == "f_10.pgm");
  CHECK(all[2].filename() == "g_01.pgm");
  const auto glob = list_frames((dir / "f_*.pgm").string());
  REQUIRE(glob.size() == 2);
  CHECK(glob[0].filename() == "f_02.pgm");

  const auto frames = load_frames((dir / "f_*.pgm").string());
  REQUIRE(frames.size() == 2);
  CHECK((frames[0] - a).abs().maxCoeff() <= 0.5f / 255);
  CHECK((frames[1] - b).abs().maxCoeff() <= 0.5f / 255);

  try {
    (void)load_frames((dir / "f_02.pgm").string());
    FAIL("expected TooFewFrames");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::TooFewFrames);
  }
  write_pgm(dir / "f_20.pgm", texture_image(20, 16, 3));
  try {
    (void)load_frames((dir / "f_*.pgm").string());
    FAIL("expected SizeMismatch");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::SizeMismatch);
    CHECK(std::string(e.what()).find("f_20.pgm") != std::string::npos);
  }
  CHECK_THROWS_AS(load_frames((dir / "missing" / "*.pgm").string()), Error);
}

TEST_CASE("colorize") {
  DepthMap m;
  m.width = 3;
  m.height = 1;
  m.inverse_depth = FloatMap(1, 3);
  m.inverse_depth << 0.2f, 0.0f, 0.6f;
  m.confidence = FloatMap::Zero(1, 3);
  m.valid = MaskMap(1, 3);
  m.valid << 1, 0, 1;
  const auto rgb = colorize(m);
  REQUIRE(rgb.size() == 9);
  // Viridis end points, dark purple and yellow, through a polynomial fit.
  CHECK(std::abs(rgb[0] - 68) <= 4);
  CHECK(std::abs(rgb[1] - 1) <= 4);
  CHECK(std::abs(rgb[2] - 84) <= 4);
  CHECK(rgb[3] == 0);
  CHECK(rgb[4] == 0);
  CHECK(rgb[5] == 0);
  CHECK(std::abs(rgb[6] - 253) <= 4);
  CHECK(std::abs(rgb[7] - 231) <= 4);
  CHECK(std::abs(rgb[8] - 37) <= 4);
}

TEST_CASE("synthetic run") {
  const fs::path out = fresh_dir("run_a");
  const PipelineConfig cfg = small_synthetic(out);
  const RunReport rep = run(cfg);
  INFO(rep.error);
  REQUIRE(rep.ok);

  SUBCASE("stages and timing") {
    REQUIRE(rep.stages.size() == kStageNames.size());
    double sum = 0;
    for (std::size_t i = 0; i < rep.stages.size(); ++i) {
      CHECK(rep.stages[i].name == kStageNames[i]);
      CHECK(rep.stages[i].seconds >= 0);
      sum += rep.stages[i].seconds;
    }
    CHECK(sum <= rep.total_seconds);
  }
  SUBCASE("outputs reproduce the stages") {
    SceneConfig sc = cfg.scene;
    sc.seed = cfg.seed;
    sc.render_images = true;
    const SynthScene scene = generate(sc);
    FeatureParams fp;
    fp.grid_size = cfg.grid_size;
    const TrackTable tracks = build_tracks(scene.truth.images, fp);
    CHECK(rep.feature_count == tracks.m_points());
    CHECK(rep.n_frames == 7);

    const Intrinsicsd k = Intrinsicsd::from_image_size(640, 360);
    const BAResult ba = solve(make_state(initialize(tracks, k), k), tracks);
    CHECK(rep.focal == ba.state.focal);
    CHECK(rep.ba.iterations == ba.report.iterations);
    const auto [lo, hi] = plane_range(ba.state.omegas);
    const auto planes = sample_planes(lo, hi, cfg.n_planes);
    std::vector<GrayImage> others;
    for (std::size_t i = 1; i < scene.truth.images.size(); ++i) others.push_back(downscale(scene.truth.images[i], 2));
    const DepthMap depth = median_refine(
        winner_take_all(sweep(downscale(scene.truth.images[0], 2), others, ba.state, planes), planes), 2);

    const Eigen::ArrayXXf pfm = read_pfm(rep.depth_pfm);
    REQUIRE(pfm.rows() == 180);
    REQUIRE(pfm.cols() == 320);
    const Eigen::ArrayXXf expected = depth.inverse_depth.cast<float>();
    CHECK(std::memcmp(pfm.data(), expected.data(), sizeof(float) * expected.size()) == 0);
    CHECK(rep.depth_valid_pixels == depth.valid_count());
    CHECK(fs::exists(rep.depth_preview));
  }
  SUBCASE("quality against the generating scene") {
    REQUIRE(rep.truth);
    CHECK(rep.ba.converged);
    CHECK(rep.truth->focal_error_pct <= 3.0);
    CHECK(rep.truth->within_one_plane >= 0.9);
  }
  SUBCASE("report json") {
    const auto j = nlohmann::json::parse(slurp(rep.report_json));
    CHECK(j["status"] == "ok");
    CHECK(j["feature_count"] == rep.feature_count);
    CHECK(j["planes"]["count"] == 32);
    CHECK(j.contains("timing"));
    for (const auto& name : kStageNames) CHECK(j["timing"].contains(name));
  }
  SUBCASE("identical config gives identical outputs") {
    PipelineConfig again = cfg;
    again.output_dir = fresh_dir("run_b");
    const RunReport rep2 = run(again);
    REQUIRE(rep2.ok);
    CHECK(slurp(rep.depth_pfm) == slurp(rep2.depth_pfm));
    CHECK(without_timing(rep.report_json) == without_timing(rep2.report_json));
  }
}

TEST_CASE("flat initialization runs the same stages") {
  PipelineConfig cfg = small_synthetic(fresh_dir("run_flat"));
  cfg.init_mode = InitMode::Flat;
  const RunReport rep = run(cfg);
  INFO(rep.error);
  REQUIRE(rep.ok);
  CHECK(rep.init_mode == "flat");
  CHECK(rep.stages.size() == kStageNames.size());
}

TEST_CASE("stage failures are reported") {
  const fs::path dir = fresh_dir("one_frame");
  write_pgm(dir / "a.pgm", texture_image(64, 48, 1));
  PipelineConfig cfg;
  cfg.input = dir.string();
  cfg.output_dir = dir / "out";
  const RunReport rep = run(cfg);
  CHECK_FALSE(rep.ok);
  CHECK(rep.failed_stage == "read");
  REQUIRE(rep.error_kind);
  CHECK(*rep.error_kind == ErrorKind::TooFewFrames);
  const auto j = nlohmann::json::parse(slurp(rep.report_json));
  CHECK(j["status"] == "error");
  CHECK(j["failed_stage"] == "read");

  // Pure rotation: the initializer sees no baseline.
  PipelineConfig still = small_synthetic(fresh_dir("no_baseline"));
  still.scene.baseline_frac = 0;
  const RunReport r2 = run(still);
  CHECK_FALSE(r2.ok);
  CHECK(r2.failed_stage == "init");
  REQUIRE(r2.error_kind);
  CHECK(*r2.error_kind == ErrorKind::DegenerateMotion);
}

TEST_CASE("command line") {
  const fs::path dir = fresh_dir("cli");
  const std::string small = " --width 640 --height 360 --focal-true 640 --n-frames 5 --grid-size 40 --n-planes 16";

  CHECK(cli("--help") == 0);
  CHECK(cli("") == 2);
  CHECK(cli("run") == 2);
  CHECK(cli("synth --no-such-flag") == 2);
  CHECK(cli("synth --init-mode svd") == 2);

  fs::create_directories(dir / "one");
  write_pgm(dir / "one" / "a.pgm", texture_image(64, 48, 1));
  CHECK(cli("run --input " + (dir / "one").string() + " --output-dir " + (dir / "o1").string()) == 2);
  CHECK(cli("synth --baseline-frac 0 --output-dir " + (dir / "o2").string() + small) == 3);
  CHECK(cli("calib-eval --focal 1280") == 0);
  CHECK(cli("calib-eval --focal 1280 --grid-step 0") == 2);

  SUBCASE("config file, flags win") {
    std::ofstream(dir / "smd.ini") << "[synth]\nn-planes = 24\ngrid-size = 40\n";
    REQUIRE(cli("--config " + (dir / "smd.ini").string() + " synth --width 640 --height 360 --focal-true 640 "
                "--n-frames 5 --output-dir " + (dir / "o3").string()) == 0);
    const auto j = nlohmann::json::parse(slurp(dir / "o3" / "report.json"));
    CHECK(j["planes"]["count"] == 24);
    REQUIRE(cli("--config " + (dir / "smd.ini").string() + " synth --n-planes 20 --width 640 --height 360 "
                "--focal-true 640 --n-frames 5 --output-dir " + (dir / "o4").string()) == 0);
    CHECK(nlohmann::json::parse(slurp(dir / "o4" / "report.json"))["planes"]["count"] == 20);
  }
  SUBCASE("SMD_SEED overrides the seed flag") {
    REQUIRE(cli("synth --seed 4 --output-dir " + (dir / "s4").string() + small) == 0);
    REQUIRE(setenv("SMD_SEED", "4", 1) == 0);
    const int rc = cli("synth --seed 9 --output-dir " + (dir / "s9").string() + small);
    unsetenv("SMD_SEED");
    REQUIRE(rc == 0);
    CHECK(slurp(dir / "s4" / "depth.pfm") == slurp(dir / "s9" / "depth.pfm"));
    CHECK(without_timing(dir / "s4" / "report.json") == without_timing(dir / "s9" / "report.json"));
  }
  SUBCASE("bench writes one record per run") {
    REQUIRE(cli("bench --trials 2 --n-frames 4 --m-points 60 --out " + (dir / "bench.jsonl").string()) == 0);
    std::istringstream lines(slurp(dir / "bench.jsonl"));
    std::vector<nlohmann::json> recs;
    for (std::string line; std::getline(lines, line);) recs.push_back(nlohmann::json::parse(line));
    REQUIRE(recs.size() == 4);
    CHECK(recs[0]["init_mode"] == "rank1");
    CHECK(recs[1]["init_mode"] == "flat");
    CHECK(recs[2]["seed"] == 2);
  }
}

}  // TEST_SUITE
