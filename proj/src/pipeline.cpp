#include "smd/pipeline.hpp"

#include <fnmatch.h>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

#include "smd/image_io.hpp"
#include "smd/rank1.hpp"

namespace smd {

namespace fs = std::filesystem;

std::string to_string(InitMode mode) { return mode == InitMode::Rank1 ? "rank1" : "flat"; }

InitMode parse_init_mode(const std::string& s) {
  if (s == "rank1") return InitMode::Rank1;
  if (s == "flat") return InitMode::Flat;
  throw Error(ErrorKind::InvalidArgument, "init mode must be rank1 or flat, got '" + s + "'");
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::DegenerateMotion:
      return 3;
    case ErrorKind::NonConvergent:
    case ErrorKind::NonPositiveDepth:
    case ErrorKind::BehindCamera:
    case ErrorKind::Degenerate:
    case ErrorKind::SignAmbiguous:
    case ErrorKind::NumericalFailure:
      return 4;
    default:
      return 2;
  }
}

std::vector<fs::path> list_frames(const std::string& pattern) {
  std::vector<fs::path> files;
  const fs::path p(pattern);
  std::error_code ec;
  if (fs::is_directory(p, ec)) {
    for (const auto& entry : fs::directory_iterator(p)) {
      if (!entry.is_regular_file()) continue;
      std::string ext = entry.path().extension().string();
      std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
      if (ext == ".png" || ext == ".pgm") files.push_back(entry.path());
    }
  } else {
    const fs::path dir = p.has_parent_path() ? p.parent_path() : fs::path(".");
    const std::string glob = p.filename().string();
    if (!fs::is_directory(dir, ec)) {
      throw Error(ErrorKind::IoError, "input directory does not exist: " + dir.string());
    }
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.is_regular_file() &&
          fnmatch(glob.c_str(), entry.path().filename().c_str(), 0) == 0) {
        files.push_back(entry.path());
      }
    }
  }
  std::sort(files.begin(), files.end());
  return files;
}

std::vector<GrayImage> load_frames(const std::string& pattern) {
  const auto files = list_frames(pattern);
  if (files.size() < 2) {
    throw Error(ErrorKind::TooFewFrames,
                "need at least 2 frames, found " + std::to_string(files.size()) + " for '" + pattern + "'");
  }
  std::vector<GrayImage> frames;
  for (const auto& f : files) {
    GrayImage img = read_image(f);
    if (!frames.empty() && (img.rows() != frames[0].rows() || img.cols() != frames[0].cols())) {
      throw Error(ErrorKind::SizeMismatch,
                  f.string() + " is " + std::to_string(img.cols()) + "x" + std::to_string(img.rows()) +
                      ", reference " + files[0].string() + " is " + std::to_string(frames[0].cols()) +
                      "x" + std::to_string(frames[0].rows()));
    }
    frames.push_back(std::move(img));
  }
  return frames;
}

FloatMap truth_inverse_depth(const GroundTruth& truth, int factor) {
  if (!truth.surface) throw Error(ErrorKind::InvalidArgument, "ground truth has no rendered surface");
  const Intrinsicsd k = truth.camera.k.downscaled(factor);
  FloatMap out(k.height, k.width);
  for (int y = 0; y < k.height; ++y) {
    for (int x = 0; x < k.width; ++x) {
      const Eigen::Vector2d xu =
          undistort(pixel_to_normalized<double>(Eigen::Vector2d(x, y), k), truth.camera.d);
      out(y, x) = static_cast<float>(truth.surface->inverse_depth(xu));
    }
  }
  return out;
}

namespace {

Eigen::Vector3d viridis(double t) {
  // Polynomial fit of matplotlib's viridis.
  const Eigen::Vector3d c0(0.2777273272234177, 0.005407344544966578, 0.3340998053353061);
  const Eigen::Vector3d c1(0.1050930431085774, 1.404613529898575, 1.384590162594685);
  const Eigen::Vector3d c2(-0.3308618287255563, 0.214847559468213, 0.09509516302823659);
  const Eigen::Vector3d c3(-4.634230498983486, -5.799100973351585, -19.33244095627987);
  const Eigen::Vector3d c4(6.228269936347081, 14.17993336680509, 56.69055260068105);
  const Eigen::Vector3d c5(4.776384997670288, -13.74514537774601, -65.35303263337234);
  const Eigen::Vector3d c6(-5.435455855934631, 4.645852612178535, 26.3124352495832);
  return c0 + t * (c1 + t * (c2 + t * (c3 + t * (c4 + t * (c5 + t * c6)))));
}

double within_one_plane(const DepthMap& map, const FloatMap& truth, const std::vector<double>& planes) {
  std::vector<double> ratios;
  for (int y = 0; y < map.height; ++y) {
    for (int x = 0; x < map.width; ++x) {
      if (map.valid(y, x)) ratios.push_back(map.inverse_depth(y, x) / truth(y, x));
    }
  }
  if (ratios.empty()) return 0.0;
  auto mid = ratios.begin() + (ratios.size() - 1) / 2;
  std::nth_element(ratios.begin(), mid, ratios.end());
  const double scale = *mid;
  const double a = planes.front();
  const double step = planes.size() > 1 ? (planes.back() - a) / (planes.size() - 1) : 1.0;
  long good = 0, total = 0;
  for (int y = 0; y < map.height; ++y) {
    for (int x = 0; x < map.width; ++x) {
      if (!map.valid(y, x)) continue;
      const long est = std::lround((map.inverse_depth(y, x) - a) / step);
      const long ref = std::lround((scale * truth(y, x) - a) / step);
      good += std::abs(est - ref) <= 1;
      ++total;
    }
  }
  return static_cast<double>(good) / total;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  out << text << '\n';
  if (!out) throw Error(ErrorKind::IoError, "failed writing " + path.string());
}

}  // namespace

std::vector<std::uint8_t> colorize(const DepthMap& map) {
  float lo = 0, hi = 0;
  bool any = false;
  for (int y = 0; y < map.height; ++y) {
    for (int x = 0; x < map.width; ++x) {
      if (!map.valid(y, x)) continue;
      const float v = map.inverse_depth(y, x);
      lo = any ? std::min(lo, v) : v;
      hi = any ? std::max(hi, v) : v;
      any = true;
    }
  }
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(map.width) * map.height * 3, 0);
  for (int y = 0; y < map.height; ++y) {
    for (int x = 0; x < map.width; ++x) {
      if (!map.valid(y, x)) continue;
      const double t = hi > lo ? (map.inverse_depth(y, x) - lo) / (hi - lo) : 0.5;
      const Eigen::Vector3d c = viridis(t).cwiseMax(0.0).cwiseMin(1.0);
      for (int ch = 0; ch < 3; ++ch) {
        rgb[(static_cast<std::size_t>(y) * map.width + x) * 3 + ch] =
            static_cast<std::uint8_t>(std::lround(255.0 * c[ch]));
      }
    }
  }
  return rgb;
}

std::string RunReport::to_json() const {
  nlohmann::ordered_json j;
  j["status"] = ok ? "ok" : "error";
  if (!ok) {
    j["failed_stage"] = failed_stage;
    j["error_kind"] = error_kind ? std::string(smd::to_string(*error_kind)) : "Unknown";
    j["error"] = error;
  }
  j["frames"] = n_frames;
  j["image_size"] = {image_width, image_height};
  j["feature_count"] = feature_count;
  j["init_mode"] = init_mode;
  j["ba"] = {{"iterations", ba.iterations},
             {"converged", ba.converged},
             {"termination", ba.termination},
             {"initial_cost", ba.initial_cost},
             {"final_cost", ba.final_cost},
             {"cost_trace", ba.cost_trace}};
  j["calibration"] = {{"focal", focal}, {"k1", k1}, {"k2", k2}};
  j["planes"] = {{"count", n_planes}, {"omega_min", plane_min}, {"omega_max", plane_max}};
  j["depth_valid_pixels"] = depth_valid_pixels;
  if (truth) {
    j["truth"] = {{"focal_error_pct", truth->focal_error_pct},
                  {"grid_error_px", truth->grid_error_px},
                  {"within_one_plane", truth->within_one_plane}};
  }
  j["outputs"] = {{"depth_pfm", depth_pfm.string()},
                  {"depth_preview", depth_preview.string()},
                  {"report", report_json.string()}};
  nlohmann::ordered_json timing;
  for (const auto& s : stages) timing[s.name] = s.seconds;
  timing["ba_solver"] = ba.wall_time_s;
  timing["total"] = total_seconds;
  j["timing"] = timing;
  return j.dump(2);
}

RunReport run(const PipelineConfig& cfg) {
  using clock = std::chrono::steady_clock;
  const auto t_start = clock::now();
  RunReport rep;
  rep.init_mode = to_string(cfg.init_mode);
  fs::create_directories(cfg.output_dir);
  rep.report_json = cfg.output_dir / "report.json";

  std::string stage;
  auto timed = [&](const std::string& name, auto&& fn) {
    stage = name;
    const auto t0 = clock::now();
    fn();
    rep.stages.push_back({name, std::chrono::duration<double>(clock::now() - t0).count()});
  };

  try {
    if (cfg.grid_size < 1 || cfg.n_planes < 1 || cfg.sweep_downscale < 1 || cfg.median_radius < 1) {
      throw Error(ErrorKind::InvalidArgument, "grid size, planes, downscale and median radius must be >= 1");
    }
    std::vector<GrayImage> frames;
    std::optional<SynthScene> scene;
    timed("read", [&] {
      if (cfg.synthetic) {
        SceneConfig sc = cfg.scene;
        sc.seed = cfg.seed;
        sc.render_images = true;
        scene = generate(sc);
        frames = scene->truth.images;
      } else {
        frames = load_frames(cfg.input);
      }
    });
    rep.n_frames = static_cast<int>(frames.size());
    rep.image_width = width(frames[0]);
    rep.image_height = height(frames[0]);

    TrackTable tracks;
    timed("features", [&] {
      FeatureParams fp;
      fp.grid_size = cfg.grid_size;
      fp.threads = cfg.threads;
      tracks = build_tracks(frames, fp);
    });
    rep.feature_count = tracks.m_points();

    const Intrinsicsd k = Intrinsicsd::from_image_size(rep.image_width, rep.image_height);
    Initialization init;
    timed("init", [&] {
      init = cfg.init_mode == InitMode::Rank1 ? initialize(tracks, k) : flat_initialize(tracks, k);
    });

    BAResult ba;
    timed("ba", [&] {
      BAOptions opts = cfg.ba;
      opts.threads = cfg.threads;
      ba = solve(make_state(init, k), tracks, opts);
    });
    rep.ba = ba.report;
    rep.focal = ba.state.focal;
    rep.k1 = ba.state.k1;
    rep.k2 = ba.state.k2;

    DepthMap depth;
    std::vector<double> planes;
    timed("sweep", [&] {
      const auto [lo, hi] = plane_range(ba.state.omegas);
      planes = sample_planes(lo, hi, cfg.n_planes);
      const GrayImage ref = downscale(frames[0], cfg.sweep_downscale);
      std::vector<GrayImage> others;
      for (std::size_t i = 1; i < frames.size(); ++i) others.push_back(downscale(frames[i], cfg.sweep_downscale));
      const CostVolume vol = sweep(ref, others, ba.state, planes, cfg.threads);
      depth = median_refine(winner_take_all(vol, planes), cfg.median_radius);
    });
    rep.plane_min = planes.front();
    rep.plane_max = planes.back();
    rep.n_planes = static_cast<int>(planes.size());
    rep.depth_valid_pixels = depth.valid_count();

    stage = "write";
    rep.depth_pfm = cfg.output_dir / "depth.pfm";
    rep.depth_preview = cfg.output_dir / "depth_preview.png";
    write_pfm(rep.depth_pfm, depth.inverse_depth.cast<float>());
    write_png(rep.depth_preview, depth.width, depth.height, 3, colorize(depth));

    if (scene) {
      stage = "evaluate";
      TruthEval ev;
      ev.focal_error_pct = eval_focal(ba.state, scene->truth);
      ev.grid_error_px = grid_distortion_error({ba.state.intrinsics(), ba.state.distortion()},
                                               scene->truth.camera, 20.0);
      ev.within_one_plane =
          within_one_plane(depth, truth_inverse_depth(scene->truth, cfg.sweep_downscale), planes);
      rep.truth = ev;
    }
    rep.ok = true;
  } catch (const Error& e) {
    rep.failed_stage = stage;
    rep.error_kind = e.kind();
    rep.error = e.what();
  } catch (const std::exception& e) {
    rep.failed_stage = stage;
    rep.error_kind = ErrorKind::IoError;
    rep.error = e.what();
  }
  rep.total_seconds = std::chrono::duration<double>(clock::now() - t_start).count();
  write_text(rep.report_json, rep.to_json());
  return rep;
}

}  // namespace smd
