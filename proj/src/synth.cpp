#include "smd/synth.hpp"

#include <json.hpp>

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "smd/error.hpp"
#include "smd/rank1.hpp"

namespace smd {

namespace {

constexpr UndistortOptions kTight{1e-14, 400};

Eigen::Vector3d sample_ball(std::mt19937_64& rng, double radius) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Eigen::Vector3d v(normal(rng), normal(rng), normal(rng));
  while (v.norm() < 1e-12) v = Eigen::Vector3d(normal(rng), normal(rng), normal(rng));
  return v.normalized() * radius * std::cbrt(unit(rng));
}

TwoPlaneScene make_surface(const SceneConfig& cfg) {
  const double range = cfg.depth_max - cfg.depth_min;
  TwoPlaneScene s;
  s.front_depth = cfg.depth_min + 0.4 * range;
  s.split_x = 0.0;
  const double omega_a = 1.0 / (cfg.depth_min + 0.8 * range);
  const double omega_b = 1.0 / cfg.depth_min;
  const double x_edge = 0.5 * (cfg.width - 1) / cfg.focal_true;
  const double slope = (omega_b - omega_a) / x_edge;
  s.slant_normal = Eigen::Vector3d(slope, 0.1 * slope, omega_a);
  return s;
}

bool in_image(const Eigen::Vector2d& p, int w, int h) {
  return p.x() >= 0 && p.y() >= 0 && p.x() <= w - 1 && p.y() <= h - 1;
}

GrayImage render_view(const Texture& tex, const TwoPlaneScene& surface, const CameraModel& cam,
                      const Posed& pose) {
  const int w = cam.k.width, h = cam.k.height;
  GrayImage img(h, w);
  const Eigen::Matrix3d rt = pose.rotation.matrix().transpose();
  const Eigen::Vector3d origin = pose.center();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const Eigen::Vector2d xu =
          undistort(pixel_to_normalized<double>(Eigen::Vector2d(x, y), cam.k), cam.d, kTight);
      const auto hit = surface.intersect(origin, rt * Eigen::Vector3d(xu.x(), xu.y(), 1.0));
      if (!hit) {
        img(y, x) = 0.5f;
        continue;
      }
      const Eigen::Vector2d ref_px = normalized_to_pixel<double>(dehomogenize(*hit), cam.k);
      img(y, x) = tex(ref_px.x(), ref_px.y());
    }
  }
  return img;
}

}  // namespace

CameraModel SceneConfig::camera() const {
  CameraModel cam;
  cam.k = Intrinsicsd::from_image_size(width, height);
  cam.k.focal = focal_true;
  cam.d = {k1_true, k2_true};
  return cam;
}

void SceneConfig::validate() const {
  if (n_frames < 1 || m_points < kMinTracks) {
    throw Error(ErrorKind::InvalidArgument, "scene needs >= 1 frame and >= 16 points");
  }
  if (width < 16 || height < 16 || !(focal_true > 0)) {
    throw Error(ErrorKind::InvalidArgument, "invalid image size or focal length");
  }
  if (!(depth_min > 0 && depth_max > depth_min)) {
    throw Error(ErrorKind::BadRange, "depth range must satisfy 0 < min < max");
  }
  if (!(baseline_frac >= 0 && baseline_frac <= 0.02)) {
    throw Error(ErrorKind::InvalidArgument, "baseline_frac must lie in [0, 0.02]");
  }
  if (!(rot_max_deg >= 0 && rot_max_deg <= 0.5)) {
    throw Error(ErrorKind::InvalidArgument, "rot_max must lie in [0, 0.5] degrees");
  }
  if (!(noise_px >= 0)) throw Error(ErrorKind::InvalidArgument, "noise must be non-negative");
}

double TwoPlaneScene::inverse_depth(const Eigen::Vector2d& x) const {
  if (x.x() < split_x) return 1.0 / front_depth;
  return slant_normal.dot(Eigen::Vector3d(x.x(), x.y(), 1.0));
}

std::optional<Eigen::Vector3d> TwoPlaneScene::intersect(const Eigen::Vector3d& origin,
                                                        const Eigen::Vector3d& dir) const {
  double best = std::numeric_limits<double>::infinity();
  std::optional<Eigen::Vector3d> hit;
  if (std::abs(dir.z()) > 1e-12) {
    const double s = (front_depth - origin.z()) / dir.z();
    const Eigen::Vector3d x = origin + s * dir;
    if (s > 0 && x.x() / x.z() < split_x) {
      best = s;
      hit = x;
    }
  }
  const double denom = slant_normal.dot(dir);
  if (std::abs(denom) > 1e-12) {
    const double s = (1.0 - slant_normal.dot(origin)) / denom;
    const Eigen::Vector3d x = origin + s * dir;
    if (s > 0 && s < best && x.z() > 0 && x.x() / x.z() >= split_x) hit = x;
  }
  return hit;
}

BAState GroundTruth::state() const {
  BAState s;
  s.focal = s.focal_init = camera.k.focal;
  s.k1 = camera.d.k1;
  s.k2 = camera.d.k2;
  s.principal_point = camera.k.principal_point;
  s.width = camera.k.width;
  s.height = camera.k.height;
  s.poses = poses;
  s.omegas = omegas;
  s.gauge_point = median_point(omegas);
  return s;
}

SynthScene generate(const SceneConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  const CameraModel cam = cfg.camera();
  const double rot_max = cfg.rot_max_deg * std::numbers::pi / 180.0;
  const double t_max = cfg.baseline_frac * cfg.mean_depth();

  SynthScene scene;
  GroundTruth& truth = scene.truth;
  truth.camera = cam;
  for (int i = 0; i < cfg.n_frames; ++i) {
    Posed pose;
    pose.rotation = Rotationd(sample_ball(rng, rot_max));
    pose.translation = sample_ball(rng, t_max);
    truth.poses.push_back(pose);
  }
  if (cfg.render_images) truth.surface = make_surface(cfg);

  std::uniform_real_distribution<double> px(0.0, cfg.width - 1.0), py(0.0, cfg.height - 1.0);
  std::uniform_real_distribution<double> depth(cfg.depth_min, cfg.depth_max);
  std::vector<Eigen::Vector2d> ref_pts;
  std::vector<std::vector<Eigen::Vector2d>> frame_pts(cfg.n_frames);
  std::vector<double> omegas;
  for (int j = 0; j < cfg.m_points; ++j) {
    const Eigen::Vector2d p(px(rng), py(rng));
    const double z = depth(rng);
    const Eigen::Vector2d xu = undistort(pixel_to_normalized<double>(p, cam.k), cam.d, kTight);
    const double omega = truth.surface ? truth.surface->inverse_depth(xu) : 1.0 / z;
    if (!(omega > 0)) continue;
    const Eigen::Vector3d point = backproject(InverseDepthPointd{xu, omega});
    try {
      const Eigen::Vector2d ref = project(point, Posed::identity(), cam.k, cam.d);
      std::vector<Eigen::Vector2d> obs;
      for (const Posed& pose : truth.poses) obs.push_back(project(point, pose, cam.k, cam.d));
      if (!in_image(ref, cfg.width, cfg.height)) continue;
      bool keep = true;
      for (const auto& o : obs) keep = keep && in_image(o, cfg.width, cfg.height);
      if (!keep) continue;
      ref_pts.push_back(ref);
      for (int i = 0; i < cfg.n_frames; ++i) frame_pts[i].push_back(obs[i]);
      omegas.push_back(omega);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::BehindCamera) throw;
    }
  }
  // Noise is drawn for every surviving point, then points whose noisy
  // observations leave a frame are dropped as well.
  std::vector<std::vector<Eigen::Vector2d>> noisy = frame_pts;
  if (cfg.noise_px > 0) {
    std::normal_distribution<double> noise(0.0, cfg.noise_px);
    for (auto& frame : noisy) {
      for (auto& p : frame) {
        p.x() += noise(rng);
        p.y() += noise(rng);
      }
    }
  }
  std::vector<int> keep;
  for (std::size_t j = 0; j < ref_pts.size(); ++j) {
    bool ok = true;
    for (const auto& frame : noisy) ok = ok && in_image(frame[j], cfg.width, cfg.height);
    if (ok) keep.push_back(static_cast<int>(j));
  }
  const int m = static_cast<int>(keep.size());
  if (m < kMinTracks) throw Error(ErrorKind::TooFewTracks, "frustum culling left fewer than 16 points");

  TrackTable& clean = truth.clean_tracks;
  clean.image_width = cfg.width;
  clean.image_height = cfg.height;
  clean.ref.resize(2, m);
  clean.obs.assign(cfg.n_frames, Eigen::Matrix2Xd(2, m));
  scene.tracks = clean;
  truth.omegas.resize(m);
  for (int c = 0; c < m; ++c) {
    const int j = keep[c];
    clean.ref.col(c) = ref_pts[j];
    scene.tracks.ref.col(c) = ref_pts[j];
    for (int i = 0; i < cfg.n_frames; ++i) {
      clean.obs[i].col(c) = frame_pts[i][j];
      scene.tracks.obs[i].col(c) = noisy[i][j];
    }
    truth.omegas[c] = omegas[j];
  }

  if (cfg.render_images) {
    const Texture tex(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    truth.images.push_back(render_view(tex, *truth.surface, cam, Posed::identity()));
    for (const Posed& pose : truth.poses) truth.images.push_back(render_view(tex, *truth.surface, cam, pose));
    truth.inverse_depth.resize(cfg.height, cfg.width);
    for (int y = 0; y < cfg.height; ++y) {
      for (int x = 0; x < cfg.width; ++x) {
        const Eigen::Vector2d xu =
            undistort(pixel_to_normalized<double>(Eigen::Vector2d(x, y), cam.k), cam.d, kTight);
        truth.inverse_depth(y, x) = truth.surface->inverse_depth(xu);
      }
    }
  }
  return scene;
}

Texture::Texture(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> unit(0.0f, 1.0f);
  const double periods[] = {40.0, 20.0, 10.0, 5.0};
  const double weights[] = {1.0, 0.8, 0.6, 0.4};
  for (int o = 0; o < 4; ++o) {
    Octave oct{periods[o], weights[o], std::vector<float>(kLattice * kLattice)};
    for (float& v : oct.lattice) v = unit(rng);
    octaves_.push_back(std::move(oct));
    total_weight_ += weights[o];
  }
}

float Texture::operator()(double x, double y) const {
  auto smooth = [](double t) { return t * t * (3.0 - 2.0 * t); };
  double acc = 0.0;
  for (const Octave& o : octaves_) {
    const double u = x / o.period + 1000.0, v = y / o.period + 1000.0;
    const double fu = std::floor(u), fv = std::floor(v);
    const int iu = static_cast<int>(fu) & (kLattice - 1), iv = static_cast<int>(fv) & (kLattice - 1);
    const int iu1 = (iu + 1) & (kLattice - 1), iv1 = (iv + 1) & (kLattice - 1);
    const double su = smooth(u - fu), sv = smooth(v - fv);
    const auto at = [&](int a, int b) { return static_cast<double>(o.lattice[b * kLattice + a]); };
    const double top = at(iu, iv) + su * (at(iu1, iv) - at(iu, iv));
    const double bottom = at(iu, iv1) + su * (at(iu1, iv1) - at(iu, iv1));
    acc += o.weight * (top + sv * (bottom - top));
  }
  // Stretch the contrast of the averaged octaves back towards [0, 1].
  const double value = 0.5 + 2.0 * (acc / total_weight_ - 0.5);
  return static_cast<float>(std::clamp(value, 0.0, 1.0));
}

GrayImage texture_image(int width, int height, std::uint64_t seed) {
  if (width < 1 || height < 1) throw Error(ErrorKind::InvalidArgument, "empty texture size");
  const Texture tex(seed);
  GrayImage img(height, width);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) img(y, x) = tex(x, y);
  }
  return img;
}

double grid_distortion_error(const CameraModel& est, const CameraModel& truth, double grid_step) {
  if (est.k.width != truth.k.width || est.k.height != truth.k.height) {
    throw Error(ErrorKind::SizeMismatch, "camera models have different image sizes");
  }
  if (!(grid_step > 0)) throw Error(ErrorKind::InvalidArgument, "grid step must be positive");
  double sum = 0.0;
  long count = 0;
  for (double y = 0; y <= truth.k.height - 1; y += grid_step) {
    for (double x = 0; x <= truth.k.width - 1; x += grid_step) {
      const Eigen::Vector2d p(x, y);
      const Eigen::Vector2d u = undistort(pixel_to_normalized(p, truth.k), est.d, kTight);
      const Eigen::Vector2d q = normalized_to_pixel(distort(u, truth.d), truth.k);
      sum += (p - q).norm();
      ++count;
    }
  }
  return sum / count;
}

double eval_focal(double focal_est, double focal_true) {
  return std::abs(focal_est - focal_true) / focal_true * 100.0;
}

double eval_focal(const BAState& est, const GroundTruth& truth) {
  return eval_focal(est.focal, truth.camera.k.focal);
}

std::string to_json_line(const BenchRecord& r) {
  nlohmann::ordered_json j;
  j["seed"] = r.seed;
  j["init_mode"] = r.init_mode;
  j["iterations"] = r.iterations;
  j["converged"] = r.converged;
  j["initial_cost"] = r.initial_cost;
  j["final_cost"] = r.final_cost;
  j["focal_error_pct"] = r.focal_error_pct;
  j["grid_error_px"] = r.grid_error_px;
  j["iterations_to_rank1_cost"] = r.iterations_to_rank1_cost;
  if (!r.error.empty()) j["error"] = r.error;
  return j.dump();
}

int iterations_to_reach(const BAReport& report, double target) {
  for (std::size_t k = 0; k < report.cost_trace.size(); ++k) {
    if (report.cost_trace[k] <= target) return report.trace_iterations[k];
  }
  return -1;
}

std::vector<BenchRecord> bench_convergence(const SceneConfig& cfg, int trials, const BAOptions& opts,
                                           double grid_step) {
  if (trials < 1) throw Error(ErrorKind::InvalidArgument, "bench needs at least one trial");
  std::vector<BenchRecord> out;
  for (int t = 0; t < trials; ++t) {
    SceneConfig c = cfg;
    c.seed = cfg.seed + static_cast<std::uint64_t>(t);
    c.render_images = false;
    BenchRecord rec[2];
    rec[0].init_mode = "rank1";
    rec[1].init_mode = "flat";
    BAReport reports[2];
    bool ok[2] = {false, false};
    try {
      const SynthScene scene = generate(c);
      const Intrinsicsd k = Intrinsicsd::from_image_size(c.width, c.height);
      for (int mode = 0; mode < 2; ++mode) {
        try {
          const Initialization init =
              mode == 0 ? initialize(scene.tracks, k) : flat_initialize(scene.tracks, k);
          const BAResult res = solve(make_state(init, k), scene.tracks, opts);
          reports[mode] = res.report;
          rec[mode].iterations = res.report.iterations;
          rec[mode].converged = res.report.converged;
          rec[mode].initial_cost = res.report.initial_cost;
          rec[mode].final_cost = res.report.final_cost;
          rec[mode].focal_error_pct = eval_focal(res.state, scene.truth);
          rec[mode].grid_error_px = grid_distortion_error(
              {res.state.intrinsics(), res.state.distortion()}, scene.truth.camera, grid_step);
          ok[mode] = true;
        } catch (const Error& e) {
          rec[mode].error = e.what();
        }
      }
    } catch (const Error& e) {
      rec[0].error = rec[1].error = e.what();
    }
    if (ok[0]) {
      const double target = 1.01 * rec[0].final_cost;
      for (int mode = 0; mode < 2; ++mode) {
        if (ok[mode]) rec[mode].iterations_to_rank1_cost = iterations_to_reach(reports[mode], target);
      }
    }
    for (auto& r : rec) {
      r.seed = c.seed;
      out.push_back(r);
    }
  }
  return out;
}

}  // namespace smd
