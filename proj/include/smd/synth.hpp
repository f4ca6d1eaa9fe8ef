#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "smd/bundle_adjustment.hpp"
#include "smd/geometry.hpp"
#include "smd/image.hpp"
#include "smd/tracks.hpp"

namespace smd {

struct CameraModel {
  Intrinsicsd k;
  Distortiond d;
};

struct SceneConfig {
  int n_frames = 10;  // non-reference frames
  int m_points = 300;  // before culling
  int width = 1280;
  int height = 720;
  double focal_true = 1280;
  double k1_true = -0.12;
  double k2_true = 0.03;
  double depth_min = 2.0;
  double depth_max = 6.0;
  double baseline_frac = 0.005;  // max |t| / mean depth
  double rot_max_deg = 0.2;
  double noise_px = 0.3;
  std::uint64_t seed = 1;
  bool render_images = false;

  double mean_depth() const { return 0.5 * (depth_min + depth_max); }
  CameraModel camera() const;
  void validate() const;
};

// Rendered scenes: a fronto-parallel plane on the left of the reference view
// and a slanted plane on the right, both textured in reference coordinates.
struct TwoPlaneScene {
  double front_depth = 0;       // z of the fronto-parallel plane
  double split_x = 0;           // normalized x in the reference view
  Eigen::Vector3d slant_normal;  // n . X = 1 on the slanted plane

  // Inverse depth of the surface seen along the reference ray [x, y, 1].
  double inverse_depth(const Eigen::Vector2d& ref_normalized) const;
  // Closest surface hit of the ray through `origin` along `dir` (reference
  // coordinates); nullopt when nothing is hit in front of the camera.
  std::optional<Eigen::Vector3d> intersect(const Eigen::Vector3d& origin,
                                           const Eigen::Vector3d& dir) const;
};

struct GroundTruth {
  CameraModel camera;
  std::vector<Posed> poses;  // n
  Eigen::VectorXd omegas;    // m
  TrackTable clean_tracks;   // noiseless observations
  // Rendered scenes only.
  std::vector<GrayImage> images;  // reference first
  Eigen::ArrayXXd inverse_depth;  // reference pixels, rows = height
  std::optional<TwoPlaneScene> surface;

  BAState state() const;  // ground truth as a solver state
};

struct SynthScene {
  TrackTable tracks;  // noisy
  GroundTruth truth;
};

SynthScene generate(const SceneConfig& cfg);

// Smooth band-limited value noise in [0, 1] evaluated at continuous pixel
// coordinates, deterministic in seed.
class Texture {
 public:
  explicit Texture(std::uint64_t seed);
  float operator()(double x, double y) const;

 private:
  struct Octave {
    double period;
    double weight;
    std::vector<float> lattice;
  };
  static constexpr int kLattice = 256;
  std::vector<Octave> octaves_;
  double total_weight_ = 0;
};

GrayImage texture_image(int width, int height, std::uint64_t seed);

// Mean |p - q| over a grid of step `grid_step`, where q maps p through est's
// undistortion and truth's distortion, both in truth's normalized frame.
double grid_distortion_error(const CameraModel& est, const CameraModel& truth, double grid_step);

double eval_focal(double focal_est, double focal_true);
double eval_focal(const BAState& est, const GroundTruth& truth);

struct BenchRecord {
  std::uint64_t seed = 0;
  std::string init_mode;
  int iterations = 0;
  bool converged = false;
  double initial_cost = 0;
  double final_cost = 0;
  double focal_error_pct = 0;
  double grid_error_px = 0;
  // Iterations this run needed to get within 1% of the rank-1 final cost of
  // the same trial; -1 if never.
  int iterations_to_rank1_cost = -1;
  std::string error;  // empty on success
};

std::string to_json_line(const BenchRecord& r);

// For each trial t the scene uses seed cfg.seed + t; rank-1 and flat
// initialization are solved from the same tracks. Records come in trial
// order, rank1 before flat.
std::vector<BenchRecord> bench_convergence(const SceneConfig& cfg, int trials,
                                           const BAOptions& opts = {}, double grid_step = 20.0);

// Iteration at which the report's cost trace first reaches `target`; -1 if never.
int iterations_to_reach(const BAReport& report, double target);

}  // namespace smd
