#pragma once

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include <string>
#include <vector>

#include "smd/geometry.hpp"
#include "smd/rank1.hpp"
#include "smd/tracks.hpp"

namespace smd {

// Parameter vector layout:
//   [focal, k1, k2, theta_1, t_1, ..., theta_n, t_n, omega_j for j != gauge_point]
struct BAState {
  double focal = 1;
  double k1 = 0;
  double k2 = 0;
  double focal_init = 1;  // f0 of the focal bound [0.25 f0, 4 f0]
  Eigen::Vector2d principal_point = Eigen::Vector2d::Zero();
  int width = 0;
  int height = 0;
  std::vector<Posed> poses;  // frames 1..n
  Eigen::VectorXd omegas;    // m
  int gauge_point = 0;

  int n_frames() const { return static_cast<int>(poses.size()); }
  int m_points() const { return static_cast<int>(omegas.size()); }
  int num_parameters() const { return 3 + 6 * n_frames() + (m_points() - 1); }

  Intrinsicsd intrinsics() const;
  Distortiond distortion() const { return {k1, k2}; }
  bool valid() const;

  Eigen::VectorXd parameters() const;
  void set_parameters(const Eigen::VectorXd& x);
  void clamp_to_bounds();
};

inline constexpr double kMinOmega = 1e-4;
inline constexpr double kDistortionBound = 2.0;

// Index of the median omega; ties go to the lower index.
int median_point(const Eigen::VectorXd& omegas);

// Zero distortion, focal and principal point from `k`, gauge at the median
// initial omega.
BAState make_state(const Initialization& init, const Intrinsicsd& k);

// W * f * (undistort(normalize(observed)) - pi(R_i P_j + t_i)) for frame i
// (0 = reference, identity pose) and point j, with P_j built from the
// reference track under the current focal and distortion. W is
// distort_jacobian at the undistorted observation, which maps the error back
// to the distorted image where the tracking noise lives; W = I without
// distortion.
Eigen::Vector2d reproj_residual(const BAState& state, const TrackTable& tracks, int frame, int point);

// Huber: |r|^2 inside delta, 2 delta |r| - delta^2 outside.
double robust_cost(const Eigen::Vector2d& residual, double delta);

struct BAOptions {
  int max_iter = 100;
  double ftol = 1e-6;
  double xtol = 1e-10;
  double delta = 1.0;
  double lambda0 = 1e-4;
  int threads = 1;
};

struct BAReport {
  int iterations = 0;  // step attempts, accepted or not
  bool converged = false;
  double initial_cost = 0;
  double final_cost = 0;
  std::vector<double> cost_trace;  // initial cost, then every accepted cost
  std::vector<int> trace_iterations;  // iteration count at each cost_trace entry
  double wall_time_s = 0;
  std::string termination;
};

struct BAResult {
  BAState state;
  BAReport report;
};

BAResult solve(const BAState& init, const TrackTable& tracks, const BAOptions& opts = {});

// Robust cost summed over frames 1..n; the reference residual is zero by
// construction.
double total_cost(const BAState& state, const TrackTable& tracks, double delta, int threads = 1);

// Stacked residuals of frames 1..n, row 2 * ((i - 1) * m + j) + c.
Eigen::VectorXd residuals(const BAState& state, const TrackTable& tracks);

// Analytic Jacobian of residuals() with respect to parameters().
Eigen::SparseMatrix<double, Eigen::RowMajor> jacobian(const BAState& state, const TrackTable& tracks);

}  // namespace smd
