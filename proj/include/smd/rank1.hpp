#pragma once

#include <Eigen/Core>

#include <vector>

#include "smd/geometry.hpp"
#include "smd/tracks.hpp"

namespace smd {

// Track coordinates mapped through K^-1 (and optionally undistorted).
struct NormalizedTracks {
  Eigen::Matrix2Xd ref;
  std::vector<Eigen::Matrix2Xd> obs;

  int n_frames() const { return static_cast<int>(obs.size()); }
  int m_points() const { return static_cast<int>(ref.cols()); }
};

NormalizedTracks normalize_tracks(const TrackTable& table, const Intrinsicsd& k,
                                  const Distortiond& d = {});

// Stacked rotation-compensated flow: rows 3i..3i+2 hold frame i, column j
// holds point j. Rows 3i+2 are identically zero.
struct Rank1Problem {
  Eigen::MatrixXd M;

  int n_frames() const { return static_cast<int>(M.rows() / 3); }
  int m_points() const { return static_cast<int>(M.cols()); }
};

// Best rank-1 factors, gauged so that mean(D) = 1 and median(D) > 0.
struct Rank1Solution {
  Eigen::VectorXd C;  // 3n
  Eigen::VectorXd D;  // m
  double sigma1 = 0;
  double sigma2 = 0;
  double residual = 0;  // ||M - C D^T||_F / ||M||_F

  double sigma_ratio() const { return sigma1 > 0 ? sigma2 / sigma1 : 0.0; }
};

// Small-angle Gauss-Newton on the rotation-only reprojection error
// sum_j || pi(R^T [x_ij, 1]) - x_0j ||^2, starting from identity.
Rotationd estimate_rotation(const Eigen::Matrix2Xd& ref_pts, const Eigen::Matrix2Xd& frame_pts);

// h(R^T [x_ij, 1]) - [x_0j, 1]; the third component is zero.
Eigen::Vector3d flow_residual(const Rotationd& rotation, const Eigen::Vector2d& ref_pt,
                              const Eigen::Vector2d& frame_pt);

Rank1Problem build_constraint_matrix(const NormalizedTracks& tracks,
                                     const std::vector<Rotationd>& rotations);

Rank1Solution rank1_factorize(const Rank1Problem& problem);

struct Initialization {
  std::vector<Posed> poses;                 // n non-reference frames
  std::vector<InverseDepthPointd> points;   // m points
  Rank1Solution solution;                   // empty for flat initialization
};

// Below this rms flow left after rotation compensation, the baseline cannot
// be told apart from tracking error and lens distortion left unmodelled at
// this stage.
inline constexpr double kMinTranslationFlowPx = 0.1;

// Rotations, flow matrix, factorization and a joint refinement of the
// rotations against the first-order flow model; see rank1.cpp. Throws
// DegenerateMotion when the rotation-compensated flow is below
// kMinTranslationFlowPx.
Initialization initialize(const TrackTable& table, const Intrinsicsd& k);

// Baseline: rotations from estimate_rotation, zero translations, omega = 1.
Initialization flat_initialize(const TrackTable& table, const Intrinsicsd& k);

}  // namespace smd
