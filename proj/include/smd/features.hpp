#pragma once

#include <Eigen/Core>

#include <vector>

#include "smd/image.hpp"
#include "smd/tracks.hpp"

namespace smd {

using ResponseMap = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct FeatureParams {
  int window_radius = 10;
  int grid_size = 80;
  double min_response = 1e-4;
  int levels = 3;
  int max_iter = 30;
  double eps = 0.01;  // px
  double max_fb_error = 0.5;  // px, forward-backward tracking check; <= 0 disables
  int threads = 1;
};

// Minimum eigenvalue of the gradient structure tensor of the binomially
// smoothed image, accumulated with Gaussian weights (sigma = window_radius / 3)
// truncated at window_radius. A band of window_radius + 1 pixels is zero.
ResponseMap shi_tomasi_response(const GrayImage& img, int window_radius);

// Strongest response per grid cell (ties: smallest row-major index), kept
// when >= min_response. Points are (x, y) pixel coordinates in cell order.
std::vector<Eigen::Vector2d> grid_extract(const ResponseMap& response, int grid_size,
                                          double min_response);

// Baseline without the grid: every 3x3 local maximum >= min_response.
std::vector<Eigen::Vector2d> threshold_extract(const ResponseMap& response, double min_response);

enum class TrackStatus { Ok, Failed };

struct KltParams {
  int levels = 3;
  int window_radius = 10;
  int max_iter = 30;
  double eps = 0.01;
};

struct KltResult {
  std::vector<Eigen::Vector2d> points;
  std::vector<TrackStatus> status;
};

// Pyramidal translational Lucas-Kanade from ref to tgt.
KltResult klt_track_pair(const GrayImage& ref, const GrayImage& tgt,
                         const std::vector<Eigen::Vector2d>& pts, const KltParams& params);

// Grid features on frames[0] tracked independently into every other frame;
// columns that fail anywhere, or do not track back to within max_fb_error of
// their seed, are dropped.
TrackTable build_tracks(const std::vector<GrayImage>& frames, const FeatureParams& params);

}  // namespace smd
