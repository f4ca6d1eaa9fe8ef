#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <vector>

#include "smd/bundle_adjustment.hpp"
#include "smd/image.hpp"

namespace smd {

// n inverse depths uniform in [omega_min, omega_max], endpoints included;
// n = 1 gives the midpoint.
std::vector<double> sample_planes(double omega_min, double omega_max, int n);

// [0.9 min, 1.1 max] of the given inverse depths.
std::pair<double, double> plane_range(const Eigen::VectorXd& omegas);

struct CostVolume {
  int width = 0;
  int height = 0;
  int n_planes = 0;
  std::vector<float> cost;      // index (plane * height + y) * width + x
  std::vector<std::uint8_t> valid;

  static constexpr float kInvalid = 3.0e38f;

  std::size_t index(int plane, int x, int y) const {
    return (static_cast<std::size_t>(plane) * height + y) * width + x;
  }
  float at(int plane, int x, int y) const { return cost[index(plane, x, y)]; }
  bool is_valid(int plane, int x, int y) const { return valid[index(plane, x, y)] != 0; }
};

using FloatMap = Eigen::Array<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MaskMap = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Invalid pixels hold inverse_depth 0 and confidence 0.
struct DepthMap {
  int width = 0;
  int height = 0;
  FloatMap inverse_depth;
  FloatMap confidence;
  MaskMap valid;

  int valid_count() const { return static_cast<int>((valid != 0).count()); }
};

// Photoconsistency volume for the reference view. The images may be a
// integer-factor reduction of the resolution the state was estimated at; the
// intrinsics are scaled to match. Cost is the variance of the reference
// intensity and every in-bounds frame sample; at least 3 samples are needed.
CostVolume sweep(const GrayImage& ref, const std::vector<GrayImage>& frames, const BAState& state,
                 const std::vector<double>& planes, int threads = 1);

DepthMap winner_take_all(const CostVolume& vol, const std::vector<double>& planes);

// Median of valid values in the (2r+1)^2 window, truncated at the border.
// Invalid pixels are filled when at least half of the window is valid. Even
// counts use the lower median so outputs stay on input values.
DepthMap median_refine(const DepthMap& map, int radius = 2);

}  // namespace smd
