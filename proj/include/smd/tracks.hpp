#pragma once

#include <Eigen/Core>

#include <vector>

namespace smd {

// Dense feature trajectories: every point is observed in the reference frame
// and in each of the n non-reference frames. Coordinates are distorted
// pixels unless stated otherwise.
struct TrackTable {
  int image_width = 0;
  int image_height = 0;
  Eigen::Matrix2Xd ref;               // 2 x m, reference observations
  std::vector<Eigen::Matrix2Xd> obs;  // n entries of 2 x m

  int n_frames() const { return static_cast<int>(obs.size()); }
  int m_points() const { return static_cast<int>(ref.cols()); }

  // Keeps only the listed columns, in order.
  TrackTable select_points(const std::vector<int>& columns) const;
};

inline constexpr int kMinTracks = 16;

// Throws if the table is ragged, has out-of-image coordinates or fewer than
// kMinTracks points.
void validate_tracks(const TrackTable& table);

}  // namespace smd
