#include "smd/plane_sweep.hpp"

#include <algorithm>
#include <cmath>

#include "smd/error.hpp"
#include "smd/parallel.hpp"

namespace smd {

std::vector<double> sample_planes(double omega_min, double omega_max, int n) {
  if (!(omega_min > 0) || !(omega_max > omega_min) || !std::isfinite(omega_max)) {
    throw Error(ErrorKind::BadRange, "plane range must satisfy 0 < min < max");
  }
  if (n < 1) throw Error(ErrorKind::BadRange, "need at least one plane");
  if (n == 1) return {0.5 * (omega_min + omega_max)};
  std::vector<double> planes(n);
  const double step = (omega_max - omega_min) / (n - 1);
  for (int k = 0; k < n; ++k) planes[k] = omega_min + step * k;
  planes.back() = omega_max;
  return planes;
}

std::pair<double, double> plane_range(const Eigen::VectorXd& omegas) {
  if (omegas.size() == 0) throw Error(ErrorKind::BadRange, "no inverse depths to bound");
  return {0.9 * omegas.minCoeff(), 1.1 * omegas.maxCoeff()};
}

CostVolume sweep(const GrayImage& ref, const std::vector<GrayImage>& frames, const BAState& state,
                 const std::vector<double>& planes, int threads) {
  if (static_cast<int>(frames.size()) != state.n_frames()) {
    throw Error(ErrorKind::SizeMismatch, "one image per non-reference pose expected");
  }
  if (planes.empty()) throw Error(ErrorKind::BadRange, "no planes to sweep");
  const int w = width(ref), h = height(ref);
  for (const auto& f : frames) {
    if (width(f) != w || height(f) != h) throw Error(ErrorKind::SizeMismatch, "frame size differs from reference");
  }
  if (w < 2 || h < 2) throw Error(ErrorKind::ImageTooSmall, "image too small to sweep");
  Intrinsicsd k = state.intrinsics();
  if (w != state.width || h != state.height) {
    const int factor = state.width / w;
    if (factor < 1 || state.width / factor != w || state.height / factor != h) {
      throw Error(ErrorKind::SizeMismatch, "sweep images are not an integer reduction of the state resolution");
    }
    k = k.downscaled(factor);
  }
  const Distortiond d = state.distortion();
  const int n_planes = static_cast<int>(planes.size());

  CostVolume vol;
  vol.width = w;
  vol.height = h;
  vol.n_planes = n_planes;
  vol.cost.assign(static_cast<std::size_t>(n_planes) * w * h, CostVolume::kInvalid);
  vol.valid.assign(vol.cost.size(), 0);

  parallel_for(h, threads, [&](std::size_t row) {
    const int y = static_cast<int>(row);
    std::vector<Eigen::Vector3d> rb(frames.size());
    for (int x = 0; x < w; ++x) {
      Eigen::Vector2d xu;
      try {
        xu = undistort(pixel_to_normalized<double>(Eigen::Vector2d(x, y), k), d);
      } catch (const Error&) {
        continue;  // outside the invertible radius: every plane stays invalid
      }
      const Eigen::Vector3d b(xu.x(), xu.y(), 1.0);
      for (std::size_t i = 0; i < frames.size(); ++i) rb[i] = state.poses[i].rotation.matrix() * b;
      const double ref_val = ref(y, x);
      for (int p = 0; p < n_planes; ++p) {
        // Sample set statistics relative to the reference value.
        double sum = 0.0, sum2 = 0.0;
        int count = 1;
        for (std::size_t i = 0; i < frames.size(); ++i) {
          const Eigen::Vector3d xc = rb[i] + planes[p] * state.poses[i].translation;
          if (xc.z() <= 1e-9) continue;
          const Eigen::Vector2d px = normalized_to_pixel(distort(dehomogenize(xc), d), k);
          if (!inside(frames[i], px.x(), px.y())) continue;
          const double v = sample_bilinear(frames[i], px.x(), px.y()) - ref_val;
          sum += v;
          sum2 += v * v;
          ++count;
        }
        if (count < 3) continue;
        const double mean = sum / count;
        const double var = std::max(0.0, sum2 / count - mean * mean);
        const std::size_t idx = vol.index(p, x, y);
        vol.cost[idx] = static_cast<float>(var);
        vol.valid[idx] = 1;
      }
    }
  });
  return vol;
}

DepthMap winner_take_all(const CostVolume& vol, const std::vector<double>& planes) {
  if (static_cast<int>(planes.size()) != vol.n_planes) {
    throw Error(ErrorKind::SizeMismatch, "plane list does not match the cost volume");
  }
  DepthMap map;
  map.width = vol.width;
  map.height = vol.height;
  map.inverse_depth = FloatMap::Zero(vol.height, vol.width);
  map.confidence = FloatMap::Zero(vol.height, vol.width);
  map.valid = MaskMap::Zero(vol.height, vol.width);
  for (int y = 0; y < vol.height; ++y) {
    for (int x = 0; x < vol.width; ++x) {
      int best = -1, n_valid = 0;
      float c_min = CostVolume::kInvalid, c_second = CostVolume::kInvalid;
      for (int p = 0; p < vol.n_planes; ++p) {
        if (!vol.is_valid(p, x, y)) continue;
        const float c = vol.at(p, x, y);
        ++n_valid;
        if (c < c_min) {
          c_second = c_min;
          c_min = c;
          best = p;
        } else if (c < c_second) {
          c_second = c;
        }
      }
      if (best < 0) continue;
      map.valid(y, x) = 1;
      map.inverse_depth(y, x) = static_cast<float>(planes[best]);
      if (n_valid >= 2 && c_second > 0 && c_second < CostVolume::kInvalid) map.confidence(y, x) = 1.0f - c_min / c_second;
    }
  }
  return map;
}

DepthMap median_refine(const DepthMap& map, int radius) {
  if (radius < 1) throw Error(ErrorKind::InvalidArgument, "median radius must be >= 1");
  DepthMap out = map;
  std::vector<float> window;
  for (int y = 0; y < map.height; ++y) {
    for (int x = 0; x < map.width; ++x) {
      window.clear();
      const int y0 = std::max(0, y - radius), y1 = std::min(map.height - 1, y + radius);
      const int x0 = std::max(0, x - radius), x1 = std::min(map.width - 1, x + radius);
      for (int v = y0; v <= y1; ++v) {
        for (int u = x0; u <= x1; ++u) {
          if (map.valid(v, u)) window.push_back(map.inverse_depth(v, u));
        }
      }
      const int area = (y1 - y0 + 1) * (x1 - x0 + 1);
      const bool keep = map.valid(y, x) ? !window.empty() : 2 * static_cast<int>(window.size()) >= area;
      if (!keep) continue;
      auto mid = window.begin() + (window.size() - 1) / 2;
      std::nth_element(window.begin(), mid, window.end());
      out.inverse_depth(y, x) = *mid;
      out.valid(y, x) = 1;
    }
  }
  return out;
}

}  // namespace smd
