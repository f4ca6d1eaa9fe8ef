#include "smd/features.hpp"

#include <Eigen/LU>

#include <cmath>
#include <string>

#include "smd/error.hpp"
#include "smd/parallel.hpp"

namespace smd {

TrackTable TrackTable::select_points(const std::vector<int>& columns) const {
  TrackTable out;
  out.image_width = image_width;
  out.image_height = image_height;
  out.ref.resize(2, static_cast<Eigen::Index>(columns.size()));
  out.obs.assign(obs.size(), Eigen::Matrix2Xd(2, static_cast<Eigen::Index>(columns.size())));
  for (std::size_t c = 0; c < columns.size(); ++c) {
    out.ref.col(c) = ref.col(columns[c]);
    for (std::size_t i = 0; i < obs.size(); ++i) out.obs[i].col(c) = obs[i].col(columns[c]);
  }
  return out;
}

void validate_tracks(const TrackTable& table) {
  if (table.n_frames() < 1) throw Error(ErrorKind::TooFewFrames, "track table has no frames");
  if (table.m_points() < kMinTracks) {
    throw Error(ErrorKind::TooFewTracks, std::to_string(table.m_points()) + " tracks, need " +
                                             std::to_string(kMinTracks));
  }
  auto in_image = [&](const Eigen::Matrix2Xd& pts) {
    return pts.allFinite() && (pts.row(0).array() >= 0).all() &&
           (pts.row(1).array() >= 0).all() &&
           (pts.row(0).array() <= table.image_width - 1).all() &&
           (pts.row(1).array() <= table.image_height - 1).all();
  };
  if (!in_image(table.ref)) throw Error(ErrorKind::InvalidArgument, "reference track out of image");
  for (const auto& o : table.obs) {
    if (o.cols() != table.ref.cols()) throw Error(ErrorKind::SizeMismatch, "ragged track table");
    if (!in_image(o)) throw Error(ErrorKind::InvalidArgument, "track out of image");
  }
}

namespace {

std::vector<double> window_weights(int radius) {
  const double sigma = radius / 3.0;
  std::vector<double> wts(2 * radius + 1);
  double sum = 0.0;
  for (int k = -radius; k <= radius; ++k) sum += wts[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma));
  for (auto& v : wts) v /= sum;
  return wts;
}

}  // namespace

ResponseMap shi_tomasi_response(const GrayImage& img, int window_radius) {
  const int h = height(img), w = width(img);
  const int side = 2 * window_radius + 1;
  if (window_radius < 1) throw Error(ErrorKind::InvalidArgument, "window_radius must be >= 1");
  if (w < side || h < side) {
    throw Error(ErrorKind::ImageTooSmall, "image smaller than the response window");
  }
  const GrayImage smooth = binomial_blur(img);
  const GrayImage gx = gradient_x(smooth);
  const GrayImage gy = gradient_y(smooth);

  // Tensor entries smoothed with a separable Gaussian truncated at the
  // window radius. A flat box window leaves plateaus around corners.
  using Plane = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const std::vector<double> weights = window_weights(window_radius);
  auto smooth_product = [&](const GrayImage& a, const GrayImage& b) {
    Plane prod = a.cast<double>() * b.cast<double>();
    Plane tmp = Plane::Zero(h, w), out = Plane::Zero(h, w);
    for (int y = 0; y < h; ++y)
      for (int x = window_radius; x < w - window_radius; ++x) {
        double acc = 0.0;
        for (int k = -window_radius; k <= window_radius; ++k) acc += weights[k + window_radius] * prod(y, x + k);
        tmp(y, x) = acc;
      }
    for (int y = window_radius; y < h - window_radius; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int k = -window_radius; k <= window_radius; ++k) acc += weights[k + window_radius] * tmp(y + k, x);
        out(y, x) = acc;
      }
    return out;
  };
  const Plane sxx = smooth_product(gx, gx);
  const Plane sxy = smooth_product(gx, gy);
  const Plane syy = smooth_product(gy, gy);

  ResponseMap response = ResponseMap::Zero(h, w);
  const int band = window_radius + 1;
  for (int y = band; y < h - band; ++y) {
    for (int x = band; x < w - band; ++x) {
      const double a = sxx(y, x), b = sxy(y, x), c = syy(y, x);
      const double half_trace = 0.5 * (a + c);
      const double disc = std::sqrt(0.25 * (a - c) * (a - c) + b * b);
      response(y, x) = std::max(0.0, half_trace - disc);
    }
  }
  return response;
}

std::vector<Eigen::Vector2d> grid_extract(const ResponseMap& response, int grid_size,
                                          double min_response) {
  if (grid_size < 8) throw Error(ErrorKind::InvalidArgument, "grid_size must be >= 8");
  const int h = static_cast<int>(response.rows()), w = static_cast<int>(response.cols());
  std::vector<Eigen::Vector2d> features;
  for (int cy = 0; cy < h; cy += grid_size) {
    for (int cx = 0; cx < w; cx += grid_size) {
      double best = -1.0;
      int best_x = -1, best_y = -1;
      for (int y = cy; y < std::min(cy + grid_size, h); ++y) {
        for (int x = cx; x < std::min(cx + grid_size, w); ++x) {
          if (response(y, x) > best) {
            best = response(y, x);
            best_x = x;
            best_y = y;
          }
        }
      }
      if (best_x >= 0 && best >= min_response) features.emplace_back(best_x, best_y);
    }
  }
  return features;
}

std::vector<Eigen::Vector2d> threshold_extract(const ResponseMap& response, double min_response) {
  const int h = static_cast<int>(response.rows()), w = static_cast<int>(response.cols());
  std::vector<Eigen::Vector2d> features;
  for (int y = 1; y < h - 1; ++y) {
    for (int x = 1; x < w - 1; ++x) {
      const double v = response(y, x);
      if (v < min_response) continue;
      bool is_max = true;
      // Strict against earlier neighbours, non-strict against later ones, so
      // a flat plateau yields exactly one maximum.
      for (int dy = -1; dy <= 1 && is_max; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          if (dx == 0 && dy == 0) continue;
          const double n = response(y + dy, x + dx);
          const bool earlier = dy < 0 || (dy == 0 && dx < 0);
          if (earlier ? n >= v : n > v) {
            is_max = false;
            break;
          }
        }
      }
      if (is_max) features.emplace_back(x, y);
    }
  }
  return features;
}

namespace {

struct LevelData {
  GrayImage image;
  GrayImage gx;
  GrayImage gy;
};

std::vector<LevelData> make_levels(const GrayImage& img, int levels, bool with_gradients) {
  std::vector<LevelData> out;
  for (auto& level : build_pyramid(img, levels)) {
    LevelData d;
    if (with_gradients) {
      d.gx = gradient_x(level);
      d.gy = gradient_y(level);
    }
    d.image = std::move(level);
    out.push_back(std::move(d));
  }
  return out;
}

constexpr double kMinEigen = 1e-6;
constexpr double kMaxSsdPerPixel = 0.05;

// Tracks a single point; returns false when the track is lost.
bool track_point(const std::vector<LevelData>& ref, const std::vector<LevelData>& tgt,
                 const Eigen::Vector2d& p, const KltParams& params, Eigen::Vector2d& out) {
  const int w = params.window_radius;
  const int side = 2 * w + 1;
  const double n_px = static_cast<double>(side) * side;
  Eigen::Vector2d guess = Eigen::Vector2d::Zero();
  std::vector<float> templ(side * side), tx(side * side), ty(side * side);
  double final_ssd = 0.0;

  for (int level = params.levels - 1; level >= 0; --level) {
    const double scale = std::ldexp(1.0, -level);
    const Eigen::Vector2d pl = p * scale;
    const LevelData& r = ref[level];
    const LevelData& t = tgt[level];
    const bool finest = level == 0;
    if (!inside(r.image, pl.x(), pl.y(), w)) {
      if (finest) return false;
      if (level > 0) guess *= 2.0;
      continue;
    }

    Eigen::Matrix2d g = Eigen::Matrix2d::Zero();
    int k = 0;
    for (int dy = -w; dy <= w; ++dy) {
      for (int dx = -w; dx <= w; ++dx, ++k) {
        const double x = pl.x() + dx, y = pl.y() + dy;
        templ[k] = sample_bilinear(r.image, x, y);
        tx[k] = sample_bilinear(r.gx, x, y);
        ty[k] = sample_bilinear(r.gy, x, y);
        g(0, 0) += tx[k] * tx[k];
        g(0, 1) += tx[k] * ty[k];
        g(1, 1) += ty[k] * ty[k];
      }
    }
    g(1, 0) = g(0, 1);
    g /= n_px;
    const double half_trace = 0.5 * g.trace();
    const double min_eig =
        half_trace - std::sqrt(0.25 * (g(0, 0) - g(1, 1)) * (g(0, 0) - g(1, 1)) + g(0, 1) * g(0, 1));
    if (min_eig < kMinEigen) return false;
    const Eigen::Matrix2d g_inv = g.inverse();

    Eigen::Vector2d d = guess;
    bool left_image = false;
    for (int iter = 0; iter < params.max_iter; ++iter) {
      const Eigen::Vector2d q = pl + d;
      if (!inside(t.image, q.x(), q.y(), w)) {
        left_image = true;
        break;
      }
      Eigen::Vector2d b = Eigen::Vector2d::Zero();
      k = 0;
      for (int dy = -w; dy <= w; ++dy) {
        for (int dx = -w; dx <= w; ++dx, ++k) {
          const double e = sample_bilinear(t.image, q.x() + dx, q.y() + dy) - templ[k];
          b.x() += tx[k] * e;
          b.y() += ty[k] * e;
        }
      }
      const Eigen::Vector2d step = -g_inv * (b / n_px);
      d += step;
      if (step.norm() < params.eps) break;
    }
    if (left_image || !inside(t.image, pl.x() + d.x(), pl.y() + d.y(), w)) {
      if (finest) return false;
      guess *= 2.0;
      continue;
    }
    if (finest) {
      double ssd = 0.0;
      k = 0;
      for (int dy = -w; dy <= w; ++dy) {
        for (int dx = -w; dx <= w; ++dx, ++k) {
          const double e =
              sample_bilinear(t.image, pl.x() + d.x() + dx, pl.y() + d.y() + dy) - templ[k];
          ssd += e * e;
        }
      }
      final_ssd = ssd / n_px;
      guess = d;
    } else {
      guess = 2.0 * d;
    }
  }
  if (final_ssd > kMaxSsdPerPixel) return false;
  out = p + guess;
  return true;
}

KltResult track_all(const std::vector<LevelData>& ref, const std::vector<LevelData>& tgt,
                    const std::vector<Eigen::Vector2d>& pts, const KltParams& params) {
  KltResult result;
  result.points.resize(pts.size());
  result.status.resize(pts.size());
  for (std::size_t j = 0; j < pts.size(); ++j) {
    Eigen::Vector2d q = pts[j];
    const bool ok = track_point(ref, tgt, pts[j], params, q);
    result.points[j] = ok ? q : pts[j];
    result.status[j] = ok ? TrackStatus::Ok : TrackStatus::Failed;
  }
  return result;
}

}  // namespace

KltResult klt_track_pair(const GrayImage& ref, const GrayImage& tgt,
                         const std::vector<Eigen::Vector2d>& pts, const KltParams& params) {
  if (ref.rows() != tgt.rows() || ref.cols() != tgt.cols()) {
    throw Error(ErrorKind::SizeMismatch, "tracking images differ in size");
  }
  if (params.levels < 1) throw Error(ErrorKind::InvalidArgument, "levels must be >= 1");
  return track_all(make_levels(ref, params.levels, true), make_levels(tgt, params.levels, false),
                   pts, params);
}

TrackTable build_tracks(const std::vector<GrayImage>& frames, const FeatureParams& params) {
  if (frames.size() < 2) throw Error(ErrorKind::TooFewFrames, "need at least two frames");
  for (const auto& f : frames) {
    if (f.rows() != frames[0].rows() || f.cols() != frames[0].cols()) {
      throw Error(ErrorKind::SizeMismatch, "frames differ in size");
    }
  }
  const GrayImage& ref = frames[0];
  const auto seeds =
      grid_extract(shi_tomasi_response(ref, params.window_radius), params.grid_size,
                   params.min_response);

  const KltParams klt{params.levels, params.window_radius, params.max_iter, params.eps};
  const auto ref_levels = make_levels(ref, params.levels, true);
  std::vector<KltResult> tracked(frames.size() - 1);
  parallel_for(tracked.size(), params.threads, [&](std::size_t i) {
    const auto levels = make_levels(frames[i + 1], params.levels, true);
    tracked[i] = track_all(ref_levels, levels, seeds, klt);
    if (!(params.max_fb_error > 0)) return;
    // Forward-backward check: tracking the result back must land on the seed.
    const KltResult back = track_all(levels, ref_levels, tracked[i].points, klt);
    for (std::size_t j = 0; j < seeds.size(); ++j) {
      if (back.status[j] != TrackStatus::Ok || (back.points[j] - seeds[j]).norm() > params.max_fb_error) {
        tracked[i].status[j] = TrackStatus::Failed;
      }
    }
  });

  std::vector<int> keep;
  for (std::size_t j = 0; j < seeds.size(); ++j) {
    bool ok = true;
    for (const auto& t : tracked) ok = ok && t.status[j] == TrackStatus::Ok;
    if (ok) keep.push_back(static_cast<int>(j));
  }
  if (static_cast<int>(keep.size()) < kMinTracks) {
    throw Error(ErrorKind::TooFewTracks, std::to_string(keep.size()) + " tracks survived, need " +
                                             std::to_string(kMinTracks));
  }

  TrackTable table;
  table.image_width = width(ref);
  table.image_height = height(ref);
  table.ref.resize(2, static_cast<Eigen::Index>(keep.size()));
  table.obs.assign(tracked.size(), Eigen::Matrix2Xd(2, static_cast<Eigen::Index>(keep.size())));
  for (std::size_t c = 0; c < keep.size(); ++c) {
    table.ref.col(c) = seeds[keep[c]];
    for (std::size_t i = 0; i < tracked.size(); ++i) table.obs[i].col(c) = tracked[i].points[keep[c]];
  }
  return table;
}

}  // namespace smd
