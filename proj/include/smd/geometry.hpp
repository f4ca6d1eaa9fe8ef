#pragma once

// Camera model used throughout: pinhole intrinsics with a fixed principal
// point, two-coefficient radial distortion applied in normalized
// coordinates, axis-angle rotations and inverse-depth points anchored in
// the reference view.
//
// Pose convention: X_frame = R * X_ref + t. The reference frame is the world
// frame and has the identity pose.

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <string>

#include "smd/error.hpp"

namespace smd {

template <typename Scalar>
using Vec2 = Eigen::Matrix<Scalar, 2, 1>;
template <typename Scalar>
using Vec3 = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar>
using Mat2 = Eigen::Matrix<Scalar, 2, 2>;
template <typename Scalar>
using Mat3 = Eigen::Matrix<Scalar, 3, 3>;

template <typename Scalar>
struct Intrinsics {
  Scalar focal{1};
  Vec2<Scalar> principal_point{Vec2<Scalar>::Zero()};
  int width{0};
  int height{0};

  // Pre-processing rule: focal = max(width, height), principal point at the
  // image center in pixel-center coordinates.
  static Intrinsics from_image_size(int width, int height) {
    Intrinsics k;
    k.focal = static_cast<Scalar>(std::max(width, height));
    k.principal_point = Vec2<Scalar>(Scalar(width - 1) / 2, Scalar(height - 1) / 2);
    k.width = width;
    k.height = height;
    return k;
  }

  bool valid() const {
    return focal > 0 && width >= 16 && height >= 16 && principal_point.x() >= 0 &&
           principal_point.y() >= 0 && principal_point.x() <= width &&
           principal_point.y() <= height;
  }

  // Intrinsics of the same camera sampled on an image reduced by `factor`.
  Intrinsics downscaled(int factor) const {
    Intrinsics k;
    const Scalar s = Scalar(factor);
    k.focal = focal / s;
    k.principal_point = (principal_point.array() + Scalar(0.5)) / s - Scalar(0.5);
    k.width = width / factor;
    k.height = height / factor;
    return k;
  }
};

template <typename Scalar>
struct Distortion {
  Scalar k1{0};
  Scalar k2{0};

  bool in_bounds(Scalar bound = Scalar(2)) const {
    return std::abs(k1) <= bound && std::abs(k2) <= bound;
  }
};

template <typename Scalar>
Mat3<Scalar> skew(const Vec3<Scalar>& v) {
  Mat3<Scalar> m;
  m << Scalar(0), -v.z(), v.y(),
       v.z(), Scalar(0), -v.x(),
       -v.y(), v.x(), Scalar(0);
  return m;
}

// Rodrigues formula, with a Taylor expansion near the origin.
template <typename Scalar>
Mat3<Scalar> exp_so3_matrix(const Vec3<Scalar>& theta) {
  const Scalar angle2 = theta.squaredNorm();
  const Mat3<Scalar> w = skew(theta);
  Scalar a, b;
  if (angle2 < Scalar(1e-10)) {
    a = Scalar(1) - angle2 / Scalar(6);
    b = Scalar(0.5) - angle2 / Scalar(24);
  } else {
    const Scalar angle = std::sqrt(angle2);
    a = std::sin(angle) / angle;
    b = (Scalar(1) - std::cos(angle)) / angle2;
  }
  return Mat3<Scalar>::Identity() + a * w + b * w * w;
}

template <typename Scalar>
class Rotation {
 public:
  Rotation() : theta_(Vec3<Scalar>::Zero()), matrix_(Mat3<Scalar>::Identity()) {}
  explicit Rotation(const Vec3<Scalar>& axis_angle)
      : theta_(axis_angle), matrix_(exp_so3_matrix(axis_angle)) {}

  static Rotation identity() { return Rotation(); }

  const Vec3<Scalar>& axis_angle() const { return theta_; }
  const Mat3<Scalar>& matrix() const { return matrix_; }

 private:
  Vec3<Scalar> theta_;
  Mat3<Scalar> matrix_;
};

template <typename Scalar>
Rotation<Scalar> so3_exp(const Vec3<Scalar>& theta) {
  return Rotation<Scalar>(theta);
}

// Right Jacobian of the exponential map: d(exp(theta) * b)/dtheta equals
// -exp(theta) * [b]x * so3_right_jacobian(theta).
template <typename Scalar>
Mat3<Scalar> so3_right_jacobian(const Vec3<Scalar>& theta) {
  const Scalar angle2 = theta.squaredNorm();
  const Mat3<Scalar> w = skew(theta);
  Scalar a, b;
  if (angle2 < Scalar(1e-10)) {
    a = Scalar(0.5) - angle2 / Scalar(24);
    b = Scalar(1) / Scalar(6) - angle2 / Scalar(120);
  } else {
    const Scalar angle = std::sqrt(angle2);
    a = (Scalar(1) - std::cos(angle)) / angle2;
    b = (angle - std::sin(angle)) / (angle2 * angle);
  }
  return Mat3<Scalar>::Identity() - a * w + b * w * w;
}

template <typename Scalar>
struct Pose {
  Rotation<Scalar> rotation;
  Vec3<Scalar> translation{Vec3<Scalar>::Zero()};

  static Pose identity() { return Pose{}; }

  Vec3<Scalar> apply(const Vec3<Scalar>& x_ref) const {
    return rotation.matrix() * x_ref + translation;
  }

  // Camera center expressed in the reference frame.
  Vec3<Scalar> center() const { return -rotation.matrix().transpose() * translation; }
};

template <typename Scalar>
struct InverseDepthPoint {
  Vec2<Scalar> ref_normalized{Vec2<Scalar>::Zero()};
  Scalar omega{1};
};

template <typename Scalar>
Vec2<Scalar> pixel_to_normalized(const Vec2<Scalar>& p, const Intrinsics<Scalar>& k) {
  return (p - k.principal_point) / k.focal;
}

template <typename Scalar>
Vec2<Scalar> normalized_to_pixel(const Vec2<Scalar>& x, const Intrinsics<Scalar>& k) {
  return k.focal * x + k.principal_point;
}

template <typename Scalar>
Scalar radial_factor(Scalar r2, const Distortion<Scalar>& d) {
  return Scalar(1) + d.k1 * r2 + d.k2 * r2 * r2;
}

template <typename Scalar>
Vec2<Scalar> distort(const Vec2<Scalar>& x_u, const Distortion<Scalar>& d) {
  return x_u * radial_factor(x_u.squaredNorm(), d);
}

// Jacobian of distort() with respect to the undistorted point.
template <typename Scalar>
Mat2<Scalar> distort_jacobian(const Vec2<Scalar>& x_u, const Distortion<Scalar>& d) {
  const Scalar r2 = x_u.squaredNorm();
  const Scalar slope = d.k1 + Scalar(2) * d.k2 * r2;
  return radial_factor(r2, d) * Mat2<Scalar>::Identity() +
         Scalar(2) * slope * x_u * x_u.transpose();
}

struct UndistortOptions {
  double tol = 1e-10;
  int max_iter = 100;
};

// Fixed-point inversion x <- x_d / (1 + k1 r(x)^2 + k2 r(x)^4) starting from
// x_d. Succeeds once ||distort(x) - x_d|| <= tol, then polishes with one
// Newton step.
template <typename Scalar>
Vec2<Scalar> undistort(const Vec2<Scalar>& x_d, const Distortion<Scalar>& d,
                       const UndistortOptions& opts = {}) {
  if (!(opts.tol > 0) || opts.max_iter < 1) {
    throw Error(ErrorKind::InvalidArgument, "undistort needs tol > 0 and max_iter >= 1");
  }
  Vec2<Scalar> x = x_d;
  for (int iter = 0; iter < opts.max_iter; ++iter) {
    x = x_d / radial_factor(x.squaredNorm(), d);
    if (!x.allFinite()) break;
    if ((distort(x, d) - x_d).norm() <= Scalar(opts.tol)) {
      // One Newton step: the residual bound alone leaves up to ~tol / (1 + 3 k1 r^2) in x.
      const Vec2<Scalar> polished =
          x - distort_jacobian(x, d).inverse() * (distort(x, d) - x_d);
      return polished.allFinite() ? polished : x;
    }
  }
  throw Error(ErrorKind::NonConvergent,
              "radial undistortion did not converge (point outside the invertible radius)");
}

template <typename Scalar>
Vec3<Scalar> backproject(const InverseDepthPoint<Scalar>& pt) {
  if (!(pt.omega > 0)) {
    throw Error(ErrorKind::NonPositiveDepth, "inverse depth must be positive");
  }
  return Vec3<Scalar>(pt.ref_normalized.x(), pt.ref_normalized.y(), Scalar(1)) / pt.omega;
}

template <typename Scalar>
Vec2<Scalar> dehomogenize(const Vec3<Scalar>& x) {
  return x.template head<2>() / x.z();
}

template <typename Scalar>
Vec2<Scalar> project(const Vec3<Scalar>& point, const Pose<Scalar>& pose,
                     const Intrinsics<Scalar>& k, const Distortion<Scalar>& d) {
  const Vec3<Scalar> x_cam = pose.apply(point);
  if (x_cam.z() <= Scalar(1e-9)) {
    throw Error(ErrorKind::BehindCamera, "point projects behind the camera");
  }
  return normalized_to_pixel(distort(dehomogenize(x_cam), d), k);
}

using Intrinsicsd = Intrinsics<double>;
using Distortiond = Distortion<double>;
using Rotationd = Rotation<double>;
using Posed = Pose<double>;
using InverseDepthPointd = InverseDepthPoint<double>;

}  // namespace smd
