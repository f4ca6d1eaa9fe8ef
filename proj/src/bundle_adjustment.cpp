#include "smd/bundle_adjustment.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <Eigen/SparseCore>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "smd/error.hpp"
#include "smd/parallel.hpp"

namespace smd {

namespace {

// Tighter than the public default so residuals at ground truth stay far
// below 1e-9 px.
constexpr UndistortOptions kUndistort{1e-14, 400};

struct Undistorted {
  Eigen::Vector2d u;
  Eigen::Matrix<double, 2, 3> d_fk;  // d u / d(focal, k1, k2)
  Eigen::Matrix2d w;                 // distort_jacobian at u
};

Undistorted undistort_pixel(const Eigen::Vector2d& p, const BAState& s) {
  const Eigen::Vector2d xd = (p - s.principal_point) / s.focal;
  Undistorted out;
  out.u = undistort(xd, s.distortion(), kUndistort);
  const double r2 = out.u.squaredNorm();
  // distort(u) = xd differentiated implicitly: A du = dxd - u (r2 dk1 + r2^2 dk2).
  out.w = distort_jacobian(out.u, s.distortion());
  const Eigen::Matrix2d a_inv = out.w.inverse();
  out.d_fk.col(0) = a_inv * (-xd / s.focal);
  out.d_fk.col(1) = -a_inv * out.u * r2;
  out.d_fk.col(2) = -a_inv * out.u * (r2 * r2);
  return out;
}

// Columns: d(W(u) e)/d(focal, k1, k2) at fixed e, where W = distort_jacobian
// depends on the distortion directly and through u.
Eigen::Matrix<double, 2, 3> weight_derivative(const Undistorted& obs, const BAState& s,
                                              const Eigen::Vector2d& e) {
  const Eigen::Vector2d& u = obs.u;
  const double r2 = u.squaredNorm();
  const double sp = s.k1 + 2.0 * s.k2 * r2;
  const double spp = 2.0 * s.k2;
  const double ue = u.dot(e);
  Eigen::Matrix2d dw_du;  // column c: (dW/du_c) e
  for (int c = 0; c < 2; ++c) {
    Eigen::Vector2d ec = Eigen::Vector2d::Zero();
    ec[c] = 1.0;
    dw_du.col(c) = 2.0 * u[c] * sp * e + 4.0 * u[c] * spp * ue * u +
                   2.0 * sp * (ec * ue + u * e[c]);
  }
  Eigen::Matrix<double, 2, 3> out = dw_du * obs.d_fk;
  out.col(1) += r2 * e + 2.0 * ue * u;
  out.col(2) += r2 * r2 * e + 4.0 * r2 * ue * u;
  return out;
}

Eigen::Matrix<double, 2, 3> projection_jacobian(const Eigen::Vector3d& x) {
  Eigen::Matrix<double, 2, 3> j;
  const double iz = 1.0 / x.z();
  j << iz, 0.0, -x.x() * iz * iz,
       0.0, iz, -x.y() * iz * iz;
  return j;
}

// Columns: focal, k1, k2, theta (3), t (3), omega.
using BlockJacobian = Eigen::Matrix<double, 2, 10>;

Eigen::Vector2d block_residual(const BAState& s, const Posed& pose, double omega,
                               const Undistorted& ref, const Undistorted& obs,
                               BlockJacobian* jac) {
  const Eigen::Vector3d b(ref.u.x(), ref.u.y(), 1.0);
  const Eigen::Matrix3d& r = pose.rotation.matrix();
  const Eigen::Vector3d x = r * b + omega * pose.translation;
  if (x.z() <= 1e-9) throw Error(ErrorKind::BehindCamera, "point projects behind the camera");
  const Eigen::Vector2d proj = x.head<2>() / x.z();
  const Eigen::Vector2d e = s.focal * (obs.u - proj);
  if (jac) {
    const Eigen::Matrix<double, 2, 3> jp = projection_jacobian(x);
    const Eigen::Matrix<double, 2, 3> jp_r = jp * r;
    const Eigen::Matrix<double, 2, 3> d_fk = obs.d_fk - jp_r.leftCols<2>() * ref.d_fk;
    BlockJacobian j;
    j.leftCols<3>() = s.focal * d_fk;
    j.col(0) += obs.u - proj;
    j.block<2, 3>(0, 3) = s.focal * jp_r * skew(b) * so3_right_jacobian(pose.rotation.axis_angle());
    j.block<2, 3>(0, 6) = -s.focal * omega * jp;
    j.col(9) = -s.focal * jp * pose.translation;
    *jac = obs.w * j;
    jac->leftCols<3>() += weight_derivative(obs, s, e);
  }
  return obs.w * e;
}

double huber_weight(double norm, double delta) { return norm <= delta ? 1.0 : delta / norm; }

struct Linearization {
  std::vector<BlockJacobian> jac;
  std::vector<Eigen::Vector2d> res;
};

std::vector<Undistorted> undistort_column(const Eigen::Matrix2Xd& pts, const BAState& s) {
  std::vector<Undistorted> out(pts.cols());
  for (Eigen::Index j = 0; j < pts.cols(); ++j) out[j] = undistort_pixel(pts.col(j), s);
  return out;
}

Linearization linearize(const BAState& s, const TrackTable& tracks, bool with_jac, int threads) {
  const int n = s.n_frames(), m = s.m_points();
  Linearization lin;
  lin.res.resize(static_cast<std::size_t>(n) * m);
  if (with_jac) lin.jac.resize(lin.res.size());
  const std::vector<Undistorted> ref = undistort_column(tracks.ref, s);
  parallel_for(n, threads, [&](std::size_t i) {
    const std::vector<Undistorted> obs = undistort_column(tracks.obs[i], s);
    for (int j = 0; j < m; ++j) {
      const std::size_t k = i * m + j;
      lin.res[k] = block_residual(s, s.poses[i], s.omegas[j], ref[j], obs[j],
                                  with_jac ? &lin.jac[k] : nullptr);
    }
  });
  return lin;
}

void check_tracks(const BAState& s, const TrackTable& tracks) {
  if (tracks.n_frames() != s.n_frames() || tracks.m_points() != s.m_points()) {
    throw Error(ErrorKind::SizeMismatch, "track table does not match the state dimensions");
  }
}

int omega_column(const BAState& s, int j) {
  const int base = 3 + 6 * s.n_frames();
  if (j == s.gauge_point) return -1;
  return base + (j < s.gauge_point ? j : j - 1);
}

double sum_cost(const std::vector<Eigen::Vector2d>& res, double delta) {
  double c = 0.0;
  for (const auto& r : res) c += robust_cost(r, delta);
  return c;
}

}  // namespace

Intrinsicsd BAState::intrinsics() const {
  Intrinsicsd k;
  k.focal = focal;
  k.principal_point = principal_point;
  k.width = width;
  k.height = height;
  return k;
}

bool BAState::valid() const {
  if (m_points() < 2 || gauge_point < 0 || gauge_point >= m_points()) return false;
  if (!(focal >= 0.25 * focal_init && focal <= 4.0 * focal_init)) return false;
  if (!distortion().in_bounds(kDistortionBound)) return false;
  return (omegas.array() > 0).all();
}

Eigen::VectorXd BAState::parameters() const {
  Eigen::VectorXd x(num_parameters());
  x[0] = focal;
  x[1] = k1;
  x[2] = k2;
  for (int i = 0; i < n_frames(); ++i) {
    x.segment<3>(3 + 6 * i) = poses[i].rotation.axis_angle();
    x.segment<3>(6 + 6 * i) = poses[i].translation;
  }
  for (int j = 0; j < m_points(); ++j) {
    const int c = omega_column(*this, j);
    if (c >= 0) x[c] = omegas[j];
  }
  return x;
}

void BAState::set_parameters(const Eigen::VectorXd& x) {
  if (x.size() != num_parameters()) {
    throw Error(ErrorKind::SizeMismatch, "parameter vector has the wrong length");
  }
  focal = x[0];
  k1 = x[1];
  k2 = x[2];
  for (int i = 0; i < n_frames(); ++i) {
    poses[i].rotation = Rotationd(x.segment<3>(3 + 6 * i));
    poses[i].translation = x.segment<3>(6 + 6 * i);
  }
  for (int j = 0; j < m_points(); ++j) {
    const int c = omega_column(*this, j);
    if (c >= 0) omegas[j] = x[c];
  }
}

void BAState::clamp_to_bounds() {
  focal = std::clamp(focal, 0.25 * focal_init, 4.0 * focal_init);
  k1 = std::clamp(k1, -kDistortionBound, kDistortionBound);
  k2 = std::clamp(k2, -kDistortionBound, kDistortionBound);
  omegas = omegas.cwiseMax(kMinOmega);
}

int median_point(const Eigen::VectorXd& omegas) {
  std::vector<int> idx(omegas.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return omegas[a] < omegas[b]; });
  return idx[(idx.size() - 1) / 2];
}

BAState make_state(const Initialization& init, const Intrinsicsd& k) {
  BAState s;
  s.focal = s.focal_init = k.focal;
  s.principal_point = k.principal_point;
  s.width = k.width;
  s.height = k.height;
  s.poses = init.poses;
  s.omegas.resize(static_cast<Eigen::Index>(init.points.size()));
  for (std::size_t j = 0; j < init.points.size(); ++j) s.omegas[j] = init.points[j].omega;
  s.gauge_point = median_point(s.omegas);
  return s;
}

Eigen::Vector2d reproj_residual(const BAState& state, const TrackTable& tracks, int frame, int point) {
  if (frame < 0 || frame > state.n_frames() || point < 0 || point >= state.m_points()) {
    throw Error(ErrorKind::InvalidArgument, "frame or point index out of range");
  }
  const Undistorted ref = undistort_pixel(tracks.ref.col(point), state);
  const Undistorted obs = frame == 0 ? ref : undistort_pixel(tracks.obs[frame - 1].col(point), state);
  const Posed pose = frame == 0 ? Posed::identity() : state.poses[frame - 1];
  return block_residual(state, pose, state.omegas[point], ref, obs, nullptr);
}

double robust_cost(const Eigen::Vector2d& residual, double delta) {
  const double n = residual.norm();
  return n <= delta ? n * n : 2.0 * delta * n - delta * delta;
}

double total_cost(const BAState& state, const TrackTable& tracks, double delta, int threads) {
  check_tracks(state, tracks);
  return sum_cost(linearize(state, tracks, false, threads).res, delta);
}

Eigen::VectorXd residuals(const BAState& state, const TrackTable& tracks) {
  check_tracks(state, tracks);
  const Linearization lin = linearize(state, tracks, false, 1);
  Eigen::VectorXd r(2 * lin.res.size());
  for (std::size_t k = 0; k < lin.res.size(); ++k) r.segment<2>(2 * k) = lin.res[k];
  return r;
}

Eigen::SparseMatrix<double, Eigen::RowMajor> jacobian(const BAState& state, const TrackTable& tracks) {
  check_tracks(state, tracks);
  const int n = state.n_frames(), m = state.m_points();
  const Linearization lin = linearize(state, tracks, true, 1);
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(lin.jac.size() * 20);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) {
      const std::size_t k = static_cast<std::size_t>(i) * m + j;
      const BlockJacobian& jb = lin.jac[k];
      const int cols[10] = {0, 1, 2, 3 + 6 * i, 4 + 6 * i, 5 + 6 * i,
                            6 + 6 * i, 7 + 6 * i, 8 + 6 * i, omega_column(state, j)};
      for (int r = 0; r < 2; ++r) {
        for (int c = 0; c < 10; ++c) {
          if (cols[c] >= 0) trip.emplace_back(static_cast<int>(2 * k) + r, cols[c], jb(r, c));
        }
      }
    }
  }
  Eigen::SparseMatrix<double, Eigen::RowMajor> jac(2 * n * m, state.num_parameters());
  jac.setFromTriplets(trip.begin(), trip.end());
  return jac;
}

BAResult solve(const BAState& init, const TrackTable& tracks, const BAOptions& opts) {
  if (!(opts.delta > 0) || opts.max_iter < 0 || !(opts.lambda0 > 0)) {
    throw Error(ErrorKind::InvalidArgument, "invalid solver options");
  }
  if (!init.valid()) throw Error(ErrorKind::InvalidArgument, "initial state violates its bounds");
  check_tracks(init, tracks);
  const auto t0 = std::chrono::steady_clock::now();

  const int n = init.n_frames(), m = init.m_points();
  const int nc = 3 + 6 * n;  // focal, distortion and pose parameters
  const int np = m - 1;      // free inverse depths

  BAResult out{init, {}};
  BAState& s = out.state;
  BAReport& rep = out.report;
  Linearization lin = linearize(s, tracks, true, opts.threads);
  double cost = sum_cost(lin.res, opts.delta);
  rep.initial_cost = cost;
  rep.cost_trace.push_back(cost);
  rep.trace_iterations.push_back(0);
  double lambda = opts.lambda0;
  rep.termination = "max_iter";

  Eigen::MatrixXd a(nc, nc), b(nc, np);
  Eigen::VectorXd d(np), ga(nc), gd(np);
  bool stale = true;

  while (rep.iterations < opts.max_iter) {
    if (stale) {
      a.setZero();
      b.setZero();
      d.setZero();
      ga.setZero();
      gd.setZero();
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < m; ++j) {
          const std::size_t k = static_cast<std::size_t>(i) * m + j;
          const Eigen::Vector2d& e = lin.res[k];
          const double w = huber_weight(e.norm(), opts.delta);
          const Eigen::Matrix<double, 2, 9> jc = lin.jac[k].leftCols<9>();
          const Eigen::Vector2d jw = lin.jac[k].col(9);
          const Eigen::Matrix<double, 9, 9> hcc = w * jc.transpose() * jc;
          const Eigen::Matrix<double, 9, 1> gc = w * jc.transpose() * e;
          const int idx[9] = {0, 1, 2, 3 + 6 * i, 4 + 6 * i, 5 + 6 * i, 6 + 6 * i, 7 + 6 * i, 8 + 6 * i};
          for (int u = 0; u < 9; ++u) {
            ga[idx[u]] += gc[u];
            for (int v = 0; v < 9; ++v) a(idx[u], idx[v]) += hcc(u, v);
          }
          const int pj = omega_column(s, j);
          if (pj < 0) continue;
          const int p = pj - nc;
          const Eigen::Matrix<double, 9, 1> hcp = w * jc.transpose() * jw;
          for (int u = 0; u < 9; ++u) b(idx[u], p) += hcp[u];
          d[p] += w * jw.squaredNorm();
          gd[p] += w * jw.dot(e);
        }
      }
      stale = false;
    }

    const double max_diag = std::max(a.diagonal().maxCoeff(), np > 0 ? d.maxCoeff() : 0.0);
    const double floor = 1e-9 * std::max(max_diag, std::numeric_limits<double>::min());
    Eigen::VectorXd delta_x;
    for (;;) {
      Eigen::MatrixXd ad = a;
      ad.diagonal().array() += lambda * (a.diagonal().array() + floor);
      const Eigen::ArrayXd dd = d.array() + lambda * (d.array() + floor);
      const Eigen::ArrayXd d_inv = dd.inverse();
      const Eigen::MatrixXd b_dinv = b * d_inv.matrix().asDiagonal();
      const Eigen::MatrixXd schur = ad - b_dinv * b.transpose();
      Eigen::LLT<Eigen::MatrixXd> llt(schur);
      if (llt.info() == Eigen::Success && (dd > 0).all()) {
        const Eigen::VectorXd xc = llt.solve(-ga + b_dinv * gd);
        if (xc.allFinite()) {
          delta_x.resize(nc + np);
          delta_x.head(nc) = xc;
          delta_x.tail(np) = (d_inv * (-gd - b.transpose() * xc).array()).matrix();
          break;
        }
      }
      lambda *= 10;
      if (lambda > 1e8) {
        throw Error(ErrorKind::NumericalFailure, "normal equations not solvable at damping 1e8");
      }
    }

    ++rep.iterations;
    const Eigen::VectorXd x = s.parameters();
    if (delta_x.norm() < opts.xtol * (x.norm() + opts.xtol)) {
      rep.converged = true;
      rep.termination = "xtol";
      break;
    }
    BAState cand = s;
    cand.set_parameters(x + delta_x);
    cand.clamp_to_bounds();
    double c_new = std::numeric_limits<double>::infinity();
    Linearization cand_lin;
    try {
      cand_lin = linearize(cand, tracks, true, opts.threads);
      c_new = sum_cost(cand_lin.res, opts.delta);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::BehindCamera && e.kind() != ErrorKind::NonConvergent) throw;
    }
    if (c_new < cost) {
      const double rel = (cost - c_new) / cost;
      s = std::move(cand);
      lin = std::move(cand_lin);
      cost = c_new;
      rep.cost_trace.push_back(cost);
      rep.trace_iterations.push_back(rep.iterations);
      lambda = std::max(lambda / 3, 1e-15);
      stale = true;
      if (rel < opts.ftol) {
        rep.converged = true;
        rep.termination = "ftol";
        break;
      }
    } else {
      lambda *= 10;
      if (lambda > 1e16) {
        rep.termination = "damping";
        break;
      }
    }
  }
  rep.final_cost = cost;
  rep.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

}  // namespace smd
