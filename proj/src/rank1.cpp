#include "smd/rank1.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <limits>
#include <cmath>
#include <string>

#include "smd/error.hpp"

namespace smd {

NormalizedTracks normalize_tracks(const TrackTable& table, const Intrinsicsd& k,
                                  const Distortiond& d) {
  auto convert = [&](const Eigen::Matrix2Xd& px) {
    Eigen::Matrix2Xd out(2, px.cols());
    for (Eigen::Index j = 0; j < px.cols(); ++j) {
      out.col(j) = undistort(pixel_to_normalized<double>(px.col(j), k), d);
    }
    return out;
  };
  NormalizedTracks out;
  out.ref = convert(table.ref);
  for (const auto& o : table.obs) out.obs.push_back(convert(o));
  return out;
}

namespace {

Eigen::Matrix<double, 2, 3> projection_jacobian(const Eigen::Vector3d& q) {
  Eigen::Matrix<double, 2, 3> j;
  const double iz = 1.0 / q.z();
  j << iz, 0.0, -q.x() * iz * iz,
       0.0, iz, -q.y() * iz * iz;
  return j;
}

// Flow of one point under axis-angle theta and its 2x3 derivative.
Eigen::Vector2d rotated_flow(const Eigen::Vector3d& theta, const Eigen::Vector2d& ref_pt,
                             const Eigen::Vector2d& frame_pt,
                             Eigen::Matrix<double, 2, 3>* jac) {
  const Eigen::Vector3d phi = -theta;
  const Eigen::Matrix3d r = exp_so3_matrix(phi);
  const Eigen::Vector3d h(frame_pt.x(), frame_pt.y(), 1.0);
  const Eigen::Vector3d q = r * h;
  if (jac) *jac = projection_jacobian(q) * r * skew(h) * so3_right_jacobian(phi);
  return dehomogenize(q) - ref_pt;
}

double median_of(Eigen::VectorXd v) {
  const auto n = v.size();
  std::nth_element(v.data(), v.data() + n / 2, v.data() + n);
  double med = v[n / 2];
  if (n % 2 == 0) {
    med = 0.5 * (med + *std::max_element(v.data(), v.data() + n / 2));
  }
  return med;
}

}  // namespace

Rotationd estimate_rotation(const Eigen::Matrix2Xd& ref_pts, const Eigen::Matrix2Xd& frame_pts) {
  if (ref_pts.cols() != frame_pts.cols()) {
    throw Error(ErrorKind::SizeMismatch, "rotation estimate needs matched point sets");
  }
  if (ref_pts.cols() < 3) throw Error(ErrorKind::InvalidArgument, "rotation estimate needs >= 3 points");

  Eigen::Vector3d theta = Eigen::Vector3d::Zero();
  for (int iter = 0; iter < 10; ++iter) {
    Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
    Eigen::Vector3d g = Eigen::Vector3d::Zero();
    for (Eigen::Index j = 0; j < ref_pts.cols(); ++j) {
      Eigen::Matrix<double, 2, 3> jac;
      const Eigen::Vector2d e = rotated_flow(theta, ref_pts.col(j), frame_pts.col(j), &jac);
      h.noalias() += jac.transpose() * jac;
      g.noalias() += jac.transpose() * e;
    }
    const Eigen::Vector3d eig = Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(h).eigenvalues();
    if (!(eig.minCoeff() > 0) || eig.maxCoeff() / eig.minCoeff() > 1e12) {
      throw Error(ErrorKind::Degenerate, "rotation normal equations are ill-conditioned");
    }
    const Eigen::Vector3d step = -h.ldlt().solve(g);
    theta += step;
    if (step.norm() < 1e-12) break;
  }
  return Rotationd(theta);
}

Eigen::Vector3d flow_residual(const Rotationd& rotation, const Eigen::Vector2d& ref_pt,
                              const Eigen::Vector2d& frame_pt) {
  const Eigen::Vector3d q =
      rotation.matrix().transpose() * Eigen::Vector3d(frame_pt.x(), frame_pt.y(), 1.0);
  Eigen::Vector3d r;
  r << dehomogenize(q) - ref_pt, 0.0;
  return r;
}

Rank1Problem build_constraint_matrix(const NormalizedTracks& tracks,
                                     const std::vector<Rotationd>& rotations) {
  if (static_cast<int>(rotations.size()) != tracks.n_frames()) {
    throw Error(ErrorKind::SizeMismatch, "one rotation per non-reference frame expected");
  }
  Rank1Problem prob;
  prob.M.setZero(3 * tracks.n_frames(), tracks.m_points());
  for (int i = 0; i < tracks.n_frames(); ++i) {
    for (int j = 0; j < tracks.m_points(); ++j) {
      prob.M.block<3, 1>(3 * i, j) =
          flow_residual(rotations[i], tracks.ref.col(j), tracks.obs[i].col(j));
    }
  }
  return prob;
}

Rank1Solution rank1_factorize(const Rank1Problem& problem) {
  const Eigen::MatrixXd& m = problem.M;
  if (m.rows() < 6 || m.cols() < kMinTracks) {
    throw Error(ErrorKind::InvalidArgument, "rank-1 factorization needs >= 2 frames and >= 16 points");
  }
  const double norm = m.norm();
  if (!(norm > 1e-12)) {
    throw Error(ErrorKind::DegenerateMotion, "flow matrix vanishes (no translation)");
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  if (sv[0] / norm < 1e-6) {
    throw Error(ErrorKind::DegenerateMotion, "translation baseline indistinguishable from zero");
  }

  Rank1Solution sol;
  sol.sigma1 = sv[0];
  sol.sigma2 = sv.size() > 1 ? sv[1] : 0.0;
  Eigen::VectorXd d = svd.matrixV().col(0);
  Eigen::VectorXd c = sv[0] * svd.matrixU().col(0);

  const double med = median_of(d);
  if (std::abs(med) < 1e-12) throw Error(ErrorKind::SignAmbiguous, "median inverse depth is zero");
  if (med < 0) {
    d = -d;
    c = -c;
  }
  const double mean = d.mean();
  if (!(mean > 1e-12)) {
    throw Error(ErrorKind::SignAmbiguous, "inverse depths do not have a positive mean");
  }
  sol.D = d / mean;
  sol.C = c * mean;
  sol.residual = (m - sol.C * sol.D.transpose()).norm() / norm;
  return sol;
}

namespace {

// Joint fit of per-frame rotations theta_i, per-frame translation terms a_i
// and per-point inverse depths D_j to the first-order flow model
//   r_ij(theta_i) = D_j * (a_i.xy + a_i.z * x_0j).
// A rotation-only fit absorbs the mean lateral translation flow; fitting the
// rotations against the rank-1 structure removes that bias, and a_i.z
// carries the axial translation that a plain rank-1 product cannot express.
struct FlowModel {
  std::vector<Eigen::Vector3d> theta;
  std::vector<Eigen::Vector3d> a;
  Eigen::VectorXd d;
};

double flow_model_cost(const NormalizedTracks& tracks, const FlowModel& fm) {
  double cost = 0.0;
  for (int i = 0; i < tracks.n_frames(); ++i) {
    for (int j = 0; j < tracks.m_points(); ++j) {
      const Eigen::Vector2d p0 = tracks.ref.col(j);
      const Eigen::Vector2d r = rotated_flow(fm.theta[i], p0, tracks.obs[i].col(j), nullptr);
      cost += (r - fm.d[j] * (fm.a[i].head<2>() + fm.a[i].z() * p0)).squaredNorm();
    }
  }
  return cost;
}

void normalize_gauge(FlowModel& fm) {
  const double s = fm.d.norm() / std::sqrt(static_cast<double>(fm.d.size()));
  fm.d /= s;
  for (auto& a : fm.a) a *= s;
}

double refine_flow_model(const NormalizedTracks& tracks, FlowModel& fm, int max_iter = 50) {
  const int n = tracks.n_frames(), m = tracks.m_points();
  const int p = 6 * n;
  double cost = flow_model_cost(tracks, fm);
  double lambda = 1e-4;
  for (int iter = 0; iter < max_iter && cost > 1e-30; ++iter) {
    // Frame block [theta_i, a_i] per frame, diagonal point block over D.
    Eigen::MatrixXd h_ff = Eigen::MatrixXd::Zero(p, p);
    Eigen::MatrixXd h_fd = Eigen::MatrixXd::Zero(p, m);
    Eigen::VectorXd h_dd = Eigen::VectorXd::Zero(m);
    Eigen::VectorXd g_f = Eigen::VectorXd::Zero(p);
    Eigen::VectorXd g_d = Eigen::VectorXd::Zero(m);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < m; ++j) {
        const Eigen::Vector2d p0 = tracks.ref.col(j);
        Eigen::Matrix<double, 2, 3> j_theta;
        const Eigen::Vector2d r = rotated_flow(fm.theta[i], p0, tracks.obs[i].col(j), &j_theta);
        const Eigen::Vector2d model = fm.a[i].head<2>() + fm.a[i].z() * p0;
        const Eigen::Vector2d e = r - fm.d[j] * model;
        Eigen::Matrix<double, 2, 6> jf;
        jf.leftCols<3>() = j_theta;
        jf.block<2, 2>(0, 3) = -fm.d[j] * Eigen::Matrix2d::Identity();
        jf.col(5) = -fm.d[j] * p0;
        const Eigen::Vector2d jd = -model;
        h_ff.block<6, 6>(6 * i, 6 * i) += jf.transpose() * jf;
        h_fd.block<6, 1>(6 * i, j) += jf.transpose() * jd;
        h_dd[j] += jd.squaredNorm();
        g_f.segment<6>(6 * i) += jf.transpose() * e;
        g_d[j] += jd.dot(e);
      }
    }
    const double scale = std::max(h_ff.diagonal().maxCoeff(), h_dd.maxCoeff());
    const Eigen::VectorXd diag_f = h_ff.diagonal().cwiseMax(1e-12 * scale);
    const Eigen::VectorXd diag_d = h_dd.cwiseMax(1e-12 * scale);
    bool accepted = false;
    while (!accepted && lambda < 1e8) {
      const Eigen::VectorXd inv_d = (h_dd + lambda * diag_d).cwiseInverse();
      Eigen::MatrixXd reduced = h_ff - h_fd * inv_d.asDiagonal() * h_fd.transpose();
      reduced.diagonal() += lambda * diag_f;
      Eigen::LLT<Eigen::MatrixXd> llt(reduced);
      if (llt.info() != Eigen::Success) {
        lambda *= 10;
        continue;
      }
      const Eigen::VectorXd step_f = -llt.solve(g_f - h_fd * inv_d.cwiseProduct(g_d));
      const Eigen::VectorXd step_d = -inv_d.cwiseProduct(g_d + h_fd.transpose() * step_f);
      FlowModel cand = fm;
      for (int i = 0; i < n; ++i) {
        cand.theta[i] += step_f.segment<3>(6 * i);
        cand.a[i] += step_f.segment<3>(6 * i + 3);
      }
      cand.d += step_d;
      const double c_new = flow_model_cost(tracks, cand);
      if (c_new < cost) {
        const double rel = (cost - c_new) / cost;
        fm = std::move(cand);
        normalize_gauge(fm);
        cost = c_new;
        lambda = std::max(lambda / 3, 1e-12);
        accepted = true;
        if (rel < 1e-12) return cost;
      } else {
        lambda *= 10;
      }
    }
    if (!accepted) break;
  }
  return cost;
}

}  // namespace

Initialization initialize(const TrackTable& table, const Intrinsicsd& k) {
  validate_tracks(table);
  const NormalizedTracks tracks = normalize_tracks(table, k);
  const int n = tracks.n_frames(), m = tracks.m_points();

  std::vector<Rotationd> rotations;
  for (int i = 0; i < n; ++i) rotations.push_back(estimate_rotation(tracks.ref, tracks.obs[i]));
  const Rank1Problem first = build_constraint_matrix(tracks, rotations);
  if (!(first.M.norm() > 1e-12)) {
    throw Error(ErrorKind::DegenerateMotion, "flow matrix vanishes (no translation)");
  }
  // Flow left over after the best rotation is the only evidence of a
  // baseline; the refinement below would happily trade rotation for a
  // translation of that size.
  const double residual_px = k.focal * first.M.norm() / std::sqrt(static_cast<double>(n) * m);
  if (residual_px < kMinTranslationFlowPx) {
    throw Error(ErrorKind::DegenerateMotion, "flow not explained by rotation is only " +
                                                 std::to_string(residual_px) + " px rms");
  }

  // Unnormalized factors seed the refinement: before the rotations are
  // corrected, D is close to omega minus its mean, so the mean gauge of
  // rank1_factorize is not usable yet. The missing offset is only weakly
  // observable, so the refinement starts from several offsets and keeps the
  // lowest cost.
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(first.M, Eigen::ComputeThinU | Eigen::ComputeThinV);
  FlowModel seed;
  seed.d = svd.matrixV().col(0) * std::sqrt(static_cast<double>(m));
  for (int i = 0; i < n; ++i) {
    seed.theta.push_back(rotations[i].axis_angle());
    Eigen::Vector3d a = Eigen::Vector3d::Zero();
    a.head<2>() = svd.singularValues()[0] * svd.matrixU().block<2, 1>(3 * i, 0) /
                  std::sqrt(static_cast<double>(m));
    seed.a.push_back(a);
  }
  FlowModel fm;
  double screened = std::numeric_limits<double>::infinity();
  for (const double offset : {0.0, 1.0, -1.0, 2.0, -2.0, 4.0, -4.0, 8.0, -8.0}) {
    FlowModel start = seed;
    start.d.array() += offset;
    const double c = refine_flow_model(tracks, start, 8);
    if (c < screened) {
      screened = c;
      fm = std::move(start);
    }
  }
  const double cost = refine_flow_model(tracks, fm);

  for (int i = 0; i < n; ++i) rotations[i] = Rotationd(fm.theta[i]);
  Rank1Problem compensated = build_constraint_matrix(tracks, rotations);
  if (cost > 0.5 * compensated.M.squaredNorm()) {
    throw Error(ErrorKind::DegenerateMotion, "flow is not explained by any translation");
  }
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) {
      compensated.M.block<2, 1>(3 * i, j) -= fm.a[i].z() * fm.d[j] * tracks.ref.col(j);
    }
  }

  Initialization init;
  init.solution = rank1_factorize(compensated);
  const Eigen::VectorXd& d = init.solution.D;
  // Rescale the axial term from the refinement gauge to the factorization gauge.
  const double to_solution = fm.d.dot(d) / d.squaredNorm();
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector3d c_block = init.solution.C.segment<3>(3 * i);
    const Eigen::Vector3d center(-c_block.x(), -c_block.y(), fm.a[i].z() * to_solution);
    Posed pose;
    pose.rotation = rotations[i];
    pose.translation = -rotations[i].matrix() * center;
    init.poses.push_back(pose);
  }
  for (int j = 0; j < m; ++j) {
    init.points.push_back({tracks.ref.col(j), std::max(d[j], 1e-3)});
  }
  return init;
}

Initialization flat_initialize(const TrackTable& table, const Intrinsicsd& k) {
  validate_tracks(table);
  const NormalizedTracks tracks = normalize_tracks(table, k);
  Initialization init;
  for (int i = 0; i < tracks.n_frames(); ++i) {
    Posed pose;
    pose.rotation = estimate_rotation(tracks.ref, tracks.obs[i]);
    init.poses.push_back(pose);
  }
  for (int j = 0; j < tracks.m_points(); ++j) init.points.push_back({tracks.ref.col(j), 1.0});
  return init;
}

}  // namespace smd
