#include "realm/matching.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

#include "realm/error.hpp"
#include "realm/rng.hpp"

namespace realm::match {

namespace {

constexpr double kPi = 3.14159265358979323846;

/// Similarity moving the centroid to the origin with mean distance sqrt(2).
Eigen::Matrix3d hartley(const std::vector<Eigen::Vector2d>& pts) {
  Eigen::Vector2d c = Eigen::Vector2d::Zero();
  for (const auto& p : pts) c += p;
  c /= static_cast<double>(pts.size());
  double mean = 0.0;
  for (const auto& p : pts) mean += (p - c).norm();
  mean /= static_cast<double>(pts.size());
  const double s = mean > 0.0 ? std::sqrt(2.0) / mean : 1.0;
  Eigen::Matrix3d t;
  t << s, 0, -s * c.x(), 0, s, -s * c.y(), 0, 0, 1;
  return t;
}

/// Linear triangulation with P_a = [I | 0], P_b = [R | t]; returns the point in frame a.
Eigen::Vector3d triangulate(const Eigen::Matrix3d& r, const Eigen::Vector3d& t, const Eigen::Vector2d& xa,
                            const Eigen::Vector2d& xb) {
  Eigen::Matrix<double, 3, 4> pa = Eigen::Matrix<double, 3, 4>::Zero();
  pa.leftCols<3>().setIdentity();
  Eigen::Matrix<double, 3, 4> pb;
  pb.leftCols<3>() = r;
  pb.col(3) = t;
  Eigen::Matrix4d a;
  a.row(0) = xa.x() * pa.row(2) - pa.row(0);
  a.row(1) = xa.y() * pa.row(2) - pa.row(1);
  a.row(2) = xb.x() * pb.row(2) - pb.row(0);
  a.row(3) = xb.y() * pb.row(2) - pb.row(1);
  Eigen::JacobiSVD<Eigen::Matrix4d> svd(a, Eigen::ComputeFullV);
  const Eigen::Vector4d h = svd.matrixV().col(3);
  if (std::abs(h(3)) < 1e-15) return Eigen::Vector3d(0, 0, -1);
  return h.head<3>() / h(3);
}

}  // namespace

void Correspondences::add(const Eigen::Vector2d& a, const Eigen::Vector2d& b, double score) {
  points_a.push_back(a);
  points_b.push_back(b);
  scores.push_back(score);
}

void Correspondences::validate() const {
  if (points_a.size() != points_b.size() || points_a.size() != scores.size())
    throw Error(ErrorCode::ShapeMismatch, "correspondence lists differ in length");
  for (double s : scores)
    if (!std::isfinite(s)) throw Error(ErrorCode::InvalidArgument, "non-finite correspondence score");
}

std::string correspondences_csv(const Correspondences& c) {
  std::string out = "xa,ya,xb,yb,sim\n";
  char buf[200];
  for (std::size_t i = 0; i < c.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g\n", c.points_a[i].x(), c.points_a[i].y(),
                  c.points_b[i].x(), c.points_b[i].y(), c.scores[i]);
    out += buf;
  }
  return out;
}

Correspondences parse_correspondences_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  Correspondences c;
  bool header = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (header) {
      header = false;
      if (line.rfind("xa", 0) == 0) continue;
    }
    double v[5];
    if (std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf,%lf", &v[0], &v[1], &v[2], &v[3], &v[4]) != 5)
      throw Error(ErrorCode::InvalidArgument, "bad correspondence line: " + line);
    c.add({v[0], v[1]}, {v[2], v[3]}, v[4]);
  }
  c.validate();
  return c;
}

Eigen::Matrix3d CameraIntrinsics::matrix() const {
  Eigen::Matrix3d k;
  k << fx, 0, cx, 0, fy, cy, 0, 0, 1;
  return k;
}

Eigen::Vector2d CameraIntrinsics::normalize(const Eigen::Vector2d& px) const {
  return {(px.x() - cx) / fx, (px.y() - cy) / fy};
}

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0 && fy > 0.0)) throw Error(ErrorCode::InvalidArgument, "focal lengths must be positive");
}

int PoseEstimate::inlier_count() const {
  return static_cast<int>(std::count(inliers.begin(), inliers.end(), std::uint8_t{1}));
}

Correspondences mutual_nn_match(const Tensor& desc_a, const Tensor& desc_b, int grid, int patch, double min_sim) {
  if (desc_a.rank() != 2 || desc_b.rank() != 2 || desc_a.dim(1) != desc_b.dim(1))
    throw Error(ErrorCode::ShapeMismatch, "descriptor shapes " + shape_str(desc_a.shape) + " / " + shape_str(desc_b.shape));
  if (desc_a.dim(0) != grid * grid || desc_b.dim(0) != grid * grid)
    throw Error(ErrorCode::ShapeMismatch, "descriptor rows must equal grid^2");
  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const int m = desc_a.dim(0), d = desc_a.dim(1);
  auto unit = [&](const Tensor& t) {
    Mat x = Eigen::Map<const Mat>(t.data.data(), m, d);
    for (int i = 0; i < m; ++i) {
      const double n = x.row(i).norm();
      x.row(i) /= std::max(n, 1e-8);
    }
    return x;
  };
  const Mat sim = unit(desc_a) * unit(desc_b).transpose();
  std::vector<int> best_b(static_cast<std::size_t>(m)), best_a(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    int b = 0;
    for (int j = 1; j < m; ++j)
      if (sim(i, j) > sim(i, b)) b = j;
    best_b[static_cast<std::size_t>(i)] = b;
  }
  for (int j = 0; j < m; ++j) {
    int a = 0;
    for (int i = 1; i < m; ++i)
      if (sim(i, j) > sim(a, j)) a = i;
    best_a[static_cast<std::size_t>(j)] = a;
  }
  auto centre = [&](int idx) {
    return Eigen::Vector2d((idx % grid + 0.5) * patch, (idx / grid + 0.5) * patch);
  };
  Correspondences c;
  for (int i = 0; i < m; ++i) {
    const int j = best_b[static_cast<std::size_t>(i)];
    if (best_a[static_cast<std::size_t>(j)] != i || !(sim(i, j) >= min_sim)) continue;
    c.add(centre(i), centre(j), sim(i, j));
  }
  return c;
}

bool eight_point(const std::vector<Eigen::Vector2d>& xa, const std::vector<Eigen::Vector2d>& xb, Eigen::Matrix3d& e) {
  const std::size_t n = xa.size();
  if (n < 8 || xb.size() != n) return false;
  const Eigen::Matrix3d ta = hartley(xa), tb = hartley(xb);
  Eigen::MatrixXd a(static_cast<Eigen::Index>(std::max<std::size_t>(n, 9)), 9);
  a.setZero();
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Vector3d pa = ta * xa[i].homogeneous();
    const Eigen::Vector3d pb = tb * xb[i].homogeneous();
    // x_b^T E x_a = 0, E row-major.
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) a(static_cast<Eigen::Index>(i), r * 3 + c) = pb(r) * pa(c);
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (!(sv(0) > 0.0) || sv(7) < 1e-10 * sv(0)) return false;
  const Eigen::VectorXd v = svd.matrixV().col(8);
  Eigen::Matrix3d en;
  en << v(0), v(1), v(2), v(3), v(4), v(5), v(6), v(7), v(8);
  Eigen::Matrix3d raw = tb.transpose() * en * ta;
  Eigen::JacobiSVD<Eigen::Matrix3d> es(raw, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const double s = 0.5 * (es.singularValues()(0) + es.singularValues()(1));
  if (!(s > 0.0)) return false;
  e = es.matrixU() * Eigen::Vector3d(1.0, 1.0, 0.0).asDiagonal() * es.matrixV().transpose();
  return true;
}

double symmetric_epipolar_sq(const Eigen::Matrix3d& e, const Eigen::Vector2d& xa, const Eigen::Vector2d& xb) {
  const Eigen::Vector3d ha = xa.homogeneous(), hb = xb.homogeneous();
  const Eigen::Vector3d lb = e * ha;
  const Eigen::Vector3d la = e.transpose() * hb;
  const double r = hb.dot(lb);
  const double na = la.head<2>().squaredNorm(), nb = lb.head<2>().squaredNorm();
  if (!(na > 0.0) || !(nb > 0.0)) return std::numeric_limits<double>::infinity();
  return r * r * (1.0 / na + 1.0 / nb);
}

void decompose_essential(const Eigen::Matrix3d& e, const std::vector<Eigen::Vector2d>& xa,
                         const std::vector<Eigen::Vector2d>& xb, Eigen::Matrix3d& r_out, Eigen::Vector3d& t_out) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(e, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d u = svd.matrixU(), v = svd.matrixV();
  if (u.determinant() < 0) u = -u;
  if (v.determinant() < 0) v = -v;
  Eigen::Matrix3d w;
  w << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  const Eigen::Matrix3d rs[2] = {u * w * v.transpose(), u * w.transpose() * v.transpose()};
  const Eigen::Vector3d ts[2] = {u.col(2), -u.col(2)};
  int best_count = -1;
  double best_margin = -std::numeric_limits<double>::infinity();
  for (const auto& r : rs)
    for (const auto& t : ts) {
      int count = 0;
      double margin = 0.0;
      for (std::size_t i = 0; i < xa.size(); ++i) {
        const Eigen::Vector3d p = triangulate(r, t, xa[i], xb[i]);
        const double za = p.z(), zb = (r * p + t).z();
        if (za > 0.0 && zb > 0.0) ++count;
        margin += std::min(za, zb);
      }
      margin /= std::max<double>(1.0, static_cast<double>(xa.size()));
      if (count > best_count || (count == best_count && margin > best_margin)) {
        best_count = count;
        best_margin = margin;
        r_out = r;
        t_out = t.normalized();
      }
    }
}

PoseEstimate estimate_essential_ransac(const Correspondences& corrs, const CameraIntrinsics& ka,
                                       const CameraIntrinsics& kb, const RansacOptions& opts) {
  corrs.validate();
  ka.validate();
  kb.validate();
  const std::size_t n = corrs.size();
  if (n < 8) throw Error(ErrorCode::TooFewCorrespondences, "need >= 8 correspondences, got " + std::to_string(n));
  std::vector<Eigen::Vector2d> xa(n), xb(n);
  for (std::size_t i = 0; i < n; ++i) {
    xa[i] = ka.normalize(corrs.points_a[i]);
    xb[i] = kb.normalize(corrs.points_b[i]);
  }
  const double focal = 0.25 * (ka.fx + ka.fy + kb.fx + kb.fy);
  const double thr = opts.threshold_px / focal;
  const double thr_sq = thr * thr;

  auto score = [&](const Eigen::Matrix3d& e, std::vector<std::uint8_t>& mask) {
    mask.assign(n, 0);
    int count = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (symmetric_epipolar_sq(e, xa[i], xb[i]) <= thr_sq) {
        mask[i] = 1;
        ++count;
      }
    return count;
  };

  Rng rng(derive_seed(opts.seed, {0x4A45Cu}));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  PoseEstimate best;
  int best_count = -1;
  std::vector<std::uint8_t> mask;
  std::vector<Eigen::Vector2d> sa(8), sb(8);
  std::int64_t budget = opts.iterations;
  int it = 0;
  for (; it < budget; ++it) {
    // Partial Fisher-Yates draw of 8 distinct indices.
    for (std::size_t k = 0; k < 8; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, n - 1);
      std::swap(idx[k], idx[pick(rng)]);
      sa[k] = xa[idx[k]];
      sb[k] = xb[idx[k]];
    }
    Eigen::Matrix3d e;
    if (!eight_point(sa, sb, e)) continue;
    const int count = score(e, mask);
    if (count > best_count) {
      best_count = count;
      best.essential = e;
      best.inliers = mask;
      if (opts.confidence < 1.0) {
        const double ratio = static_cast<double>(count) / static_cast<double>(n);
        const double p_good = std::pow(ratio, 8);
        if (p_good >= 1.0) {
          budget = std::min<std::int64_t>(budget, it + 1);
        } else if (p_good > 0.0) {
          const double need = std::log(1.0 - opts.confidence) / std::log(1.0 - p_good);
          budget = std::min<std::int64_t>(budget, static_cast<std::int64_t>(std::ceil(need)));
        }
      }
    }
  }
  if (best_count < 0) throw Error(ErrorCode::DegenerateConfiguration, "every minimal sample was rank deficient");
  best.iterations = it;

  std::vector<Eigen::Vector2d> ia, ib;
  for (std::size_t i = 0; i < n; ++i)
    if (best.inliers[i]) {
      ia.push_back(xa[i]);
      ib.push_back(xb[i]);
    }
  Eigen::Matrix3d refit;
  if (ia.size() >= 8 && eight_point(ia, ib, refit)) {
    std::vector<std::uint8_t> refit_mask;
    if (score(refit, refit_mask) >= best_count) {
      best.essential = refit;
      best.inliers = refit_mask;
      ia.clear();
      ib.clear();
      for (std::size_t i = 0; i < n; ++i)
        if (best.inliers[i]) {
          ia.push_back(xa[i]);
          ib.push_back(xb[i]);
        }
    }
  }
  decompose_essential(best.essential, ia, ib, best.rotation, best.translation);
  return best;
}

double rotation_angular_error(const Eigen::Matrix3d& r_est, const Eigen::Matrix3d& r_gt) {
  for (const auto* r : {&r_est, &r_gt}) {
    const double ortho = (r->transpose() * *r - Eigen::Matrix3d::Identity()).norm();
    if (!(ortho <= 1e-4) || !(std::abs(r->determinant() - 1.0) <= 1e-4))
      throw Error(ErrorCode::NonRotation, "matrix is not a rotation");
  }
  const double c = std::clamp(((r_gt.transpose() * r_est).trace() - 1.0) / 2.0, -1.0, 1.0);
  return std::acos(c) * 180.0 / kPi;
}

Eigen::Matrix3d axis_angle(const Eigen::Vector3d& axis, double degrees) {
  return Eigen::AngleAxisd(degrees * kPi / 180.0, axis.normalized()).toRotationMatrix();
}

}  // namespace realm::match
