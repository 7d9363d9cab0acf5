#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "realm/tensor.hpp"

namespace realm::match {

struct Correspondences {
  std::vector<Eigen::Vector2d> points_a;
  std::vector<Eigen::Vector2d> points_b;
  std::vector<double> scores;

  std::size_t size() const { return points_a.size(); }
  void add(const Eigen::Vector2d& a, const Eigen::Vector2d& b, double score);
  void validate() const;
};

std::string correspondences_csv(const Correspondences& c);
Correspondences parse_correspondences_csv(const std::string& text);

struct CameraIntrinsics {
  double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;

  Eigen::Matrix3d matrix() const;
  Eigen::Vector2d normalize(const Eigen::Vector2d& px) const;
  void validate() const;
};

/// x_b ~ R x_a + t for points seen by cameras a and b.
struct PoseEstimate {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::UnitZ();  ///< unit length
  Eigen::Matrix3d essential = Eigen::Matrix3d::Zero();
  std::vector<std::uint8_t> inliers;
  int iterations = 0;

  int inlier_count() const;
};

/// Cosine mutual nearest neighbours between row-aligned patch descriptors.
/// Token i sits at pixel ((col + 0.5) * patch, (row + 0.5) * patch). Pairs are
/// ordered by their index in `desc_a`; ties pick the lowest index.
Correspondences mutual_nn_match(const Tensor& desc_a, const Tensor& desc_b, int grid, int patch, double min_sim);

struct RansacOptions {
  int iterations = 2000;
  double threshold_px = 1.0;
  std::uint64_t seed = 0;
  double confidence = 0.999;  ///< adaptive early stop; 1 runs every iteration
};

/// Hartley-normalized linear eight-point fit on normalized image coordinates,
/// projected to the essential manifold (singular values (s, s, 0)).
/// Returns false when the design matrix is rank deficient.
bool eight_point(const std::vector<Eigen::Vector2d>& xa, const std::vector<Eigen::Vector2d>& xb, Eigen::Matrix3d& e);

/// Squared symmetric epipolar distance in normalized coordinates.
double symmetric_epipolar_sq(const Eigen::Matrix3d& e, const Eigen::Vector2d& xa, const Eigen::Vector2d& xb);

/// The four (R, t) factorizations of E, resolved by cheirality over `xa`/`xb`.
/// Ties go to the larger mean depth margin.
void decompose_essential(const Eigen::Matrix3d& e, const std::vector<Eigen::Vector2d>& xa,
                         const std::vector<Eigen::Vector2d>& xb, Eigen::Matrix3d& r, Eigen::Vector3d& t);

PoseEstimate estimate_essential_ransac(const Correspondences& corrs, const CameraIntrinsics& ka,
                                       const CameraIntrinsics& kb, const RansacOptions& opts = {});

/// Geodesic distance between two rotations, degrees.
double rotation_angular_error(const Eigen::Matrix3d& r_est, const Eigen::Matrix3d& r_gt);

Eigen::Matrix3d axis_angle(const Eigen::Vector3d& axis, double degrees);

}  // namespace realm::match
