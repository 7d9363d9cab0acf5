#pragma once

#include <cstdint>
#include <vector>

#include "realm/event_io.hpp"
#include "realm/masking.hpp"
#include "realm/matching.hpp"
#include "realm/tensor.hpp"

namespace realm::synth {

struct SceneSpec {
  int size = 112;                ///< square sensor side in pixels
  int patch = 14;                ///< token patch size for the base mask
  int min_shapes = 1;
  int max_shapes = 3;
  double min_speed = 3.0;        ///< pixels per window
  double max_speed = 8.0;
  bool static_scene = false;     ///< forces zero velocity
  int subframes = 10;
  double contrast_threshold = 0.15;  ///< log-intensity step per event
  std::uint64_t duration_us = 33'000;
  int num_classes = 11;
  double background_depth = 60.0;
};

struct Shape2D {
  enum class Kind { Rect, Disc };
  Kind kind = Kind::Rect;
  double cx = 0, cy = 0;      ///< centre at t = 0
  double half_w = 0, half_h = 0;  ///< radius in half_w for discs
  double vx = 0, vy = 0;      ///< pixels per window
  double intensity = 0.5;
  int label = 1;
  double depth = 10.0;

  bool contains(double x, double y, double progress) const;
};

struct Scene {
  int size = 112;
  double base = 0.4;  ///< background intensity at the centre
  double grad_x = 0.0, grad_y = 0.0;  ///< per-pixel background slope
  std::vector<Shape2D> shapes;
};

struct PairedSample {
  Tensor proxy_image;  ///< 1 x H x W, final intensity frame
  events::EventWindow events;
  masking::PatchMask base_mask;
  Tensor labels;  ///< H x W class ids (background 0)
  Tensor depth;   ///< H x W metres

  bool skippable() const { return base_mask.active() == 0; }
};

Scene random_scene(std::uint64_t seed, const SceneSpec& spec);

/// Intensity frame at progress in [0, 1] through the window, H x W.
Tensor render(const Scene& scene, double progress);

/// Log-intensity threshold crossings between consecutive sub-frames.
events::EventWindow simulate_events(const Scene& scene, const SceneSpec& spec);

PairedSample make_sample(const Scene& scene, const SceneSpec& spec);

/// Deterministic given (seed, n, spec).
std::vector<PairedSample> synth_paired_dataset(std::uint64_t seed, int n, const SceneSpec& spec);

/// Event stream of `windows` consecutive windows of one moving scene.
events::EventStream synth_stream(std::uint64_t seed, int windows, const SceneSpec& spec);

struct TwoViewSpec {
  int points = 100;
  double noise_px = 0.0;
  double min_depth = 4.0;
  double max_depth = 8.0;
  double rotation_deg = 10.0;  ///< about a random axis
  double baseline = 1.0;
  match::CameraIntrinsics camera{500.0, 500.0, 320.0, 240.0};
  int width = 640, height = 480;
};

struct TwoViewScene {
  match::Correspondences corrs;
  Eigen::Matrix3d rotation;     ///< x_b = R x_a + t
  Eigen::Vector3d translation;  ///< unit length
};

/// Non-planar random points visible in both views, projected with optional
/// Gaussian pixel noise.
TwoViewScene synth_two_view(std::uint64_t seed, const TwoViewSpec& spec);

}  // namespace realm::synth
