#include "realm/synthetic.hpp"

#include <algorithm>
#include <cmath>

#include "realm/representation.hpp"
#include "realm/rng.hpp"

namespace realm::synth {

bool Shape2D::contains(double x, double y, double progress) const {
  const double dx = x - (cx + vx * progress);
  const double dy = y - (cy + vy * progress);
  if (kind == Kind::Rect) return std::abs(dx) <= half_w && std::abs(dy) <= half_h;
  return dx * dx + dy * dy <= half_w * half_w;
}

Scene random_scene(std::uint64_t seed, const SceneSpec& spec) {
  Rng rng(derive_seed(seed, {0x5CE9E}));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Scene s;
  s.size = spec.size;
  s.base = 0.25 + 0.3 * u(rng);
  s.grad_x = (u(rng) - 0.5) * 0.3 / spec.size;
  s.grad_y = (u(rng) - 0.5) * 0.3 / spec.size;
  std::uniform_int_distribution<int> count(spec.min_shapes, spec.max_shapes);
  const int n = count(rng);
  const double sz = spec.size;
  for (int i = 0; i < n; ++i) {
    Shape2D sh;
    sh.kind = u(rng) < 0.5 ? Shape2D::Kind::Rect : Shape2D::Kind::Disc;
    sh.half_w = sz * (0.08 + 0.12 * u(rng));
    sh.half_h = sh.kind == Shape2D::Kind::Rect ? sz * (0.08 + 0.12 * u(rng)) : sh.half_w;
    sh.cx = sz * (0.2 + 0.6 * u(rng));
    sh.cy = sz * (0.2 + 0.6 * u(rng));
    if (!spec.static_scene) {
      const double speed = spec.min_speed + (spec.max_speed - spec.min_speed) * u(rng);
      const double ang = 2.0 * 3.14159265358979323846 * u(rng);
      sh.vx = speed * std::cos(ang);
      sh.vy = speed * std::sin(ang);
    }
    // Keep shapes clearly brighter or darker than the background.
    sh.intensity = u(rng) < 0.5 ? 0.05 + 0.1 * u(rng) : 0.8 + 0.2 * u(rng);
    // Class follows appearance so a head on image features can recover it.
    const int appearance = (sh.kind == Shape2D::Kind::Disc ? 2 : 0) + (sh.intensity < 0.5 ? 1 : 0);
    sh.label = 1 + appearance % (spec.num_classes - 1);
    sh.depth = 3.0 + 40.0 * u(rng);
    s.shapes.push_back(sh);
  }
  return s;
}

Tensor render(const Scene& scene, double progress) {
  const int n = scene.size;
  Tensor img({n, n});
  const double c = 0.5 * (n - 1);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      double v = scene.base + scene.grad_x * (x - c) + scene.grad_y * (y - c);
      for (const auto& sh : scene.shapes)
        if (sh.contains(x + 0.5, y + 0.5, progress)) v = sh.intensity;
      img.at(y, x) = v;
    }
  return img;
}

events::EventWindow simulate_events(const Scene& scene, const SceneSpec& spec) {
  const int n = scene.size;
  constexpr double kEps = 1e-3;
  events::EventWindow w;
  w.t_start = 0;
  w.t_end = spec.duration_us;
  Tensor ref = render(scene, 0.0);
  for (auto& v : ref.data) v = std::log(v + kEps);
  for (int k = 1; k <= spec.subframes; ++k) {
    const double progress = static_cast<double>(k) / spec.subframes;
    const auto t = static_cast<std::uint64_t>(std::llround(progress * static_cast<double>(spec.duration_us)));
    const Tensor frame = render(scene, progress);
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        const double l = std::log(frame.at(y, x) + kEps);
        double& r = ref.at(y, x);
        while (l - r >= spec.contrast_threshold) {
          w.events.push_back({t, static_cast<std::uint16_t>(x), static_cast<std::uint16_t>(y), 1});
          r += spec.contrast_threshold;
        }
        while (r - l >= spec.contrast_threshold) {
          w.events.push_back({t, static_cast<std::uint16_t>(x), static_cast<std::uint16_t>(y), -1});
          r -= spec.contrast_threshold;
        }
      }
  }
  return w;
}

PairedSample make_sample(const Scene& scene, const SceneSpec& spec) {
  PairedSample s;
  const int n = scene.size;
  const Tensor last = render(scene, 1.0);
  s.proxy_image = Tensor({1, n, n}, last.data);
  s.events = simulate_events(scene, spec);
  s.base_mask = masking::patch_activity_mask(repr::occupancy(s.events, n, n), spec.patch);
  s.labels = Tensor({n, n});
  s.depth = Tensor({n, n}, spec.background_depth);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x)
      for (const auto& sh : scene.shapes)
        if (sh.contains(x + 0.5, y + 0.5, 1.0)) {
          s.labels.at(y, x) = sh.label;
          s.depth.at(y, x) = sh.depth;
        }
  return s;
}

std::vector<PairedSample> synth_paired_dataset(std::uint64_t seed, int n, const SceneSpec& spec) {
  std::vector<PairedSample> out;
  out.reserve(static_cast<std::size_t>(std::max(n, 0)));
  for (int i = 0; i < n; ++i)
    out.push_back(make_sample(random_scene(derive_seed(seed, {static_cast<std::uint64_t>(i)}), spec), spec));
  return out;
}

events::EventStream synth_stream(std::uint64_t seed, int windows, const SceneSpec& spec) {
  events::EventStream stream;
  stream.width = static_cast<std::uint16_t>(spec.size);
  stream.height = static_cast<std::uint16_t>(spec.size);
  Scene scene = random_scene(seed, spec);
  for (int k = 0; k < windows; ++k) {
    auto w = simulate_events(scene, spec);
    for (auto& e : w.events) {
      e.t += static_cast<std::uint64_t>(k) * spec.duration_us;
      stream.events.push_back(e);
    }
    for (auto& sh : scene.shapes) {
      sh.cx += sh.vx;
      sh.cy += sh.vy;
    }
  }
  return stream;
}

TwoViewScene synth_two_view(std::uint64_t seed, const TwoViewSpec& spec) {
  Rng rng(derive_seed(seed, {0x2F1Eu}));
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  TwoViewScene scene;
  Eigen::Vector3d axis(u(rng), u(rng), u(rng));
  if (axis.norm() < 1e-6) axis = Eigen::Vector3d::UnitY();
  scene.rotation = match::axis_angle(axis, spec.rotation_deg);
  Eigen::Vector3d t(u(rng), 0.3 * u(rng), 0.3 * u(rng));
  if (t.norm() < 1e-6) t = Eigen::Vector3d::UnitX();
  t = t.normalized() * spec.baseline;
  scene.translation = t.normalized();
  const auto& k = spec.camera;
  auto project = [&](const Eigen::Vector3d& p) { return Eigen::Vector2d(k.fx * p.x() / p.z() + k.cx, k.fy * p.y() / p.z() + k.cy); };
  auto inside = [&](const Eigen::Vector2d& px) { return px.x() >= 0 && px.y() >= 0 && px.x() < spec.width && px.y() < spec.height; };
  int guard = 0;
  while (static_cast<int>(scene.corrs.size()) < spec.points && guard++ < spec.points * 1000) {
    const double z = spec.min_depth + (spec.max_depth - spec.min_depth) * 0.5 * (u(rng) + 1.0);
    const Eigen::Vector2d px(0.5 * (u(rng) + 1.0) * spec.width, 0.5 * (u(rng) + 1.0) * spec.height);
    const Eigen::Vector3d pa(z * (px.x() - k.cx) / k.fx, z * (px.y() - k.cy) / k.fy, z);
    const Eigen::Vector3d pb = scene.rotation * pa + t;
    if (pb.z() <= 0.1) continue;
    Eigen::Vector2d a = project(pa), b = project(pb);
    if (!inside(b)) continue;
    if (spec.noise_px > 0.0) {
      a += spec.noise_px * Eigen::Vector2d(noise(rng), noise(rng));
      b += spec.noise_px * Eigen::Vector2d(noise(rng), noise(rng));
    }
    scene.corrs.add(a, b, 1.0);
  }
  return scene;
}

}  // namespace realm::synth
