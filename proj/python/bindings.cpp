#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "realm/cli.hpp"
#include "realm/error.hpp"
#include "realm/event_io.hpp"
#include "realm/heads.hpp"
#include "realm/inference.hpp"
#include "realm/masking.hpp"
#include "realm/matching.hpp"
#include "realm/metrics.hpp"
#include "realm/model.hpp"
#include "realm/representation.hpp"
#include "realm/synthetic.hpp"

namespace py = pybind11;
using namespace realm;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using Bytes = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
  Array out(shape);
  std::copy(t.data.begin(), t.data.end(), out.mutable_data());
  return out;
}

masking::PatchMask to_mask(const Bytes& a) {
  if (a.ndim() != 2) throw Error(ErrorCode::InvalidArgument, "mask must be 2-D");
  masking::PatchMask m(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
  for (std::size_t i = 0; i < m.values.size(); ++i) m.values[i] = a.data()[i] != 0;
  return m;
}

Bytes to_bytes(const std::vector<std::uint8_t>& v, int rows, int cols) {
  Bytes out({rows, cols});
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

/// Columns t, x, y, p of an (N, 4) array.
events::EventWindow to_window(const Array& ev, std::uint64_t t_start, std::uint64_t t_end) {
  if (ev.ndim() != 2 || (ev.shape(0) > 0 && ev.shape(1) != 4))
    throw Error(ErrorCode::InvalidArgument, "events must be an (N, 4) array of t, x, y, p");
  events::EventWindow w{t_start, t_end, {}};
  auto r = ev.unchecked<2>();
  for (py::ssize_t i = 0; i < ev.shape(0); ++i)
    w.events.push_back({static_cast<std::uint64_t>(r(i, 0)), static_cast<std::uint16_t>(r(i, 1)),
                        static_cast<std::uint16_t>(r(i, 2)), static_cast<std::int8_t>(r(i, 3))});
  return w;
}

Array events_array(const std::vector<events::Event>& ev) {
  Array out({static_cast<py::ssize_t>(ev.size()), py::ssize_t{4}});
  auto w = out.mutable_unchecked<2>();
  for (std::size_t i = 0; i < ev.size(); ++i) {
    w(i, 0) = static_cast<double>(ev[i].t);
    w(i, 1) = ev[i].x;
    w(i, 2) = ev[i].y;
    w(i, 3) = ev[i].p;
  }
  return out;
}

std::vector<Eigen::Vector2d> to_points(const Array& a) {
  if (a.ndim() != 2 || a.shape(1) != 2) throw Error(ErrorCode::InvalidArgument, "points must be (N, 2)");
  std::vector<Eigen::Vector2d> out;
  for (py::ssize_t i = 0; i < a.shape(0); ++i) out.emplace_back(a.data()[2 * i], a.data()[2 * i + 1]);
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Event-to-image feature distillation toolkit";
  py::register_exception<Error>(m, "RealmError", PyExc_RuntimeError);

  m.def("read_events", [](const std::string& path) {
    const auto s = events::read_events_file(path);
    return py::make_tuple(events_array(s.events), s.width, s.height);
  }, py::arg("path"), "Returns (events (N, 4) as t, x, y, p; width; height).");

  m.def("write_events", [](const std::string& path, const Array& ev, int width, int height) {
    events::EventStream s{static_cast<std::uint16_t>(width), static_cast<std::uint16_t>(height), to_window(ev, 0, 0).events};
    events::write_events_file(path, s);
  }, py::arg("path"), py::arg("events"), py::arg("width"), py::arg("height"));

  m.def("window_bounds", [](const Array& ev, const std::string& spec) {
    events::EventStream s{0xFFFF, 0xFFFF, to_window(ev, 0, 0).events};
    std::vector<std::tuple<std::uint64_t, std::uint64_t, std::size_t>> out;
    for (const auto& w : events::make_windows(s, events::WindowSpec::parse(spec)))
      out.emplace_back(w.t_start, w.t_end, w.events.size());
    return out;
  }, py::arg("events"), py::arg("spec"), "(t_start, t_end, count) per window for 'count:N' or 'time:MS'.");

  m.def("encode_voxel_grid", [](const Array& ev, std::uint64_t t_start, std::uint64_t t_end, int bins, int height,
                                int width, bool normalize) {
    auto g = repr::encode_voxel_grid(to_window(ev, t_start, t_end), bins, height, width);
    if (normalize) g = repr::normalize_voxel_grid(g);
    return to_array(g.values);
  }, py::arg("events"), py::arg("t_start"), py::arg("t_end"), py::arg("bins") = 5, py::arg("height"), py::arg("width"),
        py::arg("normalize") = false);

  m.def("occupancy", [](const Array& ev, int height, int width) {
    const auto o = repr::occupancy(to_window(ev, 0, 0), height, width);
    return to_bytes(o.values, height, width);
  }, py::arg("events"), py::arg("height"), py::arg("width"));

  m.def("patch_activity_mask", [](const Bytes& occ, int patch) {
    if (occ.ndim() != 2) throw Error(ErrorCode::InvalidArgument, "occupancy must be 2-D");
    repr::OccupancyGrid g{static_cast<int>(occ.shape(0)), static_cast<int>(occ.shape(1)),
                          std::vector<std::uint8_t>(occ.data(), occ.data() + occ.size())};
    const auto mask = masking::patch_activity_mask(g, patch);
    return to_bytes(mask.values, mask.rows, mask.cols);
  }, py::arg("occupancy"), py::arg("patch") = 14);

  m.def("dilate", [](const Bytes& mask, int radius) {
    const auto d = masking::dilate(to_mask(mask), radius);
    return to_bytes(d.values, d.rows, d.cols);
  }, py::arg("mask"), py::arg("radius"));

  m.def("curriculum_radius", [](int epoch, const std::string& steps) {
    return (steps.empty() ? masking::MaskSchedule{} : masking::MaskSchedule::parse_steps(steps)).radius_at(epoch);
  }, py::arg("epoch"), py::arg("steps") = "");

  m.def("count_params", [](const std::string& geometry) {
    const auto c = model::count_params(geometry == "toy" ? model::StudentConfig::toy() : model::StudentConfig::paper());
    py::dict d;
    d["embedder"] = c.embedder;
    d["backbone"] = c.backbone;
    d["lora"] = c.lora;
    d["depth_head"] = c.depth_head;
    d["seg_head"] = c.seg_head;
    d["trainable"] = c.trainable();
    d["student_total"] = c.student_total();
    return d;
  }, py::arg("geometry") = "paper");

  m.def("depth_from_logits", [](const Array& logits, int bins, double d_min, double d_max) {
    heads::DepthBins b{bins, d_min, d_max};
    return to_array(heads::depth_from_logits(to_tensor(logits), b));
  }, py::arg("logits"), py::arg("bins") = 256, py::arg("d_min") = 1.0, py::arg("d_max") = 81.0);

  m.def("plan_corner4", [](int height, int width, int tile) {
    const auto p = infer::plan_corner4(height, width, tile);
    py::array_t<std::int32_t> count({height, width});
    std::copy(p.count.begin(), p.count.end(), count.mutable_data());
    return py::make_tuple(p.origins, count);
  }, py::arg("height"), py::arg("width"), py::arg("tile") = 448);

  m.def("pad_symmetric", [](const Array& x, int target) {
    auto [padded, pad] = infer::pad_symmetric(to_tensor(x), target);
    return py::make_tuple(to_array(padded), std::make_tuple(pad.top, pad.bottom, pad.left, pad.right));
  }, py::arg("x"), py::arg("target") = 448);

  m.def("unpad", [](const Array& x, std::tuple<int, int, int, int> tblr) {
    const auto t = to_tensor(x);
    infer::Padding pad;
    std::tie(pad.top, pad.bottom, pad.left, pad.right) = tblr;
    pad.height = t.shape[t.shape.size() - 2] - pad.top - pad.bottom;
    pad.width = t.shape.back() - pad.left - pad.right;
    return to_array(infer::unpad(t, pad));
  }, py::arg("x"), py::arg("padding"));

  m.def("estimate_pose", [](const Array& pa, const Array& pb, std::array<double, 4> k, int iterations,
                            double threshold_px, std::uint64_t seed) {
    match::Correspondences c;
    const auto a = to_points(pa), b = to_points(pb);
    if (a.size() != b.size()) throw Error(ErrorCode::InvalidArgument, "point arrays differ in length");
    for (std::size_t i = 0; i < a.size(); ++i) c.add(a[i], b[i], 1.0);
    const match::CameraIntrinsics cam{k[0], k[1], k[2], k[3]};
    const auto p = match::estimate_essential_ransac(c, cam, cam, {iterations, threshold_px, seed, 0.999});
    py::dict d;
    d["rotation"] = p.rotation;
    d["translation"] = p.translation;
    d["essential"] = p.essential;
    d["inliers"] = std::vector<bool>(p.inliers.begin(), p.inliers.end());
    d["iterations"] = p.iterations;
    return d;
  }, py::arg("points_a"), py::arg("points_b"), py::arg("intrinsics"), py::arg("iterations") = 2000,
        py::arg("threshold_px") = 1.0, py::arg("seed") = 0, "intrinsics = (fx, fy, cx, cy), shared by both views.");

  m.def("synth_two_view", [](std::uint64_t seed, double noise_px, double rotation_deg) {
    synth::TwoViewSpec spec;
    spec.noise_px = noise_px;
    spec.rotation_deg = rotation_deg;
    const auto s = synth::synth_two_view(seed, spec);
    Array a({static_cast<py::ssize_t>(s.corrs.size()), py::ssize_t{2}}), b({static_cast<py::ssize_t>(s.corrs.size()), py::ssize_t{2}});
    for (std::size_t i = 0; i < s.corrs.size(); ++i)
      for (int j = 0; j < 2; ++j) {
        a.mutable_data()[2 * i + j] = s.corrs.points_a[i][j];
        b.mutable_data()[2 * i + j] = s.corrs.points_b[i][j];
      }
    const auto& k = spec.camera;
    return py::make_tuple(a, b, Eigen::Matrix3d(s.rotation), std::make_tuple(k.fx, k.fy, k.cx, k.cy));
  }, py::arg("seed"), py::arg("noise_px") = 0.0, py::arg("rotation_deg") = 10.0,
        "Returns (points_a, points_b, rotation, intrinsics).");

  m.def("rotation_error_deg", &match::rotation_angular_error, py::arg("r_est"), py::arg("r_gt"));
  m.def("pose_auc", &metrics::pose_auc, py::arg("errors"), py::arg("thresholds") = std::vector<double>{5.0, 10.0, 20.0});

  m.def("miou", [](const Array& pred, const Array& gt, int classes) {
    const auto s = metrics::miou_and_accuracy(metrics::ConfusionMatrix::from_maps(to_tensor(pred), to_tensor(gt), classes));
    return py::make_tuple(s.miou, s.accuracy);
  }, py::arg("pred"), py::arg("gt"), py::arg("classes") = 11);

  m.def("abs_depth_error", [](const Array& pred, const Array& gt, double cutoff) {
    return metrics::abs_depth_error_at_cutoff(to_tensor(pred), to_tensor(gt), cutoff);
  }, py::arg("pred"), py::arg("gt"), py::arg("cutoff") = 80.0);

  m.def("run_cli", [](const std::vector<std::string>& args) {
    std::ostringstream out, err;
    int code;
    {
      py::gil_scoped_release release;
      code = cli::run(args, out, err);
    }
    return py::make_tuple(code, out.str(), err.str());
  }, py::arg("args"), "Runs a realm subcommand in-process; returns (exit code, stdout, stderr).");
}
