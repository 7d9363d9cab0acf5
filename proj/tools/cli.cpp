#include "realm/cli.hpp"

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <json.hpp>
#include <numeric>
#include <sstream>

#include "realm/checkpoint.hpp"
#include "realm/config.hpp"
#include "realm/distillation.hpp"
#include "realm/heads.hpp"
#include "realm/inference.hpp"
#include "realm/masking.hpp"
#include "realm/matching.hpp"
#include "realm/metrics.hpp"
#include "realm/raster.hpp"
#include "realm/representation.hpp"
#include "realm/rng.hpp"
#include "realm/synthetic.hpp"

namespace realm::cli {

namespace fs = std::filesystem;
using nlohmann::json;

ExitCode exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::ConfigError:
    case ErrorCode::InvalidArgument:
      return kValidation;
    case ErrorCode::IoError:
    case ErrorCode::BadMagic:
    case ErrorCode::TruncatedFile:
      return kIo;
    default:
      return kRuntime;
  }
}

namespace {

constexpr const char* kVersion = "0.1.0";

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out;
};

void add_common(CLI::App* sub, Common& c, bool out_required = true) {
  sub->add_option("--config", c.config_path, "key = value configuration file");
  sub->add_option("--set", c.overrides, "override one key, e.g. --set train.lr=0.01");
  auto* o = sub->add_option("--out", c.out, "output path");
  if (out_required) o->required();
}

config::RunConfig resolve(const Common& c) {
  auto cfg = c.config_path.empty() ? config::RunConfig() : config::RunConfig::load(c.config_path);
  for (const auto& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::ConfigError, "--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.apply_environment();
  return cfg;
}

/// Run artifacts: resolved config and a manifest with input / output hashes.
class Artifacts {
 public:
  Artifacts(std::string command, fs::path dir, const config::RunConfig& cfg)
      : command_(std::move(command)), dir_(std::move(dir)), cfg_(cfg) {
    fs::create_directories(dir_);
    manifest_["command"] = command_;
    manifest_["version"] = kVersion;
    manifest_["seed"] = cfg.seed();
    manifest_["inputs"] = json::array();
    manifest_["outputs"] = json::array();
  }

  void input(const std::string& path) {
    manifest_["inputs"].push_back({{"path", path}, {"fnv1a64", raster::file_hash(path)}});
  }
  void output(const fs::path& path) {
    manifest_["outputs"].push_back({{"path", path.filename().string()}, {"fnv1a64", raster::file_hash(path.string())}});
  }
  json& extra() { return manifest_; }
  fs::path path(const std::string& name) const { return dir_ / name; }

  void finish() {
    const std::string resolved = cfg_.resolved();
    manifest_["config"] = resolved;
    manifest_["config_fnv1a64"] = raster::fnv1a64_hex({reinterpret_cast<const std::uint8_t*>(resolved.data()), resolved.size()});
    raster::write_text(path(command_ + ".config.cfg").string(), resolved);
    raster::write_text(path(command_ + ".manifest.json").string(), manifest_.dump(2) + "\n");
  }

 private:
  std::string command_;
  fs::path dir_;
  const config::RunConfig& cfg_;
  json manifest_;
};

fs::path parent_dir(const std::string& file) {
  const fs::path p = fs::path(file).parent_path();
  return p.empty() ? fs::path(".") : p;
}

struct Seeds {
  std::uint64_t teacher, student, data;
  explicit Seeds(std::uint64_t s)
      : teacher(derive_seed(s, {0x7EAC4u})), student(derive_seed(s, {0x57D0u})), data(derive_seed(s, {0xDA7Au})) {}
};

std::string write_window_csv_line(std::size_t i, const events::EventWindow& w, std::size_t pixels, std::size_t tokens) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu,%llu,%llu,%zu,%zu,%zu\n", i, static_cast<unsigned long long>(w.t_start),
                static_cast<unsigned long long>(w.t_end), w.events.size(), pixels, tokens);
  return buf;
}

std::vector<events::EventWindow> load_windows(const std::string& path, const config::RunConfig& cfg,
                                              events::EventStream& stream) {
  stream = events::read_events_file(path);
  events::validate(stream);
  return events::make_windows(stream, config::window_spec(cfg));
}

Tensor encode_window(const events::EventWindow& w, const events::EventStream& s, int bins) {
  return repr::normalize_voxel_grid(repr::encode_voxel_grid(w, bins, s.height, s.width)).values;
}

// ------------------------------------------------------------------ encode

int cmd_encode(const Common& c, const std::string& events_path, const std::string& window, std::ostream& out,
               std::ostream& err) {
  auto cfg = resolve(c);
  if (!window.empty()) cfg.set("window.spec", window);
  Artifacts art("encode", c.out, cfg);
  art.input(events_path);
  events::EventStream stream;
  const auto windows = load_windows(events_path, cfg, stream);
  if (stream.events.empty()) err << "warning: " << events_path << " holds no events; nothing to encode\n";
  const auto geom = config::geometry(cfg);
  const int size = static_cast<int>(cfg.integer("encode.size"));
  std::string summary = "window,t_start,t_end,events,active_pixels,active_tokens\n";
  for (std::size_t i = 0; i < windows.size(); ++i) {
    auto grid = repr::normalize_voxel_grid(repr::encode_voxel_grid(windows[i], geom.in_bins, stream.height, stream.width));
    if (size > 0) grid = repr::resize_center_crop(grid, size);
    char name[64];
    std::snprintf(name, sizeof name, "window_%05zu.rvxg", i);
    repr::write_voxel_grid_file(art.path(name).string(), grid);
    art.output(art.path(name));
    const auto occ = repr::occupancy(windows[i], stream.height, stream.width);
    const auto mask = masking::patch_activity_mask(occ, geom.patch);
    summary += write_window_csv_line(i, windows[i], occ.active(), mask.active());
  }
  raster::write_text(art.path("occupancy.csv").string(), summary);
  art.output(art.path("occupancy.csv"));
  art.extra()["windows"] = windows.size();
  art.finish();
  out << "encoded " << windows.size() << " window(s) into " << c.out << "\n";
  return kOk;
}

// ------------------------------------------------------------------ synth

int cmd_synth(const Common& c, int windows, bool still, const std::vector<int>& blank, std::ostream& out) {
  const auto cfg = resolve(c);
  auto spec = config::scene_spec(cfg);
  spec.static_scene = still;
  auto stream = synth::synth_stream(Seeds(cfg.seed()).data, windows, spec);
  if (!blank.empty()) {
    std::erase_if(stream.events, [&](const events::Event& e) {
      const auto w = static_cast<int>(e.t / spec.duration_us);
      // Window k covers (k * D, (k + 1) * D].
      const int k = e.t > 0 && e.t % spec.duration_us == 0 ? w - 1 : w;
      return std::find(blank.begin(), blank.end(), k) != blank.end();
    });
  }
  Artifacts art("synth", parent_dir(c.out), cfg);
  events::write_events_file(c.out, stream);
  art.output(c.out);
  art.finish();
  out << "wrote " << stream.events.size() << " events to " << c.out << "\n";
  return kOk;
}

// ------------------------------------------------------------------ distill

int cmd_distill(const Common& c, std::ostream& out) {
  const auto cfg = resolve(c);
  const auto geom = config::geometry(cfg);
  const auto train = config::train_config(cfg);
  const Seeds seeds(cfg.seed());
  Artifacts art("distill", parent_dir(c.out), cfg);
  if (!c.config_path.empty()) art.input(c.config_path);

  const auto teacher = model::make_teacher(geom, seeds.teacher);
  auto student = model::make_student(teacher, seeds.student);
  const auto raw = synth::synth_paired_dataset(seeds.data, static_cast<int>(cfg.integer("data.samples")), config::scene_spec(cfg));
  const auto data = distill::prepare_samples(raw, teacher);
  const auto result = distill::run_distillation(train, student, data, cfg.integer("train.max_steps"));

  ckpt::write_file(c.out, ckpt::save_student(student, teacher));
  art.output(c.out);
  const auto curve = art.path("distill.loss.csv");
  raster::write_text(curve.string(), distill::loss_csv(result.curve));
  art.output(curve);
  art.extra()["steps"] = result.steps;
  art.extra()["eval_initial"] = result.initial_eval.total;
  art.extra()["eval_final"] = result.final_eval.total;
  art.finish();
  char buf[200];
  std::snprintf(buf, sizeof buf, "steps %lld, masked eval loss %.6f -> %.6f\n", static_cast<long long>(result.steps),
                result.initial_eval.total, result.final_eval.total);
  out << buf;
  return kOk;
}

// ------------------------------------------------------------------ train-head

model::TeacherParams teacher_from(const std::string& checkpoint, const config::RunConfig& cfg) {
  if (!checkpoint.empty()) return ckpt::load_student(ckpt::read_file(checkpoint)).teacher;
  return model::make_teacher(config::geometry(cfg), Seeds(cfg.seed()).teacher);
}

Tensor subsample(const Tensor& t, int stride) {
  if (stride <= 1) return t;
  const int h = t.dim(0) / stride, w = t.dim(1) / stride;
  Tensor out({h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out.at(y, x) = t.at(y * stride, x * stride);
  return out;
}

int cmd_train_head(const Common& c, const std::string& kind, const std::string& checkpoint, std::ostream& out) {
  const auto cfg = resolve(c);
  if (kind != "seg" && kind != "depth") throw Error(ErrorCode::InvalidArgument, "--kind must be seg or depth");
  Artifacts art("train-head-" + kind, parent_dir(c.out), cfg);
  if (!checkpoint.empty()) art.input(checkpoint);
  const auto teacher = teacher_from(checkpoint, cfg);
  const auto raw = synth::synth_paired_dataset(Seeds(cfg.seed()).data, static_cast<int>(cfg.integer("data.samples")),
                                               config::scene_spec(cfg));
  const int stride = static_cast<int>(cfg.integer("head.label_stride"));
  std::vector<heads::HeadSample> samples;
  for (const auto& s : raw)
    samples.push_back({model::teacher_forward_image(s.proxy_image, teacher), subsample(kind == "seg" ? s.labels : s.depth, stride)});
  const auto hc = config::head_config(cfg, kind);
  heads::HeadTrainResult r;
  ckpt::Checkpoint ck;
  if (kind == "seg") {
    auto head = heads::make_seg_head(teacher.geometry.d_proj, static_cast<int>(cfg.integer("seg.classes")), hc.seed);
    r = heads::train_seg_head(head, teacher.projector, samples, hc, config::seg_loss(cfg));
    ck = ckpt::save_seg_head(head);
  } else {
    const auto bins = config::depth_bins(cfg);
    auto head = heads::make_depth_head(teacher.geometry.d, bins.count, hc.seed);
    r = heads::train_depth_head(head, bins, samples, hc, config::depth_loss(cfg));
    ck = ckpt::save_depth_head(head, bins);
  }
  ckpt::write_file(c.out, ck);
  art.output(c.out);
  std::string csv = "step,loss\n";
  char buf[64];
  for (std::size_t i = 0; i < r.losses.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i, r.losses[i]);
    csv += buf;
  }
  const auto curve = art.path("train-head-" + kind + ".loss.csv");
  raster::write_text(curve.string(), csv);
  art.output(curve);
  art.finish();
  out << "trained " << kind << " head for " << r.losses.size() << " step(s)";
  if (!r.losses.empty()) out << ", loss " << r.losses.front() << " -> " << r.losses.back();
  out << "\n";
  return kOk;
}

// ------------------------------------------------------------------ infer

int cmd_infer(const Common& c, const std::string& task, const std::string& checkpoint, const std::string& head_path,
              const std::string& events_path, const std::string& window, std::ostream& out) {
  auto cfg = resolve(c);
  if (!window.empty()) cfg.set("window.spec", window);
  if (task != "seg" && task != "depth") throw Error(ErrorCode::InvalidArgument, "--task must be seg or depth");
  Artifacts art("infer", c.out, cfg);
  art.input(checkpoint);
  art.input(head_path);
  art.input(events_path);
  const auto model = ckpt::load_student(ckpt::read_file(checkpoint));
  const auto head = ckpt::load_head(ckpt::read_file(head_path));
  if ((task == "seg") != (head.kind == ckpt::HeadCheckpoint::Kind::Seg))
    throw Error(ErrorCode::InvalidArgument, "head checkpoint kind does not match --task " + task);
  const auto& geom = model.student.config;
  const int tile = cfg.integer("infer.tile") > 0 ? static_cast<int>(cfg.integer("infer.tile")) : geom.input_size();
  std::vector<int> all(static_cast<std::size_t>(geom.tokens()));
  std::iota(all.begin(), all.end(), 0);

  // Raw outputs of one tile-sized input: class logits or bin logits.
  const infer::TilePredictor raw = [&](const Tensor& x) {
    Tensor sized = x;
    if (x.dim(1) != geom.input_size() || x.dim(2) != geom.input_size()) {
      repr::VoxelGrid g;
      g.values = x;
      sized = repr::resize_center_crop(g, geom.input_size()).values;
    }
    const auto f = model::student_forward(model.student, sized, all);
    if (task == "seg") return heads::seg_forward(f, model.teacher.projector, head.seg, x.dim(1), x.dim(2));
    return heads::depth_logits(f, head.depth, x.dim(1), x.dim(2));
  };
  const bool tiling = cfg.get("infer.tiling") == "corner4";
  const bool pad = cfg.get("infer.pad") == "symmetric";

  events::EventStream stream;
  const auto windows = load_windows(events_path, cfg, stream);
  const infer::WindowPredictor predict = [&](const events::EventWindow& w) {
    const Tensor x = encode_window(w, stream, geom.in_bins);
    const int h = x.dim(1), wd = x.dim(2);
    Tensor logits;
    if (pad && h <= tile && wd <= tile) {
      auto [padded, p] = infer::pad_symmetric(x, tile);
      logits = infer::unpad(raw(padded), p);
    } else if (tiling && h >= tile && wd >= tile) {
      logits = infer::tile_inference(x, raw, infer::plan_corner4(h, wd, tile));
    } else {
      logits = raw(x);
    }
    return task == "seg" ? heads::argmax_classes(logits) : heads::depth_from_logits(logits, head.bins);
  };

  infer::HoldState state;
  json records = json::array();
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const auto r = cfg.flag("infer.hold") ? infer::hold_step(state, windows[i], predict)
                                          : infer::HoldOutput{predict(windows[i]), false};
    json rec = {{"window", i}, {"events", windows[i].events.size()}, {"held", r.held}, {"no_output_yet", r.no_output_yet()}};
    if (r.output) {
      char name[64];
      std::snprintf(name, sizeof name, "window_%05zu.%s", i, task == "seg" ? "pgm" : "pfm");
      const auto p = art.path(name);
      if (task == "seg") raster::write_pgm(p.string(), *r.output);
      else raster::write_pfm(p.string(), *r.output);
      art.output(p);
      rec["file"] = name;
    }
    records.push_back(rec);
  }
  art.extra()["task"] = task;
  art.extra()["frames"] = records;
  art.finish();
  out << "inferred " << windows.size() << " window(s) into " << c.out << "\n";
  return kOk;
}

// ------------------------------------------------------------------ eval

int cmd_eval_seg(const Common& c, const std::vector<std::string>& preds, const std::vector<std::string>& gts,
                 std::ostream& out) {
  const auto cfg = resolve(c);
  if (preds.size() != gts.size() || preds.empty())
    throw Error(ErrorCode::InvalidArgument, "--pred and --gt need the same non-zero number of files");
  Artifacts art("eval-seg", c.out, cfg);
  const int classes = static_cast<int>(cfg.integer("seg.classes"));
  metrics::ConfusionMatrix cm(classes);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    art.input(preds[i]);
    art.input(gts[i]);
    const auto one = metrics::ConfusionMatrix::from_maps(raster::read_pgm(preds[i]), raster::read_pgm(gts[i]), classes);
    for (std::size_t k = 0; k < cm.counts.size(); ++k) cm.counts[k] += one.counts[k];
  }
  const auto s = metrics::miou_and_accuracy(cm);
  std::string csv = "class,iou\n";
  char buf[128];
  for (int k = 0; k < classes; ++k) {
    if (s.iou[static_cast<std::size_t>(k)]) std::snprintf(buf, sizeof buf, "%d,%.6f\n", k, *s.iou[static_cast<std::size_t>(k)]);
    else std::snprintf(buf, sizeof buf, "%d,\n", k);
    csv += buf;
  }
  std::snprintf(buf, sizeof buf, "miou,%.6f\naccuracy,%.6f\n", s.miou, s.accuracy);
  csv += buf;
  raster::write_text(art.path("eval-seg.csv").string(), csv);
  art.output(art.path("eval-seg.csv"));
  art.extra()["miou"] = s.miou;
  art.extra()["accuracy"] = s.accuracy;
  art.finish();
  std::snprintf(buf, sizeof buf, "mIoU %.4f  pixel accuracy %.4f  (%zu map(s))\n", s.miou, s.accuracy, preds.size());
  out << buf;
  return kOk;
}

int cmd_eval_depth(const Common& c, const std::vector<std::string>& preds, const std::vector<std::string>& gts,
                   std::ostream& out) {
  const auto cfg = resolve(c);
  if (preds.size() != gts.size() || preds.empty())
    throw Error(ErrorCode::InvalidArgument, "--pred and --gt need the same non-zero number of files");
  Artifacts art("eval-depth", c.out, cfg);
  const double cutoff = cfg.number("metrics.depth_cutoff");
  std::vector<double> p_all, g_all;
  std::string csv = "file,abs_error_m\n";
  char buf[512];
  for (std::size_t i = 0; i < preds.size(); ++i) {
    art.input(preds[i]);
    art.input(gts[i]);
    const Tensor p = raster::read_pfm(preds[i]), g = raster::read_pfm(gts[i]);
    std::snprintf(buf, sizeof buf, "%s,%.6f\n", fs::path(preds[i]).filename().c_str(),
                  metrics::abs_depth_error_at_cutoff(p, g, cutoff));
    csv += buf;
    p_all.insert(p_all.end(), p.data.begin(), p.data.end());
    g_all.insert(g_all.end(), g.data.begin(), g.data.end());
  }
  const int n = static_cast<int>(p_all.size());
  const double pooled = metrics::abs_depth_error_at_cutoff(Tensor({n}, p_all), Tensor({n}, g_all), cutoff);
  std::snprintf(buf, sizeof buf, "all,%.6f\n", pooled);
  csv += buf;
  raster::write_text(art.path("eval-depth.csv").string(), csv);
  art.output(art.path("eval-depth.csv"));
  art.extra()["abs_error_m"] = pooled;
  art.extra()["cutoff_m"] = cutoff;
  art.finish();
  std::snprintf(buf, sizeof buf, "abs depth error @%.1f m: %.4f m\n", cutoff, pooled);
  out << buf;
  return kOk;
}

Eigen::Matrix3d parse_rotation(const std::string& line) {
  std::stringstream ss(line);
  std::string item;
  std::vector<double> v;
  while (std::getline(ss, item, ',')) v.push_back(std::stod(item));
  if (v.size() != 9) throw Error(ErrorCode::InvalidArgument, "rotation lines need 9 comma-separated values");
  Eigen::Matrix3d r;
  r << v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8];
  return r;
}

int cmd_eval_match(const Common& c, const std::vector<std::string>& corr_files, const std::string& gt_file,
                   std::ostream& out) {
  const auto cfg = resolve(c);
  Artifacts art("eval-match", c.out, cfg);
  const auto k = config::intrinsics(cfg);
  const auto opts = config::ransac_options(cfg);
  std::vector<match::Correspondences> pairs;
  std::vector<Eigen::Matrix3d> gt;
  if (corr_files.empty()) {
    // Synthetic pose fixture.
    synth::TwoViewSpec spec;
    spec.camera = k;
    spec.noise_px = cfg.number("match.noise_px");
    const int n = static_cast<int>(cfg.integer("match.pairs"));
    Rng rng(derive_seed(cfg.seed(), {0xF1Bu}));
    std::uniform_real_distribution<double> angle(0.0, cfg.number("match.max_rotation_deg"));
    for (int i = 0; i < n; ++i) {
      spec.rotation_deg = angle(rng);
      auto scene = synth::synth_two_view(derive_seed(cfg.seed(), {0x7F0u, static_cast<std::uint64_t>(i)}), spec);
      pairs.push_back(std::move(scene.corrs));
      gt.push_back(scene.rotation);
    }
  } else {
    if (gt_file.empty()) throw Error(ErrorCode::InvalidArgument, "--gt-rotations is required with --corrs");
    art.input(gt_file);
    std::stringstream lines(raster::read_text(gt_file));
    std::string line;
    while (std::getline(lines, line))
      if (!line.empty() && line[0] != '#') gt.push_back(parse_rotation(line));
    for (const auto& f : corr_files) {
      art.input(f);
      pairs.push_back(match::parse_correspondences_csv(raster::read_text(f)));
    }
    if (gt.size() != pairs.size()) throw Error(ErrorCode::InvalidArgument, "one ground-truth rotation per pair is required");
  }

  std::vector<double> errors, baselines;
  std::vector<int> inliers;
  int max_kp = 0;
  std::string csv = "pair,baseline_deg,error_deg,inliers,correspondences,inlier_ratio\n";
  char buf[256];
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const double baseline = match::rotation_angular_error(gt[i], Eigen::Matrix3d::Identity());
    double err = std::numeric_limits<double>::infinity();
    int inl = 0;
    double ratio = 0.0;
    try {
      auto o = opts;
      o.seed = derive_seed(opts.seed, {static_cast<std::uint64_t>(i)});
      const auto pose = match::estimate_essential_ransac(pairs[i], k, k, o);
      err = match::rotation_angular_error(pose.rotation, gt[i]);
      inl = pose.inlier_count();
      ratio = metrics::inlier_ratio(pose);
    } catch (const Error&) {
      // Failed estimates count as infinite error.
    }
    errors.push_back(err);
    baselines.push_back(baseline);
    inliers.push_back(inl);
    max_kp = std::max(max_kp, static_cast<int>(pairs[i].size()));
    std::snprintf(buf, sizeof buf, "%zu,%.6f,%.9g,%d,%zu,%.6f\n", i, baseline, err, inl, pairs[i].size(), ratio);
    csv += buf;
  }
  if (errors.empty()) throw Error(ErrorCode::EmptyInput, "no pairs to evaluate");
  const auto th = config::auc_thresholds(cfg);
  const auto auc = metrics::pose_auc(errors, th);
  const auto bins = metrics::angular_bin_report(baselines, errors);
  const auto density = max_kp > 0 ? metrics::relative_matching_density(inliers, max_kp) : std::vector<double>{};
  raster::write_text(art.path("eval-match.pairs.csv").string(), csv);
  art.output(art.path("eval-match.pairs.csv"));
  std::string summary = "metric,value\n";
  json auc_json = json::object();
  for (std::size_t i = 0; i < th.size(); ++i) {
    std::snprintf(buf, sizeof buf, "auc@%g,%.6f\n", th[i], auc[i]);
    summary += buf;
    auc_json[std::to_string(static_cast<int>(th[i]))] = auc[i];
  }
  const double med = metrics::median_error(errors);
  std::snprintf(buf, sizeof buf, "median_error_deg,%.6f\n", med);
  summary += buf;
  for (std::size_t b = 0; b < 4; ++b) {
    std::snprintf(buf, sizeof buf, "auc@10_bin_%g,%s\n", metrics::AngularBinReport::kLower[b],
                  bins.auc10[b] ? std::to_string(*bins.auc10[b]).c_str() : "");
    summary += buf;
  }
  if (!density.empty()) {
    std::snprintf(buf, sizeof buf, "mean_matching_density,%.6f\n",
                  std::accumulate(density.begin(), density.end(), 0.0) / static_cast<double>(density.size()));
    summary += buf;
  }
  raster::write_text(art.path("eval-match.csv").string(), summary);
  art.output(art.path("eval-match.csv"));
  art.extra()["auc"] = auc_json;
  art.extra()["median_error_deg"] = med;
  art.finish();
  out << summary;
  return kOk;
}

// ------------------------------------------------------------------ bench

int cmd_bench(const Common& c, const std::string& checkpoint, std::ostream& out) {
  const auto cfg = resolve(c);
  Artifacts art("bench", c.out, cfg);
  model::TeacherParams teacher;
  model::Student student;
  if (!checkpoint.empty()) {
    art.input(checkpoint);
    auto m = ckpt::load_student(ckpt::read_file(checkpoint));
    teacher = std::move(m.teacher);
    student = std::move(m.student);
  } else {
    const Seeds s(cfg.seed());
    teacher = model::make_teacher(config::geometry(cfg), s.teacher);
    student = model::make_student(teacher, s.student);
  }
  const auto& g = student.config;
  const int side = g.input_size();
  std::vector<int> all(static_cast<std::size_t>(g.tokens()));
  std::iota(all.begin(), all.end(), 0);
  Rng rng(derive_seed(cfg.seed(), {0xBE4Cu}));
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor a({g.in_bins, side, side}), b({g.in_bins, side, side});
  for (auto& v : a.data) v = n(rng);
  for (auto& v : b.data) v = n(rng);
  model::LatentFeatures fa, fb;
  const auto k = config::intrinsics(cfg);
  const auto report = metrics::bench_harness(
      [&](int) {
        fa = model::student_forward(student, a, all);
        fb = model::student_forward(student, b, all);
      },
      [&](int) {
        const auto corrs = match::mutual_nn_match(fa.patches, fb.patches, g.grid, g.patch, cfg.number("match.min_sim"));
        if (corrs.size() >= 8) {
          try {
            match::estimate_essential_ransac(corrs, k, k, config::ransac_options(cfg));
          } catch (const Error&) {
            // Random inputs may be degenerate; timing still counts.
          }
        }
      },
      static_cast<int>(cfg.integer("bench.warmup")), static_cast<int>(cfg.integer("bench.iters")));
  raster::write_text(art.path("bench.csv").string(), report.csv());
  raster::write_text(art.path("bench.txt").string(), report.table());
  art.extra()["warmup"] = report.warmup;
  art.extra()["samples"] = report.total_ms.size();
  art.extra()["mean_ms"] = report.total.mean;
  art.extra()["median_ms"] = report.total.median;
  art.extra()["std_ms"] = report.total.std;
  art.extra()["fps"] = report.fps;
  art.extra()["extract_mean_ms"] = report.extract.mean;
  art.extra()["match_mean_ms"] = report.match.mean;
  art.finish();
  out << report.table();
  return kOk;
}

// ------------------------------------------------------------------ viz

int cmd_viz(const Common& c, const std::string& checkpoint, const std::string& events_path, const std::string& window,
            std::ostream& out) {
  auto cfg = resolve(c);
  if (!window.empty()) cfg.set("window.spec", window);
  Artifacts art("viz", c.out, cfg);
  art.input(checkpoint);
  art.input(events_path);
  const auto m = ckpt::load_student(ckpt::read_file(checkpoint));
  const auto& g = m.student.config;
  std::vector<int> all(static_cast<std::size_t>(g.tokens()));
  std::iota(all.begin(), all.end(), 0);
  events::EventStream stream;
  const auto windows = load_windows(events_path, cfg, stream);
  for (std::size_t i = 0; i < windows.size(); ++i) {
    repr::VoxelGrid grid;
    grid.values = encode_window(windows[i], stream, g.in_bins);
    grid = repr::resize_center_crop(grid, g.input_size());
    const auto f = model::student_forward(m.student, grid.values, all);
    char name[64];
    std::snprintf(name, sizeof name, "window_%05zu_pca.ppm", i);
    raster::write_ppm(art.path(name).string(), infer::pca_feature_image(f.patches));
    art.output(art.path(name));
  }
  art.finish();
  out << "wrote " << windows.size() << " PCA image(s) to " << c.out << "\n";
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"realm: event-to-image feature distillation toolkit", "realm"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  Common common;
  std::string events_path, window, task, checkpoint, head, kind = "seg", gt_rot;
  std::vector<std::string> preds, gts, corrs;
  std::vector<int> blank;
  int windows = 3;
  bool still = false;

  auto* encode = app.add_subcommand("encode", "events -> voxel grids + occupancy summary");
  add_common(encode, common);
  encode->add_option("--events", events_path, "REVT or CSV event file")->required();
  encode->add_option("--window", window, "count:N or time:MS");

  auto* synth = app.add_subcommand("synth", "write a synthetic event stream");
  add_common(synth, common);
  synth->add_option("--windows", windows, "number of 33 ms windows");
  synth->add_flag("--static", still, "shapes do not move");
  synth->add_option("--blank", blank, "window indices left without events")->delimiter(',');

  auto* distill = app.add_subcommand("distill", "train the student against the frozen teacher");
  add_common(distill, common);

  auto* train_head = app.add_subcommand("train-head", "train a depth or segmentation head on teacher features");
  add_common(train_head, common);
  train_head->add_option("--kind", kind, "seg or depth");
  train_head->add_option("--checkpoint", checkpoint, "student checkpoint supplying the teacher");

  auto* infer = app.add_subcommand("infer", "dense prediction from events");
  add_common(infer, common);
  infer->add_option("--task", task, "depth or seg")->required();
  infer->add_option("--checkpoint", checkpoint, "student checkpoint")->required();
  infer->add_option("--head", head, "head checkpoint")->required();
  infer->add_option("--events", events_path, "event file")->required();
  infer->add_option("--window", window, "count:N or time:MS");
  std::string tiling, pad, hold;
  infer->add_option("--tiling", tiling, "corner4 or none");
  infer->add_option("--pad", pad, "symmetric or none");
  infer->add_option("--hold", hold, "on or off");

  auto* eval_seg = app.add_subcommand("eval-seg", "mIoU and pixel accuracy");
  add_common(eval_seg, common);
  eval_seg->add_option("--pred", preds, "predicted label maps (PGM)")->required();
  eval_seg->add_option("--gt", gts, "ground-truth label maps (PGM)")->required();

  auto* eval_depth = app.add_subcommand("eval-depth", "absolute depth error at a cutoff");
  add_common(eval_depth, common);
  eval_depth->add_option("--pred", preds, "predicted depth (PFM)")->required();
  eval_depth->add_option("--gt", gts, "ground-truth depth (PFM)")->required();

  auto* eval_match = app.add_subcommand("eval-match", "relative pose AUC from correspondences");
  add_common(eval_match, common);
  eval_match->add_option("--corrs", corrs, "correspondence CSV files; omit for the synthetic fixture");
  eval_match->add_option("--gt-rotations", gt_rot, "one row-major rotation per line");

  auto* bench = app.add_subcommand("bench", "latency of feature extraction and matching");
  add_common(bench, common);
  bench->add_option("--checkpoint", checkpoint, "student checkpoint (default: seeded initialization)");

  auto* viz = app.add_subcommand("viz", "PCA images of student features");
  add_common(viz, common);
  viz->add_option("--checkpoint", checkpoint, "student checkpoint")->required();
  viz->add_option("--events", events_path, "event file")->required();
  viz->add_option("--window", window, "count:N or time:MS");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << "\n";
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kValidation;
  }

  try {
    if (encode->parsed()) return cmd_encode(common, events_path, window, out, err);
    if (synth->parsed()) return cmd_synth(common, windows, still, blank, out);
    if (distill->parsed()) return cmd_distill(common, out);
    if (train_head->parsed()) return cmd_train_head(common, kind, checkpoint, out);
    if (infer->parsed()) {
      if (!tiling.empty()) common.overrides.push_back("infer.tiling=" + tiling);
      if (!pad.empty()) common.overrides.push_back("infer.pad=" + pad);
      if (!hold.empty()) common.overrides.push_back("infer.hold=" + hold);
      return cmd_infer(common, task, checkpoint, head, events_path, window, out);
    }
    if (eval_seg->parsed()) return cmd_eval_seg(common, preds, gts, out);
    if (eval_depth->parsed()) return cmd_eval_depth(common, preds, gts, out);
    if (eval_match->parsed()) return cmd_eval_match(common, corrs, gt_rot, out);
    if (bench->parsed()) return cmd_bench(common, checkpoint, out);
    if (viz->parsed()) return cmd_viz(common, checkpoint, events_path, window, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kRuntime;
}

}  // namespace realm::cli
