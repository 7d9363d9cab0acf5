#include "realm/config.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <sstream>

#include "realm/error.hpp"
#include "realm/raster.hpp"
#include "realm/rng.hpp"

namespace realm::config {

namespace {

enum class Kind { Int, Real, Text, Flag, RealList };

struct KeySpec {
  const char* key;
  const char* fallback;
  Kind kind;
  std::vector<std::string> choices = {};
};

const std::vector<KeySpec>& registry() {
  static const std::vector<KeySpec> keys = {
      {"seed", "0", Kind::Int},
      {"geometry.preset", "toy", Kind::Text, {"toy", "paper"}},
      {"window.spec", "count:150000", Kind::Text},
      {"window.stride", "1", Kind::Int},
      {"encode.bins", "5", Kind::Int},
      {"encode.size", "0", Kind::Int},
      {"mask.kind", "steps", Kind::Text, {"steps", "linear"}},
      {"mask.steps", "10:2,15:4,20:6", Kind::Text},
      {"mask.alpha", "0", Kind::Real},
      {"mask.sigma_max", "6", Kind::Int},
      {"dropout.rho", "0.3", Kind::Real},
      {"dropout.start_epoch", "8", Kind::Int},
      {"loss.mse", "0.1", Kind::Real},
      {"loss.cos", "0.3", Kind::Real},
      {"loss.l1", "0.6", Kind::Real},
      {"train.epochs", "30", Kind::Int},
      {"train.micro_batch", "64", Kind::Int},
      {"train.accumulation", "8", Kind::Int},
      {"train.steps_per_epoch", "0", Kind::Int},
      {"train.max_steps", "-1", Kind::Int},
      {"train.lr", "0.001", Kind::Real},
      {"train.lr_schedule", "constant", Kind::Text, {"constant", "cosine"}},
      {"train.weight_decay", "0.01", Kind::Real},
      {"train.grad_clip", "1.0", Kind::Real},
      {"train.beta1", "0.9", Kind::Real},
      {"train.beta2", "0.999", Kind::Real},
      {"train.eps", "1e-8", Kind::Real},
      {"data.samples", "32", Kind::Int},
      {"data.subframes", "10", Kind::Int},
      {"data.contrast_threshold", "0.15", Kind::Real},
      {"data.min_speed", "3", Kind::Real},
      {"data.max_speed", "8", Kind::Real},
      {"data.max_shapes", "3", Kind::Int},
      {"head.seg.steps", "200", Kind::Int},
      {"head.seg.batch", "128", Kind::Int},
      {"head.seg.lr", "0.0001", Kind::Real},
      {"head.seg.weight_decay", "0.01", Kind::Real},
      {"head.depth.steps", "200", Kind::Int},
      {"head.depth.batch", "128", Kind::Int},
      {"head.depth.lr", "0.00005", Kind::Real},
      {"head.depth.weight_decay", "0.01", Kind::Real},
      {"head.grad_clip", "1.0", Kind::Real},
      {"head.label_stride", "1", Kind::Int},
      {"seg.classes", "11", Kind::Int},
      {"seg.gamma", "2", Kind::Real},
      {"seg.dice_smooth", "1", Kind::Real},
      {"seg.lambda_dice", "1", Kind::Real},
      {"seg.lambda_focal", "1", Kind::Real},
      {"seg.class_weights", "1,1,5,5,5,1,3,2,2.5,10,15", Kind::RealList},
      {"depth.bins", "256", Kind::Int},
      {"depth.d_min", "1", Kind::Real},
      {"depth.d_max", "81", Kind::Real},
      {"depth.lambda_si", "2", Kind::Real},
      {"depth.lambda_msg", "0.01", Kind::Real},
      {"depth.si_lambda", "0.5", Kind::Real},
      {"depth.msg_scales", "4", Kind::Int},
      {"depth.clamp_min", "1.95", Kind::Real},
      {"depth.clamp_max", "82", Kind::Real},
      {"infer.tile", "0", Kind::Int},
      {"infer.tiling", "corner4", Kind::Text, {"corner4", "none"}},
      {"infer.pad", "symmetric", Kind::Text, {"symmetric", "none"}},
      {"infer.hold", "on", Kind::Flag},
      {"match.iterations", "2000", Kind::Int},
      {"match.threshold_px", "1", Kind::Real},
      {"match.confidence", "0.999", Kind::Real},
      {"match.min_sim", "0.5", Kind::Real},
      {"match.fx", "500", Kind::Real},
      {"match.fy", "500", Kind::Real},
      {"match.cx", "320", Kind::Real},
      {"match.cy", "240", Kind::Real},
      {"match.noise_px", "0", Kind::Real},
      {"match.pairs", "50", Kind::Int},
      {"match.max_rotation_deg", "60", Kind::Real},
      {"metrics.auc_thresholds", "5,10,20", Kind::RealList},
      {"metrics.depth_cutoff", "10", Kind::Real},
      {"bench.warmup", "5", Kind::Int},
      {"bench.iters", "50", Kind::Int},
  };
  return keys;
}

const KeySpec* find_spec(const std::string& key) {
  for (const auto& k : registry())
    if (key == k.key) return &k;
  return nullptr;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool parse_real(const std::string& s, double& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  errno = 0;
  out = std::strtod(s.c_str(), &end);
  return errno == 0 && end == s.c_str() + s.size() && std::isfinite(out);
}

bool parse_int(const std::string& s, std::int64_t& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  errno = 0;
  out = std::strtoll(s.c_str(), &end, 10);
  return errno == 0 && end == s.c_str() + s.size();
}

std::vector<double> parse_list(const std::string& key, const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    double v;
    if (!parse_real(trim(item), v)) throw Error(ErrorCode::ConfigError, key + ": bad list element '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw Error(ErrorCode::ConfigError, key + ": empty list");
  return out;
}

}  // namespace

RunConfig::RunConfig() {
  for (const auto& k : registry()) values_[k.key] = k.fallback;
}

const std::vector<std::string>& RunConfig::known_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> out;
    for (const auto& k : registry()) out.emplace_back(k.key);
    std::sort(out.begin(), out.end());
    return out;
  }();
  return keys;
}

void RunConfig::set(const std::string& key, const std::string& raw) {
  const KeySpec* spec = find_spec(key);
  if (!spec) throw Error(ErrorCode::ConfigError, "unknown key '" + key + "'");
  const std::string value = trim(raw);
  switch (spec->kind) {
    case Kind::Int: {
      std::int64_t v;
      if (!parse_int(value, v)) throw Error(ErrorCode::ConfigError, key + ": expected an integer, got '" + value + "'");
      break;
    }
    case Kind::Real: {
      double v;
      if (!parse_real(value, v)) throw Error(ErrorCode::ConfigError, key + ": expected a number, got '" + value + "'");
      break;
    }
    case Kind::Flag:
      if (value != "on" && value != "off") throw Error(ErrorCode::ConfigError, key + ": expected on|off, got '" + value + "'");
      break;
    case Kind::RealList:
      parse_list(key, value);
      break;
    case Kind::Text:
      if (!spec->choices.empty() && std::find(spec->choices.begin(), spec->choices.end(), value) == spec->choices.end())
        throw Error(ErrorCode::ConfigError, key + ": '" + value + "' is not one of the allowed values");
      break;
  }
  try {
    if (key == "window.spec") events::WindowSpec::parse(value);
    if (key == "mask.steps") masking::MaskSchedule::parse_steps(value);
  } catch (const Error& e) {
    throw Error(ErrorCode::ConfigError, key + ": " + e.what());
  }
  values_[key] = value;
}

RunConfig RunConfig::parse(const std::string& text, const std::string& origin) {
  RunConfig c;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(lineno);
    if (line.front() == '[') {
      if (line.back() != ']') throw Error(ErrorCode::ConfigError, where + ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::ConfigError, where + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    if (!section.empty()) key = section + "." + key;
    try {
      c.set(key, line.substr(eq + 1));
    } catch (const Error& e) {
      throw Error(ErrorCode::ConfigError, where + ": " + e.what());
    }
  }
  return c;
}

RunConfig RunConfig::load(const std::string& path) { return parse(raster::read_text(path), path); }

void RunConfig::apply_environment() {
  if (const char* s = std::getenv("REALM_SEED"); s && *s) {
    try {
      set("seed", s);
    } catch (const Error& e) {
      throw Error(ErrorCode::ConfigError, std::string("REALM_SEED: ") + e.what());
    }
  }
}

const std::string& RunConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw Error(ErrorCode::ConfigError, "unknown key '" + key + "'");
  return it->second;
}

double RunConfig::number(const std::string& key) const {
  double v = 0.0;
  if (!parse_real(get(key), v)) throw Error(ErrorCode::ConfigError, key + ": not a number");
  return v;
}

std::int64_t RunConfig::integer(const std::string& key) const {
  std::int64_t v = 0;
  if (!parse_int(get(key), v)) throw Error(ErrorCode::ConfigError, key + ": not an integer");
  return v;
}

bool RunConfig::flag(const std::string& key) const { return get(key) == "on"; }

std::string RunConfig::resolved() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

model::StudentConfig geometry(const RunConfig& c) {
  auto g = c.get("geometry.preset") == "paper" ? model::StudentConfig::paper() : model::StudentConfig::toy();
  g.in_bins = static_cast<int>(c.integer("encode.bins"));
  g.validate();
  return g;
}

events::WindowSpec window_spec(const RunConfig& c) {
  const auto stride = c.integer("window.stride");
  if (stride < 1) throw Error(ErrorCode::ConfigError, "window.stride: must be >= 1");
  return events::WindowSpec::parse(c.get("window.spec"), static_cast<std::uint32_t>(stride));
}

distill::TrainConfig train_config(const RunConfig& c) {
  distill::TrainConfig t;
  t.epochs = static_cast<int>(c.integer("train.epochs"));
  t.micro_batch = static_cast<int>(c.integer("train.micro_batch"));
  t.accumulation = static_cast<int>(c.integer("train.accumulation"));
  t.steps_per_epoch = static_cast<int>(c.integer("train.steps_per_epoch"));
  t.lr = c.number("train.lr");
  t.lr_schedule = c.get("train.lr_schedule") == "cosine" ? optim::LrSchedule::Cosine : optim::LrSchedule::Constant;
  t.grad_clip_norm = c.number("train.grad_clip");
  t.adam = {c.number("train.beta1"), c.number("train.beta2"), c.number("train.eps"), c.number("train.weight_decay")};
  t.weights = {c.number("loss.mse"), c.number("loss.cos"), c.number("loss.l1")};
  if (c.get("mask.kind") == "linear") {
    t.mask_schedule.kind = masking::MaskSchedule::Kind::Linear;
    t.mask_schedule.alpha = c.number("mask.alpha");
    t.mask_schedule.sigma_max = static_cast<int>(c.integer("mask.sigma_max"));
  } else {
    t.mask_schedule = masking::MaskSchedule::parse_steps(c.get("mask.steps"));
  }
  t.dropout.rho = c.number("dropout.rho");
  t.dropout.start_epoch = static_cast<int>(c.integer("dropout.start_epoch"));
  t.dropout.seed = derive_seed(c.seed(), {0xD809u});
  t.seed = c.seed();
  try {
    t.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::ConfigError, std::string("train: ") + e.what());
  }
  return t;
}

synth::SceneSpec scene_spec(const RunConfig& c) {
  const auto g = geometry(c);
  synth::SceneSpec s;
  s.size = g.input_size();
  s.patch = g.patch;
  s.subframes = static_cast<int>(c.integer("data.subframes"));
  s.contrast_threshold = c.number("data.contrast_threshold");
  s.min_speed = c.number("data.min_speed");
  s.max_speed = c.number("data.max_speed");
  s.max_shapes = static_cast<int>(c.integer("data.max_shapes"));
  s.num_classes = static_cast<int>(c.integer("seg.classes"));
  if (s.subframes < 1 || !(s.contrast_threshold > 0.0) || s.max_shapes < s.min_shapes || s.num_classes < 2)
    throw Error(ErrorCode::ConfigError, "data: invalid synthetic scene parameters");
  return s;
}

heads::HeadTrainConfig head_config(const RunConfig& c, const std::string& kind) {
  heads::HeadTrainConfig h;
  const std::string p = "head." + kind + ".";
  h.steps = static_cast<int>(c.integer(p + "steps"));
  h.batch = static_cast<int>(c.integer(p + "batch"));
  h.lr = c.number(p + "lr");
  h.weight_decay = c.number(p + "weight_decay");
  h.grad_clip_norm = c.number("head.grad_clip");
  h.seed = derive_seed(c.seed(), {0x4EAD0u, kind == "seg" ? 1u : 2u});
  try {
    h.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::ConfigError, p + e.what());
  }
  return h;
}

heads::SegLossConfig seg_loss(const RunConfig& c) {
  heads::SegLossConfig s;
  s.gamma = c.number("seg.gamma");
  s.dice_smooth = c.number("seg.dice_smooth");
  s.lambda_dice = c.number("seg.lambda_dice");
  s.lambda_focal = c.number("seg.lambda_focal");
  s.class_weights = parse_list("seg.class_weights", c.get("seg.class_weights"));
  if (static_cast<std::int64_t>(s.class_weights.size()) != c.integer("seg.classes"))
    throw Error(ErrorCode::ConfigError, "seg.class_weights: length must equal seg.classes");
  return s;
}

heads::DepthLossWeights depth_loss(const RunConfig& c) {
  heads::DepthLossWeights w;
  w.si = c.number("depth.lambda_si");
  w.msg = c.number("depth.lambda_msg");
  w.si_lambda = c.number("depth.si_lambda");
  w.msg_scales = static_cast<int>(c.integer("depth.msg_scales"));
  w.clamp_min = c.number("depth.clamp_min");
  w.clamp_max = c.number("depth.clamp_max");
  if (!(w.clamp_min > 0.0 && w.clamp_max > w.clamp_min)) throw Error(ErrorCode::ConfigError, "depth.clamp_*: invalid range");
  return w;
}

heads::DepthBins depth_bins(const RunConfig& c) {
  heads::DepthBins b{static_cast<int>(c.integer("depth.bins")), c.number("depth.d_min"), c.number("depth.d_max")};
  try {
    b.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::ConfigError, std::string("depth: ") + e.what());
  }
  return b;
}

match::CameraIntrinsics intrinsics(const RunConfig& c) {
  match::CameraIntrinsics k{c.number("match.fx"), c.number("match.fy"), c.number("match.cx"), c.number("match.cy")};
  if (!(k.fx > 0.0 && k.fy > 0.0)) throw Error(ErrorCode::ConfigError, "match.fx/fy: must be positive");
  return k;
}

match::RansacOptions ransac_options(const RunConfig& c) {
  match::RansacOptions o;
  o.iterations = static_cast<int>(c.integer("match.iterations"));
  o.threshold_px = c.number("match.threshold_px");
  o.confidence = c.number("match.confidence");
  o.seed = derive_seed(c.seed(), {0x4A4Eu});
  if (o.iterations < 1 || !(o.threshold_px > 0.0)) throw Error(ErrorCode::ConfigError, "match: invalid RANSAC options");
  return o;
}

std::vector<double> auc_thresholds(const RunConfig& c) {
  return parse_list("metrics.auc_thresholds", c.get("metrics.auc_thresholds"));
}

}  // namespace realm::config
