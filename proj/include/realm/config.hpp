#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "realm/distillation.hpp"
#include "realm/event_io.hpp"
#include "realm/heads.hpp"
#include "realm/matching.hpp"
#include "realm/model.hpp"
#include "realm/synthetic.hpp"

namespace realm::config {

/// Flat dotted-key configuration. Text form is `key = value` lines; a
/// `[section]` line prefixes the following keys with `section.`; `#` starts a
/// comment. Every key has a default; unknown keys and malformed values are
/// rejected with the offending key path.
class RunConfig {
 public:
  RunConfig();

  static RunConfig parse(const std::string& text, const std::string& origin = "<config>");
  static RunConfig load(const std::string& path);

  /// Validated assignment of one key.
  void set(const std::string& key, const std::string& value);
  /// Applies REALM_SEED when present in the environment.
  void apply_environment();

  const std::string& get(const std::string& key) const;
  double number(const std::string& key) const;
  std::int64_t integer(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::uint64_t seed() const { return static_cast<std::uint64_t>(integer("seed")); }

  /// Every key, sorted, `key = value`.
  std::string resolved() const;
  const std::map<std::string, std::string>& values() const { return values_; }

  static const std::vector<std::string>& known_keys();

 private:
  std::map<std::string, std::string> values_;
};

model::StudentConfig geometry(const RunConfig& c);
events::WindowSpec window_spec(const RunConfig& c);
distill::TrainConfig train_config(const RunConfig& c);
synth::SceneSpec scene_spec(const RunConfig& c);
heads::HeadTrainConfig head_config(const RunConfig& c, const std::string& kind);
heads::SegLossConfig seg_loss(const RunConfig& c);
heads::DepthLossWeights depth_loss(const RunConfig& c);
heads::DepthBins depth_bins(const RunConfig& c);
match::CameraIntrinsics intrinsics(const RunConfig& c);
match::RansacOptions ransac_options(const RunConfig& c);
std::vector<double> auc_thresholds(const RunConfig& c);

}  // namespace realm::config
