#include "realm/masking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "realm/error.hpp"
#include "realm/rng.hpp"

namespace realm::masking {

std::size_t PatchMask::active() const {
  return static_cast<std::size_t>(std::count(values.begin(), values.end(), std::uint8_t{1}));
}

bool PatchMask::subset_of(const PatchMask& other) const {
  if (rows != other.rows || cols != other.cols) return false;
  for (std::size_t i = 0; i < values.size(); ++i)
    if (values[i] && !other.values[i]) return false;
  return true;
}

namespace {

std::vector<std::pair<std::string, std::string>> split_pairs(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos)
      throw Error(ErrorCode::ConfigError, "expected key:value in '" + item + "'");
    auto trim = [](std::string s) {
      s.erase(0, s.find_first_not_of(" \t"));
      s.erase(s.find_last_not_of(" \t") + 1);
      return s;
    };
    out.emplace_back(trim(item.substr(0, colon)), trim(item.substr(colon + 1)));
  }
  return out;
}

}  // namespace

MaskSchedule MaskSchedule::parse_steps(const std::string& text) {
  MaskSchedule s;
  s.kind = Kind::Steps;
  s.steps.clear();
  try {
    for (const auto& [k, v] : split_pairs(text)) s.steps[std::stoi(k)] = std::stoi(v);
  } catch (const std::logic_error&) {
    throw Error(ErrorCode::ConfigError, "bad mask schedule '" + text + "'");
  }
  s.validate();
  return s;
}

MaskSchedule MaskSchedule::parse_linear(const std::string& text) {
  MaskSchedule s;
  s.kind = Kind::Linear;
  s.steps.clear();
  bool has_alpha = false, has_max = false;
  try {
    for (const auto& [k, v] : split_pairs(text)) {
      if (k == "alpha") {
        s.alpha = std::stod(v);
        has_alpha = true;
      } else if (k == "sigma_max") {
        s.sigma_max = std::stoi(v);
        has_max = true;
      } else {
        throw Error(ErrorCode::ConfigError, "unknown linear schedule key '" + k + "'");
      }
    }
  } catch (const std::logic_error&) {
    throw Error(ErrorCode::ConfigError, "bad linear schedule '" + text + "'");
  }
  if (!has_alpha || !has_max)
    throw Error(ErrorCode::ConfigError, "linear schedule needs alpha and sigma_max");
  s.validate();
  return s;
}

std::string MaskSchedule::to_string() const {
  std::ostringstream os;
  if (kind == Kind::Linear) {
    os << "alpha:" << alpha << ",sigma_max:" << sigma_max;
    return os.str();
  }
  bool first = true;
  for (const auto& [e, r] : steps) {
    os << (first ? "" : ",") << e << ':' << r;
    first = false;
  }
  return os.str();
}

void MaskSchedule::validate() const {
  if (kind == Kind::Linear) {
    if (alpha < 0.0 || sigma_max < 0)
      throw Error(ErrorCode::ConfigError, "linear schedule needs alpha >= 0 and sigma_max >= 0");
    return;
  }
  int prev = 0;
  for (const auto& [epoch, radius] : steps) {
    if (radius < 0) throw Error(ErrorCode::ConfigError, "negative dilation radius at epoch " + std::to_string(epoch));
    if (radius < prev)
      throw Error(ErrorCode::ConfigError, "dilation radii must be non-decreasing (epoch " + std::to_string(epoch) + ")");
    prev = radius;
  }
}

int MaskSchedule::radius_at(int epoch, std::int64_t global_step) const {
  if (kind == Kind::Linear) {
    const double r = std::floor(alpha * static_cast<double>(global_step));
    return static_cast<int>(std::min<double>(sigma_max, std::max(0.0, r)));
  }
  int r = 0;
  for (const auto& [e, radius] : steps) {
    if (e > epoch) break;
    r = radius;
  }
  return r;
}

PatchMask patch_activity_mask(const repr::OccupancyGrid& occ, int patch) {
  if (patch < 1) throw Error(ErrorCode::InvalidArgument, "patch size must be >= 1");
  const int rows = (occ.height + patch - 1) / patch;
  const int cols = (occ.width + patch - 1) / patch;
  PatchMask m(rows, cols);
  for (int y = 0; y < occ.height; ++y)
    for (int x = 0; x < occ.width; ++x)
      if (occ.at(y, x)) m.set(y / patch, x / patch);
  return m;
}

PatchMask dilate(const PatchMask& mask, int radius) {
  if (radius < 0) throw Error(ErrorCode::InvalidArgument, "radius must be >= 0");
  PatchMask cur = mask;
  for (int it = 0; it < radius; ++it) {
    PatchMask next(cur.rows, cur.cols);
    for (int r = 0; r < cur.rows; ++r)
      for (int c = 0; c < cur.cols; ++c) {
        std::uint8_t v = 0;
        for (int dr = -1; dr <= 1 && !v; ++dr)
          for (int dc = -1; dc <= 1 && !v; ++dc) {
            const int rr = r + dr, cc = c + dc;
            if (rr >= 0 && rr < cur.rows && cc >= 0 && cc < cur.cols) v = cur.at(rr, cc);
          }
        next.set(r, c, v);
      }
    cur = std::move(next);
  }
  return cur;
}

PatchMask mask_at_epoch(const PatchMask& base, int epoch, const MaskSchedule& schedule,
                        std::int64_t global_step) {
  return dilate(base, schedule.radius_at(epoch, global_step));
}

std::vector<int> sample_token_dropout(int num_tokens, const DropoutSpec& spec, int epoch,
                                      std::uint64_t draw_index) {
  if (num_tokens < 0) throw Error(ErrorCode::InvalidArgument, "token count must be >= 0");
  if (!(spec.rho >= 0.0 && spec.rho < 1.0))
    throw Error(ErrorCode::InvalidArgument, "dropout rho must lie in [0, 1)");
  std::vector<int> idx(static_cast<std::size_t>(num_tokens));
  std::iota(idx.begin(), idx.end(), 0);
  if (epoch < spec.start_epoch) return idx;
  const auto drop = static_cast<int>(std::floor(spec.rho * num_tokens));
  if (drop == 0) return idx;
  Rng rng(derive_seed(spec.seed, {static_cast<std::uint64_t>(epoch), draw_index}));
  // Partial Fisher-Yates: the first `keep` slots become a uniform subset.
  const int keep = num_tokens - drop;
  for (int i = 0; i < keep; ++i) {
    std::uniform_int_distribution<int> pick(i, num_tokens - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(static_cast<std::size_t>(keep));
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace realm::masking
