#include "realm/inference.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "realm/error.hpp"

namespace realm::infer {

TilePlan plan_corner4(int height, int width, int tile) {
  if (tile < 1) throw Error(ErrorCode::InvalidArgument, "tile size must be >= 1");
  if (height < tile || width < tile)
    throw Error(ErrorCode::InputSmallerThanTile, std::to_string(height) + "x" + std::to_string(width) +
                                                     " is smaller than tile " + std::to_string(tile));
  TilePlan p;
  p.height = height;
  p.width = width;
  p.tile = tile;
  for (int r : {0, height - tile})
    for (int c : {0, width - tile})
      if (std::find(p.origins.begin(), p.origins.end(), std::pair{r, c}) == p.origins.end()) p.origins.emplace_back(r, c);
  p.count.assign(static_cast<std::size_t>(height) * width, 0);
  for (auto [r, c] : p.origins)
    for (int y = r; y < r + tile; ++y)
      for (int x = c; x < c + tile; ++x) ++p.count[static_cast<std::size_t>(y) * width + x];
  return p;
}

Tensor tile_inference(const Tensor& input, const TilePredictor& predictor, const TilePlan& plan) {
  if (input.rank() != 3) throw Error(ErrorCode::ShapeMismatch, "tile_inference expects C x H x W");
  const int c = input.dim(0), h = input.dim(1), w = input.dim(2), t = plan.tile;
  if (h != plan.height || w != plan.width) throw Error(ErrorCode::ShapeMismatch, "input does not match the tile plan");
  if (h < t || w < t) throw Error(ErrorCode::InputSmallerThanTile, "input smaller than tile");
  Tensor acc;
  for (auto [r0, c0] : plan.origins) {
    Tensor crop({c, t, t});
    for (int ci = 0; ci < c; ++ci)
      for (int y = 0; y < t; ++y)
        for (int x = 0; x < t; ++x) crop.at(ci, y, x) = input.at(ci, r0 + y, c0 + x);
    const Tensor out = predictor(crop);
    if (out.rank() != 3 || out.dim(1) != t || out.dim(2) != t)
      throw Error(ErrorCode::ShapeMismatch, "predictor returned " + shape_str(out.shape));
    if (acc.shape.empty()) acc = Tensor({out.dim(0), h, w});
    if (out.dim(0) != acc.dim(0)) throw Error(ErrorCode::ShapeMismatch, "predictor channel count changed");
    for (int k = 0; k < out.dim(0); ++k)
      for (int y = 0; y < t; ++y)
        for (int x = 0; x < t; ++x) acc.at(k, r0 + y, c0 + x) += out.at(k, y, x);
  }
  for (int k = 0; k < acc.dim(0); ++k)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) acc.at(k, y, x) /= plan.count_at(y, x);
  return acc;
}

namespace {

std::pair<int, int> plane_dims(const Tensor& t) {
  if (t.rank() != 2 && t.rank() != 3) throw Error(ErrorCode::ShapeMismatch, "expected H x W or C x H x W");
  return {t.dim(t.rank() - 2), t.dim(t.rank() - 1)};
}

}  // namespace

std::pair<Tensor, Padding> pad_symmetric(const Tensor& input, int target) {
  const auto [h, w] = plane_dims(input);
  if (h > target || w > target)
    throw Error(ErrorCode::InputLargerThanTarget,
                std::to_string(h) + "x" + std::to_string(w) + " exceeds " + std::to_string(target));
  Padding p;
  p.height = h;
  p.width = w;
  p.top = (target - h) / 2;
  p.bottom = target - h - p.top;
  p.left = (target - w) / 2;
  p.right = target - w - p.left;
  const int c = input.rank() == 3 ? input.dim(0) : 1;
  Shape shape = input.rank() == 3 ? Shape{c, target, target} : Shape{target, target};
  Tensor out(shape);
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        out.data[(static_cast<std::size_t>(ci) * target + y + p.top) * target + x + p.left] =
            input.data[(static_cast<std::size_t>(ci) * h + y) * w + x];
  return {std::move(out), p};
}

Tensor unpad(const Tensor& padded, const Padding& p) {
  const auto [th, tw] = plane_dims(padded);
  if (p.top + p.height + p.bottom != th || p.left + p.width + p.right != tw)
    throw Error(ErrorCode::ShapeMismatch, "padding descriptor does not match tensor");
  const int c = padded.rank() == 3 ? padded.dim(0) : 1;
  Shape shape = padded.rank() == 3 ? Shape{c, p.height, p.width} : Shape{p.height, p.width};
  Tensor out(shape);
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < p.height; ++y)
      for (int x = 0; x < p.width; ++x)
        out.data[(static_cast<std::size_t>(ci) * p.height + y) * p.width + x] =
            padded.data[(static_cast<std::size_t>(ci) * th + y + p.top) * tw + x + p.left];
  return out;
}

HoldOutput hold_step(HoldState& state, const events::EventWindow& window, const WindowPredictor& predict) {
  if (!window.empty()) {
    state.last = predict(window);
    state.staleness = 0;
    return {state.last, false};
  }
  if (!state.last) return {std::nullopt, false};
  ++state.staleness;
  return {state.last, true};
}

std::vector<HoldOutput> memory_hold(const std::vector<events::EventWindow>& windows, const WindowPredictor& predict,
                                    HoldState& state) {
  std::vector<HoldOutput> out;
  out.reserve(windows.size());
  for (const auto& w : windows) out.push_back(hold_step(state, w, predict));
  return out;
}

Tensor pca_feature_image(const Tensor& patches) {
  if (patches.rank() != 2) throw Error(ErrorCode::ShapeMismatch, "pca expects M x d tokens");
  const int m = patches.dim(0), d = patches.dim(1);
  const int g = static_cast<int>(std::lround(std::sqrt(static_cast<double>(m))));
  if (g * g != m) throw Error(ErrorCode::ShapeMismatch, "token count is not a square");
  Tensor img({g, g, 3}, 0.5);
  if (m == 0 || d == 0) return img;

  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const Mat> x(patches.data.data(), m, d);
  const Mat centered = x.rowwise() - x.colwise().mean();
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(m);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  const Eigen::VectorXd& vals = eig.eigenvalues();  // ascending
  const double top = std::max(vals.size() ? vals(vals.size() - 1) : 0.0, 0.0);
  const double tol = std::max(top, 1.0) * 1e-12 * d;

  for (int k = 0; k < std::min(3, d); ++k) {
    const int col = d - 1 - k;
    if (!(vals(col) > tol)) break;
    Eigen::VectorXd v = eig.eigenvectors().col(col);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    const Eigen::VectorXd proj = centered * v;
    const double lo = proj.minCoeff(), hi = proj.maxCoeff();
    if (!(hi - lo > 0.0)) continue;
    for (int j = 0; j < m; ++j) img.data[static_cast<std::size_t>(j) * 3 + k] = std::clamp((proj(j) - lo) / (hi - lo), 0.0, 1.0);
  }
  return img;
}

}  // namespace realm::infer
