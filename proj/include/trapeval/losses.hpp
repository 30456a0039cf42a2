#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "trapeval/bbox.hpp"

namespace trapeval::losses {

enum class LossKind { IoU, GIoU, DIoU, CIoU, EIoU, FocalEIoU, WIoUv1, WIoUv3 };

inline constexpr std::array<LossKind, 8> kAllLossKinds{
    LossKind::IoU,  LossKind::GIoU,      LossKind::DIoU,   LossKind::CIoU,
    LossKind::EIoU, LossKind::FocalEIoU, LossKind::WIoUv1, LossKind::WIoUv3};

[[nodiscard]] std::string_view to_string(LossKind kind) noexcept;
/// Case-insensitive; accepts "focal-eiou" and "focaleiou". Throws ConfigError.
[[nodiscard]] LossKind parse_loss_kind(std::string_view name);

struct LossParams {
  double gamma{0.5};                   ///< Focal-EIoU exponent
  double alpha{1.9};                   ///< WIoU focusing base
  double delta{3.0};                   ///< WIoU focusing offset
  double running_mean_momentum{0.99};  ///< weight kept on the previous mean

  /// Throws ConfigError when a field is out of range.
  void validate() const;
};

/// Gradient with respect to (x1, y1, x2, y2) of the predicted box.
using Grad4 = std::array<double, 4>;

struct LossEval {
  double value{0.0};
  Grad4 grad{};
};

/// Running mean of the plain IoU loss that anchors the WIoUv3 outlier degree.
///
/// The mean is an exponential moving average that keeps `momentum` of the
/// previous value.  It is seeded by the first observed loss, and re-seeded
/// whenever it is exactly zero (all previous losses were zero).
struct WiouState {
  double mean_iou_loss{0.0};
  std::int64_t sample_count{0};

  [[nodiscard]] bool seeded() const noexcept { return sample_count > 0 && mean_iou_loss > 0.0; }

  /// beta = L*/mean.  An unseeded state treats the current loss as the mean,
  /// giving 1 for a positive loss and 0 for a zero loss.
  [[nodiscard]] double outlier_degree(double iou_loss) const noexcept;

  [[nodiscard]] WiouState observe(double iou_loss, double momentum) const noexcept;
};

[[nodiscard]] LossEval loss_iou(const BoundingBox& pred, const BoundingBox& gt);
[[nodiscard]] LossEval loss_giou(const BoundingBox& pred, const BoundingBox& gt);
[[nodiscard]] LossEval loss_diou(const BoundingBox& pred, const BoundingBox& gt);
[[nodiscard]] LossEval loss_ciou(const BoundingBox& pred, const BoundingBox& gt);
[[nodiscard]] LossEval loss_eiou(const BoundingBox& pred, const BoundingBox& gt);
[[nodiscard]] LossEval loss_focal_eiou(const BoundingBox& pred, const BoundingBox& gt,
                                       const LossParams& params = {});
/// The hull diagonal inside the exponent is held constant for the gradient.
[[nodiscard]] LossEval loss_wiou_v1(const BoundingBox& pred, const BoundingBox& gt);

struct WiouV3Eval {
  LossEval eval;
  WiouState state;  ///< state after observing this pair
  double beta{0.0};
  double focusing{0.0};
};

/// beta and r are computed from the incoming state and treated as constants
/// in the gradient; the returned state has observed this pair's IoU loss.
[[nodiscard]] WiouV3Eval loss_wiou_v3(const BoundingBox& pred, const BoundingBox& gt,
                                      const WiouState& state, const LossParams& params = {});

/// r(beta) = beta / (delta * alpha^(beta - delta)).
[[nodiscard]] double focusing_coefficient(double beta, const LossParams& params = {});

/// Dispatches on kind.  WIoUv3 reads `state` but does not advance it.
[[nodiscard]] LossEval evaluate(LossKind kind, const BoundingBox& pred, const BoundingBox& gt,
                                const LossParams& params = {}, const WiouState& state = {});

/// Central-difference gradient of the named loss w.r.t. the predicted corners.
/// WIoUv1's hull diagonal and WIoUv3's beta and r are frozen at `pred`.
[[nodiscard]] Grad4 finite_diff_grad(LossKind kind, const BoundingBox& pred, const BoundingBox& gt,
                                     double h = 1e-6, const LossParams& params = {},
                                     const WiouState& state = {});

struct TrajectoryPoint {
  int iter{0};
  double loss{0.0};
  double iou{0.0};
  double center_dist{0.0};
  double area{0.0};
  BoundingBox box;
};

struct SimulationConfig {
  double step{0.01};
  int iters{500};
  /// Boxes are clamped into this region after every step when set.
  std::optional<BoundingBox> arena;
};

/// Gradient descent on the predicted corners.  Row k holds the box after k
/// steps, so the result has iters + 1 rows.  Throws DivergenceError naming
/// the iteration when a value turns non-finite or the loss leaves its domain.
[[nodiscard]] std::vector<TrajectoryPoint> simulate_regression(
    LossKind kind, const BoundingBox& start, const BoundingBox& gt, const SimulationConfig& config,
    const LossParams& params = {}, WiouState state = {});

/// CSV with header `iter,loss,iou,center_dist,area,x1,y1,x2,y2`.
[[nodiscard]] std::string trajectory_csv(const std::vector<TrajectoryPoint>& trajectory);

}  // namespace trapeval::losses
