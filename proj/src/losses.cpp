#include "trapeval/losses.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numbers>
#include <sstream>

#include "trapeval/error.hpp"
#include "trapeval/text.hpp"

namespace trapeval::losses {
namespace {

constexpr Grad4 kZero{0.0, 0.0, 0.0, 0.0};

Grad4 operator+(const Grad4& a, const Grad4& b) {
  return {a[0] + b[0], a[1] + b[1], a[2] + b[2], a[3] + b[3]};
}
Grad4 operator-(const Grad4& a, const Grad4& b) {
  return {a[0] - b[0], a[1] - b[1], a[2] - b[2], a[3] - b[3]};
}
Grad4 operator*(double s, const Grad4& a) { return {s * a[0], s * a[1], s * a[2], s * a[3]}; }
Grad4 operator-(const Grad4& a) { return -1.0 * a; }

// Quantities shared by every loss, with derivatives w.r.t. the predicted
// corners.  At kinks (coincident edges) the sub-gradient 0 is taken.
struct PairGeometry {
  double w{}, h{}, wg{}, hg{};
  Grad4 dw{-1.0, 0.0, 1.0, 0.0};
  Grad4 dh{0.0, -1.0, 0.0, 1.0};

  double inter{};
  Grad4 d_inter{};
  double uni{};
  Grad4 d_uni{};
  double iou{};
  Grad4 d_iou{};

  double hull_w{}, hull_h{};
  Grad4 d_hull_w{}, d_hull_h{};

  double dist2{};
  Grad4 d_dist2{};

  [[nodiscard]] double hull_diag2() const { return hull_w * hull_w + hull_h * hull_h; }
  [[nodiscard]] Grad4 d_hull_diag2() const {
    return (2.0 * hull_w) * d_hull_w + (2.0 * hull_h) * d_hull_h;
  }
};

// Share of a max/min that follows the first argument: 1 if a > b, 0 if
// a < b, half at a tie so coincident edges give a zero sub-gradient.
double side(double a, double b) {
  if (a > b) return 1.0;
  return a < b ? 0.0 : 0.5;
}

PairGeometry measure(const BoundingBox& p, const BoundingBox& g) {
  PairGeometry m;
  m.w = p.width();
  m.h = p.height();
  m.wg = g.width();
  m.hg = g.height();

  const double iw = std::min(p.x2, g.x2) - std::max(p.x1, g.x1);
  const double ih = std::min(p.y2, g.y2) - std::max(p.y1, g.y1);
  if (iw > 0.0 && ih > 0.0) {
    m.inter = iw * ih;
    const Grad4 d_iw{-side(p.x1, g.x1), 0.0, side(g.x2, p.x2), 0.0};
    const Grad4 d_ih{0.0, -side(p.y1, g.y1), 0.0, side(g.y2, p.y2)};
    m.d_inter = ih * d_iw + iw * d_ih;
  }

  const Grad4 d_area{-m.h, -m.w, m.h, m.w};
  m.uni = m.w * m.h + m.wg * m.hg - m.inter;
  m.d_uni = d_area - m.d_inter;
  if (m.uni > 0.0) {
    m.iou = m.inter / m.uni;
    m.d_iou = (1.0 / (m.uni * m.uni)) * (m.uni * m.d_inter - m.inter * m.d_uni);
  }

  m.hull_w = std::max(p.x2, g.x2) - std::min(p.x1, g.x1);
  m.hull_h = std::max(p.y2, g.y2) - std::min(p.y1, g.y1);
  m.d_hull_w = {-side(g.x1, p.x1), 0.0, side(p.x2, g.x2), 0.0};
  m.d_hull_h = {0.0, -side(g.y1, p.y1), 0.0, side(p.y2, g.y2)};

  const double dx = p.center_x() - g.center_x();
  const double dy = p.center_y() - g.center_y();
  m.dist2 = dx * dx + dy * dy;
  m.d_dist2 = {dx, dy, dx, dy};
  return m;
}

// value and gradient of a / b given those of a and b
LossEval quotient(double a, const Grad4& da, double b, const Grad4& db) {
  return {a / b, (1.0 / (b * b)) * (b * da - a * db)};
}

LossEval iou_term(const PairGeometry& m) { return {1.0 - m.iou, -m.d_iou}; }

LossEval distance_term(const PairGeometry& m, const char* loss_name) {
  const double c2 = m.hull_diag2();
  if (!(c2 > 0.0)) {
    throw GeometryError(std::string(loss_name) + ": enclosing box is a single point");
  }
  return quotient(m.dist2, m.d_dist2, c2, m.d_hull_diag2());
}

LossEval eiou_from(const PairGeometry& m) {
  if (!(m.hull_w > 0.0) || !(m.hull_h > 0.0)) {
    throw GeometryError("EIoU: enclosing box has a zero-length side");
  }
  const LossEval base = iou_term(m);
  const LossEval dist = distance_term(m, "EIoU");
  const double ew = m.w - m.wg;
  const double eh = m.h - m.hg;
  const double cw2 = m.hull_w * m.hull_w;
  const double ch2 = m.hull_h * m.hull_h;
  const double side_w = ew * ew / cw2;
  const double side_h = eh * eh / ch2;
  const Grad4 d_side_w = (2.0 * ew / cw2) * m.dw - (2.0 * ew * ew / (cw2 * m.hull_w)) * m.d_hull_w;
  const Grad4 d_side_h = (2.0 * eh / ch2) * m.dh - (2.0 * eh * eh / (ch2 * m.hull_h)) * m.d_hull_h;
  return {base.value + dist.value + side_w + side_h, base.grad + dist.grad + d_side_w + d_side_h};
}

double wiou_v1_frozen_value(const BoundingBox& p, const BoundingBox& g, double hull_diag2) {
  return std::exp(bbox::center_distance_sq(p, g) / hull_diag2) * (1.0 - bbox::iou(p, g));
}

}  // namespace

std::string_view to_string(LossKind kind) noexcept {
  switch (kind) {
    case LossKind::IoU: return "IoU";
    case LossKind::GIoU: return "GIoU";
    case LossKind::DIoU: return "DIoU";
    case LossKind::CIoU: return "CIoU";
    case LossKind::EIoU: return "EIoU";
    case LossKind::FocalEIoU: return "FocalEIoU";
    case LossKind::WIoUv1: return "WIoUv1";
    case LossKind::WIoUv3: return "WIoUv3";
  }
  return "?";
}

LossKind parse_loss_kind(std::string_view name) {
  std::string key;
  for (char c : name) {
    if (c != '-' && c != '_') key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  for (LossKind kind : kAllLossKinds) {
    std::string candidate;
    for (char c : to_string(kind)) candidate.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    if (candidate == key) return kind;
  }
  throw ConfigError("unknown loss kind '" + std::string(name) + "'");
}

void LossParams::validate() const {
  if (!(gamma >= 0.0)) throw ConfigError("gamma must be >= 0");
  if (!(alpha > 1.0)) throw ConfigError("alpha must be > 1");
  if (!(delta > 0.0)) throw ConfigError("delta must be > 0");
  if (!(running_mean_momentum > 0.0 && running_mean_momentum <= 1.0)) {
    throw ConfigError("running mean momentum must lie in (0, 1]");
  }
}

double WiouState::outlier_degree(double iou_loss) const noexcept {
  if (seeded()) return iou_loss / mean_iou_loss;
  return iou_loss > 0.0 ? 1.0 : 0.0;
}

WiouState WiouState::observe(double iou_loss, double momentum) const noexcept {
  WiouState next = *this;
  if (seeded()) {
    next.mean_iou_loss = momentum * mean_iou_loss + (1.0 - momentum) * iou_loss;
  } else {
    next.mean_iou_loss = iou_loss;
  }
  ++next.sample_count;
  return next;
}

LossEval loss_iou(const BoundingBox& pred, const BoundingBox& gt) {
  return iou_term(measure(pred, gt));
}

LossEval loss_giou(const BoundingBox& pred, const BoundingBox& gt) {
  const PairGeometry m = measure(pred, gt);
  LossEval out = iou_term(m);
  const double hull = m.hull_w * m.hull_h;
  if (hull > 0.0) {
    // R = (C - U) / C = 1 - U / C
    const Grad4 d_hull = m.hull_h * m.d_hull_w + m.hull_w * m.d_hull_h;
    const LossEval ratio = quotient(m.uni, m.d_uni, hull, d_hull);
    out.value += 1.0 - ratio.value;
    out.grad = out.grad - ratio.grad;
  }
  return out;
}

LossEval loss_diou(const BoundingBox& pred, const BoundingBox& gt) {
  const PairGeometry m = measure(pred, gt);
  const LossEval base = iou_term(m);
  const LossEval dist = distance_term(m, "DIoU");
  return {base.value + dist.value, base.grad + dist.grad};
}

LossEval loss_ciou(const BoundingBox& pred, const BoundingBox& gt) {
  const PairGeometry m = measure(pred, gt);
  if (!(m.h > 0.0) || !(m.hg > 0.0)) {
    throw GeometryError("CIoU: aspect ratio undefined for a zero-height box");
  }
  const LossEval base = iou_term(m);
  const LossEval dist = distance_term(m, "CIoU");

  constexpr double k = 4.0 / (std::numbers::pi * std::numbers::pi);
  const double diff = std::atan(m.w / m.h) - std::atan(m.wg / m.hg);
  const double v = k * diff * diff;
  const double norm = m.w * m.w + m.h * m.h;
  const Grad4 d_angle = (m.h / norm) * m.dw - (m.w / norm) * m.dh;
  const Grad4 dv = (2.0 * k * diff) * d_angle;

  // alpha * v = v^2 / (L_IoU + v), differentiated through alpha as well
  double shape = 0.0;
  Grad4 d_shape = kZero;
  const double denom = base.value + v;
  if (denom > 0.0) {
    shape = v * v / denom;
    d_shape = (1.0 / (denom * denom)) * ((2.0 * v * denom) * dv - (v * v) * (base.grad + dv));
  }
  return {base.value + dist.value + shape, base.grad + dist.grad + d_shape};
}

LossEval loss_eiou(const BoundingBox& pred, const BoundingBox& gt) {
  return eiou_from(measure(pred, gt));
}

LossEval loss_focal_eiou(const BoundingBox& pred, const BoundingBox& gt, const LossParams& params) {
  const PairGeometry m = measure(pred, gt);
  const LossEval eiou = eiou_from(m);
  const double gamma = params.gamma;
  if (gamma == 0.0) return eiou;
  if (!(m.iou > 0.0)) return {};  // IoU^gamma vanishes, and so does its gradient

  const double weight = std::pow(m.iou, gamma);
  const Grad4 d_weight = (gamma * std::pow(m.iou, gamma - 1.0)) * m.d_iou;
  return {weight * eiou.value, eiou.value * d_weight + weight * eiou.grad};
}

LossEval loss_wiou_v1(const BoundingBox& pred, const BoundingBox& gt) {
  const PairGeometry m = measure(pred, gt);
  const double c2 = m.hull_diag2();
  if (!(c2 > 0.0)) throw GeometryError("WIoUv1: enclosing box is a single point");
  const LossEval base = iou_term(m);
  const double focus = std::exp(m.dist2 / c2);
  return {focus * base.value, focus * base.grad + (focus * base.value / c2) * m.d_dist2};
}

WiouV3Eval loss_wiou_v3(const BoundingBox& pred, const BoundingBox& gt, const WiouState& state,
                        const LossParams& params) {
  const LossEval v1 = loss_wiou_v1(pred, gt);
  const double iou_loss = 1.0 - bbox::iou(pred, gt);
  WiouV3Eval out;
  out.beta = state.outlier_degree(iou_loss);
  out.focusing = focusing_coefficient(out.beta, params);
  out.eval = {out.focusing * v1.value, out.focusing * v1.grad};
  out.state = state.observe(iou_loss, params.running_mean_momentum);
  return out;
}

double focusing_coefficient(double beta, const LossParams& params) {
  if (!(beta >= 0.0)) throw ConfigError("outlier degree must be >= 0");
  return beta / (params.delta * std::pow(params.alpha, beta - params.delta));
}

LossEval evaluate(LossKind kind, const BoundingBox& pred, const BoundingBox& gt,
                  const LossParams& params, const WiouState& state) {
  switch (kind) {
    case LossKind::IoU: return loss_iou(pred, gt);
    case LossKind::GIoU: return loss_giou(pred, gt);
    case LossKind::DIoU: return loss_diou(pred, gt);
    case LossKind::CIoU: return loss_ciou(pred, gt);
    case LossKind::EIoU: return loss_eiou(pred, gt);
    case LossKind::FocalEIoU: return loss_focal_eiou(pred, gt, params);
    case LossKind::WIoUv1: return loss_wiou_v1(pred, gt);
    case LossKind::WIoUv3: return loss_wiou_v3(pred, gt, state, params).eval;
  }
  throw ConfigError("unknown loss kind");
}

Grad4 finite_diff_grad(LossKind kind, const BoundingBox& pred, const BoundingBox& gt, double h,
                       const LossParams& params, const WiouState& state) {
  if (!(h > 0.0)) throw ConfigError("finite-difference step must be > 0");

  const double frozen_c2 = [&] {
    const BoundingBox hull = bbox::enclosing_box(pred, gt);
    return hull.width() * hull.width() + hull.height() * hull.height();
  }();
  const double frozen_r = [&] {
    if (kind != LossKind::WIoUv3) return 1.0;
    return focusing_coefficient(state.outlier_degree(1.0 - bbox::iou(pred, gt)), params);
  }();

  auto value_at = [&](const BoundingBox& p) {
    switch (kind) {
      case LossKind::WIoUv1: return wiou_v1_frozen_value(p, gt, frozen_c2);
      case LossKind::WIoUv3: return frozen_r * wiou_v1_frozen_value(p, gt, frozen_c2);
      default: return evaluate(kind, p, gt, params, state).value;
    }
  };

  Grad4 grad{};
  for (int i = 0; i < 4; ++i) {
    BoundingBox plus = pred;
    BoundingBox minus = pred;
    double* fp = i == 0 ? &plus.x1 : i == 1 ? &plus.y1 : i == 2 ? &plus.x2 : &plus.y2;
    double* fm = i == 0 ? &minus.x1 : i == 1 ? &minus.y1 : i == 2 ? &minus.x2 : &minus.y2;
    *fp += h;
    *fm -= h;
    grad[static_cast<std::size_t>(i)] = (value_at(plus) - value_at(minus)) / (2.0 * h);
  }
  return grad;
}

std::vector<TrajectoryPoint> simulate_regression(LossKind kind, const BoundingBox& start,
                                                 const BoundingBox& gt,
                                                 const SimulationConfig& config,
                                                 const LossParams& params, WiouState state) {
  if (!(config.step > 0.0)) throw ConfigError("step must be > 0");
  if (config.iters < 1) throw ConfigError("iters must be >= 1");
  params.validate();

  std::vector<TrajectoryPoint> out;
  out.reserve(static_cast<std::size_t>(config.iters) + 1);
  BoundingBox box = start.normalized();
  for (int it = 0; it <= config.iters; ++it) {
    LossEval eval;
    try {
      if (kind == LossKind::WIoUv3) {
        const WiouV3Eval v3 = loss_wiou_v3(box, gt, state, params);
        eval = v3.eval;
        state = v3.state;
      } else {
        eval = evaluate(kind, box, gt, params);
      }
    } catch (const GeometryError& e) {
      throw DivergenceError(it, std::string(to_string(kind)) + " diverged at iteration " +
                                    std::to_string(it) + ": " + e.what());
    }
    const bool finite = std::isfinite(eval.value) &&
                        std::all_of(eval.grad.begin(), eval.grad.end(),
                                    [](double g) { return std::isfinite(g); }) &&
                        std::isfinite(box.x1) && std::isfinite(box.y1) &&
                        std::isfinite(box.x2) && std::isfinite(box.y2);
    if (!finite) {
      throw DivergenceError(it, std::string(to_string(kind)) + " diverged at iteration " +
                                    std::to_string(it) + ": non-finite value");
    }
    out.push_back({it, eval.value, bbox::iou(box, gt), std::sqrt(bbox::center_distance_sq(box, gt)),
                   box.area(), box});
    if (it == config.iters) break;

    BoundingBox next{box.x1 - config.step * eval.grad[0], box.y1 - config.step * eval.grad[1],
                     box.x2 - config.step * eval.grad[2], box.y2 - config.step * eval.grad[3]};
    next = next.normalized();
    if (config.arena) {
      const BoundingBox& a = *config.arena;
      next = {std::clamp(next.x1, a.x1, a.x2), std::clamp(next.y1, a.y1, a.y2),
              std::clamp(next.x2, a.x1, a.x2), std::clamp(next.y2, a.y1, a.y2)};
    }
    box = next;
  }
  return out;
}

std::string trajectory_csv(const std::vector<TrajectoryPoint>& trajectory) {
  using text::format_real;
  std::ostringstream os;
  os << "iter,loss,iou,center_dist,area,x1,y1,x2,y2\n";
  for (const auto& p : trajectory) {
    os << p.iter << ',' << format_real(p.loss) << ',' << format_real(p.iou) << ','
       << format_real(p.center_dist) << ',' << format_real(p.area) << ',' << format_real(p.box.x1)
       << ',' << format_real(p.box.y1) << ',' << format_real(p.box.x2) << ','
       << format_real(p.box.y2) << '\n';
  }
  return os.str();
}

}  // namespace trapeval::losses
