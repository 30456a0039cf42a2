#include "trapeval/bbox.hpp"

#include <algorithm>

namespace trapeval {

BoundingBox BoundingBox::normalized() const noexcept {
  return {std::min(x1, x2), std::min(y1, y2), std::max(x1, x2), std::max(y1, y2)};
}

namespace bbox {

double intersection_area(const BoundingBox& a, const BoundingBox& b) noexcept {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  return iw * ih;
}

double union_area(const BoundingBox& a, const BoundingBox& b) noexcept {
  return a.area() + b.area() - intersection_area(a, b);
}

double iou(const BoundingBox& a, const BoundingBox& b) noexcept {
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

BoundingBox enclosing_box(const BoundingBox& a, const BoundingBox& b) noexcept {
  return {std::min(a.x1, b.x1), std::min(a.y1, b.y1), std::max(a.x2, b.x2),
          std::max(a.y2, b.y2)};
}

double center_distance_sq(const BoundingBox& a, const BoundingBox& b) noexcept {
  const double dx = a.center_x() - b.center_x();
  const double dy = a.center_y() - b.center_y();
  return dx * dx + dy * dy;
}

BoundingBox clamp(const BoundingBox& box, double width, double height) noexcept {
  return {std::clamp(box.x1, 0.0, width), std::clamp(box.y1, 0.0, height),
          std::clamp(box.x2, 0.0, width), std::clamp(box.y2, 0.0, height)};
}

}  // namespace bbox
}  // namespace trapeval
