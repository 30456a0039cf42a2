#pragma once

#include <string>

namespace trapeval {

/// Axis-aligned box in corner form, pixel coordinates.
struct BoundingBox {
  double x1{0.0};
  double y1{0.0};
  double x2{0.0};
  double y2{0.0};

  [[nodiscard]] double width() const noexcept { return x2 - x1; }
  [[nodiscard]] double height() const noexcept { return y2 - y1; }
  [[nodiscard]] double area() const noexcept { return width() * height(); }
  [[nodiscard]] double center_x() const noexcept { return 0.5 * (x1 + x2); }
  [[nodiscard]] double center_y() const noexcept { return 0.5 * (y1 + y2); }

  /// Swaps corners so that x1 <= x2 and y1 <= y2.
  [[nodiscard]] BoundingBox normalized() const noexcept;

  /// Builds a corner-form box from COCO-style [x, y, w, h].
  static BoundingBox from_xywh(double x, double y, double w, double h) noexcept {
    return {x, y, x + w, y + h};
  }

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

struct GroundTruth {
  BoundingBox box;
  int category_id{0};
  std::string image_id;

  friend bool operator==(const GroundTruth&, const GroundTruth&) = default;
};

struct Detection {
  BoundingBox box;
  int category_id{0};
  double confidence{0.0};  ///< in [0, 1]
  std::string image_id;
};

namespace bbox {

[[nodiscard]] double intersection_area(const BoundingBox& a, const BoundingBox& b) noexcept;
[[nodiscard]] double union_area(const BoundingBox& a, const BoundingBox& b) noexcept;

/// |A ∩ B| / |A ∪ B|, or 0 when the union is empty.
[[nodiscard]] double iou(const BoundingBox& a, const BoundingBox& b) noexcept;

/// Smallest axis-aligned box containing both inputs.
[[nodiscard]] BoundingBox enclosing_box(const BoundingBox& a, const BoundingBox& b) noexcept;

[[nodiscard]] double center_distance_sq(const BoundingBox& a, const BoundingBox& b) noexcept;

/// Clamps every corner into [0, width] x [0, height].
[[nodiscard]] BoundingBox clamp(const BoundingBox& box, double width, double height) noexcept;

}  // namespace bbox
}  // namespace trapeval
