#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "trapeval/bbox.hpp"

namespace trapeval::eval {

struct MatchConfig {
  double iou_threshold{0.45};
  double confidence_threshold{0.25};

  void validate() const;
};

enum class DetectionStatus { TruePositive, FalsePositive };

enum class TruthStatus {
  Matched,                ///< consumed by a detection of the same category (TP)
  MatchedOtherCategory,   ///< consumed by a detection of another category
  Missed,                 ///< never consumed
};

struct DetectionMatch {
  std::size_t detection_index{0};  ///< index into the input detections
  int category_id{0};
  double confidence{0.0};
  DetectionStatus status{DetectionStatus::FalsePositive};
  std::optional<std::size_t> truth_index;
  std::optional<int> truth_category;
};

struct TruthMatch {
  int category_id{0};
  TruthStatus status{TruthStatus::Missed};
  std::optional<std::size_t> detection_index;
};

/// Result of matching one image.  There is no true-negative count.
struct MatchOutcome {
  std::vector<DetectionMatch> detections;  ///< retained detections, processing order
  std::vector<TruthMatch> truths;          ///< parallel to the input ground truths

  [[nodiscard]] std::int64_t true_positives() const noexcept;
  [[nodiscard]] std::int64_t false_positives() const noexcept;
  /// Ground truths not found by a same-category detection.
  [[nodiscard]] std::int64_t false_negatives() const noexcept;
};

/// Greedy matching of one image's detections.
///
/// Detections below the confidence threshold are dropped; the rest are taken
/// in decreasing confidence (input order breaks ties) and each consumes the
/// unmatched ground truth of highest IoU, provided it reaches the IoU
/// threshold.  IoU gating ignores categories; a consumed ground truth of a
/// different category makes the detection a false positive.
/// `known_categories`, when non-empty, rejects detections and ground truths
/// of any other category with a ConfigError.
[[nodiscard]] MatchOutcome match_detections(std::span<const Detection> detections,
                                            std::span<const GroundTruth> truths,
                                            const MatchConfig& config,
                                            std::span<const int> known_categories = {});

/// tp / (tp + fp); 1 when there are no predictions.
[[nodiscard]] double precision(std::int64_t tp, std::int64_t fp) noexcept;
/// tp / (tp + fn); 0 when there are no ground truths.
[[nodiscard]] double recall(std::int64_t tp, std::int64_t fn) noexcept;

struct PrPoint {
  double confidence{0.0};
  std::int64_t cum_tp{0};
  std::int64_t cum_fp{0};
  double precision{0.0};
  double recall{0.0};
};

/// Precision/recall table for one category over a whole corpus: one row per
/// detection, in decreasing confidence.  No confidence filter is applied.
/// Throws Error when there is no ground truth for the category.
[[nodiscard]] std::vector<PrPoint> pr_curve(std::span<const Detection> detections,
                                            std::span<const GroundTruth> truths,
                                            const MatchConfig& config);

/// p(r) = max precision over curve points with recall >= r (0 if none).
class PrecisionEnvelope {
 public:
  explicit PrecisionEnvelope(std::span<const PrPoint> curve);

  [[nodiscard]] double operator()(double recall) const;

  /// (recall, envelope precision) at every distinct recall, ascending.
  [[nodiscard]] const std::vector<std::pair<double, double>>& steps() const noexcept {
    return steps_;
  }

 private:
  std::vector<std::pair<double, double>> steps_;
};

[[nodiscard]] PrecisionEnvelope interpolate_precision(std::span<const PrPoint> curve);

enum class ApMode {
  Interpolated101,  ///< mean of the envelope at recall 0.00, 0.01, ..., 1.00
  Trapezoid,        ///< trapezoidal area under the envelope vertices from recall 0
};

[[nodiscard]] double average_precision(std::span<const PrPoint> curve,
                                       ApMode mode = ApMode::Interpolated101);

/// Unweighted mean; throws Error on empty input.
[[nodiscard]] double mean_average_precision(const std::map<int, double>& per_category_ap);

/// {0.50, 0.55, ..., 0.95}
[[nodiscard]] std::vector<double> default_iou_thresholds();

/// Per-category AP at one IoU threshold, for every category that has ground
/// truth.  Categories with detections only are left out.
[[nodiscard]] std::map<int, double> per_category_ap(std::span<const Detection> detections,
                                                    std::span<const GroundTruth> truths,
                                                    double iou_threshold,
                                                    ApMode mode = ApMode::Interpolated101);

/// Mean over thresholds of the mAP at that threshold.
[[nodiscard]] double map_over_iou_range(std::span<const Detection> detections,
                                        std::span<const GroundTruth> truths,
                                        std::span<const double> thresholds);

/// (K+1) x (K+1) counts indexed (true category, predicted category); the
/// last row and column stand for background.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::vector<int> categories);

  [[nodiscard]] const std::vector<int>& categories() const noexcept { return categories_; }
  [[nodiscard]] std::size_t size() const noexcept { return categories_.size() + 1; }
  [[nodiscard]] std::size_t background() const noexcept { return categories_.size(); }
  /// Throws ConfigError for an unknown category.
  [[nodiscard]] std::size_t index_of(int category_id) const;

  [[nodiscard]] std::int64_t at(std::size_t truth_row, std::size_t predicted_col) const;
  void add(std::size_t truth_row, std::size_t predicted_col, std::int64_t count = 1);

  [[nodiscard]] std::string to_csv() const;

 private:
  std::vector<int> categories_;
  std::vector<std::int64_t> cells_;
};

/// Diagonal = TP, (i, j) = truth of i consumed by a detection of j,
/// background column = truths never consumed, background row = detections
/// that consumed nothing.
[[nodiscard]] ConfusionMatrix confusion_matrix(std::span<const MatchOutcome> outcomes,
                                               std::vector<int> categories);

struct CategoryReport {
  int category_id{0};
  double ap50{0.0};
  double ap50_trapezoid{0.0};
  double ap50_95{0.0};
  std::int64_t tp{0}, fp{0}, fn{0};  ///< at the configured operating point
  double precision{0.0};
  double recall{0.0};
  std::vector<PrPoint> curve;  ///< at IoU 0.5
};

struct CorpusReport {
  std::vector<CategoryReport> categories;  ///< categories with ground truth
  double map50{0.0};
  double map50_trapezoid{0.0};
  double map50_95{0.0};
  ConfusionMatrix confusion{{}};
  std::vector<MatchOutcome> outcomes;  ///< per image, ordered by image id
};

/// Full pipeline.  Images are matched on up to `threads` workers (0 = one
/// per hardware thread); the reduction order does not depend on it.
[[nodiscard]] CorpusReport evaluate_corpus(std::span<const Detection> detections,
                                           std::span<const GroundTruth> truths,
                                           const std::vector<int>& categories,
                                           const MatchConfig& config, unsigned threads = 1);

/// `category_id,ap,precision,recall,tp,fp,fn` rows, then `mAP50,<v>` and
/// `mAP50-95,<v>` summary lines.
[[nodiscard]] std::string metrics_csv(const CorpusReport& report);

/// `category_id,ap101,ap_trapezoid` rows plus `mAP50,<v>,<v>`.
[[nodiscard]] std::string ap_modes_csv(const CorpusReport& report);

/// Parses `image_id,category_id,confidence,x1,y1,x2,y2` CSV text.
[[nodiscard]] std::vector<Detection> parse_detections_csv(std::string_view text);
[[nodiscard]] std::vector<Detection> read_detections_csv(const std::string& path);
[[nodiscard]] std::string detections_csv(std::span<const Detection> detections);

}  // namespace trapeval::eval
