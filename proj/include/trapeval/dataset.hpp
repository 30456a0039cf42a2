#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "trapeval/bbox.hpp"
#include "trapeval/tensor.hpp"

namespace trapeval::dataset {

struct Date {
  int year{1970};
  int month{1};
  int day{1};

  /// 1-based ordinal day within the year (Gregorian).
  [[nodiscard]] int day_of_year() const noexcept;
  [[nodiscard]] std::string to_string() const;

  friend auto operator<=>(const Date&, const Date&) = default;
};

/// Accepts `YYYY-MM-DD`, optionally followed by a time part (" hh:mm:ss").
/// Throws ParseError for anything else, including impossible days.
[[nodiscard]] Date parse_date(std::string_view text);

struct Category {
  int id{0};
  std::string name;

  friend bool operator==(const Category&, const Category&) = default;
};

struct ImageRecord {
  std::string image_id;
  int location_id{0};
  Date capture_date;
  int width{0};
  int height{0};
  std::string file_name;
  std::string seq_id;  ///< burst sequence; empty when unknown
  std::vector<GroundTruth> annotations;

  friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

struct AnnotationSet {
  std::vector<ImageRecord> images;
  std::vector<Category> categories;

  friend bool operator==(const AnnotationSet&, const AnnotationSet&) = default;
};

/// COCO-style JSON with `location` and `date` on each image.  Boxes are
/// converted from [x, y, w, h] to corner form and clamped to the image;
/// annotations without a bbox are skipped.  Errors name the offending
/// element, e.g. "annotations[4].category_id".
[[nodiscard]] AnnotationSet parse_annotations_json(std::string_view json_text);
[[nodiscard]] AnnotationSet parse_annotations(const std::string& path);
[[nodiscard]] std::string write_annotations_json(const AnnotationSet& set);

/// Ids of categories named "empty" (case-insensitive).
[[nodiscard]] std::vector<int> empty_category_ids(std::span<const Category> categories);

/// Drops annotations of the given categories, then every record left with
/// none.  Input order is kept.
[[nodiscard]] std::vector<ImageRecord> filter_empty(std::span<const ImageRecord> records,
                                                    std::span<const int> empty_categories = {});

enum class DayBasis { DayOfMonth, DayOfYear };

[[nodiscard]] bool is_odd_day(const Date& date, DayBasis basis) noexcept;

struct SplitConfig {
  /// Explicit trans-test locations; drawn from the seed when empty.
  std::vector<int> trans_test_locations;
  std::optional<int> trans_val_location;
  int trans_test_count{9};
  double cis_val_fraction{0.05};
  std::uint64_t seed{0};
  DayBasis day_basis{DayBasis::DayOfMonth};
};

struct SplitResult {
  std::vector<ImageRecord> train;
  std::vector<ImageRecord> cis_val;
  std::vector<ImageRecord> cis_test;
  std::vector<ImageRecord> trans_val;
  std::vector<ImageRecord> trans_test;
  std::vector<int> trans_test_locations;  ///< sorted
  int trans_val_location{0};

  friend bool operator==(const SplitResult&, const SplitResult&) = default;
};

/// Trans locations are removed first.  Within the remaining locations,
/// odd-day images go to cis_test; even-day images are grouped by sequence
/// and whole groups are drawn at random until cis_val holds at least
/// round(fraction * even-day count) images; the rest is train.  Each list
/// keeps input order.  Throws ConfigError for too few locations, bad ids,
/// or a fraction outside [0, 1].
[[nodiscard]] SplitResult split_cis_trans(std::span<const ImageRecord> records, const SplitConfig& cfg);

/// Violated split invariants, one message each; empty when all hold.
/// `input_count`, when given, must equal the total over all five lists.
[[nodiscard]] std::vector<std::string> verify_split(const SplitResult& split, DayBasis basis,
                                                    std::optional<std::size_t> input_count = std::nullopt);

struct SplitCounts {
  std::size_t train{0};
  std::size_t cis_val{0};
  std::size_t cis_test{0};
  std::size_t trans_test{0};
};

[[nodiscard]] SplitCounts split_counts(const SplitResult& split);

/// Totals against `reference`, followed by a per-location breakdown of
/// every split when any total differs.  Returns whether all totals match.
bool compare_split_counts(const SplitResult& split, const SplitCounts& reference, std::string& report);

/// Nearest-neighbour resize to target x target with boxes scaled per axis.
/// Throws ShapeError when the raster does not match the record.
[[nodiscard]] std::pair<ImageRecord, Tensor3> resize_with_boxes(const ImageRecord& record, const Tensor3& raster,
                                                                int target);

struct AugmentOp {
  enum class Kind { Rotate90, Scale, Brightness, Contrast };
  Kind kind{Kind::Rotate90};
  double value{0.0};  ///< unused for Rotate90

  static AugmentOp rotate90() { return {Kind::Rotate90, 0.0}; }
  static AugmentOp scale(double s) { return {Kind::Scale, s}; }
  static AugmentOp brightness(double b) { return {Kind::Brightness, b}; }
  static AugmentOp contrast(double c) { return {Kind::Contrast, c}; }

  friend bool operator==(const AugmentOp&, const AugmentOp&) = default;
};

/// rotate90 turns the image a quarter counter-clockwise: pixel (x, y) moves to
/// (y, W-1-x) and box corner (x, y) to (y, W-x).  scale zooms about the
/// image centre (nearest sample, zero fill outside).  brightness adds b and
/// contrast multiplies the deviation from 127.5; both clamp to [0, 255].
/// Boxes are clamped afterwards and dropped below 1 px^2.  Throws
/// ConfigError for s or c outside [0.5, 1.5] or b outside [-64, 64].
[[nodiscard]] std::pair<ImageRecord, Tensor3> augment(const ImageRecord& record, const Tensor3& raster,
                                                      std::span<const AugmentOp> ops);

/// A random pipeline under `seed`: 0 to 3 rotations, then scale,
/// brightness and contrast drawn uniformly from their ranges.
[[nodiscard]] std::vector<AugmentOp> random_augment_ops(std::uint64_t seed);

[[nodiscard]] std::map<int, std::size_t> class_distribution(std::span<const ImageRecord> records);

/// `category_id,name,count`, one row per counted category in id order.
[[nodiscard]] std::string distribution_csv(const std::map<int, std::size_t>& counts,
                                           std::span<const Category> categories);

}  // namespace trapeval::dataset
