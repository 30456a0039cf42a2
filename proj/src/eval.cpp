#include "trapeval/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include "trapeval/error.hpp"
#include "trapeval/text.hpp"

namespace trapeval::eval {
namespace {

// Indices of `detections` ordered by decreasing confidence, input order on ties.
std::vector<std::size_t> by_confidence(std::span<const Detection> detections) {
  std::vector<std::size_t> order(detections.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return detections[a].confidence > detections[b].confidence;
  });
  return order;
}

void check_confidence(const Detection& d) {
  if (!(d.confidence >= 0.0 && d.confidence <= 1.0)) {
    throw ConfigError("detection confidence " + text::format_real(d.confidence) +
                      " outside [0, 1]");
  }
}

void check_known(int category_id, std::span<const int> known, const char* what) {
  if (known.empty()) return;
  if (std::find(known.begin(), known.end(), category_id) == known.end()) {
    throw ConfigError(std::string(what) + " references unknown category " +
                      std::to_string(category_id));
  }
}

// Within-category greedy matching of one image; returns a TP flag per
// detection index in `detections`.
std::vector<bool> flag_true_positives(std::span<const Detection> detections,
                                      std::span<const GroundTruth> truths, double iou_threshold) {
  std::vector<bool> tp(detections.size(), false);
  std::vector<bool> used(truths.size(), false);
  for (std::size_t d : by_confidence(detections)) {
    double best = -1.0;
    std::optional<std::size_t> pick;
    for (std::size_t t = 0; t < truths.size(); ++t) {
      if (used[t]) continue;
      const double v = bbox::iou(detections[d].box, truths[t].box);
      if (v >= iou_threshold && v > best) {
        best = v;
        pick = t;
      }
    }
    if (pick) {
      used[*pick] = true;
      tp[d] = true;
    }
  }
  return tp;
}

template <typename T>
std::map<std::string, std::vector<T>> group_by_image(std::span<const T> items) {
  std::map<std::string, std::vector<T>> groups;
  for (const T& item : items) groups[item.image_id].push_back(item);
  return groups;
}

}  // namespace

void MatchConfig::validate() const {
  if (!(iou_threshold > 0.0 && iou_threshold < 1.0)) {
    throw ConfigError("IoU threshold must lie in (0, 1)");
  }
  if (!(confidence_threshold >= 0.0 && confidence_threshold <= 1.0)) {
    throw ConfigError("confidence threshold must lie in [0, 1]");
  }
}

std::int64_t MatchOutcome::true_positives() const noexcept {
  return std::count_if(detections.begin(), detections.end(), [](const DetectionMatch& d) {
    return d.status == DetectionStatus::TruePositive;
  });
}

std::int64_t MatchOutcome::false_positives() const noexcept {
  return static_cast<std::int64_t>(detections.size()) - true_positives();
}

std::int64_t MatchOutcome::false_negatives() const noexcept {
  return std::count_if(truths.begin(), truths.end(),
                       [](const TruthMatch& t) { return t.status != TruthStatus::Matched; });
}

MatchOutcome match_detections(std::span<const Detection> detections,
                              std::span<const GroundTruth> truths, const MatchConfig& config,
                              std::span<const int> known_categories) {
  config.validate();
  for (const Detection& d : detections) {
    check_confidence(d);
    check_known(d.category_id, known_categories, "detection");
  }
  for (const GroundTruth& t : truths) check_known(t.category_id, known_categories, "ground truth");

  MatchOutcome out;
  out.truths.reserve(truths.size());
  for (const GroundTruth& t : truths) out.truths.push_back({t.category_id, TruthStatus::Missed, {}});

  for (std::size_t d : by_confidence(detections)) {
    const Detection& det = detections[d];
    if (det.confidence < config.confidence_threshold) continue;

    double best = -1.0;
    std::optional<std::size_t> pick;
    for (std::size_t t = 0; t < truths.size(); ++t) {
      if (out.truths[t].status != TruthStatus::Missed) continue;
      const double v = bbox::iou(det.box, truths[t].box);
      if (v >= config.iou_threshold && v > best) {
        best = v;
        pick = t;
      }
    }

    DetectionMatch match{d, det.category_id, det.confidence, DetectionStatus::FalsePositive, {}, {}};
    if (pick) {
      TruthMatch& truth = out.truths[*pick];
      const bool same = truth.category_id == det.category_id;
      truth.status = same ? TruthStatus::Matched : TruthStatus::MatchedOtherCategory;
      truth.detection_index = d;
      match.truth_index = *pick;
      match.truth_category = truth.category_id;
      if (same) match.status = DetectionStatus::TruePositive;
    }
    out.detections.push_back(match);
  }
  return out;
}

double precision(std::int64_t tp, std::int64_t fp) noexcept {
  if (tp + fp == 0) return 1.0;
  return static_cast<double>(tp) / static_cast<double>(tp + fp);
}

double recall(std::int64_t tp, std::int64_t fn) noexcept {
  if (tp + fn == 0) return 0.0;
  return static_cast<double>(tp) / static_cast<double>(tp + fn);
}

std::vector<PrPoint> pr_curve(std::span<const Detection> detections,
                              std::span<const GroundTruth> truths, const MatchConfig& config) {
  if (truths.empty()) throw Error("PR curve needs at least one ground truth for the category");
  const int category = truths.front().category_id;
  for (const GroundTruth& t : truths) {
    if (t.category_id != category) throw ConfigError("PR curve mixes ground-truth categories");
  }
  for (const Detection& d : detections) {
    if (d.category_id != category) throw ConfigError("PR curve mixes detection categories");
    check_confidence(d);
  }

  // TP/FP per detection, decided image by image
  std::vector<bool> is_tp(detections.size(), false);
  {
    std::map<std::string, std::vector<std::size_t>> det_by_image;
    for (std::size_t i = 0; i < detections.size(); ++i) det_by_image[detections[i].image_id].push_back(i);
    const auto truth_by_image = group_by_image(truths);
    for (const auto& [image, indices] : det_by_image) {
      std::vector<Detection> local;
      local.reserve(indices.size());
      for (std::size_t i : indices) local.push_back(detections[i]);
      const auto found = truth_by_image.find(image);
      if (found == truth_by_image.end()) continue;
      const std::vector<bool> flags = flag_true_positives(local, found->second, config.iou_threshold);
      for (std::size_t k = 0; k < indices.size(); ++k) is_tp[indices[k]] = flags[k];
    }
  }

  const auto total = static_cast<std::int64_t>(truths.size());
  std::vector<PrPoint> curve;
  curve.reserve(detections.size());
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  for (std::size_t d : by_confidence(detections)) {
    if (is_tp[d]) {
      ++tp;
    } else {
      ++fp;
    }
    curve.push_back({detections[d].confidence, tp, fp, precision(tp, fp), recall(tp, total - tp)});
  }
  return curve;
}

PrecisionEnvelope::PrecisionEnvelope(std::span<const PrPoint> curve) {
  std::vector<std::pair<double, double>> points;
  points.reserve(curve.size());
  for (const PrPoint& p : curve) points.emplace_back(p.recall, p.precision);
  std::sort(points.begin(), points.end());
  for (std::size_t i = points.size(); i-- > 0;) {
    const double best_right = steps_.empty() ? 0.0 : steps_.back().second;
    const double level = std::max(points[i].second, best_right);
    if (!steps_.empty() && steps_.back().first == points[i].first) {
      steps_.back().second = level;
    } else {
      steps_.emplace_back(points[i].first, level);
    }
  }
  std::reverse(steps_.begin(), steps_.end());
}

double PrecisionEnvelope::operator()(double r) const {
  const auto it = std::lower_bound(steps_.begin(), steps_.end(), r,
                                   [](const auto& step, double value) { return step.first < value; });
  return it == steps_.end() ? 0.0 : it->second;
}

PrecisionEnvelope interpolate_precision(std::span<const PrPoint> curve) {
  return PrecisionEnvelope(curve);
}

double average_precision(std::span<const PrPoint> curve, ApMode mode) {
  const PrecisionEnvelope envelope(curve);
  if (mode == ApMode::Interpolated101) {
    double sum = 0.0;
    for (int k = 0; k <= 100; ++k) sum += envelope(k / 100.0);
    return sum / 101.0;
  }
  double area = 0.0;
  double prev_r = 0.0;
  double prev_p = envelope(0.0);
  for (const auto& [r, p] : envelope.steps()) {
    area += (r - prev_r) * 0.5 * (p + prev_p);
    prev_r = r;
    prev_p = p;
  }
  return area;
}

double mean_average_precision(const std::map<int, double>& per_category) {
  if (per_category.empty()) throw Error("mAP needs at least one category with ground truth");
  double sum = 0.0;
  for (const auto& [category, ap] : per_category) sum += ap;
  return sum / static_cast<double>(per_category.size());
}

std::vector<double> default_iou_thresholds() {
  std::vector<double> out;
  for (int k = 0; k < 10; ++k) out.push_back((50 + 5 * k) / 100.0);
  return out;
}

std::map<int, double> per_category_ap(std::span<const Detection> detections,
                                      std::span<const GroundTruth> truths, double iou_threshold,
                                      ApMode mode) {
  std::map<int, std::vector<GroundTruth>> truth_by_cat;
  for (const GroundTruth& t : truths) truth_by_cat[t.category_id].push_back(t);
  std::map<int, std::vector<Detection>> det_by_cat;
  for (const Detection& d : detections) det_by_cat[d.category_id].push_back(d);

  MatchConfig cfg;
  cfg.iou_threshold = iou_threshold;
  std::map<int, double> out;
  for (const auto& [category, cat_truths] : truth_by_cat) {
    const auto found = det_by_cat.find(category);
    const std::vector<Detection> none;
    const auto& cat_dets = found == det_by_cat.end() ? none : found->second;
    out[category] = average_precision(pr_curve(cat_dets, cat_truths, cfg), mode);
  }
  return out;
}

double map_over_iou_range(std::span<const Detection> detections,
                          std::span<const GroundTruth> truths, std::span<const double> thresholds) {
  if (thresholds.empty()) throw ConfigError("IoU threshold list is empty");
  double sum = 0.0;
  for (double t : thresholds) {
    if (!(t > 0.0 && t < 1.0)) throw ConfigError("IoU threshold must lie in (0, 1)");
    sum += mean_average_precision(per_category_ap(detections, truths, t));
  }
  return sum / static_cast<double>(thresholds.size());
}

ConfusionMatrix::ConfusionMatrix(std::vector<int> categories) : categories_(std::move(categories)) {
  std::sort(categories_.begin(), categories_.end());
  categories_.erase(std::unique(categories_.begin(), categories_.end()), categories_.end());
  cells_.assign(size() * size(), 0);
}

std::size_t ConfusionMatrix::index_of(int category_id) const {
  const auto it = std::lower_bound(categories_.begin(), categories_.end(), category_id);
  if (it == categories_.end() || *it != category_id) {
    throw ConfigError("confusion matrix has no category " + std::to_string(category_id));
  }
  return static_cast<std::size_t>(it - categories_.begin());
}

std::int64_t ConfusionMatrix::at(std::size_t row, std::size_t col) const {
  return cells_.at(row * size() + col);
}

void ConfusionMatrix::add(std::size_t row, std::size_t col, std::int64_t count) {
  cells_.at(row * size() + col) += count;
}

std::string ConfusionMatrix::to_csv() const {
  std::ostringstream os;
  os << "true\\predicted";
  for (int c : categories_) os << ',' << c;
  os << ",background\n";
  for (std::size_t r = 0; r < size(); ++r) {
    if (r == background()) {
      os << "background";
    } else {
      os << categories_[r];
    }
    for (std::size_t c = 0; c < size(); ++c) os << ',' << at(r, c);
    os << '\n';
  }
  return os.str();
}

ConfusionMatrix confusion_matrix(std::span<const MatchOutcome> outcomes, std::vector<int> categories) {
  ConfusionMatrix m(std::move(categories));
  const std::size_t bg = m.background();
  for (const MatchOutcome& o : outcomes) {
    for (const DetectionMatch& d : o.detections) {
      const std::size_t col = m.index_of(d.category_id);
      if (d.truth_category) {
        m.add(m.index_of(*d.truth_category), col);
      } else {
        m.add(bg, col);
      }
    }
    for (const TruthMatch& t : o.truths) {
      if (t.status == TruthStatus::Missed) m.add(m.index_of(t.category_id), bg);
    }
  }
  return m;
}

CorpusReport evaluate_corpus(std::span<const Detection> detections,
                             std::span<const GroundTruth> truths, const std::vector<int>& categories,
                             const MatchConfig& config, unsigned threads) {
  config.validate();
  for (const Detection& d : detections) {
    check_confidence(d);
    check_known(d.category_id, categories, "detection");
  }
  for (const GroundTruth& t : truths) check_known(t.category_id, categories, "ground truth");

  // operating-point matching, one job per image
  const auto det_by_image = group_by_image(detections);
  const auto truth_by_image = group_by_image(truths);
  std::set<std::string> image_ids;
  for (const auto& [id, v] : det_by_image) image_ids.insert(id);
  for (const auto& [id, v] : truth_by_image) image_ids.insert(id);
  const std::vector<std::string> images(image_ids.begin(), image_ids.end());

  CorpusReport report;
  report.outcomes.resize(images.size());
  auto match_image = [&](std::size_t i) {
    static const std::vector<Detection> no_dets;
    static const std::vector<GroundTruth> no_truths;
    const auto d = det_by_image.find(images[i]);
    const auto t = truth_by_image.find(images[i]);
    report.outcomes[i] = match_detections(d == det_by_image.end() ? no_dets : d->second,
                                          t == truth_by_image.end() ? no_truths : t->second, config);
  };
  unsigned workers = threads == 0 ? std::max(1U, std::thread::hardware_concurrency()) : threads;
  workers = static_cast<unsigned>(std::min<std::size_t>(workers, std::max<std::size_t>(images.size(), 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < images.size(); ++i) match_image(i);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < images.size(); i += workers) match_image(i);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  report.confusion = confusion_matrix(report.outcomes, categories);

  std::map<int, std::int64_t> tp, fp, fn;
  for (const MatchOutcome& o : report.outcomes) {
    for (const DetectionMatch& d : o.detections) {
      if (d.status == DetectionStatus::TruePositive) {
        ++tp[d.category_id];
      } else {
        ++fp[d.category_id];
      }
    }
    for (const TruthMatch& t : o.truths) {
      if (t.status != TruthStatus::Matched) ++fn[t.category_id];
    }
  }

  const auto thresholds = default_iou_thresholds();
  std::vector<std::map<int, double>> ap_at;
  ap_at.reserve(thresholds.size());
  for (double t : thresholds) ap_at.push_back(per_category_ap(detections, truths, t));
  const std::map<int, double> ap_trap = per_category_ap(detections, truths, 0.5, ApMode::Trapezoid);

  std::map<int, std::vector<Detection>> det_by_cat;
  for (const Detection& d : detections) det_by_cat[d.category_id].push_back(d);
  std::map<int, std::vector<GroundTruth>> truth_by_cat;
  for (const GroundTruth& t : truths) truth_by_cat[t.category_id].push_back(t);

  MatchConfig curve_cfg = config;
  curve_cfg.iou_threshold = 0.5;
  for (const auto& [category, ap50] : ap_at.front()) {
    CategoryReport row;
    row.category_id = category;
    row.ap50 = ap50;
    row.ap50_trapezoid = ap_trap.at(category);
    double sum = 0.0;
    for (const auto& per_t : ap_at) sum += per_t.at(category);
    row.ap50_95 = sum / static_cast<double>(ap_at.size());
    row.tp = tp[category];
    row.fp = fp[category];
    row.fn = fn[category];
    row.precision = precision(row.tp, row.fp);
    row.recall = recall(row.tp, row.fn);
    row.curve = pr_curve(det_by_cat[category], truth_by_cat[category], curve_cfg);
    report.categories.push_back(std::move(row));
  }

  if (!report.categories.empty()) {
    report.map50 = mean_average_precision(ap_at.front());
    report.map50_trapezoid = mean_average_precision(ap_trap);
    double sum = 0.0;
    for (const auto& per_t : ap_at) sum += mean_average_precision(per_t);
    report.map50_95 = sum / static_cast<double>(ap_at.size());
  }
  return report;
}

std::string metrics_csv(const CorpusReport& report) {
  using text::format_real;
  std::ostringstream os;
  os << "category_id,ap,precision,recall,tp,fp,fn\n";
  for (const CategoryReport& c : report.categories) {
    os << c.category_id << ',' << format_real(c.ap50) << ',' << format_real(c.precision) << ','
       << format_real(c.recall) << ',' << c.tp << ',' << c.fp << ',' << c.fn << '\n';
  }
  os << "mAP50," << format_real(report.map50) << '\n';
  os << "mAP50-95," << format_real(report.map50_95) << '\n';
  return os.str();
}

std::string ap_modes_csv(const CorpusReport& report) {
  using text::format_real;
  std::ostringstream os;
  os << "category_id,ap101,ap_trapezoid\n";
  for (const CategoryReport& c : report.categories) {
    os << c.category_id << ',' << format_real(c.ap50) << ',' << format_real(c.ap50_trapezoid) << '\n';
  }
  os << "mAP50," << format_real(report.map50) << ',' << format_real(report.map50_trapezoid) << '\n';
  return os.str();
}

std::vector<Detection> parse_detections_csv(std::string_view text) {
  std::vector<Detection> out;
  std::size_t line_no = 0;
  bool header_seen = false;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto end = text.find('\n', pos);
    std::string_view line = text.substr(pos, end == std::string_view::npos ? text.size() - pos : end - pos);
    pos = end == std::string_view::npos ? text.size() + 1 : end + 1;
    ++line_no;
    line = text::trim(line);
    if (line.empty()) continue;
    if (!header_seen) {
      if (line != "image_id,category_id,confidence,x1,y1,x2,y2") {
        throw ParseError("line 1: expected header image_id,category_id,confidence,x1,y1,x2,y2");
      }
      header_seen = true;
      continue;
    }
    const auto f = text::split(line, ',');
    const std::string where = "line " + std::to_string(line_no);
    if (f.size() != 7) throw ParseError(where + ": expected 7 fields, got " + std::to_string(f.size()));
    Detection d;
    d.image_id = std::string(text::trim(f[0]));
    d.category_id = static_cast<int>(text::parse_int(f[1], where + " category_id"));
    d.confidence = text::parse_real(f[2], where + " confidence");
    if (!(d.confidence >= 0.0 && d.confidence <= 1.0)) {
      throw ParseError(where + ": confidence outside [0, 1]");
    }
    d.box = BoundingBox{text::parse_real(f[3], where + " x1"), text::parse_real(f[4], where + " y1"),
                        text::parse_real(f[5], where + " x2"), text::parse_real(f[6], where + " y2")}
                .normalized();
    out.push_back(std::move(d));
  }
  if (!header_seen) throw ParseError("detections file is empty (missing header)");
  return out;
}

std::vector<Detection> read_detections_csv(const std::string& path) {
  try {
    return parse_detections_csv(text::read_file(path));
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

std::string detections_csv(std::span<const Detection> detections) {
  using text::format_real;
  std::ostringstream os;
  os << "image_id,category_id,confidence,x1,y1,x2,y2\n";
  for (const Detection& d : detections) {
    os << d.image_id << ',' << d.category_id << ',' << format_real(d.confidence) << ','
       << format_real(d.box.x1) << ',' << format_real(d.box.y1) << ',' << format_real(d.box.x2)
       << ',' << format_real(d.box.y2) << '\n';
  }
  return os.str();
}

}  // namespace trapeval::eval
