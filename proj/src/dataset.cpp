#include "trapeval/dataset.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "trapeval/error.hpp"
#include "trapeval/text.hpp"

namespace trapeval::dataset {

using nlohmann::json;

namespace {

bool is_leap(int y) { return (y % 4 == 0 && y % 100 != 0) || y % 400 == 0; }

int days_in_month(int y, int m) {
  static constexpr int kDays[] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  return m == 2 && is_leap(y) ? 29 : kDays[m - 1];
}

// Portable draws: std::uniform_*_distribution differs across standard
// libraries, which would make splits depend on the toolchain.
double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::size_t below(std::mt19937_64& rng, std::size_t n) {
  return std::min(n - 1, static_cast<std::size_t>(unit(rng) * static_cast<double>(n)));
}

template <typename T>
void shuffle(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(rng, i)]);
}

// ---- JSON helpers -----------------------------------------------------------

const json& member(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object()) throw ParseError(where + ": expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) throw ParseError(where + "." + key + ": missing");
  return *it;
}

long long as_int(const json& v, const std::string& where) {
  if (v.is_number_integer()) return v.get<long long>();
  if (v.is_string()) return text::parse_int(v.get<std::string>(), where);
  throw ParseError(where + ": expected an integer");
}

double as_real(const json& v, const std::string& where) {
  if (!v.is_number()) throw ParseError(where + ": expected a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) throw ParseError(where + ": not finite");
  return d;
}

std::string as_id(const json& v, const std::string& where) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  throw ParseError(where + ": expected a string or integer id");
}

std::string as_string(const json& v, const std::string& where) {
  if (!v.is_string()) throw ParseError(where + ": expected a string");
  return v.get<std::string>();
}

const json& array_member(const json& root, const char* key) {
  const json& arr = member(root, key, "root");
  if (!arr.is_array()) throw ParseError(std::string(key) + ": expected an array");
  return arr;
}

}  // namespace

// ---- dates ------------------------------------------------------------------

int Date::day_of_year() const noexcept {
  int n = day;
  for (int m = 1; m < month; ++m) n += days_in_month(year, m);
  return n;
}

std::string Date::to_string() const {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02d", year, month, day);
  return buf;
}

Date parse_date(std::string_view s) {
  const auto fail = [&] { return ParseError("bad date '" + std::string(s) + "' (expected YYYY-MM-DD)"); };
  if (s.size() < 10 || s[4] != '-' || s[7] != '-') throw fail();
  if (s.size() > 10 && s[10] != ' ' && s[10] != 'T') throw fail();
  for (std::size_t i : {0, 1, 2, 3, 5, 6, 8, 9}) {
    if (!std::isdigit(static_cast<unsigned char>(s[i]))) throw fail();
  }
  const auto num = [&](std::size_t pos, std::size_t len) {
    int v = 0;
    for (std::size_t i = pos; i < pos + len; ++i) v = v * 10 + (s[i] - '0');
    return v;
  };
  Date d{num(0, 4), num(5, 2), num(8, 2)};
  if (d.month < 1 || d.month > 12 || d.day < 1 || d.day > days_in_month(d.year, d.month)) throw fail();
  return d;
}

bool is_odd_day(const Date& date, DayBasis basis) noexcept {
  const int n = basis == DayBasis::DayOfMonth ? date.day : date.day_of_year();
  return n % 2 == 1;
}

// ---- annotations --------------------------------------------------------------

AnnotationSet parse_annotations_json(std::string_view json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    const std::size_t byte = std::min(e.byte, json_text.size());
    const auto line = 1 + std::count(json_text.begin(), json_text.begin() + static_cast<std::ptrdiff_t>(byte), '\n');
    throw ParseError("annotations JSON, line " + std::to_string(line) + ": " + e.what());
  }

  AnnotationSet set;
  std::set<int> category_ids;
  const json& cats = array_member(root, "categories");
  for (std::size_t i = 0; i < cats.size(); ++i) {
    const std::string where = "categories[" + std::to_string(i) + "]";
    Category c;
    c.id = static_cast<int>(as_int(member(cats[i], "id", where), where + ".id"));
    c.name = as_string(member(cats[i], "name", where), where + ".name");
    if (!category_ids.insert(c.id).second) throw ParseError(where + ".id: duplicate category " + std::to_string(c.id));
    set.categories.push_back(std::move(c));
  }

  std::unordered_map<std::string, std::size_t> by_id;
  const json& imgs = array_member(root, "images");
  for (std::size_t i = 0; i < imgs.size(); ++i) {
    const std::string where = "images[" + std::to_string(i) + "]";
    const json& j = imgs[i];
    ImageRecord r;
    r.image_id = as_id(member(j, "id", where), where + ".id");
    const long long w = as_int(member(j, "width", where), where + ".width");
    const long long h = as_int(member(j, "height", where), where + ".height");
    if (w < 1 || h < 1 || w > 1 << 20 || h > 1 << 20) throw ParseError(where + ": image size out of range");
    r.width = static_cast<int>(w);
    r.height = static_cast<int>(h);
    r.location_id = static_cast<int>(as_int(member(j, "location", where), where + ".location"));
    const char* date_key = j.contains("date") ? "date" : "date_captured";
    try {
      r.capture_date = parse_date(as_string(member(j, date_key, where), where + "." + date_key));
    } catch (const ParseError& e) {
      throw ParseError(where + "." + date_key + ": " + e.what());
    }
    if (j.contains("file_name")) r.file_name = as_string(j["file_name"], where + ".file_name");
    if (j.contains("seq_id")) r.seq_id = as_id(j["seq_id"], where + ".seq_id");
    if (!by_id.emplace(r.image_id, set.images.size()).second) {
      throw ParseError(where + ".id: duplicate image '" + r.image_id + "'");
    }
    set.images.push_back(std::move(r));
  }

  const json& anns = array_member(root, "annotations");
  for (std::size_t i = 0; i < anns.size(); ++i) {
    const std::string where = "annotations[" + std::to_string(i) + "]";
    const json& j = anns[i];
    const std::string image_id = as_id(member(j, "image_id", where), where + ".image_id");
    auto it = by_id.find(image_id);
    if (it == by_id.end()) throw ParseError(where + ".image_id: unknown image '" + image_id + "'");
    const int cat = static_cast<int>(as_int(member(j, "category_id", where), where + ".category_id"));
    if (!category_ids.contains(cat)) {
      throw ParseError(where + ".category_id: unknown category " + std::to_string(cat));
    }
    if (!j.contains("bbox")) continue;
    const json& b = j["bbox"];
    if (!b.is_array() || b.size() != 4) throw ParseError(where + ".bbox: expected [x, y, w, h]");
    double v[4];
    for (std::size_t k = 0; k < 4; ++k) v[k] = as_real(b[k], where + ".bbox[" + std::to_string(k) + "]");
    if (v[2] < 0.0 || v[3] < 0.0) throw ParseError(where + ".bbox: negative width or height");
    ImageRecord& r = set.images[it->second];
    r.annotations.push_back({bbox::clamp(BoundingBox::from_xywh(v[0], v[1], v[2], v[3]), r.width, r.height), cat,
                             r.image_id});
  }
  return set;
}

AnnotationSet parse_annotations(const std::string& path) {
  try {
    return parse_annotations_json(text::read_file(path));
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

std::string write_annotations_json(const AnnotationSet& set) {
  json images = json::array();
  json anns = json::array();
  long long next_id = 1;
  for (const ImageRecord& r : set.images) {
    json img = {{"id", r.image_id},
                {"width", r.width},
                {"height", r.height},
                {"location", r.location_id},
                {"date", r.capture_date.to_string()},
                {"file_name", r.file_name}};
    if (!r.seq_id.empty()) img["seq_id"] = r.seq_id;
    images.push_back(std::move(img));
    for (const GroundTruth& g : r.annotations) {
      anns.push_back({{"id", next_id++},
                      {"image_id", r.image_id},
                      {"category_id", g.category_id},
                      {"bbox", {g.box.x1, g.box.y1, g.box.width(), g.box.height()}}});
    }
  }
  json cats = json::array();
  for (const Category& c : set.categories) cats.push_back({{"id", c.id}, {"name", c.name}});
  json root = {{"images", std::move(images)}, {"annotations", std::move(anns)}, {"categories", std::move(cats)}};
  return root.dump(1) + "\n";
}

std::vector<int> empty_category_ids(std::span<const Category> categories) {
  std::vector<int> ids;
  for (const Category& c : categories) {
    std::string lower = c.name;
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
    if (lower == "empty") ids.push_back(c.id);
  }
  return ids;
}

std::vector<ImageRecord> filter_empty(std::span<const ImageRecord> records, std::span<const int> empty_categories) {
  const std::unordered_set<int> drop(empty_categories.begin(), empty_categories.end());
  std::vector<ImageRecord> out;
  for (const ImageRecord& r : records) {
    ImageRecord kept = r;
    std::erase_if(kept.annotations, [&](const GroundTruth& g) { return drop.contains(g.category_id); });
    if (!kept.annotations.empty()) out.push_back(std::move(kept));
  }
  return out;
}

// ---- split ------------------------------------------------------------------

SplitResult split_cis_trans(std::span<const ImageRecord> records, const SplitConfig& cfg) {
  if (!(cfg.cis_val_fraction >= 0.0 && cfg.cis_val_fraction <= 1.0)) {
    throw ConfigError("cis_val_fraction must lie in [0, 1]");
  }
  if (cfg.trans_test_count < 1) throw ConfigError("trans_test_count must be positive");

  std::set<int> location_set;
  for (const ImageRecord& r : records) location_set.insert(r.location_id);
  const auto required = static_cast<std::size_t>(cfg.trans_test_count) + 1;
  if (location_set.size() < required) {
    throw ConfigError("split needs at least " + std::to_string(required) + " distinct locations, found " +
                      std::to_string(location_set.size()));
  }

  std::mt19937_64 rng(cfg.seed);
  std::vector<int> locations(location_set.begin(), location_set.end());
  SplitResult out;

  if (cfg.trans_test_locations.empty()) {
    shuffle(locations, rng);
    out.trans_test_locations.assign(locations.begin(), locations.begin() + cfg.trans_test_count);
  } else {
    out.trans_test_locations = cfg.trans_test_locations;
    std::sort(out.trans_test_locations.begin(), out.trans_test_locations.end());
    if (std::adjacent_find(out.trans_test_locations.begin(), out.trans_test_locations.end()) !=
        out.trans_test_locations.end()) {
      throw ConfigError("trans-test locations contain a duplicate");
    }
    if (out.trans_test_locations.size() != static_cast<std::size_t>(cfg.trans_test_count)) {
      throw ConfigError("expected " + std::to_string(cfg.trans_test_count) + " trans-test locations, got " +
                        std::to_string(out.trans_test_locations.size()));
    }
    for (int id : out.trans_test_locations) {
      if (!location_set.contains(id)) throw ConfigError("trans-test location " + std::to_string(id) + " has no images");
    }
  }
  std::sort(out.trans_test_locations.begin(), out.trans_test_locations.end());
  const std::set<int> trans_test(out.trans_test_locations.begin(), out.trans_test_locations.end());

  if (cfg.trans_val_location) {
    out.trans_val_location = *cfg.trans_val_location;
    if (!location_set.contains(out.trans_val_location)) {
      throw ConfigError("trans-val location " + std::to_string(out.trans_val_location) + " has no images");
    }
    if (trans_test.contains(out.trans_val_location)) {
      throw ConfigError("trans-val location " + std::to_string(out.trans_val_location) + " is also a trans-test location");
    }
  } else {
    std::vector<int> rest;
    for (int id : location_set)
      if (!trans_test.contains(id)) rest.push_back(id);
    out.trans_val_location = rest[below(rng, rest.size())];
  }

  // Even-day cis images grouped by sequence, in first-appearance order.
  std::vector<std::size_t> even;
  std::vector<std::vector<std::size_t>> groups;
  std::unordered_map<std::string, std::size_t> group_of;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const ImageRecord& r = records[i];
    if (trans_test.contains(r.location_id) || r.location_id == out.trans_val_location) continue;
    if (is_odd_day(r.capture_date, cfg.day_basis)) continue;
    even.push_back(i);
    // Records without a sequence form singleton groups.
    const std::string key = r.seq_id.empty() ? std::string(1, '\0') + r.image_id : "s" + r.seq_id;
    auto [it, fresh] = group_of.emplace(key, groups.size());
    if (fresh) groups.emplace_back();
    groups[it->second].push_back(i);
  }
  std::vector<std::size_t> order(groups.size());
  for (std::size_t g = 0; g < order.size(); ++g) order[g] = g;
  shuffle(order, rng);
  const auto target = static_cast<std::size_t>(std::llround(cfg.cis_val_fraction * static_cast<double>(even.size())));
  std::vector<bool> to_val(records.size(), false);
  std::size_t taken = 0;
  for (std::size_t g : order) {
    if (taken >= target) break;
    for (std::size_t i : groups[g]) to_val[i] = true;
    taken += groups[g].size();
  }

  for (std::size_t i = 0; i < records.size(); ++i) {
    const ImageRecord& r = records[i];
    if (trans_test.contains(r.location_id)) {
      out.trans_test.push_back(r);
    } else if (r.location_id == out.trans_val_location) {
      out.trans_val.push_back(r);
    } else if (is_odd_day(r.capture_date, cfg.day_basis)) {
      out.cis_test.push_back(r);
    } else if (to_val[i]) {
      out.cis_val.push_back(r);
    } else {
      out.train.push_back(r);
    }
  }
  return out;
}

std::vector<std::string> verify_split(const SplitResult& split, DayBasis basis, std::optional<std::size_t> input_count) {
  std::vector<std::string> problems;
  const std::set<int> trans_test(split.trans_test_locations.begin(), split.trans_test_locations.end());
  if (trans_test.contains(split.trans_val_location)) problems.push_back("trans-val location is also trans-test");

  std::set<int> cis_locations;
  for (const auto* list : {&split.train, &split.cis_val, &split.cis_test})
    for (const ImageRecord& r : *list) cis_locations.insert(r.location_id);
  for (int id : cis_locations) {
    if (trans_test.contains(id) || id == split.trans_val_location) {
      problems.push_back("location " + std::to_string(id) + " is in both cis and trans splits");
    }
  }
  for (const ImageRecord& r : split.trans_val) {
    if (r.location_id != split.trans_val_location) {
      problems.push_back("trans_val image " + r.image_id + " comes from location " + std::to_string(r.location_id));
    }
  }
  for (const ImageRecord& r : split.trans_test) {
    if (!trans_test.contains(r.location_id)) {
      problems.push_back("trans_test image " + r.image_id + " comes from location " + std::to_string(r.location_id));
    }
  }
  for (const ImageRecord& r : split.cis_test) {
    if (!is_odd_day(r.capture_date, basis)) problems.push_back("cis_test image " + r.image_id + " is from an even day");
  }
  for (const auto* list : {&split.train, &split.cis_val}) {
    for (const ImageRecord& r : *list) {
      if (is_odd_day(r.capture_date, basis)) problems.push_back("image " + r.image_id + " is from an odd day");
    }
  }

  std::unordered_set<std::string> ids;
  std::size_t total = 0;
  for (const auto* list : {&split.train, &split.cis_val, &split.cis_test, &split.trans_val, &split.trans_test}) {
    for (const ImageRecord& r : *list) {
      ++total;
      if (!ids.insert(r.image_id).second) problems.push_back("image " + r.image_id + " appears twice");
    }
  }
  std::unordered_set<std::string> train_seqs;
  for (const ImageRecord& r : split.train)
    if (!r.seq_id.empty()) train_seqs.insert(r.seq_id);
  std::set<std::string> shared;
  for (const ImageRecord& r : split.cis_val)
    if (!r.seq_id.empty() && train_seqs.contains(r.seq_id)) shared.insert(r.seq_id);
  for (const std::string& seq : shared) problems.push_back("sequence " + seq + " is shared by train and cis_val");
  if (input_count && *input_count != total) {
    problems.push_back("split holds " + std::to_string(total) + " images, input had " + std::to_string(*input_count));
  }
  return problems;
}

SplitCounts split_counts(const SplitResult& split) {
  return {split.train.size(), split.cis_val.size(), split.cis_test.size(), split.trans_test.size()};
}

bool compare_split_counts(const SplitResult& split, const SplitCounts& reference, std::string& report) {
  const SplitCounts got = split_counts(split);
  std::ostringstream os;
  os << "split,expected,actual\n";
  const std::pair<const char*, std::pair<std::size_t, std::size_t>> rows[] = {
      {"train", {reference.train, got.train}},
      {"cis_val", {reference.cis_val, got.cis_val}},
      {"cis_test", {reference.cis_test, got.cis_test}},
      {"trans_test", {reference.trans_test, got.trans_test}},
  };
  bool match = true;
  for (const auto& [name, v] : rows) {
    os << name << ',' << v.first << ',' << v.second << '\n';
    match = match && v.first == v.second;
  }
  if (!match) {
    std::map<int, std::array<std::size_t, 5>> per_location;
    const std::vector<ImageRecord>* lists[] = {&split.train, &split.cis_val, &split.cis_test, &split.trans_val,
                                               &split.trans_test};
    for (std::size_t k = 0; k < 5; ++k)
      for (const ImageRecord& r : *lists[k]) ++per_location[r.location_id][k];
    os << "location,train,cis_val,cis_test,trans_val,trans_test\n";
    for (const auto& [loc, c] : per_location) {
      os << loc << ',' << c[0] << ',' << c[1] << ',' << c[2] << ',' << c[3] << ',' << c[4] << '\n';
    }
  }
  report = os.str();
  return match;
}

// ---- raster transforms ------------------------------------------------------

namespace {

void check_raster(const ImageRecord& r, const Tensor3& raster) {
  if (raster.height() != r.height || raster.width() != r.width) {
    throw ShapeError("raster " + raster.shape().to_string() + " does not match image " + r.image_id + " (" +
                     std::to_string(r.width) + "x" + std::to_string(r.height) + ")");
  }
}

template <typename F>
void map_boxes(ImageRecord& r, F&& f) {
  for (GroundTruth& g : r.annotations) g.box = bbox::clamp(f(g.box).normalized(), r.width, r.height);
}

void check_range(double v, double lo, double hi, const char* what) {
  if (!(v >= lo && v <= hi)) {
    throw ConfigError(std::string(what) + " " + text::format_real(v) + " outside [" + text::format_real(lo) + ", " +
                      text::format_real(hi) + "]");
  }
}

Tensor3 rotate90(const Tensor3& in) {
  const int w = in.width();
  Tensor3 out(in.channels(), w, in.height());
  for (int c = 0; c < in.channels(); ++c)
    for (int y = 0; y < in.height(); ++y)
      for (int x = 0; x < w; ++x) out.at(c, w - 1 - x, y) = in.at(c, y, x);
  return out;
}

Tensor3 zoom(const Tensor3& in, double s) {
  Tensor3 out(in.channels(), in.height(), in.width());
  const double cx = 0.5 * in.width();
  const double cy = 0.5 * in.height();
  for (int y = 0; y < in.height(); ++y) {
    const double sy = std::floor((y + 0.5 - cy) / s + cy);
    if (sy < 0.0 || sy >= in.height()) continue;
    for (int x = 0; x < in.width(); ++x) {
      const double sx = std::floor((x + 0.5 - cx) / s + cx);
      if (sx < 0.0 || sx >= in.width()) continue;
      for (int c = 0; c < in.channels(); ++c) out.at(c, y, x) = in.at(c, static_cast<int>(sy), static_cast<int>(sx));
    }
  }
  return out;
}

}  // namespace

std::pair<ImageRecord, Tensor3> resize_with_boxes(const ImageRecord& record, const Tensor3& raster, int target) {
  check_raster(record, raster);
  if (target < 1) throw ConfigError("resize target must be positive");
  ImageRecord r = record;
  const double fx = static_cast<double>(target) / record.width;
  const double fy = static_cast<double>(target) / record.height;
  r.width = target;
  r.height = target;
  map_boxes(r, [&](const BoundingBox& b) { return BoundingBox{b.x1 * fx, b.y1 * fy, b.x2 * fx, b.y2 * fy}; });
  return {std::move(r), resize_nearest(raster, target, target)};
}

std::pair<ImageRecord, Tensor3> augment(const ImageRecord& record, const Tensor3& raster,
                                        std::span<const AugmentOp> ops) {
  check_raster(record, raster);
  for (const AugmentOp& op : ops) {
    switch (op.kind) {
      case AugmentOp::Kind::Rotate90: break;
      case AugmentOp::Kind::Scale: check_range(op.value, 0.5, 1.5, "scale"); break;
      case AugmentOp::Kind::Brightness: check_range(op.value, -64.0, 64.0, "brightness"); break;
      case AugmentOp::Kind::Contrast: check_range(op.value, 0.5, 1.5, "contrast"); break;
    }
  }
  ImageRecord r = record;
  Tensor3 img = raster;
  for (const AugmentOp& op : ops) {
    switch (op.kind) {
      case AugmentOp::Kind::Rotate90: {
        const double w = r.width;
        img = rotate90(img);
        std::swap(r.width, r.height);
        map_boxes(r, [&](const BoundingBox& b) { return BoundingBox{b.y1, w - b.x1, b.y2, w - b.x2}; });
        break;
      }
      case AugmentOp::Kind::Scale: {
        const double s = op.value;
        const double cx = 0.5 * r.width;
        const double cy = 0.5 * r.height;
        img = zoom(img, s);
        map_boxes(r, [&](const BoundingBox& b) {
          return BoundingBox{(b.x1 - cx) * s + cx, (b.y1 - cy) * s + cy, (b.x2 - cx) * s + cx, (b.y2 - cy) * s + cy};
        });
        break;
      }
      case AugmentOp::Kind::Brightness:
        for (double& v : img.values()) v = std::clamp(v + op.value, 0.0, 255.0);
        break;
      case AugmentOp::Kind::Contrast:
        for (double& v : img.values()) v = std::clamp((v - 127.5) * op.value + 127.5, 0.0, 255.0);
        break;
    }
  }
  std::erase_if(r.annotations, [](const GroundTruth& g) { return g.box.area() < 1.0; });
  return {std::move(r), std::move(img)};
}

std::vector<AugmentOp> random_augment_ops(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<AugmentOp> ops;
  const std::size_t turns = below(rng, 4);
  for (std::size_t i = 0; i < turns; ++i) ops.push_back(AugmentOp::rotate90());
  ops.push_back(AugmentOp::scale(0.5 + unit(rng)));
  ops.push_back(AugmentOp::brightness(-64.0 + 128.0 * unit(rng)));
  ops.push_back(AugmentOp::contrast(0.5 + unit(rng)));
  return ops;
}

// ---- distribution -------------------------------------------------------------

std::map<int, std::size_t> class_distribution(std::span<const ImageRecord> records) {
  std::map<int, std::size_t> counts;
  for (const ImageRecord& r : records)
    for (const GroundTruth& g : r.annotations) ++counts[g.category_id];
  return counts;
}

std::string distribution_csv(const std::map<int, std::size_t>& counts, std::span<const Category> categories) {
  std::ostringstream os;
  os << "category_id,name,count\n";
  for (const auto& [id, n] : counts) {
    auto it = std::find_if(categories.begin(), categories.end(), [&](const Category& c) { return c.id == id; });
    os << id << ',' << (it == categories.end() ? std::string() : it->name) << ',' << n << '\n';
  }
  return os.str();
}

}  // namespace trapeval::dataset
