#include "trapeval/cli.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "trapeval/dataset.hpp"
#include "trapeval/error.hpp"
#include "trapeval/eval.hpp"
#include "trapeval/gradcam.hpp"
#include "trapeval/graph.hpp"
#include "trapeval/losses.hpp"
#include "trapeval/raster.hpp"
#include "trapeval/svg.hpp"
#include "trapeval/text.hpp"

namespace trapeval::cli {
namespace fs = std::filesystem;

namespace {

// Raised for argument combinations CLI11 cannot express; maps to exit 2.
class UsageError : public Error {
 public:
  using Error::Error;
};

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

fs::path prepare_out_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw Error("cannot create output directory '" + dir + "'");
  return fs::path(dir);
}

svg::Plot make_plot(std::string title, std::string x_label, std::string y_label) {
  svg::Plot p;
  p.title = std::move(title);
  p.x_label = std::move(x_label);
  p.y_label = std::move(y_label);
  return p;
}

svg::Plot pr_plot(std::string title) {
  svg::Plot p = make_plot(std::move(title), "recall", "precision");
  p.x_range = {0.0, 1.0};
  p.y_range = {0.0, 1.05};
  return p;
}

void write(const fs::path& path, std::string_view contents) { text::write_file(path.string(), contents); }

BoundingBox parse_box(const std::string& s, const char* what) {
  const auto parts = text::split(s, ',');
  if (parts.size() != 4) throw UsageError(std::string(what) + " expects x1,y1,x2,y2");
  double v[4];
  for (std::size_t i = 0; i < 4; ++i) v[i] = text::parse_real(text::trim(parts[i]), what);
  return {v[0], v[1], v[2], v[3]};
}

std::vector<int> parse_int_list(const std::string& s, const char* what) {
  std::vector<int> out;
  if (text::trim(s).empty()) return out;
  for (const auto& p : text::split(s, ',')) out.push_back(static_cast<int>(text::parse_int(text::trim(p), what)));
  return out;
}

// ---- eval -------------------------------------------------------------------

struct EvalArgs {
  std::string detections;
  std::string annotations;
  std::string out_dir{"eval_out"};
  eval::MatchConfig match;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  a.match.validate();
  const unsigned threads = threads_from_env(
      std::getenv("TRAPEVAL_THREADS") ? std::optional<std::string_view>(std::getenv("TRAPEVAL_THREADS")) : std::nullopt);
  const dataset::AnnotationSet set = dataset::parse_annotations(a.annotations);
  const std::vector<Detection> dets = eval::read_detections_csv(a.detections);

  const auto empties = dataset::empty_category_ids(set.categories);
  std::vector<int> categories;
  for (const auto& c : set.categories)
    if (std::find(empties.begin(), empties.end(), c.id) == empties.end()) categories.push_back(c.id);
  std::sort(categories.begin(), categories.end());
  std::vector<GroundTruth> truths;
  for (const auto& r : set.images)
    for (const auto& g : r.annotations)
      if (std::binary_search(categories.begin(), categories.end(), g.category_id)) truths.push_back(g);

  std::set<std::string> image_ids;
  for (const auto& r : set.images) image_ids.insert(r.image_id);
  for (const Detection& d : dets) {
    if (!image_ids.contains(d.image_id)) throw ParseError("detection refers to unknown image '" + d.image_id + "'");
  }

  const eval::CorpusReport report = eval::evaluate_corpus(dets, truths, categories, a.match, threads);
  const fs::path dir = prepare_out_dir(a.out_dir);
  const std::string metrics = eval::metrics_csv(report);
  write(dir / "metrics.csv", metrics);
  write(dir / "ap_modes.csv", eval::ap_modes_csv(report));
  write(dir / "confusion.csv", report.confusion.to_csv());

  std::map<int, std::string> names;
  for (const auto& c : set.categories) names[c.id] = c.name;
  std::vector<svg::Series> all;
  for (const auto& row : report.categories) {
    svg::Series s{std::to_string(row.category_id) + " " + names[row.category_id] + " (AP " +
                      text::format_real(std::round(row.ap50 * 1000.0) / 1000.0) + ")",
                  {}};
    for (const auto& p : row.curve) s.points.emplace_back(p.recall, p.precision);
    const svg::Plot plot = pr_plot("Precision-recall, category " + std::to_string(row.category_id));
    write(dir / ("pr_" + std::to_string(row.category_id) + ".svg"), svg::line_plot(plot, std::span(&s, 1)));
    all.push_back(std::move(s));
  }
  write(dir / "pr_all.svg", svg::line_plot(pr_plot("Precision-recall, all categories"), all));

  out << metrics;
  return 0;
}

// ---- losslab ------------------------------------------------------------------

struct LossArgs {
  std::string kinds{"all"};
  std::string start{"0,0,1,1"};
  std::string gt{"2,2,3,3"};
  double step{0.01};
  int iters{500};
  std::string out_dir{"losslab_out"};
  losses::LossParams params;
};

int cmd_losslab(const LossArgs& a, std::ostream& out, std::ostream& err) {
  a.params.validate();
  if (!(a.step > 0.0) || a.iters < 0) throw UsageError("--step must be positive and --iters non-negative");
  const BoundingBox start = parse_box(a.start, "--start");
  const BoundingBox gt = parse_box(a.gt, "--gt");
  std::vector<losses::LossKind> kinds;
  if (lower(a.kinds) == "all") {
    kinds.assign(losses::kAllLossKinds.begin(), losses::kAllLossKinds.end());
  } else {
    for (const auto& k : text::split(a.kinds, ',')) kinds.push_back(losses::parse_loss_kind(text::trim(k)));
  }
  const fs::path dir = prepare_out_dir(a.out_dir);

  int status = 0;
  std::vector<svg::Series> curves;
  out << "kind,status,final_loss,final_iou,final_center_dist\n";
  for (losses::LossKind kind : kinds) {
    const std::string name(losses::to_string(kind));
    try {
      const auto traj = losses::simulate_regression(kind, start, gt, {a.step, a.iters, std::nullopt}, a.params);
      write(dir / ("trajectory_" + lower(name) + ".csv"), losses::trajectory_csv(traj));
      svg::Series s{name, {}};
      for (const auto& p : traj) s.points.emplace_back(p.iter, p.loss);
      curves.push_back(std::move(s));
      const auto& last = traj.back();
      out << name << ",ok," << text::format_real(last.loss) << ',' << text::format_real(last.iou) << ','
          << text::format_real(last.center_dist) << '\n';
    } catch (const DivergenceError& e) {
      err << "losslab: " << name << " diverged at iteration " << e.iteration() << ": " << e.what() << '\n';
      out << name << ",diverged@" << e.iteration() << ",,,\n";
      status = 1;
    } catch (const GeometryError& e) {
      err << "losslab: " << name << ": " << e.what() << '\n';
      out << name << ",error,,,\n";
      status = 1;
    }
  }
  const svg::Plot loss_plot = make_plot("Loss during box regression", "iteration", "loss");
  write(dir / "losses.svg", svg::line_plot(loss_plot, curves));

  // Focusing coefficient over beta in [0, 10].
  std::ostringstream focus_csv;
  focus_csv << "beta,r\n";
  svg::Series focus{"r(beta)", {}};
  for (int i = 0; i <= 1000; ++i) {
    const double beta = i / 100.0;
    const double r = losses::focusing_coefficient(beta, a.params);
    focus_csv << text::format_real(beta) << ',' << text::format_real(r) << '\n';
    focus.points.emplace_back(beta, r);
  }
  write(dir / "focusing.csv", focus_csv.str());
  const double peak = 1.0 / std::log(a.params.alpha);
  svg::Plot focus_plot = make_plot("Focusing coefficient", "outlier degree beta", "r");
  focus_plot.markers = {{peak, "beta = 1/ln(alpha) = " + text::format_real(std::round(peak * 1000.0) / 1000.0)},
                        {a.params.delta, "r = 1"}};
  write(dir / "focusing.svg", svg::line_plot(focus_plot, std::span(&focus, 1)));
  return status;
}

// ---- gradcam ------------------------------------------------------------------

struct GradcamArgs {
  std::string graph_file;
  std::string variant{"baseline"};
  std::string wiring{"p2-pan"};
  int size{640};
  std::uint64_t seed{0};
  std::string image;
  std::string layer;
  std::optional<int> category;
  double alpha_overlay{0.5};
  std::string out_dir{"gradcam_out"};
};

int cmd_gradcam(const GradcamArgs& a, std::ostream& out) {
  if (!(a.alpha_overlay >= 0.0 && a.alpha_overlay <= 1.0)) throw ConfigError("--alpha-overlay must lie in [0, 1]");
  graph::GraphSpec spec;
  if (!a.graph_file.empty()) {
    spec = graph::parse_graph(text::read_file(a.graph_file));
  } else {
    graph::BuildOptions opts;
    opts.input_size = a.size;
    opts.seed = a.seed;
    opts.wiring = graph::parse_wiring(a.wiring);
    spec = graph::build_graph(graph::parse_variant(a.variant), opts);
  }
  if (!spec.contains(a.layer)) throw GraphError("graph has no layer '" + a.layer + "'");
  const Tensor3 image = raster::read_ppm(a.image);
  Tensor3 input = image;
  for (double& v : input.values()) v /= 255.0;

  auto model = std::make_shared<const graph::Model>(std::move(spec));
  const graph::GraphRun run = graph::forward(model, input);
  const gradcam::Selection sel = gradcam::default_selection(run, a.layer, a.category);
  const gradcam::Heatmap heat = gradcam::gradcam_heatmap(run, a.layer, sel.terms);

  const fs::path dir = prepare_out_dir(a.out_dir);
  raster::write_ppm(gradcam::colorize(heat), (dir / "heatmap.ppm").string());
  Tensor3 gray = heat.to_tensor();
  for (double& v : gray.values()) v *= 255.0;
  raster::write_pgm(gray, (dir / "heatmap.pgm").string());
  raster::write_ppm(gradcam::overlay(image, heat, a.alpha_overlay), (dir / "overlay.ppm").string());

  out << "layer," << a.layer << "\ncategory," << sel.category << "\nscore," << text::format_real(sel.logit) << '\n';
  return 0;
}

// ---- split --------------------------------------------------------------------

struct SplitArgs {
  std::string annotations;
  std::string trans_test;
  std::optional<int> trans_val;
  double cis_val_fraction{0.05};
  std::uint64_t seed{0};
  std::string day_basis{"month"};
  bool compare{false};
  std::string out_dir{"split_out"};
};

int cmd_split(const SplitArgs& a, std::ostream& out, std::ostream& err) {
  const dataset::AnnotationSet set = dataset::parse_annotations(a.annotations);
  const auto empties = dataset::empty_category_ids(set.categories);
  const auto records = dataset::filter_empty(set.images, empties);

  dataset::SplitConfig cfg;
  cfg.trans_test_locations = parse_int_list(a.trans_test, "--trans-test");
  cfg.trans_val_location = a.trans_val;
  cfg.cis_val_fraction = a.cis_val_fraction;
  cfg.seed = a.seed;
  if (a.day_basis == "month") {
    cfg.day_basis = dataset::DayBasis::DayOfMonth;
  } else if (a.day_basis == "year") {
    cfg.day_basis = dataset::DayBasis::DayOfYear;
  } else {
    throw UsageError("--day-basis must be 'month' or 'year'");
  }

  const dataset::SplitResult split = dataset::split_cis_trans(records, cfg);
  const auto problems = dataset::verify_split(split, cfg.day_basis, records.size());
  if (!problems.empty()) {
    for (const auto& p : problems) err << "split: " << p << '\n';
    throw Error("split invariants violated; nothing written");
  }

  const fs::path dir = prepare_out_dir(a.out_dir);
  const std::pair<const char*, const std::vector<dataset::ImageRecord>*> parts[] = {
      {"train", &split.train},         {"cis_val", &split.cis_val},      {"cis_test", &split.cis_test},
      {"trans_val", &split.trans_val}, {"trans_test", &split.trans_test}};
  std::ostringstream report;
  report << "split,images,annotations\n";
  for (const auto& [name, list] : parts) {
    write(dir / (std::string(name) + ".json"), dataset::write_annotations_json({*list, set.categories}));
    const auto dist = dataset::class_distribution(*list);
    write(dir / ("distribution_" + std::string(name) + ".csv"), dataset::distribution_csv(dist, set.categories));
    std::size_t n = 0;
    for (const auto& [id, count] : dist) n += count;
    report << name << ',' << list->size() << ',' << n << '\n';
  }
  report << "input," << set.images.size() << ",\nafter_empty_filter," << records.size() << ",\n";
  report << "trans_test_locations,";
  for (std::size_t i = 0; i < split.trans_test_locations.size(); ++i)
    report << (i ? " " : "") << split.trans_test_locations[i];
  report << ",\ntrans_val_location," << split.trans_val_location << ",\n";
  if (a.compare) {
    std::string cmp;
    const bool match = dataset::compare_split_counts(split, {12099, 1665, 12691, 18033}, cmp);
    report << cmp;
    if (!match) err << "split: counts differ from the reference split (see report)\n";
  }
  write(dir / "split_report.csv", report.str());
  out << report.str();
  return 0;
}

// ---- shapes -------------------------------------------------------------------

struct ShapesArgs {
  std::string variant{"baseline"};
  std::string wiring{"p2-pan"};
  int size{640};
  bool check{false};
  bool emit_graph{false};
  std::uint64_t seed{0};
};

int cmd_shapes(const ShapesArgs& a, std::ostream& out, std::ostream& err) {
  if (a.size <= 0 || a.size % 32 != 0) throw UsageError("--size must be a positive multiple of 32");
  if (a.check && a.size != 640) throw UsageError("--check compares against the 640 reference table");
  graph::BuildOptions opts;
  opts.input_size = a.size;
  opts.seed = a.seed;
  opts.wiring = graph::parse_wiring(a.wiring);
  const graph::Variant variant = graph::parse_variant(a.variant);
  const graph::GraphSpec spec = graph::build_graph(variant, opts);
  if (a.emit_graph) {
    out << graph::write_graph(spec);
    return 0;
  }
  const auto shapes = graph::propagate_shapes(spec);
  out << graph::shape_table(shapes);
  if (a.check) {
    const auto mismatches = graph::check_shapes(shapes, graph::reference_shapes(variant));
    for (const auto& m : mismatches) err << "shapes: " << m << '\n';
    if (!mismatches.empty()) return 1;
    err << "shapes: all reference dimensions match\n";
  }
  return 0;
}

}  // namespace

unsigned threads_from_env(std::optional<std::string_view> value) {
  if (!value || text::trim(*value).empty()) return 0;
  long long n = 0;
  try {
    n = text::parse_int(text::trim(*value), "TRAPEVAL_THREADS");
  } catch (const ParseError& e) {
    throw ConfigError(e.what());
  }
  if (n < 0 || n > 4096) throw ConfigError("TRAPEVAL_THREADS must be between 0 and 4096");
  return static_cast<unsigned>(n);
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Detection evaluation, box-loss study, Grad-CAM and dataset tooling", "trapeval"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "trapeval 1.0");

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "Score a detections CSV against annotations");
  eval_cmd->add_option("detections", ea.detections, "image_id,category_id,confidence,x1,y1,x2,y2 CSV")
      ->required()
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("annotations", ea.annotations, "annotations JSON")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--iou-thresh", ea.match.iou_threshold, "IoU needed for a match")->capture_default_str();
  eval_cmd->add_option("--conf-thresh", ea.match.confidence_threshold, "operating-point confidence")
      ->capture_default_str();
  eval_cmd->add_option("--out-dir", ea.out_dir)->capture_default_str();

  LossArgs la;
  auto* loss_cmd = app.add_subcommand("losslab", "Gradient-descent trajectories for the box losses");
  loss_cmd->add_option("--kinds", la.kinds, "comma-separated loss kinds or 'all'")->capture_default_str();
  loss_cmd->add_option("--start", la.start, "start box x1,y1,x2,y2")->capture_default_str();
  loss_cmd->add_option("--gt", la.gt, "target box x1,y1,x2,y2")->capture_default_str();
  loss_cmd->add_option("--step", la.step)->capture_default_str();
  loss_cmd->add_option("--iters", la.iters)->capture_default_str();
  loss_cmd->add_option("--gamma", la.params.gamma, "Focal-EIoU exponent")->capture_default_str();
  loss_cmd->add_option("--alpha", la.params.alpha, "WIoU focusing base")->capture_default_str();
  loss_cmd->add_option("--delta", la.params.delta, "WIoU focusing offset")->capture_default_str();
  loss_cmd->add_option("--out-dir", la.out_dir)->capture_default_str();

  GradcamArgs ga;
  auto* cam_cmd = app.add_subcommand("gradcam", "Grad-CAM heatmap and overlay for one layer");
  cam_cmd->add_option("--graph", ga.graph_file, "graph text file (overrides --variant)")->check(CLI::ExistingFile);
  cam_cmd->add_option("--variant", ga.variant, "baseline or improved")->capture_default_str();
  cam_cmd->add_option("--wiring", ga.wiring, "p2-pan or minimal")->capture_default_str();
  cam_cmd->add_option("--size", ga.size, "input size for --variant")->capture_default_str();
  cam_cmd->add_option("--seed", ga.seed, "weight seed for --variant")->capture_default_str();
  cam_cmd->add_option("--image", ga.image, "binary PPM input")->required()->check(CLI::ExistingFile);
  cam_cmd->add_option("--layer", ga.layer, "layer name")->required();
  cam_cmd->add_option("--category", ga.category, "class to explain (default: strongest)");
  cam_cmd->add_option("--alpha-overlay", ga.alpha_overlay)->capture_default_str();
  cam_cmd->add_option("--out-dir", ga.out_dir)->capture_default_str();

  SplitArgs sa;
  auto* split_cmd = app.add_subcommand("split", "Cis/trans location split of an annotation file");
  split_cmd->add_option("annotations", sa.annotations)->required()->check(CLI::ExistingFile);
  split_cmd->add_option("--trans-test", sa.trans_test, "comma-separated location ids (default: random)");
  split_cmd->add_option("--trans-val", sa.trans_val, "location id (default: random)");
  split_cmd->add_option("--cis-val-fraction", sa.cis_val_fraction)->capture_default_str();
  split_cmd->add_option("--seed", sa.seed)->capture_default_str();
  split_cmd->add_option("--day-basis", sa.day_basis, "month or year")->capture_default_str();
  split_cmd->add_flag("--compare", sa.compare, "compare counts with the reference split");
  split_cmd->add_option("--out-dir", sa.out_dir)->capture_default_str();

  ShapesArgs ha;
  auto* shapes_cmd = app.add_subcommand("shapes", "Per-layer feature-map shapes");
  shapes_cmd->add_option("variant", ha.variant, "baseline or improved")->capture_default_str();
  shapes_cmd->add_option("size", ha.size, "input size")->capture_default_str();
  shapes_cmd->add_option("--wiring", ha.wiring)->capture_default_str();
  shapes_cmd->add_option("--seed", ha.seed)->capture_default_str();
  shapes_cmd->add_flag("--check", ha.check, "compare with the reference table");
  shapes_cmd->add_flag("--emit-graph", ha.emit_graph, "print the graph text instead");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*eval_cmd) return cmd_eval(ea, out);
    if (*loss_cmd) return cmd_losslab(la, out, err);
    if (*cam_cmd) return cmd_gradcam(ga, out);
    if (*split_cmd) return cmd_split(sa, out, err);
    if (*shapes_cmd) return cmd_shapes(ha, out, err);
  } catch (const UsageError& e) {
    err << "usage: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace trapeval::cli
