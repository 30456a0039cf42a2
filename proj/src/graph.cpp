#include "trapeval/graph.hpp"

#include <algorithm>
#include <charconv>
#include <set>
#include <sstream>

#include "trapeval/error.hpp"
#include "trapeval/text.hpp"

namespace trapeval::graph {
namespace {

constexpr std::array<std::pair<LayerKind, std::string_view>, 8> kKindNames{{
    {LayerKind::Input, "Input"},
    {LayerKind::Conv, "Conv"},
    {LayerKind::C2f, "C2f"},
    {LayerKind::SPPF, "SPPF"},
    {LayerKind::Upsample, "Upsample"},
    {LayerKind::Concat, "Concat"},
    {LayerKind::GAM, "GAM"},
    {LayerKind::Detect, "Detect"},
}};

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::uint64_t layer_seed(std::uint64_t base, std::size_t index) {
  return base ^ (0x9E3779B97F4A7C15ULL * (static_cast<std::uint64_t>(index) + 1));
}

bool parse_bool(std::string_view v, const std::string& where) {
  const std::string s = lower(v);
  if (s == "1" || s == "true" || s == "yes") return true;
  if (s == "0" || s == "false" || s == "no") return false;
  throw ParseError(where + ": expected a boolean, got '" + std::string(v) + "'");
}

int parse_positive(std::string_view v, const std::string& where) {
  const long long n = text::parse_int(v, where);
  if (n < 0 || n > 1'000'000) throw ParseError(where + ": value out of range");
  return static_cast<int>(n);
}

bool single_input(LayerKind k) {
  return k == LayerKind::Conv || k == LayerKind::C2f || k == LayerKind::SPPF ||
         k == LayerKind::Upsample || k == LayerKind::GAM;
}

bool has_weights(LayerKind k) {
  return k == LayerKind::Conv || k == LayerKind::C2f || k == LayerKind::SPPF || k == LayerKind::GAM ||
         k == LayerKind::Detect;
}

}  // namespace

std::string_view to_string(LayerKind kind) noexcept {
  for (const auto& [k, name] : kKindNames)
    if (k == kind) return name;
  return "?";
}

LayerKind parse_layer_kind(std::string_view name) {
  const std::string want = lower(name);
  for (const auto& [k, n] : kKindNames)
    if (lower(n) == want) return k;
  throw ParseError("unknown layer kind '" + std::string(name) + "'");
}

std::string_view to_string(Variant v) noexcept { return v == Variant::Baseline ? "baseline" : "improved"; }

Variant parse_variant(std::string_view name) {
  const std::string s = lower(name);
  if (s == "baseline") return Variant::Baseline;
  if (s == "improved") return Variant::Improved;
  throw ConfigError("unknown variant '" + std::string(name) + "' (expected baseline or improved)");
}

std::string_view to_string(Wiring w) noexcept { return w == Wiring::P2Pan ? "p2-pan" : "minimal"; }

Wiring parse_wiring(std::string_view name) {
  const std::string s = lower(name);
  if (s == "p2-pan" || s == "p2pan") return Wiring::P2Pan;
  if (s == "minimal") return Wiring::Minimal;
  throw ConfigError("unknown wiring '" + std::string(name) + "' (expected p2-pan or minimal)");
}

std::size_t GraphSpec::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i].name == name) return i;
  throw GraphError("no layer named '" + std::string(name) + "'");
}

bool GraphSpec::contains(std::string_view name) const noexcept {
  return std::any_of(layers.begin(), layers.end(), [&](const LayerSpec& l) { return l.name == name; });
}

GraphSpec parse_graph(std::string_view text) {
  GraphSpec spec;
  std::istringstream in{std::string(text)};
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string where = "graph line " + std::to_string(line_no);
    std::string_view line = raw;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    std::istringstream tokens{std::string(text::trim(line))};
    std::vector<std::string> words;
    for (std::string w; tokens >> w;) words.push_back(w);
    if (words.empty()) continue;
    if (words.size() < 2) throw ParseError(where + ": expected 'name Kind key=value ...'");

    LayerSpec layer;
    layer.name = words[0];
    try {
      layer.kind = parse_layer_kind(words[1]);
    } catch (const ParseError& e) {
      throw ParseError(where + ": " + e.what());
    }
    for (std::size_t i = 2; i < words.size(); ++i) {
      const auto eq = words[i].find('=');
      if (eq == std::string::npos || eq == 0) throw ParseError(where + ": expected key=value, got '" + words[i] + "'");
      const std::string key = words[i].substr(0, eq);
      const std::string value = words[i].substr(eq + 1);
      const std::string at = where + " key " + key;
      if (key == "c") {
        layer.channels = parse_positive(value, at);
      } else if (key == "h") {
        layer.height = parse_positive(value, at);
      } else if (key == "w") {
        layer.width = parse_positive(value, at);
      } else if (key == "k") {
        layer.kernel = parse_positive(value, at);
      } else if (key == "s") {
        layer.stride = parse_positive(value, at);
      } else if (key == "n") {
        layer.bottlenecks = parse_positive(value, at);
      } else if (key == "shortcut") {
        layer.shortcut = parse_bool(value, at);
      } else if (key == "pool") {
        layer.pool_kernel = parse_positive(value, at);
      } else if (key == "factor") {
        layer.factor = parse_positive(value, at);
      } else if (key == "r") {
        layer.reduction = parse_positive(value, at);
      } else if (key == "nc") {
        layer.num_classes = parse_positive(value, at);
      } else if (key == "seed") {
        std::uint64_t seed = 0;
        const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), seed);
        if (ec != std::errc() || ptr != value.data() + value.size()) {
          throw ParseError(at + ": expected an unsigned integer, got '" + value + "'");
        }
        layer.seed = seed;
      } else if (key == "from") {
        for (const std::string& f : text::split(value, ',')) {
          const auto t = text::trim(f);
          if (t.empty()) throw ParseError(at + ": empty input name");
          layer.inputs.emplace_back(t);
        }
      } else {
        throw ParseError(where + ": unknown key '" + key + "'");
      }
    }
    spec.layers.push_back(std::move(layer));
  }
  if (spec.layers.empty()) throw ParseError("graph description has no layers");
  return spec;
}

std::string write_graph(const GraphSpec& spec) {
  std::ostringstream os;
  os << "# name kind key=value ...\n";
  for (const LayerSpec& l : spec.layers) {
    os << l.name << ' ' << to_string(l.kind);
    if (!l.inputs.empty()) {
      os << " from=";
      for (std::size_t i = 0; i < l.inputs.size(); ++i) os << (i ? "," : "") << l.inputs[i];
    }
    switch (l.kind) {
      case LayerKind::Input: os << " c=" << l.channels << " h=" << l.height << " w=" << l.width; break;
      case LayerKind::Conv: os << " c=" << l.channels << " k=" << l.kernel << " s=" << l.stride; break;
      case LayerKind::C2f:
        os << " c=" << l.channels << " n=" << l.bottlenecks << " shortcut=" << (l.shortcut ? "true" : "false");
        break;
      case LayerKind::SPPF: os << " c=" << l.channels << " pool=" << l.pool_kernel; break;
      case LayerKind::Upsample: os << " factor=" << l.factor; break;
      case LayerKind::Concat: break;
      case LayerKind::GAM: os << " r=" << l.reduction; break;
      case LayerKind::Detect: os << " nc=" << l.num_classes; break;
    }
    if (has_weights(l.kind)) os << " seed=" << l.seed;
    os << '\n';
  }
  return os.str();
}

GraphSpec build_graph(Variant variant, const BuildOptions& o) {
  if (o.input_size < 32 || o.input_size % 32 != 0) {
    throw ConfigError("input size must be a positive multiple of 32, got " + std::to_string(o.input_size));
  }
  if (o.input_channels < 1 || o.num_classes < 1) throw ConfigError("channel and category counts must be positive");
  const auto& w = o.widths;
  const auto& d = o.depths;

  GraphSpec g;
  auto add = [&](LayerSpec l) {
    l.name = std::to_string(g.layers.size() - 1);
    if (has_weights(l.kind)) l.seed = layer_seed(o.seed, g.layers.size());
    g.layers.push_back(std::move(l));
    return g.layers.back().name;
  };
  auto conv = [&](int c, int s, std::string from = {}) {
    LayerSpec l;
    l.kind = LayerKind::Conv;
    l.channels = c;
    l.kernel = 3;
    l.stride = s;
    if (!from.empty()) l.inputs = {from};
    return add(std::move(l));
  };
  auto c2f = [&](int c, int n, bool shortcut) {
    LayerSpec l;
    l.kind = LayerKind::C2f;
    l.channels = c;
    l.bottlenecks = n;
    l.shortcut = shortcut;
    return add(std::move(l));
  };
  auto up = [&](std::string from = {}) {
    LayerSpec l;
    l.kind = LayerKind::Upsample;
    l.factor = 2;
    if (!from.empty()) l.inputs = {from};
    return add(std::move(l));
  };
  auto cat = [&](std::string a, std::string b) {
    LayerSpec l;
    l.kind = LayerKind::Concat;
    l.inputs = {std::move(a), std::move(b)};
    return add(std::move(l));
  };

  LayerSpec input;
  input.name = "input";
  input.kind = LayerKind::Input;
  input.channels = o.input_channels;
  input.height = o.input_size;
  input.width = o.input_size;
  g.layers.push_back(input);

  conv(w[0], 2);
  conv(w[1], 2);
  const std::string p2 = c2f(w[1], d[0], true);
  conv(w[2], 2);
  const std::string p3 = c2f(w[2], d[1], true);
  conv(w[3], 2);
  const std::string p4 = c2f(w[3], d[2], true);
  conv(w[4], 2);
  c2f(w[4], d[3], true);
  if (variant == Variant::Improved) {
    LayerSpec gam;
    gam.kind = LayerKind::GAM;
    gam.reduction = o.gam_reduction;
    add(gam);
  }
  LayerSpec sppf;
  sppf.kind = LayerKind::SPPF;
  sppf.channels = w[4];
  sppf.pool_kernel = 5;
  const std::string p5 = add(sppf);

  up();
  cat(g.layers.back().name, p4);
  const std::string n4 = c2f(w[3], o.neck_depth, false);
  up();
  cat(g.layers.back().name, p3);
  const std::string n3 = c2f(w[2], o.neck_depth, false);

  std::vector<std::string> heads;
  std::string top = n3;  // feature map the bottom-up path starts from
  if (variant == Variant::Improved) {
    up(n3);
    cat(g.layers.back().name, p2);
    const std::string n2 = c2f(w[1], o.neck_depth, false);
    heads.push_back(n2);
    if (o.wiring == Wiring::P2Pan) {
      conv(w[1], 2, n2);
      cat(g.layers.back().name, n3);
      top = c2f(w[2], o.neck_depth, false);
    }
  }
  heads.push_back(top);
  conv(w[2], 2, top);
  cat(g.layers.back().name, n4);
  heads.push_back(c2f(w[3], o.neck_depth, false));
  conv(w[3], 2);
  cat(g.layers.back().name, p5);
  heads.push_back(c2f(w[4], o.neck_depth, false));

  LayerSpec detect;
  detect.kind = LayerKind::Detect;
  detect.inputs = heads;
  detect.num_classes = o.num_classes;
  add(detect);
  return g;
}

std::vector<LayerShape> propagate_shapes(const GraphSpec& spec) {
  if (spec.layers.empty() || spec.layers.front().kind != LayerKind::Input) {
    throw GraphError("graph must start with an Input layer");
  }
  std::vector<LayerShape> out;
  std::map<std::string, std::size_t, std::less<>> seen;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    const std::string who = "layer " + l.name + " (" + std::string(to_string(l.kind)) + ")";
    if (l.name.empty()) throw GraphError("layer " + std::to_string(i) + " has no name");
    if (seen.count(l.name)) throw GraphError(who + ": duplicate layer name");

    LayerShape s;
    s.name = l.name;
    s.kind = l.kind;
    if (l.kind == LayerKind::Input) {
      if (i != 0) throw GraphError(who + ": only the first layer may be an Input");
      if (l.channels < 1 || l.height < 1 || l.width < 1) throw GraphError(who + ": input dimensions must be positive");
      s.output = {l.channels, l.height, l.width};
      seen[l.name] = i;
      out.push_back(std::move(s));
      continue;
    }

    std::vector<std::string> inputs = l.inputs;
    if (inputs.empty()) inputs.push_back(spec.layers[i - 1].name);
    for (const std::string& name : inputs) {
      const auto it = seen.find(name);
      if (it == seen.end()) throw GraphError(who + ": input '" + name + "' is not an earlier layer");
      if (out[it->second].kind == LayerKind::Detect) throw GraphError(who + ": cannot consume Detect layer " + name);
      s.inputs.push_back(out[it->second].output);
    }
    if (single_input(l.kind) && s.inputs.size() != 1) throw GraphError(who + ": takes exactly one input");
    if (l.kind == LayerKind::Concat && s.inputs.size() < 2) throw GraphError(who + ": needs two or more inputs");

    const Shape3 x = s.inputs.front();
    try {
      switch (l.kind) {
        case LayerKind::Input: break;
        case LayerKind::Conv: {
          if (l.channels < 1) throw GraphError(who + ": needs c > 0");
          const ShapeSpec k{l.kernel, l.stride, l.kernel / 2};
          s.output = {l.channels, conv_output_dim(x.height, k), conv_output_dim(x.width, k)};
          break;
        }
        case LayerKind::C2f:
          if (l.channels < 2 || l.channels % 2 != 0) throw GraphError(who + ": needs an even c > 0");
          s.output = {l.channels, x.height, x.width};
          break;
        case LayerKind::SPPF: {
          if (l.pool_kernel < 1 || l.pool_kernel % 2 == 0) throw GraphError(who + ": pool kernel must be odd");
          Shape3 pooled = x;
          for (int p = 1; p <= 3; ++p) {
            pooled = {x.channels, conv_output_dim(pooled.height, {l.pool_kernel, 1, l.pool_kernel / 2}),
                      conv_output_dim(pooled.width, {l.pool_kernel, 1, l.pool_kernel / 2})};
            s.details.emplace_back("pool" + std::to_string(p), pooled);
          }
          s.details.emplace_back("concat", Shape3{4 * x.channels, x.height, x.width});
          s.output = {l.channels > 0 ? l.channels : x.channels, x.height, x.width};
          break;
        }
        case LayerKind::Upsample:
          if (l.factor < 1) throw GraphError(who + ": factor must be >= 1");
          s.output = {x.channels, x.height * l.factor, x.width * l.factor};
          break;
        case LayerKind::Concat: {
          int c = 0;
          for (const Shape3& in : s.inputs) {
            if (in.height != x.height || in.width != x.width) {
              throw GraphError(who + ": inputs differ in spatial size (" + x.to_string() + " vs " + in.to_string() + ")");
            }
            c += in.channels;
          }
          s.output = {c, x.height, x.width};
          break;
        }
        case LayerKind::GAM:
          if (x.channels % 4 != 0) throw GraphError(who + ": channels must be divisible by 4");
          if (l.reduction < 1 || x.channels % l.reduction != 0) {
            throw GraphError(who + ": channels must be divisible by r=" + std::to_string(l.reduction));
          }
          s.output = x;
          break;
        case LayerKind::Detect:
          if (l.num_classes < 1) throw GraphError(who + ": needs nc > 0");
          for (std::size_t k = 0; k < s.inputs.size(); ++k) {
            s.details.emplace_back("box" + std::to_string(k), Shape3{4, s.inputs[k].height, s.inputs[k].width});
            s.details.emplace_back("cls" + std::to_string(k),
                                   Shape3{l.num_classes, s.inputs[k].height, s.inputs[k].width});
          }
          break;
      }
    } catch (const ShapeError& e) {
      throw GraphError(who + ": " + e.what());
    }
    seen[l.name] = i;
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<ShapeExpectation> reference_shapes(Variant variant) {
  std::vector<ShapeExpectation> e{
      {"0", "input", {3, 640, 640}},    {"0", "output", {32, 320, 320}},
      {"1", "input", {32, 320, 320}},   {"1", "output", {64, 160, 160}},
      {"2", "input", {64, 160, 160}},   {"2", "output", {64, 160, 160}},
      {"3", "input", {64, 160, 160}},   {"3", "output", {128, 80, 80}},
      {"4", "input", {128, 80, 80}},    {"4", "output", {128, 80, 80}},
      {"5", "input", {128, 80, 80}},    {"5", "output", {256, 40, 40}},
      {"6", "input", {256, 40, 40}},    {"6", "output", {256, 40, 40}},
      {"7", "input", {256, 40, 40}},    {"7", "output", {512, 20, 20}},
      {"8", "input", {512, 20, 20}},    {"8", "output", {512, 20, 20}},
  };
  const std::string sppf = variant == Variant::Baseline ? "9" : "10";
  if (variant == Variant::Improved) {
    e.push_back({"9", "input", {512, 20, 20}});
    e.push_back({"9", "output", {512, 20, 20}});
  }
  e.push_back({sppf, "input", {512, 20, 20}});
  e.push_back({sppf, "pool1", {512, 20, 20}});
  e.push_back({sppf, "pool2", {512, 20, 20}});
  e.push_back({sppf, "pool3", {512, 20, 20}});
  e.push_back({sppf, "concat", {2048, 20, 20}});
  e.push_back({sppf, "output", {512, 20, 20}});
  return e;
}

std::vector<std::string> check_shapes(std::span<const LayerShape> shapes, std::span<const ShapeExpectation> expected) {
  std::vector<std::string> problems;
  for (const ShapeExpectation& want : expected) {
    const auto it = std::find_if(shapes.begin(), shapes.end(), [&](const LayerShape& s) { return s.name == want.layer; });
    if (it == shapes.end()) {
      problems.push_back("layer " + want.layer + ": missing");
      continue;
    }
    std::optional<Shape3> got;
    if (want.what == "output") {
      got = it->output;
    } else if (want.what == "input") {
      if (!it->inputs.empty()) got = it->inputs.front();
    } else {
      for (const auto& [key, shape] : it->details)
        if (key == want.what) got = shape;
    }
    if (!got) {
      problems.push_back("layer " + want.layer + " " + want.what + ": not reported");
    } else if (*got != want.shape) {
      problems.push_back("layer " + want.layer + " " + want.what + ": expected " + want.shape.to_string() + ", got " +
                         got->to_string());
    }
  }
  return problems;
}

std::string shape_table(std::span<const LayerShape> shapes) {
  std::ostringstream os;
  os << "layer,kind,input,output,details\n";
  for (const LayerShape& s : shapes) {
    os << s.name << ',' << to_string(s.kind) << ',';
    for (std::size_t i = 0; i < s.inputs.size(); ++i) os << (i ? "+" : "") << s.inputs[i].to_string();
    os << ',';
    if (s.kind != LayerKind::Detect) os << s.output.to_string();
    os << ',';
    for (std::size_t i = 0; i < s.details.size(); ++i) {
      os << (i ? " " : "") << s.details[i].first << '=' << s.details[i].second.to_string();
    }
    os << '\n';
  }
  return os.str();
}

Model::Model(GraphSpec spec) : spec_(std::move(spec)), shapes_(propagate_shapes(spec_)) {
  params_.reserve(spec_.layers.size());
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    const LayerSpec& l = spec_.layers[i];
    const LayerShape& s = shapes_[i];
    WeightInit init(l.seed);
    switch (l.kind) {
      case LayerKind::Input:
      case LayerKind::Upsample:
      case LayerKind::Concat: params_.emplace_back(std::monostate{}); break;
      case LayerKind::Conv:
        params_.emplace_back(blocks::ConvBlock::make(s.inputs[0].channels, l.channels, l.kernel, l.stride, init));
        break;
      case LayerKind::C2f:
        params_.emplace_back(blocks::C2f::make(s.inputs[0].channels, l.channels, l.bottlenecks, l.shortcut, init));
        break;
      case LayerKind::SPPF: {
        blocks::Sppf sppf;
        sppf.kernel = l.pool_kernel;
        sppf.fuse = blocks::ConvBlock::make(4 * s.inputs[0].channels, s.output.channels, 1, 1, init);
        params_.emplace_back(std::move(sppf));
        break;
      }
      case LayerKind::GAM: params_.emplace_back(blocks::Gam::make(s.inputs[0].channels, l.reduction, init)); break;
      case LayerKind::Detect: {
        std::vector<int> channels;
        for (const Shape3& in : s.inputs) channels.push_back(in.channels);
        params_.emplace_back(blocks::Detect::make(channels, l.num_classes, init));
        break;
      }
    }
  }
}

const Tensor3& GraphRun::activation(std::string_view layer) const {
  const auto it = layers.find(layer);
  if (it == layers.end()) throw GraphError("no recorded activation for layer '" + std::string(layer) + "'");
  return tape.value(it->second);
}

const Tensor3& GraphRun::head(std::string_view output) const {
  const auto it = heads.find(output);
  if (it == heads.end()) throw GraphError("no head output named '" + std::string(output) + "'");
  return tape.value(it->second);
}

GraphRun forward(std::shared_ptr<const Model> model, const Tensor3& image,
                 const std::map<std::string, Tensor3, std::less<>>& overrides) {
  if (!model) throw GraphError("forward needs a model");
  GraphRun run;
  run.model = model;
  const GraphSpec& spec = model->spec();
  for (const auto& [name, t] : overrides) {
    const std::size_t i = spec.index_of(name);
    if (spec.layers[i].kind == LayerKind::Detect) throw GraphError("cannot override Detect layer " + name);
    if (t.shape() != model->shapes()[i].output) {
      throw GraphError("override for layer " + name + " has shape " + t.shape().to_string() + ", expected " +
                       model->shapes()[i].output.to_string());
    }
  }
  if (image.shape() != model->shapes().front().output) {
    throw GraphError("image shape " + image.shape().to_string() + " does not match graph input " +
                     model->shapes().front().output.to_string());
  }

  Tape& tape = run.tape;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    const std::string who = "layer " + l.name + " (" + std::string(to_string(l.kind)) + ")";
    if (const auto ov = overrides.find(l.name); ov != overrides.end()) {
      run.layers[l.name] = tape.input(ov->second);
      continue;
    }
    std::vector<Tape::Node> in;
    if (l.kind != LayerKind::Input) {
      if (l.inputs.empty()) {
        in.push_back(run.layers.at(spec.layers[i - 1].name));
      } else {
        for (const std::string& name : l.inputs) in.push_back(run.layers.at(name));
      }
    }
    const LayerParams& p = model->params(i);
    Tape::Node node = 0;
    switch (l.kind) {
      case LayerKind::Input: node = tape.input(image); break;
      case LayerKind::Conv: node = std::get<blocks::ConvBlock>(p).apply(tape, in[0]); break;
      case LayerKind::C2f: node = std::get<blocks::C2f>(p).apply(tape, in[0]); break;
      case LayerKind::SPPF: node = std::get<blocks::Sppf>(p).apply(tape, in[0]); break;
      case LayerKind::Upsample: node = tape.upsample(in[0], l.factor); break;
      case LayerKind::Concat: node = tape.concat(in); break;
      case LayerKind::GAM: node = std::get<blocks::Gam>(p).apply(tape, in[0]); break;
      case LayerKind::Detect: {
        const auto outs = std::get<blocks::Detect>(p).apply(tape, in);
        for (std::size_t k = 0; k < outs.size(); ++k) {
          for (const auto& [key, n] : {std::pair{"box", outs[k].first}, std::pair{"cls", outs[k].second}}) {
            if (!tape.value(n).all_finite()) throw GraphError(who + ": non-finite " + key + " output");
            run.heads[l.name + "." + key + std::to_string(k)] = n;
          }
        }
        continue;
      }
    }
    if (!tape.value(node).all_finite()) throw GraphError(who + ": non-finite activation");
    run.layers[l.name] = node;
  }
  return run;
}

namespace {

Tape::Node resolve_output(const GraphRun& run, const std::string& name) {
  if (const auto it = run.heads.find(name); it != run.heads.end()) return it->second;
  if (const auto it = run.layers.find(name); it != run.layers.end()) return it->second;
  throw GraphError("unknown score output '" + name + "'");
}

void check_cell(const Tensor3& t, const ScoreTerm& term) {
  if (term.channel < 0 || term.channel >= t.channels() || term.y < 0 || term.y >= t.height() || term.x < 0 ||
      term.x >= t.width()) {
    throw GraphError("score cell (" + std::to_string(term.channel) + ", " + std::to_string(term.y) + ", " +
                     std::to_string(term.x) + ") outside " + term.output + " of shape " + t.shape().to_string());
  }
}

}  // namespace

double score(const GraphRun& run, std::span<const ScoreTerm> terms) {
  double total = 0.0;
  for (const ScoreTerm& term : terms) {
    const Tensor3& t = run.tape.value(resolve_output(run, term.output));
    check_cell(t, term);
    total += term.weight * t.at(term.channel, term.y, term.x);
  }
  return total;
}

Tensor3 backward_to_layer(const GraphRun& run, std::span<const ScoreTerm> terms, std::string_view layer) {
  if (terms.empty()) throw GraphError("score selector is empty");
  const auto target = run.layers.find(layer);
  if (target == run.layers.end()) throw GraphError("no recorded activation for layer '" + std::string(layer) + "'");

  std::map<Tape::Node, Tensor3> seeds;
  for (const ScoreTerm& term : terms) {
    const Tape::Node n = resolve_output(run, term.output);
    const Tensor3& t = run.tape.value(n);
    check_cell(t, term);
    auto [it, fresh] = seeds.try_emplace(n, t.shape());
    it->second.at(term.channel, term.y, term.x) += term.weight;
  }
  std::vector<Tape::Seed> list;
  for (auto& [n, g] : seeds) list.push_back({n, std::move(g)});
  try {
    return run.tape.gradient(list, target->second);
  } catch (const GraphError&) {
    throw GraphError("layer '" + std::string(layer) + "' does not feed the selected score");
  }
}

}  // namespace trapeval::graph
