#include "doctest.h"

#include <chrono>
#include <cmath>
#include <random>

#include "trapeval/error.hpp"
#include "trapeval/graph.hpp"

using namespace trapeval;
using namespace trapeval::graph;

namespace {

const char* const kTinyGraph = R"(# small net on an 8x8 image
input Input c=3 h=8 w=8
0 Conv c=8 k=3 s=1 seed=1
1 C2f c=8 n=1 shortcut=true seed=2
2 Conv c=16 k=3 s=2 seed=3
3 GAM r=4 seed=4
4 SPPF c=16 pool=5 seed=5
5 Upsample factor=2
6 Concat from=5,1
7 C2f c=8 n=1 shortcut=false seed=6
8 Detect from=7,4 nc=3 seed=7
)";

Tensor3 random_image(std::uint64_t seed, int c, int h, int w) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor3 t(c, h, w);
  for (double& v : t.values()) v = u(rng);
  return t;
}

const LayerShape& find(const std::vector<LayerShape>& shapes, const std::string& name) {
  for (const auto& s : shapes)
    if (s.name == name) return s;
  throw GraphError("missing " + name);
}

std::vector<int> head_grids(const std::vector<LayerShape>& shapes) {
  std::vector<int> grids;
  for (const auto& [key, shape] : shapes.back().details)
    if (key.rfind("cls", 0) == 0) grids.push_back(shape.height);
  return grids;
}

BuildOptions narrow(int size, std::uint64_t seed = 0) {
  BuildOptions o;
  o.input_size = size;
  o.widths = {8, 8, 16, 16, 32};
  o.depths = {1, 1, 1, 1};
  o.num_classes = 3;
  o.seed = seed;
  return o;
}

}  // namespace

TEST_CASE("baseline shapes at 640 match the published table") {
  const auto start = std::chrono::steady_clock::now();
  const auto shapes = propagate_shapes(build_graph(Variant::Baseline));
  const auto problems = check_shapes(shapes, reference_shapes(Variant::Baseline));
  for (const auto& p : problems) MESSAGE(p);
  CHECK(problems.empty());
  CHECK(find(shapes, "9").kind == LayerKind::SPPF);
  CHECK(shapes.size() == 24);
  CHECK(shapes.back().kind == LayerKind::Detect);
  CHECK(head_grids(shapes) == std::vector<int>{80, 40, 20});
  CHECK(std::chrono::steady_clock::now() - start < std::chrono::seconds(1));
}

TEST_CASE("improved shapes at 640") {
  for (Wiring wiring : {Wiring::P2Pan, Wiring::Minimal}) {
    BuildOptions o;
    o.wiring = wiring;
    const GraphSpec g = build_graph(Variant::Improved, o);
    const auto shapes = propagate_shapes(g);
    CHECK(check_shapes(shapes, reference_shapes(Variant::Improved)).empty());
    const LayerShape& gam = find(shapes, "9");
    CHECK(gam.kind == LayerKind::GAM);
    CHECK(gam.inputs.front() == Shape3{512, 20, 20});
    CHECK(gam.output == Shape3{512, 20, 20});
    CHECK(head_grids(shapes) == std::vector<int>{160, 80, 40, 20});
    // a concat consumes the layer-2 features
    bool uses_p2 = false;
    for (const LayerSpec& l : g.layers)
      if (l.kind == LayerKind::Concat && std::find(l.inputs.begin(), l.inputs.end(), "2") != l.inputs.end()) uses_p2 = true;
    CHECK(uses_p2);
  }
  const GraphSpec pan = build_graph(Variant::Improved);
  CHECK(pan.layers.back().name == "29");
  CHECK(pan.layers[pan.index_of("28")].kind == LayerKind::C2f);
  CHECK(pan.layers.back().inputs.back() == "28");
  const GraphSpec base = build_graph(Variant::Baseline);
  CHECK(base.layers.back().inputs.back() == "21");
}

TEST_CASE("shapes scale with the input size") {
  for (Variant v : {Variant::Baseline, Variant::Improved}) {
    BuildOptions small;
    small.input_size = 64;
    const auto big = propagate_shapes(build_graph(v));
    const auto tiny = propagate_shapes(build_graph(v, small));
    REQUIRE(big.size() == tiny.size());
    for (std::size_t i = 0; i < big.size(); ++i) {
      if (big[i].kind == LayerKind::Detect) continue;
      CHECK(big[i].output.channels == tiny[i].output.channels);
      CHECK(big[i].output.height == 10 * tiny[i].output.height);
      CHECK(big[i].output.width == 10 * tiny[i].output.width);
    }
    const auto grids = head_grids(tiny);
    CHECK(std::find(grids.begin(), grids.end(), 8) != grids.end());
    CHECK(std::find(grids.begin(), grids.end(), 4) != grids.end());
    CHECK(std::find(grids.begin(), grids.end(), 2) != grids.end());
  }
  BuildOptions bad;
  bad.input_size = 100;
  CHECK_THROWS_AS((void)build_graph(Variant::Baseline, bad), ConfigError);
}

TEST_CASE("graph text round trip") {
  for (Variant v : {Variant::Baseline, Variant::Improved}) {
    const GraphSpec g = build_graph(v, narrow(64, 3));
    const std::string text = write_graph(g);
    CHECK(parse_graph(text) == g);
    CHECK(write_graph(parse_graph(text)) == text);
  }
  const GraphSpec tiny = parse_graph(kTinyGraph);
  CHECK(tiny.layers.size() == 10);
  CHECK(tiny.layers[7].inputs == std::vector<std::string>{"5", "1"});
  CHECK_FALSE(tiny.layers[8].shortcut);
  CHECK(tiny.layers[9].num_classes == 3);
  CHECK(parse_graph(write_graph(tiny)) == tiny);

  CHECK_THROWS_AS((void)parse_graph(""), ParseError);
  CHECK_THROWS_AS((void)parse_graph("input Input c=3 h=8 w=8\n0 Conv c=8 bogus=1\n"), ParseError);
  CHECK_THROWS_AS((void)parse_graph("input Input c=3 h=8 w=8\n0 Blob\n"), ParseError);
  CHECK_THROWS_AS((void)parse_graph("input Input c=3 h=8 w=8\n0 Conv c=x\n"), ParseError);
  CHECK_THROWS_AS((void)parse_graph("input\n"), ParseError);
}

TEST_CASE("shape propagation errors name the layer") {
  auto message = [](const char* text) {
    try {
      (void)propagate_shapes(parse_graph(text));
    } catch (const GraphError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(message("input Input c=3 h=8 w=8\na Conv c=4 s=2\nb Concat from=a,input\n").find("layer b") != std::string::npos);
  CHECK(message("input Input c=3 h=8 w=8\na Conv c=4 from=zz\n").find("layer a") != std::string::npos);
  CHECK(message("input Input c=3 h=8 w=8\na Conv c=4\na Conv c=4\n").find("duplicate") != std::string::npos);
  CHECK(message("input Input c=3 h=8 w=8\na GAM\n").find("layer a") != std::string::npos);
  CHECK(message("input Input c=3 h=8 w=8\na Conv c=4\nb Detect nc=2\nc Conv c=4 from=b\n").find("layer c") !=
        std::string::npos);
  CHECK(message("a Conv c=4\n").find("Input") != std::string::npos);
  CHECK(message("input Input c=3 h=2 w=2\na Upsample factor=0\n").find("layer a") != std::string::npos);
}

TEST_CASE("forward is deterministic and shape consistent") {
  const GraphSpec g = build_graph(Variant::Improved, narrow(64, 11));
  const Tensor3 image = random_image(1, 3, 64, 64);
  const auto m1 = std::make_shared<const Model>(g);
  const auto m2 = std::make_shared<const Model>(g);
  const GraphRun r1 = forward(m1, image);
  const GraphRun r2 = forward(m2, image);
  for (const LayerShape& s : m1->shapes()) {
    if (s.kind == LayerKind::Detect) continue;
    CHECK(r1.activation(s.name).shape() == s.output);
    CHECK(encode_tensor(r1.activation(s.name)) == encode_tensor(r2.activation(s.name)));
  }
  REQUIRE(r1.heads.size() == 8);
  for (const auto& [name, node] : r1.heads) CHECK(encode_tensor(r1.head(name)) == encode_tensor(r2.head(name)));
  CHECK(r1.head("29.cls0").shape() == Shape3{3, 16, 16});
  CHECK(r1.head("29.box3").shape() == Shape3{4, 2, 2});

  const GraphRun other = forward(std::make_shared<const Model>(build_graph(Variant::Improved, narrow(64, 12))), image);
  CHECK(other.activation("0") != r1.activation("0"));

  CHECK_THROWS_AS((void)forward(m1, Tensor3(3, 32, 32)), GraphError);
  CHECK_THROWS_AS((void)r1.activation("nope"), GraphError);
  CHECK_THROWS_AS((void)r1.head("29.cls9"), GraphError);
}

TEST_CASE("zero image gives zero activations") {
  const auto model = std::make_shared<const Model>(build_graph(Variant::Improved, narrow(64, 2)));
  const GraphRun run = forward(model, Tensor3(3, 64, 64, 0.0));
  for (const auto& [name, node] : run.layers)
    for (double v : run.tape.value(node).values()) REQUIRE(v == 0.0);
  for (const auto& [name, node] : run.heads)
    for (double v : run.tape.value(node).values()) REQUIRE(v == 0.0);
}

TEST_CASE("forward rejects non-finite activations") {
  const auto model = std::make_shared<const Model>(parse_graph(kTinyGraph));
  Tensor3 image = random_image(3, 3, 8, 8);
  image.at(0, 2, 2) = std::numeric_limits<double>::infinity();
  try {
    (void)forward(model, image);
    FAIL("expected a GraphError");
  } catch (const GraphError& e) {
    CHECK(std::string(e.what()).find("non-finite") != std::string::npos);
  }
}

TEST_CASE("backward_to_layer matches finite differences") {
  const auto model = std::make_shared<const Model>(parse_graph(kTinyGraph));
  const Tensor3 image = random_image(4, 3, 8, 8);
  const GraphRun run = forward(model, image);
  const std::vector<ScoreTerm> terms{{"8.cls0", 1, 3, 5, 1.0}, {"8.cls1", 2, 1, 0, -0.5}};

  for (const char* layer : {"0", "1", "3", "4", "7"}) {
    const Tensor3 grad = backward_to_layer(run, terms, layer);
    const Tensor3& act = run.activation(layer);
    REQUIRE(grad.shape() == act.shape());
    const double h = 1e-7;
    int bad = 0;
    for (std::size_t i = 0; i < act.size(); ++i) {
      Tensor3 up = act;
      Tensor3 down = act;
      up.values()[i] += h;
      down.values()[i] -= h;
      const double fp = score(forward(model, image, {{layer, up}}), terms);
      const double fm = score(forward(model, image, {{layer, down}}), terms);
      const double fd = (fp - fm) / (2 * h);
      const double a = grad.values()[i];
      if (std::abs(a - fd) > 1e-3 * std::max(std::abs(a), std::abs(fd)) + 1e-8) {
        ++bad;
        MESSAGE(std::string(layer) << " " << i << " analytic " << a << " numeric " << fd << " value " << act.values()[i]);
      }
    }
    INFO("layer " << std::string(layer));
    CHECK(bad == 0);
  }
}

TEST_CASE("backward_to_layer properties") {
  const auto model = std::make_shared<const Model>(parse_graph(kTinyGraph));
  const GraphRun run = forward(model, random_image(5, 3, 8, 8));

  // selecting an entry of the layer itself gives a one-hot gradient
  const std::vector<ScoreTerm> self{{"3", 2, 1, 3, 1.0}};
  const Tensor3 onehot = backward_to_layer(run, self, "3");
  for (std::size_t i = 0; i < onehot.size(); ++i) CHECK(onehot.values()[i] == (i == onehot.index(2, 1, 3) ? 1.0 : 0.0));

  // linearity
  const std::vector<ScoreTerm> s1{{"8.cls0", 0, 2, 2, 1.0}};
  const std::vector<ScoreTerm> s2{{"8.box1", 3, 1, 1, 1.0}};
  const std::vector<ScoreTerm> mix{{"8.cls0", 0, 2, 2, 2.5}, {"8.box1", 3, 1, 1, -1.5}};
  const Tensor3 g1 = backward_to_layer(run, s1, "1");
  const Tensor3 g2 = backward_to_layer(run, s2, "1");
  const Tensor3 gm = backward_to_layer(run, mix, "1");
  for (std::size_t i = 0; i < gm.size(); ++i) {
    CHECK(std::abs(gm.values()[i] - (2.5 * g1.values()[i] - 1.5 * g2.values()[i])) < 1e-10);
  }

  // layer 7 only feeds the first scale
  const std::vector<ScoreTerm> coarse{{"8.cls1", 0, 0, 0, 1.0}};
  CHECK_THROWS_AS((void)backward_to_layer(run, coarse, "7"), GraphError);
  CHECK_NOTHROW((void)backward_to_layer(run, coarse, "4"));
  const std::vector<ScoreTerm> outside{{"8.cls1", 0, 9, 0, 1.0}};
  CHECK_THROWS_AS((void)backward_to_layer(run, outside, "4"), GraphError);
  CHECK_THROWS_AS((void)backward_to_layer(run, s1, "missing"), GraphError);
}

TEST_CASE("shape table output") {
  const std::string table = shape_table(propagate_shapes(build_graph(Variant::Baseline)));
  CHECK(table.find("9,SPPF,20x20x512,20x20x512,pool1=20x20x512 pool2=20x20x512 pool3=20x20x512 concat=20x20x2048") !=
        std::string::npos);
  CHECK(table.find("0,Conv,640x640x3,320x320x32,") != std::string::npos);
}
