#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "trapeval/error.hpp"
#include "trapeval/gradcam.hpp"
#include "trapeval/graph.hpp"

using namespace trapeval;
using namespace trapeval::gradcam;

namespace {

const char* const kNet = R"(input Input c=3 h=8 w=8
0 Conv c=8 k=3 s=1 seed=11
1 Conv c=16 k=3 s=2 seed=12
2 GAM r=4 seed=13
3 Upsample factor=2
4 Concat from=3,0
5 C2f c=8 n=1 shortcut=false seed=14
6 Detect from=5,2 nc=3 seed=15
)";

Tensor3 random_tensor(std::uint64_t seed, int c, int h, int w, double lo, double hi) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor3 t(c, h, w);
  for (double& v : t.values()) v = u(rng);
  return t;
}

graph::GraphRun run_net(std::uint64_t image_seed) {
  auto model = std::make_shared<const graph::Model>(graph::parse_graph(kNet));
  return graph::forward(model, random_tensor(image_seed, 3, 8, 8, 0.0, 1.0));
}

// Direct transcription of the heatmap steps, one pixel at a time.
std::vector<double> oracle_heatmap(const Tensor3& act, const Tensor3& grad, int h, int w) {
  const int hw = act.height() * act.width();
  std::vector<double> alpha(static_cast<std::size_t>(act.channels()), 0.0);
  for (int c = 0; c < act.channels(); ++c) {
    double s = 0.0;
    for (int y = 0; y < act.height(); ++y)
      for (int x = 0; x < act.width(); ++x) s += grad.at(c, y, x);
    alpha[static_cast<std::size_t>(c)] = s / hw;
  }
  std::vector<double> out;
  double peak = 0.0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int sy = y * act.height() / h;
      const int sx = x * act.width() / w;
      double v = 0.0;
      for (int c = 0; c < act.channels(); ++c) v += alpha[static_cast<std::size_t>(c)] * act.at(c, sy, sx);
      v = std::max(v, 0.0);
      peak = std::max(peak, v);
      out.push_back(v);
    }
  }
  if (peak > 0.0)
    for (double& v : out) v /= peak;
  return out;
}

}  // namespace

TEST_CASE("zero gradients give an all-zero heatmap") {
  const Tensor3 act = random_tensor(1, 4, 3, 3, -1.0, 1.0);
  const Tensor3 grad(4, 3, 3);
  const Heatmap h = heatmap_from(act, grad, 6, 6);
  CHECK(h.height == 6);
  CHECK(h.width == 6);
  for (double v : h.values) CHECK(v == 0.0);
}

TEST_CASE("single channel with uniform gradient is the normalized rectified activation") {
  Tensor3 act(1, 2, 2);
  act.at(0, 0, 0) = 1.0;
  act.at(0, 0, 1) = -2.0;
  act.at(0, 1, 0) = 3.0;
  act.at(0, 1, 1) = 0.5;
  Tensor3 grad(1, 2, 2);
  for (double& v : grad.values()) v = 2.0;

  const Heatmap same = heatmap_from(act, grad, 2, 2);
  CHECK(same.at(0, 0) == doctest::Approx(1.0 / 3.0));
  CHECK(same.at(0, 1) == 0.0);
  CHECK(same.at(1, 0) == 1.0);
  CHECK(same.at(1, 1) == doctest::Approx(1.0 / 6.0));

  const Heatmap up = heatmap_from(act, grad, 4, 4);
  CHECK(up.at(0, 1) == doctest::Approx(1.0 / 3.0));
  CHECK(up.at(1, 3) == 0.0);
  CHECK(up.at(3, 0) == 1.0);
  CHECK(up.at(2, 2) == doctest::Approx(1.0 / 6.0));
}

TEST_CASE("heatmap agrees with a direct per-pixel computation") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Tensor3 act = random_tensor(seed, 5, 4, 3, -1.0, 1.0);
    const Tensor3 grad = random_tensor(seed + 1000, 5, 4, 3, -1.0, 1.0);
    const Heatmap h = heatmap_from(act, grad, 8, 9);
    const auto expected = oracle_heatmap(act, grad, 8, 9);
    REQUIRE(h.values.size() == expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i) CHECK(h.values[i] == doctest::Approx(expected[i]).epsilon(1e-12));
  }
}

TEST_CASE("heatmap is invariant to positive gradient scaling") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const Tensor3 act = random_tensor(seed, 3, 5, 5, -1.0, 1.0);
    const Tensor3 grad = random_tensor(seed + 77, 3, 5, 5, -1.0, 1.0);
    Tensor3 scaled = grad;
    const double c = 0.01 + static_cast<double>(seed);
    for (double& v : scaled.values()) v *= c;
    const Heatmap a = heatmap_from(act, grad, 10, 10);
    const Heatmap b = heatmap_from(act, scaled, 10, 10);
    for (std::size_t i = 0; i < a.values.size(); ++i) CHECK(b.values[i] == doctest::Approx(a.values[i]).epsilon(1e-12));
  }
}

TEST_CASE("heatmap_from rejects mismatched activation and gradient") {
  CHECK_THROWS_AS((void)heatmap_from(Tensor3(2, 3, 3), Tensor3(2, 3, 4), 3, 3), ShapeError);
}

TEST_CASE("gradcam over a graph run matches the image size and range") {
  const graph::GraphRun run = run_net(5);
  for (const char* layer : {"0", "2", "5"}) {
    const Selection sel = default_selection(run, layer);
    REQUIRE_FALSE(sel.terms.empty());
    const Heatmap h = gradcam_heatmap(run, layer, sel.terms);
    CHECK(h.height == 8);
    CHECK(h.width == 8);
    const auto [lo, hi] = std::minmax_element(h.values.begin(), h.values.end());
    CHECK(*lo >= 0.0);
    CHECK(*hi <= 1.0);
    CHECK((*hi == 1.0 || *hi == 0.0));

    const Tensor3 grad = graph::backward_to_layer(run, sel.terms, layer);
    const auto expected = oracle_heatmap(run.activation(layer), grad, 8, 8);
    for (std::size_t i = 0; i < expected.size(); ++i) CHECK(h.values[i] == doctest::Approx(expected[i]).epsilon(1e-12));
  }
}

TEST_CASE("default selection picks the largest class logit") {
  const graph::GraphRun run = run_net(9);
  const Selection sel = default_selection(run, "5");
  REQUIRE(sel.terms.size() == 1);
  CHECK(graph::score(run, sel.terms) == sel.logit);
  double best = -INFINITY;
  for (const auto& [name, node] : run.heads) {
    if (name.find(".cls") == std::string::npos) continue;
    (void)node;
    for (double v : run.head(name).values()) best = std::max(best, v);
  }
  // Layer 5 feeds only the finer head, so its best logit is bounded by the global one.
  CHECK(sel.logit <= best);

  const Selection cat1 = default_selection(run, "2", 1);
  CHECK(cat1.category == 1);
  CHECK(cat1.terms.front().channel == 1);
}

TEST_CASE("zero-weight score gives an all-zero heatmap through the graph") {
  const graph::GraphRun run = run_net(3);
  Selection sel = default_selection(run, "2");
  sel.terms.front().weight = 0.0;
  const Heatmap h = gradcam_heatmap(run, "2", sel.terms);
  for (double v : h.values) CHECK(v == 0.0);
}

TEST_CASE("repeated gradcam runs are bit-identical") {
  const graph::GraphRun a = run_net(21);
  const graph::GraphRun b = run_net(21);
  const Heatmap ha = gradcam_heatmap(a, "5", default_selection(a, "5").terms);
  const Heatmap hb = gradcam_heatmap(b, "5", default_selection(b, "5").terms);
  CHECK(ha.values == hb.values);
}

TEST_CASE("unknown layer is a graph error") {
  const graph::GraphRun run = run_net(1);
  CHECK_THROWS_AS((void)default_selection(run, "nope"), GraphError);
}

TEST_CASE("viridis endpoints and monotone green") {
  CHECK(viridis_map(0.0) == Rgb{68, 1, 84});
  CHECK(viridis_map(1.0) == Rgb{253, 231, 37});
  CHECK(viridis_map(-3.0) == Rgb{68, 1, 84});
  CHECK(viridis_map(7.0) == Rgb{253, 231, 37});
  CHECK(viridis_table().size() == 256);
  int previous = -1;
  for (int i = 0; i <= 2000; ++i) {
    const int g = viridis_map(i / 2000.0).g;
    CHECK(g >= previous);
    previous = g;
  }
  for (int i = 0; i < 256; ++i) CHECK(viridis_map(i / 255.0) == viridis_table()[static_cast<std::size_t>(i)]);
}

TEST_CASE("overlay blends image and colour map") {
  const Tensor3 image = random_tensor(4, 3, 5, 6, 0.0, 255.0);
  Heatmap heat{5, 6, {}};
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 30; ++i) heat.values.push_back(u(rng));

  const Tensor3 keep = overlay(image, heat, 0.0);
  CHECK(keep.values() == image.values());
  const Tensor3 pure = overlay(image, heat, 1.0);
  CHECK(pure.values() == colorize(heat).values());
  const Tensor3 other = random_tensor(99, 3, 5, 6, 0.0, 255.0);
  CHECK(overlay(other, heat, 1.0).values() == pure.values());

  Tensor3 pixel(3, 1, 1);
  pixel.at(0, 0, 0) = 200.0;
  pixel.at(1, 0, 0) = 10.0;
  pixel.at(2, 0, 0) = 0.0;
  const Heatmap one{1, 1, {1.0}};
  const Tensor3 mean = overlay(pixel, one);
  CHECK(mean.at(0, 0, 0) == doctest::Approx((200.0 + 253.0) / 2.0));
  CHECK(mean.at(1, 0, 0) == doctest::Approx((10.0 + 231.0) / 2.0));
  CHECK(mean.at(2, 0, 0) == doctest::Approx((0.0 + 37.0) / 2.0));

  CHECK_THROWS_AS((void)overlay(image, Heatmap{5, 5, std::vector<double>(25, 0.0)}), ShapeError);
  CHECK_THROWS_AS((void)overlay(image, heat, 1.5), ConfigError);
  CHECK_THROWS_AS((void)overlay(Tensor3(1, 5, 6), heat), ShapeError);
}
