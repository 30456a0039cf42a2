#include "doctest.h"

#include <cmath>
#include <random>

#include "trapeval/blocks.hpp"
#include "trapeval/error.hpp"
#include "trapeval/tape.hpp"
#include "trapeval/tensor.hpp"

using namespace trapeval;
using namespace trapeval::blocks;

namespace {

Tensor3 random_tensor(std::mt19937_64& rng, int c, int h, int w) {
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor3 t(c, h, w);
  for (double& v : t.values()) v = n(rng);
  return t;
}

ConvWeights random_conv(std::mt19937_64& rng, int out, int in, int k) {
  std::normal_distribution<double> n(0.0, 0.5);
  ConvWeights w(out, in, k);
  for (double& v : w.weights) v = n(rng);
  for (double& v : w.bias) v = n(rng);
  return w;
}

// straight from the definition, bounds checked per tap
Tensor3 naive_conv(const Tensor3& in, const ConvWeights& w, int s, int p) {
  const int oh = (in.height() - w.kernel + 2 * p) / s + 1;
  const int ow = (in.width() - w.kernel + 2 * p) / s + 1;
  Tensor3 out(w.out_channels, oh, ow);
  for (int o = 0; o < w.out_channels; ++o)
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        double acc = w.bias[o];
        for (int i = 0; i < w.in_channels; ++i)
          for (int ky = 0; ky < w.kernel; ++ky)
            for (int kx = 0; kx < w.kernel; ++kx) {
              const int iy = y * s - p + ky;
              const int ix = x * s - p + kx;
              if (iy >= 0 && iy < in.height() && ix >= 0 && ix < in.width()) acc += w.w(o, i, ky, kx) * in.at(i, iy, ix);
            }
        out.at(o, y, x) = acc;
      }
  return out;
}

double dot(const Tensor3& a, const Tensor3& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.values()[i] * b.values()[i];
  return s;
}

}  // namespace

TEST_CASE("output dimension formula") {
  CHECK(conv_output_dim(640, {3, 2, 1}) == 320);
  CHECK(conv_output_dim(20, {5, 1, 2}) == 20);
  for (int n = 1; n < 50; ++n) CHECK(conv_output_dim(n, {1, 1, 0}) == n);
  CHECK(conv_output_dim(7, {3, 2, 0}) == 3);
  CHECK_THROWS_AS((void)conv_output_dim(2, {5, 1, 0}), ShapeError);
  CHECK_THROWS_AS((void)conv_output_dim(0, {1, 1, 0}), ShapeError);
  CHECK_THROWS_AS((void)conv_output_dim(4, {3, 0, 1}), ShapeError);
}

TEST_CASE("tensor construction") {
  const Tensor3 t(2, 3, 4, 1.5);
  CHECK(t.size() == 24);
  CHECK(t.shape().to_string() == "3x4x2");
  CHECK_THROWS_AS(Tensor3(Shape3{1, 2, 2}, std::vector<double>(3)), ShapeError);
  Tensor3 u(Shape3{2, 2, 2}, {0, 1, 2, 3, 4, 5, 6, 7});
  CHECK(u.at(1, 0, 1) == 5);
  CHECK(u.index(1, 1, 0) == 6);
  u.at(0, 0, 0) = std::nan("");
  CHECK_FALSE(u.all_finite());
}

TEST_CASE("conv2d") {
  std::mt19937_64 rng(1);
  SUBCASE("matches the definition") {
    for (int k : {1, 3, 5}) {
      for (int s : {1, 2}) {
        for (int p : {0, k / 2}) {
          const Tensor3 in = random_tensor(rng, 3, 9, 7);
          const ConvWeights w = random_conv(rng, 4, 3, k);
          const Tensor3 got = conv2d(in, w, s, p);
          const Tensor3 want = naive_conv(in, w, s, p);
          REQUIRE(got.shape() == want.shape());
          for (std::size_t i = 0; i < got.size(); ++i) CHECK(got.values()[i] == doctest::Approx(want.values()[i]).epsilon(1e-12));
        }
      }
    }
  }
  SUBCASE("first backbone layer shape") {
    WeightInit init(0);
    const ConvBlock b = ConvBlock::make(3, 32, 3, 2, init);
    const Tensor3 out = conv2d(Tensor3(3, 640, 640, 0.1), b.weights, {3, 2, 1}, true);
    CHECK(out.shape() == Shape3{32, 320, 320});
  }
  SUBCASE("identity and zero kernels") {
    const Tensor3 in = random_tensor(rng, 1, 5, 6);
    ConvWeights id(1, 1, 1);
    id.weights[0] = 1.0;
    CHECK(conv2d(in, id, {1, 1, 0}, false) == in);
    const ConvWeights zero(2, 1, 3);
    const Tensor3 z = conv2d(in, zero, {3, 1, 1}, false);
    for (double v : z.values()) CHECK(v == 0.0);
  }
  SUBCASE("activation is SiLU") {
    ConvWeights id(1, 1, 1);
    id.weights[0] = 1.0;
    const Tensor3 in(Shape3{1, 1, 3}, {-2.0, 0.0, 3.0});
    const Tensor3 out = conv2d(in, id, {1, 1, 0}, true);
    for (int x = 0; x < 3; ++x) {
      const double v = in.at(0, 0, x);
      CHECK(out.at(0, 0, x) == doctest::Approx(v / (1.0 + std::exp(-v))).epsilon(1e-15));
    }
  }
  SUBCASE("errors") {
    const ConvWeights w(2, 3, 3);
    CHECK_THROWS_AS((void)conv2d(Tensor3(2, 4, 4), w, 1, 1, "layer 7"), ShapeError);
    try {
      (void)conv2d(Tensor3(2, 4, 4), w, 1, 1, "layer 7");
    } catch (const ShapeError& e) {
      CHECK(std::string(e.what()).find("layer 7") != std::string::npos);
    }
    ConvWeights broken = w;
    broken.weights.pop_back();
    CHECK_THROWS_AS((void)conv2d(Tensor3(3, 4, 4), broken, 1, 1), ShapeError);
  }
  SUBCASE("input gradient is the adjoint") {
    for (int s : {1, 2}) {
      const Tensor3 x = random_tensor(rng, 3, 8, 9);
      ConvWeights w = random_conv(rng, 5, 3, 3);
      std::fill(w.bias.begin(), w.bias.end(), 0.0);
      const Tensor3 y = conv2d(x, w, s, 1);
      const Tensor3 g = random_tensor(rng, y.channels(), y.height(), y.width());
      Tensor3 gx(x.shape());
      conv2d_backward_input(g, w, s, 1, gx);
      CHECK(dot(y, g) == doctest::Approx(dot(x, gx)).epsilon(1e-12));
    }
  }
}

TEST_CASE("max pooling") {
  const Tensor3 c(4, 6, 6, 2.5);
  CHECK(maxpool2d(c, 5, 2) == c);
  CHECK(maxpool2d(Tensor3(512, 20, 20, 0.0), 5, 2).shape() == Shape3{512, 20, 20});

  // single bright pixel dilates into a k x k plateau, clipped at the border
  Tensor3 dot(1, 9, 9, 0.0);
  dot.at(0, 4, 1) = 7.0;
  const Tensor3 out = maxpool2d(dot, 5, 2);
  for (int y = 0; y < 9; ++y)
    for (int x = 0; x < 9; ++x) {
      const bool inside = std::abs(y - 4) <= 2 && std::abs(x - 1) <= 2;
      CHECK(out.at(0, y, x) == (inside ? 7.0 : 0.0));
    }

  // padding never wins, even against negative values
  const Tensor3 neg(1, 3, 3, -4.0);
  const Tensor3 pooled = maxpool2d(neg, 3, 1);
  for (double v : pooled.values()) CHECK(v == -4.0);
  CHECK_THROWS_AS((void)maxpool2d(neg, 3, 3), ShapeError);
}

TEST_CASE("nearest upsampling") {
  const Tensor3 in(Shape3{1, 2, 2}, {1, 2, 3, 4});
  const Tensor3 want(Shape3{1, 4, 4}, {1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4});
  CHECK(upsample_nearest(in, 2) == want);
  CHECK(upsample_nearest(in, 1) == in);
  CHECK(upsample_nearest(Tensor3(512, 20, 20), 2).shape() == Shape3{512, 40, 40});
  CHECK_THROWS_AS((void)upsample_nearest(in, 0), ShapeError);
  const Tensor3 r = resize_nearest(want, 2, 2);
  CHECK(r == in);
}

TEST_CASE("channel concatenation") {
  const std::vector<Tensor3> four(4, Tensor3(512, 20, 20));
  CHECK(concat_channels(four).shape() == Shape3{2048, 20, 20});
  std::mt19937_64 rng(2);
  const std::vector<Tensor3> one{random_tensor(rng, 3, 2, 2)};
  CHECK(concat_channels(one) == one[0]);
  const std::vector<Tensor3> ab{Tensor3(1, 1, 1, 0.25), Tensor3(1, 1, 1, -3.0)};
  CHECK(concat_channels(ab).values() == std::vector<double>{0.25, -3.0});
  const std::vector<Tensor3> bad{Tensor3(1, 2, 2), Tensor3(1, 2, 3)};
  CHECK_THROWS_AS((void)concat_channels(bad), ShapeError);
  CHECK_THROWS_AS((void)concat_channels(std::vector<Tensor3>{}), ShapeError);
}

TEST_CASE("row permutation and linear rows") {
  std::mt19937_64 rng(3);
  const Tensor3 t = random_tensor(rng, 16, 2, 2);
  const Tensor3 rows = to_rows(t);
  CHECK(rows.shape() == Shape3{1, 4, 16});
  CHECK(rows.at(0, 3, 5) == t.at(5, 1, 1));
  CHECK(from_rows(rows, t.shape()) == t);
  CHECK_THROWS_AS((void)from_rows(rows, Shape3{8, 2, 2}), ShapeError);

  LinearWeights lw(2, 16);
  lw.weights[0 * 16 + 5] = 2.0;
  lw.bias[1] = -1.0;
  const Tensor3 y = linear_rows(rows, lw);
  CHECK(y.shape() == Shape3{1, 4, 2});
  CHECK(y.at(0, 2, 0) == 2.0 * t.at(5, 1, 0));
  CHECK(y.at(0, 2, 1) == -1.0);
}

TEST_CASE("tensor dump format") {
  const Tensor3 t(Shape3{1, 1, 2}, {1.0, -2.0});
  const std::string bytes = encode_tensor(t);
  REQUIRE(bytes.size() == 16 + 16);
  CHECK(bytes.substr(0, 4) == "TNSR");
  CHECK(bytes.substr(4, 12) == std::string("\x01\0\0\0\x01\0\0\0\x02\0\0\0", 12));
  // 1.0 = 0x3FF0000000000000, little endian
  CHECK(bytes.substr(16, 8) == std::string("\0\0\0\0\0\0\xF0\x3F", 8));
  CHECK(decode_tensor(bytes) == t);
  CHECK_THROWS_AS((void)decode_tensor("TNSR"), ParseError);
  CHECK_THROWS_AS((void)decode_tensor(bytes.substr(0, 20)), ParseError);
}

TEST_CASE("weight initialisation") {
  WeightInit a(42);
  WeightInit b(42);
  ConvWeights wa(8, 4, 3);
  ConvWeights wb(8, 4, 3);
  a.fill(wa);
  b.fill(wb);
  CHECK(wa.weights == wb.weights);
  const double bound = 1.0 / std::sqrt(36.0);
  for (double v : wa.weights) CHECK(std::abs(v) <= bound);
  for (double v : wa.bias) CHECK(v == 0.0);
  WeightInit c(43);
  ConvWeights wc(8, 4, 3);
  c.fill(wc);
  CHECK(wc.weights != wa.weights);
  WeightInit u(7);
  for (int i = 0; i < 1000; ++i) {
    const double x = u.uniform();
    CHECK((x >= 0.0 && x < 1.0));
  }
}

TEST_CASE("tape gradients match finite differences") {
  std::mt19937_64 rng(9);
  const ConvWeights w1 = random_conv(rng, 4, 2, 3);
  LinearWeights lw(4, 4);
  std::normal_distribution<double> n(0.0, 0.5);
  for (double& v : lw.weights) v = n(rng);

  // exercises every op kind
  auto build = [&](Tape& t, const Tensor3& x) {
    const Tape::Node in = t.input(x);
    const Tape::Node a = t.silu(t.conv(in, w1, 2, 1));
    const Tape::Node b = t.maxpool(a, 3, 1);
    const Tape::Node c = t.upsample(b, 2);
    const Tape::Node d = t.slice(c, 1, 3);
    const std::vector<Tape::Node> parts{c, d};
    const Tape::Node e = t.concat(parts);
    const Tape::Node f = t.from_rows(t.linear(t.to_rows(t.slice(e, 0, 4)), lw), t.value(c).shape());
    const Tape::Node g = t.mul(t.sigmoid(f), t.relu(c));
    return t.add(g, c);
  };
  const Tensor3 x = random_tensor(rng, 2, 6, 6);
  Tape tape;
  const Tape::Node out = build(tape, x);
  const Tensor3 seed_grad = random_tensor(rng, tape.value(out).channels(), tape.value(out).height(), tape.value(out).width());
  const std::vector<Tape::Seed> seeds{{out, seed_grad}};
  const Tensor3 g = tape.gradient(seeds, 0);
  CHECK(g.shape() == x.shape());

  const double h = 1e-6;
  int checked = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    Tensor3 xp = x;
    Tensor3 xm = x;
    xp.values()[i] += h;
    xm.values()[i] -= h;
    Tape tp;
    Tape tm;
    const double fp = dot(tp.value(build(tp, xp)), seed_grad);
    const double fm = dot(tm.value(build(tm, xm)), seed_grad);
    const double fd = (fp - fm) / (2 * h);
    // skip where a max or ReLU switches inside the stencil
    if (std::abs(fd - g.values()[i]) > 1e-5 * std::max(1.0, std::abs(fd))) {
      Tape t2;
      Tensor3 xs = x;
      xs.values()[i] += h / 10;
      const double f2 = dot(t2.value(build(t2, xs)), seed_grad);
      Tape t0;
      const double f0 = dot(t0.value(build(t0, x)), seed_grad);
      const double one_sided = (f2 - f0) / (h / 10);
      CHECK(std::abs(one_sided - fd) > 1e-4);
      continue;
    }
    ++checked;
  }
  CHECK(checked >= static_cast<int>(x.size()) - 4);
}

TEST_CASE("max pool gradient routes to one first-scan entry per window") {
  Tape tape;
  const Tape::Node in = tape.input(Tensor3(1, 4, 4, 1.0));
  const Tape::Node out = tape.maxpool(in, 3, 1);
  const std::vector<Tape::Seed> seeds{{out, Tensor3(1, 4, 4, 1.0)}};
  const Tensor3 g = tape.gradient(seeds, in);
  double total = 0.0;
  for (double v : g.values()) total += v;
  CHECK(total == 16.0);
  // ties resolve to the top-left of each clipped window
  const std::vector<double> want{4, 2, 2, 0, 2, 1, 1, 0, 2, 1, 1, 0, 0, 0, 0, 0};
  CHECK(g.values() == want);
  Tape again;
  const Tape::Node in2 = again.input(Tensor3(1, 4, 4, 1.0));
  const Tape::Node out2 = again.maxpool(in2, 3, 1);
  const std::vector<Tape::Seed> seeds2{{out2, Tensor3(1, 4, 4, 1.0)}};
  CHECK(again.gradient(seeds2, in2) == g);
}

TEST_CASE("tape ancestry") {
  Tape tape;
  const Tape::Node a = tape.input(Tensor3(1, 2, 2, 1.0));
  const Tape::Node b = tape.input(Tensor3(1, 2, 2, 2.0));
  const Tape::Node c = tape.relu(a);
  CHECK(tape.is_ancestor(a, c));
  CHECK_FALSE(tape.is_ancestor(b, c));
  const std::vector<Tape::Seed> seeds{{c, Tensor3(1, 2, 2, 1.0)}};
  CHECK_THROWS_AS((void)tape.gradient(seeds, b), GraphError);
  CHECK(tape.gradient(seeds, c) == Tensor3(1, 2, 2, 1.0));
}

TEST_CASE("C2f block") {
  WeightInit init(5);
  SUBCASE("shape preserving") {
    const C2f small = C2f::make(64, 64, 1, true, init);
    CHECK(c2f_forward(Tensor3(64, 160, 160, 0.01), small).shape() == Shape3{64, 160, 160});
    const C2f deep = C2f::make(512, 512, 1, true, init);
    CHECK(c2f_forward(Tensor3(512, 20, 20, 0.01), deep).shape() == Shape3{512, 20, 20});
  }
  SUBCASE("zero bottlenecks reduce to split and fuse") {
    // 1x1 spatial, two channels, c = 1
    C2f b = C2f::make(2, 2, 1, true, init);
    b.cv1.weights.weights = {1.0, 0.0, 0.0, 2.0};  // y0 = silu(u), y1 = silu(2v)
    for (ConvBlock* cb : {&b.bottlenecks[0].cv1, &b.bottlenecks[0].cv2}) {
      std::fill(cb->weights.weights.begin(), cb->weights.weights.end(), 0.0);
    }
    b.cv2.weights.weights = {1.0, 1.0, 0.0, 0.0, 0.0, 1.0};  // [y0, y1, y1 + 0] -> 2 channels
    const double u = 0.7;
    const double v = -0.4;
    const Tensor3 out = c2f_forward(Tensor3(Shape3{2, 1, 1}, {u, v}), b);
    const double y0 = silu(u);
    const double y1 = silu(2 * v);
    CHECK(out.at(0, 0, 0) == doctest::Approx(silu(y0 + y1)).epsilon(1e-15));
    CHECK(out.at(1, 0, 0) == doctest::Approx(silu(y1)).epsilon(1e-15));
  }
  CHECK_THROWS_AS((void)C2f::make(4, 3, 1, true, init), ShapeError);
}

TEST_CASE("SPPF block") {
  WeightInit init(6);
  const Sppf big = Sppf::make(512, 5, init);
  Tape tape;
  Tape::Node cat = 0;
  const Tape::Node out = big.apply(tape, tape.input(Tensor3(512, 20, 20, 0.02)), &cat);
  CHECK(tape.value(cat).shape() == Shape3{2048, 20, 20});
  CHECK(tape.value(out).shape() == Shape3{512, 20, 20});

  // identity fuse on a constant map stays constant
  Sppf s = Sppf::make(2, 5, init);
  std::fill(s.fuse.weights.weights.begin(), s.fuse.weights.weights.end(), 0.0);
  s.fuse.weights.w(0, 0, 0, 0) = 1.0;
  s.fuse.weights.w(1, 1, 0, 0) = 1.0;
  const Tensor3 y = sppf_forward(Tensor3(2, 6, 6, 1.25), s);
  for (int c = 0; c < 2; ++c)
    for (int yy = 0; yy < 6; ++yy)
      for (int x = 0; x < 6; ++x) CHECK(y.at(c, yy, x) == silu(1.25));
}

TEST_CASE("GAM channel attention") {
  WeightInit init(7);
  std::mt19937_64 rng(7);
  const GamChannel g = GamChannel::make(16, init);
  ChannelTrace trace;
  const Tensor3 x = random_tensor(rng, 16, 2, 2);
  const Tensor3 y = gam_channel_attention(x, g, &trace);
  CHECK(trace.permuted == MatrixShape{4, 16});
  CHECK(trace.hidden == MatrixShape{4, 4});
  CHECK(trace.output == MatrixShape{4, 16});
  CHECK(y.shape() == x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double gate = y.values()[i] / x.values()[i];
    CHECK(gate > 0.0);
    CHECK(gate < 1.0);
  }

  GamChannel zero = g;
  std::fill(zero.fc1.weights.begin(), zero.fc1.weights.end(), 0.0);
  std::fill(zero.fc2.weights.begin(), zero.fc2.weights.end(), 0.0);
  const Tensor3 half = gam_channel_attention(x, zero);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(half.values()[i] == 0.5 * x.values()[i]);

  CHECK_THROWS_AS((void)GamChannel::make(6, init), ShapeError);
  for (int c : {4, 8, 12}) {
    const GamChannel any = GamChannel::make(c, init);
    CHECK(gam_channel_attention(random_tensor(rng, c, 3, 5), any).shape() == Shape3{c, 3, 5});
  }
}

TEST_CASE("GAM spatial attention") {
  WeightInit init(8);
  std::mt19937_64 rng(8);
  const GamSpatial s = GamSpatial::make(8, 4, init);
  CHECK(s.conv1.out_channels == 2);
  CHECK(s.conv1.kernel == 7);
  const Tensor3 x = random_tensor(rng, 8, 5, 5);
  Tape tape;
  const Tape::Node gate = s.gate(tape, tape.input(x));
  for (double v : tape.value(gate).values()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  CHECK(gam_spatial_attention(x, s).shape() == x.shape());

  GamSpatial zero = s;
  std::fill(zero.conv1.weights.begin(), zero.conv1.weights.end(), 0.0);
  std::fill(zero.conv2.weights.begin(), zero.conv2.weights.end(), 0.0);
  const Tensor3 half = gam_spatial_attention(x, zero);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(half.values()[i] == 0.5 * x.values()[i]);
  CHECK_THROWS_AS((void)GamSpatial::make(6, 4, init), ShapeError);
}

TEST_CASE("GAM module") {
  WeightInit init(9);
  std::mt19937_64 rng(9);
  Gam g = Gam::make(8, 4, init);
  const Tensor3 x = random_tensor(rng, 8, 4, 4);

  Gam open = g;
  std::fill(open.channel.fc1.weights.begin(), open.channel.fc1.weights.end(), 0.0);
  std::fill(open.channel.fc2.weights.begin(), open.channel.fc2.weights.end(), 0.0);
  std::fill(open.channel.fc2.bias.begin(), open.channel.fc2.bias.end(), 20.0);
  std::fill(open.spatial.conv1.weights.begin(), open.spatial.conv1.weights.end(), 0.0);
  std::fill(open.spatial.conv2.weights.begin(), open.spatial.conv2.weights.end(), 0.0);
  std::fill(open.spatial.conv2.bias.begin(), open.spatial.conv2.bias.end(), 20.0);
  const Tensor3 y = gam_forward(x, open);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(y.values()[i] - x.values()[i]) <= 1e-6 * std::abs(x.values()[i]));

  const Tensor3 zero_out = gam_forward(Tensor3(8, 4, 4, 0.0), g);
  for (double v : zero_out.values()) CHECK(v == 0.0);
  CHECK(gam_forward(x, g).shape() == x.shape());
}

TEST_CASE("detect head sizes") {
  CHECK(Detect::box_hidden(64) == 16);
  CHECK(Detect::box_hidden(512) == 128);
  CHECK(Detect::cls_hidden(64, 15) == 64);
  CHECK(Detect::cls_hidden(8, 15) == 15);
  WeightInit init(10);
  const Detect d = Detect::make({8, 16}, 3, init);
  Tape tape;
  const std::vector<Tape::Node> in{tape.input(Tensor3(8, 4, 4, 0.1)), tape.input(Tensor3(16, 2, 2, 0.1))};
  const auto outs = d.apply(tape, in);
  REQUIRE(outs.size() == 2);
  CHECK(tape.value(outs[0].first).shape() == Shape3{4, 4, 4});
  CHECK(tape.value(outs[0].second).shape() == Shape3{3, 4, 4});
  CHECK(tape.value(outs[1].second).shape() == Shape3{3, 2, 2});
}
