#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mcgen/mc.hpp"
#include "test_util.hpp"

using namespace mcgen;

namespace {

// All-ones codebook of C rows cannot be built from uniqueness-constrained
// sampling; construct the single-row book C times is invalid too (duplicate
// rows), so tests that need "every mode unmasked" use C distinct rows below
// plus the dedicated helper here: a book whose selected row is all-ones for
// every mode is only possible when C == 1, so the reduction tests use C == 1
// or bypass the book entirely.
Codebook ones_book(int width) {
  return Codebook({Codeword(static_cast<std::size_t>(width), 1)}, "", 0);
}

template <typename S>
McWrappedLayer<S> make_linear_layer(Index in, Index out, Act act, bool with_bn,
                                    RngStream& stream) {
  McWrappedLayer<S> l;
  l.inner = Linear<S>::make(in, out, stream);
  if (with_bn) l.norm = BatchNorm<S>::make(out);
  l.act = act;
  return l;
}

}  // namespace

TEST_CASE("hand case: linear layer masked output") {
  McWrappedLayer<double> layer;
  Linear<double> lin;
  lin.weight = TensorD::from_data({2, 2}, {1, 2, 3, 4});
  lin.bias = TensorD::zeros({2});
  layer.inner = lin;
  layer.act = Act::None;
  layer.book = Codebook({{1, 0}, {0, 1}}, "", 0);
  auto x = TensorD::from_data({1, 2}, {1, 1});
  ModalitySelector h({0}, 2);
  auto y = mc_forward(layer, x, h);
  REQUIRE(y.shape() == Shape{1, 2});
  CHECK(y.data()[0] == 3.0);
  CHECK(y.data()[1] == 0.0);
}

TEST_CASE("all-ones codebook reduces to the unwrapped layer bit-exactly") {
  RngStream init(3);
  auto layer = make_linear_layer<double>(6, 5, Act::Relu, true, init);
  RngStream init2(3);
  auto bare = make_linear_layer<double>(6, 5, Act::Relu, true, init2);
  layer.book = ones_book(5);
  RngStream data(4);
  auto x = randn<double>({7, 6}, data);
  ModalitySelector h(std::vector<Index>(7, 0), 1);
  auto y_mc = layer.forward(x, &h, true);
  auto y_bare = bare.forward(x, nullptr, true);
  CHECK(max_abs_diff(y_mc, y_bare) == 0.0);

  // Gradients are bit-identical too.
  auto loss_mc = sum(mul(y_mc, y_mc));
  auto loss_bare = sum(mul(y_bare, y_bare));
  backward(loss_mc);
  backward(loss_bare);
  const auto& wm = std::get<Linear<double>>(layer.inner).weight;
  const auto& wb = std::get<Linear<double>>(bare.inner).weight;
  for (std::size_t i = 0; i < wm.grad().size(); ++i) {
    CHECK(wm.grad()[i] == wb.grad()[i]);
  }
}

TEST_CASE("mixed-mode batch equals per-mode masked-sublayer forwards") {
  RngStream init(5);
  const int C = 4;
  const Index in = 6, out = 8, N = 12;
  for (Act act : {Act::None, Act::Relu, Act::Tanh, Act::Sigmoid}) {
    for (bool with_bn : {false, true}) {
      RngStream li(9);
      auto layer = make_linear_layer<double>(in, out, act, with_bn, li);
      auto bs = RngStream::derive(11, "book");
      layer.set_book(sample_codebook(C, static_cast<int>(out), bs));
      if (with_bn) {
        // Shared statistics: one training batch, then evaluate.
        RngStream warm(13);
        auto xw = randn<double>({16, in}, warm);
        ModalitySelector hw(std::vector<Index>(16, 0), C);
        (void)layer.forward(xw, &hw, true);
      }
      const bool training = false;
      RngStream data(17);
      auto x = randn<double>({N, in}, data);
      std::vector<Index> labels;
      for (Index i = 0; i < N; ++i) labels.push_back(i % C);
      ModalitySelector h(labels, C);
      auto y = layer.forward(x, &h, training);

      // Oracle: per mode, materialize W ⊙ e_c, b ⊙ e_c, forward the mode's
      // sub-batch through the masked sublayer, mask after activation.
      NoGradGuard ng;
      const auto& lin = std::get<Linear<double>>(layer.inner);
      for (int c = 0; c < C; ++c) {
        const auto& e = layer.book->row(c);
        std::vector<double> wm(lin.weight.data().begin(), lin.weight.data().end());
        std::vector<double> bm(lin.bias.data().begin(), lin.bias.data().end());
        for (Index d = 0; d < out; ++d) {
          if (!e[static_cast<std::size_t>(d)]) {
            for (Index k = 0; k < in; ++k) wm[static_cast<std::size_t>(d * in + k)] = 0.0;
            bm[static_cast<std::size_t>(d)] = 0.0;
          }
        }
        // Gather the sub-batch of mode c.
        std::vector<double> xs;
        std::vector<Index> rows;
        for (Index i = 0; i < N; ++i) {
          if (labels[static_cast<std::size_t>(i)] == c) {
            rows.push_back(i);
            for (Index k = 0; k < in; ++k)
              xs.push_back(x.data()[static_cast<std::size_t>(i * in + k)]);
          }
        }
        auto xc = TensorD::from_data({static_cast<Index>(rows.size()), in}, std::move(xs));
        auto z = linear(xc, TensorD::from_data({out, in}, std::move(wm)),
                        TensorD::from_data({out}, std::move(bm)));
        if (with_bn) {
          auto& bn = *layer.norm;
          z = batch_norm(z, bn.gamma, bn.beta, bn.running_mean, bn.running_var,
                         bn.batches_tracked, false, bn.momentum, bn.eps);
        }
        z = activate(act, z);
        for (std::size_t r = 0; r < rows.size(); ++r) {
          for (Index d = 0; d < out; ++d) {
            const double expect =
                e[static_cast<std::size_t>(d)]
                    ? z.data()[r * static_cast<std::size_t>(out) + static_cast<std::size_t>(d)]
                    : 0.0;
            const double got = y.data()[static_cast<std::size_t>(rows[r] * out + d)];
            CHECK(std::abs(got - expect) <= 1e-12);
          }
        }
      }
    }
  }
}

TEST_CASE("sigmoid requires mask-after-activation: masked channels are exact zeros") {
  RngStream init(7);
  auto layer = make_linear_layer<double>(4, 6, Act::Sigmoid, false, init);
  auto bs = RngStream::derive(8, "book");
  layer.set_book(sample_codebook(3, 6, bs));
  RngStream data(9);
  auto x = randn<double>({5, 4}, data);
  ModalitySelector h({0, 1, 2, 0, 1}, 3);
  auto y = layer.forward(x, &h, true);
  for (Index i = 0; i < 5; ++i) {
    const auto& e = layer.book->row(static_cast<int>(h.labels()[static_cast<std::size_t>(i)]));
    for (Index d = 0; d < 6; ++d) {
      const double v = y.data()[static_cast<std::size_t>(i * 6 + d)];
      if (!e[static_cast<std::size_t>(d)]) {
        CHECK(v == 0.0);  // sigma(.)>0 everywhere, so zero proves mask-last
      } else {
        CHECK(v > 0.0);
      }
    }
  }
}

TEST_CASE("gradient masking: masked output channels contribute zero weight gradient") {
  for (bool with_bn : {false, true}) {
    RngStream init(11);
    auto layer = make_linear_layer<double>(5, 8, Act::Relu, with_bn, init);
    auto bs = RngStream::derive(12, "book");
    layer.set_book(sample_codebook(2, 8, bs));
    RngStream data(13);
    auto x = randn<double>({6, 5}, data);
    ModalitySelector h(std::vector<Index>(6, 0), 2);  // single mode batch
    auto y = layer.forward(x, &h, true);
    backward(sum(mul(y, y)));
    const auto& lin = std::get<Linear<double>>(layer.inner);
    const auto& e = layer.book->row(0);
    for (Index d = 0; d < 8; ++d) {
      if (e[static_cast<std::size_t>(d)]) continue;
      for (Index k = 0; k < 5; ++k) {
        CHECK(lin.weight.grad()[static_cast<std::size_t>(d * 5 + k)] == 0.0);
      }
      CHECK(lin.bias.grad()[static_cast<std::size_t>(d)] == 0.0);
    }
  }
}

TEST_CASE("batch-norm running statistics come from unmasked pre-activations") {
  RngStream i1(21), i2(21);
  auto masked = make_linear_layer<double>(4, 6, Act::Relu, true, i1);
  auto bare = make_linear_layer<double>(4, 6, Act::Relu, true, i2);
  auto bs = RngStream::derive(22, "book");
  masked.set_book(sample_codebook(3, 6, bs));
  RngStream data(23);
  auto x = randn<double>({10, 4}, data);
  ModalitySelector h({0, 1, 2, 0, 1, 2, 0, 1, 2, 0}, 3);
  (void)masked.forward(x, &h, true);
  (void)bare.forward(x, nullptr, true);
  CHECK(max_abs_diff(masked.norm->running_mean, bare.norm->running_mean) == 0.0);
  CHECK(max_abs_diff(masked.norm->running_var, bare.norm->running_var) == 0.0);
}

TEST_CASE("mc layer error paths") {
  RngStream init(31);
  auto layer = make_linear_layer<double>(4, 6, Act::Relu, false, init);
  auto bs = RngStream::derive(32, "book");
  CHECK_THROWS_AS(layer.set_book(sample_codebook(3, 5, bs)), ShapeError);
  layer.set_book(sample_codebook(3, 6, bs));
  auto x = TensorD::ones({2, 4});
  CHECK_THROWS_AS(layer.forward(x, nullptr, true), ValueError);  // selector missing
}

TEST_CASE("effective subnetwork density") {
  SUBCASE("all-ones codeword and previous row give density 1") {
    RngStream init(41);
    McWrappedLayer<double> layer;
    layer.inner = Linear<double>::make(4, 3, init);
    layer.book = ones_book(3);
    Codeword prev(4, 1);
    auto eff = effective_subnetwork(layer, 0, &prev);
    CHECK(eff.density == 1.0);
    CHECK(max_abs_diff(eff.weight, std::get<Linear<double>>(layer.inner).weight) == 0.0);
  }
  SUBCASE("random 512x512 rows land near density 1/4") {
    RngStream init(42);
    McWrappedLayer<double> layer;
    layer.inner = Linear<double>::make(512, 512, init);
    auto bs = RngStream::derive(43, "book");
    layer.set_book(sample_codebook(2, 512, bs));
    RngStream prev_s(44);
    Codeword prev(512);
    for (auto& b : prev) b = prev_s.bernoulli(0.5);
    auto eff = effective_subnetwork(layer, 0, &prev);
    CHECK(eff.density > 0.23);
    CHECK(eff.density < 0.27);
    // Density matches an explicit nonzero count of the masked weight.
    Index nonzero = 0;
    for (double v : eff.weight.data()) nonzero += v != 0.0;
    // Weight entries are N(0, 0.02^2) draws: none are exactly zero.
    CHECK(static_cast<double>(nonzero) / static_cast<double>(eff.weight.size()) ==
          doctest::Approx(eff.density));
  }
  SUBCASE("first layer (no previous controller) has density ~ 1/2") {
    RngStream init(45);
    McWrappedLayer<double> layer;
    layer.inner = Linear<double>::make(512, 512, init);
    auto bs = RngStream::derive(46, "book");
    layer.set_book(sample_codebook(2, 512, bs));
    auto eff = effective_subnetwork(layer, 1);
    CHECK(eff.density > 0.44);
    CHECK(eff.density < 0.56);
  }
  SUBCASE("conv and transposed-conv weights mask their channel axes") {
    RngStream init(47);
    McWrappedLayer<double> conv_layer;
    conv_layer.inner = Conv2d<double>::make(4, 6, 3, 1, 1, init);
    auto bs = RngStream::derive(48, "book");
    conv_layer.set_book(sample_codebook(2, 6, bs));
    Codeword prev(4, 1);
    prev[0] = 0;
    auto eff = effective_subnetwork(conv_layer, 0, &prev);
    const auto& e = conv_layer.book->row(0);
    for (Index oc = 0; oc < 6; ++oc)
      for (Index ic = 0; ic < 4; ++ic)
        for (Index k = 0; k < 9; ++k) {
          const double v =
              eff.weight.data()[static_cast<std::size_t>((oc * 4 + ic) * 9 + k)];
          if (!e[static_cast<std::size_t>(oc)] || ic == 0) CHECK(v == 0.0);
        }

    McWrappedLayer<double> tconv;
    tconv.inner = ConvTranspose2d<double>::make(4, 6, 3, 1, 1, init);
    tconv.set_book(sample_codebook(2, 6, bs));
    auto eff_t = effective_subnetwork(tconv, 0, &prev);
    const auto& et = tconv.book->row(0);
    for (Index ic = 0; ic < 4; ++ic)
      for (Index oc = 0; oc < 6; ++oc)
        for (Index k = 0; k < 9; ++k) {
          const double v =
              eff_t.weight.data()[static_cast<std::size_t>((ic * 6 + oc) * 9 + k)];
          if (!et[static_cast<std::size_t>(oc)] || ic == 0) CHECK(v == 0.0);
        }
  }
  SUBCASE("error paths") {
    RngStream init(49);
    McWrappedLayer<double> layer;
    layer.inner = Linear<double>::make(4, 3, init);
    CHECK_THROWS_AS(effective_subnetwork(layer, 0), ValueError);
    auto bs = RngStream::derive(50, "book");
    layer.set_book(sample_codebook(2, 3, bs));
    CHECK_THROWS_AS(effective_subnetwork(layer, 7), ValueError);
    Codeword bad(9, 1);
    CHECK_THROWS_AS(effective_subnetwork(layer, 0, &bad), ShapeError);
  }
}

namespace {
// Independent big-integer oracle: base-1e9 limbs, repeated squaring.
std::string pow2_base1e9(int d) {
  std::vector<std::uint64_t> limbs = {1};
  auto mul_small = [&](std::uint64_t m) {
    std::uint64_t carry = 0;
    for (auto& l : limbs) {
      const std::uint64_t v = l * m + carry;
      l = v % 1'000'000'000ull;
      carry = v / 1'000'000'000ull;
    }
    while (carry) {
      limbs.push_back(carry % 1'000'000'000ull);
      carry /= 1'000'000'000ull;
    }
  };
  // Square-and-multiply over the exponent bits, multiplying limb vectors.
  auto mul_big = [](const std::vector<std::uint64_t>& a,
                    const std::vector<std::uint64_t>& b) {
    std::vector<std::uint64_t> out(a.size() + b.size(), 0);
    for (std::size_t i = 0; i < a.size(); ++i) {
      std::uint64_t carry = 0;
      for (std::size_t j = 0; j < b.size(); ++j) {
        const unsigned __int128 v =
            static_cast<unsigned __int128>(a[i]) * b[j] + out[i + j] + carry;
        out[i + j] = static_cast<std::uint64_t>(v % 1'000'000'000ull);
        carry = static_cast<std::uint64_t>(v / 1'000'000'000ull);
      }
      std::size_t k = i + b.size();
      while (carry) {
        const std::uint64_t v = out[k] + carry;
        out[k] = v % 1'000'000'000ull;
        carry = v / 1'000'000'000ull;
        ++k;
      }
    }
    while (out.size() > 1 && out.back() == 0) out.pop_back();
    return out;
  };
  std::vector<std::uint64_t> base = {2};
  std::vector<std::uint64_t> acc = {1};
  int e = d;
  while (e > 0) {
    if (e & 1) acc = mul_big(acc, base);
    base = mul_big(base, base);
    e >>= 1;
  }
  (void)mul_small;
  std::string s = std::to_string(acc.back());
  for (std::size_t i = acc.size() - 1; i-- > 0;) {
    std::string part = std::to_string(acc[i]);
    s += std::string(9 - part.size(), '0') + part;
  }
  return s;
}
}  // namespace

TEST_CASE("count_subnetworks") {
  CHECK(count_subnetworks(1) == "2");
  CHECK(count_subnetworks(10) == "1024");
  CHECK(count_subnetworks(512) == pow2_base1e9(512));
  CHECK(count_subnetworks(100) == pow2_base1e9(100));
  CHECK_THROWS_AS(count_subnetworks(0), ValueError);
}
