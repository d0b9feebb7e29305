#include <set>

#include "doctest.h"
#include "dupnet/conv.hpp"
#include "helpers.hpp"

using namespace dupnet;

namespace {

// Direct six-loop summation: n, o, oy, ox outer; c, ky, kx inner, with
// explicit zero padding.
IntTensor naive_conv(const IntTensor& x, const IntTensor& w, std::size_t stride, std::size_t pad) {
  const Shape xs = x.shape(), ws = w.shape();
  const std::size_t k = ws.h;
  const std::size_t oh = (xs.h + 2 * pad - k) / stride + 1;
  const std::size_t ow = (xs.w + 2 * pad - k) / stride + 1;
  IntTensor padded(Shape{xs.n, xs.c, xs.h + 2 * pad, xs.w + 2 * pad});
  for (std::size_t n = 0; n < xs.n; ++n)
    for (std::size_t c = 0; c < xs.c; ++c)
      for (std::size_t y = 0; y < xs.h; ++y)
        for (std::size_t xx = 0; xx < xs.w; ++xx) padded.at(n, c, y + pad, xx + pad) = x.at(n, c, y, xx);
  IntTensor out(Shape{xs.n, ws.n, oh, ow});
  for (std::size_t n = 0; n < xs.n; ++n)
    for (std::size_t o = 0; o < ws.n; ++o)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          std::int64_t acc = 0;
          for (std::size_t c = 0; c < xs.c; ++c)
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx)
                acc += static_cast<std::int64_t>(padded.at(n, c, oy * stride + ky, ox * stride + kx)) * w.at(o, c, ky, kx);
          out.at(n, o, oy, ox) = static_cast<std::int32_t>(acc);
        }
  return out;
}

}  // namespace

TEST_SUITE("conv") {
  TEST_CASE("reference conv small cases") {
    CHECK(conv2d_int_ref(IntTensor(Shape{1, 3, 4, 4}), IntTensor(Shape{2, 3, 3, 3}, 1), {1, 1}) ==
          IntTensor(Shape{1, 2, 4, 4}));
    const IntTensor y = conv2d_int_ref(IntTensor(Shape{1, 1, 1, 1}, 3), IntTensor(Shape{1, 1, 1, 1}, 1), {1, 0});
    CHECK(y.vec() == std::vector<std::int32_t>{3});
    Rng rng(41);
    const IntTensor x = testutil::random_codes(Shape{1, 4, 5, 5}, rng, 0, 3);
    const IntTensor w = testutil::random_signs(Shape{3, 4, 3, 3}, rng);
    CHECK(conv2d_int_ref(x, w, {1, 1}) == naive_conv(x, w, 1, 1));
  }

  TEST_CASE("reference conv equals the six-loop oracle on 1000 random cases") {
    Rng rng(43);
    int mismatches = 0;
    for (int trial = 0; trial < 1000; ++trial) {
      const std::size_t k = rng.bernoulli(0.5) ? 3 : 1;
      const std::size_t stride = static_cast<std::size_t>(rng.integer(1, 2));
      const std::size_t pad = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(k / 2)));
      const std::size_t c = static_cast<std::size_t>(rng.integer(1, 9));
      const std::size_t h = static_cast<std::size_t>(rng.integer(static_cast<std::int64_t>(k), 7));
      const IntTensor x = testutil::random_codes(Shape{1 + trial % 2u, c, h, h + 1}, rng, -8, 255);
      const IntTensor w = testutil::random_codes(Shape{static_cast<std::size_t>(rng.integer(1, 4)), c, k, k}, rng, -7, 7);
      if (conv2d_int_ref(x, w, {stride, pad}) != naive_conv(x, w, stride, pad)) ++mismatches;
    }
    CHECK(mismatches == 0);
  }

  TEST_CASE("real conv agrees with the integer conv on integer inputs") {
    Rng rng(47);
    const IntTensor x = testutil::random_codes(Shape{2, 5, 6, 6}, rng, 0, 15);
    const IntTensor w = testutil::random_signs(Shape{4, 5, 3, 3}, rng);
    const Tensor yr = conv2d(tensor_cast<double>(x), tensor_cast<double>(w), {2, 1});
    CHECK(yr == tensor_cast<double>(conv2d_int_ref(x, w, {2, 1})));
  }

  TEST_CASE("conv backward is the adjoint of the forward") {
    Rng rng(53);
    for (std::size_t stride : {1u, 2u}) {
      const ConvGeometry g{stride, 1};
      const Tensor x = testutil::random_real(Shape{2, 3, 5, 6}, rng);
      const Tensor w = testutil::random_real(Shape{4, 3, 3, 3}, rng);
      const Tensor y = conv2d(x, w, g);
      const Tensor dy = testutil::random_real(y.shape(), rng);
      const ConvGrads gr = conv2d_backward(dy, x, w, g);
      const Tensor dx_probe = testutil::random_real(x.shape(), rng);
      const Tensor dw_probe = testutil::random_real(w.shape(), rng);
      // <dy, conv(dx_probe, w)> = <dx, dx_probe> and <dy, conv(x, dw_probe)> = <dw, dw_probe>.
      CHECK(dot(dy, conv2d(dx_probe, w, g)) == doctest::Approx(dot(gr.dx, dx_probe)).epsilon(1e-12));
      CHECK(dot(dy, conv2d(x, dw_probe, g)) == doctest::Approx(dot(gr.dw, dw_probe)).epsilon(1e-12));
      CHECK(conv2d_backward(dy, x, w, g, false).dx.empty());
    }
  }

  TEST_CASE("geometry errors") {
    CHECK_THROWS_AS(conv2d_int_ref(IntTensor(Shape{1, 3, 4, 4}), IntTensor(Shape{1, 2, 3, 3}), {1, 1}), ShapeError);
    CHECK_THROWS_AS(conv_out_dim(2, 5, 1, 0), ShapeError);
    CHECK_THROWS_AS(conv_out_dim(4, 3, 0, 0), ShapeError);
    CHECK(conv_out_dim(608, 3, 1, 1) == 608);
    CHECK(conv_out_dim(5, 3, 2, 1) == 3);
  }

  TEST_CASE("dup-weight conv: tile equals fast") {
    Rng rng(59);
    const IntTensor x = testutil::random_codes(Shape{1, 8, 5, 5}, rng, 0, 3);
    const IntTensor wt = testutil::random_signs(Shape{3, 2, 3, 3}, rng);
    CHECK(dupweight_conv_forward(x, wt, 4, DupWeightMode::tile, {1, 1}) ==
          dupweight_conv_forward(x, wt, 4, DupWeightMode::fast, {1, 1}));
    const IntTensor w1 = testutil::random_signs(Shape{3, 8, 3, 3}, rng);
    CHECK(dupweight_conv_forward(x, w1, 1, DupWeightMode::fast, {1, 1}) == conv2d_int_ref(x, w1, {1, 1}));
    CHECK_THROWS_AS(dupweight_conv_forward(x, wt, 3, DupWeightMode::tile, {1, 1}), ShapeError);
    CHECK_THROWS_AS(dupweight_conv_forward(x, w1, 4, DupWeightMode::tile, {1, 1}), ShapeError);
  }

  TEST_CASE("dup-weight conv accepts c=512 with a 128-channel template") {
    Rng rng(61);
    const IntTensor x = testutil::random_codes(Shape{1, 512, 2, 2}, rng, 0, 3);
    const IntTensor wt = testutil::random_signs(Shape{2, 128, 1, 1}, rng);
    CHECK(dupweight_conv_forward(x, wt, 4, DupWeightMode::tile, {1, 0}) ==
          dupweight_conv_forward(x, wt, 4, DupWeightMode::fast, {1, 0}));
  }

  TEST_CASE("dup-feature conv: dup equals fast") {
    Rng rng(67);
    const IntTensor x = testutil::random_codes(Shape{1, 3, 6, 6}, rng, 0, 3);
    const IntTensor w = testutil::random_signs(Shape{5, 12, 3, 3}, rng);
    const IntTensor y = dupfeature_conv_forward(x, w, 4, DupFeatureMode::dup, {1, 1});
    CHECK(y.shape() == Shape{1, 5, 6, 6});
    CHECK(y == dupfeature_conv_forward(x, w, 4, DupFeatureMode::fast, {1, 1}));
    const IntTensor w1 = testutil::random_signs(Shape{5, 3, 3, 3}, rng);
    CHECK(dupfeature_conv_forward(x, w1, 1, DupFeatureMode::fast, {1, 1}) == conv2d_int_ref(x, w1, {1, 1}));
    CHECK_THROWS_AS(dupfeature_conv_forward(x, w1, 4, DupFeatureMode::dup, {1, 1}), ShapeError);
  }

  TEST_CASE("rewrite identities across d and k") {
    Rng rng(71);
    for (std::size_t d : {1u, 2u, 4u, 8u})
      for (std::size_t k : {1u, 3u}) {
        const ConvGeometry g{1, k / 2};
        const IntTensor x = testutil::random_codes(Shape{1, 2 * d, 4, 4}, rng, 0, 255);
        const IntTensor wt = testutil::random_signs(Shape{3, 2, k, k}, rng);
        CHECK(dupweight_conv_forward(x, wt, d, DupWeightMode::tile, g) ==
              dupweight_conv_forward(x, wt, d, DupWeightMode::fast, g));
        const IntTensor xs = testutil::random_codes(Shape{1, 2, 4, 4}, rng, 0, 255);
        const IntTensor w = testutil::random_signs(Shape{3, 2 * d, k, k}, rng);
        CHECK(dupfeature_conv_forward(xs, w, d, DupFeatureMode::dup, g) ==
              dupfeature_conv_forward(xs, w, d, DupFeatureMode::fast, g));
      }
  }

  TEST_CASE("weight_group_sum of binary weights") {
    const IntTensor w(Shape{1, 4, 1, 1}, {1, -1, 1, 1});
    CHECK(weight_group_sum(w, 4).vec() == std::vector<std::int32_t>{2});
    CHECK(weight_group_sum(IntTensor(Shape{1, 4, 1, 1}, 1), 4).vec() == std::vector<std::int32_t>{4});
    Rng rng(73);
    for (std::size_t d : {2u, 4u, 8u}) {
      std::set<std::int32_t> seen;
      const IntTensor sums = weight_group_sum(testutil::random_signs(Shape{16, 8 * d, 3, 3}, rng), d);
      for (auto v : sums.data()) seen.insert(v);
      for (auto v : seen) {
        CHECK(std::abs(v) <= static_cast<int>(d));
        CHECK((v + static_cast<int>(d)) % 2 == 0);
      }
      if (d == 4) CHECK(seen == std::set<std::int32_t>{-4, -2, 0, 2, 4});
    }
  }

  TEST_CASE("dup gradient reductions") {
    const Tensor dw(Shape{1, 4, 1, 1}, {1, 2, 3, 4});
    CHECK(dupweight_grad_template(dw, 2, GradReduce::average).vec() == std::vector<double>{2, 3});
    CHECK(dupweight_grad_template(dw, 2, GradReduce::sum).vec() == std::vector<double>{4, 6});
    CHECK(dupweight_grad_template(dw, 1, GradReduce::average) == dw);
    const Tensor dx(Shape{1, 4, 1, 1}, {4, 0, 2, 2});
    CHECK(dupfeature_grad_input(dx, 4, GradReduce::average).vec() == std::vector<double>{2});
    CHECK(dupfeature_grad_input(dx, 4, GradReduce::sum).vec() == std::vector<double>{8});
    CHECK(dupfeature_grad_input(dx, 1, GradReduce::sum) == dx);
    CHECK(dupfeature_grad_input(Tensor(Shape{1, 8, 2, 2}), 4, GradReduce::average) == Tensor(Shape{1, 2, 2, 2}));
    Rng rng(79);
    const Tensor g = testutil::random_real(Shape{3, 16, 3, 3}, rng);
    for (std::size_t d : {2u, 4u, 8u}) {
      const Tensor a = dupweight_grad_template(g, d, GradReduce::average);
      const Tensor s = dupweight_grad_template(g, d, GradReduce::sum);
      for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(s[i] / static_cast<double>(d)).epsilon(1e-12));
    }
  }
}
