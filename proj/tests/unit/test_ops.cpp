#include <doctest.h>

#include <cmath>

#include "nighthaze/error.hpp"
#include "nighthaze/ops.hpp"
#include "support.hpp"

using namespace nighthaze::nn;
using nighthaze::testing::all_entries;
using nighthaze::testing::check_gradient;
using nighthaze::testing::random_tensor;

namespace {

// Random linear functional of an op output, so every output entry matters.
Tensor probe(const Tensor& y, std::uint64_t seed) {
    const Tensor w = random_tensor(y.shape(), seed, -1.0, 1.0);
    return sum(mul(y, w));
}

void check_op(const std::function<Tensor(const Tensor&)>& op, const Shape& shape, std::uint64_t seed,
              double lo = -1.0, double hi = 1.0) {
    Tensor x = random_tensor(shape, seed, lo, hi, true);
    const auto r = check_gradient([&] { return probe(op(x), seed + 100); }, x, all_entries(x));
    CHECK(r.rel_err <= 1e-6);
}

}  // namespace

TEST_CASE("elementwise and reduction gradients") {
    const Tensor other = random_tensor({2, 3, 2, 2}, 9, -1, 1);
    check_op([&](const Tensor& x) { return add(x, other); }, {2, 3, 2, 2}, 1);
    check_op([&](const Tensor& x) { return sub(other, x); }, {2, 3, 2, 2}, 2);
    check_op([&](const Tensor& x) { return mul(x, x); }, {2, 3, 2, 2}, 3);
    check_op([&](const Tensor& x) { return scale(x, -2.5); }, {2, 3, 2, 2}, 4);
    check_op([&](const Tensor& x) { return gelu(x); }, {2, 3, 2, 2}, 5);
    check_op([&](const Tensor& x) { return relu(x); }, {2, 3, 2, 2}, 6, 0.1, 1.0);
    check_op([&](const Tensor& x) { return mean(mul(x, x)); }, {2, 3, 2, 2}, 7);
    check_op([&](const Tensor& x) { return l1_distance(x, other); }, {2, 3, 2, 2}, 8);
    const Tensor s = random_tensor({1, 3, 1, 1}, 10);
    check_op([&](const Tensor& x) { return mul_channels(x, s); }, {2, 3, 2, 2}, 11);
    Tensor xs = random_tensor({2, 3, 2, 2}, 12);
    check_op([&](const Tensor& sc) { return mul_channels(xs, sc); }, {2, 3, 1, 1}, 13);
    check_op([&](const Tensor& b) { return add_batch_broadcast(xs, b); }, {1, 3, 2, 2}, 14);
}

TEST_CASE("convolution gradients") {
    const Tensor x = random_tensor({2, 3, 5, 6}, 1, -1, 1);
    const Tensor w = random_tensor({4, 3, 3, 3}, 2, -1, 1);
    const Tensor b = random_tensor({4}, 3, -1, 1);
    check_op([&](const Tensor& xx) { return conv2d(xx, w, b, 1, 1); }, x.shape(), 4);
    check_op([&](const Tensor& ww) { return conv2d(x, ww, b, 2, 1); }, w.shape(), 5);
    check_op([&](const Tensor& bb) { return conv2d(x, w, bb, 1, 0); }, b.shape(), 6);
    const Tensor w1 = random_tensor({4, 3, 1, 1}, 7, -1, 1);
    check_op([&](const Tensor& xx) { return conv2d(xx, w1, b); }, x.shape(), 8);
    const Tensor dw = random_tensor({3, 1, 3, 3}, 9, -1, 1);
    const Tensor db = random_tensor({3}, 10, -1, 1);
    check_op([&](const Tensor& xx) { return depthwise_conv3x3(xx, dw, db); }, x.shape(), 11);
    check_op([&](const Tensor& ww) { return depthwise_conv3x3(x, ww, db); }, dw.shape(), 12);
}

TEST_CASE("conv2d matches a direct sum") {
    const Tensor x = random_tensor({1, 2, 4, 4}, 1, -1, 1);
    const Tensor w = random_tensor({1, 2, 3, 3}, 2, -1, 1);
    const Tensor y = conv2d(x, w, Tensor(), 1, 1);
    double expect = 0;
    for (int c = 0; c < 2; ++c)
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                const int yy = 0 + i - 1, xx = 1 + j - 1;
                if (yy < 0 || xx < 0) continue;
                expect += x.values()[(c * 4 + yy) * 4 + xx] * w.values()[(c * 3 + i) * 3 + j];
            }
    CHECK(y.values()[1] == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("normalization, gating and pooling gradients") {
    const Tensor g = random_tensor({3}, 1, 0.5, 1.5), b = random_tensor({3}, 2, -1, 1);
    check_op([&](const Tensor& x) { return layer_norm_channels(x, g, b); }, {2, 3, 3, 2}, 3);
    const Tensor x = random_tensor({2, 3, 3, 2}, 4, -1, 1);
    check_op([&](const Tensor& gg) { return layer_norm_channels(x, gg, b); }, {3}, 5);
    const Tensor tg = random_tensor({4}, 6, 0.5, 1.5), tb = random_tensor({4}, 7, -1, 1);
    check_op([&](const Tensor& t) { return layer_norm_tokens(t, tg, tb); }, {2, 3, 4}, 8);
    check_op([](const Tensor& t) { return simple_gate(t); }, {2, 4, 2, 3}, 9);
    check_op([](const Tensor& t) { return global_avg_pool(t); }, {2, 3, 2, 3}, 10);
    check_op([](const Tensor& t) { return avg_pool2d(t, 2); }, {1, 2, 4, 6}, 11);
}

TEST_CASE("layout op gradients") {
    check_op([](const Tensor& t) { return pixel_shuffle(t, 2); }, {1, 8, 2, 3}, 1);
    check_op([](const Tensor& t) { return reflect_pad(t, 2, 1); }, {1, 2, 3, 4}, 2);
    check_op([](const Tensor& t) { return crop_top_left(t, 2, 3); }, {1, 2, 4, 4}, 3);
    check_op([](const Tensor& t) { return resize_bilinear(t, 5, 7); }, {1, 2, 3, 4}, 4);
    check_op([](const Tensor& t) { return to_tokens(t); }, {2, 3, 2, 2}, 5);
    check_op([](const Tensor& t) { return from_tokens(t, 2, 3); }, {2, 6, 4}, 6);
    check_op([](const Tensor& t) { return window_partition(t, 2); }, {1, 3, 4, 4}, 7);
}

TEST_CASE("pixel shuffle ordering") {
    std::vector<double> v(8);
    for (int i = 0; i < 8; ++i) v[static_cast<std::size_t>(i)] = i;
    // [1, 4, 1, 2] -> [1, 1, 2, 4]; channel c*4 + i*2 + j lands at (i, 2x + j)
    const Tensor y = pixel_shuffle(Tensor::from({1, 4, 1, 2}, v), 2);
    CHECK(y.shape() == Shape{1, 1, 2, 4});
    CHECK(y.values() == std::vector<double>{0, 2, 1, 3, 4, 6, 5, 7});
}

TEST_CASE("reflect pad mirrors without repeating the edge") {
    const Tensor x = Tensor::from({1, 1, 1, 3}, {1, 2, 3});
    const Tensor y = reflect_pad(x, 0, 2);
    CHECK(y.values() == std::vector<double>{1, 2, 3, 2, 1});
    CHECK_THROWS_AS(reflect_pad(x, 0, 3), nighthaze::ShapeError);
}

TEST_CASE("window partition and merge are inverse") {
    const Tensor x = random_tensor({2, 3, 4, 6}, 1);
    const Tensor w = window_partition(x, 2);
    CHECK(w.shape() == Shape{12, 4, 3});
    CHECK(window_merge(w, 2, 4, 6, 2).values() == x.values());
}

TEST_CASE("linear and attention gradients") {
    const Tensor w = random_tensor({4, 3}, 1, -1, 1), b = random_tensor({3}, 2, -1, 1);
    check_op([&](const Tensor& x) { return linear(x, w, b); }, {2, 5, 4}, 3);
    const Tensor x = random_tensor({2, 5, 4}, 4, -1, 1);
    check_op([&](const Tensor& ww) { return linear(x, ww, b); }, w.shape(), 5);
    check_op([&](const Tensor& bb) { return linear(x, w, bb); }, b.shape(), 6);

    const Tensor k = random_tensor({2, 5, 4}, 7, -1, 1), v = random_tensor({2, 5, 4}, 8, -1, 1);
    const Tensor q = random_tensor({2, 3, 4}, 9, -1, 1);
    check_op([&](const Tensor& qq) { return attention(qq, k, v, 2); }, q.shape(), 10);
    check_op([&](const Tensor& kk) { return attention(q, kk, v, 2); }, k.shape(), 11);
    check_op([&](const Tensor& vv) { return attention(q, k, vv, 2); }, v.shape(), 12);
}

TEST_CASE("attention matches hand enumeration") {
    // one head, 1 query over 3 tokens of width 2
    const Tensor q = Tensor::from({1, 1, 2}, {1.0, 0.5});
    const Tensor k = Tensor::from({1, 3, 2}, {1, 0, 0, 1, -1, 1});
    const Tensor v = Tensor::from({1, 3, 2}, {1, 2, 3, 4, 5, 6});
    std::vector<double> weights;
    const Tensor out = attention(q, k, v, 1, &weights);
    const double s = 1 / std::sqrt(2.0);
    const double e0 = std::exp(1.0 * s), e1 = std::exp(0.5 * s), e2 = std::exp(-0.5 * s);
    const double z = e0 + e1 + e2;
    CHECK(weights[0] == doctest::Approx(e0 / z).epsilon(1e-12));
    CHECK(out.values()[0] == doctest::Approx((1 * e0 + 3 * e1 + 5 * e2) / z).epsilon(1e-12));
    CHECK(out.values()[1] == doctest::Approx((2 * e0 + 4 * e1 + 6 * e2) / z).epsilon(1e-12));
}

TEST_CASE("shape errors are reported") {
    const Tensor a = Tensor::zeros({1, 2, 3, 3}), b = Tensor::zeros({1, 2, 3, 4});
    CHECK_THROWS_AS(add(a, b), nighthaze::ShapeError);
    CHECK_THROWS_AS(attention(Tensor::zeros({1, 2, 3}), Tensor::zeros({1, 2, 3}), Tensor::zeros({1, 2, 3}), 2),
                    nighthaze::ShapeError);
}

TEST_CASE("no-grad mode records no history") {
    Tensor x = random_tensor({1, 1, 2, 2}, 1, 0, 1, true);
    NoGradGuard guard;
    const Tensor y = mul(x, x);
    CHECK_FALSE(y.requires_grad());
}
