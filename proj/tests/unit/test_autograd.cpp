#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "../support/gradcheck.hpp"
#include "xlearner/nn.hpp"
#include "xlearner/ops.hpp"
#include "xlearner/rng.hpp"

using namespace xl;
using V = ag::Var<double>;

namespace {

V random_param(Shape s, Rng& rng, double scale = 1.0) {
    Tensor<double> t(std::move(s));
    for (auto& v : t.values()) v = rng.uniform(-scale, scale);
    return V::parameter(std::move(t));
}

// Fixed random projection turns any tensor into a scalar with a non-trivial gradient.
V project(const V& y, std::uint64_t seed) {
    Rng rng(seed);
    Tensor<double> w(y.shape());
    for (auto& v : w.values()) v = rng.uniform(-1, 1);
    return ops::sum_squared_diff(y, V(w));
}

}  // namespace

TEST_CASE("conv2d gradients match finite differences") {
    Rng rng(1);
    for (auto [stride, pad, k] : {std::tuple{1, 1, 3}, {2, 1, 3}, {1, 0, 1}, {2, 0, 1}}) {
        auto x = random_param({2, 3, 5, 6}, rng);
        auto w = random_param({4, 3, std::size_t(k), std::size_t(k)}, rng);
        auto b = random_param({4}, rng);
        auto f = [&] { return project(ops::conv2d(x, w, b, {std::size_t(stride), std::size_t(pad)}), 11); };
        auto r = testing::grad_check(f, {x, w, b});
        CHECK(r.max_rel_error < 1e-6);
    }
}

TEST_CASE("conv2d matches direct convolution") {
    Rng rng(2);
    auto x = random_param({1, 2, 4, 4}, rng);
    auto w = random_param({3, 2, 3, 3}, rng);
    auto y = ops::conv2d(x, w, V(), {2, 1});
    REQUIRE(y.shape() == Shape{1, 3, 2, 2});
    for (std::size_t co = 0; co < 3; ++co)
        for (std::size_t oh = 0; oh < 2; ++oh)
            for (std::size_t ow = 0; ow < 2; ++ow) {
                double acc = 0;
                for (std::size_t ci = 0; ci < 2; ++ci)
                    for (int kh = 0; kh < 3; ++kh)
                        for (int kw = 0; kw < 3; ++kw) {
                            const int ih = int(oh) * 2 - 1 + kh, iw = int(ow) * 2 - 1 + kw;
                            if (ih < 0 || iw < 0 || ih >= 4 || iw >= 4) continue;
                            acc += x.value()[(ci * 4 + ih) * 4 + iw] * w.value()[((co * 2 + ci) * 3 + kh) * 3 + kw];
                        }
                CHECK(y.value()[(co * 2 + oh) * 2 + ow] == doctest::Approx(acc).epsilon(1e-12));
            }
}

TEST_CASE("batch norm gradients in training and inference mode") {
    Rng rng(3);
    auto x = random_param({3, 2, 3, 3}, rng);
    auto g = random_param({2}, rng);
    auto b = random_param({2}, rng);
    Tensor<double> rm({2}, 0.1), rv({2}, 1.5);
    for (bool training : {true, false}) {
        auto f = [&] {
            return project(ops::batch_norm(x, g, b, &rm, &rv, {training, 0.0, 1e-5}), 5);
        };
        CHECK(testing::grad_check(f, {x, g, b}).max_rel_error < 1e-6);
    }
}

TEST_CASE("batch norm training output is normalized per channel") {
    Rng rng(4);
    auto x = random_param({4, 3, 2, 2}, rng, 5.0);
    V g(Tensor<double>({3}, 1.0)), b(Tensor<double>({3}, 0.0));
    auto y = ops::batch_norm<double>(x, g, b, nullptr, nullptr, {true, 0.1, 0.0});
    for (std::size_t c = 0; c < 3; ++c) {
        double s = 0, ss = 0;
        for (std::size_t n = 0; n < 4; ++n)
            for (std::size_t i = 0; i < 4; ++i) {
                const double v = y.value()[(n * 3 + c) * 4 + i];
                s += v;
                ss += v * v;
            }
        CHECK(s / 16 == doctest::Approx(0.0).epsilon(1e-12));
        CHECK(ss / 16 == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("pooling, linear, upsampling and activation gradients") {
    Rng rng(5);
    auto x = random_param({2, 3, 4, 4}, rng);
    CHECK(testing::grad_check([&] { return project(ops::relu(x), 1); }, {x}).max_rel_error < 1e-6);
    CHECK(testing::grad_check([&] { return project(ops::max_pool2d(x, 2, 2, 0), 2); }, {x}).max_rel_error < 1e-6);
    CHECK(testing::grad_check([&] { return project(ops::max_pool2d(x, 3, 2, 1), 2); }, {x}).max_rel_error < 1e-6);
    CHECK(testing::grad_check([&] { return project(ops::global_avg_pool(x), 3); }, {x}).max_rel_error < 1e-6);
    CHECK(testing::grad_check([&] { return project(ops::upsample_nearest2x(x), 4); }, {x}).max_rel_error < 1e-6);
    CHECK(testing::grad_check([&] { return project(ops::upsample_bilinear(x, 9, 7), 6); }, {x}).max_rel_error < 1e-6);

    auto in = random_param({5, 4}, rng);
    auto w = random_param({3, 4}, rng);
    auto b = random_param({3}, rng);
    CHECK(testing::grad_check([&] { return project(ops::linear(in, w, b), 7); }, {in, w, b}).max_rel_error < 1e-6);
}

TEST_CASE("bilinear upsample of a constant map is constant and 2x matches half-pixel rule") {
    V x(Tensor<double>({1, 1, 2, 2}, std::vector<double>{0, 1, 2, 3}));
    auto y = ops::upsample_bilinear(x, 4, 4);
    // half-pixel centers: output row 0 maps to source -0.25 -> clamped 0
    CHECK(y.value()[0] == doctest::Approx(0.0));
    CHECK(y.value()[1] == doctest::Approx(0.25));
    CHECK(y.value()[5] == doctest::Approx(0.75));
    CHECK(y.value()[15] == doctest::Approx(3.0));
}

TEST_CASE("cross entropy: closed forms and gradients") {
    for (std::size_t c : {2u, 3u, 4u, 10u}) {
        V logits(Tensor<double>({3, c}, 0.7));
        std::vector<std::int32_t> labels{0, 1, 1};
        CHECK(ops::cross_entropy(logits, labels).item() == doctest::Approx(std::log(double(c))).epsilon(1e-12));
    }
    Rng rng(6);
    auto z = random_param({4, 5}, rng, 3.0);
    std::vector<std::int32_t> labels{0, 4, 2, 2};
    CHECK(testing::grad_check([&] { return ops::cross_entropy(z, labels); }, {z}).max_rel_error < 1e-6);

    auto zp = random_param({2, 3, 2, 3}, rng, 3.0);
    std::vector<std::int32_t> pl{0, 1, 2, 2, 1, 0, 1, 1, 1, 0, 2, 2};
    CHECK(testing::grad_check([&] { return ops::pixel_cross_entropy(zp, pl); }, {zp}).max_rel_error < 1e-6);

    std::vector<std::int32_t> bad{0, 5, 0, 0};
    CHECK_THROWS_AS(ops::cross_entropy(z, bad), std::out_of_range);
}

TEST_CASE("detach stops gradients exactly") {
    Rng rng(8);
    auto a = random_param({3}, rng);
    auto b = random_param({3}, rng);
    auto y = ops::add(ag::detach(ops::scale(a, 2.0)), b);
    ag::backward(ops::sum_squared_diff(y, V(Tensor<double>({3}, 0.0))));
    CHECK_FALSE(a.has_grad());
    CHECK(b.has_grad());
}

TEST_CASE("no-grad guard records no graph") {
    Rng rng(9);
    auto a = random_param({3}, rng);
    ag::NoGradGuard guard;
    auto y = ops::relu(a);
    CHECK_FALSE(y.requires_grad());
}

TEST_CASE("gradients accumulate across uses of the same leaf") {
    V a = V::parameter(Tensor<double>({1}, 3.0));
    auto y = ops::add(a, a);  // 2a
    ag::backward(ops::sum_squared_diff(y, V(Tensor<double>({1}, 0.0))));  // (2a)^2 -> 8a
    CHECK(a.grad()[0] == doctest::Approx(24.0));
}
