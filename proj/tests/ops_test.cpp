#include "doctest.h"

#include "deblurkit/errors.hpp"
#include "deblurkit/ops.hpp"
#include "deblurkit/tensor.hpp"

#include "support.hpp"

#include <cmath>
#include <vector>

using namespace dbk;

namespace {

// Straightforward reference convolution, kept independent of the library's
// GEMM path so the two implementations can cross-check each other.
std::vector<float> naive_conv(std::span<const float> x, int n, int ic, int h, int w,
                              std::span<const float> wt, int oc, int kh, int kw,
                              const float* bias, int stride, int pad, int groups) {
    const int oh = (h + 2 * pad - kh) / stride + 1;
    const int ow = (w + 2 * pad - kw) / stride + 1;
    const int icg = ic / groups;
    const int ocg = oc / groups;
    std::vector<float> y(static_cast<std::size_t>(n) * oc * oh * ow, 0.0f);
    for (int b = 0; b < n; ++b)
        for (int o = 0; o < oc; ++o) {
            const int g = o / ocg;
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    double acc = bias ? bias[o] : 0.0;
                    for (int c = 0; c < icg; ++c)
                        for (int ky = 0; ky < kh; ++ky)
                            for (int kx = 0; kx < kw; ++kx) {
                                const int iy = oy * stride - pad + ky;
                                const int ix = ox * stride - pad + kx;
                                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                                const std::size_t xi =
                                    ((static_cast<std::size_t>(b) * ic + g * icg + c) * h + iy) * w + ix;
                                const std::size_t wi =
                                    ((static_cast<std::size_t>(o) * icg + c) * kh + ky) * kw + kx;
                                acc += static_cast<double>(x[xi]) * wt[wi];
                            }
                    y[((static_cast<std::size_t>(b) * oc + o) * oh + oy) * ow + ox] =
                        static_cast<float>(acc);
                }
        }
    return y;
}

void compare_conv(const Tensor& x, const Tensor& w, const Tensor& b,
                  const ops::Conv2dOpts& opts) {
    Tensor y = ops::conv2d(x, w, b, opts);
    const TensorShape xs = x.shape(), ws = w.shape();
    std::vector<float> ref =
        naive_conv(x.data(), xs.n, xs.c, xs.h, xs.w, w.data(), ws.n, ws.h, ws.w,
                   b.defined() ? b.data().data() : nullptr, opts.stride, opts.padding,
                   opts.groups);
    REQUIRE(y.numel() == static_cast<std::int64_t>(ref.size()));
    for (std::size_t i = 0; i < ref.size(); ++i)
        CHECK(y.data()[i] == doctest::Approx(ref[i]).epsilon(1e-4));
}

} // namespace

TEST_CASE("conv2d matches a naive reference") {
    Rng rng(42);
    SUBCASE("3x3 stride 1 padded") {
        Tensor x = test::random_tensor({2, 3, 8, 8}, rng);
        Tensor w = test::random_tensor({4, 3, 3, 3}, rng);
        Tensor b = test::random_tensor({1, 4, 1, 1}, rng);
        compare_conv(x, w, b, {.stride = 1, .padding = 1, .groups = 1});
    }
    SUBCASE("3x3 stride 2") {
        Tensor x = test::random_tensor({1, 5, 9, 9}, rng);
        Tensor w = test::random_tensor({6, 5, 3, 3}, rng);
        compare_conv(x, w, {}, {.stride = 2, .padding = 1, .groups = 1});
    }
    SUBCASE("1x1 pointwise") {
        Tensor x = test::random_tensor({2, 8, 6, 6}, rng);
        Tensor w = test::random_tensor({5, 8, 1, 1}, rng);
        Tensor b = test::random_tensor({1, 5, 1, 1}, rng);
        compare_conv(x, w, b, {.stride = 1, .padding = 0, .groups = 1});
    }
    SUBCASE("depthwise 3x3") {
        Tensor x = test::random_tensor({2, 6, 8, 8}, rng);
        Tensor w = test::random_tensor({6, 1, 3, 3}, rng);
        compare_conv(x, w, {}, {.stride = 1, .padding = 1, .groups = 6});
    }
    SUBCASE("depthwise 5x5 stride 2") {
        Tensor x = test::random_tensor({1, 4, 11, 11}, rng);
        Tensor w = test::random_tensor({4, 1, 5, 5}, rng);
        compare_conv(x, w, {}, {.stride = 2, .padding = 2, .groups = 4});
    }
    SUBCASE("grouped 3x3, groups=2") {
        Tensor x = test::random_tensor({2, 6, 7, 7}, rng);
        Tensor w = test::random_tensor({8, 3, 3, 3}, rng);
        Tensor b = test::random_tensor({1, 8, 1, 1}, rng);
        compare_conv(x, w, b, {.stride = 1, .padding = 1, .groups = 2});
    }
}

TEST_CASE("conv2d with an identity kernel reproduces the input") {
    Rng rng(3);
    Tensor x = test::random_tensor({1, 3, 5, 5}, rng);
    // 1x1, weight = identity matrix over channels
    std::vector<float> eye(9, 0.0f);
    eye[0] = eye[4] = eye[8] = 1.0f;
    Tensor w = Tensor::from_data(std::move(eye), {3, 3, 1, 1});
    Tensor y = ops::conv2d(x, w, {}, {});
    for (std::size_t i = 0; i < x.data().size(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("conv2d validates shapes") {
    Tensor x = Tensor::zeros({1, 3, 8, 8});
    Tensor w = Tensor::zeros({4, 2, 3, 3});
    CHECK_THROWS_AS(ops::conv2d(x, w, {}, {}), ContractError);
    Tensor w2 = Tensor::zeros({4, 3, 3, 3});
    Tensor bad_bias = Tensor::zeros({1, 5, 1, 1});
    CHECK_THROWS_AS(ops::conv2d(x, w2, bad_bias, {.stride = 1, .padding = 1}),
                    ContractError);
}

TEST_CASE("conv2d gradients match finite differences") {
    Rng rng(11);
    SUBCASE("general 3x3 stride 2") {
        Tensor x = test::random_tensor({1, 3, 8, 8}, rng);
        Tensor w = test::random_tensor({4, 3, 3, 3}, rng, -0.5f, 0.5f);
        Tensor b = test::random_tensor({1, 4, 1, 1}, rng);
        auto loss = [&]() {
            return ops::mean_all(
                ops::mul(ops::conv2d(x, w, b, {.stride = 2, .padding = 1}),
                         ops::conv2d(x, w, b, {.stride = 2, .padding = 1})));
        };
        CHECK(test::gradcheck({x, w, b}, loss) <= 1e-3);
    }
    SUBCASE("pointwise") {
        Tensor x = test::random_tensor({2, 4, 8, 8}, rng);
        Tensor w = test::random_tensor({3, 4, 1, 1}, rng, -0.5f, 0.5f);
        auto loss = [&]() {
            Tensor y = ops::conv2d(x, w, {}, {});
            return ops::mean_all(ops::mul(y, y));
        };
        CHECK(test::gradcheck({x, w}, loss) <= 1e-3);
    }
    SUBCASE("depthwise 3x3") {
        Tensor x = test::random_tensor({1, 4, 8, 8}, rng);
        Tensor w = test::random_tensor({4, 1, 3, 3}, rng, -0.5f, 0.5f);
        auto loss = [&]() {
            Tensor y = ops::conv2d(x, w, {}, {.stride = 1, .padding = 1, .groups = 4});
            return ops::mean_all(ops::mul(y, y));
        };
        CHECK(test::gradcheck({x, w}, loss) <= 1e-3);
    }
}

TEST_CASE("instance_norm normalizes each sample-channel plane") {
    Rng rng(5);
    Tensor x = test::random_tensor({2, 3, 8, 8}, rng, -2.0f, 3.0f);
    Tensor y = ops::instance_norm(x, {}, {});
    const auto s = x.shape();
    for (int p = 0; p < s.n * s.c; ++p) {
        double mean = 0.0, var = 0.0;
        const float* yp = y.data().data() + p * s.plane();
        for (int i = 0; i < s.plane(); ++i) mean += yp[i];
        mean /= s.plane();
        for (int i = 0; i < s.plane(); ++i) var += (yp[i] - mean) * (yp[i] - mean);
        var /= s.plane();
        CHECK(std::abs(mean) < 1e-5);
        CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
    }
}

TEST_CASE("instance_norm applies the affine transform") {
    Rng rng(6);
    Tensor x = test::random_tensor({1, 2, 4, 4}, rng);
    Tensor gamma = Tensor::from_data({2.0f, 0.5f}, {1, 2, 1, 1});
    Tensor beta = Tensor::from_data({1.0f, -1.0f}, {1, 2, 1, 1});
    Tensor plain = ops::instance_norm(x, {}, {});
    Tensor affine = ops::instance_norm(x, gamma, beta);
    for (int c = 0; c < 2; ++c)
        for (int i = 0; i < 16; ++i) {
            const float expect = plain.data()[c * 16 + i] * gamma.data()[c] + beta.data()[c];
            CHECK(affine.data()[c * 16 + i] == doctest::Approx(expect).epsilon(1e-5));
        }
}

TEST_CASE("instance_norm gradients match finite differences") {
    Rng rng(13);
    Tensor x = test::random_tensor({2, 2, 8, 8}, rng, -1.0f, 1.5f);
    Tensor gamma = test::random_tensor({1, 2, 1, 1}, rng, 0.5f, 1.5f);
    Tensor beta = test::random_tensor({1, 2, 1, 1}, rng, -0.5f, 0.5f);
    Tensor target = test::random_tensor({2, 2, 8, 8}, rng, -1.0f, 1.0f, false);
    auto loss = [&]() { return ops::mse(ops::instance_norm(x, gamma, beta), target); };
    CHECK(test::gradcheck({x, gamma, beta}, loss) <= 1e-3);
}

TEST_CASE("activation forward values") {
    Tensor x = Tensor::from_data({-3.0f, -1.5f, 0.0f, 1.5f, 3.0f}, {1, 5, 1, 1});
    Tensor hs = ops::hard_sigmoid(x);
    CHECK(hs.data()[0] == 0.0f);
    CHECK(hs.data()[1] == doctest::Approx(0.25f));
    CHECK(hs.data()[2] == doctest::Approx(0.5f));
    CHECK(hs.data()[3] == doctest::Approx(0.75f));
    CHECK(hs.data()[4] == 1.0f);

    Tensor lr = ops::leaky_relu(x, 0.2f);
    CHECK(lr.data()[0] == doctest::Approx(-0.6f));
    CHECK(lr.data()[3] == doctest::Approx(1.5f));

    Tensor r = ops::relu(x);
    CHECK(r.data()[1] == 0.0f);
    CHECK(r.data()[4] == 3.0f);

    Tensor t = ops::tanh(x);
    CHECK(t.data()[2] == 0.0f);
    CHECK(t.data()[4] == doctest::Approx(std::tanh(3.0f)));
}

TEST_CASE("activation gradients match finite differences away from kinks") {
    Rng rng(17);
    // Sample magnitudes in [0.2, 1.4] so +-h never crosses a non-smooth point.
    std::vector<float> vals(64);
    for (float& v : vals) {
        const float m = static_cast<float>(rng.uniform(0.2, 1.4));
        v = rng.uniform() < 0.5 ? -m : m;
    }
    Tensor x = Tensor::from_data(std::move(vals), {1, 1, 8, 8}, true);
    SUBCASE("relu") {
        auto loss = [&]() { return ops::mean_all(ops::mul(ops::relu(x), ops::relu(x))); };
        CHECK(test::gradcheck({x}, loss) <= 1e-3);
    }
    SUBCASE("leaky_relu") {
        auto loss = [&]() {
            Tensor y = ops::leaky_relu(x, 0.2f);
            return ops::mean_all(ops::mul(y, y));
        };
        CHECK(test::gradcheck({x}, loss) <= 1e-3);
    }
    SUBCASE("tanh") {
        auto loss = [&]() {
            Tensor y = ops::tanh(x);
            return ops::mean_all(ops::mul(y, y));
        };
        CHECK(test::gradcheck({x}, loss) <= 1e-3);
    }
    SUBCASE("hard_sigmoid") {
        auto loss = [&]() {
            Tensor y = ops::hard_sigmoid(x);
            return ops::mean_all(ops::mul(y, y));
        };
        CHECK(test::gradcheck({x}, loss) <= 1e-3);
    }
}

TEST_CASE("clamp forwards and gates gradients") {
    Tensor x = Tensor::from_data({-0.5f, 0.3f, 0.8f, 1.7f}, {1, 4, 1, 1}, true);
    Tensor y = ops::clamp(x, 0.0f, 1.0f);
    CHECK(y.data()[0] == 0.0f);
    CHECK(y.data()[1] == doctest::Approx(0.3f));
    CHECK(y.data()[3] == 1.0f);
    ops::sum_all(y).backward();
    CHECK(x.grad()[0] == 0.0f);
    CHECK(x.grad()[1] == 1.0f);
    CHECK(x.grad()[2] == 1.0f);
    CHECK(x.grad()[3] == 0.0f);
}

TEST_CASE("upsample_nearest repeats pixels") {
    Tensor x = Tensor::from_data({1.0f, 2.0f, 3.0f, 4.0f}, {1, 1, 2, 2}, true);
    Tensor y = ops::upsample_nearest(x, 2);
    CHECK(y.shape() == TensorShape{1, 1, 4, 4});
    CHECK(y.data()[0] == 1.0f);
    CHECK(y.data()[1] == 1.0f);
    CHECK(y.data()[2] == 2.0f);
    CHECK(y.data()[5] == 1.0f);
    CHECK(y.data()[15] == 4.0f);
    ops::sum_all(y).backward();
    for (int i = 0; i < 4; ++i) CHECK(x.grad()[i] == doctest::Approx(4.0f));
}

TEST_CASE("avg_pool2d and mean_hw") {
    Rng rng(23);
    Tensor x = test::random_tensor({1, 2, 8, 8}, rng);
    Tensor pooled = ops::avg_pool2d(x, 2, 2);
    CHECK(pooled.shape() == TensorShape{1, 2, 4, 4});
    auto loss = [&]() {
        Tensor y = ops::avg_pool2d(x, 2, 2);
        return ops::mean_all(ops::mul(y, y));
    };
    CHECK(test::gradcheck({x}, loss) <= 1e-3);

    Tensor m = ops::mean_hw(x);
    CHECK(m.shape() == TensorShape{1, 2, 1, 1});
    double ref = 0.0;
    for (int i = 0; i < 64; ++i) ref += x.data()[i];
    CHECK(m.data()[0] == doctest::Approx(ref / 64.0));
    auto loss2 = [&]() {
        Tensor y = ops::mean_hw(x);
        return ops::mean_all(ops::mul(y, y));
    };
    CHECK(test::gradcheck({x}, loss2) <= 1e-3);
}

TEST_CASE("reflection_pad mirrors without repeating the border") {
    Tensor x = Tensor::from_data({1.0f, 2.0f, 3.0f, 4.0f}, {1, 1, 1, 4}, true);
    Tensor y = ops::reflection_pad(x, 0, 0, 2, 2);
    const std::vector<float> expect{3, 2, 1, 2, 3, 4, 3, 2};
    REQUIRE(y.numel() == 8);
    for (int i = 0; i < 8; ++i) CHECK(y.data()[i] == expect[static_cast<std::size_t>(i)]);

    ops::sum_all(y).backward();
    CHECK(x.grad()[0] == 1.0f); // only the original position
    CHECK(x.grad()[1] == 3.0f); // original + two mirrors
    CHECK(x.grad()[2] == 3.0f);
    CHECK(x.grad()[3] == 1.0f);
}

TEST_CASE("crop undoes reflection_pad bit-exactly") {
    Rng rng(29);
    Tensor x = test::random_tensor({1, 3, 6, 7}, rng, 0.0f, 1.0f, false);
    Tensor padded = ops::reflection_pad(x, 2, 3, 1, 4);
    Tensor back = ops::crop(padded, 2, 3, 1, 4);
    REQUIRE(back.shape() == x.shape());
    for (std::size_t i = 0; i < x.data().size(); ++i)
        CHECK(back.data()[i] == x.data()[i]);
}

TEST_CASE("reflection_pad keeps bouncing when wider than the input") {
    Tensor x = Tensor::from_data({1.0f, 2.0f}, {1, 1, 1, 2});
    Tensor y = ops::reflection_pad(x, 0, 0, 3, 0);
    const std::vector<float> expect{2, 1, 2, 1, 2};
    for (int i = 0; i < 5; ++i) CHECK(y.data()[i] == expect[static_cast<std::size_t>(i)]);
    CHECK_THROWS_AS(ops::reflection_pad(x, -1, 0, 0, 0), ContractError);
}

TEST_CASE("concat_channels and slice_channels round-trip") {
    Rng rng(31);
    Tensor a = test::random_tensor({2, 3, 4, 4}, rng);
    Tensor b = test::random_tensor({2, 5, 4, 4}, rng);
    Tensor cat = ops::concat_channels({a, b});
    CHECK(cat.shape() == TensorShape{2, 8, 4, 4});
    Tensor a2 = ops::slice_channels(cat, 0, 3);
    Tensor b2 = ops::slice_channels(cat, 3, 8);
    for (std::size_t i = 0; i < a.data().size(); ++i) CHECK(a2.data()[i] == a.data()[i]);
    for (std::size_t i = 0; i < b.data().size(); ++i) CHECK(b2.data()[i] == b.data()[i]);

    auto loss = [&]() {
        Tensor c = ops::concat_channels({a, b});
        Tensor s = ops::slice_channels(c, 1, 6);
        return ops::mean_all(ops::mul(s, s));
    };
    CHECK(test::gradcheck({a, b}, loss) <= 1e-3);
}

TEST_CASE("mul_channelwise scales planes and matches finite differences") {
    Rng rng(37);
    Tensor x = test::random_tensor({2, 3, 4, 4}, rng);
    Tensor s = test::random_tensor({2, 3, 1, 1}, rng, 0.2f, 1.2f);
    Tensor y = ops::mul_channelwise(x, s);
    CHECK(y.data()[0] == doctest::Approx(x.data()[0] * s.data()[0]));
    auto loss = [&]() {
        Tensor t = ops::mul_channelwise(x, s);
        return ops::mean_all(ops::mul(t, t));
    };
    CHECK(test::gradcheck({x, s}, loss) <= 1e-3);
}

TEST_CASE("mse oracle and gradients") {
    Tensor a = Tensor::from_data({1.0f, 2.0f, 3.0f, 4.0f}, {1, 4, 1, 1}, true);
    Tensor b = Tensor::from_data({1.0f, 1.0f, 1.0f, 1.0f}, {1, 4, 1, 1}, true);
    Tensor l = ops::mse(a, b);
    CHECK(l.item() == doctest::Approx((0.0 + 1.0 + 4.0 + 9.0) / 4.0));
    Rng rng(41);
    Tensor x = test::random_tensor({1, 2, 8, 8}, rng);
    Tensor t = test::random_tensor({1, 2, 8, 8}, rng, -1.0f, 1.0f, false);
    auto loss = [&]() { return ops::mse(x, t); };
    CHECK(test::gradcheck({x}, loss) <= 1e-3);
}

TEST_CASE("scalar arithmetic helpers") {
    Tensor x = Tensor::from_data({1.0f, -2.0f}, {1, 2, 1, 1}, true);
    Tensor y = ops::add_scalar(ops::mul_scalar(x, 3.0f), 1.0f);
    CHECK(y.data()[0] == doctest::Approx(4.0f));
    CHECK(y.data()[1] == doctest::Approx(-5.0f));
    ops::sum_all(y).backward();
    CHECK(x.grad()[0] == doctest::Approx(3.0f));
}

TEST_CASE("all_finite detects NaN and infinity") {
    Tensor ok = Tensor::from_data({1.0f, -2.0f}, {1, 2, 1, 1});
    CHECK(ops::all_finite(ok));
    Tensor bad = Tensor::from_data({1.0f, std::nanf("")}, {1, 2, 1, 1});
    CHECK_FALSE(ops::all_finite(bad));
    Tensor inf = Tensor::from_data({1.0f, INFINITY}, {1, 2, 1, 1});
    CHECK_FALSE(ops::all_finite(inf));
}

TEST_CASE("conv2d_macs closed form") {
    // 3x3 conv, 16->16 channels, 32x32 output: 32*32*16*16*9 multiply-accumulates.
    CHECK(ops::conv2d_macs(32, 32, 16, 16, 3, 3) == 2359296);
    // Doubling as multiply+add operations gives 4718592 FLOPs.
    CHECK(2 * ops::conv2d_macs(32, 32, 16, 16, 3, 3) == 4718592);
    CHECK(ops::conv2d_macs(1, 1, 8, 4, 1, 1) == 32);
}
