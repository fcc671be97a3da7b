#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gemm.hpp"
#include "ops.hpp"
#include "oracles.hpp"
#include "tensor.hpp"

using namespace sasnet;

TEST_CASE("out_size matches the floor formula and the paper shapes") {
    auto sq = [](int in, int k, int s, int p) {
        return out_size({in, in, k, k, s, s, p, p}).h;
    };
    CHECK(sq(255, 11, 2, 0) == 123);
    CHECK(sq(22, 6, 1, 0) == 17);
    CHECK(sq(9, 9, 1, 0) == 1); // kernel covers input exactly

    SUBCASE("chains over the backbone layer table") {
        auto chain = [&](int in) {
            std::vector<int> outs;
            int v = in;
            v = sq(v, 11, 2, 0); outs.push_back(v); // conv1
            v = sq(v, 3, 2, 0);  outs.push_back(v); // pool1
            v = sq(v, 5, 1, 0);  outs.push_back(v); // conv2
            v = sq(v, 3, 2, 0);  outs.push_back(v); // pool2
            v = sq(v, 3, 1, 0);  outs.push_back(v); // conv3
            v = sq(v, 3, 1, 0);  outs.push_back(v); // conv4
            v = sq(v, 3, 1, 0);  outs.push_back(v); // conv5
            return outs;
        };
        CHECK(chain(255) == std::vector<int>{123, 61, 57, 28, 26, 24, 22});
        CHECK(chain(127) == std::vector<int>{59, 29, 25, 12, 10, 8, 6});
    }

    SUBCASE("degenerate shapes are rejected") {
        CHECK_THROWS_AS(out_size({5, 5, 7, 7, 1, 1, 0, 0}), ShapeError);
        CHECK_THROWS_AS(out_size({5, 5, 3, 3, 0, 1, 0, 0}), ShapeError);
        CHECK_THROWS_AS(out_size({0, 0, 1, 1, 1, 1, 0, 0}), ShapeError);
    }
}

TEST_CASE("tensor invariants") {
    Tensor t({2, 3, 4});
    CHECK(t.size() == 24);
    CHECK_THROWS_AS(Tensor({2, 0, 4}), ShapeError);
    CHECK(Tensor::scalar(3.5).size() == 1);
}

TEST_CASE("conv2d shapes and identity kernel") {
    SUBCASE("paper conv1 shape") {
        Tensor in({3, 255, 255});
        Tensor k({96, 3, 11, 11});
        const Tensor out = conv2d(in, k, 2, 0);
        CHECK(out.dims() == std::vector<int>{96, 123, 123});
    }
    SUBCASE("1x1 identity kernel reproduces the input") {
        auto g = oracle::rng(3);
        Tensor in({1, 5, 6});
        oracle::fill_uniform(in, g);
        Tensor k({1, 1, 1, 1});
        k[0] = 1.0;
        const Tensor out = conv2d(in, k, 1, 0);
        REQUIRE(out.dims() == in.dims());
        for (std::size_t i = 0; i < in.size(); ++i) CHECK(out[i] == in[i]);
    }
    SUBCASE("channel mismatch is an error") {
        CHECK_THROWS_AS(conv2d(Tensor({2, 5, 5}), Tensor({1, 3, 3, 3}), 1, 0), ShapeError);
    }
}

TEST_CASE("conv2d matches the five-nested-loop oracle") {
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
        auto g = oracle::rng(seed);
        Tensor in({2, 7, 7}), k({3, 2, 3, 3});
        oracle::fill_uniform(in, g);
        oracle::fill_uniform(k, g);
        const Tensor got = conv2d(in, k, 2, 0);
        const Tensor want = oracle::conv2d(in, k, 2, 0);
        REQUIRE(got.dims() == want.dims());
        for (std::size_t i = 0; i < got.size(); ++i)
            CHECK(std::fabs(got[i] - want[i]) < 1e-12);
    }
    SUBCASE("padding agrees with the oracle") {
        auto g = oracle::rng(99);
        Tensor in({2, 5, 6}), k({2, 2, 3, 3});
        oracle::fill_uniform(in, g);
        oracle::fill_uniform(k, g);
        const Tensor got = conv2d(in, k, 1, 1);
        const Tensor want = oracle::conv2d(in, k, 1, 1);
        REQUIRE(got.dims() == want.dims());
        for (std::size_t i = 0; i < got.size(); ++i)
            CHECK(std::fabs(got[i] - want[i]) < 1e-12);
    }
}

TEST_CASE("conv2d is linear in input and kernels") {
    auto g = oracle::rng(17);
    Tensor x({2, 6, 6}), y({2, 6, 6}), k({2, 2, 3, 3});
    oracle::fill_uniform(x, g);
    oracle::fill_uniform(y, g);
    oracle::fill_uniform(k, g);
    const double a = 1.7, b = -0.4;
    Tensor mix(x.dims());
    for (std::size_t i = 0; i < x.size(); ++i) mix[i] = a * x[i] + b * y[i];
    const Tensor lhs = conv2d(mix, k, 1, 0);
    const Tensor cx = conv2d(x, k, 1, 0), cy = conv2d(y, k, 1, 0);
    for (std::size_t i = 0; i < lhs.size(); ++i)
        CHECK(std::fabs(lhs[i] - (a * cx[i] + b * cy[i])) < 1e-12);
}

TEST_CASE("maxpool2d") {
    SUBCASE("paper pool1 shape") {
        Tensor in({96, 123, 123});
        CHECK(maxpool2d(in, 3, 2).dims() == std::vector<int>{96, 61, 61});
    }
    SUBCASE("constant input stays constant") {
        const Tensor in = Tensor::full({2, 7, 7}, 4.25);
        const Tensor out = maxpool2d(in, 3, 2);
        for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == 4.25);
    }
    SUBCASE("matches the nested-loop max oracle") {
        for (std::uint64_t seed = 0; seed < 8; ++seed) {
            auto g = oracle::rng(seed + 100);
            Tensor in({1, 9, 9});
            oracle::fill_uniform(in, g);
            const Tensor got = maxpool2d(in, 3, 2);
            const Tensor want = oracle::maxpool2d(in, 3, 2);
            REQUIRE(got.dims() == want.dims());
            for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == want[i]);
        }
    }
    SUBCASE("permutation inside a window does not change the output") {
        auto g = oracle::rng(5);
        Tensor in({1, 3, 3});
        oracle::fill_uniform(in, g);
        const double v0 = maxpool2d(in, 3, 1)[0];
        std::swap(in[0], in[8]);
        std::swap(in[2], in[4]);
        CHECK(maxpool2d(in, 3, 1)[0] == v0);
    }
}

TEST_CASE("relu and sigmoid") {
    Tensor in({1, 1, 4});
    in[0] = -2.5; in[1] = 3.0; in[2] = 0.0; in[3] = 0.25;
    const Tensor r = relu(in);
    CHECK(r[0] == 0.0);
    CHECK(r[1] == 3.0);
    CHECK(r[2] == 0.0);

    CHECK(sigmoid_scalar(0.0) == 0.5);
    auto g = oracle::rng(7);
    Tensor v({1, 1, 64});
    oracle::fill_uniform(v, g, -6.0, 6.0);
    const Tensor s = sigmoid(v);
    for (std::size_t i = 0; i < v.size(); ++i) {
        CHECK(std::fabs(s[i] - 1.0 / (1.0 + std::exp(-v[i]))) < 1e-15);
        CHECK(s[i] > 0.0);
        CHECK(s[i] < 1.0);
    }

    SUBCASE("sigmoid is strictly increasing, so argmax is preserved") {
        std::size_t raw_arg = 0, sig_arg = 0;
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (v[i] > v[raw_arg]) raw_arg = i;
            if (s[i] > s[sig_arg]) sig_arg = i;
        }
        CHECK(raw_arg == sig_arg);
    }
}

TEST_CASE("xcorr") {
    SUBCASE("paper response shapes") {
        Tensor z({128, 6, 6}), x({128, 22, 22});
        CHECK(xcorr(z, x).dims() == std::vector<int>{1, 17, 17});
        Tensor z2({128, 6, 3});
        CHECK(xcorr(z2, x).dims() == std::vector<int>{1, 17, 20});
    }
    SUBCASE("1x1x1 exemplar of value 1 reproduces the instance") {
        auto g = oracle::rng(11);
        Tensor z({1, 1, 1}), x({1, 5, 7});
        z[0] = 1.0;
        oracle::fill_uniform(x, g);
        const Tensor out = xcorr(z, x);
        for (std::size_t i = 0; i < x.size(); ++i) CHECK(out[i] == x[i]);
    }
    SUBCASE("matches the direct-sum oracle") {
        for (std::uint64_t seed = 0; seed < 6; ++seed) {
            auto g = oracle::rng(seed + 40);
            Tensor z({3, 4, 3}), x({3, 9, 8});
            oracle::fill_uniform(z, g);
            oracle::fill_uniform(x, g);
            const Tensor got = xcorr(z, x);
            const Tensor want = oracle::xcorr(z, x);
            REQUIRE(got.dims() == want.dims());
            for (std::size_t i = 0; i < got.size(); ++i)
                CHECK(std::fabs(got[i] - want[i]) < 1e-12);
        }
    }
    SUBCASE("offset (0,0) equals the windowed inner product") {
        auto g = oracle::rng(3);
        Tensor z({2, 3, 3}), x({2, 6, 6});
        oracle::fill_uniform(z, g);
        oracle::fill_uniform(x, g);
        double want = 0.0;
        for (int c = 0; c < 2; ++c)
            for (int y = 0; y < 3; ++y)
                for (int xx = 0; xx < 3; ++xx) want += z.at(c, y, xx) * x.at(c, y, xx);
        CHECK(xcorr(z, x).at(0, 0, 0) == doctest::Approx(want).epsilon(1e-12));
    }
    SUBCASE("oversized exemplar is an error") {
        CHECK_THROWS_AS(xcorr(Tensor({1, 8, 3}), Tensor({1, 5, 5})), ShapeError);
        CHECK_THROWS_AS(xcorr(Tensor({2, 3, 3}), Tensor({1, 5, 5})), ShapeError);
    }
}

TEST_CASE("channel_scale") {
    auto g = oracle::rng(21);
    Tensor f({4, 3, 5}), w({4});
    oracle::fill_uniform(f, g);
    oracle::fill_uniform(w, g);

    SUBCASE("all-ones weights is the identity") {
        const Tensor ones = Tensor::full({4}, 1.0);
        const Tensor out = channel_scale(f, ones);
        for (std::size_t i = 0; i < f.size(); ++i) CHECK(out[i] == f[i]);
    }
    SUBCASE("zero weights zero the tensor") {
        const Tensor out = channel_scale(f, Tensor({4}));
        for (std::size_t i = 0; i < f.size(); ++i) CHECK(out[i] == 0.0);
    }
    SUBCASE("matches the scalar loop oracle") {
        const Tensor out = channel_scale(f, w);
        for (int c = 0; c < 4; ++c)
            for (int y = 0; y < 3; ++y)
                for (int x = 0; x < 5; ++x)
                    CHECK(out.at(c, y, x) == f.at(c, y, x) * w[c]);
    }
    SUBCASE("length mismatch is an error") {
        CHECK_THROWS_AS(channel_scale(f, Tensor({3})), ShapeError);
    }
}

TEST_CASE("upsample_bicubic") {
    SUBCASE("17x17 by 16 gives 272x272") {
        Tensor m({1, 17, 17});
        CHECK(upsample_bicubic(m, 16).dims() == std::vector<int>{1, 272, 272});
    }
    SUBCASE("factor 1 is bit-identical") {
        auto g = oracle::rng(31);
        Tensor m({1, 6, 9});
        oracle::fill_uniform(m, g);
        const Tensor out = upsample_bicubic(m, 1);
        for (std::size_t i = 0; i < m.size(); ++i) CHECK(out[i] == m[i]);
    }
    SUBCASE("constants are reproduced") {
        const Tensor m = Tensor::full({1, 5, 4}, -0.37);
        const Tensor out = upsample_bicubic(m, 7);
        for (std::size_t i = 0; i < out.size(); ++i)
            CHECK(std::fabs(out[i] - (-0.37)) < 1e-12);
    }
    SUBCASE("upsampling never moves a clear peak by more than a cell") {
        Tensor m({1, 9, 9});
        m.at(0, 4, 5) = 1.0;
        const Tensor up = upsample_bicubic(m, 8);
        std::size_t best = 0;
        for (std::size_t i = 1; i < up.size(); ++i)
            if (up[i] > up[best]) best = i;
        const int row = static_cast<int>(best) / up.dim(2);
        const int col = static_cast<int>(best) % up.dim(2);
        CHECK(std::fabs(row / 8.0 - 4.0) <= 1.0);
        CHECK(std::fabs(col / 8.0 - 5.0) <= 1.0);
    }
}

TEST_CASE("analytic gradients agree with central finite differences") {
    // step 1e-5, 64-bit, 20 seeds, < 1e-6 max relative error
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto g = oracle::rng(seed * 7 + 1);

        { // conv2d, both gradients (plus bias)
            Tensor in({2, 7, 7}), k({3, 2, 3, 3}), gw({3, 3, 3});
            oracle::fill_uniform(in, g);
            oracle::fill_uniform(k, g);
            oracle::fill_uniform(gw, g);
            auto f = [&] {
                double acc = 0.0;
                const Tensor out = conv2d(in, k, 2, 0);
                for (std::size_t i = 0; i < out.size(); ++i) acc += out[i] * gw[i];
                return acc;
            };
            const Conv2dGrads cg = conv2d_backward(in, k, 2, 0, gw);
            worst = std::max(worst, oracle::max_grad_rel_err(f, in, cg.d_input));
            worst = std::max(worst, oracle::max_grad_rel_err(f, k, cg.d_kernels));
        }
        { // xcorr, both gradients
            Tensor z({2, 3, 2}), x({2, 6, 5}), gw({1, 4, 4});
            oracle::fill_uniform(z, g);
            oracle::fill_uniform(x, g);
            oracle::fill_uniform(gw, g);
            auto f = [&] {
                double acc = 0.0;
                const Tensor out = xcorr(z, x);
                for (std::size_t i = 0; i < out.size(); ++i) acc += out[i] * gw[i];
                return acc;
            };
            const XcorrGrads xg = xcorr_backward(z, x, gw);
            worst = std::max(worst, oracle::max_grad_rel_err(f, z, xg.d_exemplar));
            worst = std::max(worst, oracle::max_grad_rel_err(f, x, xg.d_instance));
        }
        { // sigmoid / relu / channel_scale
            Tensor v({1, 3, 6}), gw({1, 3, 6});
            oracle::fill_uniform(v, g, -3.0, 3.0);
            oracle::fill_uniform(gw, g);
            auto fs = [&] {
                double acc = 0.0;
                const Tensor out = sigmoid(v);
                for (std::size_t i = 0; i < out.size(); ++i) acc += out[i] * gw[i];
                return acc;
            };
            worst = std::max(worst,
                             oracle::max_grad_rel_err(fs, v, sigmoid_backward(sigmoid(v), gw)));

            Tensor rv = v;
            for (std::size_t i = 0; i < rv.size(); ++i)
                if (std::fabs(rv[i]) < 1e-3) rv[i] = 0.01;
            auto fr = [&] {
                double acc = 0.0;
                const Tensor out = relu(rv);
                for (std::size_t i = 0; i < out.size(); ++i) acc += out[i] * gw[i];
                return acc;
            };
            worst = std::max(worst, oracle::max_grad_rel_err(fr, rv, relu_backward(rv, gw)));
        }
    }
    CHECK(worst < 1e-6);
    MESSAGE("max finite-difference relative error over ops: ", worst);
}

TEST_CASE("gradient check special values") {
    // d sigmoid/dx at 0 is 0.25
    Tensor x({1, 1, 1}), g({1, 1, 1});
    g[0] = 1.0;
    const Tensor d = sigmoid_backward(sigmoid(x), g);
    CHECK(d[0] == doctest::Approx(0.25).epsilon(1e-15));

    // gradient of xcorr w.r.t. exemplar is zero when the instance is zero
    Tensor z({2, 2, 2}), inst({2, 4, 4}), up({1, 3, 3});
    auto rg = oracle::rng(2);
    oracle::fill_uniform(z, rg);
    oracle::fill_uniform(up, rg);
    const XcorrGrads xg = xcorr_backward(z, inst, up);
    for (std::size_t i = 0; i < xg.d_exemplar.size(); ++i) CHECK(xg.d_exemplar[i] == 0.0);
}

TEST_CASE("maxpool gradient routes to the first maximal element") {
    Tensor in({1, 3, 3});
    for (std::size_t i = 0; i < in.size(); ++i) in[i] = 1.0; // all tied
    std::vector<std::int64_t> arg;
    maxpool2d(in, 3, 1, &arg);
    REQUIRE(arg.size() == 1);
    CHECK(arg[0] == 0); // row-major first
    Tensor g({1, 1, 1});
    g[0] = 2.5;
    const Tensor dx = maxpool2d_backward(arg, in.dims(), g);
    CHECK(dx[0] == 2.5);
    for (std::size_t i = 1; i < dx.size(); ++i) CHECK(dx[i] == 0.0);
}

TEST_CASE("fast32 mode stays within 1e-3 of the oracle") {
    blas::set_fast32(true);
    auto g = oracle::rng(77);
    Tensor in({3, 16, 16}), k({4, 3, 5, 5});
    oracle::fill_uniform(in, g);
    oracle::fill_uniform(k, g);
    const Tensor got = conv2d(in, k, 2, 0);
    blas::set_fast32(false);
    const Tensor want = oracle::conv2d(in, k, 2, 0);
    for (std::size_t i = 0; i < got.size(); ++i)
        CHECK(oracle::rel_err(got[i], want[i], 1e-3) < 1e-3);
}
