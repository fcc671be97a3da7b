#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "oracles.hpp"
#include "params_io.hpp"
#include "synth.hpp"
#include "train.hpp"

using namespace sasnet;

namespace {

std::filesystem::path temp_dir(const char* leaf) {
    const auto dir = std::filesystem::temp_directory_path() / "sasnet_test_train" / leaf;
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace

TEST_CASE("gaussian_label") {
    const Tensor y = gaussian_label(17, 17, 2.0);

    SUBCASE("center cell is exactly 1") {
        CHECK(y.at(0, 8, 8) == 1.0);
    }
    SUBCASE("closed form at d = 2, sigma = 2") {
        const double want = 2.0 * std::exp(-0.5) - 1.0; // 0.21306...
        CHECK(y.at(0, 8, 10) == doctest::Approx(want).epsilon(1e-12));
        CHECK(y.at(0, 8, 10) == doctest::Approx(0.2130613194252668).epsilon(1e-12));
    }
    SUBCASE("corner matches independent scalar evaluation") {
        const double want = 2.0 * std::exp(-(8.0 * 8.0 + 8.0 * 8.0) / 8.0) - 1.0;
        CHECK(y.at(0, 0, 0) == doctest::Approx(want).epsilon(1e-12));
    }
    SUBCASE("range is (-1, 1] and values decrease with distance") {
        for (std::size_t i = 0; i < y.size(); ++i) {
            CHECK(y[i] > -1.0);
            CHECK(y[i] <= 1.0);
        }
        CHECK(y.at(0, 8, 9) > y.at(0, 8, 10));
        CHECK(y.at(0, 8, 10) > y.at(0, 8, 12));
    }
    SUBCASE("symmetric under 90-degree rotation for square maps") {
        for (int i = 0; i < 17; ++i)
            for (int j = 0; j < 17; ++j)
                CHECK(y.at(0, i, j) == doctest::Approx(y.at(0, j, 16 - i)).epsilon(1e-12));
    }
    SUBCASE("rectangular maps center correctly") {
        const Tensor r = gaussian_label(18, 17, 2.0);
        // even extent: the two central rows share the maximum
        CHECK(r.at(0, 8, 8) == r.at(0, 9, 8));
    }
    SUBCASE("bad arguments") {
        CHECK_THROWS(gaussian_label(0, 5, 2.0));
        CHECK_THROWS(gaussian_label(5, 5, 0.0));
    }
}

TEST_CASE("pointwise_loss") {
    SUBCASE("value at y*r == 0 is log 2") {
        CHECK(pointwise_loss(0.0, 0.7) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
        CHECK(pointwise_loss(0.35, 0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    }
    SUBCASE("asymptotics do not overflow") {
        CHECK(pointwise_loss(50.0, 1.0) == doctest::Approx(1.93e-22).epsilon(0.01));
        CHECK(pointwise_loss(-50.0, 1.0) == doctest::Approx(50.0).epsilon(1e-10));
        CHECK(std::isfinite(pointwise_loss(1e6, 1.0)));
        CHECK(std::isfinite(pointwise_loss(-1e6, 1.0)));
    }
    SUBCASE("strictly decreasing in y*r over a sweep") {
        double prev = pointwise_loss(-30.0, 1.0);
        for (int i = 1; i <= 10000; ++i) {
            const double u = -30.0 + 60.0 * i / 10000.0;
            const double cur = pointwise_loss(u, 1.0);
            CHECK(cur < prev);
            prev = cur;
        }
    }
    SUBCASE("sign symmetry") {
        CHECK(pointwise_loss(1.7, -0.4) == doctest::Approx(pointwise_loss(-1.7, 0.4)).epsilon(1e-15));
    }
}

TEST_CASE("map_loss") {
    SUBCASE("all-zero response gives log 2") {
        const Tensor r({1, 17, 17});
        const Tensor y = gaussian_label(17, 17, 2.0);
        CHECK(map_loss(r, y) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    }
    SUBCASE("single-cell map equals pointwise_loss") {
        Tensor r({1, 1, 1}), y({1, 1, 1});
        r[0] = 1.3;
        y[0] = -0.7;
        CHECK(map_loss(r, y) == doctest::Approx(pointwise_loss(1.3, -0.7)).epsilon(1e-15));
    }
    SUBCASE("matches the double-loop mean oracle") {
        auto g = oracle::rng(3);
        Tensor r({1, 17, 17});
        oracle::fill_uniform(r, g, -4.0, 4.0);
        const Tensor y = gaussian_label(17, 17, 2.0);
        double acc = 0.0;
        for (int i = 0; i < 17; ++i)
            for (int j = 0; j < 17; ++j)
                acc += std::log(1.0 + std::exp(-y.at(0, i, j) * r.at(0, i, j)));
        CHECK(map_loss(r, y) == doctest::Approx(acc / 289.0).epsilon(1e-12));
    }
    SUBCASE("shape mismatch is an error") {
        CHECK_THROWS_AS(map_loss(Tensor({1, 3, 3}), Tensor({1, 3, 4})), ShapeError);
    }
    SUBCASE("gradient matches finite differences") {
        auto g = oracle::rng(5);
        Tensor r({1, 5, 7});
        oracle::fill_uniform(r, g, -3.0, 3.0);
        const Tensor y = gaussian_label(5, 7, 1.5);
        const Tensor d = map_loss_backward(r, y);
        auto f = [&] { return map_loss(r, y); };
        CHECK(oracle::max_grad_rel_err(f, r, d) < 1e-6);
    }
}

TEST_CASE("bgd_update basics") {
    SUBCASE("zero gradient leaves parameters unchanged") {
        double p = 1.5, g = 0.0;
        bgd_update(&p, &g, 1, 0.001);
        CHECK(p == 1.5);
    }
    SUBCASE("scalar arithmetic") {
        double p = 1.0, g = 2.0;
        bgd_update(&p, &g, 1, 0.001);
        CHECK(p == doctest::Approx(0.998).epsilon(1e-15));
    }
    SUBCASE("1-d quadratic decreases monotonically below the curvature bound") {
        // f(x) = 0.5 * k * x^2, monotone for lr < 2/k
        const double k = 10.0, lr = 0.05;
        double x = 1.0;
        double prev = 0.5 * k * x * x;
        for (int i = 0; i < 100; ++i) {
            double g = k * x;
            bgd_update(&x, &g, 1, lr);
            const double loss = 0.5 * k * x * x;
            CHECK(loss < prev);
            prev = loss;
        }
    }
}

TEST_CASE("rmsprop_update basics") {
    SUBCASE("zero gradient leaves parameters and state unchanged") {
        double p = 2.0, g = 0.0, v = 0.25;
        rmsprop_update(&p, &g, &v, 1, 0.001, 0.9, 1e-8);
        CHECK(p == 2.0);
        CHECK(v == doctest::Approx(0.225)); // v decays toward zero
    }
    SUBCASE("first step has the closed form lr*g/(sqrt((1-rho) g^2) + eps)") {
        double p = 0.0, g = 3.0, v = 0.0;
        const double lr = 0.01, rho = 0.9, eps = 1e-8;
        rmsprop_update(&p, &g, &v, 1, lr, rho, eps);
        const double want = -lr * g / (std::sqrt((1.0 - rho) * g * g) + eps);
        CHECK(p == doctest::Approx(want).epsilon(1e-12));
        CHECK(p == doctest::Approx(-lr / std::sqrt(1.0 - rho)).epsilon(1e-6));
    }
    SUBCASE("2-d quadratic reaches loss < 1e-6 within 500 steps at lr 0.001") {
        // f(x,y) = 0.5*((x-0.1)^2 + 4*(y+0.07)^2), start at the origin
        double p[2] = {0.0, 0.0}, v[2] = {0.0, 0.0};
        double loss = 0.0;
        for (int i = 0; i < 500; ++i) {
            double g[2] = {p[0] - 0.1, 4.0 * (p[1] + 0.07)};
            rmsprop_update(p, g, v, 2, 0.001, 0.9, 1e-8);
            loss = 0.5 * ((p[0] - 0.1) * (p[0] - 0.1) + 4.0 * (p[1] + 0.07) * (p[1] + 0.07));
        }
        CHECK(loss < 1e-6);
    }
    SUBCASE("with rho -> 0 and large eps it behaves like scaled gradient descent") {
        double p = 1.0, g = 2.0, v = 0.0;
        const double eps = 1e6; // sqrt(v) negligible against eps
        rmsprop_update(&p, &g, &v, 1, 0.5, 0.0, eps);
        CHECK(p == doctest::Approx(1.0 - 0.5 * 2.0 / eps).epsilon(1e-9));
    }
}

TEST_CASE("optimizer steps over full parameter sets") {
    SasNetParams p = init_params(3);
    const SasNetParams orig = p;
    SasNetGrads g = make_grads();

    SUBCASE("zero gradients change nothing") {
        bgd_step(p, g, 0.001);
        for (std::size_t i = 0; i < p.conv_w[0].size(); ++i)
            CHECK(p.conv_w[0][i] == orig.conv_w[0][i]);
        CHECK(p.response_scale == orig.response_scale);
    }
    SUBCASE("stage-1 BGD leaves theta_att untouched") {
        for (std::size_t i = 0; i < g.att_w.size(); ++i) g.att_w[i] = 1.0;
        for (std::size_t i = 0; i < g.conv_w[0].size(); ++i) g.conv_w[0][i] = 1.0;
        bgd_step(p, g, 0.001);
        for (std::size_t i = 0; i < p.att_w.size(); ++i) CHECK(p.att_w[i] == orig.att_w[i]);
        for (std::size_t i = 0; i < p.conv_w[0].size(); ++i)
            CHECK(p.conv_w[0][i] == doctest::Approx(orig.conv_w[0][i] - 0.001).epsilon(1e-12));
    }
    SUBCASE("non-finite gradients abort with a diagnostic") {
        g.conv_w[2][7] = std::nan("");
        try {
            bgd_step(p, g, 0.001);
            FAIL("expected an error");
        } catch (const Error& e) {
            CHECK(std::string(e.what()).find("conv3.w") != std::string::npos);
        }
    }
    SUBCASE("rmsprop applies per-group learning rates") {
        RmspropState st = make_rmsprop_state();
        for (std::size_t i = 0; i < g.att_w.size(); ++i) g.att_w[i] = 1.0;
        for (std::size_t i = 0; i < g.conv_w[0].size(); ++i) g.conv_w[0][i] = 1.0;
        rmsprop_step(p, g, st, 1e-4, 1e-3, 0.9, 1e-8);
        const double att_step = orig.att_w[0] - p.att_w[0];
        const double conv_step = orig.conv_w[0][0] - p.conv_w[0][0];
        CHECK(att_step == doctest::Approx(1e-3 / std::sqrt(0.1)).epsilon(1e-6));
        CHECK(conv_step == doctest::Approx(1e-4 / std::sqrt(0.1)).epsilon(1e-6));
    }
    SUBCASE("affine readout step keeps the scale positive") {
        RmspropState st = make_rmsprop_state();
        g.response_scale = 1e4;
        g.response_bias = 1.0;
        for (int i = 0; i < 50; ++i) affine_readout_step(p, g, st, 0.02, 0.9, 1e-8);
        CHECK(p.response_scale > 0.0);
        CHECK(p.response_scale < orig.response_scale);
        CHECK(p.response_bias < orig.response_bias);
    }
}

TEST_CASE("batch gradient equals the mean of per-pair gradients") {
    SynthOptions opt;
    opt.frame_w = 240;
    opt.frame_h = 200;
    opt.aspect_min = opt.aspect_max = 1.0;
    opt.min_target = 50;
    opt.max_target = 70;
    const auto pairs = synth_pairs(11, 4, opt);
    const SasNetParams p = init_params(5);

    SasNetGrads mean_grads = make_grads();
    SasNetGrads single = make_grads();
    for (const PairSample& s : pairs) {
        single.zero();
        pair_loss_grads_stage1(s, p, 2.0, single);
        mean_grads.add_scaled(single, 1.0 / 4.0);
    }

    // train for one iteration with a batch that covers all four pairs; seed 0
    // iteration 0 picks a permutation of all of them
    TrainConfig cfg;
    cfg.stage = 1;
    cfg.iterations = 1;
    cfg.batch_pairs = 4;
    cfg.seed = 0;
    cfg.lr_stage1 = 0.5; // large so the step is visible
    cfg.affine_lr = 0.0; // isolate the BGD tensor update
    cfg.log_every = 0;
    const TrainResult res = train_stage1(pairs, p, cfg);

    // theta after one BGD step must equal theta - lr * mean_grads, regardless
    // of the batch order (mean over all four pairs)
    for (int l = 0; l < 5; ++l)
        for (std::size_t i = 0; i < res.params.conv_w[l].size(); ++i) {
            const double want = p.conv_w[l][i] - 0.5 * mean_grads.conv_w[l][i];
            CHECK(res.params.conv_w[l][i] == doctest::Approx(want).epsilon(1e-9));
        }
}

TEST_CASE("training determinism and logging") {
    SynthOptions opt;
    opt.frame_w = 200;
    opt.frame_h = 160;
    opt.aspect_min = opt.aspect_max = 1.0;
    opt.min_target = 44;
    opt.max_target = 60;
    const auto pairs = synth_pairs(21, 4, opt);
    const SasNetParams init = init_params(9);

    TrainConfig cfg;
    cfg.stage = 1;
    cfg.iterations = 3;
    cfg.batch_pairs = 2;
    cfg.seed = 77;
    cfg.fast32 = true;
    cfg.log_every = 1;

    const TrainResult a = train_stage1(pairs, init, cfg);
    const TrainResult b = train_stage1(pairs, init, cfg);
    REQUIRE(a.log.size() == 3);
    REQUIRE(b.log.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) CHECK(a.log[i].loss == b.log[i].loss);
    CHECK(a.params.response_bias == b.params.response_bias);

    SUBCASE("empty dataset is rejected") {
        CHECK_THROWS(train_stage1({}, init, cfg));
    }
    SUBCASE("log file and checkpoints are written") {
        const auto out = temp_dir("logrun");
        std::filesystem::remove_all(out);
        TrainConfig c2 = cfg;
        c2.out_dir = out;
        c2.checkpoint_every = 2;
        train_stage1(pairs, init, c2);
        CHECK(std::filesystem::exists(out / "train_log.csv"));
        CHECK(std::filesystem::exists(out / checkpoint_name(2)));
        CHECK(std::filesystem::exists(out / checkpoint_name(3)));
        CHECK(find_latest_checkpoint(out) == 3);
        const SasNetParams ck = load_params(out / checkpoint_name(3));
        CHECK(ck.response_bias == a.params.response_bias);
    }
}

TEST_CASE("stage-2 training on planted-channel features") {
    const int informative = 41;
    const auto ds = planted_channel_features(123, 24, informative);
    REQUIRE(ds.size() == 24);
    CHECK(ds[0].feat_z.dims() == std::vector<int>{128, 6, 6});
    CHECK(ds[0].feat_x.dims() == std::vector<int>{128, 22, 22});

    SasNetParams init = init_params(55);

    SUBCASE("zero-initialized attention starts with all weights 0.5") {
        init.att_w = Tensor({128, 4, 4});
        const Tensor w = attention_forward(ds[0].feat_zs, init);
        for (int c = 0; c < 128; ++c) CHECK(w[c] == 0.5);
    }

    SUBCASE("joint RMSprop raises the informative channel above the median") {
        TrainConfig cfg;
        cfg.stage = 2;
        cfg.iterations = 260;
        cfg.batch_pairs = 4;
        cfg.seed = 5;
        cfg.log_every = 0;
        const TrainResult res = train_stage2_features(ds, init, cfg);

        const Tensor w = attention_forward(ds[0].feat_zs, res.params);
        std::vector<double> sorted(w.data(), w.data() + 128);
        std::sort(sorted.begin(), sorted.end());
        const double median = 0.5 * (sorted[63] + sorted[64]);
        CHECK(w[informative] > median);

        // loss is non-increasing in a 10-iteration moving average on this set
        const auto& log = res.log;
        REQUIRE(log.size() == 260);
        auto avg = [&](std::size_t from) {
            double acc = 0.0;
            for (std::size_t i = from; i < from + 10; ++i) acc += log[i].loss;
            return acc / 10.0;
        };
        CHECK(avg(250 - 10) < avg(0));
        int increases = 0;
        for (std::size_t i = 10; i + 10 < log.size(); i += 10)
            if (avg(i) > avg(i - 10) + 1e-9) ++increases;
        CHECK(increases <= 3);
    }
}

TEST_CASE("pair generator invariants") {
    SynthOptions opt;
    opt.frame_w = 240;
    opt.frame_h = 200;
    const auto a = synth_pairs(31, 3, opt);
    const auto b = synth_pairs(31, 3, opt);
    REQUIRE(a.size() == 3);

    SUBCASE("deterministic given the seed") {
        for (std::size_t i = 0; i < 3; ++i) {
            REQUIRE(a[i].x.size() == b[i].x.size());
            for (std::size_t k = 0; k < a[i].x.size(); ++k) CHECK(a[i].x[k] == b[i].x[k]);
        }
    }
    SUBCASE("crop shapes are the module contracts") {
        for (const auto& s : a) {
            CHECK(s.zs.dims() == std::vector<int>{3, 255, 255});
            CHECK(s.x.dims() == std::vector<int>{3, 255, 255});
            CHECK(std::max(s.z.dim(1), s.z.dim(2)) == 127);
            CHECK(std::min(s.z.dim(1), s.z.dim(2)) >= 87);
        }
    }
    SUBCASE("pairs survive a write/load round trip within quantization") {
        const auto dir = temp_dir("pairs");
        std::filesystem::remove_all(dir);
        write_pairs(dir, a);
        const auto back = load_pairs(dir);
        REQUIRE(back.size() == a.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            REQUIRE(back[i].z.dims() == a[i].z.dims());
            for (std::size_t k = 0; k < a[i].z.size(); ++k)
                CHECK(std::fabs(back[i].z[k] - a[i].z[k]) <= 0.5 / 255.0 + 1e-12);
        }
    }
}

TEST_CASE("the pair generator centers the target in the instance crop") {
    // flat background, no clutter: re-measure the sprite centroid in X
    SynthOptions opt;
    opt.frame_w = 260;
    opt.frame_h = 220;
    opt.bg_blobs = 0;
    opt.noise_amp = 0.0;
    opt.texture_amp = 0.0;
    opt.bg_noise = 0.0;
    const auto pairs = synth_pairs(8, 4, opt);
    int measured = 0;
    for (const auto& s : pairs) {
        // flat background: the median crop value is background (possibly mixed
        // with mean-color padding, which stays within ~0.06 of it); sprite
        // pixels sit far above the threshold
        std::array<double, 3> bg{};
        for (int c = 0; c < 3; ++c) {
            std::vector<double> vals;
            vals.reserve(255 * 255);
            for (int y = 0; y < 255; ++y)
                for (int x = 0; x < 255; ++x) vals.push_back(s.x.at(c, y, x));
            std::nth_element(vals.begin(), vals.begin() + vals.size() / 2, vals.end());
            bg[c] = vals[vals.size() / 2];
        }
        double wsum = 0.0, xsum = 0.0, ysum = 0.0;
        for (int y = 0; y < 255; ++y)
            for (int x = 0; x < 255; ++x) {
                double w = 0.0;
                for (int c = 0; c < 3; ++c) w += std::fabs(s.x.at(c, y, x) - bg[c]);
                if (w < 0.25) continue; // above padding contamination
                wsum += w;
                xsum += w * (x + 0.5);
                ysum += w * (y + 0.5);
            }
        if (wsum < 100.0) continue; // sprite color too close to background
        ++measured;
        CHECK(std::fabs(xsum / wsum - 127.5) < 0.5);
        CHECK(std::fabs(ysum / wsum - 127.5) < 0.5);
    }
    CHECK(measured >= 2);
}
