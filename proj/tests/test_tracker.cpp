#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "synth.hpp"
#include "tracker.hpp"

using namespace sasnet;

namespace {

std::filesystem::path temp_dir(const char* leaf) {
    const auto dir = std::filesystem::temp_directory_path() / "sasnet_test_tracker" / leaf;
    std::filesystem::create_directories(dir);
    return dir;
}

// Smooth random texture (bilinear value noise), so sub-cell feature shifts
// interpolate cleanly.
std::uint64_t mix(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

double lattice(std::int64_t ix, std::int64_t iy, std::uint64_t s) {
    return static_cast<double>(mix(static_cast<std::uint64_t>(ix) * 0x632BE59BD9B4E019ULL ^
                                   static_cast<std::uint64_t>(iy) ^ s) >>
                               11) *
           0x1.0p-53;
}

double smooth_noise(double x, double y, double scale, std::uint64_t s) {
    const double u = x / scale, v = y / scale;
    const std::int64_t ix = static_cast<std::int64_t>(std::floor(u));
    const std::int64_t iy = static_cast<std::int64_t>(std::floor(v));
    const double fx = u - ix, fy = v - iy;
    const double a = lattice(ix, iy, s), b = lattice(ix + 1, iy, s);
    const double c = lattice(ix, iy + 1, s), d = lattice(ix + 1, iy + 1, s);
    return (a + (b - a) * fx) * (1.0 - fy) + (c + (d - c) * fx) * fy;
}

// Plain background with one high-contrast textured sprite whose center sits at
// (cx, cy). The texture rides with the sprite, so shifting the center shifts
// rigid content.
Frame sprite_frame(int w, int h, double cx, double cy, double sw, double sh,
                   std::uint64_t seed) {
    Tensor rgb = Tensor::full({3, h, w}, 0.35);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const double lx = x + 0.5 - (cx - sw / 2.0);
                const double ly = y + 0.5 - (cy - sh / 2.0);
                if (lx < 0.0 || ly < 0.0 || lx >= sw || ly >= sh) continue;
                rgb.at(c, y, x) =
                    0.55 + 0.4 * (smooth_noise(lx, ly, 9.0, seed + c) - 0.5) * 2.0;
            }
    return frame_from_rgb(std::move(rgb));
}

// Channel-preserving delta kernels: every conv passes its input through, so
// features are pooled copies of the image and correlation becomes a plain
// matched filter. That isolates the peak-to-displacement geometry from
// learned discrimination.
SasNetParams delta_params() {
    SasNetParams p = init_params(0);
    for (int l = 0; l < 5; ++l) {
        const ConvSpec& spec = kConvSpecs[l];
        p.conv_w[l] = Tensor({spec.out_ch, spec.in_ch, spec.kernel, spec.kernel});
        const int mid = spec.kernel / 2;
        for (int o = 0; o < spec.out_ch; ++o)
            p.conv_w[l].at(o, o % spec.in_ch, mid, mid) = 1.0;
        p.conv_b[l] = Tensor({spec.out_ch});
    }
    p.att_w = Tensor({128, 4, 4}); // weights 0.5 across the board
    p.response_scale = 1e-3;
    p.response_bias = 0.0;
    return p;
}

} // namespace

TEST_CASE("track config validation") {
    TrackConfig c;
    validate_track_config(c); // defaults are fine
    CHECK(c.scale_factors.size() == 3);
    CHECK(c.scale_factors[1] == 1.0);
    CHECK(c.scale_penalty == 0.975);
    CHECK(c.scale_damping == 0.6);
    CHECK(c.upsample_factor == 16);
    CHECK(c.total_stride == 8);

    SUBCASE("the scale set must contain 1.0") {
        c.scale_factors = {0.96, 1.04};
        CHECK_THROWS(validate_track_config(c));
    }
    SUBCASE("scales must be positive") {
        c.scale_factors = {-1.0, 1.0};
        CHECK_THROWS(validate_track_config(c));
    }
}

TEST_CASE("tracker init freezes the exemplar branch") {
    const SasNetParams p = init_params(11);
    const Frame f = sprite_frame(400, 320, 200.0, 160.0, 110.0, 100.0, 77);
    const BBox box{200.0, 160.0, 120.0, 120.0};
    const TrackConfig cfg;

    TrackerState a = tracker_init(f, box, p, cfg);
    CHECK(a.exemplar_feat.dims() == std::vector<int>{128, 6, 6});
    CHECK(a.channel_weights.dims() == std::vector<int>{128});
    for (int c = 0; c < 128; ++c) {
        CHECK(a.channel_weights[c] > 0.0);
        CHECK(a.channel_weights[c] < 1.0);
    }

    SUBCASE("two inits with identical inputs match bitwise") {
        TrackerState b = tracker_init(f, box, p, cfg);
        for (std::size_t i = 0; i < a.exemplar_feat.size(); ++i)
            CHECK(a.exemplar_feat[i] == b.exemplar_feat[i]);
        for (int c = 0; c < 128; ++c) CHECK(a.channel_weights[c] == b.channel_weights[c]);
    }

    SUBCASE("steps leave the stored exemplar untouched") {
        const Tensor saved_feat = a.exemplar_feat;
        const Tensor saved_w = a.channel_weights;
        tracker_step(a, f, p);
        tracker_step(a, f, p);
        for (std::size_t i = 0; i < saved_feat.size(); ++i)
            CHECK(a.exemplar_feat[i] == saved_feat[i]);
        for (int c = 0; c < 128; ++c) CHECK(a.channel_weights[c] == saved_w[c]);
    }

    SUBCASE("per-step compute is one backbone forward per scale") {
        const std::uint64_t before = backbone_forward_calls();
        tracker_step(a, f, p);
        CHECK(backbone_forward_calls() - before == cfg.scale_factors.size());
    }
}

TEST_CASE("self-match keeps the box still") {
    const SasNetParams p = init_params(13);
    const Frame f = sprite_frame(420, 360, 210.0, 180.0, 140.0, 140.0, 5);
    const BBox box{210.0, 180.0, 140.0, 140.0};
    TrackerState st = tracker_init(f, box, p, TrackConfig{});

    const StepResult r = tracker_step(st, f, p);
    CHECK(std::fabs(r.box.cx - box.cx) < 1.0);
    CHECK(std::fabs(r.box.cy - box.cy) < 1.0);
    CHECK(r.score > 0.0);
    CHECK(r.score < 1.0);
}

TEST_CASE("an 8 px translation is recovered within half a stride") {
    const SasNetParams p = delta_params();
    // box 254x254 makes the context window exactly 510 source px (ratio 2)
    const Frame f0 = sprite_frame(700, 700, 350.0, 350.0, 254.0, 254.0, 42);
    const BBox box{350.0, 350.0, 254.0, 254.0};

    TrackConfig cfg;
    cfg.scale_factors = {1.0}; // isolate translation
    TrackerState st = tracker_init(f0, box, p, cfg);

    const Frame f1 = sprite_frame(700, 700, 358.0, 350.0, 254.0, 254.0, 42);
    const StepResult r = tracker_step(st, f1, p);
    const double dx = r.box.cx - box.cx;
    const double dy = r.box.cy - box.cy;
    CHECK(dx >= 4.0);  // 8 +- total_stride/2
    CHECK(dx <= 12.0);
    CHECK(std::fabs(dy) <= 4.0);
}

TEST_CASE("equal responses across scales keep the size (penalty tie-break)") {
    const SasNetParams p = init_params(19);
    // constant frame: crops at every scale are identical, so all scale
    // responses coincide and the unit scale must win through the penalty
    Frame f = frame_from_rgb(Tensor::full({3, 400, 400}, 0.42));
    const BBox box{200.0, 200.0, 120.0, 100.0};
    TrackerState st = tracker_init(f, box, p, TrackConfig{});
    const StepResult r = tracker_step(st, f, p);
    CHECK(r.box.w == doctest::Approx(120.0).epsilon(1e-12));
    CHECK(r.box.h == doctest::Approx(100.0).epsilon(1e-12));
    CHECK(st.scale_state == 1.0);
}

TEST_CASE("displacement mapping reduces to stride * (S/255) at factor 1") {
    // with scale_factors {1} and upsample_factor 1 the geometry is exact:
    // disp_src = disp_resp * total_stride * (S / 255)
    const SasNetParams p = delta_params();
    const Frame f0 = sprite_frame(760, 760, 380.0, 380.0, 254.0, 254.0, 9);
    const BBox box{380.0, 380.0, 254.0, 254.0}; // S = 510
    TrackConfig cfg;
    cfg.scale_factors = {1.0};
    cfg.upsample_factor = 1;
    TrackerState st = tracker_init(f0, box, p, cfg);

    // shift by exactly one response cell: stride * S/255 = 8 * 2 = 16 px
    const Frame f1 = sprite_frame(760, 760, 396.0, 380.0, 254.0, 254.0, 9);
    const StepResult r = tracker_step(st, f1, p);
    CHECK(r.box.cx - box.cx == doctest::Approx(16.0).epsilon(1e-9));
    CHECK(r.box.cy - box.cy == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("track_sequence") {
    const SasNetParams p = init_params(29);
    const auto dir = temp_dir("seq");
    std::filesystem::remove_all(dir);
    SynthOptions opt;
    opt.frame_w = 280;
    opt.frame_h = 220;
    opt.min_target = 56;
    opt.max_target = 72;
    opt.aspect_min = opt.aspect_max = 1.0;
    opt.speed_min = opt.speed_max = 0.0; // static
    synth_sequences(3, 1, 5, opt, dir);
    const Sequence seq = load_sequence(dir / "seq_0000");

    SUBCASE("single-frame sequence returns the init box with score 1") {
        const auto entries = track_sequence({seq.frame_paths[0]}, seq.groundtruth[0], p,
                                            TrackConfig{});
        REQUIRE(entries.size() == 1);
        CHECK(entries[0].score == 1.0);
        CHECK(entries[0].box.cx == seq.groundtruth[0].cx);
    }

    SUBCASE("row count equals frame count and results round-trip through csv") {
        const auto entries =
            track_sequence(seq.frame_paths, seq.groundtruth[0], p, TrackConfig{});
        REQUIRE(entries.size() == 5);
        const auto csv = dir / "results.csv";
        write_results_csv(csv, entries);
        const auto rows = read_results_csv(csv);
        REQUIRE(rows.size() == 5);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            CHECK(rows[i].box.cx == doctest::Approx(entries[i].box.cx).epsilon(1e-4));
            CHECK(rows[i].score == doctest::Approx(entries[i].score).epsilon(1e-4));
        }
    }

    SUBCASE("a corrupt frame aborts with its index") {
        auto paths = seq.frame_paths;
        std::ofstream bad(dir / "corrupt.ppm", std::ios::binary);
        bad << "not a ppm";
        bad.close();
        paths[2] = dir / "corrupt.ppm";
        try {
            track_sequence(paths, seq.groundtruth[0], p, TrackConfig{});
            FAIL("expected an error");
        } catch (const Error& e) {
            CHECK(std::string(e.what()).find("frame 3") != std::string::npos);
        }
    }

    SUBCASE("empty sequence is an error") {
        CHECK_THROWS(track_sequence({}, seq.groundtruth[0], p, TrackConfig{}));
    }
}

TEST_CASE("results csv rejects malformed files") {
    const auto dir = temp_dir("csv");
    const auto path = dir / "bad.csv";
    std::ofstream out(path);
    out << "frame,x,y,w,h,score\n1,2,3\n";
    out.close();
    CHECK_THROWS_AS(read_results_csv(path), FormatError);

    const auto path2 = dir / "noheader.csv";
    std::ofstream out2(path2);
    out2 << "1,2,3,4,5,6\n";
    out2.close();
    CHECK_THROWS_AS(read_results_csv(path2), FormatError);
}
