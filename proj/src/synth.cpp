#include "synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

namespace sasnet {

namespace {

std::uint64_t mix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

double lattice01(std::int64_t ix, std::int64_t iy, std::uint64_t seed) {
    const std::uint64_t h =
        mix64(static_cast<std::uint64_t>(ix) * 0x632BE59BD9B4E019ULL ^
              static_cast<std::uint64_t>(iy) * 0x9E3779B97F4A7C15ULL ^ seed);
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

// Bilinear value noise in [0,1), lattice spacing `scale`.
double value_noise(double x, double y, double scale, std::uint64_t seed) {
    const double u = x / scale, v = y / scale;
    const std::int64_t ix = static_cast<std::int64_t>(std::floor(u));
    const std::int64_t iy = static_cast<std::int64_t>(std::floor(v));
    const double fx = u - ix, fy = v - iy;
    const double a = lattice01(ix, iy, seed), b = lattice01(ix + 1, iy, seed);
    const double c = lattice01(ix, iy + 1, seed), d = lattice01(ix + 1, iy + 1, seed);
    return (a + (b - a) * fx) + ((c + (d - c) * fx) - (a + (b - a) * fx)) * fy;
}

struct Sprite {
    bool ellipse = false;
    double w = 0.0, h = 0.0;
    double color[3] = {0.5, 0.5, 0.5};
    double texture_amp = 0.3;
    std::uint64_t texture_seed = 0;
};

Sprite random_sprite(std::mt19937_64& rng, const SynthOptions& opt) {
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    Sprite s;
    s.ellipse = uni(rng) < 0.5;
    const double long_side =
        opt.min_target + uni(rng) * (opt.max_target - opt.min_target);
    const double aspect = opt.aspect_min + uni(rng) * (opt.aspect_max - opt.aspect_min);
    if (aspect >= 1.0) {
        s.w = long_side;
        s.h = long_side / aspect;
    } else {
        s.h = long_side;
        s.w = long_side * aspect;
    }
    for (double& c : s.color) c = 0.15 + 0.7 * uni(rng);
    s.texture_amp = opt.texture_amp;
    s.texture_seed = rng();
    return s;
}

// Fraction of the pixel square covered by the sprite, 2x2 supersampled for
// ellipses, analytic for rectangles.
double coverage(const Sprite& s, double cx, double cy, int px, int py) {
    if (!s.ellipse) {
        const double x0 = std::max(static_cast<double>(px), cx - s.w / 2.0);
        const double x1 = std::min(static_cast<double>(px + 1), cx + s.w / 2.0);
        const double y0 = std::max(static_cast<double>(py), cy - s.h / 2.0);
        const double y1 = std::min(static_cast<double>(py + 1), cy + s.h / 2.0);
        if (x1 <= x0 || y1 <= y0) return 0.0;
        return (x1 - x0) * (y1 - y0);
    }
    const double rx = s.w / 2.0, ry = s.h / 2.0;
    int inside = 0;
    for (int sy = 0; sy < 2; ++sy)
        for (int sx = 0; sx < 2; ++sx) {
            const double x = px + 0.25 + 0.5 * sx - cx;
            const double y = py + 0.25 + 0.5 * sy - cy;
            if ((x / rx) * (x / rx) + (y / ry) * (y / ry) <= 1.0) ++inside;
        }
    return inside / 4.0;
}

void draw_sprite(Tensor& rgb, const Sprite& s, double cx, double cy) {
    const int h = rgb.dim(1), w = rgb.dim(2);
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - s.w / 2.0)) - 1);
    const int x1 = std::min(w - 1, static_cast<int>(std::ceil(cx + s.w / 2.0)) + 1);
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - s.h / 2.0)) - 1);
    const int y1 = std::min(h - 1, static_cast<int>(std::ceil(cy + s.h / 2.0)) + 1);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int py = y0; py <= y1; ++py)
        for (int px = x0; px <= x1; ++px) {
            const double cov = coverage(s, cx, cy, px, py);
            if (cov <= 0.0) continue;
            // texture in sprite-local coordinates so it moves with the target
            const double lx = px + 0.5 - (cx - s.w / 2.0);
            const double ly = py + 0.5 - (cy - s.h / 2.0);
            const double tex =
                (value_noise(lx, ly, 5.0, s.texture_seed) - 0.5) * 2.0 * s.texture_amp;
            const std::size_t at = static_cast<std::size_t>(py) * w + px;
            for (int c = 0; c < 3; ++c) {
                const double tc = c == 0 ? 1.0 : (c == 1 ? 0.8 : 0.6);
                const double v = std::clamp(s.color[c] + tex * tc, 0.0, 1.0);
                double& dst = rgb[c * plane + at];
                dst = dst * (1.0 - cov) + v * cov;
            }
        }
}

Tensor render_background(int w, int h, std::mt19937_64& rng, const SynthOptions& opt) {
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    Tensor rgb({3, h, w});
    const std::uint64_t base_seed = rng();
    double base[3];
    for (double& c : base) c = 0.25 + 0.4 * uni(rng);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                rgb[c * plane + static_cast<std::size_t>(y) * w + x] =
                    base[c] + opt.bg_noise * (value_noise(x, y, 37.0, base_seed + c) - 0.5);

    for (int b = 0; b < opt.bg_blobs; ++b) {
        const double bx = uni(rng) * w, by = uni(rng) * h;
        const double rad = 6.0 + uni(rng) * 24.0;
        double col[3];
        for (double& c : col) c = 0.1 + 0.8 * uni(rng);
        const int x0 = std::max(0, static_cast<int>(bx - 3 * rad));
        const int x1 = std::min(w - 1, static_cast<int>(bx + 3 * rad));
        const int y0 = std::max(0, static_cast<int>(by - 3 * rad));
        const int y1 = std::min(h - 1, static_cast<int>(by + 3 * rad));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                const double d2 = (x - bx) * (x - bx) + (y - by) * (y - by);
                const double a = 0.65 * std::exp(-d2 / (2.0 * rad * rad));
                const std::size_t at = static_cast<std::size_t>(y) * w + x;
                for (int c = 0; c < 3; ++c) {
                    double& dst = rgb[c * plane + at];
                    dst = dst * (1.0 - a) + col[c] * a;
                }
            }
    }
    return rgb;
}

void add_sensor_noise(Tensor& rgb, std::mt19937_64& rng, double amp) {
    if (amp <= 0.0) return;
    std::uniform_real_distribution<double> uni(-amp, amp);
    for (std::size_t i = 0; i < rgb.size(); ++i)
        rgb[i] = std::clamp(rgb[i] + uni(rng), 0.0, 1.0);
}

struct SceneSprites {
    Sprite target;
    std::vector<Sprite> distractors;
};

Frame render_scene(const SceneSprites& sprites, double cx, double cy,
                   const std::vector<std::pair<double, double>>& distractor_pos,
                   std::mt19937_64& bg_rng, const SynthOptions& opt, bool occlude) {
    Tensor rgb = render_background(opt.frame_w, opt.frame_h, bg_rng, opt);
    for (std::size_t i = 0; i < sprites.distractors.size(); ++i)
        draw_sprite(rgb, sprites.distractors[i], distractor_pos[i].first,
                    distractor_pos[i].second);
    draw_sprite(rgb, sprites.target, cx, cy);
    if (occlude) {
        Sprite bar;
        bar.ellipse = false;
        bar.w = sprites.target.w * 0.35;
        bar.h = sprites.target.h * 1.6;
        bar.color[0] = 0.2;
        bar.color[1] = 0.22;
        bar.color[2] = 0.24;
        bar.texture_amp = 0.1;
        bar.texture_seed = bg_rng();
        draw_sprite(rgb, bar, cx + sprites.target.w * 0.25, cy);
    }
    add_sensor_noise(rgb, bg_rng, opt.noise_amp);
    return frame_from_rgb(std::move(rgb));
}

double clamp_center(double c, double half, double limit) {
    return std::clamp(c, half, limit - half);
}

} // namespace

std::vector<PairSample> synth_pairs(std::uint64_t seed, int n, const SynthOptions& opt) {
    std::vector<PairSample> pairs;
    pairs.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        std::mt19937_64 rng(mix64(seed) ^ mix64(static_cast<std::uint64_t>(i) + 1));
        std::uniform_real_distribution<double> uni(0.0, 1.0);
        SceneSprites scene;
        scene.target = random_sprite(rng, opt);
        const double hw = scene.target.w / 2.0 + 2.0, hh = scene.target.h / 2.0 + 2.0;

        const double ax = hw + uni(rng) * (opt.frame_w - 2.0 * hw);
        const double ay = hh + uni(rng) * (opt.frame_h - 2.0 * hh);
        Frame a = render_scene(scene, ax, ay, {}, rng, opt, false);
        const BBox box_a{ax, ay, scene.target.w, scene.target.h};

        const double bx = hw + uni(rng) * (opt.frame_w - 2.0 * hw);
        const double by = hh + uni(rng) * (opt.frame_h - 2.0 * hh);
        Frame b = render_scene(scene, bx, by, {}, rng, opt, false);
        const BBox box_b{bx, by, scene.target.w, scene.target.h};

        PairSample s;
        s.z = make_exemplar(a, box_a);
        s.zs = make_semantic(a, box_a);
        s.x = make_context_crop(b, box_b);
        pairs.push_back(std::move(s));
    }
    return pairs;
}

void write_pairs(const std::filesystem::path& dir, const std::vector<PairSample>& pairs) {
    std::filesystem::create_directories(dir);
    std::ofstream index(dir / "index.csv", std::ios::trunc);
    if (!index) throw IoError("cannot open " + (dir / "index.csv").string());
    index << "pair,z,zs,x\n";
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        char buf[48];
        std::snprintf(buf, sizeof(buf), "pair_%06zu", i);
        const std::string base = buf;
        save_frame_ppm(dir / (base + "_z.ppm"), pairs[i].z);
        save_frame_ppm(dir / (base + "_zs.ppm"), pairs[i].zs);
        save_frame_ppm(dir / (base + "_x.ppm"), pairs[i].x);
        index << i << "," << base << "_z.ppm," << base << "_zs.ppm," << base << "_x.ppm\n";
    }
}

std::vector<PairSample> load_pairs(const std::filesystem::path& dir) {
    std::ifstream index(dir / "index.csv");
    if (!index) throw IoError("cannot open " + (dir / "index.csv").string());
    std::vector<PairSample> pairs;
    std::string line;
    std::getline(index, line); // header
    while (std::getline(index, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string idx, zf, zsf, xf;
        if (!std::getline(ss, idx, ',') || !std::getline(ss, zf, ',') ||
            !std::getline(ss, zsf, ',') || !std::getline(ss, xf, ','))
            throw FormatError((dir / "index.csv").string() + ": malformed row");
        PairSample s;
        s.z = load_frame(dir / zf).rgb;
        s.zs = load_frame(dir / zsf).rgb;
        s.x = load_frame(dir / xf).rgb;
        pairs.push_back(std::move(s));
    }
    if (pairs.empty()) throw FormatError((dir / "index.csv").string() + ": no pairs listed");
    return pairs;
}

std::vector<SynthFrame> synth_sequence_frames(std::uint64_t seed, int n_frames,
                                              const SynthOptions& opt) {
    if (n_frames < 1) throw Error("sequence needs at least one frame");
    std::mt19937_64 rng(mix64(seed));
    std::uniform_real_distribution<double> uni(0.0, 1.0);

    SceneSprites scene;
    scene.target = random_sprite(rng, opt);
    for (int d = 0; d < opt.n_distractors; ++d)
        scene.distractors.push_back(random_sprite(rng, opt));

    const double hw = scene.target.w / 2.0 + 2.0, hh = scene.target.h / 2.0 + 2.0;
    const double speed = opt.speed_min + uni(rng) * (opt.speed_max - opt.speed_min);
    const double angle = uni(rng) * 2.0 * 3.14159265358979323846;
    double vx = speed * std::cos(angle), vy = speed * std::sin(angle);

    // start so that the whole constant-velocity path stays in frame
    const double total_x = vx * (n_frames - 1), total_y = vy * (n_frames - 1);
    const double x_lo = hw + std::max(0.0, -total_x);
    const double x_hi = opt.frame_w - hw - std::max(0.0, total_x);
    const double y_lo = hh + std::max(0.0, -total_y);
    const double y_hi = opt.frame_h - hh - std::max(0.0, total_y);
    if (x_hi < x_lo || y_hi < y_lo)
        throw Error("frame too small for the requested path length");
    double cx = x_lo + uni(rng) * (x_hi - x_lo);
    double cy = y_lo + uni(rng) * (y_hi - y_lo);

    std::vector<std::pair<double, double>> dpos;
    std::vector<std::pair<double, double>> dvel;
    for (int d = 0; d < opt.n_distractors; ++d) {
        dpos.emplace_back(uni(rng) * opt.frame_w, uni(rng) * opt.frame_h);
        const double da = uni(rng) * 2.0 * 3.14159265358979323846;
        const double ds = opt.speed_min + uni(rng) * (opt.speed_max - opt.speed_min);
        dvel.emplace_back(ds * std::cos(da), ds * std::sin(da));
    }

    // one static background per sequence
    std::mt19937_64 bg_master(rng());
    std::vector<SynthFrame> frames;
    frames.reserve(static_cast<std::size_t>(n_frames));
    for (int f = 0; f < n_frames; ++f) {
        std::mt19937_64 bg_rng(bg_master); // identical clutter every frame
        const bool occlude = uni(rng) < opt.occluder_prob;
        SynthFrame sf;
        sf.frame = render_scene(scene, cx, cy, dpos, bg_rng, opt, occlude);
        sf.box = {clamp_center(cx, scene.target.w / 2.0, opt.frame_w),
                  clamp_center(cy, scene.target.h / 2.0, opt.frame_h), scene.target.w,
                  scene.target.h};
        frames.push_back(std::move(sf));
        cx += vx;
        cy += vy;
        for (int d = 0; d < opt.n_distractors; ++d) {
            dpos[d].first += dvel[d].first;
            dpos[d].second += dvel[d].second;
        }
    }
    return frames;
}

void synth_sequences(std::uint64_t seed, int n_seq, int n_frames, const SynthOptions& opt,
                     const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    for (int s = 0; s < n_seq; ++s) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "seq_%04d", s);
        const auto dir = out_dir / buf;
        std::filesystem::create_directories(dir);
        const auto frames =
            synth_sequence_frames(mix64(seed) ^ static_cast<std::uint64_t>(s), n_frames, opt);
        std::vector<BBox> gt;
        for (int f = 0; f < n_frames; ++f) {
            char name[32];
            std::snprintf(name, sizeof(name), "%06d.ppm", f + 1);
            save_frame_ppm(dir / name, frames[static_cast<std::size_t>(f)].frame.rgb);
            gt.push_back(frames[static_cast<std::size_t>(f)].box);
        }
        write_groundtruth(dir / "groundtruth.txt", gt);
    }
}

std::vector<FeatureSample> planted_channel_features(std::uint64_t seed, int n,
                                                    int informative_channel) {
    if (informative_channel < 0 || informative_channel >= kFeatureChannels)
        throw Error("informative channel out of range");
    std::vector<FeatureSample> out;
    out.reserve(static_cast<std::size_t>(n));
    const int zh = 6, zw = 6, xh = 22, xw = 22;
    const double noise_std = 0.7, signal_amp = 1.2, x_noise = 0.1;
    for (int i = 0; i < n; ++i) {
        std::mt19937_64 rng(mix64(seed) ^ mix64(static_cast<std::uint64_t>(i) + 0x5151));
        std::normal_distribution<double> unit(0.0, 1.0);
        FeatureSample s;
        s.feat_z = Tensor({kFeatureChannels, zh, zw});
        s.feat_x = Tensor({kFeatureChannels, xh, xw});
        s.feat_zs = Tensor({kFeatureChannels, xh, xw});

        Tensor pattern({1, zh, zw});
        for (std::size_t k = 0; k < pattern.size(); ++k) pattern[k] = signal_amp * unit(rng);

        for (int c = 0; c < kFeatureChannels; ++c) {
            if (c == informative_channel) {
                for (int y = 0; y < zh; ++y)
                    for (int x = 0; x < zw; ++x)
                        s.feat_z.at(c, y, x) = pattern.at(0, y, x);
                for (int y = 0; y < xh; ++y)
                    for (int x = 0; x < xw; ++x)
                        s.feat_x.at(c, y, x) = x_noise * unit(rng);
                const int oy = (xh - zh) / 2, ox = (xw - zw) / 2;
                for (int y = 0; y < zh; ++y)
                    for (int x = 0; x < zw; ++x)
                        s.feat_x.at(c, oy + y, ox + x) += pattern.at(0, y, x);
            } else {
                for (int y = 0; y < zh; ++y)
                    for (int x = 0; x < zw; ++x)
                        s.feat_z.at(c, y, x) = noise_std * unit(rng);
                for (int y = 0; y < xh; ++y)
                    for (int x = 0; x < xw; ++x)
                        s.feat_x.at(c, y, x) = noise_std * unit(rng);
            }
            for (int y = 0; y < xh; ++y)
                for (int x = 0; x < xw; ++x)
                    s.feat_zs.at(c, y, x) = 0.25 + 0.5 * std::fabs(unit(rng));
        }
        out.push_back(std::move(s));
    }
    return out;
}

} // namespace sasnet
