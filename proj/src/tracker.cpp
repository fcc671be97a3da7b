#include "tracker.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

namespace sasnet {

void validate_track_config(const TrackConfig& c) {
    bool has_unit = false;
    for (double f : c.scale_factors) {
        if (!(f > 0.0)) throw Error("scale factors must be positive");
        if (f == 1.0) has_unit = true;
    }
    if (!has_unit) throw Error("scale_factors must contain 1.0");
    if (!(c.scale_penalty > 0.0 && c.scale_penalty <= 1.0))
        throw Error("scale_penalty must be in (0,1]");
    if (!(c.scale_damping >= 0.0 && c.scale_damping <= 1.0))
        throw Error("scale_damping must be in [0,1]");
    if (c.upsample_factor < 1) throw Error("upsample_factor must be >= 1");
}

TrackerState tracker_init(const Frame& first_frame, const BBox& init_box,
                          const SasNetParams& params, const TrackConfig& config) {
    validate_track_config(config);
    if (!(init_box.w > 0.0 && init_box.h > 0.0))
        throw Error("init box must have positive extents");

    TrackerState st;
    st.config = config;
    st.box = init_box;
    const Tensor z = make_exemplar(first_frame, init_box);
    const Tensor zs = make_semantic(first_frame, init_box);
    st.exemplar_feat = backbone_forward(z, params);
    st.channel_weights = attention_forward(backbone_forward(zs, params), params);
    st.weighted_exemplar = channel_scale(st.exemplar_feat, st.channel_weights);
    return st;
}

namespace {

Tensor hann_map(int h, int w) {
    Tensor m({1, h, w});
    const double pi = 3.14159265358979323846;
    for (int y = 0; y < h; ++y) {
        const double wy = h > 1 ? 0.5 * (1.0 - std::cos(2.0 * pi * y / (h - 1))) : 1.0;
        for (int x = 0; x < w; ++x) {
            const double wx = w > 1 ? 0.5 * (1.0 - std::cos(2.0 * pi * x / (w - 1))) : 1.0;
            m.at(0, y, x) = wy * wx;
        }
    }
    return m;
}

} // namespace

StepResult tracker_step(TrackerState& state, const Frame& frame,
                        const SasNetParams& params) {
    const TrackConfig& cfg = state.config;
    const double base_side = context_source_side(state.box);

    int best = -1;
    double best_score = -1.0;
    double best_peak = 0.0;
    Tensor best_activated;
    double best_side = base_side;

    for (std::size_t i = 0; i < cfg.scale_factors.size(); ++i) {
        const double f = cfg.scale_factors[i];
        const Tensor instance = make_context_crop(frame, state.box, f);
        const Tensor feat_x = backbone_forward(instance, params);
        const Tensor weighted_x = channel_scale(feat_x, state.channel_weights);
        const ResponseMap resp = make_response(xcorr(state.weighted_exemplar, weighted_x), params);

        double peak = 0.0;
        for (std::size_t k = 0; k < resp.activated.size(); ++k)
            peak = std::max(peak, resp.activated[k]);
        const double score = f == 1.0 ? peak : peak * cfg.scale_penalty;
        if (score > best_score) {
            best_score = score;
            best = static_cast<int>(i);
            best_peak = peak;
            best_activated = resp.activated;
            best_side = base_side * f;
        }
    }

    // localization map: activated response, optionally blended with a Hann
    // window, refined on the upsampled grid
    Tensor loc = best_activated;
    if (cfg.hann_window) {
        const Tensor hann = hann_map(loc.dim(1), loc.dim(2));
        for (std::size_t k = 0; k < loc.size(); ++k)
            loc[k] = (1.0 - cfg.hann_weight) * loc[k] + cfg.hann_weight * hann[k];
    }
    const Tensor up = upsample_bicubic(loc, cfg.upsample_factor);
    std::size_t peak_idx = 0;
    for (std::size_t k = 1; k < up.size(); ++k)
        if (up[k] > up[peak_idx]) peak_idx = k;
    const int uh = up.dim(1), uw = up.dim(2);
    const int pr = static_cast<int>(peak_idx) / uw;
    const int pc = static_cast<int>(peak_idx) % uw;

    // response cell -> instance pixels (total stride), then -> source pixels
    const double cell_to_src =
        static_cast<double>(cfg.total_stride) / cfg.upsample_factor * (best_side / kInstanceSide);
    const double dy = (pr - (uh - 1) / 2.0) * cell_to_src;
    const double dx = (pc - (uw - 1) / 2.0) * cell_to_src;

    const double f_best = cfg.scale_factors[static_cast<std::size_t>(best)];
    const double size_mul = cfg.scale_damping + (1.0 - cfg.scale_damping) * f_best;

    state.box.cx += dx;
    state.box.cy += dy;
    state.box.w = std::clamp(state.box.w * size_mul, 4.0, static_cast<double>(frame.width));
    state.box.h = std::clamp(state.box.h * size_mul, 4.0, static_cast<double>(frame.height));
    state.scale_state *= size_mul;

    return {state.box, best_peak};
}

std::vector<TrackEntry> track_sequence(const std::vector<std::filesystem::path>& frames,
                                       const BBox& init_box, const SasNetParams& params,
                                       const TrackConfig& config) {
    if (frames.empty()) throw Error("sequence has no frames");

    std::vector<TrackEntry> out;
    out.reserve(frames.size());

    Frame first;
    try {
        first = load_frame(frames[0]);
    } catch (const Error& e) {
        throw IoError("frame 1: " + std::string(e.what()));
    }
    TrackerState state = tracker_init(first, init_box, params, config);
    out.push_back({init_box, 1.0, 0.0});

    for (std::size_t i = 1; i < frames.size(); ++i) {
        Frame frame;
        try {
            frame = load_frame(frames[i]);
        } catch (const Error& e) {
            throw IoError("frame " + std::to_string(i + 1) + ": " + std::string(e.what()));
        }
        const auto t0 = std::chrono::steady_clock::now();
        const StepResult step = tracker_step(state, frame, params);
        const auto t1 = std::chrono::steady_clock::now();
        out.push_back({step.box, step.score, std::chrono::duration<double>(t1 - t0).count()});
    }
    return out;
}

void write_results_csv(const std::filesystem::path& path,
                       const std::vector<TrackEntry>& entries) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << "frame,x,y,w,h,score\n";
    out.precision(6);
    out << std::fixed;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        double x, y;
        bbox_to_tl(entries[i].box, x, y);
        out << (i + 1) << "," << x << "," << y << "," << entries[i].box.w << ","
            << entries[i].box.h << "," << entries[i].score << "\n";
    }
    if (!out) throw IoError("short write to " + path.string());
}

std::vector<ResultRow> read_results_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<ResultRow> rows;
    std::string line;
    if (!std::getline(in, line) || line.rfind("frame,x,y,w,h,score", 0) != 0)
        throw FormatError(path.string() + ": missing results header");
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ss(line);
        double v[6];
        char comma;
        for (int i = 0; i < 6; ++i) {
            if (!(ss >> v[i]) || (i < 5 && !(ss >> comma)))
                throw FormatError(path.string() + ":" + std::to_string(lineno) +
                                  ": malformed results row");
        }
        rows.push_back({bbox_from_tl(v[1], v[2], v[3], v[4]), v[5]});
    }
    return rows;
}

} // namespace sasnet
