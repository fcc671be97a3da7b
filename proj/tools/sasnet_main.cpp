// Command-line front end for the sasnet engine. Talks to the shared library
// through the C API only.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sasnet.h"

namespace {

using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitFail = 1;  // verification / validation failure
constexpr int kExitUsage = 2; // bad flags or arguments
constexpr int kExitIo = 3;    // filesystem / format failure

int exit_code_for(sasnet_status s) {
    switch (s) {
        case SASNET_OK: return kExitOk;
        case SASNET_ERR_INVALID_ARGUMENT: return kExitUsage;
        case SASNET_ERR_IO:
        case SASNET_ERR_FORMAT: return kExitIo;
        default: return kExitFail;
    }
}

int report_error(const char* what, sasnet_status s) {
    std::cerr << "sasnet " << what << ": " << sasnet_status_name(s) << ": "
              << sasnet_last_error() << "\n";
    return exit_code_for(s);
}

// Flat JSON config; resolution order is flag > config file > built-in default,
// implemented by seeding option defaults from the config before parsing.
json load_config(int argc, char** argv) {
    std::string path;
    for (int i = 1; i < argc - 1; ++i)
        if (std::string(argv[i]) == "--config") path = argv[i + 1];
    if (path.empty()) return json::object();
    std::ifstream in(path);
    if (!in) {
        std::cerr << "sasnet: cannot open config " << path << "\n";
        std::exit(kExitIo);
    }
    json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        std::cerr << "sasnet: bad config " << path << ": " << e.what() << "\n";
        std::exit(kExitIo);
    }
    return j;
}

template <typename T>
T cfg_or(const json& cfg, const std::string& key, T fallback) {
    if (cfg.contains(key)) {
        try {
            return cfg.at(key).get<T>();
        } catch (const std::exception&) {
            std::cerr << "sasnet: config key '" << key << "' has the wrong type\n";
            std::exit(kExitUsage);
        }
    }
    return fallback;
}

void write_run_config(const std::filesystem::path& dir, const json& resolved) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    std::ofstream out(dir / "run_config.json", std::ios::trunc);
    if (!out) {
        std::cerr << "sasnet: cannot write run_config.json under " << dir << "\n";
        std::exit(kExitIo);
    }
    out << resolved.dump(2) << "\n";
}

std::vector<double> parse_doubles(const std::string& csv, const char* what) {
    std::vector<double> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            out.push_back(std::stod(item));
        } catch (const std::exception&) {
            std::cerr << "sasnet: malformed " << what << " '" << csv << "'\n";
            std::exit(kExitUsage);
        }
    }
    if (out.empty()) {
        std::cerr << "sasnet: empty " << what << "\n";
        std::exit(kExitUsage);
    }
    return out;
}

struct SynthFlags {
    int frame_w, frame_h, distractors, bg_blobs;
    double min_target, max_target, aspect_min, aspect_max;
    double speed_min, speed_max, occluder_prob, texture_amp, noise_amp, bg_noise;

    void add_options(CLI::App* cmd, const json& cfg) {
        sasnet_synth_config d;
        sasnet_synth_config_default(&d);
        frame_w = cfg_or(cfg, "frame-w", d.frame_w);
        frame_h = cfg_or(cfg, "frame-h", d.frame_h);
        min_target = cfg_or(cfg, "min-target", d.min_target);
        max_target = cfg_or(cfg, "max-target", d.max_target);
        aspect_min = cfg_or(cfg, "aspect-min", d.aspect_min);
        aspect_max = cfg_or(cfg, "aspect-max", d.aspect_max);
        speed_min = cfg_or(cfg, "speed-min", d.speed_min);
        speed_max = cfg_or(cfg, "speed-max", d.speed_max);
        distractors = cfg_or(cfg, "distractors", d.n_distractors);
        occluder_prob = cfg_or(cfg, "occluder-prob", d.occluder_prob);
        texture_amp = cfg_or(cfg, "texture-amp", d.texture_amp);
        noise_amp = cfg_or(cfg, "noise-amp", d.noise_amp);
        bg_noise = cfg_or(cfg, "bg-noise", d.bg_noise);
        bg_blobs = cfg_or(cfg, "bg-blobs", d.bg_blobs);

        cmd->add_option("--frame-w", frame_w, "Frame width");
        cmd->add_option("--frame-h", frame_h, "Frame height");
        cmd->add_option("--min-target", min_target, "Smallest target long side, px");
        cmd->add_option("--max-target", max_target, "Largest target long side, px");
        cmd->add_option("--aspect-min", aspect_min, "Minimum box aspect (w/h)");
        cmd->add_option("--aspect-max", aspect_max, "Maximum box aspect (w/h)");
        cmd->add_option("--speed-min", speed_min, "Minimum speed, px/frame");
        cmd->add_option("--speed-max", speed_max, "Maximum speed, px/frame");
        cmd->add_option("--distractors", distractors, "Distractor sprites per scene");
        cmd->add_option("--occluder-prob", occluder_prob, "Per-frame occluder probability");
        cmd->add_option("--texture-amp", texture_amp, "Sprite texture amplitude");
        cmd->add_option("--noise-amp", noise_amp, "Sensor noise amplitude");
        cmd->add_option("--bg-noise", bg_noise, "Background value-noise amplitude");
        cmd->add_option("--bg-blobs", bg_blobs, "Background clutter blobs");
    }

    sasnet_synth_config to_config() const {
        sasnet_synth_config c;
        sasnet_synth_config_default(&c);
        c.frame_w = frame_w;
        c.frame_h = frame_h;
        c.min_target = min_target;
        c.max_target = max_target;
        c.aspect_min = aspect_min;
        c.aspect_max = aspect_max;
        c.speed_min = speed_min;
        c.speed_max = speed_max;
        c.n_distractors = distractors;
        c.occluder_prob = occluder_prob;
        c.texture_amp = texture_amp;
        c.noise_amp = noise_amp;
        c.bg_noise = bg_noise;
        c.bg_blobs = bg_blobs;
        return c;
    }

    json to_json() const {
        return {{"frame-w", frame_w},       {"frame-h", frame_h},
                {"min-target", min_target}, {"max-target", max_target},
                {"aspect-min", aspect_min}, {"aspect-max", aspect_max},
                {"speed-min", speed_min},   {"speed-max", speed_max},
                {"distractors", distractors}, {"occluder-prob", occluder_prob},
                {"texture-amp", texture_amp}, {"noise-amp", noise_amp},
                {"bg-noise", bg_noise},       {"bg-blobs", bg_blobs}};
    }
};

} // namespace

int main(int argc, char** argv) {
    const json cfg = load_config(argc, argv);

    CLI::App app{"sasnet: attention-based Siamese vehicle tracker"};
    app.require_subcommand(1);
    std::string config_path;
    app.add_option("--config", config_path, "JSON config file (flag > config > default)");

    // ---- gradcheck ----
    auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
    std::uint64_t gc_seed = cfg_or<std::uint64_t>(cfg, "seed", 1);
    std::string gc_fault = cfg_or<std::string>(cfg, "inject-fault", "");
    gradcheck->add_option("--seed", gc_seed, "Base seed");
    gradcheck->add_option("--inject-fault", gc_fault,
                          "Corrupt one op's analytic derivative (test fixture)");

    // ---- synth ----
    auto* synth = app.add_subcommand("synth", "Generate synthetic data");
    std::string synth_out = cfg_or<std::string>(cfg, "out", "");
    int synth_pairs = cfg_or(cfg, "pairs", 0);
    int synth_seqs = cfg_or(cfg, "sequences", 0);
    int synth_frames = cfg_or(cfg, "frames", 50);
    std::uint64_t synth_seed = cfg_or<std::uint64_t>(cfg, "seed", 1);
    SynthFlags synth_flags;
    synth->add_option("--out", synth_out, "Output directory")->required();
    synth->add_option("--pairs", synth_pairs, "Emit N training pairs");
    synth->add_option("--sequences", synth_seqs, "Emit N tracking sequences");
    synth->add_option("--frames", synth_frames, "Frames per sequence");
    synth->add_option("--seed", synth_seed, "Generator seed");
    synth_flags.add_options(synth, cfg);

    // ---- train ----
    auto* train = app.add_subcommand("train", "Two-stage training");
    std::string train_stage;
    std::string train_data = cfg_or<std::string>(cfg, "data", "");
    std::string train_out = cfg_or<std::string>(cfg, "out", "");
    std::string train_init = cfg_or<std::string>(cfg, "init", "");
    sasnet_train_config tdef;
    sasnet_train_config_default(&tdef, 1);
    int train_iters = cfg_or(cfg, "iters", tdef.iterations);
    int train_batch = cfg_or(cfg, "batch", tdef.batch_pairs);
    double train_lr = cfg_or(cfg, "lr", tdef.lr_stage1);
    double train_lr_s = cfg_or(cfg, "lr-theta-s", tdef.lr_theta_s_stage2);
    double train_lr_att = cfg_or(cfg, "lr-theta-att", tdef.lr_theta_att_stage2);
    double train_decay = cfg_or(cfg, "rmsprop-decay", tdef.rmsprop_decay);
    double train_eps = cfg_or(cfg, "rmsprop-eps", tdef.rmsprop_epsilon);
    double train_sigma = cfg_or(cfg, "label-sigma", tdef.label_sigma);
    std::uint64_t train_seed = cfg_or<std::uint64_t>(cfg, "seed", 0);
    int train_log_every = cfg_or(cfg, "log-every", tdef.log_every);
    int train_ckpt = cfg_or(cfg, "checkpoint-every", tdef.checkpoint_every);
    bool train_resume = cfg_or(cfg, "resume", false);
    bool train_fast32 = cfg_or(cfg, "fast32", false);
    train->add_option("stage", train_stage, "stage1 or stage2")
        ->required()
        ->check(CLI::IsMember({"stage1", "stage2"}));
    train->add_option("--data", train_data, "Pair directory (from synth --pairs)")->required();
    train->add_option("--out", train_out, "Output directory")->required();
    train->add_option("--init", train_init, "Initial weights (.sasn); required for stage2");
    train->add_option("--iters", train_iters, "Iteration budget");
    train->add_option("--batch", train_batch, "Pairs per batch");
    train->add_option("--lr", train_lr, "Stage-1 learning rate");
    train->add_option("--lr-theta-s", train_lr_s, "Stage-2 backbone learning rate");
    train->add_option("--lr-theta-att", train_lr_att, "Stage-2 attention learning rate");
    train->add_option("--rmsprop-decay", train_decay, "RMSprop decay");
    train->add_option("--rmsprop-eps", train_eps, "RMSprop epsilon");
    train->add_option("--label-sigma", train_sigma, "Gaussian label sigma, cells");
    train->add_option("--seed", train_seed, "Training seed");
    train->add_option("--log-every", train_log_every, "Log interval, iterations");
    train->add_option("--checkpoint-every", train_ckpt, "Checkpoint interval, iterations");
    train->add_flag("--resume", train_resume, "Resume from the latest checkpoint in --out");
    train->add_flag("--fast32", train_fast32, "Single-precision GEMM internals");

    // ---- track ----
    auto* track = app.add_subcommand("track", "Run the tracker over a sequence");
    std::string track_params = cfg_or<std::string>(cfg, "params", "");
    std::string track_seq = cfg_or<std::string>(cfg, "seq", "");
    std::string track_init = cfg_or<std::string>(cfg, "init", "");
    bool track_init_gt = cfg_or(cfg, "init-from-gt", false);
    std::string track_out = cfg_or<std::string>(cfg, "out", "results.csv");
    sasnet_track_config kdef;
    sasnet_track_config_default(&kdef);
    std::string track_scales = cfg_or<std::string>(cfg, "scales", "");
    double track_penalty = cfg_or(cfg, "scale-penalty", kdef.scale_penalty);
    double track_damping = cfg_or(cfg, "scale-damping", kdef.scale_damping);
    int track_upsample = cfg_or(cfg, "upsample-factor", kdef.upsample_factor);
    bool track_hann = cfg_or(cfg, "hann", false);
    double track_hann_w = cfg_or(cfg, "hann-weight", kdef.hann_weight);
    bool track_fast32 = cfg_or(cfg, "fast32", false);
    track->add_option("--params", track_params, "Weights file (.sasn)")->required();
    track->add_option("--seq", track_seq, "Sequence directory")->required();
    track->add_option("--init", track_init, "First-frame box 'x,y,w,h' (top-left)");
    track->add_flag("--init-from-gt", track_init_gt, "Take the box from groundtruth.txt");
    track->add_option("--out", track_out, "Results CSV path");
    track->add_option("--scales", track_scales, "Comma-separated scale factors");
    track->add_option("--scale-penalty", track_penalty, "Non-unit scale peak penalty");
    track->add_option("--scale-damping", track_damping, "Size update damping");
    track->add_option("--upsample-factor", track_upsample, "Response upsampling factor");
    track->add_flag("--hann", track_hann, "Blend a Hann window into the response");
    track->add_option("--hann-weight", track_hann_w, "Hann blend weight");
    track->add_flag("--fast32", track_fast32, "Single-precision GEMM internals");

    // ---- eval ----
    auto* eval = app.add_subcommand("eval", "Score results against ground truth");
    std::string eval_results = cfg_or<std::string>(cfg, "results", "");
    std::string eval_gt = cfg_or<std::string>(cfg, "gt", "");
    std::string eval_report = cfg_or<std::string>(cfg, "report", "report.csv");
    double eval_fps = cfg_or(cfg, "fps", -1.0);
    eval->add_option("--results", eval_results, "Tracking results CSV")->required();
    eval->add_option("--gt", eval_gt, "groundtruth.txt or sequence directory")->required();
    eval->add_option("--report", eval_report, "Report CSV path");
    eval->add_option("--fps", eval_fps, "FPS to record (default: timing sidecar if present)");

    // ---- bench ----
    auto* bench = app.add_subcommand("bench", "Correlation cost benchmark");
    std::string bench_aspects = cfg_or<std::string>(cfg, "aspects", "1.0,1.5,2.0");
    int bench_repeats = cfg_or(cfg, "repeats", 50);
    std::string bench_out = cfg_or<std::string>(cfg, "out", "");
    bench->add_option("--aspects", bench_aspects, "Exemplar-feature aspect ratios");
    bench->add_option("--repeats", bench_repeats, "Timing repeats per shape");
    bench->add_option("--out", bench_out, "Optional file for the table");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    if (gradcheck->parsed()) {
        char* report = nullptr;
        int pass = 0;
        const sasnet_status s = sasnet_gradcheck(
            gc_seed, gc_fault.empty() ? nullptr : gc_fault.c_str(), &report, &pass);
        if (report) {
            std::cout << report;
            sasnet_string_free(report);
        }
        if (s != SASNET_OK && s != SASNET_ERR_VERIFY) return report_error("gradcheck", s);
        return pass ? kExitOk : kExitFail;
    }

    if (synth->parsed()) {
        if ((synth_pairs > 0) == (synth_seqs > 0)) {
            std::cerr << "sasnet synth: pass exactly one of --pairs or --sequences\n";
            return kExitUsage;
        }
        const sasnet_synth_config sc = synth_flags.to_config();
        json resolved = synth_flags.to_json();
        resolved["command"] = "synth";
        resolved["out"] = synth_out;
        resolved["seed"] = synth_seed;
        resolved["pairs"] = synth_pairs;
        resolved["sequences"] = synth_seqs;
        resolved["frames"] = synth_frames;
        write_run_config(synth_out, resolved);

        const sasnet_status s =
            synth_pairs > 0
                ? sasnet_synth_pairs(synth_seed, synth_pairs, &sc, synth_out.c_str())
                : sasnet_synth_sequences(synth_seed, synth_seqs, synth_frames, &sc,
                                         synth_out.c_str());
        if (s != SASNET_OK) return report_error("synth", s);
        std::cout << "wrote "
                  << (synth_pairs > 0 ? std::to_string(synth_pairs) + " pairs"
                                      : std::to_string(synth_seqs) + " sequences")
                  << " to " << synth_out << "\n";
        return kExitOk;
    }

    if (train->parsed()) {
        const int stage = train_stage == "stage2" ? 2 : 1;
        if (stage == 2 && train_init.empty() && !train_resume) {
            std::cerr << "sasnet train: stage2 requires --init (or --resume)\n";
            return kExitUsage;
        }
        sasnet_train_config tc;
        sasnet_train_config_default(&tc, stage);
        tc.batch_pairs = train_batch;
        tc.lr_stage1 = train_lr;
        tc.lr_theta_s_stage2 = train_lr_s;
        tc.lr_theta_att_stage2 = train_lr_att;
        tc.rmsprop_decay = train_decay;
        tc.rmsprop_epsilon = train_eps;
        tc.iterations = train_iters;
        tc.seed = train_seed;
        tc.label_sigma = train_sigma;
        tc.log_every = train_log_every;
        tc.checkpoint_every = train_ckpt;
        tc.fast32 = train_fast32 ? 1 : 0;

        json resolved = {{"command", "train"},
                         {"stage", train_stage},
                         {"data", train_data},
                         {"out", train_out},
                         {"init", train_init},
                         {"iters", train_iters},
                         {"batch", train_batch},
                         {"lr", train_lr},
                         {"lr-theta-s", train_lr_s},
                         {"lr-theta-att", train_lr_att},
                         {"rmsprop-decay", train_decay},
                         {"rmsprop-eps", train_eps},
                         {"label-sigma", train_sigma},
                         {"seed", train_seed},
                         {"log-every", train_log_every},
                         {"checkpoint-every", train_ckpt},
                         {"resume", train_resume},
                         {"fast32", train_fast32}};
        write_run_config(train_out, resolved);
        std::cout << "train " << train_stage << ": iters=" << train_iters
                  << " batch=" << train_batch;
        if (stage == 1)
            std::cout << " lr=" << train_lr;
        else
            std::cout << " lr-theta-s=" << train_lr_s << " lr-theta-att=" << train_lr_att;
        std::cout << " seed=" << train_seed << "\n";

        sasnet_params* init = nullptr;
        if (!train_init.empty()) {
            const sasnet_status s = sasnet_params_load(train_init.c_str(), &init);
            if (s != SASNET_OK) return report_error("train", s);
        }
        sasnet_params* final_params = nullptr;
        const sasnet_status s = sasnet_train(
            train_data.c_str(), init, &tc, train_out.c_str(), train_resume ? 1 : 0,
            [](int iter, double loss, void*) {
                std::printf("iter %d loss %.6f\n", iter, loss);
                std::fflush(stdout);
            },
            nullptr, &final_params);
        sasnet_params_free(init);
        if (s != SASNET_OK) return report_error("train", s);
        sasnet_params_free(final_params);
        std::cout << "final weights: "
                  << (std::filesystem::path(train_out) / "params_final.sasn").string() << "\n";
        return kExitOk;
    }

    if (track->parsed()) {
        if (track_init.empty() == !track_init_gt) {
            std::cerr << "sasnet track: pass exactly one of --init or --init-from-gt\n";
            return kExitUsage;
        }
        double tlwh[4];
        if (!track_init.empty()) {
            const auto vals = parse_doubles(track_init, "--init box");
            if (vals.size() != 4 || vals[2] <= 0 || vals[3] <= 0) {
                std::cerr << "sasnet track: --init must be 'x,y,w,h' with positive size\n";
                return kExitUsage;
            }
            for (int i = 0; i < 4; ++i) tlwh[i] = vals[i];
        }
        sasnet_track_config tc;
        sasnet_track_config_default(&tc);
        if (!track_scales.empty()) {
            const auto vals = parse_doubles(track_scales, "--scales");
            if (vals.size() > 8) {
                std::cerr << "sasnet track: at most 8 scales\n";
                return kExitUsage;
            }
            tc.n_scales = static_cast<int>(vals.size());
            for (std::size_t i = 0; i < vals.size(); ++i) tc.scale_factors[i] = vals[i];
        }
        tc.scale_penalty = track_penalty;
        tc.scale_damping = track_damping;
        tc.upsample_factor = track_upsample;
        tc.hann_window = track_hann ? 1 : 0;
        tc.hann_weight = track_hann_w;
        sasnet_set_fast32(track_fast32 ? 1 : 0);

        json rscales = json::array();
        for (int i = 0; i < tc.n_scales; ++i) rscales.push_back(tc.scale_factors[i]);
        json resolved = {{"command", "track"},
                         {"params", track_params},
                         {"seq", track_seq},
                         {"init", track_init},
                         {"init-from-gt", track_init_gt},
                         {"out", track_out},
                         {"scales", track_scales},
                         {"resolved-scales", rscales},
                         {"scale-penalty", track_penalty},
                         {"scale-damping", track_damping},
                         {"upsample-factor", track_upsample},
                         {"hann", track_hann},
                         {"hann-weight", track_hann_w},
                         {"fast32", track_fast32}};
        const auto out_parent = std::filesystem::path(track_out).parent_path();
        write_run_config(out_parent.empty() ? "." : out_parent, resolved);

        sasnet_params* params = nullptr;
        sasnet_status s = sasnet_params_load(track_params.c_str(), &params);
        if (s != SASNET_OK) return report_error("track", s);
        double fps = 0.0;
        s = sasnet_track(params, track_seq.c_str(), track_init.empty() ? nullptr : tlwh,
                         &tc, track_out.c_str(), &fps);
        sasnet_params_free(params);
        if (s != SASNET_OK) return report_error("track", s);

        std::ofstream timing(track_out + ".timing.json", std::ios::trunc);
        timing << json{{"fps", fps}}.dump(2) << "\n";
        std::cout << "results: " << track_out << "\nfps: " << fps << "\n";
        return kExitOk;
    }

    if (eval->parsed()) {
        double fps = eval_fps;
        if (fps < 0.0) {
            fps = 0.0;
            std::ifstream timing(eval_results + ".timing.json");
            if (timing) {
                try {
                    json t;
                    timing >> t;
                    fps = t.value("fps", 0.0);
                } catch (const std::exception&) {
                    fps = 0.0;
                }
            }
        }
        double auc = 0.0, p20 = 0.0;
        const sasnet_status s = sasnet_eval(eval_results.c_str(), eval_gt.c_str(), fps,
                                            eval_report.c_str(), &auc, &p20);
        if (s != SASNET_OK) return report_error("eval", s);
        std::cout << "report: " << eval_report << "\nauc: " << auc
                  << "\nprecision_at_20: " << p20 << "\nfps: " << fps << "\n";
        return kExitOk;
    }

    if (bench->parsed()) {
        const auto aspects = parse_doubles(bench_aspects, "--aspects");
        char* table = nullptr;
        double ratios[2] = {0.0, 0.0};
        const sasnet_status s = sasnet_bench(aspects.data(), static_cast<int>(aspects.size()),
                                             bench_repeats, &table, ratios);
        if (s != SASNET_OK) return report_error("bench", s);
        std::cout << table;
        if (!bench_out.empty()) {
            std::ofstream out(bench_out, std::ios::trunc);
            out << table;
        }
        sasnet_string_free(table);
        std::printf("last aspect: flop_ratio=%.2f time_ratio=%.2f\n", ratios[0], ratios[1]);
        return kExitOk;
    }

    return kExitUsage;
}
