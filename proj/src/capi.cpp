#include "sasnet.h"

#include <cstring>
#include <filesystem>
#include <string>

#include "crops.hpp"
#include "eval.hpp"
#include "gemm.hpp"
#include "gradcheck.hpp"
#include "net.hpp"
#include "params_io.hpp"
#include "synth.hpp"
#include "tracker.hpp"
#include "train.hpp"

struct sasnet_params {
    sasnet::SasNetParams p;
};

namespace {

thread_local std::string g_last_error;

sasnet_status fail(sasnet_status s, const std::string& msg) {
    g_last_error = msg;
    return s;
}

template <typename Fn>
sasnet_status guarded(Fn&& fn) {
    try {
        return fn();
    } catch (const sasnet::ShapeError& e) {
        return fail(SASNET_ERR_SHAPE, e.what());
    } catch (const sasnet::IoError& e) {
        return fail(SASNET_ERR_IO, e.what());
    } catch (const sasnet::FormatError& e) {
        return fail(SASNET_ERR_FORMAT, e.what());
    } catch (const std::exception& e) {
        return fail(SASNET_ERR_RUNTIME, e.what());
    }
}

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

sasnet::SynthOptions to_options(const sasnet_synth_config* cfg) {
    sasnet::SynthOptions o;
    if (!cfg) return o;
    o.frame_w = cfg->frame_w;
    o.frame_h = cfg->frame_h;
    o.min_target = cfg->min_target;
    o.max_target = cfg->max_target;
    o.aspect_min = cfg->aspect_min;
    o.aspect_max = cfg->aspect_max;
    o.speed_min = cfg->speed_min;
    o.speed_max = cfg->speed_max;
    o.n_distractors = cfg->n_distractors;
    o.occluder_prob = cfg->occluder_prob;
    o.texture_amp = cfg->texture_amp;
    o.noise_amp = cfg->noise_amp;
    o.bg_noise = cfg->bg_noise;
    o.bg_blobs = cfg->bg_blobs;
    return o;
}

} // namespace

extern "C" {

const char* sasnet_status_name(sasnet_status s) {
    switch (s) {
        case SASNET_OK: return "ok";
        case SASNET_ERR_INVALID_ARGUMENT: return "invalid-argument";
        case SASNET_ERR_SHAPE: return "shape-error";
        case SASNET_ERR_IO: return "io-error";
        case SASNET_ERR_FORMAT: return "format-error";
        case SASNET_ERR_VERIFY: return "verification-failed";
        case SASNET_ERR_RUNTIME: return "runtime-error";
    }
    return "unknown";
}

const char* sasnet_last_error(void) { return g_last_error.c_str(); }

void sasnet_set_threads(int n) { sasnet::blas::set_threads(n); }
int sasnet_get_threads(void) { return sasnet::blas::threads(); }
void sasnet_set_fast32(int enable) { sasnet::blas::set_fast32(enable != 0); }

void sasnet_string_free(char* s) { std::free(s); }

sasnet_status sasnet_params_init(uint64_t seed, sasnet_params** out) {
    if (!out) return fail(SASNET_ERR_INVALID_ARGUMENT, "null output handle");
    return guarded([&] {
        *out = new sasnet_params{sasnet::init_params(seed)};
        return SASNET_OK;
    });
}

sasnet_status sasnet_params_load(const char* path, sasnet_params** out) {
    if (!out || !path) return fail(SASNET_ERR_INVALID_ARGUMENT, "null argument");
    return guarded([&] {
        *out = new sasnet_params{sasnet::load_params(path)};
        return SASNET_OK;
    });
}

sasnet_status sasnet_params_save(const sasnet_params* p, const char* path) {
    if (!p || !path) return fail(SASNET_ERR_INVALID_ARGUMENT, "null argument");
    return guarded([&] {
        sasnet::save_params(p->p, path);
        return SASNET_OK;
    });
}

void sasnet_params_free(sasnet_params* p) { delete p; }

sasnet_status sasnet_gradcheck(uint64_t seed, const char* inject_fault_op,
                               char** report_out, int* pass_out) {
    return guarded([&] {
        const sasnet::GradCheckResult res =
            sasnet::run_gradcheck(seed, inject_fault_op ? inject_fault_op : "");
        if (report_out) *report_out = dup_string(res.report);
        if (pass_out) *pass_out = res.all_pass ? 1 : 0;
        if (!res.all_pass) {
            for (const auto& row : res.rows)
                if (!row.pass)
                    return fail(SASNET_ERR_VERIFY, "gradient check failed for " + row.op);
        }
        return SASNET_OK;
    });
}

void sasnet_synth_config_default(sasnet_synth_config* cfg) {
    if (!cfg) return;
    const sasnet::SynthOptions o;
    cfg->frame_w = o.frame_w;
    cfg->frame_h = o.frame_h;
    cfg->min_target = o.min_target;
    cfg->max_target = o.max_target;
    cfg->aspect_min = o.aspect_min;
    cfg->aspect_max = o.aspect_max;
    cfg->speed_min = o.speed_min;
    cfg->speed_max = o.speed_max;
    cfg->n_distractors = o.n_distractors;
    cfg->occluder_prob = o.occluder_prob;
    cfg->texture_amp = o.texture_amp;
    cfg->noise_amp = o.noise_amp;
    cfg->bg_noise = o.bg_noise;
    cfg->bg_blobs = o.bg_blobs;
}

sasnet_status sasnet_synth_pairs(uint64_t seed, int n_pairs,
                                 const sasnet_synth_config* cfg, const char* out_dir) {
    if (!out_dir || n_pairs < 1)
        return fail(SASNET_ERR_INVALID_ARGUMENT, "need an output directory and n_pairs >= 1");
    return guarded([&] {
        sasnet::write_pairs(out_dir, sasnet::synth_pairs(seed, n_pairs, to_options(cfg)));
        return SASNET_OK;
    });
}

sasnet_status sasnet_synth_sequences(uint64_t seed, int n_sequences, int n_frames,
                                     const sasnet_synth_config* cfg, const char* out_dir) {
    if (!out_dir || n_sequences < 1 || n_frames < 1)
        return fail(SASNET_ERR_INVALID_ARGUMENT,
                    "need an output directory, n_sequences >= 1 and n_frames >= 1");
    return guarded([&] {
        sasnet::synth_sequences(seed, n_sequences, n_frames, to_options(cfg), out_dir);
        return SASNET_OK;
    });
}

void sasnet_train_config_default(sasnet_train_config* cfg, int stage) {
    if (!cfg) return;
    const sasnet::TrainConfig c;
    cfg->stage = stage == 2 ? 2 : 1;
    cfg->batch_pairs = c.batch_pairs;
    cfg->lr_stage1 = c.lr_stage1;
    cfg->lr_theta_s_stage2 = c.lr_theta_s_stage2;
    cfg->lr_theta_att_stage2 = c.lr_theta_att_stage2;
    cfg->rmsprop_decay = c.rmsprop_decay;
    cfg->rmsprop_epsilon = c.rmsprop_epsilon;
    cfg->iterations = c.iterations;
    cfg->seed = c.seed;
    cfg->label_sigma = c.label_sigma;
    cfg->log_every = c.log_every;
    cfg->checkpoint_every = c.checkpoint_every;
    cfg->fast32 = c.fast32 ? 1 : 0;
    cfg->affine_lr = c.affine_lr;
}

sasnet_status sasnet_train(const char* data_dir, const sasnet_params* init,
                           const sasnet_train_config* cfg, const char* out_dir,
                           int resume, sasnet_progress_fn progress, void* user,
                           sasnet_params** final_out) {
    if (!data_dir || !cfg || !out_dir)
        return fail(SASNET_ERR_INVALID_ARGUMENT, "null argument");
    if (cfg->stage != 1 && cfg->stage != 2)
        return fail(SASNET_ERR_INVALID_ARGUMENT, "stage must be 1 or 2");
    if (cfg->stage == 2 && !init && !resume)
        return fail(SASNET_ERR_INVALID_ARGUMENT, "stage 2 requires initial parameters");
    return guarded([&]() -> sasnet_status {
        sasnet::TrainConfig tc;
        tc.stage = cfg->stage;
        tc.batch_pairs = cfg->batch_pairs;
        tc.lr_stage1 = cfg->lr_stage1;
        tc.lr_theta_s_stage2 = cfg->lr_theta_s_stage2;
        tc.lr_theta_att_stage2 = cfg->lr_theta_att_stage2;
        tc.rmsprop_decay = cfg->rmsprop_decay;
        tc.rmsprop_epsilon = cfg->rmsprop_epsilon;
        tc.affine_lr = cfg->affine_lr;
        tc.iterations = cfg->iterations;
        tc.seed = cfg->seed;
        tc.label_sigma = cfg->label_sigma;
        tc.log_every = cfg->log_every;
        tc.checkpoint_every = cfg->checkpoint_every;
        tc.fast32 = cfg->fast32 != 0;
        tc.out_dir = out_dir;

        sasnet::SasNetParams start =
            init ? init->p : sasnet::init_params(cfg->seed);
        sasnet::RmspropState opt_state = sasnet::make_rmsprop_state();

        if (resume) {
            const int latest = sasnet::find_latest_checkpoint(out_dir);
            if (latest >= 0) {
                start = sasnet::load_params(std::filesystem::path(out_dir) /
                                            sasnet::checkpoint_name(latest));
                tc.start_iteration = latest;
                const auto opt_path =
                    std::filesystem::path(out_dir) / sasnet::opt_state_name(latest);
                if (std::filesystem::exists(opt_path))
                    opt_state = sasnet::RmspropState::load(opt_path);
            }
        }

        const auto pairs = sasnet::load_pairs(data_dir);
        sasnet::ProgressFn cb;
        if (progress)
            cb = [progress, user](int iter, double loss) { progress(iter, loss, user); };

        sasnet::TrainResult res =
            cfg->stage == 1 ? sasnet::train_stage1(pairs, start, tc, &opt_state, cb)
                            : sasnet::train_stage2(pairs, start, tc, &opt_state, cb);

        sasnet::save_params(res.params,
                            std::filesystem::path(out_dir) / "params_final.sasn");
        if (final_out) *final_out = new sasnet_params{std::move(res.params)};
        return SASNET_OK;
    });
}

void sasnet_track_config_default(sasnet_track_config* cfg) {
    if (!cfg) return;
    const sasnet::TrackConfig c;
    cfg->n_scales = static_cast<int>(c.scale_factors.size());
    for (int i = 0; i < cfg->n_scales; ++i) cfg->scale_factors[i] = c.scale_factors[i];
    cfg->scale_penalty = c.scale_penalty;
    cfg->scale_damping = c.scale_damping;
    cfg->upsample_factor = c.upsample_factor;
    cfg->hann_window = c.hann_window ? 1 : 0;
    cfg->hann_weight = c.hann_weight;
}

sasnet_status sasnet_track(const sasnet_params* p, const char* seq_dir,
                           const double* init_tlwh, const sasnet_track_config* cfg,
                           const char* results_csv, double* fps_out) {
    if (!p || !seq_dir || !results_csv)
        return fail(SASNET_ERR_INVALID_ARGUMENT, "null argument");
    return guarded([&]() -> sasnet_status {
        sasnet::TrackConfig tc;
        if (cfg) {
            if (cfg->n_scales < 1 || cfg->n_scales > 8)
                throw sasnet::Error("n_scales must be in [1,8]");
            tc.scale_factors.assign(cfg->scale_factors, cfg->scale_factors + cfg->n_scales);
            tc.scale_penalty = cfg->scale_penalty;
            tc.scale_damping = cfg->scale_damping;
            tc.upsample_factor = cfg->upsample_factor;
            tc.hann_window = cfg->hann_window != 0;
            tc.hann_weight = cfg->hann_weight;
        }

        const sasnet::Sequence seq = sasnet::load_sequence(seq_dir);
        sasnet::BBox init;
        if (init_tlwh) {
            if (init_tlwh[2] <= 0.0 || init_tlwh[3] <= 0.0)
                throw sasnet::Error("init box extents must be positive");
            init = sasnet::bbox_from_tl(init_tlwh[0], init_tlwh[1], init_tlwh[2],
                                        init_tlwh[3]);
        } else {
            if (seq.groundtruth.empty())
                throw sasnet::IoError(std::string(seq_dir) +
                                      ": no groundtruth.txt to take the init box from");
            init = seq.groundtruth[0];
        }

        const auto entries = sasnet::track_sequence(seq.frame_paths, init, p->p, tc);
        sasnet::write_results_csv(results_csv, entries);
        if (fps_out) {
            double total = 0.0;
            for (std::size_t i = 1; i < entries.size(); ++i) total += entries[i].seconds;
            *fps_out = total > 0.0 ? static_cast<double>(entries.size() - 1) / total : 0.0;
        }
        return SASNET_OK;
    });
}

sasnet_status sasnet_eval(const char* results_csv, const char* gt_path, double fps,
                          const char* report_csv, double* auc_out,
                          double* precision20_out) {
    if (!results_csv || !gt_path)
        return fail(SASNET_ERR_INVALID_ARGUMENT, "null argument");
    return guarded([&]() -> sasnet_status {
        const auto rows = sasnet::read_results_csv(results_csv);
        std::filesystem::path gp(gt_path);
        if (std::filesystem::is_directory(gp)) gp /= "groundtruth.txt";
        const auto gt = sasnet::load_groundtruth(gp);

        std::vector<sasnet::BBox> boxes;
        boxes.reserve(rows.size());
        for (const auto& r : rows) boxes.push_back(r.box);
        const sasnet::EvalReport report = sasnet::evaluate(boxes, gt, fps);
        if (report_csv) sasnet::write_report_csv(report_csv, report);
        if (auc_out) *auc_out = report.auc;
        if (precision20_out) *precision20_out = report.precision_at_20;
        return SASNET_OK;
    });
}

sasnet_status sasnet_bench(const double* aspects, int n_aspects, int repeats,
                           char** table_out, double* ratio_out) {
    if (!aspects || n_aspects < 1)
        return fail(SASNET_ERR_INVALID_ARGUMENT, "need at least one aspect ratio");
    return guarded([&]() -> sasnet_status {
        const std::vector<double> as(aspects, aspects + n_aspects);
        const auto rows = sasnet::bench_xcorr(as, repeats);
        if (table_out) *table_out = dup_string(sasnet::bench_table(rows));
        if (ratio_out && !rows.empty()) {
            ratio_out[0] = rows.back().flop_ratio;
            ratio_out[1] = rows.back().time_ratio;
        }
        return SASNET_OK;
    });
}

} // extern "C"
