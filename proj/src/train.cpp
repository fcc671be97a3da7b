#include "train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <thread>

#include "gemm.hpp"
#include "params_io.hpp"

namespace sasnet {

Tensor gaussian_label(int h, int w, double sigma) {
    if (h < 1 || w < 1) throw ShapeError("label extents must be >= 1");
    if (!(sigma > 0.0)) throw Error("label sigma must be positive");
    Tensor y({1, h, w});
    const double ci = (h - 1) / 2.0, cj = (w - 1) / 2.0;
    const double inv = 1.0 / (2.0 * sigma * sigma);
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            const double d2 = (i - ci) * (i - ci) + (j - cj) * (j - cj);
            y.at(0, i, j) = 2.0 * std::exp(-d2 * inv) - 1.0;
        }
    return y;
}

double pointwise_loss(double r_val, double y_val) {
    const double u = -y_val * r_val; // loss = softplus(u)
    if (u > 0.0) return u + std::log1p(std::exp(-u));
    return std::log1p(std::exp(u));
}

double map_loss(const Tensor& response, const Tensor& label) {
    if (!response.same_shape(label))
        throw ShapeError("map_loss: response " + response.shape_str() + " vs label " +
                         label.shape_str());
    double acc = 0.0;
    for (std::size_t i = 0; i < response.size(); ++i)
        acc += pointwise_loss(response[i], label[i]);
    return acc / static_cast<double>(response.size());
}

Tensor map_loss_backward(const Tensor& response, const Tensor& label) {
    if (!response.same_shape(label))
        throw ShapeError("map_loss_backward: shape mismatch");
    Tensor d(response.dims());
    const double inv_n = 1.0 / static_cast<double>(response.size());
    for (std::size_t i = 0; i < response.size(); ++i) {
        // d softplus(-y r)/dr = -y * sigmoid(-y r)
        const double u = -label[i] * response[i];
        d[i] = -label[i] / (1.0 + std::exp(-u)) * inv_n;
    }
    return d;
}

void bgd_update(double* param, const double* grad, std::size_t n, double lr) {
    for (std::size_t i = 0; i < n; ++i) param[i] -= lr * grad[i];
}

void rmsprop_update(double* param, const double* grad, double* v, std::size_t n,
                    double lr, double rho, double eps) {
    for (std::size_t i = 0; i < n; ++i) {
        v[i] = rho * v[i] + (1.0 - rho) * grad[i] * grad[i];
        param[i] -= lr * grad[i] / (std::sqrt(v[i]) + eps);
    }
}

namespace {

void check_finite(const SasNetGrads& g) {
    SasNetGrads& gm = const_cast<SasNetGrads&>(g);
    for (const ParamRef& r : grad_refs(gm))
        for (std::size_t i = 0; i < r.size; ++i)
            if (!std::isfinite(r.data[i]))
                throw Error("non-finite gradient in " + r.name + " at element " +
                            std::to_string(i) + "; step aborted");
}

} // namespace

void bgd_step(SasNetParams& p, const SasNetGrads& g, double lr) {
    check_finite(g);
    SasNetGrads& gm = const_cast<SasNetGrads&>(g);
    auto prefs = param_refs(p);
    auto grefs = grad_refs(gm);
    for (std::size_t i = 0; i < prefs.size(); ++i) {
        if (prefs[i].group != ParamGroup::backbone) continue; // stage 1 leaves theta_att
        bgd_update(prefs[i].data, grefs[i].data, prefs[i].size, lr);
    }
    std::string offender;
    if (!params_finite(p, &offender))
        throw Error("non-finite parameters in " + offender + " after BGD step");
}

void affine_readout_step(SasNetParams& p, const SasNetGrads& g, RmspropState& st,
                         double lr, double rho, double eps) {
    // The readout scale multiplies raw correlations of magnitude ~1e3-1e4, so
    // its raw gradient dwarfs every weight gradient, while the bias gradient is
    // bounded by 1. Per-scalar RMSprop with the scale in log space
    // (dL/d log s = s * dL/ds) gives both a usable step size and keeps the
    // scale positive as the response-map invariants require.
    const double gq = g.response_scale * p.response_scale;
    st.affine_v_scale = rho * st.affine_v_scale + (1.0 - rho) * gq * gq;
    p.response_scale *= std::exp(-lr * gq / (std::sqrt(st.affine_v_scale) + eps));

    const double gb = g.response_bias;
    st.affine_v_bias = rho * st.affine_v_bias + (1.0 - rho) * gb * gb;
    p.response_bias -= lr * gb / (std::sqrt(st.affine_v_bias) + eps);
}

RmspropState make_rmsprop_state() {
    RmspropState st;
    st.v = make_grads();
    return st;
}

void RmspropState::save(const std::filesystem::path& path) const {
    SasNetGrads& vm = const_cast<SasNetGrads&>(v);
    std::vector<NamedTensor> ts;
    for (const ParamRef& r : grad_refs(vm)) {
        NamedTensor t;
        t.name = "rms." + r.name;
        if (r.size > 1) {
            const Tensor* src = nullptr;
            // recover dims from the grads layout
            for (int l = 0; l < 5; ++l) {
                if (r.data == vm.conv_w[l].data()) src = &vm.conv_w[l];
                if (r.data == vm.conv_b[l].data()) src = &vm.conv_b[l];
            }
            if (r.data == vm.att_w.data()) src = &vm.att_w;
            t.dims = src->dims();
        }
        t.data.assign(r.data, r.data + r.size);
        ts.push_back(std::move(t));
    }
    ts.push_back({"affine_v.scale", {}, {affine_v_scale}});
    ts.push_back({"affine_v.bias", {}, {affine_v_bias}});
    write_tensor_file(path, ts);
}

RmspropState RmspropState::load(const std::filesystem::path& path) {
    RmspropState st = make_rmsprop_state();
    const auto ts = read_tensor_file(path);
    std::map<std::string, const NamedTensor*> by_name;
    for (const auto& t : ts) by_name[t.name] = &t;
    for (const ParamRef& r : grad_refs(st.v)) {
        auto it = by_name.find("rms." + r.name);
        if (it == by_name.end())
            throw FormatError(path.string() + ": missing optimizer tensor rms." + r.name);
        if (it->second->data.size() != r.size)
            throw FormatError(path.string() + ": optimizer tensor rms." + r.name +
                              " has wrong element count");
        std::copy(it->second->data.begin(), it->second->data.end(), r.data);
    }
    auto scalar = [&](const char* name) {
        auto it = by_name.find(name);
        if (it == by_name.end() || it->second->data.size() != 1)
            throw FormatError(path.string() + ": missing optimizer scalar " +
                              std::string(name));
        return it->second->data[0];
    };
    st.affine_v_scale = scalar("affine_v.scale");
    st.affine_v_bias = scalar("affine_v.bias");
    return st;
}

void rmsprop_step(SasNetParams& p, const SasNetGrads& g, RmspropState& st,
                  double lr_theta_s, double lr_theta_att, double rho, double eps) {
    check_finite(g);
    SasNetGrads& gm = const_cast<SasNetGrads&>(g);
    auto prefs = param_refs(p);
    auto grefs = grad_refs(gm);
    auto vrefs = grad_refs(st.v);
    for (std::size_t i = 0; i < prefs.size(); ++i) {
        const double lr = prefs[i].group == ParamGroup::attention ? lr_theta_att : lr_theta_s;
        rmsprop_update(prefs[i].data, grefs[i].data, vrefs[i].data, prefs[i].size, lr,
                       rho, eps);
    }
    std::string offender;
    if (!params_finite(p, &offender))
        throw Error("non-finite parameters in " + offender + " after RMSprop step");
}

namespace {

// Response -> loss -> gradients through the affine readout. Returns the loss;
// accumulates d(scale), d(bias) and returns d(raw) via out param.
double response_loss(const Tensor& raw, const SasNetParams& p, const Tensor& label,
                     SasNetGrads& grads, Tensor& d_raw) {
    Tensor squashed(raw.dims());
    for (std::size_t i = 0; i < raw.size(); ++i)
        squashed[i] = p.response_scale * raw[i] + p.response_bias;
    const double loss = map_loss(squashed, label);
    const Tensor d_squash = map_loss_backward(squashed, label);
    d_raw = Tensor(raw.dims());
    double d_scale = 0.0, d_bias = 0.0;
    for (std::size_t i = 0; i < raw.size(); ++i) {
        d_raw[i] = p.response_scale * d_squash[i];
        d_scale += d_squash[i] * raw[i];
        d_bias += d_squash[i];
    }
    grads.response_scale += d_scale;
    grads.response_bias += d_bias;
    return loss;
}

} // namespace

double pair_loss_grads_stage1(const PairSample& pair, const SasNetParams& p,
                              double label_sigma, SasNetGrads& grads) {
    BilinearTrace tr;
    ResponseMap resp = bilinear_forward(pair.z, pair.x, p, &tr);
    const Tensor label = gaussian_label(resp.raw.dim(1), resp.raw.dim(2), label_sigma);
    Tensor d_raw;
    const double loss = response_loss(resp.raw, p, label, grads, d_raw);
    bilinear_backward(tr, p, d_raw, grads);
    return loss;
}

double pair_loss_grads_stage2(const PairSample& pair, const SasNetParams& p,
                              double label_sigma, SasNetGrads& grads) {
    if (pair.zs.empty())
        throw Error("stage-2 training needs the semantic patch in every sample");
    SasNetTrace tr;
    ResponseMap resp = sasnet_forward(pair.z, pair.zs, pair.x, p, &tr);
    const Tensor label = gaussian_label(resp.raw.dim(1), resp.raw.dim(2), label_sigma);
    Tensor d_raw;
    const double loss = response_loss(resp.raw, p, label, grads, d_raw);
    sasnet_backward(tr, p, d_raw, grads);
    return loss;
}

double feature_loss_grads_stage2(const FeatureSample& s, const SasNetParams& p,
                                 double label_sigma, SasNetGrads& grads) {
    AttentionTrace att;
    const Tensor weights = attention_forward(s.feat_zs, p, &att);
    const Tensor wz = channel_scale(s.feat_z, weights);
    const Tensor wx = channel_scale(s.feat_x, weights);
    const Tensor raw = xcorr(wz, wx);
    const Tensor label = gaussian_label(raw.dim(1), raw.dim(2), label_sigma);
    Tensor d_raw;
    const double loss = response_loss(raw, p, label, grads, d_raw);

    XcorrGrads xg = xcorr_backward(wz, wx, d_raw);
    ChannelScaleGrads zg = channel_scale_backward(s.feat_z, weights, xg.d_exemplar);
    ChannelScaleGrads xgs = channel_scale_backward(s.feat_x, weights, xg.d_instance);
    Tensor d_weights({kFeatureChannels});
    for (int c = 0; c < kFeatureChannels; ++c)
        d_weights[c] = zg.d_weights[c] + xgs.d_weights[c];
    attention_backward(att, s.feat_zs.dims(), p, d_weights, grads);
    return loss;
}

std::string checkpoint_name(int iter) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "params_iter%08d.sasn", iter);
    return buf;
}

std::string opt_state_name(int iter) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "params_iter%08d.opt.sasn", iter);
    return buf;
}

int find_latest_checkpoint(const std::filesystem::path& dir) {
    int best = -1;
    if (!std::filesystem::is_directory(dir)) return best;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (name.size() != 24 || name.rfind("params_iter", 0) != 0 ||
            name.substr(19) != ".sasn")
            continue;
        const std::string digits = name.substr(11, 8);
        if (digits.find_first_not_of("0123456789") != std::string::npos) continue;
        best = std::max(best, std::stoi(digits));
    }
    return best;
}

namespace {

std::vector<int> batch_indices(std::uint64_t seed, int iter, int n, int batch) {
    std::mt19937_64 rng(seed ^ (0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(iter + 1)));
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    const int take = std::min(batch, n);
    for (int i = 0; i < take; ++i) {
        std::uniform_int_distribution<int> pick(i, n - 1);
        std::swap(idx[i], idx[pick(rng)]);
    }
    std::vector<int> out(idx.begin(), idx.begin() + take);
    for (int i = take; i < batch; ++i) out.push_back(idx[i % take]); // batch > n
    return out;
}

struct Fast32Scope {
    bool previous;
    explicit Fast32Scope(bool on) : previous(blas::fast32()) { blas::set_fast32(on); }
    ~Fast32Scope() { blas::set_fast32(previous); }
};

// Shared driver for the three training paths. Batch members run on worker
// threads when more than one hardware thread is available; per-pair gradients
// land in per-slot buffers and are reduced in batch order, so the result does
// not depend on the thread count.
template <typename Sample, typename LossGradFn>
TrainResult run_training(const std::vector<Sample>& dataset, const SasNetParams& init,
                         const TrainConfig& cfg, const LossGradFn& loss_grad,
                         bool rmsprop, RmspropState* state, const ProgressFn& progress) {
    if (dataset.empty()) throw Error("training dataset is empty");
    if (cfg.batch_pairs < 1) throw Error("batch size must be >= 1");
    if (cfg.iterations < cfg.start_iteration)
        throw Error("iteration budget is below the resume point");

    Fast32Scope f32(cfg.fast32);
    TrainResult res;
    res.params = init;
    validate_params(res.params);

    RmspropState local_state;
    if (!state) {
        local_state = make_rmsprop_state();
        state = &local_state;
    }

    const double logged_lr = rmsprop ? cfg.lr_theta_s_stage2 : cfg.lr_stage1;
    std::ofstream log_file;
    if (!cfg.out_dir.empty()) {
        std::filesystem::create_directories(cfg.out_dir);
        const auto log_path = cfg.out_dir / "train_log.csv";
        const bool resume = cfg.start_iteration > 0 && std::filesystem::exists(log_path);
        log_file.open(log_path, resume ? std::ios::app : std::ios::trunc);
        if (!log_file) throw IoError("cannot open " + log_path.string());
        if (!resume) log_file << "iter,loss,grad_norm,lr\n";
    }

    const int workers =
        std::max(1, std::min({blas::threads(), cfg.batch_pairs,
                              static_cast<int>(std::thread::hardware_concurrency())}));
    std::vector<SasNetGrads> slot_grads;
    for (int w = 0; w < cfg.batch_pairs; ++w) slot_grads.push_back(make_grads());
    std::vector<double> slot_loss(static_cast<std::size_t>(cfg.batch_pairs), 0.0);

    SasNetGrads batch_grads = make_grads();

    for (int iter = cfg.start_iteration; iter < cfg.iterations; ++iter) {
        const std::vector<int> batch =
            batch_indices(cfg.seed, iter, static_cast<int>(dataset.size()), cfg.batch_pairs);

        auto run_slot = [&](int slot) {
            slot_grads[static_cast<std::size_t>(slot)].zero();
            slot_loss[static_cast<std::size_t>(slot)] =
                loss_grad(dataset[static_cast<std::size_t>(batch[slot])], res.params,
                          cfg.label_sigma, slot_grads[static_cast<std::size_t>(slot)]);
        };
        if (workers > 1) {
            std::vector<std::thread> pool;
            for (int w = 0; w < workers; ++w)
                pool.emplace_back([&, w] {
                    for (int slot = w; slot < static_cast<int>(batch.size()); slot += workers)
                        run_slot(slot);
                });
            for (auto& t : pool) t.join();
        } else {
            for (int slot = 0; slot < static_cast<int>(batch.size()); ++slot) run_slot(slot);
        }

        batch_grads.zero();
        double loss_sum = 0.0;
        for (std::size_t slot = 0; slot < batch.size(); ++slot) { // fixed reduction order
            batch_grads.add_scaled(slot_grads[slot], 1.0 / static_cast<double>(batch.size()));
            loss_sum += slot_loss[slot];
        }
        const double loss = loss_sum / static_cast<double>(batch.size());

        affine_readout_step(res.params, batch_grads, *state, cfg.affine_lr,
                            cfg.rmsprop_decay, cfg.rmsprop_epsilon);
        batch_grads.response_scale = 0.0; // consumed by the readout step
        batch_grads.response_bias = 0.0;
        if (rmsprop)
            rmsprop_step(res.params, batch_grads, *state, cfg.lr_theta_s_stage2,
                         cfg.lr_theta_att_stage2, cfg.rmsprop_decay, cfg.rmsprop_epsilon);
        else
            bgd_step(res.params, batch_grads, cfg.lr_stage1);

        const int done = iter + 1;
        const double gnorm = std::sqrt(batch_grads.squared_norm());
        res.log.push_back({done, loss, gnorm, logged_lr});

        const bool at_log = cfg.log_every > 0 &&
                            (done % cfg.log_every == 0 || done == cfg.iterations);
        if (at_log) {
            if (log_file.is_open())
                log_file << done << "," << loss << "," << gnorm << "," << logged_lr << "\n";
            if (progress) progress(done, loss);
        }
        if (!cfg.out_dir.empty() && cfg.checkpoint_every > 0 &&
            (done % cfg.checkpoint_every == 0 || done == cfg.iterations)) {
            save_params(res.params, cfg.out_dir / checkpoint_name(done));
            state->save(cfg.out_dir / opt_state_name(done));
        }
    }
    if (log_file.is_open()) log_file.flush();
    return res;
}

} // namespace

TrainResult train_stage1(const std::vector<PairSample>& dataset, const SasNetParams& init,
                         const TrainConfig& cfg, RmspropState* state,
                         const ProgressFn& progress) {
    return run_training(
        dataset, init, cfg,
        [](const PairSample& s, const SasNetParams& p, double sigma, SasNetGrads& g) {
            return pair_loss_grads_stage1(s, p, sigma, g);
        },
        false, state, progress);
}

TrainResult train_stage2(const std::vector<PairSample>& dataset, const SasNetParams& init,
                         const TrainConfig& cfg, RmspropState* state,
                         const ProgressFn& progress) {
    return run_training(
        dataset, init, cfg,
        [](const PairSample& s, const SasNetParams& p, double sigma, SasNetGrads& g) {
            return pair_loss_grads_stage2(s, p, sigma, g);
        },
        true, state, progress);
}

TrainResult train_stage2_features(const std::vector<FeatureSample>& dataset,
                                  const SasNetParams& init, const TrainConfig& cfg,
                                  RmspropState* state, const ProgressFn& progress) {
    return run_training(
        dataset, init, cfg,
        [](const FeatureSample& s, const SasNetParams& p, double sigma, SasNetGrads& g) {
            return feature_loss_grads_stage2(s, p, sigma, g);
        },
        true, state, progress);
}

} // namespace sasnet
