#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "net.hpp"
#include "tensor.hpp"

namespace sasnet {

// Signed Gaussian label: Y(i,j) = 2*exp(-d^2 / (2 sigma^2)) - 1, d measured in
// cells from the center ((h-1)/2, (w-1)/2). Center 1, periphery -> -1.
Tensor gaussian_label(int h, int w, double sigma);

// log(1 + exp(-y*r)), evaluated in softplus form so large |y*r| cannot
// overflow.
double pointwise_loss(double r_val, double y_val);

// Mean pointwise loss over all cells; shapes must match.
double map_loss(const Tensor& response, const Tensor& label);
Tensor map_loss_backward(const Tensor& response, const Tensor& label);

struct TrainConfig {
    int stage = 1;
    int batch_pairs = 4;
    double lr_stage1 = 1e-3;
    double lr_theta_s_stage2 = 1e-4;
    double lr_theta_att_stage2 = 1e-3;
    double rmsprop_decay = 0.9;
    double rmsprop_epsilon = 1e-8;
    double affine_lr = 0.02; // adaptive step for the two readout scalars
    int iterations = 1000;
    std::uint64_t seed = 0;
    double label_sigma = 2.0;
    int log_every = 10;
    int checkpoint_every = 0; // 0 = no checkpoints
    int start_iteration = 0;  // resume point
    bool fast32 = false;      // single-precision GEMM internals
    std::filesystem::path out_dir; // log + checkpoints; empty = in-memory only
};

// theta <- theta - lr * g over a flat range.
void bgd_update(double* param, const double* grad, std::size_t n, double lr);

// v <- rho*v + (1-rho)*g^2; theta <- theta - lr*g/(sqrt(v)+eps).
void rmsprop_update(double* param, const double* grad, double* v, std::size_t n,
                    double lr, double rho, double eps);

// Stage-1 step: updates the theta_s group (conv tensors + response affine),
// leaves theta_att untouched. Throws on non-finite gradients.
void bgd_step(SasNetParams& p, const SasNetGrads& g, double lr);

struct RmspropState {
    SasNetGrads v; // running mean square, same shapes as the gradients
    double affine_v_scale = 0.0; // readout-scalar accumulators (both stages)
    double affine_v_bias = 0.0;

    void save(const std::filesystem::path& path) const;
    static RmspropState load(const std::filesystem::path& path);
};
RmspropState make_rmsprop_state();

// Joint stage-2 step: backbone group at lr_theta_s, attention at lr_theta_att.
void rmsprop_step(SasNetParams& p, const SasNetGrads& g, RmspropState& st,
                  double lr_theta_s, double lr_theta_att, double rho, double eps);

// Adaptive update of response_scale/response_bias (scale in log space). The
// raw-scale gradient is orders of magnitude larger than any weight gradient,
// so the readout scalars get their own normalized step in both stages.
void affine_readout_step(SasNetParams& p, const SasNetGrads& g, RmspropState& st,
                         double lr, double rho, double eps);

// One training sample. zs is empty for stage-1 pairs.
struct PairSample {
    Tensor z, zs, x;
};

// Stage-2 sample expressed directly at the backbone-feature level; used by the
// planted-channel attention harness where a single informative feature channel
// must be constructed.
struct FeatureSample {
    Tensor feat_z, feat_zs, feat_x;
};

// Per-pair loss and gradient of the stage-1 (bilinear) objective. Exposed so
// batch-linearity can be checked against the batching done by train_stage1.
double pair_loss_grads_stage1(const PairSample& pair, const SasNetParams& p,
                              double label_sigma, SasNetGrads& grads);
double pair_loss_grads_stage2(const PairSample& pair, const SasNetParams& p,
                              double label_sigma, SasNetGrads& grads);
double feature_loss_grads_stage2(const FeatureSample& s, const SasNetParams& p,
                                 double label_sigma, SasNetGrads& grads);

struct TrainLogRow {
    int iter;
    double loss;
    double grad_norm;
    double lr;
};

struct TrainResult {
    SasNetParams params;
    std::vector<TrainLogRow> log;
};

using ProgressFn = std::function<void(int iter, double loss)>;

// Batch Gradient Descent over bilinear responses (batch mean of per-pair
// gradients); the readout scalars use affine_readout_step, so `state` carries
// their accumulators across a resume. Deterministic given seed; batch
// membership at iteration k depends only on (seed, k), so resumed runs replay
// the schedule.
TrainResult train_stage1(const std::vector<PairSample>& dataset,
                         const SasNetParams& init, const TrainConfig& cfg,
                         RmspropState* state = nullptr,
                         const ProgressFn& progress = nullptr);

// Joint RMSprop over full SAS-Net responses, per-group learning rates.
TrainResult train_stage2(const std::vector<PairSample>& dataset,
                         const SasNetParams& init, const TrainConfig& cfg,
                         RmspropState* state = nullptr,
                         const ProgressFn& progress = nullptr);

// Stage-2 objective over precomputed features (attention + response affine are
// the reachable parameters).
TrainResult train_stage2_features(const std::vector<FeatureSample>& dataset,
                                  const SasNetParams& init, const TrainConfig& cfg,
                                  RmspropState* state = nullptr,
                                  const ProgressFn& progress = nullptr);

std::string checkpoint_name(int iter);                 // params_iter%08d.sasn
std::string opt_state_name(int iter);                  // params_iter%08d.opt.sasn
int find_latest_checkpoint(const std::filesystem::path& dir); // -1 if none

} // namespace sasnet
