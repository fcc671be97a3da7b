#pragma once

#include <filesystem>
#include <vector>

#include "crops.hpp"
#include "net.hpp"

namespace sasnet {

struct TrackConfig {
    std::vector<double> scale_factors{1.0 / 1.04, 1.0, 1.04};
    double scale_penalty = 0.975; // multiplies non-unit-scale peaks
    double scale_damping = 0.6;   // new = d*old + (1-d)*old*f
    int upsample_factor = 16;
    int total_stride = kTotalStride;
    bool hann_window = false; // off by default
    double hann_weight = 0.3;
};

void validate_track_config(const TrackConfig& c); // must contain scale 1.0

// Exemplar feature and channel weights are computed once at init and never
// change afterwards; per-frame work touches only the instance branch.
struct TrackerState {
    Tensor exemplar_feat;    // phi(Z), frozen
    Tensor channel_weights;  // 128, frozen
    Tensor weighted_exemplar; // channel_scale(phi(Z), weights), frozen
    BBox box;
    double scale_state = 1.0;
    TrackConfig config;
};

TrackerState tracker_init(const Frame& first_frame, const BBox& init_box,
                          const SasNetParams& params, const TrackConfig& config);

struct StepResult {
    BBox box;
    double score; // activated peak of the selected scale
};

StepResult tracker_step(TrackerState& state, const Frame& frame,
                        const SasNetParams& params);

struct TrackEntry {
    BBox box;
    double score;
    double seconds; // wall clock of this step (0 for frame 1)
};

// Frame 1 reports the init box with score 1.0; later frames run tracker_step.
// A missing or corrupt frame aborts with its index.
std::vector<TrackEntry> track_sequence(const std::vector<std::filesystem::path>& frames,
                                       const BBox& init_box, const SasNetParams& params,
                                       const TrackConfig& config);

// CSV "frame,x,y,w,h,score", top-left-anchored boxes, frame starting at 1.
void write_results_csv(const std::filesystem::path& path,
                       const std::vector<TrackEntry>& entries);
struct ResultRow {
    BBox box;
    double score;
};
std::vector<ResultRow> read_results_csv(const std::filesystem::path& path);

} // namespace sasnet
