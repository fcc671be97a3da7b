#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "crops.hpp"
#include "train.hpp"

namespace sasnet {

// Knobs for the sprite renderer. Targets are textured rectangles/ellipses on
// cluttered backgrounds; textures move rigidly with the sprite.
struct SynthOptions {
    int frame_w = 320;
    int frame_h = 240;
    double min_target = 44.0;  // long side, px
    double max_target = 90.0;
    double aspect_min = 0.5;   // w/h
    double aspect_max = 2.0;
    double speed_min = 1.0;    // px/frame; equal bounds pin the speed
    double speed_max = 3.0;
    int n_distractors = 0;
    double occluder_prob = 0.0;
    double texture_amp = 0.35;
    double noise_amp = 0.015;  // per-pixel sensor noise
    double bg_noise = 0.18;    // background value-noise amplitude
    int bg_blobs = 18;
};

// Training pairs: (Z, Z_s, X) crops from two renders of the same sprite over
// different clutter; the target sits at the instance-crop center.
std::vector<PairSample> synth_pairs(std::uint64_t seed, int n, const SynthOptions& opt);

// Writes pair crops as PPM files (pair_%06d_{z,zs,x}.ppm) plus an index.csv.
void write_pairs(const std::filesystem::path& dir, const std::vector<PairSample>& pairs);
std::vector<PairSample> load_pairs(const std::filesystem::path& dir);

// Frame directories seq_%04d/000001.ppm... plus groundtruth.txt. Sprites move
// at constant velocity (speed drawn from [speed_min, speed_max]).
void synth_sequences(std::uint64_t seed, int n_seq, int n_frames, const SynthOptions& opt,
                     const std::filesystem::path& out_dir);

// One rendered frame + its ground-truth box, for in-memory harnesses.
struct SynthFrame {
    Frame frame;
    BBox box;
};
std::vector<SynthFrame> synth_sequence_frames(std::uint64_t seed, int n_frames,
                                              const SynthOptions& opt);

// Feature-level stage-2 dataset: channel `informative` of phi(Z)/phi(X)
// carries a matched pattern centered in the instance feature; every other
// channel is independent noise in both branches.
std::vector<FeatureSample> planted_channel_features(std::uint64_t seed, int n,
                                                    int informative_channel);

} // namespace sasnet
