#pragma once

#include <array>
#include <filesystem>
#include <vector>

#include "tensor.hpp"

namespace sasnet {

// Axis-aligned box in source-image pixels, center-anchored. Continuous image
// coordinates: pixel (ix, iy) covers [ix, ix+1) x [iy, iy+1).
struct BBox {
    double cx = 0.0, cy = 0.0;
    double w = 0.0, h = 0.0;

    double long_side() const { return w > h ? w : h; }
};

BBox bbox_from_tl(double x, double y, double w, double h);
void bbox_to_tl(const BBox& b, double& x, double& y); // top-left corner

struct Frame {
    int width = 0, height = 0;
    Tensor rgb;                          // 3 x H x W, values in [0,1]
    std::array<double, 3> mean_color{}; // per-channel mean
};

Frame frame_from_rgb(Tensor rgb);

// P6 PPM, 8-bit, maxval 255. Values normalized to [0,1] by /255.
Frame load_frame(const std::filesystem::path& path);
void save_frame_ppm(const std::filesystem::path& path, const Tensor& rgb);

// Bilinear resample of the axis-aligned source window (cx, cy, src_w, src_h)
// onto an out_w x out_h grid. Samples outside the frame read the frame's mean
// color. The window center maps to the output center.
Tensor sample_window(const Frame& frame, double cx, double cy, double src_w,
                     double src_h, int out_w, int out_h);

// Exemplar Z: the box scaled so its long side is 127 px; if the scaled short
// side would fall below 87 px, the crop is symmetrically extended with
// surrounding context (at the same scale) until it is 87.
Tensor make_exemplar(const Frame& frame, const BBox& box);

// Square context crop of source side (255/127) * long_side * scale_mult,
// centered on the box, resized to 255 x 255.
Tensor make_context_crop(const Frame& frame, const BBox& box, double scale_mult = 1.0);

// Semantic patch Z_s: the first-frame context crop.
Tensor make_semantic(const Frame& first_frame, const BBox& init_box);

// Side of the square context-crop source window for a box.
double context_source_side(const BBox& box);

// A directory of zero-padded numbered PPM frames plus groundtruth.txt
// ("x,y,w,h" per line, top-left anchored, reals allowed).
struct Sequence {
    std::vector<std::filesystem::path> frame_paths;
    std::vector<BBox> groundtruth;
};

Sequence load_sequence(const std::filesystem::path& dir);
std::vector<BBox> load_groundtruth(const std::filesystem::path& file);
void write_groundtruth(const std::filesystem::path& file, const std::vector<BBox>& boxes);

} // namespace sasnet
