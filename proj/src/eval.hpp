#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "crops.hpp"

namespace sasnet {

// Intersection area over union area of two boxes; 0 when disjoint.
double iou(const BBox& a, const BBox& b);

// Euclidean distance between box centers, pixels.
double center_error(const BBox& a, const BBox& b);

struct Curve {
    std::vector<double> thresholds;
    std::vector<double> values;
};

// Success: fraction of frames with iou > t, thresholds 0.00, 0.05, ..., 1.00.
Curve success_curve(const std::vector<double>& ious);
// Precision: fraction of frames with error < t, thresholds 0, 1, ..., 50 px.
Curve precision_curve(const std::vector<double>& errors);
// Trapezoidal integral of the success curve over [0, 1].
double auc_trapezoid(const Curve& success);

struct EvalReport {
    std::vector<double> ious;
    std::vector<double> center_errors;
    Curve success;
    Curve precision;
    double auc = 0.0;
    double precision_at_20 = 0.0;
    double fps = 0.0; // excludes initialization; 0 when unknown
};

EvalReport evaluate(const std::vector<BBox>& results, const std::vector<BBox>& gt,
                    double fps = 0.0);

// Sectioned CSV: per-frame, success, precision, summary.
void write_report_csv(const std::filesystem::path& path, const EvalReport& report);
// Optional gnuplot-style two-column .dat files for the curves.
void write_curve_dat(const std::filesystem::path& path, const Curve& curve);

// Multiply count of one cross-correlation: C*h*w*H'*W'.
std::uint64_t xcorr_flops(int channels, int ex_h, int ex_w, int in_h, int in_w);

struct BenchRow {
    double aspect;
    int feat_h, feat_w;
    std::uint64_t flops;
    double seconds;     // median wall time
    double flop_ratio;  // square / this
    double time_ratio;  // square / this
};

// Median xcorr wall time per exemplar-feature aspect ratio over a 128x22x22
// instance, with warmup. Aspect a maps the 6x6 square feature to 6 x round(6/a).
std::vector<BenchRow> bench_xcorr(const std::vector<double>& aspects, int repeats);
std::string bench_table(const std::vector<BenchRow>& rows);

} // namespace sasnet
