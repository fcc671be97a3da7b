#include "eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "net.hpp"
#include "ops.hpp"

namespace sasnet {

double iou(const BBox& a, const BBox& b) {
    const double ax0 = a.cx - a.w / 2.0, ax1 = a.cx + a.w / 2.0;
    const double ay0 = a.cy - a.h / 2.0, ay1 = a.cy + a.h / 2.0;
    const double bx0 = b.cx - b.w / 2.0, bx1 = b.cx + b.w / 2.0;
    const double by0 = b.cy - b.h / 2.0, by1 = b.cy + b.h / 2.0;
    const double iw = std::min(ax1, bx1) - std::max(ax0, bx0);
    const double ih = std::min(ay1, by1) - std::max(ay0, by0);
    if (iw <= 0.0 || ih <= 0.0) return 0.0;
    const double inter = iw * ih;
    const double uni = a.w * a.h + b.w * b.h - inter;
    return inter / uni;
}

double center_error(const BBox& a, const BBox& b) {
    return std::hypot(a.cx - b.cx, a.cy - b.cy);
}

Curve success_curve(const std::vector<double>& ious) {
    if (ious.empty()) throw Error("success_curve: no frames");
    Curve c;
    for (int i = 0; i <= 20; ++i) {
        const double t = i * 0.05;
        int n = 0;
        for (double v : ious)
            if (v > t) ++n;
        c.thresholds.push_back(t);
        c.values.push_back(static_cast<double>(n) / static_cast<double>(ious.size()));
    }
    return c;
}

Curve precision_curve(const std::vector<double>& errors) {
    if (errors.empty()) throw Error("precision_curve: no frames");
    Curve c;
    for (int t = 0; t <= 50; ++t) {
        int n = 0;
        for (double v : errors)
            if (v < t) ++n;
        c.thresholds.push_back(t);
        c.values.push_back(static_cast<double>(n) / static_cast<double>(errors.size()));
    }
    return c;
}

double auc_trapezoid(const Curve& success) {
    double acc = 0.0;
    for (std::size_t i = 1; i < success.thresholds.size(); ++i)
        acc += 0.5 * (success.values[i] + success.values[i - 1]) *
               (success.thresholds[i] - success.thresholds[i - 1]);
    return acc;
}

EvalReport evaluate(const std::vector<BBox>& results, const std::vector<BBox>& gt,
                    double fps) {
    if (results.size() != gt.size())
        throw Error("evaluate: " + std::to_string(results.size()) + " result rows vs " +
                    std::to_string(gt.size()) + " ground-truth rows");
    if (results.empty()) throw Error("evaluate: no frames");
    EvalReport r;
    for (std::size_t i = 0; i < results.size(); ++i) {
        r.ious.push_back(iou(results[i], gt[i]));
        r.center_errors.push_back(center_error(results[i], gt[i]));
    }
    r.success = success_curve(r.ious);
    r.precision = precision_curve(r.center_errors);
    r.auc = auc_trapezoid(r.success);
    r.precision_at_20 = r.precision.values[20];
    r.fps = fps;
    return r;
}

void write_report_csv(const std::filesystem::path& path, const EvalReport& report) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << "section,frame,iou,center_error\n";
    for (std::size_t i = 0; i < report.ious.size(); ++i)
        out << "per-frame," << (i + 1) << "," << report.ious[i] << ","
            << report.center_errors[i] << "\n";
    out << "section,threshold,value\n";
    for (std::size_t i = 0; i < report.success.thresholds.size(); ++i)
        out << "success," << report.success.thresholds[i] << "," << report.success.values[i]
            << "\n";
    for (std::size_t i = 0; i < report.precision.thresholds.size(); ++i)
        out << "precision," << report.precision.thresholds[i] << ","
            << report.precision.values[i] << "\n";
    out << "section,auc,precision_at_20,fps\n";
    out << "summary," << report.auc << "," << report.precision_at_20 << "," << report.fps
        << "\n";
    if (!out) throw IoError("short write to " + path.string());
}

void write_curve_dat(const std::filesystem::path& path, const Curve& curve) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << "# threshold value\n";
    for (std::size_t i = 0; i < curve.thresholds.size(); ++i)
        out << curve.thresholds[i] << " " << curve.values[i] << "\n";
}

std::uint64_t xcorr_flops(int channels, int ex_h, int ex_w, int in_h, int in_w) {
    if (channels < 1 || ex_h < 1 || ex_w < 1 || ex_h > in_h || ex_w > in_w)
        throw ShapeError("xcorr_flops: invalid shapes");
    const std::uint64_t out_h = static_cast<std::uint64_t>(in_h - ex_h + 1);
    const std::uint64_t out_w = static_cast<std::uint64_t>(in_w - ex_w + 1);
    return static_cast<std::uint64_t>(channels) * ex_h * ex_w * out_h * out_w;
}

std::vector<BenchRow> bench_xcorr(const std::vector<double>& aspects, int repeats) {
    if (repeats < 10) throw Error("bench_xcorr needs at least 10 repeats");
    const int in_side = kSemanticFeatSide;
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    Tensor instance({kFeatureChannels, in_side, in_side});
    for (std::size_t i = 0; i < instance.size(); ++i) instance[i] = uni(rng);

    auto run_case = [&](int fh, int fw) {
        Tensor ex({kFeatureChannels, fh, fw});
        for (std::size_t i = 0; i < ex.size(); ++i) ex[i] = uni(rng);
        for (int k = 0; k < 3; ++k) xcorr(ex, instance); // warmup
        std::vector<double> times;
        times.reserve(static_cast<std::size_t>(repeats));
        for (int k = 0; k < repeats; ++k) {
            const auto t0 = std::chrono::steady_clock::now();
            const Tensor r = xcorr(ex, instance);
            const auto t1 = std::chrono::steady_clock::now();
            times.push_back(std::chrono::duration<double>(t1 - t0).count() +
                            (r[0] == 12345.0 ? 1e-18 : 0.0)); // keep the call alive
        }
        std::sort(times.begin(), times.end());
        return times[times.size() / 2];
    };

    const int square = 6;
    const double square_time = run_case(square, square);
    const std::uint64_t square_flops = xcorr_flops(kFeatureChannels, square, square, in_side, in_side);

    std::vector<BenchRow> rows;
    for (double a : aspects) {
        if (!(a >= 1.0)) throw Error("bench aspects must be >= 1");
        const int fw = std::max(1, static_cast<int>(std::lround(square / a)));
        BenchRow row;
        row.aspect = a;
        row.feat_h = square;
        row.feat_w = fw;
        row.flops = xcorr_flops(kFeatureChannels, square, fw, in_side, in_side);
        row.seconds = fw == square ? square_time : run_case(square, fw);
        row.flop_ratio = static_cast<double>(square_flops) / static_cast<double>(row.flops);
        row.time_ratio = square_time / row.seconds;
        rows.push_back(row);
    }
    return rows;
}

std::string bench_table(const std::vector<BenchRow>& rows) {
    std::ostringstream out;
    out << "aspect feat_h feat_w flops time_s flop_ratio time_ratio\n";
    for (const BenchRow& r : rows) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%.2f %d %d %llu %.6f %.4f %.4f\n", r.aspect,
                      r.feat_h, r.feat_w, static_cast<unsigned long long>(r.flops),
                      r.seconds, r.flop_ratio, r.time_ratio);
        out << buf;
    }
    return out.str();
}

} // namespace sasnet
