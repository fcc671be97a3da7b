#include "crops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>

#include "net.hpp"

namespace sasnet {

BBox bbox_from_tl(double x, double y, double w, double h) {
    return {x + w / 2.0, y + h / 2.0, w, h};
}

void bbox_to_tl(const BBox& b, double& x, double& y) {
    x = b.cx - b.w / 2.0;
    y = b.cy - b.h / 2.0;
}

Frame frame_from_rgb(Tensor rgb) {
    if (rgb.rank() != 3 || rgb.dim(0) != 3)
        throw ShapeError("frame must be 3 x H x W, got " + rgb.shape_str());
    Frame f;
    f.height = rgb.dim(1);
    f.width = rgb.dim(2);
    const std::size_t plane = static_cast<std::size_t>(f.height) * f.width;
    for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        const double* p = rgb.data() + c * plane;
        for (std::size_t i = 0; i < plane; ++i) acc += p[i];
        f.mean_color[c] = acc / static_cast<double>(plane);
    }
    f.rgb = std::move(rgb);
    return f;
}

Frame load_frame(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());

    auto next_token = [&in, &path]() {
        std::string tok;
        int ch;
        while ((ch = in.get()) != EOF) {
            if (ch == '#') { // comment to end of line
                while ((ch = in.get()) != EOF && ch != '\n') {}
                continue;
            }
            if (std::isspace(ch)) {
                if (!tok.empty()) break;
                continue;
            }
            tok.push_back(static_cast<char>(ch));
        }
        if (tok.empty()) throw FormatError(path.string() + ": truncated PPM header");
        return tok;
    };

    const std::string magic = next_token();
    if (magic != "P6")
        throw FormatError(path.string() + ": unsupported format '" + magic +
                          "', expected binary PPM (P6)");
    const int w = std::stoi(next_token());
    const int h = std::stoi(next_token());
    const int maxval = std::stoi(next_token());
    if (w < 1 || h < 1) throw FormatError(path.string() + ": invalid PPM dimensions");
    if (maxval != 255)
        throw FormatError(path.string() + ": unsupported maxval " + std::to_string(maxval));

    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(w) * h * 3);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
        throw FormatError(path.string() + ": truncated PPM pixel data");

    Tensor rgb({3, h, w});
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (std::size_t i = 0; i < plane; ++i)
        for (int c = 0; c < 3; ++c)
            rgb[c * plane + i] = bytes[i * 3 + c] / 255.0;
    return frame_from_rgb(std::move(rgb));
}

void save_frame_ppm(const std::filesystem::path& path, const Tensor& rgb) {
    if (rgb.rank() != 3 || rgb.dim(0) != 3)
        throw ShapeError("PPM writer expects 3 x H x W, got " + rgb.shape_str());
    const int h = rgb.dim(1), w = rgb.dim(2);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << "P6\n" << w << " " << h << "\n255\n";
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    std::vector<std::uint8_t> bytes(plane * 3);
    for (std::size_t i = 0; i < plane; ++i)
        for (int c = 0; c < 3; ++c) {
            const double v = std::clamp(rgb[c * plane + i], 0.0, 1.0);
            bytes[i * 3 + c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
        }
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + path.string());
}

namespace {

inline double lerp(double a, double b, double t) { return a + t * (b - a); }

// Bilinear sample at continuous coordinate (x, y); pixel centers sit at
// (ix + 0.5, iy + 0.5). Out-of-frame taps read the mean color.
inline double sample_channel(const double* plane, int w, int h, double mean, double x,
                             double y) {
    const double u = x - 0.5, v = y - 0.5;
    const int ix = static_cast<int>(std::floor(u));
    const int iy = static_cast<int>(std::floor(v));
    const double fx = u - ix, fy = v - iy;

    auto tap = [&](int px, int py) {
        if (px < 0 || px >= w || py < 0 || py >= h) return mean;
        return plane[static_cast<std::size_t>(py) * w + px];
    };
    const double top = lerp(tap(ix, iy), tap(ix + 1, iy), fx);
    const double bot = lerp(tap(ix, iy + 1), tap(ix + 1, iy + 1), fx);
    return lerp(top, bot, fy);
}

} // namespace

Tensor sample_window(const Frame& frame, double cx, double cy, double src_w,
                     double src_h, int out_w, int out_h) {
    if (out_w < 1 || out_h < 1 || src_w <= 0.0 || src_h <= 0.0)
        throw ShapeError("sample_window: degenerate window");
    Tensor out({3, out_h, out_w});
    const double sx = src_w / out_w, sy = src_h / out_h;
    const double x0 = cx - src_w / 2.0, y0 = cy - src_h / 2.0;
    const std::size_t plane = static_cast<std::size_t>(frame.height) * frame.width;
    const std::size_t oplane = static_cast<std::size_t>(out_h) * out_w;
    for (int c = 0; c < 3; ++c) {
        const double* src = frame.rgb.data() + c * plane;
        double* dst = out.data() + c * oplane;
        for (int oy = 0; oy < out_h; ++oy) {
            const double yc = y0 + (oy + 0.5) * sy;
            for (int ox = 0; ox < out_w; ++ox) {
                const double xc = x0 + (ox + 0.5) * sx;
                dst[static_cast<std::size_t>(oy) * out_w + ox] =
                    sample_channel(src, frame.width, frame.height, frame.mean_color[c], xc, yc);
            }
        }
    }
    return out;
}

Tensor make_exemplar(const Frame& frame, const BBox& box) {
    if (box.w <= 0.0 || box.h <= 0.0)
        throw ShapeError("exemplar box must have positive extents");
    const double long_side = box.long_side();
    const double r = static_cast<double>(kExemplarSide) / long_side;
    int short_out = static_cast<int>(std::lround(std::min(box.w, box.h) * r));
    double src_w = box.w, src_h = box.h;
    const bool wide = box.w >= box.h;
    if (short_out < kMinBackboneInput) {
        // extend the short axis with surrounding context at the same scale
        short_out = kMinBackboneInput;
        if (wide)
            src_h = kMinBackboneInput / r;
        else
            src_w = kMinBackboneInput / r;
    }
    const int out_w = wide ? kExemplarSide : short_out;
    const int out_h = wide ? short_out : kExemplarSide;
    return sample_window(frame, box.cx, box.cy, src_w, src_h, out_w, out_h);
}

double context_source_side(const BBox& box) {
    return static_cast<double>(kInstanceSide) / kExemplarSide * box.long_side();
}

Tensor make_context_crop(const Frame& frame, const BBox& box, double scale_mult) {
    if (box.w <= 0.0 || box.h <= 0.0)
        throw ShapeError("context box must have positive extents");
    const double s = context_source_side(box) * scale_mult;
    return sample_window(frame, box.cx, box.cy, s, s, kInstanceSide, kInstanceSide);
}

Tensor make_semantic(const Frame& first_frame, const BBox& init_box) {
    return make_context_crop(first_frame, init_box);
}

std::vector<BBox> load_groundtruth(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw IoError("cannot open " + file.string());
    std::vector<BBox> boxes;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        std::istringstream ss(line);
        double v[4];
        char comma;
        for (int i = 0; i < 4; ++i) {
            if (!(ss >> v[i]))
                throw FormatError(file.string() + ":" + std::to_string(lineno) +
                                  ": expected x,y,w,h");
            if (i < 3 && !(ss >> comma))
                throw FormatError(file.string() + ":" + std::to_string(lineno) +
                                  ": expected x,y,w,h");
        }
        if (v[2] <= 0.0 || v[3] <= 0.0)
            throw FormatError(file.string() + ":" + std::to_string(lineno) +
                              ": box extents must be positive");
        boxes.push_back(bbox_from_tl(v[0], v[1], v[2], v[3]));
    }
    return boxes;
}

void write_groundtruth(const std::filesystem::path& file, const std::vector<BBox>& boxes) {
    std::ofstream out(file, std::ios::trunc);
    if (!out) throw IoError("cannot open " + file.string() + " for writing");
    out.precision(6);
    out << std::fixed;
    for (const BBox& b : boxes) {
        double x, y;
        bbox_to_tl(b, x, y);
        out << x << "," << y << "," << b.w << "," << b.h << "\n";
    }
    if (!out) throw IoError("short write to " + file.string());
}

Sequence load_sequence(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir))
        throw IoError(dir.string() + " is not a directory");
    Sequence seq;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.path().extension() == ".ppm") seq.frame_paths.push_back(entry.path());
    }
    std::sort(seq.frame_paths.begin(), seq.frame_paths.end());
    if (seq.frame_paths.empty())
        throw IoError(dir.string() + " contains no .ppm frames");
    const auto gt = dir / "groundtruth.txt";
    if (std::filesystem::exists(gt)) seq.groundtruth = load_groundtruth(gt);
    return seq;
}

} // namespace sasnet
