#include "tensor.hpp"

namespace sasnet {

OutSize out_size(const ShapeSpec& spec) {
    if (spec.h_stride < 1 || spec.w_stride < 1)
        throw ShapeError("stride must be >= 1");
    if (spec.h_kernel < 1 || spec.w_kernel < 1)
        throw ShapeError("kernel extent must be >= 1");
    if (spec.h_pad < 0 || spec.w_pad < 0)
        throw ShapeError("padding must be >= 0");
    if (spec.h_in + 2 * spec.h_pad < spec.h_kernel || spec.w_in + 2 * spec.w_pad < spec.w_kernel)
        throw ShapeError("window " + std::to_string(spec.h_kernel) + "x" + std::to_string(spec.w_kernel) +
                         " exceeds padded input " + std::to_string(spec.h_in + 2 * spec.h_pad) + "x" +
                         std::to_string(spec.w_in + 2 * spec.w_pad));

    OutSize out;
    out.h = (spec.h_in + 2 * spec.h_pad - spec.h_kernel) / spec.h_stride + 1;
    out.w = (spec.w_in + 2 * spec.w_pad - spec.w_kernel) / spec.w_stride + 1;
    if (out.h < 1 || out.w < 1)
        throw ShapeError("degenerate output shape " + std::to_string(out.h) + "x" + std::to_string(out.w));
    return out;
}

} // namespace sasnet
