#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "errors.hpp"

namespace sasnet {

// Dense real tensor, rank 0..4, row-major with the last extent fastest.
// Rank-3 tensors are (channels, height, width); rank-4 adds a leading
// output-channel extent for kernel stacks. Rank 0 is a scalar.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> dims) : dims_(std::move(dims)) {
        std::size_t n = 1;
        for (int d : dims_) {
            if (d < 1)
                throw ShapeError("tensor extent must be >= 1, got " + std::to_string(d));
            n *= static_cast<std::size_t>(d);
        }
        data_.assign(n, 0.0);
    }

    static Tensor scalar(double v) {
        Tensor t;
        t.data_.assign(1, v);
        return t;
    }

    static Tensor full(std::vector<int> dims, double v) {
        Tensor t(std::move(dims));
        for (double& x : t.data_) x = v;
        return t;
    }

    int rank() const { return static_cast<int>(dims_.size()); }
    const std::vector<int>& dims() const { return dims_; }
    int dim(int i) const { return dims_[static_cast<std::size_t>(i)]; }
    bool empty() const { return data_.empty(); }
    std::size_t size() const { return data_.size(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // (c, y, x) access for rank-3 tensors.
    double& at(int c, int y, int x) {
        return data_[(static_cast<std::size_t>(c) * dims_[1] + y) * dims_[2] + x];
    }
    double at(int c, int y, int x) const {
        return data_[(static_cast<std::size_t>(c) * dims_[1] + y) * dims_[2] + x];
    }

    // (o, c, y, x) access for rank-4 kernel stacks.
    double& at(int o, int c, int y, int x) {
        return data_[((static_cast<std::size_t>(o) * dims_[1] + c) * dims_[2] + y) * dims_[3] + x];
    }
    double at(int o, int c, int y, int x) const {
        return data_[((static_cast<std::size_t>(o) * dims_[1] + c) * dims_[2] + y) * dims_[3] + x];
    }

    bool same_shape(const Tensor& o) const { return dims_ == o.dims_; }

    std::string shape_str() const {
        std::string s = "[";
        for (std::size_t i = 0; i < dims_.size(); ++i) {
            if (i) s += "x";
            s += std::to_string(dims_[i]);
        }
        return s + "]";
    }

private:
    std::vector<int> dims_;
    std::vector<double> data_;
};

// Per-axis geometry of a sliding-window operation.
struct ShapeSpec {
    int h_in = 0, w_in = 0;
    int h_kernel = 1, w_kernel = 1;
    int h_stride = 1, w_stride = 1;
    int h_pad = 0, w_pad = 0;
};

struct OutSize {
    int h = 0, w = 0;
};

// floor((in + 2*pad - kernel)/stride) + 1 per axis. Throws ShapeError on
// invalid specs or when either output extent would be < 1.
OutSize out_size(const ShapeSpec& spec);

} // namespace sasnet
