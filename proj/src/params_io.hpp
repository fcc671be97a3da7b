#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "net.hpp"
#include "tensor.hpp"

namespace sasnet {

// Little-endian container: magic "SASN", version u32 = 1, tensor count u32,
// then per tensor: name length u16, UTF-8 name, rank u8, extents u32 each,
// data as IEEE-754 binary64 row-major.
struct NamedTensor {
    std::string name;
    std::vector<int> dims; // empty = scalar
    std::vector<double> data;
};

void write_tensor_file(const std::filesystem::path& path,
                       const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_tensor_file(const std::filesystem::path& path);

// Canonical tensor names: conv1.w, conv1.b, ..., conv5.b, att.w,
// response.scale, response.bias. Round trips are bit-exact.
void save_params(const SasNetParams& p, const std::filesystem::path& path);
SasNetParams load_params(const std::filesystem::path& path);

} // namespace sasnet
