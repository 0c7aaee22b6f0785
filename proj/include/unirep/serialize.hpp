#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "unirep/tensor.hpp"

namespace unirep {

// Named-tensor checkpoint. Little-endian binary layout:
//   magic "URLD" | u32 version | u64 count
//   per tensor: u32 name length | name bytes | u32 rank | u64 dims[rank]
//   then raw float64 payloads in manifest order.
// Round-trips are bit-exact. Entries are written in the order given.
inline constexpr std::uint32_t kCheckpointVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

void save_tensors(const std::filesystem::path& path, const NamedTensors& entries);
NamedTensors load_tensors(const std::filesystem::path& path, bool requires_grad = false);

// Feature-matrix file: text header line "n d\n" followed by n*d little-endian
// float64 values.
void write_feature_matrix(const std::filesystem::path& path, const Tensor& feats);
Tensor read_feature_matrix(const std::filesystem::path& path);

// Raw little-endian payload helpers for dataset directories.
void write_f64_file(const std::filesystem::path& path, std::span<const double> values);
std::vector<double> read_f64_file(const std::filesystem::path& path);
void write_i32_file(const std::filesystem::path& path, std::span<const int> values);
std::vector<int> read_i32_file(const std::filesystem::path& path);

}  // namespace unirep
