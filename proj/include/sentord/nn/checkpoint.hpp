#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "sentord/nn/parameters.hpp"

namespace sentord::nn {

/// Binary checkpoint layout (all integers little-endian):
///
///   8 bytes   magic "SORDCKPT"
///   u32       format version (kCheckpointVersion)
///   u64       header length, then that many bytes of UTF-8 JSON; the header
///             carries "dtype" ("f32" or "f64") plus caller fields
///   u64       tensor count
///   per tensor: u32 name length, name bytes, u32 rank, u64 dims[rank],
///             product(dims) little-endian IEEE floats of the header dtype
///
/// 64-bit models and training states are stored as f64 so a reload or resume
/// continues bit-exactly; 32-bit ones as f32.
inline constexpr char kCheckpointMagic[8] = {'S', 'O', 'R', 'D', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType { f32, f64 };

struct NamedTensor {
  std::string name;
  std::vector<std::uint64_t> shape;
  std::vector<double> data;
};

struct Checkpoint {
  nlohmann::json header = nlohmann::json::object();
  DType dtype = DType::f32;
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Throws InputError on a bad magic, unknown version, or truncated file.
Checkpoint read_checkpoint(const std::filesystem::path& path);

template <typename S>
void append_tensors(Checkpoint& ckpt, const ParameterSet<S>& params, const std::string& prefix = "");

/// Copies tensors named prefix + parameter name into `params`. Throws
/// InputError when a tensor is missing or its shape disagrees.
template <typename S>
void load_tensors(const Checkpoint& ckpt, ParameterSet<S>& params, const std::string& prefix = "");

}  // namespace sentord::nn
