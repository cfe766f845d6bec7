#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "derm/autodiff/tensor.hpp"

namespace derm::ckpt {

inline constexpr std::uint32_t kFormatVersion = 1;

/// Named tensors plus the configuration text that produced them.
struct Checkpoint {
  std::string config_echo;
  std::map<std::string, ad::TensorD> tensors;
};

/// Binary layout (little endian):
///   "DERMCKPT" | u32 version | u64 len, config echo bytes | u64 count |
///   per tensor: u64 len, name | u32 rank | i64 dims[rank] | f64 data[] |
///   u64 FNV-1a of all preceding bytes.
std::string serialize(const Checkpoint& c);
Checkpoint deserialize(const std::string& bytes, const std::string& origin = "checkpoint");

/// Atomic write; load throws CheckpointError on a bad magic, version,
/// truncation or checksum.
void save(const Checkpoint& c, const std::filesystem::path& path);
Checkpoint load(const std::filesystem::path& path);

template <typename Scalar>
std::map<std::string, ad::TensorD> to_double(const std::map<std::string, ad::Tensor<Scalar>>& params) {
  std::map<std::string, ad::TensorD> out;
  for (const auto& [k, v] : params) out.emplace(k, v.template cast<double>());
  return out;
}

}  // namespace derm::ckpt
