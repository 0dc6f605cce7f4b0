#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "uidsc/config.hpp"
#include "uidsc/tensor.hpp"

namespace uidsc {

/// Named float64 tensors plus a free-form JSON metadata block.
///
/// On-disk layout (little-endian):
///   8 bytes   magic "UIDSCTNS"
///   4 bytes   uint32 format version (currently 1)
///   8 bytes   uint64 header length L
///   L bytes   UTF-8 JSON header:
///             {"format_version", "meta", "checksum": "sha256:<hex>",
///              "tensors": [{"name", "shape": [n,c,h,w], "offset", "count"}]}
///   payload   raw IEEE-754 doubles, tensors concatenated in header order;
///             offsets and counts are in doubles, the checksum covers the payload.
struct TensorArchive {
    Json meta = Json::object();
    std::map<std::string, Tensor> tensors;
};

inline constexpr std::uint32_t kArchiveFormatVersion = 1;

void write_archive(const std::filesystem::path& path, const TensorArchive& archive);
TensorArchive read_archive(const std::filesystem::path& path);

std::string sha256_hex(std::string_view bytes);
std::string sha256_hex(const std::vector<std::uint8_t>& bytes);

}  // namespace uidsc
