#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace derm::io {

/// Writes `bytes` to a sibling temp file and renames it over `path`, so
/// readers never observe a partial file. Parent directories are created.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

std::string read_file(const std::filesystem::path& path);

/// 64-bit FNV-1a; stable across platforms, used to derive RNG streams and
/// content fingerprints.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

/// Hex digest of fnv1a over a file's bytes.
std::string file_fingerprint(const std::filesystem::path& path);

}  // namespace derm::io
