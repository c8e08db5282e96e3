#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace syncnoise {

/// Lowercase hex SHA-256 of `data`.
std::string sha256_hex(std::string_view data);

/// Lowercase hex SHA-256 of a file's bytes; IoError when unreadable.
std::string sha256_file(const std::filesystem::path& path);

} // namespace syncnoise
