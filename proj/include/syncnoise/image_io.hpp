#pragma once

#include <syncnoise/camera.hpp>
#include <syncnoise/errors.hpp>
#include <syncnoise/grid.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cctype>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace syncnoise {

namespace detail {

inline std::vector<char> read_all(const std::filesystem::path& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_all(const std::filesystem::path& path, const void* data,
                      std::size_t size)
{
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw IoError("cannot write " + path.string());
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
  if (!out)
    throw IoError("short write to " + path.string());
}

inline std::uint8_t quantize8(double v)
{
  return static_cast<std::uint8_t>(
    std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

} // namespace detail

/// Decodes a PNG to a grid in [0,1] with `channels` output channels
/// (1 = gray, 3 = RGB). Palette, 16-bit and alpha inputs are normalized.
GridTensor read_png(const std::filesystem::path& path, int channels = 3);

/// Encodes a 1- or 3-channel [0,1] grid as an 8-bit PNG; values are clamped.
void write_png(const std::filesystem::path& path, const GridTensor& image);

inline BinaryMask read_mask_png(const std::filesystem::path& path)
{
  const GridTensor gray = read_png(path, 1);
  BinaryMask mask(1, gray.height(), gray.width());
  for (std::size_t i = 0; i < gray.size(); ++i)
    mask.values()[i] = gray.values()[i] >= 0.5 ? 1 : 0;
  return mask;
}

inline void write_mask_png(const std::filesystem::path& path,
                           const BinaryMask& mask)
{
  GridTensor gray(1, mask.height(), mask.width());
  for (std::size_t i = 0; i < mask.size(); ++i)
    gray.values()[i] = mask.values()[i] ? 1.0 : 0.0;
  write_png(path, gray);
}

namespace detail {

inline float load_f32_le(const char* bytes)
{
  std::uint32_t bits;
  std::memcpy(&bits, bytes, 4);
  if constexpr (std::endian::native == std::endian::big)
    bits = __builtin_bswap32(bits);
  return std::bit_cast<float>(bits);
}

inline void store_f32_le(char* bytes, float value)
{
  auto bits = std::bit_cast<std::uint32_t>(value);
  if constexpr (std::endian::native == std::endian::big)
    bits = __builtin_bswap32(bits);
  std::memcpy(bytes, &bits, 4);
}

/// Parses a PFM header; returns byte offset of pixel data.
inline std::size_t parse_pfm_header(const std::vector<char>& bytes,
                                    const std::string& name, int& width,
                                    int& height, double& scale)
{
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos])))
      ++pos;
    std::string t;
    while (pos < bytes.size() &&
           !std::isspace(static_cast<unsigned char>(bytes[pos])))
      t.push_back(bytes[pos++]);
    return t;
  };
  const std::string magic = token();
  if (magic != "Pf")
    throw FormatError(name + ": expected single-channel PFM magic 'Pf', got '" +
                      magic + "'");
  try
  {
    width = std::stoi(token());
    height = std::stoi(token());
    scale = std::stod(token());
  }
  catch (const std::exception&)
  {
    throw FormatError(name + ": malformed PFM header");
  }
  // Exactly one whitespace byte separates the header from the raster.
  if (pos >= bytes.size())
    throw FormatError(name + ": truncated PFM header");
  ++pos;
  if (width <= 0 || height <= 0)
    throw FormatError(name + ": nonpositive PFM extent");
  return pos;
}

} // namespace detail

/// Reads a depth map stored either as little-endian PFM (scale < 0) or as raw
/// row-major float32 of exactly width*height values. Nonpositive values are
/// marked invalid.
inline DepthMap load_depth(const std::filesystem::path& path, int width,
                           int height)
{
  const auto bytes = detail::read_all(path);
  const std::string name = path.string();
  const std::size_t expected = static_cast<std::size_t>(width) * height;
  DepthMap map(height, width);

  if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == 'f' || bytes[1] == 'F'))
  {
    int w = 0, h = 0;
    double scale = 0;
    const std::size_t offset = detail::parse_pfm_header(bytes, name, w, h, scale);
    if (!(scale < 0))
      throw FormatError(name + ": only little-endian PFM (negative scale) is "
                               "supported");
    if (w != width || h != height)
      throw SizeMismatchError(name + ": PFM is " + std::to_string(w) + "x" +
                              std::to_string(h) + ", expected " +
                              std::to_string(width) + "x" +
                              std::to_string(height));
    if (bytes.size() - offset != expected * 4)
      throw SizeMismatchError(name + ": PFM raster has " +
                              std::to_string((bytes.size() - offset) / 4) +
                              " values, expected " + std::to_string(expected));
    // PFM rows run bottom to top.
    for (int row = 0; row < height; ++row)
      for (int x = 0; x < width; ++x)
        map.set(x, height - 1 - row,
                detail::load_f32_le(bytes.data() + offset +
                                    (static_cast<std::size_t>(row) * width + x) *
                                      4));
    return map;
  }

  if (bytes.size() % 4 != 0)
    throw FormatError(name + ": raw float32 file size is not a multiple of 4");
  if (bytes.size() / 4 != expected)
    throw SizeMismatchError(name + ": raw depth has " +
                            std::to_string(bytes.size() / 4) +
                            " values, expected " + std::to_string(expected));
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      map.set(x, y, detail::load_f32_le(bytes.data() +
                                        (static_cast<std::size_t>(y) * width + x) *
                                          4));
  return map;
}

/// Writes little-endian PFM; invalid pixels are stored as 0.
inline void save_depth_pfm(const std::filesystem::path& path, const DepthMap& map)
{
  std::ostringstream header;
  header << "Pf\n" << map.width() << " " << map.height() << "\n-1.0\n";
  std::string out = header.str();
  const std::size_t offset = out.size();
  out.resize(offset + static_cast<std::size_t>(map.width()) * map.height() * 4);
  for (int row = 0; row < map.height(); ++row)
  {
    const int y = map.height() - 1 - row;
    for (int x = 0; x < map.width(); ++x)
      detail::store_f32_le(
        out.data() + offset + (static_cast<std::size_t>(row) * map.width() + x) * 4,
        map.is_valid(x, y) ? static_cast<float>(map.at(x, y)) : 0.0f);
  }
  detail::write_all(path, out.data(), out.size());
}

/// Writes raw row-major little-endian float32.
inline void save_depth_raw(const std::filesystem::path& path, const DepthMap& map)
{
  std::string out(static_cast<std::size_t>(map.width()) * map.height() * 4, '\0');
  for (int y = 0; y < map.height(); ++y)
    for (int x = 0; x < map.width(); ++x)
      detail::store_f32_le(
        out.data() + (static_cast<std::size_t>(y) * map.width() + x) * 4,
        map.is_valid(x, y) ? static_cast<float>(map.at(x, y)) : 0.0f);
  detail::write_all(path, out.data(), out.size());
}

} // namespace syncnoise
