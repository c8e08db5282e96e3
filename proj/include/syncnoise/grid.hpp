#pragma once

#include <syncnoise/errors.hpp>

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace syncnoise {

/// Dense channels x height x width grid, channel-major then row-major.
///
/// Used uniformly for latents, noise, predictor features and images.
template <typename T>
class Grid
{
public:
  using value_type = T;

  Grid() = default;

  Grid(int channels, int height, int width, T fill = T{})
    : channels_(channels)
    , height_(height)
    , width_(width)
    , values_(static_cast<std::size_t>(channels) * height * width, fill)
  {
    if (channels < 0 || height < 0 || width < 0)
      throw ArgumentError("negative grid extent");
  }

  int channels() const noexcept { return channels_; }
  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t plane_size() const noexcept
  {
    return static_cast<std::size_t>(height_) * width_;
  }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  bool same_shape(const Grid& other) const noexcept
  {
    return channels_ == other.channels_ && height_ == other.height_ &&
           width_ == other.width_;
  }

  bool contains(int x, int y) const noexcept
  {
    return x >= 0 && y >= 0 && x < width_ && y < height_;
  }

  T& operator()(int c, int y, int x) noexcept
  {
    assert(c >= 0 && c < channels_ && contains(x, y));
    return values_[c * plane_size() + static_cast<std::size_t>(y) * width_ + x];
  }
  const T& operator()(int c, int y, int x) const noexcept
  {
    assert(c >= 0 && c < channels_ && contains(x, y));
    return values_[c * plane_size() + static_cast<std::size_t>(y) * width_ + x];
  }

  /// Flat (channel 0) pixel index access.
  T& at_index(int c, std::size_t pixel) noexcept
  {
    return values_[c * plane_size() + pixel];
  }
  const T& at_index(int c, std::size_t pixel) const noexcept
  {
    return values_[c * plane_size() + pixel];
  }

  std::span<T> values() noexcept { return values_; }
  std::span<const T> values() const noexcept { return values_; }

  std::span<T> plane(int c) noexcept
  {
    return std::span<T>(values_).subspan(c * plane_size(), plane_size());
  }
  std::span<const T> plane(int c) const noexcept
  {
    return std::span<const T>(values_).subspan(c * plane_size(), plane_size());
  }

  bool operator==(const Grid& other) const = default;

private:
  int channels_ = 0;
  int height_ = 0;
  int width_ = 0;
  std::vector<T> values_;
};

using GridTensor = Grid<double>;

/// Single-channel 0/1 mask.
using BinaryMask = Grid<std::uint8_t>;

inline BinaryMask make_mask(int height, int width, bool fill = false)
{
  return BinaryMask(1, height, width, fill ? 1 : 0);
}

inline std::size_t popcount(const BinaryMask& mask)
{
  return static_cast<std::size_t>(
    std::count_if(mask.values().begin(), mask.values().end(),
                  [](std::uint8_t v) { return v != 0; }));
}

inline bool is_subset(const BinaryMask& inner, const BinaryMask& outer)
{
  if (!inner.same_shape(outer))
    return false;
  for (std::size_t i = 0; i < inner.size(); ++i)
    if (inner.values()[i] && !outer.values()[i])
      return false;
  return true;
}

template <typename T>
void require_same_shape(const Grid<T>& a, const Grid<T>& b, const char* what)
{
  if (!a.same_shape(b))
    throw ShapeMismatchError(
      std::string(what) + ": " + std::to_string(a.channels()) + "x" +
      std::to_string(a.height()) + "x" + std::to_string(a.width()) + " vs " +
      std::to_string(b.channels()) + "x" + std::to_string(b.height()) + "x" +
      std::to_string(b.width()));
}

inline bool all_finite(const GridTensor& grid)
{
  return std::all_of(grid.values().begin(), grid.values().end(),
                     [](double v) { return std::isfinite(v); });
}

/// Box-filter downsampling by an integer factor; extents must divide.
inline GridTensor downsample_area(const GridTensor& src, int factor)
{
  if (factor < 1 || src.width() % factor != 0 || src.height() % factor != 0)
    throw ShapeMismatchError("downsample factor " + std::to_string(factor) +
                             " does not divide " + std::to_string(src.width()) +
                             "x" + std::to_string(src.height()));
  if (factor == 1)
    return src;
  const int h = src.height() / factor;
  const int w = src.width() / factor;
  const double norm = 1.0 / (factor * factor);
  GridTensor dst(src.channels(), h, w);
  for (int c = 0; c < src.channels(); ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
      {
        double sum = 0.0;
        for (int dy = 0; dy < factor; ++dy)
          for (int dx = 0; dx < factor; ++dx)
            sum += src(c, y * factor + dy, x * factor + dx);
        dst(c, y, x) = sum * norm;
      }
  return dst;
}

/// Bilinear sample with pixel centers at integer coordinates; edges clamp.
inline double sample_bilinear(const GridTensor& grid, int c, double u, double v)
{
  const double uc = std::clamp(u, 0.0, static_cast<double>(grid.width() - 1));
  const double vc = std::clamp(v, 0.0, static_cast<double>(grid.height() - 1));
  const int x0 = static_cast<int>(std::floor(uc));
  const int y0 = static_cast<int>(std::floor(vc));
  const int x1 = std::min(x0 + 1, grid.width() - 1);
  const int y1 = std::min(y0 + 1, grid.height() - 1);
  const double fx = uc - x0;
  const double fy = vc - y0;
  const double top = (1 - fx) * grid(c, y0, x0) + fx * grid(c, y0, x1);
  const double bottom = (1 - fx) * grid(c, y1, x0) + fx * grid(c, y1, x1);
  return (1 - fy) * top + fy * bottom;
}

/// Bilinear resampling to an arbitrary size, pixel-center aligned.
inline GridTensor resize_bilinear(const GridTensor& src, int height, int width)
{
  if (src.height() == height && src.width() == width)
    return src;
  GridTensor dst(src.channels(), height, width);
  const double sx = static_cast<double>(src.width()) / width;
  const double sy = static_cast<double>(src.height()) / height;
  for (int c = 0; c < src.channels(); ++c)
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x)
        dst(c, y, x) =
          sample_bilinear(src, c, (x + 0.5) * sx - 0.5, (y + 0.5) * sy - 0.5);
  return dst;
}

/// Nearest-neighbor resampling, pixel-center aligned.
template <typename T>
Grid<T> resize_nearest(const Grid<T>& src, int height, int width)
{
  if (src.height() == height && src.width() == width)
    return src;
  Grid<T> dst(src.channels(), height, width);
  const double sx = static_cast<double>(src.width()) / width;
  const double sy = static_cast<double>(src.height()) / height;
  for (int y = 0; y < height; ++y)
  {
    const int ys = std::min(static_cast<int>((y + 0.5) * sy), src.height() - 1);
    for (int x = 0; x < width; ++x)
    {
      const int xs =
        std::min(static_cast<int>((x + 0.5) * sx), src.width() - 1);
      for (int c = 0; c < src.channels(); ++c)
        dst(c, y, x) = src(c, ys, xs);
    }
  }
  return dst;
}

/// Nearest-block upsampling by an integer factor.
inline GridTensor upsample_nearest(const GridTensor& src, int factor)
{
  if (factor == 1)
    return src;
  GridTensor dst(src.channels(), src.height() * factor, src.width() * factor);
  for (int c = 0; c < src.channels(); ++c)
    for (int y = 0; y < dst.height(); ++y)
      for (int x = 0; x < dst.width(); ++x)
        dst(c, y, x) = src(c, y / factor, x / factor);
  return dst;
}

} // namespace syncnoise
