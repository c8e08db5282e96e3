#pragma once

#include <syncnoise/errors.hpp>
#include <syncnoise/grid.hpp>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <cstdint>
#include <string>

namespace syncnoise {

/// Continuous pixel coordinate; integer values sit at pixel centers.
struct PixelCoord
{
  double u = 0.0; // along width
  double v = 0.0; // along height

  bool operator==(const PixelCoord&) const = default;
};

inline double pixel_distance(const PixelCoord& a, const PixelCoord& b)
{
  return std::hypot(a.u - b.u, a.v - b.v);
}

/// Pinhole camera, world-to-camera pose, no distortion.
struct Camera
{
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  Eigen::Vector3d to_camera(const Eigen::Vector3d& world) const
  {
    return rotation * world + translation;
  }

  Eigen::Vector3d to_world(const Eigen::Vector3d& cam) const
  {
    return rotation.transpose() * (cam - translation);
  }

  /// Same intrinsics, size and pose, compared exactly.
  bool coincides(const Camera& o) const
  {
    return fx == o.fx && fy == o.fy && cx == o.cx && cy == o.cy &&
           width == o.width && height == o.height && rotation == o.rotation &&
           translation == o.translation;
  }

  Eigen::Vector3d center() const { return -rotation.transpose() * translation; }

  /// Pixel lies in [-0.5, W-0.5) x [-0.5, H-0.5).
  bool in_frame(const PixelCoord& p) const
  {
    return p.u >= -0.5 && p.v >= -0.5 && p.u < width - 0.5 &&
           p.v < height - 0.5;
  }

  /// Intrinsics for a resized image of `new_width` x `new_height`.
  Camera rescaled(int new_width, int new_height) const
  {
    Camera out = *this;
    const double sx = static_cast<double>(new_width) / width;
    const double sy = static_cast<double>(new_height) / height;
    out.fx = fx * sx;
    out.fy = fy * sy;
    out.cx = (cx + 0.5) * sx - 0.5;
    out.cy = (cy + 0.5) * sy - 0.5;
    out.width = new_width;
    out.height = new_height;
    return out;
  }
};

/// Throws ArgumentError unless focal lengths are positive and the rotation is
/// a proper rotation to 1e-6.
inline void validate(const Camera& cam)
{
  if (!(cam.fx > 0) || !(cam.fy > 0))
    throw ArgumentError("camera focal lengths must be positive");
  const double ortho =
    (cam.rotation * cam.rotation.transpose() - Eigen::Matrix3d::Identity())
      .cwiseAbs()
      .maxCoeff();
  if (ortho > 1e-6 || std::abs(cam.rotation.determinant() - 1.0) > 1e-6)
    throw ArgumentError("camera rotation is not orthonormal with det +1");
}

/// Per-pixel metric depth with an explicit validity grid.
struct DepthMap
{
  GridTensor values;
  BinaryMask valid;

  DepthMap() = default;
  DepthMap(int height, int width)
    : values(1, height, width, 0.0)
    , valid(1, height, width, 0)
  {
  }

  int width() const noexcept { return values.width(); }
  int height() const noexcept { return values.height(); }
  bool empty() const noexcept { return values.empty(); }

  bool is_valid(int x, int y) const { return valid(0, y, x) != 0; }
  double at(int x, int y) const { return values(0, y, x); }

  /// Stores `depth`; nonpositive or non-finite values are marked invalid.
  void set(int x, int y, double depth)
  {
    const bool ok = std::isfinite(depth) && depth > 0.0;
    values(0, y, x) = ok ? depth : 0.0;
    valid(0, y, x) = ok ? 1 : 0;
  }

  static DepthMap from_values(const GridTensor& grid)
  {
    DepthMap map(grid.height(), grid.width());
    for (int y = 0; y < grid.height(); ++y)
      for (int x = 0; x < grid.width(); ++x)
        map.set(x, y, grid(0, y, x));
    return map;
  }
};

enum class ProjectionStatus : std::uint8_t
{
  ok,
  behind_camera,
  out_of_frame,
};

struct Projection
{
  PixelCoord pixel;
  double depth = 0.0;
  ProjectionStatus status = ProjectionStatus::ok;

  bool ok() const noexcept { return status == ProjectionStatus::ok; }
};

inline constexpr double kMinProjectDepth = 1e-9;

/// Non-throwing projection; never reports out_of_frame.
inline Projection project_checked(const Camera& cam,
                                  const Eigen::Vector3d& point)
{
  const Eigen::Vector3d pc = cam.to_camera(point);
  Projection out;
  out.depth = pc.z();
  if (pc.z() <= kMinProjectDepth)
  {
    out.status = ProjectionStatus::behind_camera;
    return out;
  }
  out.pixel = {cam.fx * pc.x() / pc.z() + cam.cx,
               cam.fy * pc.y() / pc.z() + cam.cy};
  return out;
}

inline Projection project(const Camera& cam, const Eigen::Vector3d& point)
{
  auto out = project_checked(cam, point);
  if (out.status == ProjectionStatus::behind_camera)
    throw BehindCamera("point has camera depth " + std::to_string(out.depth));
  return out;
}

inline Eigen::Vector3d backproject_unchecked(const Camera& cam,
                                             const PixelCoord& pixel,
                                             double depth)
{
  const Eigen::Vector3d pc((pixel.u - cam.cx) / cam.fx * depth,
                           (pixel.v - cam.cy) / cam.fy * depth, depth);
  return cam.to_world(pc);
}

inline Eigen::Vector3d backproject(const Camera& cam, const PixelCoord& pixel,
                                   double depth)
{
  if (!(depth > 0.0))
    throw InvalidDepth("backproject needs positive depth, got " +
                       std::to_string(depth));
  return backproject_unchecked(cam, pixel, depth);
}

/// Moves a reference pixel with known depth into `cam_k`.
/// Status reports behind_camera / out_of_frame instead of throwing.
inline Projection reproject_checked(const PixelCoord& pixel, double depth_ref,
                                    const Camera& cam_ref, const Camera& cam_k)
{
  const Eigen::Vector3d world = backproject_unchecked(cam_ref, pixel, depth_ref);
  auto out = project_checked(cam_k, world);
  if (out.ok() && !cam_k.in_frame(out.pixel))
    out.status = ProjectionStatus::out_of_frame;
  return out;
}

inline Projection reproject(const PixelCoord& pixel, double depth_ref,
                            const Camera& cam_ref, const Camera& cam_k)
{
  if (!(depth_ref > 0.0))
    throw InvalidDepth("reference depth must be positive");
  auto out = reproject_checked(pixel, depth_ref, cam_ref, cam_k);
  switch (out.status)
  {
    case ProjectionStatus::behind_camera:
      throw BehindCamera("reprojected point is behind the target camera");
    case ProjectionStatus::out_of_frame:
      throw OutOfFrame("reprojected pixel (" + std::to_string(out.pixel.u) +
                       ", " + std::to_string(out.pixel.v) +
                       ") is outside the target frame");
    case ProjectionStatus::ok: break;
  }
  return out;
}

struct DepthSample
{
  double depth = 0.0;
  bool valid = false;
};

inline bool pixel_in_grid(int width, int height, const PixelCoord& p)
{
  return p.u >= -0.5 && p.v >= -0.5 && p.u < width - 0.5 && p.v < height - 0.5;
}

inline int nearest_index(double coord, int extent)
{
  return std::clamp(static_cast<int>(std::floor(coord + 0.5)), 0, extent - 1);
}

/// Nearest-neighbor lookup; invalid pixels come back with `valid == false`.
inline DepthSample sample_depth(const DepthMap& map, const PixelCoord& pixel)
{
  if (!pixel_in_grid(map.width(), map.height(), pixel))
    throw OutOfFrame("depth lookup outside map");
  const int x = nearest_index(pixel.u, map.width());
  const int y = nearest_index(pixel.v, map.height());
  return {map.at(x, y), map.is_valid(x, y)};
}

/// Subpixel depth lookup by bilinear interpolation of inverse depth.
///
/// Inverse depth is affine in pixel coordinates over a plane, so this is exact
/// on planar surfaces (including the half-pixel border band, which is linearly
/// extrapolated). Falls back to the nearest sample when any of the four
/// neighbors is invalid.
inline DepthSample interpolate_depth(const DepthMap& map, const PixelCoord& pixel)
{
  if (!pixel_in_grid(map.width(), map.height(), pixel))
    throw OutOfFrame("depth lookup outside map");
  if (map.width() < 2 || map.height() < 2)
    return sample_depth(map, pixel);
  if (pixel.u == std::floor(pixel.u) && pixel.v == std::floor(pixel.v))
  {
    const int x = static_cast<int>(pixel.u), y = static_cast<int>(pixel.v);
    if (map.is_valid(x, y))
      return {map.at(x, y), true};
  }
  const int x0 = std::clamp(static_cast<int>(std::floor(pixel.u)), 0,
                            map.width() - 2);
  const int y0 = std::clamp(static_cast<int>(std::floor(pixel.v)), 0,
                            map.height() - 2);
  if (!map.is_valid(x0, y0) || !map.is_valid(x0 + 1, y0) ||
      !map.is_valid(x0, y0 + 1) || !map.is_valid(x0 + 1, y0 + 1))
    return sample_depth(map, pixel);
  const double fx = pixel.u - x0;
  const double fy = pixel.v - y0;
  const double top =
    (1 - fx) / map.at(x0, y0) + fx / map.at(x0 + 1, y0);
  const double bottom =
    (1 - fx) / map.at(x0, y0 + 1) + fx / map.at(x0 + 1, y0 + 1);
  const double inv = (1 - fy) * top + fy * bottom;
  if (!(inv > 0.0))
    return sample_depth(map, pixel);
  return {1.0 / inv, true};
}

/// Right-handed look-at pose: camera x right, y down, z forward.
inline Camera look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                      const Eigen::Vector3d& up, double focal, int width,
                      int height)
{
  const Eigen::Vector3d forward = (target - eye).normalized();
  const Eigen::Vector3d right = forward.cross(up).normalized();
  const Eigen::Vector3d down = forward.cross(right);
  Camera cam;
  cam.fx = cam.fy = focal;
  cam.cx = (width - 1) / 2.0;
  cam.cy = (height - 1) / 2.0;
  cam.width = width;
  cam.height = height;
  cam.rotation.row(0) = right.transpose();
  cam.rotation.row(1) = down.transpose();
  cam.rotation.row(2) = forward.transpose();
  cam.translation = -cam.rotation * eye;
  return cam;
}

} // namespace syncnoise
