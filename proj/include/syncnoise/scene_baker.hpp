#pragma once

#include <syncnoise/camera.hpp>
#include <syncnoise/correspondence.hpp>
#include <syncnoise/errors.hpp>
#include <syncnoise/grid.hpp>
#include <syncnoise/parallel.hpp>
#include <syncnoise/scene.hpp>

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <vector>

namespace syncnoise {

struct ColoredPoint
{
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  Eigen::Vector3d color = Eigen::Vector3d::Zero(); // in [0, 1]
  double confidence = 0.0;
  int view_id = 0;         // source view
  std::uint32_t cell = 0;  // index into ColoredPointSet::cells
};

/// Confidence-weighted mean color of one view inside a fusion cell.
struct CellObservation
{
  int view_id = 0;
  Eigen::Vector3d color = Eigen::Vector3d::Zero();
  double weight = 0.0;
};

struct FusionCell
{
  std::array<std::int64_t, 3> key{};
  std::vector<CellObservation> views; // ascending view id
};

/// Backprojected pixels of all views. A point's color is the weighted mean
/// over the views sharing its voxel cell, where its own view contributes the
/// point's color rather than that view's cell mean.
struct ColoredPointSet
{
  std::vector<ColoredPoint> points;
  std::vector<FusionCell> cells;
  double cell_size = 0.0;
};

struct BakeOptions
{
  std::optional<double> cell_size; // default: median neighbor spacing
  double mu = 50.0;                // weight sharpness for confidences
  int threads = 1;
};

/// Median 3D distance between horizontally adjacent foreground pixels with
/// valid depth, over all views.
inline double median_pixel_spacing(const SceneBundle& bundle)
{
  std::vector<double> spacing;
  for (const auto& v : bundle.views)
  {
    if (!v.depth)
      continue;
    for (int y = 0; y < v.camera.height; ++y)
      for (int x = 0; x + 1 < v.camera.width; ++x)
      {
        if (!v.depth->is_valid(x, y) || !v.depth->is_valid(x + 1, y))
          continue;
        if (v.fore_mask && (!(*v.fore_mask)(0, y, x) || !(*v.fore_mask)(0, y, x + 1)))
          continue;
        const auto a = backproject_unchecked(v.camera, {double(x), double(y)},
                                             v.depth->at(x, y));
        const auto b = backproject_unchecked(v.camera, {double(x + 1), double(y)},
                                             v.depth->at(x + 1, y));
        spacing.push_back((a - b).norm());
      }
  }
  if (spacing.empty())
    return 1.0;
  auto mid = spacing.begin() + static_cast<long>(spacing.size() / 2);
  std::nth_element(spacing.begin(), mid, spacing.end());
  return *mid;
}

/// Bakes edited images (bundle order) onto backprojected foreground pixels.
///
/// Confidence of a pixel is its unnormalized correspondence weight mass,
/// sum_k exp(-mu * delta_k) over its graph entry (1 when no graph is given
/// or the pixel has no entry).
inline ColoredPointSet bake(const SceneBundle& bundle,
                            const std::vector<GridTensor>& images,
                            const GraphSet* graphs = nullptr,
                            const BakeOptions& options = {})
{
  if (images.size() != bundle.views.size())
    throw ShapeMismatchError("bake: one image per view required");
  for (const auto& v : bundle.views)
    if (!v.depth)
      throw MissingDepthError("view " + std::to_string(v.id) + " has no depth map");
  for (std::size_t i = 0; i < images.size(); ++i)
    if (images[i].channels() != 3 ||
        images[i].height() != bundle.views[i].camera.height ||
        images[i].width() != bundle.views[i].camera.width)
      throw ShapeMismatchError("bake: image does not match its camera");
  if (graphs && graphs->size() != bundle.views.size())
    throw ShapeMismatchError("bake: one graph per view required");

  ColoredPointSet set;
  set.cell_size = options.cell_size ? *options.cell_size : median_pixel_spacing(bundle);
  if (!(set.cell_size > 0))
    throw ArgumentError("bake cell size must be positive");
  const double inv_cell = 1.0 / set.cell_size;

  using Key = std::array<std::int64_t, 3>;
  struct Accum
  {
    Eigen::Vector3d color_sum = Eigen::Vector3d::Zero();
    double weight = 0.0;
  };
  struct Partial
  {
    std::vector<ColoredPoint> points;
    std::vector<Key> keys;
    std::map<Key, Accum> cells;
  };
  std::vector<Partial> partial(bundle.views.size());

  parallel_chunks(bundle.views.size(), bundle.views.size(), options.threads,
                  [&](std::size_t vi, std::size_t, std::size_t) {
    const ViewRecord& v = bundle.views[vi];
    const GridTensor& img = images[vi];
    Partial& out = partial[vi];
    for (int y = 0; y < v.camera.height; ++y)
      for (int x = 0; x < v.camera.width; ++x)
      {
        if (v.fore_mask && !(*v.fore_mask)(0, y, x))
          continue;
        if (!v.depth->is_valid(x, y))
          continue;
        ColoredPoint p;
        p.position = backproject_unchecked(v.camera, {double(x), double(y)},
                                           v.depth->at(x, y));
        p.color = {std::clamp(img(0, y, x), 0.0, 1.0),
                   std::clamp(img(1, y, x), 0.0, 1.0),
                   std::clamp(img(2, y, x), 0.0, 1.0)};
        p.confidence = 1.0;
        if (graphs)
        {
          const auto* e = (*graphs)[vi].find(
            static_cast<std::uint32_t>(y * v.camera.width + x));
          if (e)
          {
            p.confidence = 0.0;
            for (const auto& m : e->matches)
              p.confidence += match_weight(m.delta, options.mu);
          }
        }
        p.view_id = v.id;
        const Key key{static_cast<std::int64_t>(std::floor(p.position.x() * inv_cell)),
                      static_cast<std::int64_t>(std::floor(p.position.y() * inv_cell)),
                      static_cast<std::int64_t>(std::floor(p.position.z() * inv_cell))};
        Accum& a = out.cells[key];
        a.color_sum += p.confidence * p.color;
        a.weight += p.confidence;
        out.points.push_back(p);
        out.keys.push_back(key);
      }
  });

  // Merge per-view partials in view order.
  std::map<Key, std::uint32_t> cell_index;
  for (std::size_t vi = 0; vi < partial.size(); ++vi)
    for (const auto& [key, acc] : partial[vi].cells)
    {
      auto [it, inserted] =
        cell_index.emplace(key, static_cast<std::uint32_t>(set.cells.size()));
      if (inserted)
        set.cells.push_back({key, {}});
      if (acc.weight > 0)
        set.cells[it->second].views.push_back(
          {bundle.views[vi].id, acc.color_sum / acc.weight, acc.weight});
    }
  for (auto& cell : set.cells)
    std::sort(cell.views.begin(), cell.views.end(),
              [](const CellObservation& a, const CellObservation& b) {
                return a.view_id < b.view_id;
              });

  for (std::size_t vi = 0; vi < partial.size(); ++vi)
    for (std::size_t k = 0; k < partial[vi].points.size(); ++k)
    {
      ColoredPoint p = partial[vi].points[k];
      p.cell = cell_index.at(partial[vi].keys[k]);
      const FusionCell& cell = set.cells[p.cell];
      // The point's own color stands in for its view's cell mean.
      Eigen::Vector3d sum = Eigen::Vector3d::Zero();
      double w = 0.0;
      for (const auto& obs : cell.views)
      {
        sum += obs.weight * (obs.view_id == p.view_id ? p.color : obs.color);
        w += obs.weight;
      }
      if (w > 0)
        p.color = sum / w;
      set.points.push_back(p);
    }
  return set;
}

struct RenderResult
{
  GridTensor image;    // 3 x H x W, zero where uncovered
  BinaryMask coverage; // pixels hit by a point
  GridTensor depth;    // 1 x H x W, zero where uncovered
};

/// Z-buffered point splat: each point lands on its nearest pixel and the
/// point nearest the camera wins (earlier point on exact ties).
inline RenderResult render(const ColoredPointSet& set, const Camera& camera)
{
  RenderResult r;
  r.image = GridTensor(3, camera.height, camera.width, 0.0);
  r.coverage = make_mask(camera.height, camera.width);
  r.depth = GridTensor(1, camera.height, camera.width, 0.0);
  GridTensor zbuf(1, camera.height, camera.width,
                  std::numeric_limits<double>::infinity());
  for (const auto& p : set.points)
  {
    const Projection proj = project_checked(camera, p.position);
    if (!proj.ok() || !camera.in_frame(proj.pixel))
      continue;
    const int x = nearest_index(proj.pixel.u, camera.width);
    const int y = nearest_index(proj.pixel.v, camera.height);
    if (!(proj.depth < zbuf(0, y, x)))
      continue;
    zbuf(0, y, x) = proj.depth;
    r.depth(0, y, x) = proj.depth;
    r.coverage(0, y, x) = 1;
    for (int c = 0; c < 3; ++c)
      r.image(c, y, x) = p.color[c];
  }
  return r;
}

inline constexpr double kPsnrCap = 99.0;

/// PSNR in dB for signals in [0, 1], capped at kPsnrCap.
inline double psnr_from_mse(double mse)
{
  if (!(mse > 0))
    return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

struct ConsistencyReport
{
  std::map<int, double> per_view_psnr; // views with nonzero coverage only
  double cross_view_color_variance = 0.0;
  double coverage = 0.0;
  std::size_t shared_cells = 0; // cells observed by two or more views
};

/// Mean over fusion cells seen by two or more views of the per-channel
/// variance of the views' mean colors.
inline std::pair<double, std::size_t> cross_view_variance(const ColoredPointSet& set)
{
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& cell : set.cells)
  {
    if (cell.views.size() < 2)
      continue;
    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    for (const auto& o : cell.views)
      mean += o.color;
    mean /= static_cast<double>(cell.views.size());
    double var = 0.0;
    for (const auto& o : cell.views)
      var += (o.color - mean).squaredNorm();
    total += var / (3.0 * static_cast<double>(cell.views.size()));
    ++n;
  }
  return {n ? total / static_cast<double>(n) : 0.0, n};
}

/// Re-renders the point set into every camera and compares with the edited
/// images over covered pixels.
inline ConsistencyReport consistency_report(const std::vector<int>& view_ids,
                                            const std::vector<GridTensor>& images,
                                            const ColoredPointSet& set,
                                            const std::vector<Camera>& cameras)
{
  if (view_ids.size() != images.size() || images.size() != cameras.size())
    throw ShapeMismatchError("consistency_report: views, images and cameras differ in count");
  ConsistencyReport report;
  double covered_total = 0.0;
  double pixel_total = 0.0;
  for (std::size_t i = 0; i < cameras.size(); ++i)
  {
    const RenderResult r = render(set, cameras[i]);
    if (images[i].channels() != 3 || images[i].height() != cameras[i].height ||
        images[i].width() != cameras[i].width)
      throw ShapeMismatchError("consistency_report: image does not match camera");
    double se = 0.0;
    std::size_t covered = 0;
    const std::size_t plane = r.coverage.plane_size();
    for (std::size_t p = 0; p < plane; ++p)
    {
      if (!r.coverage.values()[p])
        continue;
      ++covered;
      for (int c = 0; c < 3; ++c)
      {
        const double d = images[i].at_index(c, p) - r.image.at_index(c, p);
        se += d * d;
      }
    }
    covered_total += static_cast<double>(covered);
    pixel_total += static_cast<double>(plane);
    if (covered > 0)
      report.per_view_psnr[view_ids[i]] =
        psnr_from_mse(se / (3.0 * static_cast<double>(covered)));
  }
  report.coverage = pixel_total > 0 ? covered_total / pixel_total : 0.0;
  const auto [var, shared] = cross_view_variance(set);
  report.cross_view_color_variance = var;
  report.shared_cells = shared;
  return report;
}

/// ASCII PLY with float position, 8-bit color and a confidence property.
inline void write_ply(const std::filesystem::path& path, const ColoredPointSet& set)
{
  std::ofstream out(path);
  if (!out)
    throw IoError("cannot write " + path.string());
  out << "ply\nformat ascii 1.0\n"
      << "element vertex " << set.points.size() << "\n"
      << "property float x\nproperty float y\nproperty float z\n"
      << "property uchar red\nproperty uchar green\nproperty uchar blue\n"
      << "property float confidence\nend_header\n";
  out << std::setprecision(9);
  for (const auto& p : set.points)
  {
    out << p.position.x() << ' ' << p.position.y() << ' ' << p.position.z();
    for (int c = 0; c < 3; ++c)
      out << ' '
          << static_cast<int>(std::lround(std::clamp(p.color[c], 0.0, 1.0) * 255.0));
    out << ' ' << p.confidence << '\n';
  }
  if (!out)
    throw IoError("failed writing " + path.string());
}

} // namespace syncnoise
