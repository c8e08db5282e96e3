#pragma once

#include <syncnoise/camera.hpp>
#include <syncnoise/config.hpp>
#include <syncnoise/errors.hpp>
#include <syncnoise/grid.hpp>
#include <syncnoise/parallel.hpp>
#include <syncnoise/scene.hpp>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <vector>

namespace syncnoise {

/// One surviving correspondence of a reference pixel into view `view_id`.
struct Match
{
  int view_id = 0;
  PixelCoord pixel;        // reprojected location in the target view
  double delta = 0.0;      // |D_ref->k - D_k|
  double weight = 0.0;     // normalized over the entry
  double cycle_error = 0.0; // |P_ref->k->ref - P_ref| in pixels
  /// Reference-view subpixel position of the target pixel center nearest to
  /// `pixel`, found by reprojecting that center with the target depth.
  PixelCoord back_pixel;
};

struct GraphEntry
{
  std::uint32_t pixel = 0; // y * width + x in the reference view
  std::vector<Match> matches; // ascending view id, self-match included
};

struct CorrespondenceGraph
{
  int ref_view = 0;
  int width = 0;
  int height = 0;
  std::vector<int> candidate_views; // ascending, includes ref_view
  std::vector<GraphEntry> entries;  // ascending pixel index

  /// Entry index per reference pixel, or -1.
  std::vector<std::int32_t> lookup;

  const GraphEntry* find(std::uint32_t pixel) const
  {
    if (pixel >= lookup.size() || lookup[pixel] < 0)
      return nullptr;
    return &entries[static_cast<std::size_t>(lookup[pixel])];
  }

  bool has_candidate(int view_id) const
  {
    return std::binary_search(candidate_views.begin(), candidate_views.end(),
                              view_id);
  }

  std::size_t match_count() const
  {
    std::size_t n = 0;
    for (const auto& e : entries)
      n += e.matches.size();
    return n;
  }

  void rebuild_lookup()
  {
    lookup.assign(static_cast<std::size_t>(width) * height, -1);
    for (std::size_t i = 0; i < entries.size(); ++i)
      lookup[entries[i].pixel] = static_cast<std::int32_t>(i);
  }
};

/// Reprojected-depth test; strict, so delta == tau_d rejects.
inline bool depth_filter(double delta, double tau_d) { return delta < tau_d; }

/// Cycle-consistency test on the round-trip pixel distance; strict.
inline bool cycle_filter(const PixelCoord& ref_pixel,
                         const PixelCoord& roundtrip_pixel, double tau_p)
{
  return pixel_distance(ref_pixel, roundtrip_pixel) < tau_p;
}

/// Unnormalized correspondence weight exp(-mu * delta).
inline double match_weight(double delta, double mu)
{
  return std::exp(-mu * delta);
}

/// Rescales the entry's weights to sum to one.
inline void normalize_weights(std::vector<Match>& matches)
{
  double total = 0.0;
  for (const auto& m : matches)
    total += m.weight;
  if (!(total > 0))
  {
    // Every weight underflowed; fall back to uniform shares.
    for (auto& m : matches)
      m.weight = 1.0 / static_cast<double>(matches.size());
    return;
  }
  for (auto& m : matches)
    m.weight /= total;
}

/// Depth threshold: the configured value, or 1% of the valid depth range
/// across all views.
inline double resolve_tau_d(const SceneBundle& bundle,
                            const PipelineConfig& config)
{
  if (config.tau_d)
    return *config.tau_d;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& v : bundle.views)
  {
    if (!v.depth)
      continue;
    for (std::size_t i = 0; i < v.depth->values.size(); ++i)
      if (v.depth->valid.values()[i])
      {
        lo = std::min(lo, v.depth->values.values()[i]);
        hi = std::max(hi, v.depth->values.values()[i]);
      }
  }
  if (!(hi > lo))
    return 1e-3 * (std::isfinite(hi) && hi > 0 ? hi : 1.0);
  return 0.01 * (hi - lo);
}

struct GraphOptions
{
  double tau_d = 0.0;
  double tau_p = 2.0;
  double mu = 50.0;
  int threads = 1;
};

inline GraphOptions graph_options(const SceneBundle& bundle,
                                  const PipelineConfig& config, int threads = 1)
{
  return {resolve_tau_d(bundle, config), config.tau_p, config.mu, threads};
}

/// Builds the filtered, weighted correspondence graph of `ref_view` against
/// `candidate_views`.
///
/// Reference pixels are restricted to the reference foreground mask when one
/// is present, and targets must land inside the target foreground mask.
/// Target depth is read with inverse-depth interpolation at the reprojected
/// subpixel location.
inline CorrespondenceGraph build_graph(const SceneBundle& bundle, int ref_view,
                                       std::vector<int> candidate_views,
                                       const GraphOptions& options)
{
  if (!(options.tau_d > 0) || !(options.tau_p > 0) || !(options.mu >= 0))
    throw ArgumentError("correspondence thresholds must be positive");
  const ViewRecord& ref = bundle.view(ref_view);
  if (!ref.depth)
    throw MissingDepthError("view " + std::to_string(ref_view) +
                            " has no depth map");
  candidate_views.push_back(ref_view);
  std::sort(candidate_views.begin(), candidate_views.end());
  candidate_views.erase(
    std::unique(candidate_views.begin(), candidate_views.end()),
    candidate_views.end());
  std::vector<const ViewRecord*> targets;
  for (int id : candidate_views)
  {
    const ViewRecord& v = bundle.view(id);
    if (!v.depth)
      throw MissingDepthError("view " + std::to_string(id) +
                              " has no depth map");
    targets.push_back(&v);
  }

  CorrespondenceGraph graph;
  graph.ref_view = ref_view;
  graph.width = ref.camera.width;
  graph.height = ref.camera.height;
  graph.candidate_views = candidate_views;

  const DepthMap& ref_depth = *ref.depth;
  const std::size_t n_pixels = static_cast<std::size_t>(graph.width) * graph.height;
  const std::size_t chunks = 64;
  std::vector<std::vector<GraphEntry>> partial(chunks);

  parallel_chunks(n_pixels, chunks, options.threads, [&](std::size_t chunk,
                                                         std::size_t begin,
                                                         std::size_t end) {
    auto& out = partial[chunk];
    for (std::size_t idx = begin; idx < end; ++idx)
    {
      const int x = static_cast<int>(idx % graph.width);
      const int y = static_cast<int>(idx / graph.width);
      if (ref.fore_mask && !(*ref.fore_mask)(0, y, x))
        continue;
      if (!ref_depth.is_valid(x, y))
        continue;
      const PixelCoord p{static_cast<double>(x), static_cast<double>(y)};
      const double d_ref = ref_depth.at(x, y);

      GraphEntry entry;
      entry.pixel = static_cast<std::uint32_t>(idx);
      for (const ViewRecord* tgt : targets)
      {
        if (tgt->id == ref_view)
        {
          entry.matches.push_back(
            {ref_view, p, 0.0, match_weight(0.0, options.mu), 0.0, p});
          continue;
        }
        const Projection fwd =
          tgt->camera.coincides(ref.camera)
            ? Projection{p, d_ref, ProjectionStatus::ok}
            : reproject_checked(p, d_ref, ref.camera, tgt->camera);
        if (!fwd.ok())
          continue;
        const DepthSample d_k = interpolate_depth(*tgt->depth, fwd.pixel);
        if (!d_k.valid)
          continue;
        const int tx = nearest_index(fwd.pixel.u, tgt->camera.width);
        const int ty = nearest_index(fwd.pixel.v, tgt->camera.height);
        if (tgt->fore_mask && !(*tgt->fore_mask)(0, ty, tx))
          continue;
        const double delta = std::abs(fwd.depth - d_k.depth);
        if (!depth_filter(delta, options.tau_d))
          continue;
        const bool coincident = tgt->camera.coincides(ref.camera);
        const Projection back =
          coincident
            ? Projection{p, d_k.depth, ProjectionStatus::ok}
            : project_checked(ref.camera, backproject_unchecked(tgt->camera,
                                                                fwd.pixel, d_k.depth));
        if (!back.ok() || !cycle_filter(p, back.pixel, options.tau_p))
          continue;

        PixelCoord back_pixel = back.pixel;
        if (coincident)
          back_pixel = {static_cast<double>(tx), static_cast<double>(ty)};
        else if (tgt->depth->is_valid(tx, ty))
        {
          const PixelCoord center{static_cast<double>(tx), static_cast<double>(ty)};
          const Projection c = project_checked(
            ref.camera,
            backproject_unchecked(tgt->camera, center, tgt->depth->at(tx, ty)));
          if (c.ok())
            back_pixel = c.pixel;
        }
        entry.matches.push_back({tgt->id, fwd.pixel, delta,
                                 match_weight(delta, options.mu),
                                 pixel_distance(p, back.pixel), back_pixel});
      }
      normalize_weights(entry.matches);
      out.push_back(std::move(entry));
    }
  });

  for (auto& part : partial)
    for (auto& e : part)
      graph.entries.push_back(std::move(e));
  graph.rebuild_lookup();
  return graph;
}

inline CorrespondenceGraph build_graph(const SceneBundle& bundle, int ref_view,
                                       std::vector<int> candidate_views,
                                       const PipelineConfig& config)
{
  return build_graph(bundle, ref_view, std::move(candidate_views),
                     graph_options(bundle, config));
}

/// Candidate views for `ref_view`: all views when `window` is 0, otherwise
/// views within `window` positions in bundle order.
inline std::vector<int> candidate_window(const SceneBundle& bundle, int ref_view,
                                         int window)
{
  std::vector<int> out;
  const auto ref_index = static_cast<long>(bundle.index_of(ref_view));
  for (std::size_t i = 0; i < bundle.views.size(); ++i)
    if (window == 0 || std::abs(static_cast<long>(i) - ref_index) <= window)
      out.push_back(bundle.views[i].id);
  return out;
}

/// One graph per view, in bundle order.
using GraphSet = std::vector<CorrespondenceGraph>;

inline GraphSet build_graph_set(const SceneBundle& bundle,
                                const GraphOptions& options, int window = 0)
{
  GraphSet graphs;
  graphs.reserve(bundle.views.size());
  for (const auto& v : bundle.views)
    graphs.push_back(
      build_graph(bundle, v.id, candidate_window(bundle, v.id, window), options));
  return graphs;
}

struct PixelPair
{
  int ref_x = 0;
  int ref_y = 0;
  PixelCoord ref_subpixel; // anchor location sampled for the target pixel
  int tgt_x = 0;
  int tgt_y = 0;
};

/// Valid-correspondence masks between an anchor and one neighbor.
struct ValidMaskPair
{
  BinaryMask ref_mask;
  BinaryMask tgt_mask;
  std::vector<PixelPair> pairing;
};

/// Rasterizes the anchor graph's matches into `neighbor_id` at image
/// resolution. Target collisions keep the lowest reference pixel index.
inline ValidMaskPair extract_valid_pair(const CorrespondenceGraph& graph,
                                        int anchor_id, int neighbor_id)
{
  if (graph.ref_view != anchor_id)
    throw ArgumentError("graph reference " + std::to_string(graph.ref_view) +
                        " is not anchor " + std::to_string(anchor_id));
  if (!graph.has_candidate(neighbor_id))
    throw UnknownViewError("view " + std::to_string(neighbor_id) +
                           " is not a candidate of graph " +
                           std::to_string(anchor_id));
  ValidMaskPair out;
  out.ref_mask = make_mask(graph.height, graph.width);
  out.tgt_mask = make_mask(graph.height, graph.width);
  for (const auto& entry : graph.entries)
    for (const auto& m : entry.matches)
    {
      if (m.view_id != neighbor_id)
        continue;
      const int tx = nearest_index(m.pixel.u, graph.width);
      const int ty = nearest_index(m.pixel.v, graph.height);
      if (out.tgt_mask(0, ty, tx))
        break;
      const int rx = static_cast<int>(entry.pixel % graph.width);
      const int ry = static_cast<int>(entry.pixel / graph.width);
      out.tgt_mask(0, ty, tx) = 1;
      out.ref_mask(0, ry, rx) = 1;
      out.pairing.push_back({rx, ry, m.back_pixel, tx, ty});
      break;
    }
  return out;
}

/// Per-view match-count statistics for debugging dumps.
inline nlohmann::json graph_stats(const CorrespondenceGraph& graph)
{
  std::map<int, std::size_t> per_view;
  std::map<std::size_t, std::size_t> histogram;
  double max_delta = 0.0;
  for (const auto& e : graph.entries)
  {
    histogram[e.matches.size()]++;
    for (const auto& m : e.matches)
    {
      per_view[m.view_id]++;
      max_delta = std::max(max_delta, m.delta);
    }
  }
  nlohmann::json j;
  j["ref_view"] = graph.ref_view;
  j["reference_pixels"] = graph.entries.size();
  j["matches"] = graph.match_count();
  nlohmann::json views = nlohmann::json::object();
  for (const auto& [id, n] : per_view)
    views[std::to_string(id)] = n;
  j["matches_per_view"] = views;
  nlohmann::json hist = nlohmann::json::object();
  for (const auto& [k, n] : histogram)
    hist[std::to_string(k)] = n;
  j["matches_per_pixel_histogram"] = hist;
  j["max_delta"] = max_delta;
  return j;
}

} // namespace syncnoise
