#pragma once

#include <syncnoise/correspondence.hpp>
#include <syncnoise/errors.hpp>
#include <syncnoise/grid.hpp>
#include <syncnoise/predictor.hpp>
#include <syncnoise/scene.hpp>
#include <syncnoise/schedule.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <random>
#include <utility>
#include <vector>

namespace syncnoise {

struct GuidanceConfig
{
  double g_I = 1.5;
  double g_T = 7.5;
};

// ---------------------------------------------------------------------------
// Soft mask

namespace detail {

/// Sentinel for "no set pixel" in the distance transform.
inline constexpr double kFarDistance = 1e20;

/// 1D squared distance transform of sampled function f (lower envelope of
/// parabolas).
inline void sq_distance_1d(const std::vector<double>& f, std::vector<double>& d,
                           std::vector<int>& v, std::vector<double>& z)
{
  const int n = static_cast<int>(f.size());
  int k = 0;
  v[0] = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  for (int q = 1; q < n; ++q)
  {
    double s = 0.0;
    while (true)
    {
      const int p = v[k];
      s = ((f[q] + double(q) * q) - (f[p] + double(p) * p)) / (2.0 * (q - p));
      if (s <= z[k] && k > 0)
        --k;
      else
        break;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (int q = 0; q < n; ++q)
  {
    while (z[k + 1] < q)
      ++k;
    const double dq = q - v[k];
    d[q] = std::min(dq * dq + f[v[k]], kFarDistance);
  }
}

} // namespace detail

/// Exact squared Euclidean distance from each pixel center to the nearest
/// set pixel center (0 on set pixels, kFarDistance when nothing is set).
inline GridTensor squared_distance_transform(const BinaryMask& mask)
{
  const int h = mask.height();
  const int w = mask.width();
  const double inf = detail::kFarDistance;
  GridTensor out(1, h, w, inf);
  const int n = std::max(h, w);
  std::vector<double> f, d;
  std::vector<int> v(n);
  std::vector<double> z(n + 1);
  // Columns first, then rows.
  f.resize(h);
  d.resize(h);
  for (int x = 0; x < w; ++x)
  {
    for (int y = 0; y < h; ++y)
      f[y] = mask(0, y, x) ? 0.0 : inf;
    detail::sq_distance_1d(f, d, v, z);
    for (int y = 0; y < h; ++y)
      out(0, y, x) = d[y];
  }
  f.resize(w);
  d.resize(w);
  for (int y = 0; y < h; ++y)
  {
    for (int x = 0; x < w; ++x)
      f[x] = out(0, y, x);
    detail::sq_distance_1d(f, d, v, z);
    for (int x = 0; x < w; ++x)
      out(0, y, x) = d[x];
  }
  return out;
}

struct SoftMask
{
  GridTensor weights; // 1 x H x W in [0, 1]
};

/// 1 on the foreground; outside it 0.5 * (1 - dist / decay_radius) clamped at
/// zero, with dist the Euclidean distance to the nearest foreground pixel.
inline SoftMask build_soft_mask(const BinaryMask& fore_mask, double decay_radius)
{
  if (!(decay_radius > 0))
    throw ArgumentError("decay_radius must be positive");
  if (popcount(fore_mask) == 0)
    throw EmptyMaskError("foreground mask is empty");
  const GridTensor d2 = squared_distance_transform(fore_mask);
  SoftMask m{GridTensor(1, fore_mask.height(), fore_mask.width(), 0.0)};
  for (std::size_t i = 0; i < d2.size(); ++i)
  {
    if (fore_mask.values()[i])
      m.weights.values()[i] = 1.0;
    else
      m.weights.values()[i] =
        std::max(0.0, 0.5 * (1.0 - std::sqrt(d2.values()[i]) / decay_radius));
  }
  return m;
}

// ---------------------------------------------------------------------------
// Guidance

/// eps_u + g_I (eps_i - eps_u) + g_T (eps_f - eps_i) * M, elementwise. The
/// mask has one channel (broadcast) or as many as the noise grids.
inline GridTensor masked_cfg(const GridTensor& eps_uncond, const GridTensor& eps_img,
                             const GridTensor& eps_full,
                             const GuidanceConfig& guidance,
                             const GridTensor& soft_mask)
{
  require_same_shape(eps_uncond, eps_img, "masked_cfg");
  require_same_shape(eps_uncond, eps_full, "masked_cfg");
  if (soft_mask.height() != eps_uncond.height() ||
      soft_mask.width() != eps_uncond.width() ||
      (soft_mask.channels() != 1 &&
       soft_mask.channels() != eps_uncond.channels()))
    throw ShapeMismatchError("masked_cfg: mask shape does not match noise");
  const bool broadcast = soft_mask.channels() == 1;
  GridTensor out(eps_uncond.channels(), eps_uncond.height(), eps_uncond.width());
  const std::size_t plane = eps_uncond.plane_size();
  for (int c = 0; c < eps_uncond.channels(); ++c)
    for (std::size_t p = 0; p < plane; ++p)
    {
      const double u = eps_uncond.at_index(c, p);
      const double i = eps_img.at_index(c, p);
      const double f = eps_full.at_index(c, p);
      const double m = soft_mask.at_index(broadcast ? 0 : c, p);
      out.at_index(c, p) = u + guidance.g_I * (i - u) + guidance.g_T * (f - i) * m;
    }
  return out;
}

/// Unmasked two-scale guidance: eps_u + g_I (eps_i - eps_u) + g_T (eps_f - eps_i).
inline GridTensor dual_cfg(const GridTensor& eps_uncond, const GridTensor& eps_img,
                           const GridTensor& eps_full,
                           const GuidanceConfig& guidance)
{
  require_same_shape(eps_uncond, eps_img, "dual_cfg");
  require_same_shape(eps_uncond, eps_full, "dual_cfg");
  GridTensor out = eps_uncond;
  for (std::size_t k = 0; k < out.size(); ++k)
  {
    const double u = eps_uncond.values()[k];
    const double i = eps_img.values()[k];
    const double f = eps_full.values()[k];
    out.values()[k] = u + guidance.g_I * (i - u) + guidance.g_T * (f - i);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cross-view aggregation

struct CellLink
{
  std::uint32_t view_index = 0; // position in the graph set
  std::uint32_t cell = 0;       // y * grid_width + x
  double weight = 0.0;
};

struct CellLinks
{
  std::uint32_t cell = 0;
  std::vector<CellLink> sources; // weights sum to one
};

/// Correspondence graphs mapped onto a coarser grid, per view in graph order.
struct GridLinks
{
  int grid_height = 0;
  int grid_width = 0;
  std::vector<std::vector<CellLinks>> views;
};

/// Maps image-resolution correspondences onto an H x W grid whose cell size
/// divides the image size. A pixel at (u, v) falls in cell
/// floor((u + 0.5) / factor); when several reference pixels share a cell the
/// lowest pixel index wins. Matches into views outside the graph set are
/// dropped and the rest renormalized.
inline GridLinks build_grid_links(const GraphSet& graphs, int grid_height,
                                  int grid_width)
{
  GridLinks links;
  links.grid_height = grid_height;
  links.grid_width = grid_width;
  links.views.resize(graphs.size());
  if (graphs.empty())
    return links;
  if (grid_height < 1 || grid_width < 1)
    throw ShapeMismatchError("grid must be nonempty");

  std::map<int, std::uint32_t> index_of;
  for (std::size_t i = 0; i < graphs.size(); ++i)
    index_of[graphs[i].ref_view] = static_cast<std::uint32_t>(i);

  for (std::size_t vi = 0; vi < graphs.size(); ++vi)
  {
    const CorrespondenceGraph& g = graphs[vi];
    if (g.width % grid_width != 0 || g.height % grid_height != 0 ||
        g.width / grid_width != g.height / grid_height)
      throw ShapeMismatchError(
        "grid " + std::to_string(grid_height) + "x" + std::to_string(grid_width) +
        " does not evenly divide image " + std::to_string(g.height) + "x" +
        std::to_string(g.width));
    const int factor = g.width / grid_width;
    auto cell_of = [&](double u, double v) {
      const int cx = std::clamp(static_cast<int>(std::floor((u + 0.5) / factor)),
                                0, grid_width - 1);
      const int cy = std::clamp(static_cast<int>(std::floor((v + 0.5) / factor)),
                                0, grid_height - 1);
      return static_cast<std::uint32_t>(cy * grid_width + cx);
    };

    std::vector<std::uint8_t> taken(static_cast<std::size_t>(grid_width) *
                                      grid_height,
                                    0);
    auto& out = links.views[vi];
    for (const auto& entry : g.entries)
    {
      const std::uint32_t cell =
        cell_of(entry.pixel % g.width, static_cast<double>(entry.pixel / g.width));
      if (taken[cell])
        continue;
      taken[cell] = 1;
      CellLinks cl;
      cl.cell = cell;
      double total = 0.0;
      for (const auto& m : entry.matches)
      {
        auto it = index_of.find(m.view_id);
        if (it == index_of.end())
          continue;
        cl.sources.push_back({it->second, cell_of(m.pixel.u, m.pixel.v), m.weight});
        total += m.weight;
      }
      if (cl.sources.empty() || !(total > 0))
        continue;
      for (auto& s : cl.sources)
        s.weight /= total;
      out.push_back(std::move(cl));
    }
  }
  return links;
}

/// Weighted cross-view sum at linked cells; other cells copy through.
/// Reads only the inputs, so the result does not depend on view order.
inline std::vector<GridTensor> aggregate(const std::vector<GridTensor>& grids,
                                         const GridLinks& links)
{
  if (grids.size() != links.views.size())
    throw ShapeMismatchError("aggregate: " + std::to_string(grids.size()) +
                             " grids for " + std::to_string(links.views.size()) +
                             " graphs");
  for (const auto& g : grids)
  {
    require_same_shape(g, grids.front(), "aggregate");
    if (g.height() != links.grid_height || g.width() != links.grid_width)
      throw ShapeMismatchError("aggregate: grid does not match link resolution");
  }
  std::vector<GridTensor> out = grids;
  for (std::size_t v = 0; v < grids.size(); ++v)
    for (const CellLinks& cl : links.views[v])
      for (int c = 0; c < grids[v].channels(); ++c)
      {
        // Offsets from the first contributor; equal contributors are exact.
        const CellLink& first = cl.sources.front();
        const double base = grids[first.view_index].at_index(c, first.cell);
        double acc = 0.0;
        for (const CellLink& s : cl.sources)
          acc += s.weight * (grids[s.view_index].at_index(c, s.cell) - base);
        out[v].at_index(c, cl.cell) = base + acc;
      }
  return out;
}

/// Initial noise alignment: each matched latent cell becomes the weighted sum
/// of the noises at its correspondences.
inline std::vector<GridTensor> align_initial_noise(
  const std::vector<GridTensor>& noises, const GraphSet& graphs,
  int latent_downscale)
{
  if (noises.size() != graphs.size())
    throw ShapeMismatchError("one noise grid per graph required");
  if (noises.empty())
    return {};
  for (const auto& n : noises)
    require_same_shape(n, noises.front(), "align_initial_noise");
  const GridTensor& first = noises.front();
  for (const auto& g : graphs)
    if (g.width != first.width() * latent_downscale ||
        g.height != first.height() * latent_downscale)
      throw ShapeMismatchError("noise grid is not image size / latent_downscale");
  return aggregate(noises, build_grid_links(graphs, first.height(), first.width()));
}

/// Per-layer feature aggregation across views.
inline std::vector<GridTensor> aggregate_features(
  const std::vector<FeatureMap>& features, const GraphSet& graphs, int layer_id,
  const std::vector<int>& aligned_layers)
{
  if (std::find(aligned_layers.begin(), aligned_layers.end(), layer_id) ==
      aligned_layers.end())
    throw UnknownLayerError("layer " + std::to_string(layer_id) +
                            " is not an aligned layer");
  std::vector<GridTensor> grids;
  grids.reserve(features.size());
  for (const auto& f : features)
  {
    auto it = f.find(layer_id);
    if (it == f.end())
      throw UnknownLayerError("view features lack layer " +
                              std::to_string(layer_id));
    grids.push_back(it->second);
  }
  if (grids.empty())
    return {};
  if (grids.size() != graphs.size())
    throw ShapeMismatchError("one feature map per graph required");
  return aggregate(grids, build_grid_links(graphs, grids.front().height(),
                                           grids.front().width()));
}

// ---------------------------------------------------------------------------
// Synchronized denoising

/// Standard-normal noise for one view, seeded by (seed, view_id).
inline GridTensor sample_noise(int channels, int height, int width,
                               std::uint64_t seed, int view_id)
{
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(view_id)};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> normal(0.0, 1.0);
  GridTensor g(channels, height, width);
  for (auto& v : g.values())
    v = normal(rng);
  return g;
}

struct SyncOptions
{
  GuidanceConfig guidance;
  std::vector<int> aligned_layers{5, 8};
  int latent_downscale = 8;
  double decay_radius = 16.0;
  std::string prompt;
  bool align_features = true;
  bool predictor_scheduler = false; // delegate the update to the predictor
};

struct SyncResult
{
  std::vector<GridTensor> latents; // clean latents, bundle order
  std::vector<GridTensor> images;  // decoded, 3 x H x W
};

/// Soft mask at latent resolution (area average); all ones without a
/// foreground mask.
inline GridTensor latent_soft_mask(const ViewRecord& view, double decay_radius,
                                   int latent_downscale)
{
  if (!view.fore_mask)
    return GridTensor(1, view.camera.height / latent_downscale,
                      view.camera.width / latent_downscale, 1.0);
  return downsample_area(build_soft_mask(*view.fore_mask, decay_radius).weights,
                         latent_downscale);
}

namespace detail {

inline PredictorResponse checked_predict(Predictor& predictor,
                                         const PredictorRequest& request)
{
  PredictorResponse r = predictor.predict(request);
  check_response(request, r);
  return r;
}

} // namespace detail

/// Denoises all views in lockstep from `initial_noise` (unit-variance noise
/// at latent resolution, one per view in bundle order).
///
/// Each step queries every view in the three conditioning modes. On steps
/// flagged for alignment the hooked features are aggregated across views and
/// every view is queried again with the aggregate injected. The three noise
/// estimates are combined with the soft-masked guidance and the latent is
/// advanced. The final latents are decoded by the predictor.
inline SyncResult run_synchronized_denoise(const SceneBundle& bundle,
                                           const GraphSet& graphs,
                                           Predictor& predictor,
                                           const DenoiseSchedule& schedule,
                                           const SyncOptions& options,
                                           const std::vector<GridTensor>& initial_noise)
{
  const std::size_t n = bundle.views.size();
  if (schedule.empty())
    throw ArgumentError("synchronized denoising needs a nonempty schedule");
  if (initial_noise.size() != n)
    throw ShapeMismatchError("one initial noise grid per view required");
  const bool aligning = options.align_features && !options.aligned_layers.empty();
  if (aligning && graphs.size() != n)
    throw ShapeMismatchError("one correspondence graph per view required");
  const int ds = options.latent_downscale;

  std::vector<GridTensor> masks(n);
  std::vector<GridTensor> latents(n);
  for (std::size_t v = 0; v < n; ++v)
  {
    const ViewRecord& view = bundle.views[v];
    if (view.image.channels() != 3 || view.camera.width % ds != 0 ||
        view.camera.height % ds != 0)
      throw ShapeMismatchError("view " + std::to_string(view.id) +
                               ": image must be 3 channels with size divisible "
                               "by the latent downscale");
    masks[v] = latent_soft_mask(view, options.decay_radius, ds);
    if (initial_noise[v].height() != masks[v].height() ||
        initial_noise[v].width() != masks[v].width())
      throw ShapeMismatchError("initial noise does not match latent size");
    latents[v] = initial_noise[v];
    for (auto& x : latents[v].values())
      x *= schedule.sigma(0);
  }

  std::map<std::pair<int, int>, GridLinks> link_cache;
  auto links_for = [&](const GridTensor& g) -> const GridLinks& {
    const auto key = std::make_pair(g.height(), g.width());
    auto it = link_cache.find(key);
    if (it == link_cache.end())
      it = link_cache.emplace(key, build_grid_links(graphs, g.height(), g.width()))
             .first;
    return it->second;
  };

  constexpr Conditioning kModes[3] = {Conditioning::uncond, Conditioning::image,
                                      Conditioning::image_text};
  for (std::size_t step = 0; step < schedule.size(); ++step)
  {
    const int t = schedule.timestep(step);
    const bool align = aligning && schedule.align_features(step);
    std::vector<GridTensor> eps[3];
    for (int mi = 0; mi < 3; ++mi)
    {
      std::vector<PredictorRequest> requests(n);
      std::vector<PredictorResponse> responses(n);
      for (std::size_t v = 0; v < n; ++v)
      {
        PredictorRequest& r = requests[v];
        r.latent = latents[v];
        r.timestep = t;
        r.mode = kModes[mi];
        r.view_id = bundle.views[v].id;
        if (kModes[mi] != Conditioning::uncond)
          r.condition_image = bundle.views[v].image;
        if (kModes[mi] == Conditioning::image_text)
          r.prompt = options.prompt;
        if (align)
          r.hook_layers = options.aligned_layers;
        responses[v] = detail::checked_predict(predictor, r);
      }
      if (align)
      {
        std::vector<FeatureMap> injected(n);
        for (int layer : options.aligned_layers)
        {
          std::vector<GridTensor> grids(n);
          for (std::size_t v = 0; v < n; ++v)
            grids[v] = std::move(responses[v].features.at(layer));
          for (const auto& g : grids)
            require_same_shape(g, grids.front(), "hook features");
          std::vector<GridTensor> agg = aggregate(grids, links_for(grids.front()));
          for (std::size_t v = 0; v < n; ++v)
            injected[v][layer] = std::move(agg[v]);
        }
        for (std::size_t v = 0; v < n; ++v)
        {
          requests[v].hook_layers.clear();
          requests[v].injected = std::move(injected[v]);
          responses[v] = detail::checked_predict(predictor, requests[v]);
        }
      }
      eps[mi].resize(n);
      for (std::size_t v = 0; v < n; ++v)
        eps[mi][v] = std::move(responses[v].eps);
    }

    for (std::size_t v = 0; v < n; ++v)
    {
      const GridTensor e =
        masked_cfg(eps[0][v], eps[1][v], eps[2][v], options.guidance, masks[v]);
      std::optional<GridTensor> next;
      if (options.predictor_scheduler)
        next = predictor.scheduler_step(
          latents[v], e, t,
          step + 1 < schedule.size() ? schedule.timestep(step + 1) : -1);
      latents[v] = next ? std::move(*next)
                        : ddim_step(latents[v], e, schedule.sigma(step),
                                    schedule.next_sigma(step));
      if (!all_finite(latents[v]))
        throw NonFiniteLatentError(step, bundle.views[v].id);
    }
  }

  SyncResult result;
  result.latents = latents;
  for (std::size_t v = 0; v < n; ++v)
  {
    GridTensor img = predictor.decode(latents[v], bundle.views[v].id);
    if (img.channels() != 3 || img.height() != bundle.views[v].camera.height ||
        img.width() != bundle.views[v].camera.width)
      throw PredictorProtocolError("decoded image has wrong shape");
    result.images.push_back(std::move(img));
  }
  return result;
}

} // namespace syncnoise
