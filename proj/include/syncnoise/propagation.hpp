#pragma once

#include <syncnoise/correspondence.hpp>
#include <syncnoise/errors.hpp>
#include <syncnoise/grid.hpp>
#include <syncnoise/noise_sync.hpp>
#include <syncnoise/predictor.hpp>
#include <syncnoise/schedule.hpp>

#include <algorithm>
#include <cstddef>
#include <map>
#include <vector>

namespace syncnoise {

struct AnchorGroup
{
  std::vector<int> members; // view ids, bundle order
  int anchor = 0;
};

struct AnchorPlan
{
  std::vector<AnchorGroup> groups;
  double overlap_threshold = 0.8;
};

/// Splits the views into consecutive groups of `group_size` (the last may be
/// shorter) and picks the highest-scoring view of each as its anchor; ties
/// go to the earliest view.
inline AnchorPlan select_anchors(const std::vector<int>& view_ids,
                                 const std::vector<double>& scores,
                                 int group_size, double overlap_threshold = 0.8)
{
  if (view_ids.empty())
    throw EmptyViewListError("no views to group");
  if (scores.size() != view_ids.size())
    throw ArgumentError("one score per view required");
  if (group_size < 1)
    throw ArgumentError("group_size must be >= 1");
  if (!(overlap_threshold > 0 && overlap_threshold <= 1))
    throw ArgumentError("overlap_threshold must lie in (0, 1]");
  AnchorPlan plan;
  plan.overlap_threshold = overlap_threshold;
  const auto step = static_cast<std::size_t>(group_size);
  for (std::size_t begin = 0; begin < view_ids.size(); begin += step)
  {
    const std::size_t end = std::min(view_ids.size(), begin + step);
    AnchorGroup g;
    std::size_t best = begin;
    for (std::size_t i = begin; i < end; ++i)
    {
      g.members.push_back(view_ids[i]);
      if (scores[i] > scores[best])
        best = i;
    }
    g.anchor = view_ids[best];
    plan.groups.push_back(std::move(g));
  }
  return plan;
}

/// Scores in bundle order from a score table; views missing from the table
/// (or an empty table) score 0, so the earliest view of each group wins.
inline std::vector<double> scores_for(const std::vector<int>& view_ids,
                                      const std::map<int, double>& table)
{
  std::vector<double> out;
  out.reserve(view_ids.size());
  for (int id : view_ids)
  {
    auto it = table.find(id);
    out.push_back(it == table.end() ? 0.0 : it->second);
  }
  return out;
}

struct EditedView
{
  int view_id = 0;
  GridTensor image;           // 3 x H x W in [0, 1]
  BinaryMask replaced_mask;   // pixels written by propagation
};

/// Copies anchor pixels into the neighbor along the valid pairing: bilinear
/// reads at the anchor subpixel location, nearest-pixel writes. Pixels
/// outside the pairing are left untouched.
inline EditedView propagate(const EditedView& anchor, const EditedView& neighbor,
                            const ValidMaskPair& pair)
{
  if (pair.tgt_mask.height() != neighbor.image.height() ||
      pair.tgt_mask.width() != neighbor.image.width() ||
      pair.ref_mask.height() != anchor.image.height() ||
      pair.ref_mask.width() != anchor.image.width() ||
      anchor.image.channels() != neighbor.image.channels())
    throw ShapeMismatchError("propagate: images do not match the valid pair");
  EditedView out = neighbor;
  out.replaced_mask = pair.tgt_mask;
  for (const PixelPair& p : pair.pairing)
    for (int c = 0; c < out.image.channels(); ++c)
      out.image(c, p.tgt_y, p.tgt_x) =
        sample_bilinear(anchor.image, c, p.ref_subpixel.u, p.ref_subpixel.v);
  return out;
}

/// Foreground pixels that propagation did not fill.
inline BinaryMask refinement_mask(const BinaryMask& fore_mask,
                                  const BinaryMask& replaced_mask)
{
  require_same_shape(fore_mask, replaced_mask, "refinement_mask");
  if (!is_subset(replaced_mask, fore_mask))
    throw MaskInconsistencyError("replaced pixels outside the foreground mask");
  BinaryMask out = fore_mask;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (replaced_mask.values()[i])
      out.values()[i] = 0;
  return out;
}

/// Fraction of the neighbor's foreground reached by the pairing.
inline double pair_coverage(const ValidMaskPair& pair,
                            const std::optional<BinaryMask>& neighbor_fore)
{
  const std::size_t denom =
    neighbor_fore ? popcount(*neighbor_fore) : pair.tgt_mask.plane_size();
  if (denom == 0)
    return 0.0;
  return static_cast<double>(pair.pairing.size()) / static_cast<double>(denom);
}

struct RefineSettings
{
  int latent_downscale = 8;
  std::string prompt;
};

/// Short masked re-edit of one view, conditioned on its current image.
///
/// The encoded image is first inverted along the schedule with the
/// image-only branch (deterministic DDIM inversion), then denoised with the
/// three-branch guidance whose text term is multiplied by the refinement
/// mask (area-averaged to latent size). An empty schedule is the identity.
inline EditedView masked_refine(const EditedView& view, Predictor& predictor,
                                const DenoiseSchedule& schedule,
                                const GuidanceConfig& guidance,
                                const BinaryMask& refine_mask,
                                const RefineSettings& settings)
{
  if (schedule.empty())
    return view;
  if (refine_mask.height() != view.image.height() ||
      refine_mask.width() != view.image.width())
    throw ShapeMismatchError("masked_refine: mask does not match image");

  GridTensor mask(1, refine_mask.height(), refine_mask.width());
  for (std::size_t i = 0; i < mask.size(); ++i)
    mask.values()[i] = refine_mask.values()[i] ? 1.0 : 0.0;
  const GridTensor latent_mask = downsample_area(mask, settings.latent_downscale);

  PredictorRequest req;
  req.view_id = view.view_id;
  req.condition_image = view.image;

  GridTensor x = predictor.encode(view.image, view.view_id);
  if (x.height() != latent_mask.height() || x.width() != latent_mask.width())
    throw PredictorProtocolError("encoded latent has wrong size");

  // Inversion: clean latent up to the first timestep.
  for (std::size_t k = schedule.size(); k-- > 0;)
  {
    req.latent = x;
    req.timestep = schedule.timestep(k);
    req.mode = Conditioning::image;
    req.prompt.clear();
    PredictorResponse r = detail::checked_predict(predictor, req);
    x = ddim_step(x, r.eps, schedule.next_sigma(k), schedule.sigma(k));
    if (!all_finite(x))
      throw NonFiniteLatentError(k, view.view_id);
  }

  constexpr Conditioning kModes[3] = {Conditioning::uncond, Conditioning::image,
                                      Conditioning::image_text};
  for (std::size_t step = 0; step < schedule.size(); ++step)
  {
    GridTensor eps[3];
    for (int mi = 0; mi < 3; ++mi)
    {
      PredictorRequest q;
      q.view_id = view.view_id;
      q.latent = x;
      q.timestep = schedule.timestep(step);
      q.mode = kModes[mi];
      if (kModes[mi] != Conditioning::uncond)
        q.condition_image = view.image;
      if (kModes[mi] == Conditioning::image_text)
        q.prompt = settings.prompt;
      eps[mi] = detail::checked_predict(predictor, q).eps;
    }
    const GridTensor e = masked_cfg(eps[0], eps[1], eps[2], guidance, latent_mask);
    x = ddim_step(x, e, schedule.sigma(step), schedule.next_sigma(step));
    if (!all_finite(x))
      throw NonFiniteLatentError(step, view.view_id);
  }

  EditedView out = view;
  out.image = predictor.decode(x, view.view_id);
  if (!out.image.same_shape(view.image))
    throw PredictorProtocolError("decoded image has wrong shape");
  return out;
}

} // namespace syncnoise
