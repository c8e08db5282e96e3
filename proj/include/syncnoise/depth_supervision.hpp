#pragma once

#include <syncnoise/camera.hpp>
#include <syncnoise/errors.hpp>
#include <syncnoise/scene.hpp>

#include <cmath>
#include <cstddef>
#include <vector>

namespace syncnoise {

struct KeypointResidual
{
  int view_id = 0;
  PixelCoord pixel;
  double residual = 0.0; // sampled depth - keypoint camera depth
};

struct DepthLossReport
{
  double loss = 0.0; // mean |residual| over valid observations
  std::vector<KeypointResidual> residuals;
};

/// Mean absolute difference between each view's depth at the observed pixel
/// and the keypoint's depth in that camera. Observations on invalid depth
/// pixels, or views without depth, are skipped.
inline DepthLossReport keypoint_depth_loss(const SceneBundle& bundle)
{
  if (bundle.points3d.empty())
    throw NoObservationsError("keypoint set is empty");
  DepthLossReport report;
  double sum = 0.0;
  for (const auto& kp : bundle.points3d)
    for (const auto& obs : kp.observations)
    {
      const ViewRecord& view = bundle.view(obs.view_id);
      if (!view.depth)
        continue;
      const DepthSample s = sample_depth(*view.depth, obs.pixel);
      if (!s.valid)
        continue;
      const double z = view.camera.to_camera(kp.position).z();
      const double r = s.depth - z;
      report.residuals.push_back({obs.view_id, obs.pixel, r});
      sum += std::abs(r);
    }
  if (report.residuals.empty())
    throw NoObservationsError("no keypoint observation hits a valid depth pixel");
  report.loss = sum / static_cast<double>(report.residuals.size());
  return report;
}

/// A keypoint constraint resolved to one pixel of one depth map.
struct DepthTarget
{
  int x = 0;
  int y = 0;
  double depth = 0.0;
};

/// Keypoint targets for one view: nearest pixel of each observation and the
/// keypoint's camera depth.
inline std::vector<DepthTarget> depth_targets(const SceneBundle& bundle,
                                              int view_id)
{
  const ViewRecord& view = bundle.view(view_id);
  std::vector<DepthTarget> out;
  for (const auto& kp : bundle.points3d)
    for (const auto& obs : kp.observations)
    {
      if (obs.view_id != view_id)
        continue;
      const double z = view.camera.to_camera(kp.position).z();
      if (!(z > 0))
        continue;
      out.push_back({nearest_index(obs.pixel.u, view.camera.width),
                     nearest_index(obs.pixel.v, view.camera.height), z});
    }
  return out;
}

/// Smoothed energy used by the depth refiner:
///   sum_k sqrt(r_k^2 + e^2) + lambda * sum_p sqrt(dx^2 + dy^2 + e^2)
/// with forward differences between valid neighbors. The Charbonnier
/// smoothing `eps` keeps the objective differentiable.
struct DepthEnergy
{
  const std::vector<DepthTarget>* targets = nullptr;
  const BinaryMask* valid = nullptr;
  double lambda = 0.1;
  double eps = 0.05;

  double value(const GridTensor& depth) const
  {
    double e = 0.0;
    for (const auto& t : *targets)
    {
      const double r = depth(0, t.y, t.x) - t.depth;
      e += std::sqrt(r * r + eps * eps);
    }
    if (lambda == 0.0)
      return e;
    const int w = depth.width();
    const int h = depth.height();
    double tv = 0.0;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
      {
        if (!(*valid)(0, y, x))
          continue;
        const double d = depth(0, y, x);
        const double dx =
          x + 1 < w && (*valid)(0, y, x + 1) ? depth(0, y, x + 1) - d : 0.0;
        const double dy =
          y + 1 < h && (*valid)(0, y + 1, x) ? depth(0, y + 1, x) - d : 0.0;
        tv += std::sqrt(dx * dx + dy * dy + eps * eps);
      }
    return e + lambda * tv;
  }

  /// Analytic gradient; zero on invalid pixels.
  GridTensor gradient(const GridTensor& depth) const
  {
    const int w = depth.width();
    const int h = depth.height();
    GridTensor g(1, h, w, 0.0);
    for (const auto& t : *targets)
    {
      const double r = depth(0, t.y, t.x) - t.depth;
      g(0, t.y, t.x) += r / std::sqrt(r * r + eps * eps);
    }
    if (lambda != 0.0)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
        {
          if (!(*valid)(0, y, x))
            continue;
          const double d = depth(0, y, x);
          const bool has_x = x + 1 < w && (*valid)(0, y, x + 1);
          const bool has_y = y + 1 < h && (*valid)(0, y + 1, x);
          const double dx = has_x ? depth(0, y, x + 1) - d : 0.0;
          const double dy = has_y ? depth(0, y + 1, x) - d : 0.0;
          const double inv = lambda / std::sqrt(dx * dx + dy * dy + eps * eps);
          if (has_x)
          {
            g(0, y, x + 1) += dx * inv;
            g(0, y, x) -= dx * inv;
          }
          if (has_y)
          {
            g(0, y + 1, x) += dy * inv;
            g(0, y, x) -= dy * inv;
          }
        }
    for (std::size_t i = 0; i < g.size(); ++i)
      if (!valid->values()[i])
        g.values()[i] = 0.0;
    return g;
  }
};

struct RefineOptions
{
  double smoothness_lambda = 0.1;
  int steps = 100;
  double step_size = 0.01;
  double eps = 0.05;
};

/// Gradient descent on keypoint L1 + lambda * TV (both Charbonnier-smoothed).
///
/// A step that raises the energy is rejected and the step size halved, so
/// the energy is non-increasing over accepted steps. Only valid pixels move.
inline DepthMap refine_depth(const DepthMap& depth,
                             const std::vector<DepthTarget>& targets,
                             const RefineOptions& options)
{
  if (options.steps < 0 || !(options.step_size > 0))
    throw ArgumentError("refine_depth needs steps >= 0 and step_size > 0");
  DepthMap out = depth;
  if (options.steps == 0)
    return out;

  std::vector<DepthTarget> usable;
  for (const auto& t : targets)
    if (depth.is_valid(t.x, t.y))
      usable.push_back(t);
  const DepthEnergy energy{&usable, &depth.valid, options.smoothness_lambda,
                           options.eps};

  GridTensor current = depth.values;
  double e_current = energy.value(current);
  double step = options.step_size;
  for (int it = 0; it < options.steps; ++it)
  {
    const GridTensor g = energy.gradient(current);
    GridTensor trial = current;
    for (std::size_t i = 0; i < trial.size(); ++i)
      trial.values()[i] -= step * g.values()[i];
    const double e_trial = energy.value(trial);
    if (e_trial <= e_current)
    {
      current = std::move(trial);
      e_current = e_trial;
    }
    else
    {
      step *= 0.5;
    }
  }
  for (int y = 0; y < depth.height(); ++y)
    for (int x = 0; x < depth.width(); ++x)
      if (depth.is_valid(x, y))
        out.set(x, y, current(0, y, x));
  return out;
}

inline DepthMap refine_depth(const DepthMap& depth,
                             const std::vector<DepthTarget>& targets,
                             double smoothness_lambda, int steps,
                             double step_size)
{
  return refine_depth(depth, targets,
                      RefineOptions{smoothness_lambda, steps, step_size});
}

} // namespace syncnoise
