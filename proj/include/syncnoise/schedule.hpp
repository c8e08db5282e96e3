#pragma once

#include <syncnoise/errors.hpp>
#include <syncnoise/grid.hpp>

#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

namespace syncnoise {

inline constexpr int kTrainTimesteps = 1000;

/// Noise level sigma_t = sqrt((1 - abar_t) / abar_t) of the scaled-linear
/// beta schedule (beta from 0.00085 to 0.012 over 1000 steps) used by latent
/// diffusion models.
inline double sigma_at(int timestep)
{
  static const std::array<double, kTrainTimesteps> table = [] {
    std::array<double, kTrainTimesteps> sigmas{};
    const double lo = std::sqrt(0.00085);
    const double hi = std::sqrt(0.012);
    double alpha_bar = 1.0;
    for (int i = 0; i < kTrainTimesteps; ++i)
    {
      const double s = lo + (hi - lo) * i / (kTrainTimesteps - 1);
      alpha_bar *= 1.0 - s * s;
      sigmas[i] = std::sqrt((1.0 - alpha_bar) / alpha_bar);
    }
    return sigmas;
  }();
  if (timestep < 0 || timestep >= kTrainTimesteps)
    throw ArgumentError("timestep " + std::to_string(timestep) +
                        " outside [0, 999]");
  return table[static_cast<std::size_t>(timestep)];
}

/// Strictly descending timesteps with a per-step feature-alignment flag.
///
/// Step i moves the latent from sigma(timesteps[i]) to sigma(timesteps[i+1]),
/// and the last step lands on the clean latent (sigma 0). An empty schedule
/// denotes "no denoising"; loops that need at least one step check for it.
class DenoiseSchedule
{
public:
  DenoiseSchedule() = default;

  explicit DenoiseSchedule(std::vector<int> timesteps)
    : timesteps_(std::move(timesteps))
    , align_(timesteps_.size(), true)
  {
    for (std::size_t i = 0; i < timesteps_.size(); ++i)
    {
      if (timesteps_[i] < 0 || timesteps_[i] >= kTrainTimesteps)
        throw ArgumentError("timestep outside [0, 999]");
      if (i > 0 && timesteps_[i] >= timesteps_[i - 1])
        throw ArgumentError("schedule timesteps must be strictly descending");
    }
  }

  /// `steps` evenly spaced timesteps from `t_max` down to 0.
  static DenoiseSchedule uniform(int steps, int t_max = kTrainTimesteps - 1)
  {
    if (steps < 0)
      throw ArgumentError("negative step count");
    if (t_max < 0 || t_max >= kTrainTimesteps || (steps > t_max + 1))
      throw ArgumentError("cannot fit " + std::to_string(steps) +
                          " steps below timestep " + std::to_string(t_max));
    std::vector<int> ts;
    for (int i = 0; i < steps; ++i)
      ts.push_back(steps == 1 ? t_max
                              : static_cast<int>(std::lround(
                                  t_max * static_cast<double>(steps - 1 - i) /
                                  (steps - 1))));
    return DenoiseSchedule(std::move(ts));
  }

  std::size_t size() const noexcept { return timesteps_.size(); }
  bool empty() const noexcept { return timesteps_.empty(); }
  int timestep(std::size_t i) const { return timesteps_.at(i); }
  const std::vector<int>& timesteps() const noexcept { return timesteps_; }

  bool align_features(std::size_t i) const { return align_.at(i); }
  void set_align_features(std::size_t i, bool on) { align_.at(i) = on; }
  void set_align_features(bool on) { align_.assign(align_.size(), on); }

  double sigma(std::size_t i) const { return sigma_at(timesteps_.at(i)); }
  double next_sigma(std::size_t i) const
  {
    return i + 1 < timesteps_.size() ? sigma(i + 1) : 0.0;
  }

private:
  std::vector<int> timesteps_;
  std::vector<bool> align_;
};

/// Deterministic DDIM (eta = 0) update in the sigma parameterization,
/// x_next = x + (sigma_next - sigma) * eps, where x is the latent divided by
/// sqrt(abar). A zero noise estimate leaves the latent unchanged.
inline GridTensor ddim_step(const GridTensor& latent, const GridTensor& eps,
                            double sigma, double sigma_next)
{
  require_same_shape(latent, eps, "ddim_step");
  GridTensor out = latent;
  const double ds = sigma_next - sigma;
  for (std::size_t i = 0; i < out.size(); ++i)
    out.values()[i] += ds * eps.values()[i];
  return out;
}

} // namespace syncnoise
