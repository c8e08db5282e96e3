#pragma once

#include <syncnoise/errors.hpp>
#include <syncnoise/grid.hpp>
#include <syncnoise/schedule.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace syncnoise {

enum class Conditioning : std::uint8_t
{
  uncond = 0,     // no image, no text
  image = 1,      // image only
  image_text = 2, // image and text
};

inline const char* to_string(Conditioning mode)
{
  switch (mode)
  {
    case Conditioning::uncond: return "uncond";
    case Conditioning::image: return "image";
    case Conditioning::image_text: return "image+text";
  }
  return "?";
}

/// Hooked activations keyed by decoder layer id (1..11).
using FeatureMap = std::map<int, GridTensor>;

struct PredictorRequest
{
  GridTensor latent; // sigma-parameterized latent
  int timestep = 0;
  Conditioning mode = Conditioning::uncond;
  int view_id = 0;
  GridTensor condition_image; // empty for uncond
  std::string prompt;         // empty unless mode is image_text
  std::vector<int> hook_layers;
  FeatureMap injected; // replaces the listed layer outputs when non-empty
};

struct PredictorResponse
{
  GridTensor eps;
  FeatureMap features;
};

/// Noise predictor behind the engine: a denoiser with feature hooks plus the
/// latent codec.
class Predictor
{
public:
  virtual ~Predictor() = default;

  virtual PredictorResponse predict(const PredictorRequest& request) = 0;
  virtual GridTensor encode(const GridTensor& image, int view_id) = 0;
  virtual GridTensor decode(const GridTensor& latent, int view_id) = 0;
  virtual int latent_channels() const = 0;

  /// Predictor-side sampler update; nullopt when not offered.
  virtual std::optional<GridTensor> scheduler_step(const GridTensor& /*latent*/,
                                                   const GridTensor& /*eps*/,
                                                   int /*timestep*/,
                                                   int /*next_timestep*/)
  {
    return std::nullopt;
  }
};

/// Throws PredictorProtocolError unless the response matches the request:
/// same noise shape as the latent, and hook features for exactly the
/// requested layers.
inline void check_response(const PredictorRequest& request,
                           const PredictorResponse& response)
{
  if (!response.eps.same_shape(request.latent))
    throw PredictorProtocolError("noise estimate shape does not match latent");
  if (!all_finite(response.eps))
    throw PredictorProtocolError("noise estimate contains non-finite values");
  std::vector<int> wanted = request.hook_layers;
  std::sort(wanted.begin(), wanted.end());
  wanted.erase(std::unique(wanted.begin(), wanted.end()), wanted.end());
  if (response.features.size() != wanted.size())
    throw PredictorProtocolError("hook features do not match requested layers");
  for (int layer : wanted)
  {
    auto it = response.features.find(layer);
    if (it == response.features.end())
      throw PredictorProtocolError("missing hook feature for layer " +
                                   std::to_string(layer));
    if (it->second.empty())
      throw PredictorProtocolError("empty hook feature for layer " +
                                   std::to_string(layer));
  }
}

/// Box-filter encoder with a residual decoder.
///
/// With a registered base image per view, decode returns
/// base + upsample(latent - encode(base)), so a latent equal to the encoded
/// base decodes to the base pixels exactly. Without one it upsamples.
class ResidualCodec
{
public:
  explicit ResidualCodec(int downscale = 1)
    : downscale_(downscale)
  {
    if (downscale < 1)
      throw ArgumentError("codec downscale must be >= 1");
  }

  int downscale() const noexcept { return downscale_; }

  void set_base(int view_id, GridTensor image)
  {
    GridTensor encoded = encode(image);
    bases_[view_id] = {std::move(image), std::move(encoded)};
  }

  GridTensor encode(const GridTensor& image) const
  {
    return downsample_area(image, downscale_);
  }

  GridTensor decode(const GridTensor& latent, int view_id) const
  {
    GridTensor out;
    auto it = bases_.find(view_id);
    if (it != bases_.end() && it->second.encoded.same_shape(latent))
    {
      GridTensor residual = latent;
      for (std::size_t i = 0; i < residual.size(); ++i)
        residual.values()[i] -= it->second.encoded.values()[i];
      out = upsample_nearest(residual, downscale_);
      for (std::size_t i = 0; i < out.size(); ++i)
        out.values()[i] += it->second.image.values()[i];
    }
    else
    {
      out = upsample_nearest(latent, downscale_);
    }
    for (auto& v : out.values())
      v = std::clamp(v, 0.0, 1.0);
    return out;
  }

private:
  struct Base
  {
    GridTensor image;
    GridTensor encoded;
  };
  int downscale_;
  std::map<int, Base> bases_;
};

/// Predicts zero noise and zero-valued hook features of the latent's shape.
class ZeroPredictor : public Predictor
{
public:
  explicit ZeroPredictor(ResidualCodec codec = ResidualCodec{1},
                         int channels = 3)
    : codec_(std::move(codec))
    , channels_(channels)
  {
  }

  PredictorResponse predict(const PredictorRequest& request) override
  {
    PredictorResponse r;
    r.eps = GridTensor(request.latent.channels(), request.latent.height(),
                       request.latent.width(), 0.0);
    for (int layer : request.hook_layers)
      r.features[layer] = r.eps;
    return r;
  }

  GridTensor encode(const GridTensor& image, int) override
  {
    return codec_.encode(image);
  }
  GridTensor decode(const GridTensor& latent, int view_id) override
  {
    return codec_.decode(latent, view_id);
  }
  int latent_channels() const override { return channels_; }

  ResidualCodec& codec() noexcept { return codec_; }

private:
  ResidualCodec codec_;
  int channels_;
};

/// Sets an RGB color's hue to `hue_rad` while keeping its luminance (channel
/// mean) and chroma magnitude, with a chroma floor of `min_chroma`.
/// Idempotent: recoloring an already recolored value is a no-op.
inline void recolor_pixel(double& r, double& g, double& b, double hue_rad,
                          double min_chroma)
{
  const double lum = (r + g + b) / 3.0;
  const double cr = r - lum, cg = g - lum, cb = b - lum;
  const double chroma = std::max(std::sqrt(cr * cr + cg * cg + cb * cb),
                                 min_chroma);
  // Orthonormal basis of the chroma plane (orthogonal to the gray axis).
  const double s6 = 1.0 / std::sqrt(6.0), s2 = 1.0 / std::sqrt(2.0);
  const double c = std::cos(hue_rad), s = std::sin(hue_rad);
  r = lum + chroma * (c * 2 * s6);
  g = lum + chroma * (c * -s6 + s * s2);
  b = lum + chroma * (c * -s6 - s * s2);
}

/// Deterministic stand-in for an instruction-conditioned editor.
///
/// Each conditioning mode is modeled as a per-cell Gaussian data prior
/// N(mean, spread^2), whose exact noise estimate is
///   eps = (x - x0_hat) / sigma,  x0_hat = mean + spread^2 * z / sqrt(spread^2 + sigma^2),
/// with z = (x - mean) / sqrt(spread^2 + sigma^2). Layer 5 carries z (the
/// normalized noise coordinate) and layer 8 carries the mean; injecting
/// either replaces it in x0_hat. Other layers expose a copy of the latent and
/// have no effect.
///
/// Modes: uncond -> mean 0.5, spread `uncond_spread`; image -> mean
/// encode(condition), spread 0; image+text -> mean recolor(encode(condition)),
/// spread `texture_sigma`. The text branch therefore shifts hue and adds a
/// noise-dependent texture, which the probability-flow ODE carries from the
/// initial noise to the final latent.
class SyntheticEditPredictor : public Predictor
{
public:
  static constexpr int kNoiseLayer = 5;
  static constexpr int kMeanLayer = 8;

  SyntheticEditPredictor(ResidualCodec codec, double hue_deg,
                         double texture_sigma, double uncond_spread = 0.2,
                         double min_chroma = 0.12)
    : codec_(std::move(codec))
    , hue_rad_(hue_deg * M_PI / 180.0)
    , texture_sigma_(texture_sigma)
    , uncond_spread_(uncond_spread)
    , min_chroma_(min_chroma)
  {
  }

  PredictorResponse predict(const PredictorRequest& request) override
  {
    const GridTensor& x = request.latent;
    if (x.channels() != 3)
      throw PredictorProtocolError("synthetic predictor expects 3 latent channels");
    const double sigma = sigma_at(request.timestep);

    GridTensor mean;
    double spread = 0.0;
    if (request.mode == Conditioning::uncond)
    {
      mean = GridTensor(3, x.height(), x.width(), 0.5);
      spread = uncond_spread_;
    }
    else
    {
      if (request.condition_image.empty())
        throw PredictorProtocolError("conditioned query without image");
      mean = codec_.encode(request.condition_image);
      if (!mean.same_shape(x))
        throw PredictorProtocolError("condition image does not match latent");
      if (request.mode == Conditioning::image_text)
      {
        spread = texture_sigma_;
        recolor(mean);
      }
    }

    const double scale = std::sqrt(spread * spread + sigma * sigma);
    GridTensor z(3, x.height(), x.width());
    for (std::size_t i = 0; i < z.size(); ++i)
      z.values()[i] = (x.values()[i] - mean.values()[i]) / scale;

    PredictorResponse response;
    for (int layer : request.hook_layers)
    {
      if (layer == kNoiseLayer)
        response.features[layer] = z;
      else if (layer == kMeanLayer)
        response.features[layer] = mean;
      else
        response.features[layer] = x;
    }

    const GridTensor& z_used = injected_or(request, kNoiseLayer, z);
    const GridTensor& mean_used = injected_or(request, kMeanLayer, mean);
    response.eps = GridTensor(3, x.height(), x.width());
    const double shrink = spread * spread / scale;
    for (std::size_t i = 0; i < x.size(); ++i)
    {
      const double x0 = mean_used.values()[i] + shrink * z_used.values()[i];
      response.eps.values()[i] = (x.values()[i] - x0) / sigma;
    }
    return response;
  }

  GridTensor encode(const GridTensor& image, int) override
  {
    return codec_.encode(image);
  }
  GridTensor decode(const GridTensor& latent, int view_id) override
  {
    return codec_.decode(latent, view_id);
  }
  int latent_channels() const override { return 3; }

  ResidualCodec& codec() noexcept { return codec_; }

  void recolor(GridTensor& rgb) const
  {
    const std::size_t n = rgb.plane_size();
    for (std::size_t i = 0; i < n; ++i)
      recolor_pixel(rgb.at_index(0, i), rgb.at_index(1, i), rgb.at_index(2, i),
                    hue_rad_, min_chroma_);
  }

private:
  static const GridTensor& injected_or(const PredictorRequest& request,
                                       int layer, const GridTensor& own)
  {
    auto it = request.injected.find(layer);
    if (it == request.injected.end())
      return own;
    if (!it->second.same_shape(own))
      throw PredictorProtocolError("injected feature for layer " +
                                   std::to_string(layer) + " has wrong shape");
    return it->second;
  }

  ResidualCodec codec_;
  double hue_rad_;
  double texture_sigma_;
  double uncond_spread_;
  double min_chroma_;
};

} // namespace syncnoise
