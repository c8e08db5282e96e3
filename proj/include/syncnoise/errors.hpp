#pragma once

#include <cstddef>
#include <exception>
#include <stdexcept>
#include <string>
#include <utility>

namespace syncnoise {

class Error : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

#define SYNCNOISE_DEFINE_ERROR(Name)                                           \
  class Name : public Error                                                    \
  {                                                                            \
  public:                                                                      \
    using Error::Error;                                                        \
  }

// Geometry.
SYNCNOISE_DEFINE_ERROR(BehindCamera);
SYNCNOISE_DEFINE_ERROR(OutOfFrame);
SYNCNOISE_DEFINE_ERROR(InvalidDepth);

// Ingestion and persistence.
SYNCNOISE_DEFINE_ERROR(MissingCameraError);
SYNCNOISE_DEFINE_ERROR(UnsupportedModelError);
SYNCNOISE_DEFINE_ERROR(SizeMismatchError);
SYNCNOISE_DEFINE_ERROR(FormatError);
SYNCNOISE_DEFINE_ERROR(IoError);
SYNCNOISE_DEFINE_ERROR(ConfigError);

// Pipeline data.
SYNCNOISE_DEFINE_ERROR(MissingDepthError);
SYNCNOISE_DEFINE_ERROR(UnknownViewError);
SYNCNOISE_DEFINE_ERROR(NoObservationsError);
SYNCNOISE_DEFINE_ERROR(ShapeMismatchError);
SYNCNOISE_DEFINE_ERROR(UnknownLayerError);
SYNCNOISE_DEFINE_ERROR(EmptyMaskError);
SYNCNOISE_DEFINE_ERROR(EmptyViewListError);
SYNCNOISE_DEFINE_ERROR(MaskInconsistencyError);
SYNCNOISE_DEFINE_ERROR(PredictorProtocolError);
SYNCNOISE_DEFINE_ERROR(ArgumentError);

#undef SYNCNOISE_DEFINE_ERROR

/// Malformed input line; carries the 1-based line number.
class ParseError : public Error
{
public:
  ParseError(const std::string& file, std::size_t line, const std::string& what)
    : Error(file + ":" + std::to_string(line) + ": " + what)
    , line_(line)
  {
  }

  std::size_t line() const noexcept { return line_; }

private:
  std::size_t line_;
};

/// A latent went NaN/inf during denoising; `step()` is the schedule index.
class NonFiniteLatentError : public Error
{
public:
  NonFiniteLatentError(std::size_t step, int view_id)
    : Error("non-finite latent at schedule step " + std::to_string(step) +
            " (view " + std::to_string(view_id) + ")")
    , step_(step)
  {
  }

  std::size_t step() const noexcept { return step_; }

private:
  std::size_t step_;
};

/// Pipeline failure tagged with the stage that raised it.
class StageError : public Error
{
public:
  StageError(std::string stage, const std::string& what,
             std::exception_ptr cause = nullptr)
    : Error("[" + stage + "] " + what)
    , stage_(std::move(stage))
    , cause_(std::move(cause))
  {
  }

  const std::string& stage() const noexcept { return stage_; }

  /// The original exception, rethrowable for type inspection.
  std::exception_ptr cause() const noexcept { return cause_; }

private:
  std::string stage_;
  std::exception_ptr cause_;
};

} // namespace syncnoise
