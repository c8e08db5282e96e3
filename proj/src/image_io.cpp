#include <syncnoise/image_io.hpp>

#include <png.h>

#include <cstring>

namespace syncnoise {

GridTensor read_png(const std::filesystem::path& path, int channels)
{
  if (channels != 1 && channels != 3)
    throw ArgumentError("read_png expects 1 or 3 channels");
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    throw FormatError(path.string() + ": " + image.message);
  image.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr))
  {
    const std::string msg = image.message;
    png_image_free(&image);
    throw FormatError(path.string() + ": " + msg);
  }
  const int width = static_cast<int>(image.width);
  const int height = static_cast<int>(image.height);
  GridTensor out(channels, height, width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < channels; ++c)
        out(c, y, x) = buffer[(static_cast<std::size_t>(y) * width + x) *
                                channels + c] / 255.0;
  return out;
}

void write_png(const std::filesystem::path& path, const GridTensor& image)
{
  if (image.channels() != 1 && image.channels() != 3)
    throw ArgumentError("write_png expects 1 or 3 channels");
  const int width = image.width();
  const int height = image.height();
  const int channels = image.channels();
  std::vector<std::uint8_t> buffer(static_cast<std::size_t>(width) * height *
                                   channels);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < channels; ++c)
        buffer[(static_cast<std::size_t>(y) * width + x) * channels + c] =
          detail::quantize8(image(c, y, x));

  png_image desc;
  std::memset(&desc, 0, sizeof(desc));
  desc.version = PNG_IMAGE_VERSION;
  desc.width = static_cast<png_uint_32>(width);
  desc.height = static_cast<png_uint_32>(height);
  desc.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&desc, path.c_str(), 0, buffer.data(), 0,
                               nullptr))
    throw IoError(path.string() + ": " + desc.message);
}

} // namespace syncnoise
