#pragma once

#include <syncnoise/syncnoise.hpp>

#include <gtest/gtest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <unistd.h>

namespace testutil {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir
{
public:
  TempDir()
  {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("syncnoise_test_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir()
  {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

private:
  std::filesystem::path path_;
};

inline void write_text(const std::filesystem::path& p, const std::string& text)
{
  std::ofstream out(p, std::ios::binary);
  out << text;
}

inline std::string read_text(const std::filesystem::path& p)
{
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline syncnoise::GridTensor random_grid(int c, int h, int w, std::mt19937_64& rng,
                                         double lo = -1.0, double hi = 1.0)
{
  std::uniform_real_distribution<double> dist(lo, hi);
  syncnoise::GridTensor g(c, h, w);
  for (auto& v : g.values())
    v = dist(rng);
  return g;
}

inline syncnoise::Camera simple_camera(double f = 100.0, double c = 50.0,
                                       int size = 101)
{
  syncnoise::Camera cam;
  cam.fx = cam.fy = f;
  cam.cx = cam.cy = c;
  cam.width = cam.height = size;
  return cam;
}

/// Two-view plane scene with a narrow baseline.
inline syncnoise::SyntheticScene plane_scene(int views = 2, int res = 64,
                                             double span_deg = 30.0)
{
  syncnoise::SyntheticOptions o;
  o.views = views;
  o.resolution = res;
  o.plane_span_deg = span_deg;
  return syncnoise::make_synthetic_scene(syncnoise::SyntheticKind::plane, o);
}

inline double max_abs_diff(const syncnoise::GridTensor& a,
                           const syncnoise::GridTensor& b)
{
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
  return m;
}

} // namespace testutil
