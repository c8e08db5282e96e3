#pragma once

#include <syncnoise/camera.hpp>
#include <syncnoise/errors.hpp>
#include <syncnoise/grid.hpp>
#include <syncnoise/image_io.hpp>
#include <syncnoise/scene.hpp>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace syncnoise {

enum class SyntheticKind
{
  plane,
  two_planes,
  cube,
};

inline SyntheticKind parse_synthetic_kind(const std::string& name)
{
  if (name == "plane")
    return SyntheticKind::plane;
  if (name == "two_planes")
    return SyntheticKind::two_planes;
  if (name == "cube")
    return SyntheticKind::cube;
  throw ArgumentError("unknown synthetic scene kind '" + name +
                      "' (expected plane, two_planes or cube)");
}

inline const char* to_string(SyntheticKind kind)
{
  switch (kind)
  {
    case SyntheticKind::plane: return "plane";
    case SyntheticKind::two_planes: return "two_planes";
    case SyntheticKind::cube: return "cube";
  }
  return "?";
}

/// Planar rectangle (infinite when a half extent is infinite) with a
/// procedural texture in its local (a, b) coordinates.
struct TexturedQuad
{
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();
  Eigen::Vector3d axis_a = Eigen::Vector3d::UnitX();
  Eigen::Vector3d axis_b = Eigen::Vector3d::UnitY();
  double half_a = std::numeric_limits<double>::infinity();
  double half_b = std::numeric_limits<double>::infinity();
  int material = 0;
  bool foreground = false;
  /// Restricts the foreground flag to |a| <= fore_half, |b| <= fore_half.
  double fore_half = std::numeric_limits<double>::infinity();
  std::string name;

  Eigen::Vector3d normal() const { return axis_a.cross(axis_b).normalized(); }
};

struct SurfaceHit
{
  bool hit = false;
  double depth = 0.0; // camera z
  Eigen::Vector3d point = Eigen::Vector3d::Zero();
  int quad = -1;
  bool foreground = false;
  Eigen::Vector3d color = Eigen::Vector3d::Zero();
};

/// Procedural albedo. Material 0 is a low-chroma checker used for
/// backgrounds; others are smooth patterns over a per-material base color.
inline Eigen::Vector3d texture_color(int material, double a, double b)
{
  if (material == 0)
  {
    const bool odd = (static_cast<long>(std::floor(a * 4.0)) +
                      static_cast<long>(std::floor(b * 4.0))) & 1;
    const double v = odd ? 0.56 : 0.40;
    return {v, v, v * 0.94};
  }
  static const Eigen::Vector3d bases[] = {
    {0.78, 0.36, 0.30}, {0.34, 0.66, 0.38}, {0.33, 0.45, 0.80},
    {0.80, 0.70, 0.30}, {0.64, 0.38, 0.72}, {0.30, 0.70, 0.72},
    {0.72, 0.52, 0.36},
  };
  const Eigen::Vector3d& base = bases[(material - 1) % 7];
  const double pi = 3.14159265358979323846;
  const double s = std::sin(2 * pi * 1.5 * a + 0.3 * material) *
                   std::sin(2 * pi * 1.5 * b - 0.2 * material);
  const double ring = std::cos(2 * pi * 0.9 * std::hypot(a, b));
  Eigen::Vector3d c = base * (0.82 + 0.12 * s) +
                      Eigen::Vector3d(0.05, -0.03, 0.04) * ring;
  return c.cwiseMax(0.0).cwiseMin(1.0);
}

struct SyntheticOptions
{
  int views = 8;
  int resolution = 128;
  /// Total azimuth span of the plane and two_planes orbits, in degrees.
  double plane_span_deg = 70.0;
  double plane_gap = 0.5;
  int keypoints = 200;
  std::uint64_t seed = 0;
};

/// Analytic scene with exact depth and a ray-cast visibility oracle.
class SyntheticScene
{
public:
  SyntheticKind kind = SyntheticKind::plane;
  SyntheticOptions options;
  std::vector<TexturedQuad> quads;
  SceneBundle bundle;

  /// Nearest surface along the ray through subpixel `pixel`.
  SurfaceHit cast(const Camera& cam, const PixelCoord& pixel) const
  {
    const Eigen::Vector3d eye = cam.center();
    const Eigen::Vector3d dir = cam.rotation.transpose() *
      Eigen::Vector3d((pixel.u - cam.cx) / cam.fx, (pixel.v - cam.cy) / cam.fy, 1.0);
    SurfaceHit best;
    best.depth = std::numeric_limits<double>::infinity();
    for (std::size_t qi = 0; qi < quads.size(); ++qi)
    {
      const TexturedQuad& q = quads[qi];
      const Eigen::Vector3d n = q.normal();
      const double denom = n.dot(dir);
      if (std::abs(denom) < 1e-12)
        continue;
      const double t = n.dot(q.origin - eye) / denom;
      if (!(t > 1e-9) || !(t < best.depth))
        continue;
      const Eigen::Vector3d p = eye + t * dir;
      const double a = (p - q.origin).dot(q.axis_a);
      const double b = (p - q.origin).dot(q.axis_b);
      if (std::abs(a) > q.half_a || std::abs(b) > q.half_b)
        continue;
      best.hit = true;
      best.depth = t;
      best.point = p;
      best.quad = static_cast<int>(qi);
      best.foreground =
        q.foreground && std::abs(a) <= q.fore_half && std::abs(b) <= q.fore_half;
      best.color = texture_color(q.material, a, b);
    }
    if (!best.hit)
      best.depth = 0.0;
    return best;
  }

  /// True when `point` projects into the frame of `cam` and is the first
  /// surface hit along that ray. `pixel` receives the projection.
  bool visible(const Camera& cam, const Eigen::Vector3d& point,
               PixelCoord* pixel = nullptr) const
  {
    const Projection proj = project_checked(cam, point);
    if (!proj.ok() || !cam.in_frame(proj.pixel))
      return false;
    if (pixel)
      *pixel = proj.pixel;
    const SurfaceHit h = cast(cam, proj.pixel);
    return h.hit && std::abs(h.depth - proj.depth) <= 1e-7 * proj.depth;
  }

  /// Names of cube faces facing away from the camera (or resting on the
  /// ground); empty for other kinds.
  std::vector<std::string> occluded_faces(const Camera& cam) const
  {
    std::vector<std::string> out;
    if (kind != SyntheticKind::cube)
      return out;
    const Eigen::Vector3d eye = cam.center();
    for (const auto& q : quads)
    {
      if (!q.foreground)
        continue;
      const bool on_ground = q.name == "-y";
      if (on_ground || q.normal().dot(eye - q.origin) <= 0)
        out.push_back(q.name);
    }
    return out;
  }

  nlohmann::json oracle_json() const
  {
    nlohmann::json j;
    j["kind"] = to_string(kind);
    j["views"] = options.views;
    j["resolution"] = options.resolution;
    if (kind == SyntheticKind::two_planes)
      j["plane_gap"] = options.plane_gap;
    nlohmann::json views = nlohmann::json::array();
    for (const auto& v : bundle.views)
    {
      nlohmann::json jv;
      jv["id"] = v.id;
      jv["name"] = v.name;
      const Eigen::Vector3d c = v.camera.center();
      jv["eye"] = {c.x(), c.y(), c.z()};
      if (kind == SyntheticKind::cube)
        jv["occluded_faces"] = occluded_faces(v.camera);
      views.push_back(jv);
    }
    j["per_view"] = views;
    return j;
  }
};

namespace detail {

inline TexturedQuad make_quad(Eigen::Vector3d origin, Eigen::Vector3d a,
                              Eigen::Vector3d b, double half, int material,
                              bool fore, std::string name)
{
  TexturedQuad q;
  q.origin = origin;
  q.axis_a = a;
  q.axis_b = b;
  q.half_a = q.half_b = half;
  q.material = material;
  q.foreground = fore;
  q.name = std::move(name);
  return q;
}

} // namespace detail

/// Builds a synthetic scene: geometry, an orbit of pinhole cameras (y up,
/// focal length equal to the resolution), rendered images, exact depth,
/// foreground masks and oracle keypoints.
///
/// plane: the plane z = 0 with a textured foreground square, cameras on an
/// arc in the xz-plane. two_planes: the same arc over a back plane with a
/// raised front square at z = plane_gap; both squares are foreground.
/// cube: the unit cube on a bounded ground at y = -0.5, cameras on a full
/// orbit at 25 degrees elevation; rays missing everything have no depth.
inline SyntheticScene make_synthetic_scene(SyntheticKind kind,
                                           const SyntheticOptions& options)
{
  if (options.views < 2)
    throw ArgumentError("synthetic scenes need at least 2 views");
  if (options.resolution < 8)
    throw ArgumentError("synthetic resolution must be >= 8");
  const Eigen::Vector3d X = Eigen::Vector3d::UnitX();
  const Eigen::Vector3d Y = Eigen::Vector3d::UnitY();
  const Eigen::Vector3d Z = Eigen::Vector3d::UnitZ();
  const double inf = std::numeric_limits<double>::infinity();
  const double pi = 3.14159265358979323846;

  SyntheticScene scene;
  scene.kind = kind;
  scene.options = options;
  std::vector<Eigen::Vector3d> eyes;
  switch (kind)
  {
    case SyntheticKind::plane:
    case SyntheticKind::two_planes:
    {
      TexturedQuad back = detail::make_quad({0, 0, 0}, X, Y, inf, 0, false, "back");
      if (kind == SyntheticKind::plane)
      {
        back.foreground = true;
        back.fore_half = 0.6;
        back.material = 1;
      }
      else
      {
        back.foreground = true;
        back.fore_half = 1.0;
        back.material = 3;
        scene.quads.push_back(detail::make_quad({0, 0, options.plane_gap}, X, Y,
                                                0.4, 1, true, "front"));
      }
      scene.quads.insert(scene.quads.begin(), back);
      const double span = options.plane_span_deg * pi / 180.0;
      for (int i = 0; i < options.views; ++i)
      {
        const double az = -span / 2 + span * i / (options.views - 1);
        eyes.emplace_back(3.0 * std::sin(az), 0.0, 3.0 * std::cos(az));
      }
      break;
    }
    case SyntheticKind::cube:
    {
      auto& q = scene.quads;
      q.push_back(detail::make_quad({0.5, 0, 0}, -Z, Y, 0.5, 1, true, "+x"));
      q.push_back(detail::make_quad({-0.5, 0, 0}, Z, Y, 0.5, 2, true, "-x"));
      q.push_back(detail::make_quad({0, 0.5, 0}, X, -Z, 0.5, 3, true, "+y"));
      q.push_back(detail::make_quad({0, -0.5, 0}, X, Z, 0.5, 4, true, "-y"));
      q.push_back(detail::make_quad({0, 0, 0.5}, X, Y, 0.5, 5, true, "+z"));
      q.push_back(detail::make_quad({0, 0, -0.5}, -X, Y, 0.5, 6, true, "-z"));
      // Ground just below the cube's bottom face avoids coplanar ties.
      q.push_back(detail::make_quad({0, -0.5 - 1e-4, 0}, X, Z, 2.5, 0, false, "ground"));
      const double el = 25.0 * pi / 180.0;
      for (int i = 0; i < options.views; ++i)
      {
        const double az = 2 * pi * i / options.views + 0.35;
        eyes.emplace_back(2.5 * std::cos(el) * std::sin(az), 2.5 * std::sin(el),
                          2.5 * std::cos(el) * std::cos(az));
      }
      break;
    }
  }

  const int res = options.resolution;
  for (int i = 0; i < options.views; ++i)
  {
    ViewRecord v;
    v.id = i + 1;
    char name[32];
    std::snprintf(name, sizeof(name), "view_%03d.png", v.id);
    v.name = name;
    v.camera = look_at(eyes[static_cast<std::size_t>(i)], {0, 0, 0}, Y,
                       static_cast<double>(res), res, res);
    v.image = GridTensor(3, res, res, 0.0);
    DepthMap depth(res, res);
    BinaryMask fore = make_mask(res, res);
    for (int y = 0; y < res; ++y)
      for (int x = 0; x < res; ++x)
      {
        const SurfaceHit h = scene.cast(v.camera, {double(x), double(y)});
        if (!h.hit)
          continue;
        depth.set(x, y, h.depth);
        fore(0, y, x) = h.foreground ? 1 : 0;
        for (int c = 0; c < 3; ++c)
          v.image(c, y, x) = h.color[c];
      }
    v.depth = std::move(depth);
    v.fore_mask = std::move(fore);
    scene.bundle.views.push_back(std::move(v));
  }

  // Oracle keypoints: visible foreground surface points with every view
  // that sees them.
  std::mt19937_64 rng(options.seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_int_distribution<int> pick_view(0, options.views - 1);
  std::uniform_real_distribution<double> pick_coord(-0.5, res - 0.5);
  int attempts = 0;
  while (static_cast<int>(scene.bundle.points3d.size()) < options.keypoints &&
         attempts < options.keypoints * 50)
  {
    ++attempts;
    const ViewRecord& v = scene.bundle.views[static_cast<std::size_t>(pick_view(rng))];
    const PixelCoord px{pick_coord(rng), pick_coord(rng)};
    const SurfaceHit h = scene.cast(v.camera, px);
    if (!h.hit || !h.foreground)
      continue;
    Keypoint3D kp;
    kp.position = h.point;
    for (const auto& other : scene.bundle.views)
    {
      PixelCoord p;
      if (scene.visible(other.camera, h.point, &p))
        kp.observations.push_back({other.id, p});
    }
    if (kp.observations.size() >= 2)
      scene.bundle.points3d.push_back(std::move(kp));
  }
  return scene;
}

inline SyntheticScene make_synthetic_scene(SyntheticKind kind, int views,
                                           int resolution, std::uint64_t seed = 0)
{
  SyntheticOptions o;
  o.views = views;
  o.resolution = resolution;
  o.seed = seed;
  return make_synthetic_scene(kind, o);
}

/// Writes the scene as a loadable directory: COLMAP text files, images/,
/// depth/*.pfm, masks/, oracle.json, and a ready-to-run scene.cfg.
inline void write_synthetic_scene(const SyntheticScene& scene,
                                  const std::filesystem::path& dir)
{
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "depth");
  fs::create_directories(dir / "masks");
  write_colmap_scene(scene.bundle, dir);
  for (const auto& v : scene.bundle.views)
  {
    const std::string stem = fs::path(v.name).stem().string();
    write_png(dir / "images" / v.name, v.image);
    save_depth_pfm(dir / "depth" / (stem + ".pfm"), *v.depth);
    write_mask_png(dir / "masks" / (stem + ".png"), *v.fore_mask);
  }
  {
    std::ofstream out(dir / "oracle.json");
    out << scene.oracle_json().dump(2) << "\n";
    if (!out)
      throw IoError("cannot write oracle.json in " + dir.string());
  }
  std::ofstream cfg(dir / "scene.cfg");
  cfg << "# Generated " << to_string(scene.kind) << " scene\n"
      << "scene.dir = .\n"
      << "sync.latent_downscale = 1\n"
      << "guidance.g_I = 1\n"
      << "guidance.g_T = 1\n"
      << "schedule.steps = 20\n"
      << "schedule.refine_steps = 10\n"
      << "edit.prompt = turn it teal\n"
      << "output.dir = out\n"
      << "seed = 0\n";
  if (!cfg)
    throw IoError("cannot write scene.cfg in " + dir.string());
}

} // namespace syncnoise
