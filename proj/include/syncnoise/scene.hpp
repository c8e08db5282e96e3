#pragma once

#include <syncnoise/camera.hpp>
#include <syncnoise/config.hpp>
#include <syncnoise/errors.hpp>
#include <syncnoise/grid.hpp>
#include <syncnoise/image_io.hpp>

#include <Eigen/Geometry>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

namespace syncnoise {

struct ViewRecord
{
  int id = 0;
  std::string name;
  Camera camera;
  GridTensor image; // 3 x H x W in [0,1]; empty until pixels are attached
  std::optional<DepthMap> depth;
  std::optional<BinaryMask> fore_mask;
};

struct Observation
{
  int view_id = 0;
  PixelCoord pixel;
};

struct Keypoint3D
{
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  std::vector<Observation> observations;
};

struct SceneBundle
{
  std::vector<ViewRecord> views;
  std::vector<Keypoint3D> points3d;
  PipelineConfig config;

  std::size_t index_of(int view_id) const
  {
    for (std::size_t i = 0; i < views.size(); ++i)
      if (views[i].id == view_id)
        return i;
    throw UnknownViewError("no view with id " + std::to_string(view_id));
  }

  const ViewRecord& view(int view_id) const { return views[index_of(view_id)]; }
  ViewRecord& view(int view_id) { return views[index_of(view_id)]; }

  std::vector<int> view_ids() const
  {
    std::vector<int> ids;
    ids.reserve(views.size());
    for (const auto& v : views)
      ids.push_back(v.id);
    return ids;
  }
};

/// Checks the bundle invariants: unique ids, shared image size, image/depth
/// agreement, and keypoint observations that reference known views in bounds.
inline void validate(const SceneBundle& bundle)
{
  std::set<int> ids;
  for (const auto& v : bundle.views)
    if (!ids.insert(v.id).second)
      throw ArgumentError("duplicate view id " + std::to_string(v.id));
  if (!bundle.views.empty())
  {
    const int w = bundle.views.front().camera.width;
    const int h = bundle.views.front().camera.height;
    for (const auto& v : bundle.views)
    {
      if (v.camera.width != w || v.camera.height != h)
        throw SizeMismatchError("views do not share image dimensions");
      if (!v.image.empty() && (v.image.width() != w || v.image.height() != h))
        throw SizeMismatchError("image of view " + std::to_string(v.id) +
                                " does not match its camera");
      if (v.depth && (v.depth->width() != w || v.depth->height() != h))
        throw SizeMismatchError("depth of view " + std::to_string(v.id) +
                                " does not match its image");
      if (v.fore_mask && (v.fore_mask->width() != w || v.fore_mask->height() != h))
        throw SizeMismatchError("mask of view " + std::to_string(v.id) +
                                " does not match its image");
    }
  }
  for (const auto& kp : bundle.points3d)
  {
    if (kp.observations.empty())
      throw ArgumentError("keypoint without observations");
    for (const auto& obs : kp.observations)
    {
      const auto& cam = bundle.view(obs.view_id).camera;
      if (!cam.in_frame(obs.pixel))
        throw ArgumentError("keypoint observation outside image bounds");
    }
  }
}

namespace detail {

struct LineReader
{
  std::ifstream in;
  std::string name;
  std::size_t line_no = 0;

  explicit LineReader(const std::filesystem::path& path)
    : in(path)
    , name(path.string())
  {
    if (!in)
      throw IoError("cannot open " + name);
  }

  /// Next line, including blank ones; comment lines are skipped.
  bool next(std::string& line)
  {
    while (std::getline(in, line))
    {
      ++line_no;
      if (!line.empty() && line.back() == '\r')
        line.pop_back();
      const auto first = line.find_first_not_of(" \t");
      if (first != std::string::npos && line[first] == '#')
        continue;
      return true;
    }
    return false;
  }

  [[noreturn]] void fail(const std::string& what) const
  {
    throw ParseError(name, line_no, what);
  }
};

template <typename T>
T read_field(std::istringstream& ss, const LineReader& reader, const char* what)
{
  T value{};
  if (!(ss >> value))
    reader.fail(std::string("expected ") + what);
  return value;
}

inline bool is_blank(const std::string& line)
{
  return line.find_first_not_of(" \t") == std::string::npos;
}

} // namespace detail

/// Parses COLMAP text exports (cameras.txt, images.txt, points3D.txt).
///
/// Only PINHOLE and SIMPLE_PINHOLE cameras are accepted. Pixel coordinates and
/// principal points are taken verbatim. Returned views carry cameras and names
/// but no pixels, depth or masks.
inline SceneBundle load_colmap_scene(const std::filesystem::path& cameras_path,
                                     const std::filesystem::path& images_path,
                                     const std::filesystem::path& points_path)
{
  std::unordered_map<int, Camera> intrinsics;
  {
    detail::LineReader reader(cameras_path);
    std::string line;
    while (reader.next(line))
    {
      if (detail::is_blank(line))
        continue;
      std::istringstream ss(line);
      const int id = detail::read_field<int>(ss, reader, "camera id");
      const auto model = detail::read_field<std::string>(ss, reader, "model");
      Camera cam;
      cam.width = detail::read_field<int>(ss, reader, "width");
      cam.height = detail::read_field<int>(ss, reader, "height");
      if (model == "PINHOLE")
      {
        cam.fx = detail::read_field<double>(ss, reader, "fx");
        cam.fy = detail::read_field<double>(ss, reader, "fy");
      }
      else if (model == "SIMPLE_PINHOLE")
      {
        cam.fx = cam.fy = detail::read_field<double>(ss, reader, "f");
      }
      else
      {
        throw UnsupportedModelError(reader.name + ":" +
                                    std::to_string(reader.line_no) +
                                    ": camera model " + model +
                                    " is not supported");
      }
      cam.cx = detail::read_field<double>(ss, reader, "cx");
      cam.cy = detail::read_field<double>(ss, reader, "cy");
      std::string extra;
      if (ss >> extra)
        reader.fail("trailing camera parameters");
      if (cam.width <= 0 || cam.height <= 0 || !(cam.fx > 0) || !(cam.fy > 0))
        reader.fail("invalid camera dimensions or focal length");
      if (!intrinsics.emplace(id, cam).second)
        reader.fail("duplicate camera id " + std::to_string(id));
    }
  }

  SceneBundle bundle;
  // Per image: list of 2D points; index -> pixel.
  std::unordered_map<int, std::vector<PixelCoord>> points2d;
  {
    detail::LineReader reader(images_path);
    std::string line;
    while (reader.next(line))
    {
      if (detail::is_blank(line))
        continue;
      std::istringstream ss(line);
      ViewRecord view;
      view.id = detail::read_field<int>(ss, reader, "image id");
      const double qw = detail::read_field<double>(ss, reader, "qw");
      const double qx = detail::read_field<double>(ss, reader, "qx");
      const double qy = detail::read_field<double>(ss, reader, "qy");
      const double qz = detail::read_field<double>(ss, reader, "qz");
      const double tx = detail::read_field<double>(ss, reader, "tx");
      const double ty = detail::read_field<double>(ss, reader, "ty");
      const double tz = detail::read_field<double>(ss, reader, "tz");
      const int camera_id = detail::read_field<int>(ss, reader, "camera id");
      view.name = detail::read_field<std::string>(ss, reader, "image name");
      const Eigen::Quaterniond q(qw, qx, qy, qz);
      if (!(q.norm() > 1e-12))
        reader.fail("degenerate quaternion");
      auto cam_it = intrinsics.find(camera_id);
      if (cam_it == intrinsics.end())
        throw MissingCameraError(reader.name + ":" +
                                 std::to_string(reader.line_no) + ": image " +
                                 std::to_string(view.id) +
                                 " references unknown camera " +
                                 std::to_string(camera_id));
      view.camera = cam_it->second;
      view.camera.rotation = q.normalized().toRotationMatrix();
      view.camera.translation = Eigen::Vector3d(tx, ty, tz);

      // The POINTS2D line follows and may be empty.
      std::vector<PixelCoord> pts;
      if (reader.next(line))
      {
        std::istringstream ps(line);
        double x, y;
        long long pid;
        while (ps >> x)
        {
          if (!(ps >> y >> pid))
            reader.fail("POINTS2D entries must be (X, Y, POINT3D_ID) triples");
          pts.push_back({x, y});
        }
        if (!ps.eof())
          reader.fail("malformed POINTS2D line");
      }
      if (points2d.count(view.id))
        reader.fail("duplicate image id " + std::to_string(view.id));
      points2d.emplace(view.id, std::move(pts));
      bundle.views.push_back(std::move(view));
    }
  }
  std::sort(bundle.views.begin(), bundle.views.end(),
            [](const ViewRecord& a, const ViewRecord& b) { return a.id < b.id; });

  {
    detail::LineReader reader(points_path);
    std::string line;
    while (reader.next(line))
    {
      if (detail::is_blank(line))
        continue;
      std::istringstream ss(line);
      Keypoint3D kp;
      detail::read_field<long long>(ss, reader, "point id");
      kp.position.x() = detail::read_field<double>(ss, reader, "X");
      kp.position.y() = detail::read_field<double>(ss, reader, "Y");
      kp.position.z() = detail::read_field<double>(ss, reader, "Z");
      for (const char* what : {"R", "G", "B"})
        detail::read_field<int>(ss, reader, what);
      detail::read_field<double>(ss, reader, "error");
      int image_id;
      while (ss >> image_id)
      {
        long long idx;
        if (!(ss >> idx))
          reader.fail("track entries must be (IMAGE_ID, POINT2D_IDX) pairs");
        auto pts = points2d.find(image_id);
        if (pts == points2d.end())
          reader.fail("track references unknown image " +
                      std::to_string(image_id));
        if (idx < 0 || static_cast<std::size_t>(idx) >= pts->second.size())
          reader.fail("track references missing 2D point " +
                      std::to_string(idx));
        const PixelCoord px = pts->second[static_cast<std::size_t>(idx)];
        if (!bundle.view(image_id).camera.in_frame(px))
          reader.fail("observation outside image bounds");
        kp.observations.push_back({image_id, px});
      }
      if (!ss.eof())
        reader.fail("malformed track");
      if (kp.observations.empty())
        reader.fail("3D point without observations");
      bundle.points3d.push_back(std::move(kp));
    }
  }
  return bundle;
}

/// Writes a bundle's cameras, poses and keypoints in COLMAP text layout.
/// Each view gets its own PINHOLE camera with the same id as the image.
inline void write_colmap_scene(const SceneBundle& bundle,
                               const std::filesystem::path& dir)
{
  std::ofstream cams(dir / "cameras.txt");
  std::ofstream imgs(dir / "images.txt");
  std::ofstream pts(dir / "points3D.txt");
  if (!cams || !imgs || !pts)
    throw IoError("cannot write COLMAP files in " + dir.string());
  cams << std::setprecision(17);
  imgs << std::setprecision(17);
  pts << std::setprecision(17);
  cams << "# Camera list with one line of data per camera:\n"
          "#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n";
  imgs << "# Image list with two lines of data per image:\n"
          "#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n"
          "#   POINTS2D[] as (X, Y, POINT3D_ID)\n";
  pts << "# 3D point list with one line of data per point:\n"
         "#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as "
         "(IMAGE_ID, POINT2D_IDX)\n";

  // Assign 2D point indices per image in keypoint order.
  std::map<int, std::vector<std::pair<PixelCoord, std::size_t>>> per_image;
  std::vector<std::vector<std::pair<int, std::size_t>>> tracks(
    bundle.points3d.size());
  for (std::size_t k = 0; k < bundle.points3d.size(); ++k)
    for (const auto& obs : bundle.points3d[k].observations)
    {
      auto& list = per_image[obs.view_id];
      tracks[k].emplace_back(obs.view_id, list.size());
      list.emplace_back(obs.pixel, k + 1);
    }

  for (const auto& v : bundle.views)
  {
    const auto& c = v.camera;
    cams << v.id << " PINHOLE " << c.width << " " << c.height << " " << c.fx
         << " " << c.fy << " " << c.cx << " " << c.cy << "\n";
    const Eigen::Quaterniond q(c.rotation);
    imgs << v.id << " " << q.w() << " " << q.x() << " " << q.y() << " "
         << q.z() << " " << c.translation.x() << " " << c.translation.y()
         << " " << c.translation.z() << " " << v.id << " " << v.name << "\n";
    bool first = true;
    for (const auto& [px, pid] : per_image[v.id])
    {
      imgs << (first ? "" : " ") << px.u << " " << px.v << " " << pid;
      first = false;
    }
    imgs << "\n";
  }
  for (std::size_t k = 0; k < bundle.points3d.size(); ++k)
  {
    const auto& p = bundle.points3d[k].position;
    pts << k + 1 << " " << p.x() << " " << p.y() << " " << p.z()
        << " 128 128 128 0";
    for (const auto& [img, idx] : tracks[k])
      pts << " " << img << " " << idx;
    pts << "\n";
  }
}

/// Resizes every view to `width` x `height`: images bilinearly, depth and
/// masks with nearest neighbor. Intrinsics and keypoint pixels follow.
inline void resize_views(SceneBundle& bundle, int width, int height)
{
  for (auto& v : bundle.views)
  {
    const int w0 = v.camera.width;
    const int h0 = v.camera.height;
    if (w0 == width && h0 == height)
      continue;
    if (!v.image.empty())
      v.image = resize_bilinear(v.image, height, width);
    if (v.depth)
    {
      DepthMap resized(height, width);
      resized.values = resize_nearest(v.depth->values, height, width);
      resized.valid = resize_nearest(v.depth->valid, height, width);
      v.depth = std::move(resized);
    }
    if (v.fore_mask)
      v.fore_mask = resize_nearest(*v.fore_mask, height, width);
    const double sx = static_cast<double>(width) / w0;
    const double sy = static_cast<double>(height) / h0;
    for (auto& kp : bundle.points3d)
      for (auto& obs : kp.observations)
        if (obs.view_id == v.id)
          obs.pixel = {(obs.pixel.u + 0.5) * sx - 0.5,
                       (obs.pixel.v + 0.5) * sy - 0.5};
    v.camera = v.camera.rescaled(width, height);
  }
}

/// Loads a scene directory: COLMAP text files plus `images/<name>`, and
/// optionally `depth/<stem>.pfm|.raw` and `masks/<stem>.png`.
///
/// Views are resized to `working_width` x `working_height` when nonzero.
inline SceneBundle load_scene_dir(const std::filesystem::path& dir,
                                  int working_width = 0, int working_height = 0)
{
  SceneBundle bundle = load_colmap_scene(dir / "cameras.txt", dir / "images.txt",
                                         dir / "points3D.txt");
  for (auto& v : bundle.views)
  {
    const auto image_path = dir / "images" / v.name;
    v.image = read_png(image_path, 3);
    if (v.image.width() != v.camera.width || v.image.height() != v.camera.height)
      throw SizeMismatchError(image_path.string() +
                              " does not match its camera size");
    const auto stem = std::filesystem::path(v.name).stem().string();
    for (const char* ext : {".pfm", ".raw"})
    {
      const auto depth_path = dir / "depth" / (stem + ext);
      if (std::filesystem::exists(depth_path))
      {
        v.depth = load_depth(depth_path, v.camera.width, v.camera.height);
        break;
      }
    }
    const auto mask_path = dir / "masks" / (stem + ".png");
    if (std::filesystem::exists(mask_path))
    {
      v.fore_mask = read_mask_png(mask_path);
      if (v.fore_mask->width() != v.camera.width ||
          v.fore_mask->height() != v.camera.height)
        throw SizeMismatchError(mask_path.string() +
                                " does not match its camera size");
    }
  }
  if (working_width > 0 && working_height > 0)
    resize_views(bundle, working_width, working_height);
  validate(bundle);
  return bundle;
}

/// Reads "view_id<TAB>score" lines.
inline std::map<int, double> load_scores(const std::filesystem::path& path)
{
  detail::LineReader reader(path);
  std::map<int, double> scores;
  std::string line;
  while (reader.next(line))
  {
    if (detail::is_blank(line))
      continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      reader.fail("expected 'view_id<TAB>score'");
    try
    {
      std::size_t used = 0;
      const int id = std::stoi(line.substr(0, tab), &used);
      if (used != tab)
        throw std::invalid_argument("id");
      const std::string rest = line.substr(tab + 1);
      const double score = std::stod(rest, &used);
      if (rest.find_first_not_of(" \t", used) != std::string::npos)
        throw std::invalid_argument("score");
      if (!scores.emplace(id, score).second)
        reader.fail("duplicate view id " + std::to_string(id));
    }
    catch (const std::invalid_argument&)
    {
      reader.fail("malformed score line");
    }
    catch (const std::out_of_range&)
    {
      reader.fail("score out of range");
    }
  }
  return scores;
}

} // namespace syncnoise
