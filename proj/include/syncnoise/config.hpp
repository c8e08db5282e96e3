#pragma once

#include <syncnoise/errors.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace syncnoise {

/// Layers whose alignment breaks the predicted noise distribution.
inline constexpr int kRejectedAlignLayer = 11;

/// Algorithm thresholds and scales shared by every stage.
struct PipelineConfig
{
  /// Reprojected-depth threshold; unset means 1% of the scene depth range.
  std::optional<double> tau_d;
  double tau_p = 2.0;
  double mu = 50.0;
  double g_I = 1.5;
  double g_T = 7.5;
  double decay_radius = 16.0;
  int group_size = 10;
  double overlap_threshold = 0.8;
  int latent_downscale = 8;
  std::vector<int> aligned_layers{5, 8};
};

inline void validate(const PipelineConfig& config)
{
  if (config.tau_d && !(*config.tau_d > 0))
    throw ConfigError("thresholds.tau_d must be positive");
  if (!(config.tau_p > 0))
    throw ConfigError("thresholds.tau_p must be positive");
  if (!(config.mu >= 0))
    throw ConfigError("thresholds.mu must be nonnegative");
  if (!std::isfinite(config.g_I) || !std::isfinite(config.g_T))
    throw ConfigError("guidance scales must be finite");
  if (!(config.decay_radius > 0))
    throw ConfigError("mask.decay_radius must be positive");
  if (config.group_size < 1)
    throw ConfigError("anchors.group_size must be >= 1");
  if (!(config.overlap_threshold > 0 && config.overlap_threshold <= 1))
    throw ConfigError("anchors.overlap_threshold must lie in (0, 1]");
  if (config.latent_downscale < 1)
    throw ConfigError("sync.latent_downscale must be >= 1");
  for (int layer : config.aligned_layers)
    if (layer < 1 || layer > 11)
      throw ConfigError("aligned layer " + std::to_string(layer) +
                        " outside 1..11");
}

/// Drops layer 11 from the aligned set with a warning: aligning the last
/// decoder block disturbs the predicted noise and produces artifacts.
inline std::vector<int> sanitize_aligned_layers(std::vector<int> layers,
                                                std::ostream& warn = std::cerr)
{
  std::sort(layers.begin(), layers.end());
  layers.erase(std::unique(layers.begin(), layers.end()), layers.end());
  auto it = std::find(layers.begin(), layers.end(), kRejectedAlignLayer);
  if (it != layers.end())
  {
    warn << "warning: ignoring aligned layer 11; aligning the final decoder "
            "block disrupts the predicted noise and introduces artifacts\n";
    layers.erase(it);
  }
  return layers;
}

/// Everything a pipeline run reads from its config file.
struct RunConfig
{
  PipelineConfig pipeline;

  // Scene source: a directory in COLMAP text layout, or an in-memory
  // synthetic scene.
  std::filesystem::path scene_dir;
  std::string synthetic_kind;
  int synthetic_views = 8;
  int synthetic_resolution = 128;
  int working_width = 0;
  int working_height = 0;
  std::filesystem::path score_file;

  std::string predictor_endpoint;
  std::string predictor_builtin = "synthetic";
  bool remote_scheduler = false;
  int latent_channels = 4; // remote predictors only
  double hue_deg = 200.0;
  double texture_sigma = 0.08;
  std::string prompt;

  int steps = 20;
  int refine_steps = 10;

  bool align_noise = true;
  bool align_features = true;
  bool propagate = true;
  int graph_window = 0;

  bool refine_depth = false;
  double depth_lambda = 0.1;
  int depth_steps = 100;
  double depth_step_size = 0.01;

  std::filesystem::path output_dir = "syncnoise_out";
  std::uint64_t seed = 0;
  int threads = 1;
};

namespace detail {

inline std::string trim(const std::string& s)
{
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos)
    return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

} // namespace detail

/// Ordered `key = value` entries with their source lines.
struct KeyValueFile
{
  struct Entry
  {
    std::string value;
    std::size_t line = 0;
  };
  std::string name;
  std::map<std::string, Entry> entries;

  static KeyValueFile parse(std::istream& in, std::string name = "<config>")
  {
    KeyValueFile file;
    file.name = std::move(name);
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(in, raw))
    {
      ++line_no;
      const auto hash = raw.find('#');
      const std::string line =
        detail::trim(hash == std::string::npos ? raw : raw.substr(0, hash));
      if (line.empty())
        continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ParseError(file.name, line_no, "expected 'key = value'");
      const std::string key = detail::trim(line.substr(0, eq));
      const std::string value = detail::trim(line.substr(eq + 1));
      if (key.empty())
        throw ParseError(file.name, line_no, "empty key");
      if (!file.entries.emplace(key, Entry{value, line_no}).second)
        throw ParseError(file.name, line_no, "duplicate key '" + key + "'");
    }
    return file;
  }

  static KeyValueFile load(const std::filesystem::path& path)
  {
    std::ifstream in(path);
    if (!in)
      throw IoError("cannot open config " + path.string());
    return parse(in, path.string());
  }
};

namespace detail {

inline double parse_double(const KeyValueFile& f, const std::string& key,
                           const KeyValueFile::Entry& e)
{
  try
  {
    std::size_t used = 0;
    const double v = std::stod(e.value, &used);
    if (used != e.value.size())
      throw std::invalid_argument("trailing");
    return v;
  }
  catch (const std::exception&)
  {
    throw ParseError(f.name, e.line,
                     key + ": expected a number, got '" + e.value + "'");
  }
}

inline long long parse_int(const KeyValueFile& f, const std::string& key,
                           const KeyValueFile::Entry& e)
{
  long long v = 0;
  const char* begin = e.value.data();
  const char* end = begin + e.value.size();
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr != end)
    throw ParseError(f.name, e.line,
                     key + ": expected an integer, got '" + e.value + "'");
  return v;
}

inline bool parse_bool(const KeyValueFile& f, const std::string& key,
                       const KeyValueFile::Entry& e)
{
  if (e.value == "true" || e.value == "1" || e.value == "yes")
    return true;
  if (e.value == "false" || e.value == "0" || e.value == "no")
    return false;
  throw ParseError(f.name, e.line,
                   key + ": expected true/false, got '" + e.value + "'");
}

inline std::vector<int> parse_int_list(const KeyValueFile& f,
                                       const std::string& key,
                                       const KeyValueFile::Entry& e)
{
  std::vector<int> out;
  std::stringstream ss(e.value);
  std::string item;
  while (std::getline(ss, item, ','))
  {
    KeyValueFile::Entry sub{trim(item), e.line};
    if (sub.value.empty())
      continue;
    out.push_back(static_cast<int>(parse_int(f, key, sub)));
  }
  return out;
}

} // namespace detail

/// Maps a parsed key-value file onto RunConfig. Unknown keys are rejected.
/// Relative paths resolve against `base_dir`.
inline RunConfig parse_run_config(const KeyValueFile& file,
                                  const std::filesystem::path& base_dir = {})
{
  using detail::parse_bool;
  using detail::parse_double;
  using detail::parse_int;
  RunConfig cfg;
  auto& p = cfg.pipeline;
  auto path_of = [&](const std::string& v) {
    std::filesystem::path path(v);
    return path.is_relative() && !base_dir.empty() ? base_dir / path : path;
  };

  using Setter =
    std::function<void(const std::string&, const KeyValueFile::Entry&)>;
  const std::map<std::string, Setter> setters{
    {"scene.dir", [&](auto&, auto& e) { cfg.scene_dir = path_of(e.value); }},
    {"scene.synthetic", [&](auto&, auto& e) { cfg.synthetic_kind = e.value; }},
    {"scene.views",
     [&](auto& k, auto& e) { cfg.synthetic_views = int(parse_int(file, k, e)); }},
    {"scene.resolution",
     [&](auto& k, auto& e) {
       cfg.synthetic_resolution = int(parse_int(file, k, e));
     }},
    {"scene.width",
     [&](auto& k, auto& e) { cfg.working_width = int(parse_int(file, k, e)); }},
    {"scene.height",
     [&](auto& k, auto& e) { cfg.working_height = int(parse_int(file, k, e)); }},
    {"scene.scores", [&](auto&, auto& e) { cfg.score_file = path_of(e.value); }},
    {"thresholds.tau_d",
     [&](auto& k, auto& e) {
       if (e.value == "auto")
         p.tau_d.reset();
       else
         p.tau_d = parse_double(file, k, e);
     }},
    {"thresholds.tau_p",
     [&](auto& k, auto& e) { p.tau_p = parse_double(file, k, e); }},
    {"thresholds.mu", [&](auto& k, auto& e) { p.mu = parse_double(file, k, e); }},
    {"guidance.g_I", [&](auto& k, auto& e) { p.g_I = parse_double(file, k, e); }},
    {"guidance.g_T", [&](auto& k, auto& e) { p.g_T = parse_double(file, k, e); }},
    {"mask.decay_radius",
     [&](auto& k, auto& e) { p.decay_radius = parse_double(file, k, e); }},
    {"anchors.group_size",
     [&](auto& k, auto& e) { p.group_size = int(parse_int(file, k, e)); }},
    {"anchors.overlap_threshold",
     [&](auto& k, auto& e) { p.overlap_threshold = parse_double(file, k, e); }},
    {"sync.latent_downscale",
     [&](auto& k, auto& e) { p.latent_downscale = int(parse_int(file, k, e)); }},
    {"sync.aligned_layers",
     [&](auto& k, auto& e) {
       p.aligned_layers = detail::parse_int_list(file, k, e);
     }},
    {"sync.align_noise",
     [&](auto& k, auto& e) { cfg.align_noise = parse_bool(file, k, e); }},
    {"sync.align_features",
     [&](auto& k, auto& e) { cfg.align_features = parse_bool(file, k, e); }},
    {"propagation.enabled",
     [&](auto& k, auto& e) { cfg.propagate = parse_bool(file, k, e); }},
    {"graph.window",
     [&](auto& k, auto& e) { cfg.graph_window = int(parse_int(file, k, e)); }},
    {"predictor.endpoint",
     [&](auto&, auto& e) { cfg.predictor_endpoint = e.value; }},
    {"predictor.builtin",
     [&](auto&, auto& e) { cfg.predictor_builtin = e.value; }},
    {"predictor.scheduler",
     [&](auto& k, auto& e) {
       if (e.value != "builtin" && e.value != "remote")
         throw ParseError(file.name, e.line, k + ": expected builtin|remote");
       cfg.remote_scheduler = e.value == "remote";
     }},
    {"predictor.latent_channels",
     [&](auto& k, auto& e) { cfg.latent_channels = int(parse_int(file, k, e)); }},
    {"predictor.hue_deg",
     [&](auto& k, auto& e) { cfg.hue_deg = parse_double(file, k, e); }},
    {"predictor.texture_sigma",
     [&](auto& k, auto& e) { cfg.texture_sigma = parse_double(file, k, e); }},
    {"edit.prompt", [&](auto&, auto& e) { cfg.prompt = e.value; }},
    {"schedule.steps",
     [&](auto& k, auto& e) { cfg.steps = int(parse_int(file, k, e)); }},
    {"schedule.refine_steps",
     [&](auto& k, auto& e) { cfg.refine_steps = int(parse_int(file, k, e)); }},
    {"depth.refine",
     [&](auto& k, auto& e) { cfg.refine_depth = parse_bool(file, k, e); }},
    {"depth.lambda",
     [&](auto& k, auto& e) { cfg.depth_lambda = parse_double(file, k, e); }},
    {"depth.steps",
     [&](auto& k, auto& e) { cfg.depth_steps = int(parse_int(file, k, e)); }},
    {"depth.step_size",
     [&](auto& k, auto& e) { cfg.depth_step_size = parse_double(file, k, e); }},
    {"output.dir", [&](auto&, auto& e) { cfg.output_dir = path_of(e.value); }},
    {"seed",
     [&](auto& k, auto& e) {
       cfg.seed = static_cast<std::uint64_t>(parse_int(file, k, e));
     }},
    {"threads",
     [&](auto& k, auto& e) { cfg.threads = int(parse_int(file, k, e)); }},
  };

  for (const auto& [key, entry] : file.entries)
  {
    auto it = setters.find(key);
    if (it == setters.end())
      throw ParseError(file.name, entry.line, "unknown config key '" + key + "'");
    it->second(key, entry);
  }

  p.aligned_layers = sanitize_aligned_layers(p.aligned_layers);
  validate(p);
  if (cfg.scene_dir.empty() == cfg.synthetic_kind.empty())
    throw ConfigError("exactly one of scene.dir and scene.synthetic is required");
  if (cfg.predictor_endpoint.empty() && cfg.predictor_builtin != "synthetic" &&
      cfg.predictor_builtin != "zero")
    throw ConfigError("predictor.builtin must be 'synthetic' or 'zero'");
  if (cfg.steps < 1)
    throw ConfigError("schedule.steps must be >= 1");
  if (cfg.refine_steps < 0)
    throw ConfigError("schedule.refine_steps must be >= 0");
  if (cfg.threads < 1)
    throw ConfigError("threads must be >= 1");
  if (cfg.latent_channels < 1)
    throw ConfigError("predictor.latent_channels must be >= 1");
  if (cfg.graph_window < 0)
    throw ConfigError("graph.window must be >= 0");
  return cfg;
}

inline RunConfig load_run_config(const std::filesystem::path& path)
{
  return parse_run_config(KeyValueFile::load(path), path.parent_path());
}

/// Canonical flat snapshot of every resolved setting, key-sorted.
inline std::map<std::string, std::string> snapshot(const RunConfig& cfg)
{
  auto num = [](double v) {
    std::ostringstream ss;
    ss.precision(17);
    ss << v;
    return ss.str();
  };
  std::string layers;
  for (int l : cfg.pipeline.aligned_layers)
    layers += (layers.empty() ? "" : ",") + std::to_string(l);
  const auto& p = cfg.pipeline;
  return {
    {"scene.dir", cfg.scene_dir.string()},
    {"scene.synthetic", cfg.synthetic_kind},
    {"scene.views", std::to_string(cfg.synthetic_views)},
    {"scene.resolution", std::to_string(cfg.synthetic_resolution)},
    {"scene.width", std::to_string(cfg.working_width)},
    {"scene.height", std::to_string(cfg.working_height)},
    {"scene.scores", cfg.score_file.string()},
    {"thresholds.tau_d", p.tau_d ? num(*p.tau_d) : "auto"},
    {"thresholds.tau_p", num(p.tau_p)},
    {"thresholds.mu", num(p.mu)},
    {"guidance.g_I", num(p.g_I)},
    {"guidance.g_T", num(p.g_T)},
    {"mask.decay_radius", num(p.decay_radius)},
    {"anchors.group_size", std::to_string(p.group_size)},
    {"anchors.overlap_threshold", num(p.overlap_threshold)},
    {"sync.latent_downscale", std::to_string(p.latent_downscale)},
    {"sync.aligned_layers", layers},
    {"sync.align_noise", cfg.align_noise ? "true" : "false"},
    {"sync.align_features", cfg.align_features ? "true" : "false"},
    {"propagation.enabled", cfg.propagate ? "true" : "false"},
    {"graph.window", std::to_string(cfg.graph_window)},
    {"predictor.endpoint", cfg.predictor_endpoint},
    {"predictor.builtin", cfg.predictor_builtin},
    {"predictor.scheduler", cfg.remote_scheduler ? "remote" : "builtin"},
    {"predictor.latent_channels", std::to_string(cfg.latent_channels)},
    {"predictor.hue_deg", num(cfg.hue_deg)},
    {"predictor.texture_sigma", num(cfg.texture_sigma)},
    {"edit.prompt", cfg.prompt},
    {"schedule.steps", std::to_string(cfg.steps)},
    {"schedule.refine_steps", std::to_string(cfg.refine_steps)},
    {"depth.refine", cfg.refine_depth ? "true" : "false"},
    {"depth.lambda", num(cfg.depth_lambda)},
    {"depth.steps", std::to_string(cfg.depth_steps)},
    {"depth.step_size", num(cfg.depth_step_size)},
    {"output.dir", cfg.output_dir.string()},
    {"seed", std::to_string(cfg.seed)},
    {"threads", std::to_string(cfg.threads)},
  };
}

} // namespace syncnoise
