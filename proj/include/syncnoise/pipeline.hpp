#pragma once

#include <syncnoise/config.hpp>
#include <syncnoise/correspondence.hpp>
#include <syncnoise/depth_supervision.hpp>
#include <syncnoise/errors.hpp>
#include <syncnoise/hashing.hpp>
#include <syncnoise/image_io.hpp>
#include <syncnoise/noise_sync.hpp>
#include <syncnoise/predictor.hpp>
#include <syncnoise/propagation.hpp>
#include <syncnoise/scene.hpp>
#include <syncnoise/scene_baker.hpp>
#include <syncnoise/schedule.hpp>
#include <syncnoise/synthetic_scene.hpp>
#include <syncnoise/wire.hpp>

#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace syncnoise {

namespace stage {
inline constexpr const char* load = "load";
inline constexpr const char* refine_depth = "refine depth";
inline constexpr const char* build_graphs = "build graphs";
inline constexpr const char* align_noise = "align initial noise";
inline constexpr const char* denoise = "synchronized denoise";
inline constexpr const char* select_anchors = "select anchors";
inline constexpr const char* propagate = "propagate";
inline constexpr const char* masked_refine = "masked refine";
inline constexpr const char* bake = "bake";
inline constexpr const char* report = "consistency report";
} // namespace stage

/// Refinement re-noises edited views only up to this fraction of the
/// training horizon.
inline constexpr double kRefineStrength = 0.5;

struct StageRecord
{
  std::string name;
  double ms = 0.0;
  std::string status; // ok | skipped | failed
};

struct RunManifest
{
  std::map<std::string, std::string> config;
  std::vector<StageRecord> stages;
  std::vector<std::string> outputs; // relative to the output directory
  std::uint64_t seed = 0;
  bool failed = false;

  nlohmann::json to_json() const
  {
    nlohmann::json j;
    j["config"] = config;
    nlohmann::json st = nlohmann::json::array();
    for (const auto& s : stages)
      st.push_back({{"name", s.name}, {"ms", s.ms}, {"status", s.status}});
    j["stages"] = st;
    j["outputs"] = outputs;
    j["seed"] = seed;
    j["status"] = failed ? "failed" : "ok";
    return j;
  }
};

struct PipelineResult
{
  RunManifest manifest;
  SceneBundle bundle;
  std::map<int, double> scores;
  GraphSet graphs;
  std::vector<GridTensor> initial_noise;
  SyncResult sync;
  AnchorPlan plan;
  std::map<int, double> coverage; // neighbor view -> valid-pair coverage
  std::vector<EditedView> edited;
  ColoredPointSet points;
  ConsistencyReport report;
  std::optional<DepthLossReport> depth_loss_before;
  std::optional<DepthLossReport> depth_loss_after;
};

/// Builtin or remote predictor for a run. Builtin predictors decode against
/// each view's original image.
inline std::unique_ptr<Predictor> make_predictor(const RunConfig& cfg,
                                                 const SceneBundle& bundle)
{
  if (!cfg.predictor_endpoint.empty())
    return std::make_unique<wire::RemotePredictor>(
      wire::open_endpoint(cfg.predictor_endpoint), cfg.latent_channels,
      cfg.remote_scheduler);
  ResidualCodec codec(cfg.pipeline.latent_downscale);
  for (const auto& v : bundle.views)
    codec.set_base(v.id, v.image);
  if (cfg.predictor_builtin == "zero")
    return std::make_unique<ZeroPredictor>(std::move(codec), 3);
  if (cfg.predictor_builtin == "synthetic")
    return std::make_unique<SyntheticEditPredictor>(std::move(codec), cfg.hue_deg,
                                                    cfg.texture_sigma);
  throw ConfigError("unknown builtin predictor '" + cfg.predictor_builtin + "'");
}

inline SceneBundle load_bundle(const RunConfig& cfg)
{
  SceneBundle bundle;
  if (!cfg.synthetic_kind.empty())
  {
    SyntheticOptions o;
    o.views = cfg.synthetic_views;
    o.resolution = cfg.synthetic_resolution;
    o.seed = cfg.seed;
    bundle = make_synthetic_scene(parse_synthetic_kind(cfg.synthetic_kind), o).bundle;
    if (cfg.working_width > 0 && cfg.working_height > 0)
      resize_views(bundle, cfg.working_width, cfg.working_height);
  }
  else
  {
    bundle = load_scene_dir(cfg.scene_dir, cfg.working_width, cfg.working_height);
  }
  bundle.config = cfg.pipeline;
  validate(bundle);
  return bundle;
}

/// Original images on top, edited images below, one column per view.
inline GridTensor comparison_grid(const SceneBundle& bundle,
                                  const std::vector<EditedView>& edited)
{
  const int h = bundle.views.front().camera.height;
  const int w = bundle.views.front().camera.width;
  const int n = static_cast<int>(bundle.views.size());
  GridTensor grid(3, 2 * h, n * w, 0.0);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
        {
          grid(c, y, i * w + x) = bundle.views[static_cast<std::size_t>(i)].image(c, y, x);
          grid(c, h + y, i * w + x) = edited[static_cast<std::size_t>(i)].image(c, y, x);
        }
  return grid;
}

namespace detail {

inline nlohmann::json report_json(const PipelineResult& r)
{
  nlohmann::json j;
  nlohmann::json psnr = nlohmann::json::object();
  for (const auto& [id, db] : r.report.per_view_psnr)
    psnr[std::to_string(id)] = db;
  j["per_view_psnr"] = psnr;
  j["cross_view_color_variance"] = r.report.cross_view_color_variance;
  j["coverage"] = r.report.coverage;
  j["shared_cells"] = r.report.shared_cells;
  j["points"] = r.points.points.size();
  j["cell_size"] = r.points.cell_size;
  nlohmann::json groups = nlohmann::json::array();
  for (const auto& g : r.plan.groups)
    groups.push_back({{"members", g.members}, {"anchor", g.anchor}});
  j["anchor_groups"] = groups;
  nlohmann::json cov = nlohmann::json::object();
  for (const auto& [id, c] : r.coverage)
    cov[std::to_string(id)] = c;
  j["propagation_coverage"] = cov;
  nlohmann::json graphs = nlohmann::json::array();
  for (const auto& g : r.graphs)
    graphs.push_back(graph_stats(g));
  j["graphs"] = graphs;
  if (r.depth_loss_before)
    j["depth_loss_before"] = r.depth_loss_before->loss;
  if (r.depth_loss_after)
    j["depth_loss_after"] = r.depth_loss_after->loss;
  return j;
}

inline void write_text(const std::filesystem::path& path, const std::string& text)
{
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out)
    throw IoError("cannot write " + path.string());
}

inline void ensure_dir(const std::filesystem::path& dir)
{
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir))
    throw IoError("cannot create directory " + dir.string() +
                  (ec ? ": " + ec.message() : ""));
}

} // namespace detail

/// Writes the run's artifacts under `dir` and returns their relative paths.
inline std::vector<std::string> save_artifacts(const PipelineResult& r,
                                               const std::filesystem::path& dir)
{
  namespace fs = std::filesystem;
  std::vector<std::string> outputs;
  detail::ensure_dir(dir / "edited");
  detail::ensure_dir(dir / "synced");
  for (std::size_t i = 0; i < r.edited.size(); ++i)
  {
    const std::string name = fs::path(r.bundle.views[i].name).stem().string() + ".png";
    write_png(dir / "edited" / name, r.edited[i].image);
    outputs.push_back("edited/" + name);
    write_png(dir / "synced" / name, r.sync.images[i]);
    outputs.push_back("synced/" + name);
  }
  write_png(dir / "comparison.png", comparison_grid(r.bundle, r.edited));
  outputs.push_back("comparison.png");
  write_ply(dir / "points.ply", r.points);
  outputs.push_back("points.ply");
  detail::write_text(dir / "report.json", detail::report_json(r).dump(2) + "\n");
  outputs.push_back("report.json");
  std::sort(outputs.begin(), outputs.end());
  return outputs;
}

/// "relpath<TAB>sha256" per artifact, sorted; identical runs give identical
/// bytes.
inline std::string artifact_manifest(const std::filesystem::path& dir,
                                     const std::vector<std::string>& outputs)
{
  std::string text;
  for (const auto& rel : outputs)
    text += rel + "\t" + sha256_file(dir / rel) + "\n";
  return text;
}

struct PipelineHooks
{
  /// Replaces the configured predictor when set.
  Predictor* predictor = nullptr;
  /// Replaces the scene loader when set.
  std::optional<SceneBundle> bundle;
  /// Write artifacts into cfg.output_dir.
  bool write = true;
};

/// Runs every stage in order. Stage failures are rethrown as StageError
/// tagged with the stage name, after writing a FAILED marker and the partial
/// run manifest.
inline PipelineResult run_pipeline(const RunConfig& cfg, PipelineHooks hooks = {})
{
  namespace fs = std::filesystem;
  PipelineResult r;
  r.manifest.config = snapshot(cfg);
  r.manifest.seed = cfg.seed;
  const fs::path out_dir = cfg.output_dir;
  if (hooks.write)
  {
    detail::ensure_dir(out_dir);
    fs::remove(out_dir / "FAILED");
  }

  auto write_run_manifest = [&] {
    if (hooks.write)
      detail::write_text(out_dir / "run_manifest.json",
                         r.manifest.to_json().dump(2) + "\n");
  };

  auto run_stage = [&](const char* name, bool enabled, const std::function<void()>& fn) {
    StageRecord rec{name, 0.0, enabled ? "ok" : "skipped"};
    if (enabled)
    {
      const auto t0 = std::chrono::steady_clock::now();
      try
      {
        fn();
      }
      catch (const std::exception& e)
      {
        rec.status = "failed";
        rec.ms = std::chrono::duration<double, std::milli>(
                   std::chrono::steady_clock::now() - t0)
                   .count();
        r.manifest.stages.push_back(rec);
        r.manifest.failed = true;
        if (hooks.write)
        {
          detail::write_text(out_dir / "FAILED",
                             std::string(name) + ": " + e.what() + "\n");
          write_run_manifest();
        }
        throw StageError(name, e.what(), std::current_exception());
      }
      rec.ms = std::chrono::duration<double, std::milli>(
                 std::chrono::steady_clock::now() - t0)
                 .count();
    }
    r.manifest.stages.push_back(rec);
  };

  const PipelineConfig& pc = cfg.pipeline;
  std::unique_ptr<Predictor> owned;
  Predictor* predictor = hooks.predictor;

  run_stage(stage::load, true, [&] {
    r.bundle = hooks.bundle ? std::move(*hooks.bundle) : load_bundle(cfg);
    r.bundle.config = pc;
    validate(r.bundle);
    if (!cfg.score_file.empty())
      r.scores = load_scores(cfg.score_file);
    if (!predictor)
    {
      owned = make_predictor(cfg, r.bundle);
      predictor = owned.get();
    }
  });

  if (cfg.refine_depth)
    run_stage(stage::refine_depth, true, [&] {
      r.depth_loss_before = keypoint_depth_loss(r.bundle);
      RefineOptions o;
      o.smoothness_lambda = cfg.depth_lambda;
      o.steps = cfg.depth_steps;
      o.step_size = cfg.depth_step_size;
      for (auto& v : r.bundle.views)
      {
        if (!v.depth)
          throw MissingDepthError("view " + std::to_string(v.id) +
                                  " has no depth map to refine");
        v.depth = refine_depth(*v.depth, depth_targets(r.bundle, v.id), o);
      }
      r.depth_loss_after = keypoint_depth_loss(r.bundle);
    });

  run_stage(stage::build_graphs, true, [&] {
    r.graphs = build_graph_set(r.bundle, graph_options(r.bundle, pc, cfg.threads),
                               cfg.graph_window);
  });

  const int ds = pc.latent_downscale;
  run_stage(stage::align_noise, true, [&] {
    const auto& cam = r.bundle.views.front().camera;
    if (cam.width % ds != 0 || cam.height % ds != 0)
      throw ShapeMismatchError("image size must be divisible by sync.latent_downscale");
    for (const auto& v : r.bundle.views)
      r.initial_noise.push_back(sample_noise(predictor->latent_channels(),
                                             cam.height / ds, cam.width / ds,
                                             cfg.seed, v.id));
    if (cfg.align_noise)
      r.initial_noise = align_initial_noise(r.initial_noise, r.graphs, ds);
  });

  run_stage(stage::denoise, true, [&] {
    SyncOptions o;
    o.guidance = {pc.g_I, pc.g_T};
    o.aligned_layers = pc.aligned_layers;
    o.latent_downscale = ds;
    o.decay_radius = pc.decay_radius;
    o.prompt = cfg.prompt;
    o.align_features = cfg.align_features;
    o.predictor_scheduler = cfg.remote_scheduler;
    r.sync = run_synchronized_denoise(r.bundle, r.graphs, *predictor,
                                      DenoiseSchedule::uniform(cfg.steps), o,
                                      r.initial_noise);
    for (std::size_t i = 0; i < r.bundle.views.size(); ++i)
    {
      const auto& cam = r.bundle.views[i].camera;
      r.edited.push_back({r.bundle.views[i].id, r.sync.images[i],
                          make_mask(cam.height, cam.width)});
    }
  });

  run_stage(stage::select_anchors, true, [&] {
    const std::vector<int> ids = r.bundle.view_ids();
    r.plan = select_anchors(ids, scores_for(ids, r.scores), pc.group_size,
                            pc.overlap_threshold);
  });

  run_stage(stage::propagate, cfg.propagate, [&] {
    for (const auto& group : r.plan.groups)
    {
      const std::size_t ai = r.bundle.index_of(group.anchor);
      const CorrespondenceGraph& g = r.graphs[ai];
      for (int member : group.members)
      {
        if (member == group.anchor)
          continue;
        const std::size_t mi = r.bundle.index_of(member);
        if (!g.has_candidate(member))
        {
          r.coverage[member] = 0.0;
          continue;
        }
        const ValidMaskPair pair = extract_valid_pair(g, group.anchor, member);
        const double cov = pair_coverage(pair, r.bundle.views[mi].fore_mask);
        r.coverage[member] = cov;
        if (cov >= r.plan.overlap_threshold)
          r.edited[mi] = propagate(r.edited[ai], r.edited[mi], pair);
      }
    }
  });

  const bool refining = cfg.propagate && cfg.refine_steps > 0;
  run_stage(stage::masked_refine, refining, [&] {
    const int t_max = static_cast<int>(std::lround(kRefineStrength * (kTrainTimesteps - 1)));
    const DenoiseSchedule schedule = DenoiseSchedule::uniform(cfg.refine_steps, t_max);
    const GuidanceConfig guidance{pc.g_I, pc.g_T};
    const RefineSettings settings{ds, cfg.prompt};
    for (const auto& group : r.plan.groups)
      for (int member : group.members)
      {
        if (member == group.anchor)
          continue;
        const std::size_t mi = r.bundle.index_of(member);
        const auto& view = r.bundle.views[mi];
        const BinaryMask fore = view.fore_mask
                                  ? *view.fore_mask
                                  : make_mask(view.camera.height, view.camera.width, true);
        r.edited[mi] = masked_refine(r.edited[mi], *predictor, schedule, guidance,
                                     refinement_mask(fore, r.edited[mi].replaced_mask),
                                     settings);
      }
  });

  std::vector<GridTensor> images;
  for (const auto& e : r.edited)
    images.push_back(e.image);

  run_stage(stage::bake, true, [&] {
    BakeOptions o;
    o.mu = pc.mu;
    o.threads = cfg.threads;
    r.points = bake(r.bundle, images, &r.graphs, o);
  });

  run_stage(stage::report, true, [&] {
    std::vector<Camera> cams;
    for (const auto& v : r.bundle.views)
      cams.push_back(v.camera);
    r.report = consistency_report(r.bundle.view_ids(), images, r.points, cams);
  });

  if (hooks.write)
  {
    try
    {
      r.manifest.outputs = save_artifacts(r, out_dir);
      detail::write_text(out_dir / "manifest.tsv",
                         artifact_manifest(out_dir, r.manifest.outputs));
    }
    catch (const std::exception& e)
    {
      r.manifest.failed = true;
      detail::write_text(out_dir / "FAILED", std::string("write artifacts: ") +
                                               e.what() + "\n");
      write_run_manifest();
      throw;
    }
    write_run_manifest();
  }
  return r;
}

/// Loads a config file and runs the pipeline.
inline RunManifest run(const std::filesystem::path& config_path)
{
  return run_pipeline(load_run_config(config_path)).manifest;
}

} // namespace syncnoise
