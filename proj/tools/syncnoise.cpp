// Command-line front end: run a pipeline, generate synthetic scenes, inspect
// manifests.

#include <syncnoise/syncnoise.hpp>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace syncnoise;

namespace {

int cmd_run(const fs::path& config)
{
  const RunConfig cfg = load_run_config(config);
  const PipelineResult r = run_pipeline(cfg);
  for (const auto& s : r.manifest.stages)
    std::cout << s.name << "\t" << s.status << "\t" << s.ms << " ms\n";
  std::cout << "cross_view_color_variance\t" << r.report.cross_view_color_variance
            << "\ncoverage\t" << r.report.coverage << "\noutput\t"
            << cfg.output_dir.string() << "\n";
  return 0;
}

int cmd_gen(const std::string& kind, int views, int res, const fs::path& out,
            std::uint64_t seed)
{
  SyntheticOptions o;
  o.views = views;
  o.resolution = res;
  o.seed = seed;
  const SyntheticScene scene = make_synthetic_scene(parse_synthetic_kind(kind), o);
  write_synthetic_scene(scene, out);
  std::cout << "wrote " << scene.bundle.views.size() << " views, "
            << scene.bundle.points3d.size() << " keypoints to " << out.string()
            << "\n";
  return 0;
}

/// Verifies a manifest.tsv against the files next to it, or pretty-prints a
/// run_manifest.json.
int cmd_inspect(const fs::path& path)
{
  std::ifstream in(path);
  if (!in)
    throw IoError("cannot open " + path.string());
  if (path.extension() == ".json")
  {
    const nlohmann::json j = nlohmann::json::parse(in);
    std::cout << "status\t" << j.value("status", "?") << "\nseed\t"
              << j.value("seed", 0) << "\n";
    for (const auto& s : j.at("stages"))
      std::cout << s.at("name").get<std::string>() << "\t"
                << s.at("status").get<std::string>() << "\t"
                << s.at("ms").get<double>() << " ms\n";
    return j.value("status", "") == "ok" ? 0 : 1;
  }
  int bad = 0;
  std::string line;
  while (std::getline(in, line))
  {
    if (line.empty())
      continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw FormatError("malformed manifest line: " + line);
    const std::string rel = line.substr(0, tab);
    const fs::path file = path.parent_path() / rel;
    std::string status = "missing";
    if (fs::exists(file))
      status = sha256_file(file) == line.substr(tab + 1) ? "ok" : "mismatch";
    if (status != "ok")
      ++bad;
    std::cout << rel << "\t" << status << "\n";
  }
  return bad == 0 ? 0 : 1;
}

} // namespace

int main(int argc, char** argv)
{
  CLI::App app{"multi-view consistent editing pipeline"};
  app.require_subcommand(1);

  fs::path config;
  auto* run = app.add_subcommand("run", "run the pipeline from a config file");
  run->add_option("--config", config, "config file")->required();

  std::string kind;
  int views = 8;
  int res = 128;
  fs::path out;
  std::uint64_t seed = 0;
  auto* gen = app.add_subcommand("gen", "write a synthetic scene");
  gen->add_option("--kind", kind, "plane | two_planes | cube")->required();
  gen->add_option("--views", views, "number of views")->capture_default_str();
  gen->add_option("--res", res, "image width and height")->capture_default_str();
  gen->add_option("--out", out, "output directory")->required();
  gen->add_option("--seed", seed, "keypoint sampling seed")->capture_default_str();

  fs::path manifest;
  auto* inspect = app.add_subcommand("inspect", "check a manifest");
  inspect->add_option("--manifest", manifest, "manifest.tsv or run_manifest.json")
    ->required();

  CLI11_PARSE(app, argc, argv);

  try
  {
    if (*run)
      return cmd_run(config);
    if (*gen)
      return cmd_gen(kind, views, res, out, seed);
    if (*inspect)
      return cmd_inspect(manifest);
  }
  catch (const StageError& e)
  {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  catch (const ConfigError& e)
  {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }
  catch (const ParseError& e)
  {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }
  catch (const ArgumentError& e)
  {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  catch (const std::exception& e)
  {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
