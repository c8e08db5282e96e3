#include "oracles.hpp"
#include "support.hpp"

using namespace syncnoise;

namespace {

GraphOptions opts(double tau_d, double tau_p = 2.0, double mu = 50.0)
{
  return {tau_d, tau_p, mu, 1};
}

} // namespace

TEST(DepthFilter, StrictThreshold)
{
  EXPECT_TRUE(depth_filter(0.0, 0.1));
  EXPECT_FALSE(depth_filter(0.1, 0.1));
  EXPECT_FALSE(depth_filter(1.0, 0.1));
}

TEST(CycleFilter, StrictThreshold)
{
  EXPECT_TRUE(cycle_filter({3, 4}, {3, 4}, 0.5));
  EXPECT_FALSE(cycle_filter({0, 0}, {3, 4}, 5.0));
  EXPECT_TRUE(cycle_filter({0, 0}, {3, 4}, 5.0 + 1e-9));
}

TEST(MatchWeight, ClosedForms)
{
  EXPECT_DOUBLE_EQ(match_weight(0.0, 50.0), 1.0);
  EXPECT_NEAR(match_weight(std::log(2.0), 1.0), 0.5, 1e-15);
  EXPECT_DOUBLE_EQ(match_weight(123.0, 0.0), 1.0);
}

TEST(MatchWeight, NormalizationSumsToOne)
{
  std::vector<Match> ms(3);
  ms[0].weight = 1.0;
  ms[1].weight = 0.5;
  ms[2].weight = 0.25;
  normalize_weights(ms);
  EXPECT_NEAR(ms[0].weight + ms[1].weight + ms[2].weight, 1.0, 1e-15);
  EXPECT_NEAR(ms[0].weight, 4.0 / 7.0, 1e-15);
}

TEST(BuildGraph, SelfOnlyCandidateGivesUnitSelfMatch)
{
  const SyntheticScene scene = testutil::plane_scene(2, 32);
  const CorrespondenceGraph g = build_graph(scene.bundle, 1, {1}, opts(0.01));
  EXPECT_EQ(g.entries.size(), popcount(*scene.bundle.views[0].fore_mask));
  for (const auto& e : g.entries)
  {
    ASSERT_EQ(e.matches.size(), 1u);
    EXPECT_EQ(e.matches[0].view_id, 1);
    EXPECT_EQ(e.matches[0].weight, 1.0);
    EXPECT_EQ(e.matches[0].delta, 0.0);
  }
}

TEST(BuildGraph, PlaneTwoViewsMatchesEveryVisiblePixelExactly)
{
  const SyntheticScene scene = testutil::plane_scene(2, 64, 40.0);
  GraphSet graphs = build_graph_set(scene.bundle, opts(0.01));
  const oracle::GeometryStats s = oracle::geometry_exactness(scene, graphs);
  EXPECT_GT(s.visible, 1000u);
  EXPECT_EQ(s.matched, s.visible);
  EXPECT_EQ(s.unexpected, 0u);
  EXPECT_LT(s.max_delta, 1e-6);
  EXPECT_LT(s.max_cycle, 1e-6);
}

TEST(BuildGraph, WeightsNormalizedAndOrdered)
{
  const SyntheticScene scene = testutil::plane_scene(4, 32);
  const CorrespondenceGraph g = build_graph(scene.bundle, 2, {1, 2, 3, 4}, opts(0.05));
  for (const auto& e : g.entries)
  {
    double sum = 0.0;
    for (std::size_t i = 0; i < e.matches.size(); ++i)
    {
      sum += e.matches[i].weight;
      if (i > 0)
      {
        EXPECT_LT(e.matches[i - 1].view_id, e.matches[i].view_id);
      }
    }
    EXPECT_NEAR(sum, 1.0, 1e-6);
    EXPECT_TRUE(oracle::find_match(e, 2));
  }
}

TEST(BuildGraph, VanishingThresholdOnNoisyDepthKeepsOnlySelfMatches)
{
  SyntheticScene scene = testutil::plane_scene(3, 32);
  std::mt19937_64 rng(11);
  std::normal_distribution<double> noise(0.0, 0.01);
  for (auto& v : scene.bundle.views)
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x)
        v.depth->set(x, y, v.depth->at(x, y) + noise(rng));
  const CorrespondenceGraph g = build_graph(scene.bundle, 1, {1, 2, 3}, opts(1e-12));
  ASSERT_FALSE(g.entries.empty());
  for (const auto& e : g.entries)
  {
    ASSERT_EQ(e.matches.size(), 1u);
    EXPECT_EQ(e.matches[0].view_id, 1);
  }
}

TEST(BuildGraph, MissingDepthThrows)
{
  SyntheticScene scene = testutil::plane_scene(2, 16);
  scene.bundle.views[1].depth.reset();
  EXPECT_THROW(build_graph(scene.bundle, 1, {2}, opts(0.01)), MissingDepthError);
  EXPECT_THROW(build_graph(scene.bundle, 2, {1}, opts(0.01)), MissingDepthError);
  EXPECT_THROW(build_graph(scene.bundle, 1, {2}, opts(0.0)), ArgumentError);
}

TEST(BuildGraph, ThresholdMonotonicity)
{
  SyntheticScene scene = testutil::plane_scene(3, 32);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> noise(0.0, 0.02);
  for (auto& v : scene.bundle.views)
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x)
        v.depth->set(x, y, v.depth->at(x, y) + noise(rng));
  auto accepted = [&](double tau_d, double tau_p) {
    std::set<std::tuple<std::uint32_t, int>> out;
    const auto g = build_graph(scene.bundle, 2, {1, 2, 3}, opts(tau_d, tau_p));
    for (const auto& e : g.entries)
      for (const auto& m : e.matches)
        out.insert({e.pixel, m.view_id});
    return out;
  };
  const auto small = accepted(0.01, 0.5);
  for (auto [td, tp] : {std::pair{0.02, 0.5}, {0.01, 1.0}, {0.05, 3.0}})
  {
    const auto big = accepted(td, tp);
    EXPECT_TRUE(std::includes(big.begin(), big.end(), small.begin(), small.end()));
    EXPECT_GE(big.size(), small.size());
  }
}

TEST(BuildGraph, RetainedMatchesShrinkWithBaselineOnOrbit)
{
  // Walk the orbit away from each reference in both directions, up to the
  // opposite camera.
  SyntheticOptions o;
  o.views = 8;
  o.resolution = 128;
  const SyntheticScene scene = make_synthetic_scene(SyntheticKind::cube, o);
  const auto ids = scene.bundle.view_ids();
  GraphOptions go = opts(resolve_tau_d(scene.bundle, PipelineConfig{}));
  for (int ref = 1; ref <= 8; ++ref)
  {
    const auto stats = graph_stats(build_graph(scene.bundle, ref, ids, go));
    auto count = [&](int k) {
      return stats["matches_per_view"].value(std::to_string((k % 8 + 8) % 8 + 1), std::size_t{0});
    };
    for (int dir : {1, -1})
      for (int step = 1; step < 4; ++step)
        EXPECT_LE(count(ref - 1 + dir * (step + 1)), count(ref - 1 + dir * step))
          << "ref " << ref << " direction " << dir << " step " << step;
  }
}

TEST(BuildGraph, OccluderRejectedOnTwoPlanes)
{
  SyntheticOptions o;
  o.views = 3;
  o.resolution = 64;
  const SyntheticScene scene = make_synthetic_scene(SyntheticKind::two_planes, o);
  const SceneBundle bare = oracle::without_masks(scene.bundle);
  GraphSet graphs = build_graph_set(bare, opts(o.plane_gap / 2));
  const oracle::OcclusionStats s = oracle::occlusion_rejection(scene, graphs);
  EXPECT_GT(s.occluded, 50u);
  EXPECT_GE(static_cast<double>(s.rejected), 0.99 * static_cast<double>(s.occluded));
}

TEST(ExtractValidPair, NoMatchesGivesEmptyMasks)
{
  SyntheticScene scene = testutil::plane_scene(2, 32);
  const CorrespondenceGraph g = build_graph(scene.bundle, 1, {1, 2}, opts(1e-12));
  // Exact depth still matches; drop the neighbor's matches by hand.
  CorrespondenceGraph stripped = g;
  for (auto& e : stripped.entries)
    std::erase_if(e.matches, [](const Match& m) { return m.view_id == 2; });
  const ValidMaskPair p = extract_valid_pair(stripped, 1, 2);
  EXPECT_TRUE(p.pairing.empty());
  EXPECT_EQ(popcount(p.ref_mask), 0u);
  EXPECT_EQ(popcount(p.tgt_mask), 0u);
}

TEST(ExtractValidPair, IdenticalCamerasGiveForegroundMask)
{
  SyntheticScene scene = testutil::plane_scene(2, 32);
  auto& b = scene.bundle;
  b.views[1].camera = b.views[0].camera;
  b.views[1].depth = b.views[0].depth;
  b.views[1].fore_mask = b.views[0].fore_mask;
  b.views[1].image = b.views[0].image;
  const CorrespondenceGraph g = build_graph(b, 1, {2}, opts(0.01));
  const ValidMaskPair p = extract_valid_pair(g, 1, 2);
  EXPECT_EQ(p.ref_mask.values().size(), b.views[0].fore_mask->values().size());
  EXPECT_TRUE(std::equal(p.ref_mask.values().begin(), p.ref_mask.values().end(),
                         b.views[0].fore_mask->values().begin()));
  EXPECT_TRUE(std::equal(p.tgt_mask.values().begin(), p.tgt_mask.values().end(),
                         b.views[0].fore_mask->values().begin()));
  EXPECT_EQ(popcount(p.ref_mask), p.pairing.size());
}

TEST(ExtractValidPair, OverlapMatchesOracleCount)
{
  // Crop the neighbor's foreground to its left half: about 50% overlap.
  SyntheticScene scene = testutil::plane_scene(2, 64, 20.0);
  auto& b = scene.bundle;
  BinaryMask& m2 = *b.views[1].fore_mask;
  for (int y = 0; y < 64; ++y)
    for (int x = 32; x < 64; ++x)
      m2(0, y, x) = 0;
  const CorrespondenceGraph g = build_graph(b, 1, {2}, opts(0.01));
  const ValidMaskPair p = extract_valid_pair(g, 1, 2);
  EXPECT_EQ(popcount(p.ref_mask), p.pairing.size());
  EXPECT_EQ(popcount(p.tgt_mask), p.pairing.size());

  // Oracle: target foreground pixels whose ray hits a surface point seen by
  // the anchor's foreground.
  const ViewRecord& a = b.views[0];
  const ViewRecord& t = b.views[1];
  std::size_t expected = 0;
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x)
    {
      if (!m2(0, y, x))
        continue;
      const SurfaceHit h = scene.cast(t.camera, {double(x), double(y)});
      PixelCoord pa;
      if (h.hit && scene.visible(a.camera, h.point, &pa) &&
          (*a.fore_mask)(0, nearest_index(pa.v, 64), nearest_index(pa.u, 64)))
        ++expected;
    }
  ASSERT_GT(expected, 200u);
  EXPECT_NEAR(static_cast<double>(p.pairing.size()), static_cast<double>(expected),
              0.01 * static_cast<double>(expected));
}

TEST(ExtractValidPair, UnknownNeighbor)
{
  const SyntheticScene scene = testutil::plane_scene(3, 16);
  const CorrespondenceGraph g = build_graph(scene.bundle, 1, {2}, opts(0.01));
  EXPECT_THROW(extract_valid_pair(g, 1, 3), UnknownViewError);
  EXPECT_THROW(extract_valid_pair(g, 2, 1), ArgumentError);
}

TEST(ResolveTauD, OnePercentOfDepthRange)
{
  SceneBundle b;
  ViewRecord v;
  v.depth = DepthMap(1, 3);
  v.depth->set(0, 0, 2.0);
  v.depth->set(1, 0, 0.0);
  v.depth->set(2, 0, 6.0);
  b.views.push_back(v);
  PipelineConfig c;
  EXPECT_DOUBLE_EQ(resolve_tau_d(b, c), 0.04);
  c.tau_d = 0.3;
  EXPECT_DOUBLE_EQ(resolve_tau_d(b, c), 0.3);
}
