#include "support.hpp"

using namespace syncnoise;

namespace {

SceneBundle single_view_bundle(double depth_value, std::vector<Eigen::Vector3d> points)
{
  SceneBundle b;
  ViewRecord v;
  v.id = 1;
  v.camera = testutil::simple_camera(100, 10, 21);
  v.depth = DepthMap(21, 21);
  for (int y = 0; y < 21; ++y)
    for (int x = 0; x < 21; ++x)
      v.depth->set(x, y, depth_value);
  b.views.push_back(v);
  for (const auto& p : points)
  {
    Keypoint3D kp;
    kp.position = p;
    kp.observations.push_back({1, project(b.views[0].camera, p).pixel});
    b.points3d.push_back(kp);
  }
  return b;
}

} // namespace

TEST(KeypointDepthLoss, ExactDepthGivesZero)
{
  SceneBundle b = single_view_bundle(2.0, {});
  Keypoint3D kp;
  kp.position = backproject(b.views[0].camera, {4, 7}, 2.0);
  kp.observations.push_back({1, {4, 7}});
  b.points3d.push_back(kp);
  EXPECT_DOUBLE_EQ(keypoint_depth_loss(b).loss, 0.0);
}

TEST(KeypointDepthLoss, SingleOffsetKeypoint)
{
  const SceneBundle b = single_view_bundle(2.5, {{0, 0, 2.0}});
  const DepthLossReport r = keypoint_depth_loss(b);
  ASSERT_EQ(r.residuals.size(), 1u);
  EXPECT_DOUBLE_EQ(r.residuals[0].residual, 0.5);
  EXPECT_DOUBLE_EQ(r.loss, 0.5);
}

TEST(KeypointDepthLoss, OppositeOffsetsAverageAbsoluteValues)
{
  const SceneBundle b = single_view_bundle(2.0, {{0, 0, 1.7}, {0.05, 0.05, 2.3}});
  EXPECT_NEAR(keypoint_depth_loss(b).loss, 0.3, 1e-12);
}

TEST(KeypointDepthLoss, EmptyKeypointsThrow)
{
  EXPECT_THROW(keypoint_depth_loss(single_view_bundle(1.0, {})), NoObservationsError);
}

TEST(RefineDepth, ZeroStepsIsIdentity)
{
  const SyntheticScene scene = testutil::plane_scene(2, 16);
  const DepthMap& d = *scene.bundle.views[0].depth;
  const DepthMap out = refine_depth(d, depth_targets(scene.bundle, 1), 0.1, 0, 0.01);
  EXPECT_EQ(testutil::max_abs_diff(out.values, d.values), 0.0);
  EXPECT_THROW(refine_depth(d, {}, 0.1, -1, 0.01), ArgumentError);
  EXPECT_THROW(refine_depth(d, {}, 0.1, 1, 0.0), ArgumentError);
}

TEST(RefineDepth, GradientMatchesCentralDifferences)
{
  std::mt19937_64 rng(99);
  const int w = 24, h = 20;
  GridTensor depth = testutil::random_grid(1, h, w, rng, 1.0, 3.0);
  BinaryMask valid = make_mask(h, w, true);
  for (int i = 0; i < 30; ++i)
    valid(0, int(rng() % h), int(rng() % w)) = 0;
  std::vector<DepthTarget> targets;
  std::uniform_real_distribution<double> u(1.0, 3.0);
  for (int i = 0; i < 60; ++i)
    targets.push_back({int(rng() % w), int(rng() % h), u(rng)});
  const DepthEnergy energy{&targets, &valid, 0.1, 0.05};
  const GridTensor g = energy.gradient(depth);
  const double step = 1e-5;
  int checked = 0;
  while (checked < 100)
  {
    const int x = int(rng() % w), y = int(rng() % h);
    if (!valid(0, y, x))
      continue;
    GridTensor plus = depth, minus = depth;
    plus(0, y, x) += step;
    minus(0, y, x) -= step;
    const double fd = (energy.value(plus) - energy.value(minus)) / (2 * step);
    const double a = g(0, y, x);
    EXPECT_LT(std::abs(a - fd), 1e-4 * std::max(std::abs(fd), 1e-3))
      << "pixel " << x << "," << y << " analytic " << a << " fd " << fd;
    ++checked;
  }
}

TEST(RefineDepth, ConstantOffsetShrinksKeypointLoss)
{
  SyntheticScene scene = testutil::plane_scene(2, 48);
  for (auto& v : scene.bundle.views)
    for (int y = 0; y < 48; ++y)
      for (int x = 0; x < 48; ++x)
        v.depth->set(x, y, v.depth->at(x, y) + 0.3);
  const double before = keypoint_depth_loss(scene.bundle).loss;
  for (auto& v : scene.bundle.views)
    v.depth = refine_depth(*v.depth, depth_targets(scene.bundle, v.id), 0.0, 100, 0.01);
  const double after = keypoint_depth_loss(scene.bundle).loss;
  EXPECT_GT(before, 0.25);
  EXPECT_LT(after, 0.1 * before);
}

TEST(RefineDepth, EnergyNeverIncreases)
{
  SyntheticScene scene = testutil::plane_scene(2, 32);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 0.05);
  DepthMap d = *scene.bundle.views[0].depth;
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x)
      d.set(x, y, d.at(x, y) + n(rng));
  const auto targets = depth_targets(scene.bundle, 1);
  const DepthEnergy e{&targets, &d.valid, 0.1, 0.05};
  double prev = e.value(d.values);
  for (int steps = 1; steps <= 20; ++steps)
  {
    const DepthMap r = refine_depth(d, targets, 0.1, steps, 0.05);
    const double v = e.value(r.values);
    EXPECT_LE(v, prev + 1e-12);
    prev = v;
  }
}

TEST(RefineDepth, RefinementRestoresMatchesOnPerturbedDepth)
{
  SyntheticScene scene = make_synthetic_scene(SyntheticKind::plane, 4, 64, 0);
  SceneBundle& b = scene.bundle;
  const GraphOptions go{resolve_tau_d(b, PipelineConfig{}), 2.0, 50.0, 1};
  auto matches = [&](const SceneBundle& s) {
    std::size_t n = 0;
    for (const auto& v : s.views)
      for (const auto& e : build_graph(s, v.id, candidate_window(s, v.id, 0), go).entries)
        n += e.matches.size() - 1;
    return n;
  };
  std::mt19937_64 rng(7);
  std::normal_distribution<double> noise(0.0, 0.05);
  for (auto& v : b.views)
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x)
        if (v.depth->is_valid(x, y))
          v.depth->set(x, y, v.depth->at(x, y) + noise(rng));
  const std::size_t before = matches(b);
  SceneBundle refined = b;
  for (auto& v : refined.views)
    v.depth = refine_depth(*v.depth, depth_targets(b, v.id), RefineOptions{});
  const std::size_t after = matches(refined);
  EXPECT_GE(static_cast<double>(after), 1.5 * static_cast<double>(before))
    << before << " -> " << after;
}
