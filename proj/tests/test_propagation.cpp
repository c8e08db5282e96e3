#include "support.hpp"

using namespace syncnoise;

namespace {

std::vector<int> iota_ids(int n)
{
  std::vector<int> ids(n);
  std::iota(ids.begin(), ids.end(), 1);
  return ids;
}

EditedView constant_view(int id, int size, double value)
{
  return {id, GridTensor(3, size, size, value), make_mask(size, size)};
}

/// Zero noise except a constant on the text branch.
class OffsetText : public ZeroPredictor
{
public:
  explicit OffsetText(double offset, int downscale = 1)
    : ZeroPredictor(ResidualCodec{downscale})
    , offset_(offset)
  {
  }
  PredictorResponse predict(const PredictorRequest& r) override
  {
    PredictorResponse out = ZeroPredictor::predict(r);
    if (r.mode == Conditioning::image_text)
      for (auto& v : out.eps.values())
        v = offset_;
    return out;
  }

private:
  double offset_;
};

} // namespace

TEST(SelectAnchors, HighestScorePerGroup)
{
  const auto ids = iota_ids(20);
  std::vector<double> scores(20, 0.1);
  scores[9] = 0.9;
  scores[19] = 0.8;
  const AnchorPlan plan = select_anchors(ids, scores, 10);
  ASSERT_EQ(plan.groups.size(), 2u);
  EXPECT_EQ(plan.groups[0].anchor, 10);
  EXPECT_EQ(plan.groups[1].anchor, 20);
  EXPECT_EQ(plan.groups[1].members.front(), 11);
}

TEST(SelectAnchors, TiesGoToEarliest)
{
  const auto ids = iota_ids(20);
  const AnchorPlan plan = select_anchors(ids, std::vector<double>(20, 0.0), 10);
  EXPECT_EQ(plan.groups[0].anchor, 1);
  EXPECT_EQ(plan.groups[1].anchor, 11);
  EXPECT_EQ(scores_for(ids, {}), std::vector<double>(20, 0.0));
}

TEST(SelectAnchors, ShortTailGroup)
{
  const AnchorPlan plan = select_anchors(iota_ids(25), std::vector<double>(25, 1.0), 10);
  ASSERT_EQ(plan.groups.size(), 3u);
  EXPECT_EQ(plan.groups[2].members.size(), 5u);
  EXPECT_EQ(plan.groups[2].anchor, 21);
}

TEST(SelectAnchors, InvariantToPositiveAffineScoreMaps)
{
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto ids = iota_ids(17);
  std::vector<double> s(17), t(17);
  for (int i = 0; i < 17; ++i)
  {
    s[i] = u(rng);
    t[i] = 3.5 * s[i] - 2.0;
  }
  const AnchorPlan a = select_anchors(ids, s, 4), b = select_anchors(ids, t, 4);
  ASSERT_EQ(a.groups.size(), b.groups.size());
  for (std::size_t g = 0; g < a.groups.size(); ++g)
    EXPECT_EQ(a.groups[g].anchor, b.groups[g].anchor);
}

TEST(SelectAnchors, ArgumentChecks)
{
  EXPECT_THROW(select_anchors({}, {}, 3), EmptyViewListError);
  EXPECT_THROW(select_anchors({1, 2}, {0.0}, 3), ArgumentError);
  EXPECT_THROW(select_anchors({1}, {0.0}, 0), ArgumentError);
  EXPECT_THROW(select_anchors({1}, {0.0}, 1, 0.0), ArgumentError);
}

TEST(Propagate, EmptyPairingLeavesNeighborUntouched)
{
  const EditedView anchor = constant_view(1, 8, 0.9);
  const EditedView neighbor = constant_view(2, 8, 0.1);
  const ValidMaskPair pair{make_mask(8, 8), make_mask(8, 8), {}};
  const EditedView out = propagate(anchor, neighbor, pair);
  EXPECT_EQ(out.image, neighbor.image);
  EXPECT_EQ(popcount(out.replaced_mask), 0u);
}

TEST(Propagate, IdenticalCamerasCopyForeground)
{
  SyntheticScene scene = testutil::plane_scene(2, 32);
  auto& b = scene.bundle;
  b.views[1].camera = b.views[0].camera;
  b.views[1].depth = b.views[0].depth;
  b.views[1].fore_mask = b.views[0].fore_mask;
  const CorrespondenceGraph g = build_graph(b, 1, {1, 2}, GraphOptions{0.01, 2.0, 50.0, 1});
  const ValidMaskPair pair = extract_valid_pair(g, 1, 2);
  std::mt19937_64 rng(3);
  const EditedView anchor{1, testutil::random_grid(3, 32, 32, rng, 0, 1), make_mask(32, 32)};
  const EditedView neighbor{2, testutil::random_grid(3, 32, 32, rng, 0, 1), make_mask(32, 32)};
  const EditedView out = propagate(anchor, neighbor, pair);
  const BinaryMask& fore = *b.views[0].fore_mask;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x)
        EXPECT_EQ(out.image(c, y, x),
                  fore(0, y, x) ? anchor.image(c, y, x) : neighbor.image(c, y, x));
  EXPECT_EQ(out.replaced_mask, fore);
}

TEST(Propagate, IdempotentAndInsideForeground)
{
  const SyntheticScene scene = testutil::plane_scene(2, 48, 30.0);
  const CorrespondenceGraph g = build_graph(scene.bundle, 1, {1, 2}, GraphOptions{0.01, 2.0, 50.0, 1});
  const ValidMaskPair pair = extract_valid_pair(g, 1, 2);
  ASSERT_FALSE(pair.pairing.empty());
  std::mt19937_64 rng(4);
  const EditedView anchor{1, testutil::random_grid(3, 48, 48, rng, 0, 1), make_mask(48, 48)};
  const EditedView neighbor{2, testutil::random_grid(3, 48, 48, rng, 0, 1), make_mask(48, 48)};
  const EditedView once = propagate(anchor, neighbor, pair);
  const EditedView twice = propagate(anchor, once, pair);
  EXPECT_EQ(once.image, twice.image);
  EXPECT_TRUE(is_subset(once.replaced_mask, *scene.bundle.views[1].fore_mask));
  EXPECT_EQ(popcount(once.replaced_mask), pair.pairing.size());
  EXPECT_NO_THROW(refinement_mask(*scene.bundle.views[1].fore_mask, once.replaced_mask));
  const double cov = pair_coverage(pair, scene.bundle.views[1].fore_mask);
  EXPECT_GT(cov, 0.0);
  EXPECT_LE(cov, 1.0);
}

TEST(Propagate, ShapeMismatch)
{
  const ValidMaskPair pair{make_mask(8, 8), make_mask(8, 8), {}};
  EXPECT_THROW(propagate(constant_view(1, 8, 0), constant_view(2, 9, 0), pair),
               ShapeMismatchError);
}

TEST(RefinementMask, ForegroundMinusReplaced)
{
  BinaryMask fore = make_mask(1, 4);
  fore(0, 0, 0) = fore(0, 0, 1) = fore(0, 0, 2) = 1;
  BinaryMask rep = make_mask(1, 4);
  rep(0, 0, 1) = 1;
  const BinaryMask m = refinement_mask(fore, rep);
  EXPECT_EQ(m(0, 0, 0), 1);
  EXPECT_EQ(m(0, 0, 1), 0);
  EXPECT_EQ(m(0, 0, 2), 1);
  EXPECT_EQ(m(0, 0, 3), 0);
  EXPECT_EQ(popcount(refinement_mask(fore, fore)), 0u);
  rep(0, 0, 3) = 1;
  EXPECT_THROW(refinement_mask(fore, rep), MaskInconsistencyError);
}

TEST(MaskedRefine, EmptyScheduleIsIdentity)
{
  ZeroPredictor p;
  const EditedView v = constant_view(1, 8, 0.4);
  const EditedView out = masked_refine(v, p, DenoiseSchedule::uniform(0), {1.5, 7.5},
                                       make_mask(8, 8, true), {1, "x"});
  EXPECT_EQ(out.image, v.image);
}

TEST(MaskedRefine, EmptyMaskWithZeroPredictorKeepsImage)
{
  ZeroPredictor p;
  std::mt19937_64 rng(1);
  const EditedView v{1, testutil::random_grid(3, 8, 8, rng, 0, 1), make_mask(8, 8)};
  const EditedView out =
    masked_refine(v, p, DenoiseSchedule::uniform(5), {1.5, 7.5}, make_mask(8, 8), {1, "x"});
  EXPECT_EQ(out.image, v.image);
}

TEST(MaskedRefine, TextOffsetConfinedToMask)
{
  // Zero image noise keeps the latent fixed through inversion; the text term
  // then moves masked cells by -sigma_0 * g_T * offset in total.
  const DenoiseSchedule s = DenoiseSchedule::uniform(10, 499);
  const double offset = 0.2 / s.sigma(0);
  OffsetText p(offset);
  EditedView v = constant_view(1, 16, 0.5);
  v.replaced_mask = make_mask(16, 16);
  BinaryMask refine = make_mask(16, 16);
  for (int y = 4; y < 16; ++y)
    for (int x = 4; x < 12; ++x)
      (y < 12 ? refine : v.replaced_mask)(0, y, x) = 1;
  const EditedView out = masked_refine(v, p, s, {1.5, 1.0}, refine, {1, "x"});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x)
      {
        if (refine(0, y, x))
          EXPECT_NEAR(out.image(c, y, x), 0.3, 1e-12);
        else
          EXPECT_EQ(out.image(c, y, x), 0.5);
      }
}

TEST(MaskedRefine, LatentDownscaleKeepsOutsideBlocks)
{
  const DenoiseSchedule s = DenoiseSchedule::uniform(6, 499);
  OffsetText p(0.1 / s.sigma(0), 4);
  const EditedView v = constant_view(1, 16, 0.5);
  BinaryMask refine = make_mask(16, 16);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x)
      refine(0, y, x) = 1;
  const EditedView out = masked_refine(v, p, s, {1.5, 1.0}, refine, {4, "x"});
  EXPECT_NEAR(out.image(0, 3, 3), 0.4, 1e-12);
  EXPECT_EQ(out.image(0, 12, 12), 0.5);
  EXPECT_EQ(out.image(1, 3, 12), 0.5);
}
