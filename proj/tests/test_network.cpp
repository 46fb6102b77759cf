#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "oracles.hpp"
#include "stcl/baseline.hpp"
#include "stcl/gradcheck.hpp"
#include "stcl/inference.hpp"
#include "stcl/network.hpp"

using namespace stcl;

namespace {

SpatioTemporalSequence random_sequence(Rng& rng, const NetworkConfig& cfg, int slices, int times) {
  SpatioTemporalSequence seq(slices, times);
  for (auto& f : seq.frames) f = oracle::random_map(rng, cfg.input_size, cfg.input_size, cfg.input_channels, 0.0, 1.0);
  for (int t = 0; t < times; ++t) seq.intervals.push_back(rng.uniform(200.0, 600.0));
  return seq;
}

bool differs(const FeatureMap& a, const FeatureMap& b) { return oracle::max_abs_diff(a, b) > 0.0; }

MaskVolume disk(int size, double cy, double cx, double r) {
  MaskVolume m(1, size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) m.at(0, y, x) = std::hypot(y - cy, x - cx) <= r ? 1 : 0;
  return m;
}

double equivalent_radius(const MaskVolume& m) { return std::sqrt(static_cast<double>(m.count()) / std::numbers::pi); }

}  // namespace

TEST(Encoder, PredictionShapeTrace) {
  const NetworkConfig cfg = NetworkConfig::prediction();
  const NetworkParams p = NetworkParams::initialize(cfg, 1);
  Rng rng(1);
  EXPECT_EQ(encode(oracle::random_map(rng, 32, 32, 3), p, cfg).shape(), "8x8x8");
  EXPECT_EQ(cfg.cell_input_channels(), 9);
}

TEST(Encoder, SegmentationShapeTrace) {
  const NetworkConfig cfg = NetworkConfig::segmentation();
  EXPECT_EQ(encode(FeatureMap(96, 96, 1), NetworkParams::zeros(cfg), cfg).shape(), "12x12x64");
  EXPECT_EQ(cfg.decoder_channels, (std::vector<int>{64, 32, 16, 1}));
}

TEST(Encoder, ZeroInputZeroBiasGivesZero) {
  const NetworkConfig cfg = NetworkConfig::prediction();
  NetworkParams p = NetworkParams::initialize(cfg, 2);
  for (auto& k : p.encoder) std::fill(k.bias.begin(), k.bias.end(), 0.0);
  const FeatureMap y = encode(FeatureMap(32, 32, 3), p, cfg);
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(Encoder, WrongFrameShapeIsConfigError) {
  const NetworkConfig cfg = NetworkConfig::prediction();
  EXPECT_THROW(encode(FeatureMap(32, 32, 1), NetworkParams::zeros(cfg), cfg), ConfigError);
  EXPECT_THROW(encode(FeatureMap(16, 16, 3), NetworkParams::zeros(cfg), cfg), ConfigError);
}

TEST(Config, PredictionPlanIsValidatedAndRoundTrips) {
  NetworkConfig cfg = NetworkConfig::prediction();
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_EQ(cfg.bottleneck_size(), 8);
  nlohmann::json j = cfg;
  EXPECT_EQ(j.get<NetworkConfig>(), cfg);
  cfg.encoder_channels.push_back(4);
  cfg.encoder_strides.push_back(1);
  EXPECT_THROW(cfg.validate(), ConfigError);
  NetworkConfig no_factor = NetworkConfig::prediction();
  no_factor.factor_dim = 0;
  EXPECT_THROW(no_factor.validate(), ConfigError);
}

TEST(Factor, TileAndNormalize) {
  const FeatureMap t = tile_factor(0.5, 8, 8, 1);
  EXPECT_EQ(t.shape(), "8x8x1");
  for (double v : t.values()) EXPECT_EQ(v, 0.5);
  EXPECT_EQ(concat_channels(FeatureMap(8, 8, 8), t).shape(), "8x8x9");
  EXPECT_NEAR(normalize_interval(398.0), 1.0904109589041096, 1e-15);
  EXPECT_THROW(tile_factor(1.0, 8, 8, 0), ConfigError);
}

TEST(Grid, SingleUnitWithZeroParamsOutputsOneHalf) {
  const NetworkConfig cfg = NetworkConfig::prediction();
  Rng rng(3);
  const SpatioTemporalSequence seq = random_sequence(rng, cfg, 1, 1);
  const GridResult r = grid_forward(prediction_input(seq, 1), NetworkParams::zeros(cfg), cfg);
  ASSERT_EQ(r.outputs.size(), 1u);
  for (double v : r.outputs[0].values()) EXPECT_EQ(v, 0.5);
  for (double v : r.states[0].cell.values()) EXPECT_EQ(v, 0.0);
}

TEST(Grid, GlobalContextLinkCarriesLastSliceForward) {
  const NetworkConfig cfg = NetworkConfig::prediction();
  const NetworkParams p = NetworkParams::initialize(cfg, 4);
  Rng rng(4);
  SpatioTemporalSequence seq = random_sequence(rng, cfg, 5, 2);
  const GridResult base = grid_forward(prediction_input(seq, 2), p, cfg);

  SpatioTemporalSequence first = seq;
  first.frame(0, 0) = oracle::random_map(rng, 32, 32, 3, 0.0, 1.0);
  EXPECT_TRUE(differs(grid_forward(prediction_input(first, 2), p, cfg).output(4, 1), base.output(4, 1)));

  // Unit (0, 1) sees the last slice of column 0 only through the link.
  SpatioTemporalSequence last = seq;
  last.frame(4, 0) = oracle::random_map(rng, 32, 32, 3, 0.0, 1.0);
  const GridResult r = grid_forward(prediction_input(last, 2), p, cfg);
  EXPECT_TRUE(differs(r.output(0, 1), base.output(0, 1)));
  EXPECT_EQ(r.output(0, 0), base.output(0, 0));
}

TEST(Grid, BoundaryUnitsGetZeroPredecessors) {
  const Predecessors first = predecessors({0, 0}, 5);
  EXPECT_FALSE(first.spatial.has_value());
  EXPECT_FALSE(first.temporal.has_value());
  const Predecessors top = predecessors({3, 0}, 5);
  EXPECT_FALSE(top.temporal.has_value());
  const Predecessors link = predecessors({0, 2}, 5);
  EXPECT_EQ(link.spatial->slice, 4);
  EXPECT_EQ(link.spatial->time, 1);
  EXPECT_EQ(link.temporal->slice, 0);
  EXPECT_EQ(link.temporal->time, 1);
}

TEST(Grid, VisitingOrdersAreTopologicalAndAgreeBitwise) {
  const NetworkConfig cfg = NetworkConfig::prediction();
  const NetworkParams p = NetworkParams::initialize(cfg, 5);
  Rng rng(5);
  const GridInput in = prediction_input(random_sequence(rng, cfg, 5, 2), 2);
  const std::vector<GridUnit> a = time_major_order(5, 2), b = kahn_order(5, 2);
  EXPECT_NO_THROW(check_topological(a, 5, 2));
  EXPECT_NO_THROW(check_topological(b, 5, 2));
  const GridResult ra = grid_forward(in, p, cfg, false, &a);
  const GridResult rb = grid_forward(in, p, cfg, false, &b);
  EXPECT_EQ(ra.outputs, rb.outputs);
  EXPECT_EQ(ra.states, rb.states);

  std::vector<GridUnit> bad = a;
  std::swap(bad[4], bad[5]);
  EXPECT_THROW(check_topological(bad, 5, 2), ContractError);
  EXPECT_THROW(grid_forward(in, p, cfg, false, &bad), ContractError);
}

TEST(Grid, NoCrossSliceLeakWithoutSpatialPathway) {
  const NetworkConfig cfg = NetworkConfig::prediction();
  NetworkParams p = NetworkParams::initialize(cfg, 6);
  const int F = cfg.hidden_channels;
  std::fill(p.cell.spatial.weights.begin(), p.cell.spatial.weights.end(), 0.0);
  // The cell state also crosses slices through f^S, so that gate is shut.
  const int per_tap_in = p.cell.input.out_channels;
  for (std::size_t w = 0; w < p.cell.input.weights.size(); ++w)
    if (static_cast<int>(w % per_tap_in) < F) p.cell.input.weights[w] = 0.0;
  for (int k = 0; k < F; ++k) p.cell.input.bias[k] = -1000.0;

  Rng rng(6);
  const SpatioTemporalSequence seq = random_sequence(rng, cfg, 5, 2);
  const GridResult base = grid_forward(prediction_input(seq, 2), p, cfg);
  for (int s = 0; s < 5; ++s) {
    SpatioTemporalSequence moved = seq;
    moved.frame(s, 0) = oracle::random_map(rng, 32, 32, 3, 0.0, 1.0);
    const GridResult r = grid_forward(prediction_input(moved, 2), p, cfg);
    for (int q = 0; q < 5; ++q)
      for (int t = 0; t < 2; ++t) {
        if (q == s)
          EXPECT_TRUE(differs(r.output(q, t), base.output(q, t)));
        else
          EXPECT_EQ(r.output(q, t), base.output(q, t)) << "slice " << s << " leaked into " << q;
      }
  }
}

TEST(Grid, OutputsLieInUnitInterval) {
  const NetworkConfig cfg = NetworkConfig::prediction();
  Rng rng(7);
  const GridResult r = grid_forward(prediction_input(random_sequence(rng, cfg, 5, 2), 2),
                                    NetworkParams::initialize(cfg, 7), cfg);
  for (const FeatureMap& y : r.outputs)
    for (double v : y.values()) EXPECT_TRUE(v > 0.0 && v < 1.0);
}

TEST(Grid, ShapeConservationAcrossConfigs) {
  Rng rng(8);
  for (const NetworkConfig& cfg : {NetworkConfig::prediction(), NetworkConfig::segmentation(),
                                   tiny_prediction_config(), tiny_segmentation_config()}) {
    const NetworkParams p = NetworkParams::initialize(cfg, 8);
    const FeatureMap x = oracle::random_map(rng, cfg.input_size, cfg.input_size, cfg.input_channels, 0.0, 1.0);
    FeatureMap h = FeatureMap(cfg.bottleneck_size(), cfg.bottleneck_size(), cfg.hidden_channels);
    const FeatureMap y = decode(h, p);
    EXPECT_EQ(y.rows(), x.rows());
    EXPECT_EQ(y.cols(), x.cols());
    EXPECT_EQ(y.channels(), cfg.output_channels);
  }
}

TEST(Prediction, MaskThresholdIs128) {
  EXPECT_TRUE(is_foreground(128.0));
  EXPECT_FALSE(is_foreground(127.0));
  EXPECT_FALSE(is_foreground(127.999));
  for (double v : {0.0, 64.0, 127.0, 128.0, 200.0, 255.0}) EXPECT_EQ(binarize(binarize(v)), binarize(v));
}

TEST(Prediction, ConstantInputsWithUntrainedWeightsGiveConstantOutputs) {
  const NetworkConfig cfg = NetworkConfig::prediction();
  NetworkParams p = NetworkParams::zeros(cfg);
  Rng rng(9);
  p.for_each_kernel([&](const std::string&, ConvKernel& k) {
    for (double& b : k.bias) b = rng.uniform(-0.5, 0.5);
  });
  SpatioTemporalSequence seq(5, 2);
  for (auto& f : seq.frames) f = FeatureMap(32, 32, 3, 0.4);
  seq.intervals = {400.0, 380.0};
  const FuturePrediction out = predict_future(seq, p, cfg);
  for (const auto* frames : {&out.time2, &out.time3})
    for (const FeatureMap& f : *frames)
      for (int ch = 0; ch < 3; ++ch)
        for (int r = 0; r < 32; ++r)
          for (int c = 0; c < 32; ++c) EXPECT_EQ(f.at(r, c, ch), f.at(0, 0, ch));
}

TEST(Prediction, LaterFutureOnlyChangesTheFactor) {
  const NetworkConfig cfg = NetworkConfig::prediction();
  const NetworkParams p = NetworkParams::initialize(cfg, 10);
  Rng rng(10);
  SpatioTemporalSequence seq = random_sequence(rng, cfg, 5, 2);
  SpatioTemporalSequence later = seq;
  later.intervals[1] = seq.intervals[1] + 365.0;
  const GridInput a = prediction_input(seq, 2), b = prediction_input(later, 2);
  EXPECT_EQ(a.frames, b.frames);
  EXPECT_EQ(a.factor_days[0], b.factor_days[0]);
  EXPECT_NE(a.factor_days[1], b.factor_days[1]);
  const GridResult ra = grid_forward(a, p, cfg), rb = grid_forward(b, p, cfg);
  for (int s = 0; s < 5; ++s) {
    EXPECT_EQ(ra.output(s, 0), rb.output(s, 0));
    EXPECT_TRUE(differs(ra.output(s, 1), rb.output(s, 1)));
  }
}

TEST(Prediction, MissingIntervalIsContractError) {
  const NetworkConfig cfg = NetworkConfig::prediction();
  Rng rng(11);
  SpatioTemporalSequence seq = random_sequence(rng, cfg, 5, 2);
  seq.intervals.resize(1);
  EXPECT_THROW(predict_future(seq, NetworkParams::zeros(cfg), cfg), ContractError);
}

TEST(Segmentation, ZeroParamsGiveEmptyMasks) {
  const NetworkConfig cfg = NetworkConfig::segmentation();
  SpatioTemporalSequence seq(2, 2);
  for (auto& f : seq.frames) f = FeatureMap(96, 96, 1);
  for (const FeatureMap& m : segment(seq, NetworkParams::zeros(cfg), cfg))
    for (double v : m.values()) EXPECT_EQ(v, 0.0);
}

TEST(Segmentation, ModeAndChannelChecks) {
  SpatioTemporalSequence seq(1, 1);
  seq.frames[0] = FeatureMap(96, 96, 3);
  const NetworkConfig seg = NetworkConfig::segmentation();
  EXPECT_THROW(segment(seq, NetworkParams::zeros(seg), seg), ConfigError);
  const NetworkConfig pred = NetworkConfig::prediction();
  EXPECT_THROW(segment(seq, NetworkParams::zeros(pred), pred), ConfigError);
}

TEST(Components, LargestBlobSurvives) {
  std::vector<std::uint8_t> m(20 * 20, 0);
  for (int r = 2; r < 8; ++r)
    for (int c = 2; c < 7; ++c) m[r * 20 + c] = 1;  // 30 pixels
  for (int c = 12; c < 17; ++c) m[15 * 20 + c] = 1;  // 5 pixels
  const auto out = largest_component(m, 20, 20);
  EXPECT_EQ(std::count(out.begin(), out.end(), 1), 30);
  EXPECT_EQ(out[15 * 20 + 12], 0);
  EXPECT_EQ(out[2 * 20 + 2], 1);
}

TEST(Components, DiagonalNeighboursAreSeparate) {
  // Three pixels of an L plus one touching only at a corner.
  std::vector<std::uint8_t> m(5 * 5, 0);
  m[1 * 5 + 1] = m[2 * 5 + 1] = m[2 * 5 + 2] = 1;
  m[3 * 5 + 3] = 1;
  const auto out = largest_component(m, 5, 5);
  EXPECT_EQ(std::count(out.begin(), out.end(), 1), 3);
  EXPECT_EQ(out[3 * 5 + 3], 0);
  EXPECT_EQ(largest_component(std::vector<std::uint8_t>(25, 0), 5, 5), std::vector<std::uint8_t>(25, 0));
}

TEST(Baseline, ZeroVelocityKeepsTheMask) {
  const MaskVolume m = disk(32, 15.5, 15.5, 6.0);
  EXPECT_EQ(linear_baseline(m, m, 300.0, 400.0), m);
}

TEST(Baseline, GrowingCircleExtrapolates) {
  const MaskVolume r1 = disk(40, 20.0, 20.0, 5.0), r2 = disk(40, 20.0, 20.0, 6.0);
  EXPECT_NEAR(equivalent_radius(linear_baseline(r1, r2, 365.0, 365.0)), 7.0, 0.5);
}

TEST(Baseline, ShrinkingCircleExtrapolates) {
  const MaskVolume r1 = disk(40, 20.0, 20.0, 6.0), r2 = disk(40, 20.0, 20.0, 5.0);
  EXPECT_NEAR(equivalent_radius(linear_baseline(r1, r2, 200.0, 200.0)), 4.0, 0.5);
}

TEST(Baseline, EmptyMaskIsContractError) {
  EXPECT_THROW(linear_baseline(MaskVolume(1, 8, 8), disk(8, 4, 4, 2), 1.0, 1.0), ContractError);
}
