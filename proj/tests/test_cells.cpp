#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "stcl/cells.hpp"
#include "stcl/gradcheck.hpp"

using namespace stcl;

namespace {

ConvLstmParams random_convlstm(Rng& rng, int fx, int f) {
  ConvLstmParams p = ConvLstmParams::zeros(fx, f);
  oracle::randomize(p.input, rng, 1.0);
  oracle::randomize(p.hidden, rng, 1.0);
  return p;
}

StConvLstmParams random_st(Rng& rng, int fx, int f) {
  StConvLstmParams p = StConvLstmParams::zeros(fx, f);
  oracle::randomize(p.input, rng, 1.0);
  oracle::randomize(p.spatial, rng, 1.0);
  oracle::randomize(p.temporal, rng, 1.0);
  return p;
}

CellState random_state(Rng& rng, int r, int c, int f) {
  return {oracle::random_map(rng, r, c, f, -2.0, 2.0), oracle::random_map(rng, r, c, f)};
}

}  // namespace

TEST(ConvLstm, ZeroParamsHalveTheCell) {
  Rng rng(1);
  const CellState prev = random_state(rng, 4, 3, 2);
  const CellState out = convlstm_step(oracle::random_map(rng, 4, 3, 3), prev, ConvLstmParams::zeros(3, 2));
  for (std::size_t i = 0; i < out.cell.size(); ++i) {
    EXPECT_NEAR(out.cell[i], 0.5 * prev.cell[i], 1e-15);
    EXPECT_NEAR(out.hidden[i], 0.5 * std::tanh(0.5 * prev.cell[i]), 1e-15);
  }
}

TEST(ConvLstm, BiasOnlyStepIsSpatiallyConstant) {
  ConvLstmParams p = ConvLstmParams::zeros(2, 3);
  Rng rng(2);
  for (double& b : p.input.bias) b = rng.uniform(-2.0, 2.0);
  const CellState out = convlstm_step(FeatureMap(5, 4, 2), CellState::zero(5, 4, 3), p);
  for (int k = 0; k < 3; ++k) {
    const double c = oracle::sigmoid(p.input.bias[3 + k]) * std::tanh(p.input.bias[6 + k]);
    const double h = oracle::sigmoid(p.input.bias[9 + k]) * std::tanh(c);
    for (int r = 0; r < 5; ++r)
      for (int col = 0; col < 4; ++col) {
        EXPECT_NEAR(out.cell.at(r, col, k), c, 1e-15);
        EXPECT_NEAR(out.hidden.at(r, col, k), h, 1e-15);
      }
  }
}

TEST(ConvLstm, MatchesScalarTranscription) {
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const int R = rng.uniform_int(1, 6), C = rng.uniform_int(1, 6), fx = rng.uniform_int(1, 3), f = rng.uniform_int(1, 3);
    const ConvLstmParams p = random_convlstm(rng, fx, f);
    const FeatureMap x = oracle::random_map(rng, R, C, fx);
    const CellState prev = random_state(rng, R, C, f);
    EXPECT_LE(oracle::max_abs_diff(convlstm_step(x, prev, p), oracle::convlstm(x, prev, p)), 1e-12);
  }
}

TEST(ConvLstm, ShapeMismatchIsRejected) {
  const ConvLstmParams p = ConvLstmParams::zeros(2, 3);
  EXPECT_THROW(convlstm_step(FeatureMap(4, 4, 2), CellState::zero(4, 5, 3), p), ContractError);
  EXPECT_THROW(convlstm_step(FeatureMap(4, 4, 1), CellState::zero(4, 4, 3), p), ConfigError);
}

TEST(StConvLstm, ZeroParamsAverageBothCells) {
  Rng rng(4);
  const CellState a = random_state(rng, 3, 4, 2), b = random_state(rng, 3, 4, 2);
  const CellState out = st_convlstm_step(oracle::random_map(rng, 3, 4, 5), a, b, StConvLstmParams::zeros(5, 2));
  for (std::size_t i = 0; i < out.cell.size(); ++i) {
    EXPECT_NEAR(out.cell[i], 0.5 * a.cell[i] + 0.5 * b.cell[i], 1e-15);
    EXPECT_NEAR(out.hidden[i], 0.5 * std::tanh(out.cell[i]), 1e-15);
  }
}

TEST(StConvLstm, MatchesScalarTranscription) {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const int R = rng.uniform_int(1, 6), C = rng.uniform_int(1, 6), fx = rng.uniform_int(1, 3), f = rng.uniform_int(1, 3);
    const StConvLstmParams p = random_st(rng, fx, f);
    const FeatureMap x = oracle::random_map(rng, R, C, fx);
    const CellState sp = random_state(rng, R, C, f), tp = random_state(rng, R, C, f);
    EXPECT_LE(oracle::max_abs_diff(st_convlstm_step(x, sp, tp, p), oracle::st_convlstm(x, sp, tp, p)), 1e-12);
  }
}

TEST(StConvLstm, ZeroSpatialPathwayReducesToConvLstm) {
  Rng rng(6);
  for (int trial = 0; trial < 100; ++trial) EXPECT_LE(oracle::reduction_gap(rng), 1e-12);
}

TEST(StConvLstm, GateAndStateRanges) {
  Rng rng(7);
  StConvLstmParams p = StConvLstmParams::zeros(3, 2);
  oracle::randomize(p.input, rng, 1.5);
  oracle::randomize(p.spatial, rng, 1.5);
  oracle::randomize(p.temporal, rng, 1.5);
  const FeatureMap x = oracle::random_map(rng, 5, 5, 3, -2.0, 2.0);
  const StCellCache c = st_convlstm_forward(x, random_state(rng, 5, 5, 2), random_state(rng, 5, 5, 2), p);
  const int F = 2;
  for (std::size_t px = 0; px < 25; ++px)
    for (int g = 0; g < 5; ++g)
      for (int k = 0; k < F; ++k) {
        const double v = c.gates[px * 5 * F + g * F + k];
        if (g == StConvLstmParams::kCandidate) {
          EXPECT_TRUE(v > -1.0 && v < 1.0);
        } else {
          EXPECT_TRUE(v > 0.0 && v < 1.0);
        }
      }
  for (double h : c.out.hidden.values()) EXPECT_TRUE(h > -1.0 && h < 1.0);
}

TEST(StConvLstm, CellBoundedAfterOneStepFromZero) {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const StConvLstmParams p = random_st(rng, 2, 3);
    const CellState zero = CellState::zero(4, 4, 3);
    const CellState out = st_convlstm_step(oracle::random_map(rng, 4, 4, 2, -5.0, 5.0), zero, zero, p);
    for (double c : out.cell.values()) EXPECT_LE(std::abs(c), 1.0);
  }
}

TEST(StConvLstm, StateShapeMismatchIsContractError) {
  const StConvLstmParams p = StConvLstmParams::zeros(2, 3);
  EXPECT_THROW(st_convlstm_step(FeatureMap(4, 4, 2), CellState::zero(4, 4, 3), CellState::zero(3, 4, 3), p),
               ContractError);
}

TEST(CellBackward, ZeroUpstreamGivesZeroParameterGradients) {
  Rng rng(9);
  const StConvLstmParams p = random_st(rng, 2, 2);
  const FeatureMap x = oracle::random_map(rng, 4, 4, 2);
  const StCellCache c = st_convlstm_forward(x, random_state(rng, 4, 4, 2), random_state(rng, 4, 4, 2), p);
  StConvLstmParams g = p.zeros_like();
  (void)st_convlstm_backward(c, p, FeatureMap(4, 4, 2), FeatureMap(4, 4, 2), g);
  EXPECT_EQ(g, p.zeros_like());
}

TEST(CellBackward, OutputGateBiasMatchesFiniteDifferences) {
  Rng rng(10);
  StConvLstmParams p = random_st(rng, 2, 2);
  const FeatureMap x = oracle::random_map(rng, 4, 4, 2);
  const CellState sp = random_state(rng, 4, 4, 2), tp = random_state(rng, 4, 4, 2);
  const FeatureMap wc = oracle::random_map(rng, 4, 4, 2), wh = oracle::random_map(rng, 4, 4, 2);
  auto loss = [&] {
    const CellState s = st_convlstm_step(x, sp, tp, p);
    return dot(s.cell, wc) + dot(s.hidden, wh);
  };
  StConvLstmParams g = p.zeros_like();
  (void)st_convlstm_backward(st_convlstm_forward(x, sp, tp, p), p, wc, wh, g);
  const int F = 2, o = StConvLstmParams::kOutput;
  std::span<double> bo(p.input.bias.data() + o * F, F);
  std::span<const double> gbo(g.input.bias.data() + o * F, F);
  EXPECT_LT(check_gradient(bo, gbo, loss), 1e-6);
}

TEST(CellBackward, GradientsFromTwoSuccessorsAdd) {
  Rng rng(11);
  const StConvLstmParams p = random_st(rng, 2, 2);
  const FeatureMap x = oracle::random_map(rng, 3, 3, 2);
  const StCellCache c = st_convlstm_forward(x, random_state(rng, 3, 3, 2), random_state(rng, 3, 3, 2), p);
  const FeatureMap c1 = oracle::random_map(rng, 3, 3, 2), h1 = oracle::random_map(rng, 3, 3, 2);
  const FeatureMap c2 = oracle::random_map(rng, 3, 3, 2), h2 = oracle::random_map(rng, 3, 3, 2);
  StConvLstmParams g1 = p.zeros_like(), g2 = p.zeros_like(), g12 = p.zeros_like();
  const StCellBackward b1 = st_convlstm_backward(c, p, c1, h1, g1);
  const StCellBackward b2 = st_convlstm_backward(c, p, c2, h2, g2);
  const StCellBackward b12 = st_convlstm_backward(c, p, add(c1, c2), add(h1, h2), g12);
  EXPECT_LE(oracle::max_abs_diff(b12.x, add(b1.x, b2.x)), 1e-13);
  EXPECT_LE(oracle::max_abs_diff(b12.spatial.cell, add(b1.spatial.cell, b2.spatial.cell)), 1e-13);
  EXPECT_LE(oracle::max_abs_diff(b12.temporal.hidden, add(b1.temporal.hidden, b2.temporal.hidden)), 1e-13);
  for (std::size_t i = 0; i < g12.input.weights.size(); ++i)
    EXPECT_NEAR(g12.input.weights[i], g1.input.weights[i] + g2.input.weights[i], 1e-13);
}

TEST(CellBackward, BothCellsMatchFiniteDifferences) {
  for (const GradCheckResult& r : gradcheck_cells(12)) EXPECT_LT(r.max_relative_error, 1e-6) << r.name;
}
