/*
 * Copyright 2026 The glasu Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "glasu/error.hpp"
#include "glasu/model.hpp"
#include "test_util.hpp"

namespace glasu {
namespace {

using testing::random_matrix;
using testing::relative_error;

// Straight-line GCNII oracle over plain nested loops.
Matrix gcnii_oracle(const Matrix& a, const Matrix& h, const Matrix& w, double alpha, double beta,
                    const Matrix& h0, std::size_t offset) {
  Matrix out(a.rows(), w.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t c = 0; c < w.cols(); ++c) {
      double z = 0.0;
      for (std::size_t k = 0; k < w.rows(); ++k) {
        double ah = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) ah += a(i, j) * h(j, k);
        const double p = (1.0 - alpha) * ah + alpha * h0(i, k);
        const double e = (k == c + offset) ? 1.0 : 0.0;
        z += p * ((1.0 - beta) * e + beta * w(k, c));
      }
      out(i, c) = z > 0.0 ? z : 0.0;
    }
  }
  return out;
}

std::vector<double> flat(const Matrix& m) { return {m.values().begin(), m.values().end()}; }

Matrix reshape(std::span<const double> v, std::size_t rows, std::size_t cols) {
  return Matrix(rows, cols, std::vector<double>(v.begin(), v.end()));
}

TEST(LayerForward, GcnIdentityPassesNonnegativeInput) {
  const Matrix h = Matrix::from_rows({{1.0, 0.0}, {2.5, 3.0}});
  const auto a = SparseBlock::from_dense(Matrix::identity(2));
  const LayerOutput out = layer_forward(h, a, Matrix::identity(2), LayerKind::gcn(), 0, Matrix());
  EXPECT_TRUE(bitwise_equal(out.h_out, h));
}

TEST(LayerForward, GcnZeroWeightsGiveZero) {
  Rng rng(1);
  const Matrix h = random_matrix(3, 2, rng);
  const auto a = SparseBlock::from_dense(random_matrix(4, 3, rng));
  const LayerOutput out = layer_forward(h, a, Matrix(2, 5), LayerKind::gcn(), 0, Matrix());
  EXPECT_TRUE(bitwise_equal(out.h_out, Matrix(4, 5)));
}

TEST(LayerForward, GcnTwoNodeHandValue) {
  // A = [[.5,.5],[.5,.5]], H = [[1],[3]], W = [[2]] -> A H W = [[4],[4]].
  const auto a = SparseBlock::from_dense(Matrix::from_rows({{0.5, 0.5}, {0.5, 0.5}}));
  const LayerOutput out =
      layer_forward(Matrix::from_rows({{1.0}, {3.0}}), a, Matrix::from_rows({{2.0}}), LayerKind::gcn(), 0, Matrix());
  EXPECT_TRUE(bitwise_equal(out.h_out, Matrix::from_rows({{4.0}, {4.0}})));
}

TEST(LayerForward, GcniiTwoNodeMatchesScalarOracle) {
  const Matrix a = Matrix::from_rows({{0.5, 0.5}, {0.25, 0.75}});
  const Matrix h = Matrix::from_rows({{1.0, -2.0}, {0.5, 3.0}});
  const Matrix w = Matrix::from_rows({{0.3, -0.7}, {1.1, 0.2}});
  const Matrix h0 = Matrix::from_rows({{0.4, 0.1}, {-1.0, 2.0}});
  const LayerKind kind = LayerKind::gcnii(0.1, 0.5);
  for (std::size_t layer : {0u, 3u}) {
    const LayerOutput out = layer_forward(h, SparseBlock::from_dense(a), w, kind, layer, h0);
    const Matrix want = gcnii_oracle(a, h, w, 0.1, std::log(0.5 / static_cast<double>(layer + 1) + 1.0), h0, 0);
    EXPECT_LT(relative_error(out.h_out.values(), want.values()), 1e-14);
  }
}

TEST(LayerForward, GcniiTwoNodeHandArithmetic) {
  // P = 0.9 * A H + 0.1 * H0 = [[1.39], [1.25]]; mix = 1 + 2 beta.
  const auto a = SparseBlock::from_dense(Matrix::from_rows({{0.5, 0.5}, {0.5, 0.5}}));
  const LayerOutput out = layer_forward(Matrix::from_rows({{1.0}, {2.0}}), a, Matrix::from_rows({{3.0}}),
                                        LayerKind::gcnii(0.1, 0.5), 0, Matrix::from_rows({{0.4}, {-1.0}}));
  const double mix = 1.0 + 2.0 * std::log(1.5);
  EXPECT_NEAR(out.h_out(0, 0), 1.39 * mix, 1e-14);
  EXPECT_NEAR(out.h_out(1, 0), 1.25 * mix, 1e-14);
}

TEST(LayerForward, GcniiRectangularUsesOffsetIdentity) {
  Rng rng(2);
  const Matrix a = random_matrix(3, 4, rng, 0.0, 1.0);
  const Matrix h = random_matrix(4, 5, rng);
  const Matrix w = random_matrix(5, 2, rng);
  const Matrix h0 = random_matrix(3, 5, rng);
  const LayerOutput out = gcnii_forward(h, SparseBlock::from_dense(a), w, 0.2, 0.3, h0, 3);
  const Matrix want = gcnii_oracle(a, h, w, 0.2, 0.3, h0, 3);
  EXPECT_LT(relative_error(out.h_out.values(), want.values()), 1e-14);
}

TEST(LayerForward, GcniiWithoutResidualReducesToGcn) {
  Rng rng(3);
  const auto a = SparseBlock::from_dense(random_matrix(3, 4, rng));
  const Matrix h = random_matrix(4, 3, rng);
  const Matrix w = random_matrix(3, 3, rng);
  const LayerOutput gcnii = gcnii_forward(h, a, w, 0.0, 1.0, Matrix(3, 3));
  const LayerOutput gcn = layer_forward(h, a, w, LayerKind::gcn(), 0, Matrix());
  EXPECT_TRUE(bitwise_equal(gcnii.h_out, gcn.h_out));
}

TEST(LayerForward, GcnIsPositivelyHomogeneousInWeights) {
  Rng rng(4);
  const auto a = SparseBlock::from_dense(random_matrix(3, 3, rng));
  const Matrix h = random_matrix(3, 2, rng);
  const Matrix w = random_matrix(2, 4, rng);
  const Matrix once = layer_forward(h, a, w, LayerKind::gcn(), 0, Matrix()).h_out;
  const Matrix twice = layer_forward(h, a, 2.0 * w, LayerKind::gcn(), 0, Matrix()).h_out;
  EXPECT_TRUE(bitwise_equal(twice, 2.0 * once));
}

TEST(LayerForward, ShapeMismatchIsConfigError) {
  const auto a = SparseBlock::from_dense(Matrix(2, 3));
  EXPECT_THROW(layer_forward(Matrix(2, 2), a, Matrix(2, 2), LayerKind::gcn(), 0, Matrix()), ConfigError);
  EXPECT_THROW(layer_forward(Matrix(3, 2), a, Matrix(3, 2), LayerKind::gcn(), 0, Matrix()), ConfigError);
  EXPECT_THROW(layer_forward(Matrix(3, 2), a, Matrix(2, 2), LayerKind::gcnii(0.1, 0.5), 0, Matrix(1, 2)),
               ConfigError);
}

TEST(LayerKindTest, RejectsOutOfRangeHyperparameters) {
  EXPECT_THROW(LayerKind::gcnii(0.0, 0.5).validate(), ConfigError);
  EXPECT_THROW(LayerKind::gcnii(1.0, 0.5).validate(), ConfigError);
  EXPECT_THROW(LayerKind::gcnii(0.1, 0.0).validate(), ConfigError);
  EXPECT_NO_THROW(LayerKind::gcnii(0.1, 0.5).validate());
}

TEST(Relu, TiesAtZeroGetNoGradient) {
  const Matrix z = Matrix::from_rows({{-1.0, 0.0, 2.0}});
  EXPECT_TRUE(bitwise_equal(relu(z), Matrix::from_rows({{0.0, 0.0, 2.0}})));
  EXPECT_TRUE(bitwise_equal(relu_backward(Matrix(1, 3, 5.0), z), Matrix::from_rows({{0.0, 0.0, 5.0}})));
}

TEST(LayerBackward, ZeroCotangentGivesZeroGradients) {
  Rng rng(5);
  const auto a = SparseBlock::from_dense(random_matrix(3, 4, rng));
  const LayerOutput out =
      layer_forward(random_matrix(4, 2, rng), a, random_matrix(2, 2, rng), LayerKind::gcnii(0.1, 0.5), 1,
                    random_matrix(3, 2, rng));
  const LayerGrads g = layer_backward(Matrix(3, 2), out.tape);
  EXPECT_TRUE(bitwise_equal(g.h_in, Matrix(4, 2)));
  EXPECT_TRUE(bitwise_equal(g.w, Matrix(2, 2)));
  EXPECT_TRUE(bitwise_equal(g.h0, Matrix(3, 2)));
}

TEST(LayerBackward, ScalarChainRule) {
  // y = relu(a h w) with a = 2, h = 3, w = 0.5: dy/dw = a h = 6, dy/dh = a w = 1.
  const auto a = SparseBlock::from_dense(Matrix::from_rows({{2.0}}));
  const LayerOutput out = layer_forward(Matrix::from_rows({{3.0}}), a, Matrix::from_rows({{0.5}}),
                                        LayerKind::gcn(), 0, Matrix());
  const LayerGrads g = layer_backward(Matrix::from_rows({{1.0}}), out.tape);
  EXPECT_DOUBLE_EQ(g.w(0, 0), 6.0);
  EXPECT_DOUBLE_EQ(g.h_in(0, 0), 1.0);
  // Negative pre-activation blocks the gradient.
  const LayerOutput neg = layer_forward(Matrix::from_rows({{3.0}}), a, Matrix::from_rows({{-0.5}}),
                                        LayerKind::gcn(), 0, Matrix());
  EXPECT_EQ(layer_backward(Matrix::from_rows({{1.0}}), neg.tape).w(0, 0), 0.0);
}

struct BackwardCase {
  const char* name;
  bool gcnii;
  std::size_t offset;
};

class LayerBackwardFd : public ::testing::TestWithParam<BackwardCase> {};

TEST_P(LayerBackwardFd, MatchesCentralDifferences) {
  const BackwardCase c = GetParam();
  Rng rng(6);
  const Matrix a = random_matrix(4, 3, rng);
  const Matrix h = random_matrix(3, 4, rng);
  const Matrix w = random_matrix(4, 4 - c.offset, rng);
  const Matrix h0 = random_matrix(4, 4, rng);
  const Matrix g = random_matrix(4, 4 - c.offset, rng);
  const auto block = SparseBlock::from_dense(a);
  auto forward = [&](const Matrix& hh, const Matrix& ww, const Matrix& hh0) {
    return c.gcnii ? gcnii_forward(hh, block, ww, 0.1, 0.4, hh0, c.offset)
                   : layer_forward(hh, block, ww, LayerKind::gcn(), 0, Matrix());
  };
  const LayerGrads grads = layer_backward(g, forward(h, w, h0).tape);
  auto objective_w = [&](std::span<const double> x) {
    return frobenius_dot(g, forward(h, reshape(x, w.rows(), w.cols()), h0).h_out);
  };
  auto objective_h = [&](std::span<const double> x) {
    return frobenius_dot(g, forward(reshape(x, h.rows(), h.cols()), w, h0).h_out);
  };
  EXPECT_LT(relative_error(grads.w.values(), finite_diff_grad(objective_w, flat(w), 1e-5)), 1e-6);
  EXPECT_LT(relative_error(grads.h_in.values(), finite_diff_grad(objective_h, flat(h), 1e-5)), 1e-6);
  if (c.gcnii) {
    auto objective_h0 = [&](std::span<const double> x) {
      return frobenius_dot(g, forward(h, w, reshape(x, h0.rows(), h0.cols())).h_out);
    };
    EXPECT_LT(relative_error(grads.h0.values(), finite_diff_grad(objective_h0, flat(h0), 1e-5)), 1e-6);
  }
}

INSTANTIATE_TEST_SUITE_P(Backbones, LayerBackwardFd,
                         ::testing::Values(BackwardCase{"Gcn", false, 0}, BackwardCase{"Gcnii", true, 0},
                                           BackwardCase{"GcniiOffset", true, 2}),
                         [](const auto& info) { return std::string(info.param.name); });

TEST(Classify, ZeroIdentityAndOracle) {
  const Matrix h = Matrix::from_rows({{1.0, 2.0}, {3.0, 4.0}});
  EXPECT_TRUE(bitwise_equal(classify(h, Matrix(2, 3)), Matrix(2, 3)));
  EXPECT_TRUE(bitwise_equal(classify(h, Matrix::identity(2)), h));
  EXPECT_TRUE(bitwise_equal(classify(h, Matrix::from_rows({{1.0, -1.0}, {0.5, 2.0}})),
                            Matrix::from_rows({{2.0, 3.0}, {5.0, 5.0}})));
  EXPECT_THROW(classify(h, Matrix(3, 1)), ConfigError);
}

TEST(Loss, UniformLogitsGiveLogClassCount) {
  const std::vector<int> labels = {0, 2, 1};
  const LossAndGrad lg = loss_and_grad(Matrix(3, 4, 0.7), labels);
  EXPECT_NEAR(lg.loss, std::log(4.0), 1e-15);
}

TEST(Loss, DecreasesAsCorrectLogitGrows) {
  const std::vector<int> labels = {1};
  double previous = std::numeric_limits<double>::infinity();
  for (double scale : {0.0, 1.0, 4.0, 16.0, 64.0}) {
    const double loss = loss_and_grad(Matrix::from_rows({{0.0, scale, 0.0}}), labels).loss;
    EXPECT_LT(loss, previous);
    previous = loss;
  }
}

TEST(Loss, StableForHugeLogits) {
  const std::vector<int> labels = {0};
  const LossAndGrad lg = loss_and_grad(Matrix::from_rows({{1000.0, -1000.0}}), labels);
  EXPECT_EQ(lg.loss, 0.0);
  EXPECT_TRUE(all_finite(lg.grad_logits));
}

TEST(Loss, GradientRowsSumToZeroAndMatchFiniteDifferences) {
  Rng rng(7);
  const Matrix logits = random_matrix(3, 4, rng, -2.0, 2.0);
  const std::vector<int> labels = {3, 0, 2};
  const LossAndGrad lg = loss_and_grad(logits, labels);
  for (std::size_t i = 0; i < 3; ++i) {
    double sum = 0.0;
    for (std::size_t c = 0; c < 4; ++c) sum += lg.grad_logits(i, c);
    EXPECT_NEAR(sum, 0.0, 1e-16);
  }
  auto f = [&](std::span<const double> x) { return loss_and_grad(reshape(x, 3, 4), labels).loss; };
  EXPECT_LT(relative_error(lg.grad_logits.values(), finite_diff_grad(f, flat(logits), 1e-5)), 1e-6);
}

TEST(Loss, BadLabelsAreConfigError) {
  EXPECT_THROW(loss_and_grad(Matrix(2, 3), std::vector<int>{0}), ConfigError);
  EXPECT_THROW(loss_and_grad(Matrix(1, 3), std::vector<int>{3}), ConfigError);
}

TEST(FiniteDiff, QuadraticAndLinear) {
  const std::vector<double> x = {3.0};
  auto quad = [](std::span<const double> w) { return w[0] * w[0]; };
  EXPECT_NEAR(finite_diff_grad(quad, x, 1e-5)[0], 6.0, 1e-8);
  const std::vector<double> y = {1.0, -2.0};
  auto lin = [](std::span<const double> w) { return 3.0 * w[0] - 0.5 * w[1]; };
  const auto g = finite_diff_grad(lin, y, 1e-3);
  EXPECT_NEAR(g[0], 3.0, 1e-10);
  EXPECT_NEAR(g[1], -0.5, 1e-10);
}

TEST(ChainRule, TwoLayerGcnWithClassifierMatchesFiniteDifferences) {
  Rng rng(8);
  const Matrix x = random_matrix(5, 3, rng);
  const auto a1 = SparseBlock::from_dense(random_matrix(4, 5, rng, 0.0, 1.0));
  const auto a2 = SparseBlock::from_dense(random_matrix(2, 4, rng, 0.0, 1.0));
  const std::vector<int> labels = {1, 0};
  ModelShape shape{LayerKind::gcn(), 3, 4, {4, 4}, {}, 2, true};
  ClientModel model = init_client_model(shape, Rng(9));
  auto loss_of = [&](const ClientModel& m, LayerTape* t1, LayerTape* t2, Matrix* h2, LossAndGrad* out) {
    LayerOutput o1 = layer_forward(x, a1, m.layers[0], m.kind, 0, Matrix());
    LayerOutput o2 = layer_forward(o1.h_out, a2, m.layers[1], m.kind, 1, Matrix());
    LossAndGrad lg = loss_and_grad(classify(o2.h_out, *m.classifier), labels);
    if (t1) *t1 = std::move(o1.tape);
    if (t2) *t2 = std::move(o2.tape);
    if (h2) *h2 = o2.h_out;
    const double loss = lg.loss;
    if (out) *out = std::move(lg);
    return loss;
  };
  LayerTape t1, t2;
  Matrix h2;
  LossAndGrad lg;
  loss_of(model, &t1, &t2, &h2, &lg);
  ClientModel grads = model.zeros_like();
  *grads.classifier = matmul(transpose(h2), lg.grad_logits);
  const LayerGrads g2 = layer_backward(matmul(lg.grad_logits, transpose(*model.classifier)), t2);
  const LayerGrads g1 = layer_backward(g2.h_in, t1);
  grads.layers[1] = g2.w;
  grads.layers[0] = g1.w;
  auto f = [&](std::span<const double> p) {
    ClientModel m = model;
    m.assign(p);
    return loss_of(m, nullptr, nullptr, nullptr, nullptr);
  };
  EXPECT_LT(relative_error(grads.flatten(), finite_diff_grad(f, model.flatten(), 1e-5)), 1e-6);
}

TEST(ClientModelTest, InitShapesAndDeterminism) {
  const ModelShape shape{LayerKind::gcnii(0.1, 0.5), 3, 6, {6, 2}, {0, 4}, 3, true};
  const ClientModel m = init_client_model(shape, Rng(1));
  ASSERT_TRUE(m.input_projection.has_value());
  EXPECT_EQ(m.input_projection->rows(), 3u);
  EXPECT_EQ(m.input_projection->cols(), 6u);
  EXPECT_EQ(m.layers[0].rows(), 6u);
  EXPECT_EQ(m.layers[1].cols(), 2u);
  EXPECT_EQ(m.classifier->rows(), 6u);
  EXPECT_EQ(m.classifier->cols(), 3u);
  EXPECT_EQ(m.num_parameters(), 18u + 36u + 12u + 18u);
  EXPECT_TRUE(bitwise_equal(m, init_client_model(shape, Rng(1))));
  EXPECT_FALSE(bitwise_equal(m, init_client_model(shape, Rng(2))));
}

TEST(ClientModelTest, FlattenAssignRoundTrip) {
  ClientModel m = init_client_model(ModelShape{LayerKind::gcn(), 2, 3, {3, 3}, {}, 2, false}, Rng(4));
  EXPECT_FALSE(m.classifier.has_value());
  const auto flat_params = m.flatten();
  ClientModel z = m.zeros_like();
  z.assign(flat_params);
  EXPECT_TRUE(bitwise_equal(z, m));
  EXPECT_THROW(z.assign(std::vector<double>(3)), ConfigError);
}

TEST(ClientModelTest, SgdStep) {
  ClientModel m = init_client_model(ModelShape{LayerKind::gcn(), 2, 2, {2}, {}, 2, true}, Rng(4));
  const ClientModel before = m;
  ClientModel g = m.zeros_like();
  g.layers[0](1, 0) = 2.0;
  sgd_step(m, g, 0.25);
  EXPECT_EQ(m.layers[0](1, 0), before.layers[0](1, 0) - 0.5);
  EXPECT_EQ(m.layers[0](0, 0), before.layers[0](0, 0));
  sgd_step(m, g, 0.0);
  EXPECT_EQ(m.layers[0](1, 0), before.layers[0](1, 0) - 0.5);
}

TEST(Checkpoint, RoundTripIsBitwise) {
  const auto dir = testing::scratch_dir("ckpt");
  for (const bool gcnii : {false, true}) {
    for (const bool classifier : {false, true}) {
      const LayerKind kind = gcnii ? LayerKind::gcnii(0.1, 0.5) : LayerKind::gcn();
      const ClientModel m = init_client_model(ModelShape{kind, 3, 4, {4, 4, 2}, {}, 3, classifier}, Rng(5));
      const auto path = dir / "m.glsw";
      save_checkpoint(m, path);
      EXPECT_TRUE(bitwise_equal(load_checkpoint(path, kind), m));
    }
  }
}

TEST(Checkpoint, CorruptFilesAreDataErrors) {
  const auto dir = testing::scratch_dir("ckpt_bad");
  const ClientModel m = init_client_model(ModelShape{LayerKind::gcn(), 2, 2, {2}, {}, 2, true}, Rng(5));
  save_checkpoint(m, dir / "good.glsw");
  std::ifstream in(dir / "good.glsw", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  std::ofstream(dir / "magic.glsw", std::ios::binary) << bad_magic;
  std::ofstream(dir / "short.glsw", std::ios::binary) << bytes.substr(0, bytes.size() - 3);
  EXPECT_THROW(load_checkpoint(dir / "magic.glsw", LayerKind::gcn()), DataError);
  EXPECT_THROW(load_checkpoint(dir / "short.glsw", LayerKind::gcn()), DataError);
  EXPECT_THROW(load_checkpoint(dir / "missing.glsw", LayerKind::gcn()), DataError);
}

}  // namespace
}  // namespace glasu
