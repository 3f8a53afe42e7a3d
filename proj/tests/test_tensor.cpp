#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "par/ops.hpp"
#include "par/optim.hpp"
#include "support/gradcheck.hpp"

using namespace par;
using par::testing::grad_check;
using par::testing::random_tensor;

namespace {

void expect_values(const Tensor& t, std::vector<double> expected, double tol = 1e-12) {
  ASSERT_EQ(t.numel(), expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(t.data()[i], expected[i], tol) << "index " << i;
}

}  // namespace

TEST(Tensor, ShapeMustMatchData) {
  EXPECT_THROW(Tensor({2, 2}, {1, 2, 3}), ContractViolation);
  EXPECT_THROW(Tensor({0, 2}, {}), ContractViolation);
  Tensor t({2, 3}, std::vector<double>(6, 1.0));
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
}

TEST(Tensor, RankOneIsARow) {
  Tensor t({3}, {1, 2, 3});
  EXPECT_EQ(t.rows(), 1u);
  auto s = ops::sum(t);
  EXPECT_DOUBLE_EQ(s.item(), 6.0);
}

TEST(Ops, SoftmaxOfZerosIsUniform) {
  auto s = ops::softmax_rows(Tensor::from_rows({{0, 0, 0}}));
  expect_values(s, {1.0 / 3, 1.0 / 3, 1.0 / 3});
}

TEST(Ops, LeakyReluNegative) { EXPECT_DOUBLE_EQ(ops::leaky_relu(Tensor::scalar(-1.0)).item(), -0.01); }

TEST(Ops, ConcatCols) {
  auto c = ops::concat_cols(Tensor::from_rows({{1, 2}}), Tensor::from_rows({{3}}));
  EXPECT_EQ(c.shape(), (Shape{1, 3}));
  expect_values(c, {1, 2, 3});
}

TEST(Ops, ShapeMismatchNamesOpAndShapes) {
  try {
    ops::add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2}));
    FAIL() << "expected ContractViolation";
  } catch (const ContractViolation& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("add"), std::string::npos);
    EXPECT_NE(msg.find("[2x3]"), std::string::npos);
    EXPECT_NE(msg.find("[3x2]"), std::string::npos);
  }
  EXPECT_THROW(ops::matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ContractViolation);
}

TEST(Ops, SoftmaxRejectsNonFiniteRow) {
  EXPECT_THROW(ops::softmax_rows(Tensor::from_rows({{0.0, NAN}})), ContractViolation);
}

TEST(Ops, StrictFiniteRaisesNumericalFault) {
  set_strict_finite(true);
  EXPECT_THROW(ops::exp(Tensor::scalar(1000.0)), NumericalFault);
  set_strict_finite(false);
  EXPECT_NO_THROW(ops::exp(Tensor::scalar(1000.0)));
}

TEST(Ops, SoftmaxRowsSumToOneAndArePositive) {
  std::mt19937_64 rng(3);
  auto x = random_tensor(20, 7, rng, -30, 30);
  auto s = ops::softmax_rows(x);
  for (std::size_t i = 0; i < 20; ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < 7; ++j) {
      EXPECT_GT(s(i, j), 0.0);
      total += s(i, j);
    }
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
}

TEST(Ops, MaskedSoftmax) {
  const double ln2 = std::log(2.0);
  std::vector<std::uint8_t> keep = {1, 1, 0, 0};
  expect_values(ops::masked_softmax_rows(Tensor::from_rows({{ln2, ln2, 5, -3}}), keep), {0.5, 0.5, 0, 0});
  std::vector<std::uint8_t> none = {0, 0};
  EXPECT_THROW(ops::masked_softmax_rows(Tensor::from_rows({{1, 2}}), none), ContractViolation);
}

TEST(Ops, DropoutPreservesExpectation) {
  std::mt19937_64 rng(11);
  auto x = Tensor::from_rows({{0.5, -1.5, 2.0}});
  constexpr int kDraws = 20000;
  const double p = 0.7;
  for (std::size_t j = 0; j < 3; ++j) {
    double s = 0.0, s2 = 0.0;
    for (int d = 0; d < kDraws; ++d) {
      const double v = ops::dropout(x, p, rng, true)(0, j);
      s += v;
      s2 += v * v;
    }
    const double mean = s / kDraws;
    const double var = s2 / kDraws - mean * mean;
    const double se = std::sqrt(var / kDraws);
    EXPECT_LT(std::abs(mean - x(0, j)), 3 * se);
  }
  std::mt19937_64 rng2(11);
  auto eval = ops::dropout(x, p, rng2, false);
  expect_values(eval, {0.5, -1.5, 2.0});
}

TEST(Backward, SumOfSquares) {
  auto x = Tensor::row({1, 2}, true);
  Tape tape;
  Tape::Scope scope(tape);
  auto loss = ops::sum(ops::mul(x, x));
  auto g = tape.backward(loss);
  EXPECT_EQ(g.get(x), (std::vector<double>{2, 4}));
}

TEST(Backward, SoftmaxSumHasZeroGradient) {
  auto v = Tensor::row({0.3, -1.2, 2.5}, true);
  Tape tape;
  Tape::Scope scope(tape);
  auto g = tape.backward(ops::sum(ops::softmax_rows(v)));
  for (double x : g.get(v)) EXPECT_NEAR(x, 0.0, 1e-15);
}

TEST(Backward, ConcatSplitsGradientExactly) {
  auto a = Tensor::from_rows({{1, 2}, {3, 4}}, true);
  auto b = Tensor::from_rows({{5}, {6}}, true);
  auto w = Tensor::from_rows({{0.1, 0.2, 0.3}, {0.4, 0.5, 0.6}});
  Tape tape;
  Tape::Scope scope(tape);
  auto g = tape.backward(ops::sum(ops::mul(ops::concat_cols(a, b), w)));
  EXPECT_EQ(g.get(a), (std::vector<double>{0.1, 0.2, 0.4, 0.5}));
  EXPECT_EQ(g.get(b), (std::vector<double>{0.3, 0.6}));
}

TEST(Backward, NonScalarLossIsRejected) {
  auto x = Tensor::row({1, 2}, true);
  Tape tape;
  Tape::Scope scope(tape);
  auto y = ops::mul(x, x);
  EXPECT_THROW(tape.backward(y), ContractViolation);
}

TEST(Backward, SecondBackwardThrows) {
  auto x = Tensor::row({1, 2}, true);
  Tape tape;
  Tape::Scope scope(tape);
  auto loss = ops::sum(x);
  tape.backward(loss);
  EXPECT_THROW(tape.backward(loss), TapeStateError);
}

TEST(Backward, UnreachableParameterGetsZero) {
  auto x = Tensor::row({1, 2}, true);
  auto unused = Tensor::row({3, 4, 5}, true);
  Tape tape;
  Tape::Scope scope(tape);
  std::vector<Tensor> wrt = {x, unused};
  auto g = tape.backward(ops::sum(x), wrt);
  ASSERT_TRUE(g.contains(unused));
  EXPECT_EQ(g.get(unused), (std::vector<double>{0, 0, 0}));
}

TEST(Backward, NoGradTensorsAreNotRecorded) {
  auto x = Tensor::row({1, 2});
  Tape tape;
  Tape::Scope scope(tape);
  auto y = ops::exp(x);
  EXPECT_FALSE(y.tape_id().has_value());
  EXPECT_EQ(tape.size(), 0u);
}

TEST(Backward, RecordedValuesAreImmutable) {
  auto x = Tensor::row({1, 2}, true);
  Tape tape;
  Tape::Scope scope(tape);
  auto y = ops::exp(x);
  EXPECT_THROW(y.mutable_data(), ContractViolation);
}

TEST(Backward, MlpMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  auto x = random_tensor(4, 6, rng);
  auto w1 = random_tensor(6, 8, rng), b1 = random_tensor(1, 8, rng);
  auto w2 = random_tensor(8, 8, rng), b2 = random_tensor(1, 8, rng);
  auto w3 = random_tensor(8, 2, rng), b3 = random_tensor(1, 2, rng);
  std::vector<int> target = {0, 1, 1, 0};
  auto f = [&] {
    auto h = ops::relu(ops::add_row_bias(ops::matmul(x, w1), b1));
    h = ops::relu(ops::add_row_bias(ops::matmul(h, w2), b2));
    return ops::cross_entropy(ops::add_row_bias(ops::matmul(h, w3), b3), target);
  };
  auto r = grad_check(f, {x, w1, b1, w2, b2, w3, b3});
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}

TEST(Backward, EveryOpMatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  auto a = random_tensor(3, 4, rng), b = random_tensor(3, 4, rng), c = random_tensor(4, 3, rng);
  auto bias = random_tensor(1, 4, rng), s = random_tensor(1, 1, rng);
  auto w = random_tensor(3, 4, rng);  // fixed weights make every op output reach the loss
  auto weighted = [&](const Tensor& t) {
    if (t.rows() == 3 && t.cols() == 4) return ops::sum(ops::mul(t, w));
    return ops::sum(ops::mul(t, t));
  };
  const std::vector<std::size_t> idx = {2, 0, 2, 1};
  const std::vector<std::size_t> offsets = {0, 1, 3};
  const std::vector<std::pair<std::size_t, std::size_t>> pairs = {{0, 0}, {0, 1}, {1, 2}};
  std::vector<std::uint8_t> keep = {1, 0, 1, 1, 0, 1, 1, 0, 1, 1, 1, 1};
  const std::vector<int> target = {1, 3, 0};
  std::vector<std::pair<const char*, std::function<Tensor()>>> cases = {
      {"matmul", [&] { return weighted(ops::matmul(ops::matmul(a, c), b)); }},
      {"add", [&] { return weighted(ops::add(a, b)); }},
      {"sub", [&] { return weighted(ops::sub(a, b)); }},
      {"mul", [&] { return weighted(ops::mul(a, b)); }},
      {"add_row_bias", [&] { return weighted(ops::add_row_bias(a, bias)); }},
      {"scale", [&] { return weighted(ops::scale(a, -1.7)); }},
      {"mul_scalar", [&] { return weighted(ops::mul_scalar(a, s)); }},
      {"exp", [&] { return weighted(ops::exp(a)); }},
      {"abs", [&] { return weighted(ops::abs(a)); }},
      {"neg", [&] { return weighted(ops::neg(a)); }},
      {"relu", [&] { return weighted(ops::relu(a)); }},
      {"leaky_relu", [&] { return weighted(ops::leaky_relu(a)); }},
      {"concat_cols", [&] { return weighted(ops::concat_cols(a, ops::transpose(c))); }},
      {"concat_rows", [&] { return weighted(ops::concat_rows({a, b})); }},
      {"slice", [&] { return weighted(ops::slice(a, 1, 2, 1, 3)); }},
      {"softmax_rows", [&] { return weighted(ops::softmax_rows(a)); }},
      {"masked_softmax_rows", [&] { return weighted(ops::masked_softmax_rows(a, keep)); }},
      {"mean_rows", [&] { return weighted(ops::mean_rows(a)); }},
      {"mean_cols", [&] { return weighted(ops::mean_cols(a)); }},
      {"gather_rows", [&] { return weighted(ops::gather_rows(a, idx)); }},
      {"scatter_add_rows", [&] { return weighted(ops::scatter_add_rows(a, std::span(idx).first(3), 5)); }},
      {"segment_mean_rows", [&] { return weighted(ops::segment_mean_rows(a, offsets)); }},
      {"scatter_symmetric", [&] { return weighted(ops::scatter_symmetric(ops::slice(a, 0, 1, 0, 3), pairs, 3)); }},
      {"cross_entropy", [&] { return ops::cross_entropy(a, target); }},
      {"squared_l2_rows", [&] { return ops::squared_l2_rows(a, b); }},
      {"cosine_matrix", [&] { return weighted(ops::cosine_matrix(a)); }},
  };
  for (const auto& [name, f] : cases) {
    auto r = grad_check(f, {a, b, c, bias, s});
    EXPECT_LT(r.max_rel_error, 1e-4) << name << " worst " << r.worst;
  }
}

TEST(Adam, ZeroGradientLeavesParameter) {
  std::vector<Tensor> p = {Tensor::row({1.0, -2.0})};
  auto st = make_adam_state(p, 1e-3);
  std::vector<std::vector<double>> g = {{0.0, 0.0}};
  adam_step(p, g, st);
  adam_step(p, g, st);
  EXPECT_EQ(p[0].row_values(0), (std::vector<double>{1.0, -2.0}));
  EXPECT_EQ(st.m[0], (std::vector<double>{0.0, 0.0}));
  EXPECT_EQ(st.v[0], (std::vector<double>{0.0, 0.0}));
  EXPECT_EQ(st.step, 2);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  std::vector<Tensor> p = {Tensor::scalar(1.0)};
  auto st = make_adam_state(p, 0.001);
  std::vector<std::vector<double>> g = {{1.0}};
  adam_step(p, g, st);
  EXPECT_NEAR(p[0].item(), 0.999, 1e-9);
}

TEST(Adam, RepeatedGradientDecreasesMonotonically) {
  std::vector<Tensor> p = {Tensor::scalar(1.0)};
  auto st = make_adam_state(p, 0.01);
  std::vector<std::vector<double>> g = {{0.3}};
  adam_step(p, g, st);
  const double after1 = p[0].item();
  adam_step(p, g, st);
  EXPECT_LT(after1, 1.0);
  EXPECT_LT(p[0].item(), after1);
}

TEST(Adam, ShapeMismatch) {
  std::vector<Tensor> p = {Tensor::scalar(1.0)};
  auto st = make_adam_state(p, 0.01);
  std::vector<std::vector<double>> g = {{1.0, 2.0}};
  EXPECT_THROW(adam_step(p, g, st), ContractViolation);
}

TEST(Sgd, InnerStepArithmetic) {
  std::vector<Tensor> phi = {Tensor::row({1, 1})};
  std::vector<std::vector<double>> g = {{2, -2}};
  auto out = sgd_step(phi, g, 0.05);
  EXPECT_NEAR(out[0](0, 0), 0.9, 1e-15);
  EXPECT_NEAR(out[0](0, 1), 1.1, 1e-15);
  EXPECT_EQ(phi[0].row_values(0), (std::vector<double>{1, 1}));
}

TEST(Sgd, ZeroGradientAndZeroRateAreIdentity) {
  std::vector<Tensor> phi = {Tensor::row({0.3, -0.7})};
  std::vector<std::vector<double>> zero = {{0, 0}}, g = {{5, 5}};
  EXPECT_EQ(sgd_step(phi, zero, 0.05)[0].row_values(0), phi[0].row_values(0));
  EXPECT_EQ(sgd_step(phi, g, 0.0)[0].row_values(0), phi[0].row_values(0));
}

TEST(Sgd, MissingGradientIsAContractViolation) {
  std::vector<Tensor> phi = {Tensor::row({1, 1}, true)};
  GradientMap empty;
  EXPECT_THROW(sgd_step(phi, empty, 0.05), ContractViolation);
}
