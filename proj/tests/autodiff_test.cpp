// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "dssvae/adam.hpp"
#include "dssvae/autodiff.hpp"
#include "dssvae/gradcheck.hpp"
#include "dssvae/nn.hpp"
#include "dssvae/rng.hpp"

namespace dssvae {
namespace {

using ad::Tape;
using ad::Var;

Tensor random_tensor(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  return uniform(r, c, -scale, scale, rng);
}

// Sum of entries weighted by a fixed pattern, so every output entry gets a
// distinct upstream gradient.
Var weighted_sum(const Var& v) {
  Tensor w(v.rows(), v.cols());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.3 + 0.1 * static_cast<double>(i % 7);
  return ad::sum(ad::mul(v, v.tape().constant(w)));
}

TEST(GruCell, ZeroWeightsAverageStateWithZeroCandidate) {
  Tape tape;
  Var x = tape.constant(Tensor(1, 1));
  Var h = tape.constant(Tensor::row({2.0}));
  Var out = ad::gru_cell(x, h, tape.constant(Tensor(1, 3)), tape.constant(Tensor(1, 3)),
                         tape.constant(Tensor(1, 3)));
  EXPECT_DOUBLE_EQ(out.value()[0], 1.0);
}

TEST(GruCell, ClosedUpdateGateCopiesState) {
  Rng rng(3);
  const std::size_t H = 4;
  Tensor w = random_tensor(2, 3 * H, rng);
  Tensor u = random_tensor(H, 3 * H, rng);
  Tensor b = random_tensor(1, 3 * H, rng);
  for (std::size_t j = 0; j < H; ++j) {
    b(0, j) = -1000.0;
    for (std::size_t k = 0; k < H; ++k) u(k, j) = 0.0;
  }
  Tensor h = random_tensor(1, H, rng);
  Tape tape;
  Var out = ad::gru_cell(tape.constant(Tensor(1, 2)), tape.constant(h), tape.constant(w),
                         tape.constant(u), tape.constant(b));
  EXPECT_EQ(out.value(), h);
}

TEST(GruCell, ShapeMismatchIsShapeError) {
  Tape tape;
  EXPECT_THROW(ad::gru_cell(tape.constant(Tensor(1, 2)), tape.constant(Tensor(1, 4)),
                            tape.constant(Tensor(3, 12)), tape.constant(Tensor(4, 12)),
                            tape.constant(Tensor(1, 12))),
               ShapeError);
}

TEST(GruCell, GradientMatchesFiniteDifferences) {
  for (int seed = 0; seed < 20; ++seed) {
    Rng rng(static_cast<std::uint64_t>(seed));
    const std::size_t H = 4, I = 3, B = 2;
    const auto r = grad_check(
        [](Tape&, std::span<const Var> in) {
          return ad::sum(ad::gru_cell(in[0], in[1], in[2], in[3], in[4]));
        },
        {random_tensor(B, I, rng), random_tensor(B, H, rng), random_tensor(I, 3 * H, rng, 0.5),
         random_tensor(H, 3 * H, rng, 0.5), random_tensor(1, 3 * H, rng, 0.5)},
        1e-5);
    ASSERT_TRUE(r.checkable);
    EXPECT_LT(r.max_relative_error, 1e-4) << "seed " << seed;
  }
}

TEST(Reparameterize, ZeroNoiseReturnsMean) {
  Tape tape;
  Var mu = tape.constant(Tensor::row({0.5, -1.5}));
  Var sigma = tape.constant(Tensor::row({2.0, 0.1}));
  EXPECT_EQ(ad::reparameterize(mu, sigma, Tensor(1, 2)).value(), mu.value());
}

TEST(Reparameterize, Arithmetic) {
  Tape tape;
  Var z = ad::reparameterize(tape.constant(Tensor::row({1.0})), tape.constant(Tensor::row({2.0})),
                             Tensor::row({0.5}));
  EXPECT_DOUBLE_EQ(z.value()[0], 2.0);
}

TEST(Reparameterize, GradientReachesMeanAndSigmaOnly) {
  Tape tape;
  Var mu = tape.leaf(Tensor::row({1.0, 2.0}));
  Var sigma = tape.leaf(Tensor::row({0.5, 3.0}));
  tape.backward(ad::sum(ad::reparameterize(mu, sigma, Tensor::row({0.25, -2.0}))));
  EXPECT_EQ(mu.grad(), Tensor::row({1.0, 1.0}));
  EXPECT_EQ(sigma.grad(), Tensor::row({0.25, -2.0}));
}

TEST(Reparameterize, NonpositiveSigmaIsDomainError) {
  Tape tape;
  EXPECT_THROW(ad::reparameterize(tape.constant(Tensor::row({0.0})),
                                  tape.constant(Tensor::row({0.0})), Tensor::row({1.0})),
               DomainError);
}

TEST(Reparameterize, MonteCarloMomentsMatch) {
  Rng rng(11);
  const std::size_t n = 100000;
  Tape tape;
  Tensor mu(n, 1, 1.5), sigma(n, 1, 0.7);
  Var z = ad::reparameterize(tape.constant(mu), tape.constant(sigma), standard_normal(n, 1, rng));
  const auto d = z.value().data();
  double mean = 0.0;
  for (double v : d) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : d) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(n - 1));
  EXPECT_NEAR(mean / 1.5, 1.0, 0.02);
  EXPECT_NEAR(sd / 0.7, 1.0, 0.02);
}

TEST(KlStandardGaussian, ZeroAtPrior) {
  Tape tape;
  EXPECT_DOUBLE_EQ(ad::kl_standard_gaussian(tape.constant(Tensor(1, 5)), tape.constant(Tensor(1, 5, 1.0)))
                       .value()
                       .item(),
                   0.0);
}

TEST(KlStandardGaussian, UnitShiftedMean) {
  Tape tape;
  EXPECT_DOUBLE_EQ(ad::kl_standard_gaussian(tape.constant(Tensor::row({1.0})),
                                            tape.constant(Tensor::row({1.0})))
                       .value()
                       .item(),
                   0.5);
}

TEST(KlStandardGaussian, StrictlyPositiveAwayFromPrior) {
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    Tape tape;
    Tensor mu = random_tensor(1, 3, rng), sigma = uniform(1, 3, 0.2, 3.0, rng);
    EXPECT_GT(ad::kl_standard_gaussian(tape.constant(mu), tape.constant(sigma)).value().item(), 0.0);
  }
}

TEST(KlStandardGaussian, MatchesMonteCarloEstimate) {
  const std::vector<double> mu{0.3, -0.7}, sigma{0.9, 1.4};
  Tape tape;
  const double closed =
      ad::kl_standard_gaussian(tape.constant(Tensor::row(mu)), tape.constant(Tensor::row(sigma)))
          .value()
          .item();
  // E_q[ln q(z) - ln p(z)] with z = mu + sigma * eps.
  Rng rng(17);
  std::normal_distribution<double> normal;
  double acc = 0.0;
  const int n = 100000;
  for (int s = 0; s < n; ++s) {
    for (std::size_t i = 0; i < mu.size(); ++i) {
      const double eps = normal(rng);
      const double z = mu[i] + sigma[i] * eps;
      acc += -0.5 * eps * eps - std::log(sigma[i]) + 0.5 * z * z;
    }
  }
  EXPECT_NEAR(acc / n / closed, 1.0, 0.02);
}

TEST(KlStandardGaussian, NonpositiveSigmaIsDomainError) {
  Tape tape;
  EXPECT_THROW(ad::kl_standard_gaussian(tape.constant(Tensor::row({0.0})),
                                        tape.constant(Tensor::row({-1.0}))),
               DomainError);
}

TEST(SoftmaxCrossEntropy, UniformLogitsGiveLogK) {
  Tape tape;
  const int target[] = {2};
  EXPECT_NEAR(ad::softmax_cross_entropy(tape.constant(Tensor(1, 7)), target).value().item(),
              std::log(7.0), 1e-12);
}

TEST(SoftmaxCrossEntropy, SaturatedCorrectLogitIsNearZero) {
  Tape tape;
  const int target[] = {0};
  EXPECT_LT(ad::softmax_cross_entropy(tape.constant(Tensor::row({10.0, -10.0})), target).value().item(),
            1e-4);
}

TEST(SoftmaxCrossEntropy, GradientIsSoftmaxMinusTarget) {
  Rng rng(23);
  const Tensor logits = random_tensor(1, 5, rng, 2.0);
  const Tensor target = Tensor::row({0.1, 0.2, 0.0, 0.4, 0.3});
  Tape tape;
  Var l = tape.leaf(logits);
  tape.backward(ad::softmax_cross_entropy(l, target));
  double z = 0.0;
  for (double v : logits.data()) z += std::exp(v);
  for (std::size_t c = 0; c < 5; ++c) {
    EXPECT_NEAR(l.grad()[c], std::exp(logits[c]) / z - target[c], 1e-12);
  }
  const auto r = grad_check(
      [&](Tape&, std::span<const Var> in) { return ad::softmax_cross_entropy(in[0], target); },
      {logits}, 1e-5);
  EXPECT_LT(r.max_relative_error, 1e-6);
}

TEST(SoftmaxCrossEntropy, AtLeastTargetEntropy) {
  Rng rng(29);
  for (int i = 0; i < 100; ++i) {
    Tensor t = uniform(1, 6, 0.0, 1.0, rng);
    t.mat() /= t.mat().sum();
    double entropy = 0.0;
    for (double v : t.data()) entropy -= v > 0 ? v * std::log(v) : 0.0;
    Tape tape;
    EXPECT_GE(ad::softmax_cross_entropy(tape.constant(random_tensor(1, 6, rng, 3.0)), t).value().item(),
              entropy - 1e-12);
  }
}

TEST(SoftmaxCrossEntropy, InvalidTargetsAreDomainErrors) {
  Tape tape;
  Var logits = tape.constant(Tensor(1, 3));
  const int bad[] = {3};
  EXPECT_THROW(ad::softmax_cross_entropy(logits, bad), DomainError);
  EXPECT_THROW(ad::softmax_cross_entropy(logits, Tensor::row({0.5, 0.4, 0.0})), DomainError);
}

TEST(Adam, ZeroGradientLeavesParametersAndMomentsUnchanged) {
  Parameter p("p", ParamGroup::kMain, Tensor::row({0.5, -2.0}));
  OptimizerState state;
  Parameter* ps[] = {&p};
  adam_step(ps, state);
  EXPECT_EQ(p.value, Tensor::row({0.5, -2.0}));
  EXPECT_EQ(state.first_moment[0], Tensor(1, 2));
  EXPECT_EQ(state.second_moment[0], Tensor(1, 2));
  EXPECT_EQ(state.step_count, 1u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Parameter p("p", ParamGroup::kMain, Tensor::scalar(0.0));
  p.grad = Tensor::scalar(1.0);
  OptimizerState state;
  Parameter* ps[] = {&p};
  adam_step(ps, state);
  EXPECT_NEAR(p.value.item(), -0.001, 1e-10);
}

TEST(Adam, ConstantGradientMovesMonotonically) {
  Parameter p("p", ParamGroup::kMain, Tensor::scalar(0.0));
  OptimizerState state;
  Parameter* ps[] = {&p};
  double prev = 0.0;
  for (int i = 0; i < 2; ++i) {
    p.grad = Tensor::scalar(-3.0);
    adam_step(ps, state);
    EXPECT_GT(p.value.item(), prev);
    prev = p.value.item();
  }
  EXPECT_EQ(state.step_count, 2u);
}

TEST(Adam, IsBitReproducible) {
  Rng rng(31);
  const Tensor init = random_tensor(3, 4, rng);
  std::vector<Tensor> grads;
  for (int i = 0; i < 5; ++i) grads.push_back(random_tensor(3, 4, rng));
  auto run = [&] {
    Parameter p("p", ParamGroup::kMain, init);
    OptimizerState state;
    Parameter* ps[] = {&p};
    for (const auto& g : grads) {
      p.grad = g;
      adam_step(ps, state);
    }
    return p.value;
  };
  EXPECT_EQ(run(), run());
}

TEST(Adam, ShapeMismatchIsShapeError) {
  Tensor param(1, 2);
  Tensor grad(2, 1);
  OptimizerState state;
  Tensor* ps[] = {&param};
  const Tensor* gs[] = {&grad};
  EXPECT_THROW(adam_step(ps, gs, state), ShapeError);
}

TEST(Backward, IdentityLossHasUnitGradient) {
  Parameter p("p", ParamGroup::kMain, Tensor::scalar(4.2));
  Tape tape;
  tape.backward(tape.param(p));
  EXPECT_DOUBLE_EQ(p.grad.item(), 1.0);
}

TEST(Backward, SquaredNormGradientIsTwiceParameter) {
  Rng rng(37);
  Parameter p("p", ParamGroup::kMain, random_tensor(2, 3, rng));
  Tape tape;
  Var v = tape.param(p);
  tape.backward(ad::sum(ad::mul(v, v)));
  for (std::size_t i = 0; i < 6; ++i) EXPECT_DOUBLE_EQ(p.grad[i], 2.0 * p.value[i]);
}

TEST(Backward, NonScalarLossIsContractError) {
  Tape tape;
  Var v = tape.leaf(Tensor(1, 2));
  EXPECT_THROW(tape.backward(v), ContractError);
}

TEST(Backward, IsDeterministic) {
  Rng rng(41);
  const Tensor a = random_tensor(3, 4, rng), b = random_tensor(4, 2, rng);
  auto grads = [&] {
    Tape tape;
    Var x = tape.leaf(a), y = tape.leaf(b);
    tape.backward(weighted_sum(ad::tanh(ad::matmul(x, y))));
    return std::pair{x.grad(), y.grad()};
  };
  EXPECT_EQ(grads(), grads());
}

TEST(Backward, GruChainMatchesFiniteDifferences) {
  Rng rng(43);
  const std::size_t H = 3, I = 2, T = 4;
  std::vector<Tensor> inputs{random_tensor(I, 3 * H, rng, 0.6), random_tensor(H, 3 * H, rng, 0.6),
                             random_tensor(1, 3 * H, rng, 0.3), random_tensor(1, H, rng)};
  for (std::size_t t = 0; t < T; ++t) inputs.push_back(random_tensor(1, I, rng));
  const auto r = grad_check(
      [&](Tape&, std::span<const Var> in) {
        Var h = in[3];
        for (std::size_t t = 0; t < T; ++t) h = ad::gru_cell(in[4 + t], h, in[0], in[1], in[2]);
        return weighted_sum(h);
      },
      inputs, 1e-5);
  EXPECT_LT(r.max_relative_error, 1e-4);
}

TEST(GradCheck, LinearOpIsExact) {
  Rng rng(47);
  const auto r = grad_check(
      [](Tape&, std::span<const Var> in) { return ad::sum(ad::scale(ad::add(in[0], in[1]), 3.0)); },
      {random_tensor(2, 3, rng), random_tensor(2, 3, rng)}, 1e-5);
  EXPECT_LT(r.max_relative_error, 1e-10);
}

TEST(GradCheck, SigmoidComposition) {
  Rng rng(53);
  const auto r = grad_check(
      [](Tape&, std::span<const Var> in) {
        return weighted_sum(ad::sigmoid(ad::mul(ad::sigmoid(in[0]), in[1])));
      },
      {random_tensor(2, 3, rng, 2.0), random_tensor(2, 3, rng, 2.0)}, 1e-5);
  EXPECT_LT(r.max_relative_error, 1e-4);
}

TEST(GradCheck, ArgmaxIsNotCheckable) {
  const auto r = grad_check(
      [](Tape&, std::span<const Var> in) { return ad::sum(ad::mul(ad::argmax_onehot(in[0]), in[0])); },
      {Tensor::row({0.1, 0.7, 0.2})}, 1e-5);
  EXPECT_FALSE(r.checkable);
}

TEST(GradCheck, NonFiniteOutputIsNumericError) {
  EXPECT_THROW(grad_check([](Tape&, std::span<const Var> in) { return ad::sum(ad::exp(in[0])); },
                          {Tensor::scalar(1000.0)}, 1e-5),
               NumericError);
}

// Every differentiable primitive, 20 seeds each.
TEST(GradCheck, AllPrimitivesPassOnRandomInputs) {
  struct Case {
    const char* name;
    std::vector<std::array<std::size_t, 2>> shapes;
    TapeOp op;
  };
  const int ids[] = {2, 0, 1};
  const std::vector<Case> cases{
      {"add", {{3, 4}, {3, 4}}, [](Tape&, std::span<const Var> v) { return weighted_sum(ad::add(v[0], v[1])); }},
      {"add_broadcast", {{3, 4}, {1, 4}}, [](Tape&, std::span<const Var> v) { return weighted_sum(ad::add(v[0], v[1])); }},
      {"sub", {{2, 3}, {2, 3}}, [](Tape&, std::span<const Var> v) { return weighted_sum(ad::sub(v[0], v[1])); }},
      {"mul", {{2, 3}, {2, 3}}, [](Tape&, std::span<const Var> v) { return weighted_sum(ad::mul(v[0], v[1])); }},
      {"scale", {{2, 3}}, [](Tape&, std::span<const Var> v) { return weighted_sum(ad::scale(v[0], -1.7)); }},
      {"matmul", {{2, 3}, {3, 4}}, [](Tape&, std::span<const Var> v) { return weighted_sum(ad::matmul(v[0], v[1])); }},
      {"linear", {{3, 2}, {2, 4}, {1, 4}}, [](Tape&, std::span<const Var> v) { return weighted_sum(ad::linear(v[0], v[1], v[2])); }},
      {"sigmoid", {{2, 3}}, [](Tape&, std::span<const Var> v) { return weighted_sum(ad::sigmoid(v[0])); }},
      {"tanh", {{2, 3}}, [](Tape&, std::span<const Var> v) { return weighted_sum(ad::tanh(v[0])); }},
      {"exp", {{2, 3}}, [](Tape&, std::span<const Var> v) { return weighted_sum(ad::exp(v[0])); }},
      {"log", {{2, 3}}, [](Tape&, std::span<const Var> v) { return weighted_sum(ad::log(ad::exp(v[0]))); }},
      {"sum", {{2, 3}}, [](Tape&, std::span<const Var> v) { return ad::scale(ad::sum(v[0]), 0.5); }},
      {"concat", {{2, 3}, {2, 2}}, [](Tape&, std::span<const Var> v) { return weighted_sum(ad::concat_cols(v[0], v[1])); }},
      {"slice", {{2, 5}}, [](Tape&, std::span<const Var> v) { return weighted_sum(ad::slice_cols(v[0], 1, 3)); }},
      {"gather", {{4, 3}}, [&](Tape&, std::span<const Var> v) { return weighted_sum(ad::gather_rows(v[0], ids)); }},
      {"masked_blend", {{3, 2}, {3, 2}}, [](Tape&, std::span<const Var> v) {
         const double m[] = {1.0, 0.0, 1.0};
         return weighted_sum(ad::masked_blend(v[0], v[1], m));
       }},
      {"gru_cell", {{2, 3}, {2, 4}, {3, 12}, {4, 12}, {1, 12}}, [](Tape&, std::span<const Var> v) {
         return weighted_sum(ad::gru_cell(v[0], v[1], v[2], v[3], v[4]));
       }},
      {"reparameterize", {{2, 3}, {2, 3}}, [](Tape&, std::span<const Var> v) {
         Tensor eps(2, 3);
         for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = std::sin(static_cast<double>(i) + 1.0);
         return weighted_sum(ad::reparameterize(v[0], ad::exp(v[1]), eps));
       }},
      {"kl", {{2, 3}, {2, 3}}, [](Tape&, std::span<const Var> v) { return ad::kl_standard_gaussian(v[0], ad::exp(v[1])); }},
      {"cross_entropy_index", {{3, 5}}, [&](Tape&, std::span<const Var> v) {
         const double w[] = {1.0, 0.5, 0.0};
         return ad::softmax_cross_entropy(v[0], ids, w);
       }},
      {"cross_entropy_soft", {{2, 3}}, [](Tape&, std::span<const Var> v) {
         return ad::softmax_cross_entropy(v[0], Tensor(2, 3, {0.2, 0.3, 0.5, 1.0, 0.0, 0.0}));
       }},
  };
  for (const auto& c : cases) {
    for (int seed = 0; seed < 20; ++seed) {
      Rng rng(static_cast<std::uint64_t>(1000 + seed));
      std::vector<Tensor> inputs;
      for (const auto& s : c.shapes) inputs.push_back(random_tensor(s[0], s[1], rng));
      const auto r = grad_check(c.op, inputs, 1e-5);
      ASSERT_TRUE(r.checkable) << c.name;
      EXPECT_LT(r.max_relative_error, 1e-4) << c.name << " seed " << seed;
    }
  }
}

TEST(Tape, FrozenParameterReceivesNoGradient) {
  Parameter p("p", ParamGroup::kAdversary, Tensor::row({1.0, 2.0}));
  Tape tape;
  Var x = tape.leaf(Tensor::row({3.0, 4.0}));
  tape.backward(ad::sum(ad::mul(x, tape.param(p, false))));
  EXPECT_EQ(p.grad, Tensor(1, 2));
  EXPECT_EQ(x.grad(), Tensor::row({1.0, 2.0}));
}

TEST(Tensor, DataLengthMustMatchShape) {
  EXPECT_THROW(Tensor(2, 2, std::vector<double>{1.0, 2.0, 3.0}), ShapeError);
  EXPECT_THROW(Tensor(0, 2), ShapeError);
}

}  // namespace
}  // namespace dssvae
