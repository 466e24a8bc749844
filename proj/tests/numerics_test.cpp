#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "gtlab/numerics/ops.hpp"
#include "gtlab/numerics/optim.hpp"
#include "support/gradcheck.hpp"

namespace gtlab {
namespace {

using fixtures::gradcheck;
using fixtures::Leaves;
using fixtures::random_tensor;
using T = Tensor<double>;

constexpr int kTrials = 20;
constexpr double kGradTol = 1e-4;

TEST(Tensor, RejectsShapeBufferMismatch) {
  EXPECT_THROW(T({2, 3}, std::vector<double>(5)), TensorError);
  EXPECT_THROW(T({0}, {}), TensorError);
}

TEST(Tensor, RejectsNonFiniteValues) {
  EXPECT_THROW(T({1}, {std::nan("")}), TensorError);
  const T big({1}, {1e308}, false);
  EXPECT_THROW(ops::scale(big, 10.0), TensorError);
}

TEST(Backward, SquareHasDerivativeTwoX) {
  T x = T::scalar(3.0, true);
  backward(ops::mul(x, x));
  ASSERT_TRUE(x.has_grad());
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
}

TEST(Backward, IndependentLeafGetsZero) {
  T x = T::scalar(3.0, true);
  T y = T::scalar(2.0, true);
  backward(ops::mul(x, x));
  EXPECT_EQ(y.grad_or_zeros(), std::vector<double>{0.0});
}

TEST(Backward, RejectsNonScalarRoot) {
  T x({2}, {1.0, 2.0}, true);
  EXPECT_THROW(backward(ops::scale(x, 2.0)), TensorError);
}

TEST(Backward, RejectsReleasedGraph) {
  T x = T::scalar(3.0, true);
  T y = ops::mul(x, x);
  T z = ops::scale(y, 2.0);
  backward(z);
  EXPECT_THROW(backward(z), TensorError);
  EXPECT_THROW(backward(ops::scale(y, 1.0)), TensorError);
}

TEST(Backward, NoGradGuardSkipsGraph) {
  T x = T::scalar(3.0, true);
  NoGradGuard guard;
  T y = ops::mul(x, x);
  EXPECT_FALSE(y.requires_grad());
}

class GradCheck : public ::testing::Test {
 protected:
  CounterRng rng{0xC0FFEE};
};

TEST_F(GradCheck, Matmul) {
  for (int trial = 0; trial < kTrials; ++trial) {
    Leaves in{random_tensor({3, 4}, rng), random_tensor({4, 5}, rng), random_tensor({3, 5}, rng)};
    auto fn = [](const Leaves& l) { return ops::sum(ops::mul(ops::matmul(l[0], l[1]), l[2])); };
    EXPECT_LT(gradcheck(fn, in), kGradTol);
  }
}

TEST_F(GradCheck, MatmulTransposed) {
  for (int trial = 0; trial < kTrials; ++trial) {
    Leaves in{random_tensor({3, 4}, rng), random_tensor({6, 4}, rng), random_tensor({3, 6}, rng)};
    auto fn = [](const Leaves& l) {
      return ops::sum(ops::mul(ops::matmul_nt(l[0], l[1]), l[2]));
    };
    EXPECT_LT(gradcheck(fn, in), kGradTol);
  }
}

TEST_F(GradCheck, ElementwiseAndBias) {
  for (int trial = 0; trial < kTrials; ++trial) {
    Leaves in{random_tensor({4, 3}, rng), random_tensor({3}, rng), random_tensor({4, 3}, rng)};
    auto fn = [](const Leaves& l) {
      auto x = ops::add_bias(l[0], l[1]);
      auto y = ops::add(ops::gelu(x), ops::mul(ops::sigmoid(x), ops::tanh(l[2])));
      return ops::mean(ops::mul(y, y));
    };
    EXPECT_LT(gradcheck(fn, in), kGradTol);
  }
}

TEST_F(GradCheck, LayerNorm) {
  for (int trial = 0; trial < kTrials; ++trial) {
    Leaves in{random_tensor({5, 6}, rng), random_tensor({6}, rng), random_tensor({6}, rng),
              random_tensor({5, 6}, rng)};
    auto fn = [](const Leaves& l) {
      return ops::sum(ops::mul(ops::layer_norm(l[0], l[1], l[2]), l[3]));
    };
    EXPECT_LT(gradcheck(fn, in), kGradTol);
  }
}

TEST_F(GradCheck, SoftmaxRows) {
  for (int trial = 0; trial < kTrials; ++trial) {
    Leaves in{random_tensor({3, 7}, rng, 2.0), random_tensor({3, 7}, rng)};
    auto fn = [](const Leaves& l) { return ops::sum(ops::mul(ops::softmax_rows(l[0]), l[1])); };
    EXPECT_LT(gradcheck(fn, in), kGradTol);
  }
}

TEST_F(GradCheck, MatmulSoftmaxLayerNormComposite) {
  for (int trial = 0; trial < kTrials; ++trial) {
    Leaves in{random_tensor({4, 5}, rng), random_tensor({5, 6}, rng), random_tensor({6}, rng),
              random_tensor({6}, rng), random_tensor({4, 6}, rng)};
    auto fn = [](const Leaves& l) {
      auto h = ops::layer_norm(ops::matmul(l[0], l[1]), l[2], l[3]);
      return ops::sum(ops::mul(ops::softmax_rows(h), l[4]));
    };
    EXPECT_LT(gradcheck(fn, in), kGradTol);
  }
}

TEST_F(GradCheck, CausalAttention) {
  for (int trial = 0; trial < kTrials; ++trial) {
    const std::size_t batch = 2;
    const std::size_t len = 4;
    Leaves in{random_tensor({batch * len, 3 * 6}, rng), random_tensor({batch * len, 6}, rng)};
    auto fn = [&](const Leaves& l) {
      return ops::sum(ops::mul(ops::causal_attention(l[0], batch, len, 2), l[1]));
    };
    EXPECT_LT(gradcheck(fn, in), kGradTol);
  }
}

TEST_F(GradCheck, EmbeddingPositionalConcatSlices) {
  const std::vector<std::int32_t> ids{2, 0, 2, 1};
  for (int trial = 0; trial < kTrials; ++trial) {
    Leaves in{random_tensor({3, 4}, rng), random_tensor({5, 4}, rng), random_tensor({1, 4}, rng),
              random_tensor({5, 2}, rng)};
    auto fn = [&](const Leaves& l) {
      auto e = ops::embedding(l[0], ids);
      auto x = ops::concat_rows(std::vector<T>{l[2], e});
      auto p = ops::add_positional(x, l[1], 1, 5);
      auto s = ops::slice_cols(ops::slice_rows(p, 1, 5), 1, 3);
      return ops::sum(ops::mul(ops::tanh(s), ops::slice_rows(l[3], 0, 4)));
    };
    EXPECT_LT(gradcheck(fn, in), kGradTol);
  }
}

TEST_F(GradCheck, CrossEntropyWeighted) {
  const std::vector<std::int32_t> targets{1, 0, 3};
  const std::vector<double> weights{1.0, 0.0, 2.0};
  for (int trial = 0; trial < kTrials; ++trial) {
    Leaves in{random_tensor({3, 4}, rng, 2.0)};
    auto fn = [&](const Leaves& l) {
      return ops::cross_entropy(l[0], std::span<const std::int32_t>(targets),
                                std::span<const double>(weights));
    };
    EXPECT_LT(gradcheck(fn, in), kGradTol);
  }
}

TEST(Softmax, RowsAreDistributions) {
  CounterRng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    auto x = random_tensor({4, 9}, rng, 10.0);
    auto p = ops::softmax_rows(x);
    for (std::size_t i = 0; i < 4; ++i) {
      double total = 0.0;
      for (std::size_t j = 0; j < 9; ++j) {
        const double v = p.values()[i * 9 + j];
        EXPECT_GE(v, 0.0);
        total += v;
      }
      EXPECT_NEAR(total, 1.0, 1e-6);
    }
  }
}

TEST(CrossEntropy, UniformLogitsGiveLogVocab) {
  T logits = T::zeros({3, 50});
  const std::vector<std::int32_t> targets{0, 7, 49};
  EXPECT_NEAR(ops::cross_entropy(logits, targets).item(), std::log(50.0), 1e-12);
}

// ---- optimizer ----

TEST(Adam, ZeroGradientNoDecayLeavesParamsUnchanged) {
  std::vector<T> params{T({3}, {1.0, -2.0, 0.5}, true)};
  auto state = make_adam_state<double>(params, {.lr = 1e-3, .weight_decay = 0.0});
  params[0].zero_grad();
  backward(ops::scale(ops::sum(params[0]), 0.0));
  adam_step<double>(params, state);
  EXPECT_EQ(std::vector<double>(params[0].values().begin(), params[0].values().end()),
            (std::vector<double>{1.0, -2.0, 0.5}));
  EXPECT_EQ(state.step, 1U);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  // Bias-corrected first step: mhat = g, vhat = g^2, so the update is
  // lr * g / (|g| + eps).
  const double lr = 1e-3;
  const double eps = 1e-8;
  for (double g : {0.5, -3.0, 1e-3}) {
    std::vector<T> params{T::scalar(2.0, true)};
    auto state = make_adam_state<double>(params, {.lr = lr, .eps = eps, .weight_decay = 0.0});
    backward(ops::scale(params[0], g));
    adam_step<double>(params, state);
    const double expected = 2.0 - lr * g / (std::abs(g) + eps);
    EXPECT_NEAR(params[0].item(), expected, 1e-15);
    EXPECT_NEAR(std::abs(params[0].item() - 2.0), lr, 1e-7);
  }
}

TEST(Adam, DecoupledDecayScalesParameter) {
  std::vector<T> params{T({2}, {4.0, -1.5}, true)};
  auto state = make_adam_state<double>(params, {.lr = 1e-4, .weight_decay = 0.01});
  adam_step<double>(params, state);
  EXPECT_DOUBLE_EQ(params[0].values()[0], 4.0 * (1.0 - 1e-6));
  EXPECT_DOUBLE_EQ(params[0].values()[1], -1.5 * (1.0 - 1e-6));
}

TEST(Adam, RejectsMismatchAndNonFinite) {
  std::vector<T> params{T({2}, {1.0, 2.0}, true)};
  auto state = make_adam_state<double>(params, {});
  std::vector<T> other{T({3}, {1.0, 2.0, 3.0}, true)};
  EXPECT_THROW(adam_step<double>(other, state), OptimError);
  params[0].node().grad = {1.0, std::numeric_limits<double>::infinity()};
  EXPECT_THROW(adam_step<double>(params, state), OptimError);
}

TEST(Adam, BitwiseDeterministic) {
  auto run = [] {
    CounterRng rng(11);
    std::vector<Tensor<float>> params{Tensor<float>({8}, std::vector<float>(8, 0.3f), true)};
    auto state = make_adam_state<float>(params, {.lr = 1e-2});
    for (int step = 0; step < 25; ++step) {
      params[0].zero_grad();
      std::vector<float> w(8);
      for (auto& x : w) {
        x = static_cast<float>(rng.normal());
      }
      Tensor<float> target({8}, w);
      auto d = ops::add(params[0], ops::scale(target, -1.0f));
      backward(ops::sum(ops::mul(d, d)));
      adam_step<float>(params, state);
    }
    return std::vector<float>(params[0].values().begin(), params[0].values().end());
  };
  const auto a = run();
  const auto b = run();
  EXPECT_EQ(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)), 0);
}

// ---- schedule ----

TEST(LrSchedule, WarmupEndpointsAndCosineMidpoint) {
  const LrSchedule s{.peak_lr = 1e-4, .warmup_steps = 50, .total_steps = 250, .min_lr = 0.0};
  EXPECT_EQ(lr_at(s, 0), 0.0);
  EXPECT_DOUBLE_EQ(lr_at(s, 50), 1e-4);
  EXPECT_DOUBLE_EQ(lr_at(s, 25), 0.5e-4);
  EXPECT_NEAR(lr_at(s, 150), 0.5e-4, 1e-18);
  EXPECT_NEAR(lr_at(s, 250), 0.0, 1e-20);
  EXPECT_THROW(lr_at(s, 251), OptimError);
}

TEST(LrSchedule, ContinuousAtWarmupAndMonotoneAfter) {
  const LrSchedule s{.peak_lr = 3e-3, .warmup_steps = 10, .total_steps = 300, .min_lr = 1e-5};
  EXPECT_NEAR(lr_at(s, 11), lr_at(s, 10), 3e-3 * 1e-3);
  EXPECT_NEAR(lr_at(s, 9), lr_at(s, 10), 3e-3 * 0.11);
  for (std::uint64_t step = 10; step < 300; ++step) {
    EXPECT_LE(lr_at(s, step + 1), lr_at(s, step));
  }
  EXPECT_NEAR(lr_at(s, 300), 1e-5, 1e-18);
}

TEST(LrSchedule, RejectsInvalidConfigurations) {
  EXPECT_THROW(lr_at(LrSchedule{.peak_lr = 1.0, .warmup_steps = 5, .total_steps = 5}, 0),
               OptimError);
  EXPECT_THROW(lr_at(LrSchedule{.peak_lr = 1.0, .warmup_steps = 1, .total_steps = 5, .min_lr = 2.0}, 0),
               OptimError);
}

}  // namespace
}  // namespace gtlab
