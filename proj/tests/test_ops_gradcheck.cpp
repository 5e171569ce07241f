// Finite-difference verification of every differentiable primitive, repeated
// across random seeds.  Losses project op outputs to a scalar through fixed
// random weights so every output element influences the loss.

#include <gtest/gtest.h>

#include <functional>

#include "slt/gradcheck.hpp"
#include "slt/ops.hpp"

using slt::ParamStore;
using slt::Rng;
using slt::Shape;
using slt::Tensor;
using T = Tensor<double>;

namespace {

std::vector<double> draws(Rng& rng, int64_t n, double lo, double hi) {
  std::vector<double> v(static_cast<size_t>(n));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

// Random projection tensor (not a parameter).
T proj_for(const T& y, Rng& rng) {
  return T::from_data(y.shape(), draws(rng, y.numel(), -1.0, 1.0));
}

// Multilinear losses (matmul/conv chains are linear in each single element)
// have zero FD truncation error, so a larger step drowns roundoff noise.
double check_fn(const std::function<T(ParamStore<double>&)>& build_inputs_loss,
                uint64_t seed, double h = 1e-5) {
  (void)seed;
  ParamStore<double> ps;
  auto loss = [&]() { return build_inputs_loss(ps); };
  // params are created on first call; rebuilds reuse them via ps.has()
  auto report = slt::grad_check<double>(loss, ps, h);
  return report.worst;
}

// Creates (or fetches) a parameter with values drawn once from `seed`.
T param(ParamStore<double>& ps, const std::string& name, const Shape& shape,
        uint64_t seed, double lo, double hi) {
  if (ps.has(name)) return ps.get(name);
  Rng rng(seed);
  return ps.create(name, shape, draws(rng, slt::numel(shape), lo, hi));
}

}  // namespace

TEST(OpGrad, AddSubMulDiv) {
  for (uint64_t s = 1; s <= 10; ++s) {
    double worst = check_fn(
        [s](ParamStore<double>& ps) {
          auto a = param(ps, "a", {2, 3}, s, -1.0, 1.0);
          auto b = param(ps, "b", {2, 3}, s + 100, 0.5, 1.5);  // away from 0
          Rng prng(s + 200);
          auto y = slt::add(slt::mul(a, b),
                            slt::div(slt::sub(a, b), b));
          return slt::sum_all(slt::mul(y, proj_for(y, prng)));
        },
        s);
    EXPECT_LT(worst, 1e-7) << "seed " << s;
  }
}

TEST(OpGrad, BroadcastVariants) {
  for (uint64_t s = 1; s <= 10; ++s) {
    double worst = check_fn(
        [s](ParamStore<double>& ps) {
          auto a = param(ps, "a", {2, 3, 4}, s, -1.0, 1.0);
          auto bias = param(ps, "bias", {4}, s + 1, -1.0, 1.0);
          auto mid = param(ps, "mid", {3, 1}, s + 2, 0.5, 1.5);
          Rng prng(s + 3);
          auto y = slt::mul(slt::add(a, bias), mid);
          return slt::sum_all(slt::mul(y, proj_for(y, prng)));
        },
        s);
    EXPECT_LT(worst, 1e-7) << "seed " << s;
  }
}

TEST(OpGrad, UnaryChain) {
  for (uint64_t s = 1; s <= 10; ++s) {
    double worst = check_fn(
        [s](ParamStore<double>& ps) {
          auto a = param(ps, "a", {3, 3}, s, 0.3, 1.2);  // positive for log/sqrt
          Rng prng(s + 9);
          auto y = slt::tanh_t(slt::log_t(slt::add_scalar(
              slt::sqrt_t(a), 0.5)));
          auto z = slt::sigmoid(slt::exp_t(slt::scale(a, 0.3)));
          auto out = slt::add(y, z);
          return slt::sum_all(slt::mul(out, proj_for(out, prng)));
        },
        s);
    EXPECT_LT(worst, 1e-7) << "seed " << s;
  }
}

TEST(OpGrad, ReluAwayFromKink) {
  for (uint64_t s = 1; s <= 10; ++s) {
    double worst = check_fn(
        [s](ParamStore<double>& ps) {
          // magnitudes >= 0.2, mixed signs: finite differences stay one-sided
          if (!ps.has("a")) {
            Rng rng(s);
            std::vector<double> v(12);
            for (auto& x : v) {
              double sign = rng.next_double() < 0.5 ? -1.0 : 1.0;
              x = sign * rng.uniform(0.2, 1.0);
            }
            ps.create("a", {3, 4}, std::move(v));
          }
          auto a = ps.get("a");
          Rng prng(s + 77);
          auto y = slt::relu(a);
          return slt::sum_all(slt::mul(y, proj_for(y, prng)));
        },
        s);
    EXPECT_LT(worst, 1e-7) << "seed " << s;
  }
}

TEST(OpGrad, ClampInterior) {
  for (uint64_t s = 1; s <= 10; ++s) {
    double worst = check_fn(
        [s](ParamStore<double>& ps) {
          auto a = param(ps, "a", {6}, s, -0.8, 0.8);  // inside [-1, 1]
          Rng prng(s + 5);
          auto y = slt::clamp(a, -1.0, 1.0);
          return slt::sum_all(slt::mul(y, proj_for(y, prng)));
        },
        s);
    EXPECT_LT(worst, 1e-7) << "seed " << s;
  }
}

TEST(OpGrad, ShapeOps) {
  for (uint64_t s = 1; s <= 10; ++s) {
    double worst = check_fn(
        [s](ParamStore<double>& ps) {
          auto a = param(ps, "a", {2, 3, 2}, s, -1.0, 1.0);
          auto b = param(ps, "b", {2, 2, 2}, s + 1, -1.0, 1.0);
          Rng prng(s + 2);
          auto c = slt::concat<double>({a, b}, 1);          // [2,5,2]
          auto p = slt::permute(c, {2, 0, 1});              // [2,2,5]
          auto sl = slt::slice(p, 2, 1, 3);                 // [2,2,3]
          auto r = slt::reshape(sl, {4, 3});
          auto bc = slt::broadcast_to(slt::slice(r, 0, 0, 1), {4, 3});
          auto y = slt::add(r, bc);
          return slt::sum_all(slt::mul(y, proj_for(y, prng)));
        },
        s);
    EXPECT_LT(worst, 1e-7) << "seed " << s;
  }
}

TEST(OpGrad, Reductions) {
  for (uint64_t s = 1; s <= 10; ++s) {
    double worst = check_fn(
        [s](ParamStore<double>& ps) {
          auto a = param(ps, "a", {2, 3, 4}, s, -1.0, 1.0);
          Rng prng(s + 4);
          auto s1 = slt::sum(a, {1});             // [2,4]
          auto s2 = slt::mean(a, {0, 2}, true);   // [1,3,1]
          auto y = slt::add(slt::sum_all(s2), slt::sum_all(s1));
          return y;
        },
        s);
    EXPECT_LT(worst, 1e-7) << "seed " << s;
  }
}

TEST(OpGrad, SoftmaxAllAxes) {
  for (uint64_t s = 1; s <= 10; ++s) {
    for (int64_t axis = 0; axis < 3; ++axis) {
      double worst = check_fn(
          [s, axis](ParamStore<double>& ps) {
            auto a = param(ps, "a", {2, 3, 4}, s, -2.0, 2.0);
            Rng prng(s + 6);
            auto y = slt::softmax(a, axis);
            return slt::sum_all(slt::mul(y, proj_for(y, prng)));
          },
          s);
      EXPECT_LT(worst, 1e-7) << "seed " << s << " axis " << axis;
    }
  }
}

TEST(OpGrad, LogSumExpBothKeepdims) {
  for (uint64_t s = 1; s <= 10; ++s) {
    double worst = check_fn(
        [s](ParamStore<double>& ps) {
          auto a = param(ps, "a", {2, 3, 4}, s, -2.0, 2.0);
          Rng prng(s + 7);
          auto y1 = slt::logsumexp(a, 1, false);
          auto y2 = slt::logsumexp(a, 2, true);
          auto y = slt::add(slt::sum_all(slt::mul(y1, proj_for(y1, prng))),
                            slt::sum_all(slt::mul(y2, proj_for(y2, prng))));
          return y;
        },
        s);
    EXPECT_LT(worst, 1e-7) << "seed " << s;
  }
}

TEST(OpGrad, LayerNorm) {
  for (uint64_t s = 1; s <= 10; ++s) {
    double worst = check_fn(
        [s](ParamStore<double>& ps) {
          auto a = param(ps, "a", {3, 5}, s, -2.0, 2.0);
          Rng prng(s + 8);
          auto y = slt::layer_norm(a);
          return slt::sum_all(slt::mul(y, proj_for(y, prng)));
        },
        s);
    EXPECT_LT(worst, 1e-6) << "seed " << s;
  }
}

TEST(OpGrad, MatmulChain) {
  for (uint64_t s = 1; s <= 10; ++s) {
    double worst = check_fn(
        [s](ParamStore<double>& ps) {
          auto a = param(ps, "a", {2, 3}, s, -1.0, 1.0);
          auto w1 = param(ps, "w1", {3, 4}, s + 1, -1.0, 1.0);
          auto w2 = param(ps, "w2", {4, 4}, s + 2, -1.0, 1.0);
          auto w3 = param(ps, "w3", {4, 2}, s + 3, -1.0, 1.0);
          Rng prng(s + 4);
          auto y = slt::matmul(slt::matmul(slt::matmul(a, w1), w2), w3);
          return slt::sum_all(slt::mul(y, proj_for(y, prng)));
        },
        s, 1e-3);
    EXPECT_LT(worst, 1e-7) << "seed " << s;
  }
}

TEST(OpGrad, MatmulBatchedInput) {
  for (uint64_t s = 1; s <= 10; ++s) {
    double worst = check_fn(
        [s](ParamStore<double>& ps) {
          auto a = param(ps, "a", {2, 3, 4}, s, -1.0, 1.0);
          auto w = param(ps, "w", {4, 5}, s + 1, -1.0, 1.0);
          Rng prng(s + 2);
          auto y = slt::matmul(a, w);
          return slt::sum_all(slt::mul(y, proj_for(y, prng)));
        },
        s, 1e-3);
    EXPECT_LT(worst, 1e-7) << "seed " << s;
  }
}

TEST(OpGrad, BmmAllTransposeCombos) {
  for (uint64_t s = 1; s <= 10; ++s) {
    for (int combo = 0; combo < 4; ++combo) {
      bool ta = combo & 1, tb = combo & 2;
      double worst = check_fn(
          [s, ta, tb](ParamStore<double>& ps) {
            // pick shapes so the effective product is [2,3,?]x[2,?,4]
            Shape sa = ta ? Shape{2, 5, 3} : Shape{2, 3, 5};
            Shape sb = tb ? Shape{2, 4, 5} : Shape{2, 5, 4};
            auto a = param(ps, "a", sa, s, -1.0, 1.0);
            auto b = param(ps, "b", sb, s + 1, -1.0, 1.0);
            Rng prng(s + 2);
            auto y = slt::bmm(a, b, ta, tb);
            return slt::sum_all(slt::mul(y, proj_for(y, prng)));
          },
          s, 1e-3);
      EXPECT_LT(worst, 1e-7) << "seed " << s << " combo " << combo;
    }
  }
}

TEST(OpGrad, SoftmaxOfMatmul) {
  for (uint64_t s = 1; s <= 10; ++s) {
    double worst = check_fn(
        [s](ParamStore<double>& ps) {
          auto a = param(ps, "a", {3, 4}, s, -1.0, 1.0);
          auto w = param(ps, "w", {4, 5}, s + 1, -1.0, 1.0);
          Rng prng(s + 2);
          auto y = slt::softmax(slt::matmul(a, w), 1);
          return slt::sum_all(slt::mul(y, proj_for(y, prng)));
        },
        s);
    EXPECT_LT(worst, 1e-6) << "seed " << s;
  }
}

TEST(OpGrad, ConvZeroPad) {
  for (uint64_t s = 1; s <= 10; ++s) {
    for (int64_t stride : {1, 2}) {
      double worst = check_fn(
          [s, stride](ParamStore<double>& ps) {
            auto x = param(ps, "x", {2, 5, 5, 2}, s, -1.0, 1.0);
            auto w = param(ps, "w", {3, 3, 2, 3}, s + 1, -0.5, 0.5);
            auto b = param(ps, "b", {3}, s + 2, -0.5, 0.5);
            Rng prng(s + 3);
            auto y = slt::add(slt::conv2d(x, w, stride), b);
            return slt::sum_all(slt::mul(y, proj_for(y, prng)));
          },
          s, 1e-3);
      EXPECT_LT(worst, 1e-7) << "seed " << s << " stride " << stride;
    }
  }
}

TEST(OpGrad, ConvReplicatePad) {
  for (uint64_t s = 1; s <= 10; ++s) {
    double worst = check_fn(
        [s](ParamStore<double>& ps) {
          auto x = param(ps, "x", {1, 4, 4, 2}, s, -1.0, 1.0);
          auto w = param(ps, "w", {3, 3, 2, 2}, s + 1, -0.5, 0.5);
          Rng prng(s + 2);
          auto y = slt::conv2d(x, w, 1, slt::Pad::Replicate);
          return slt::sum_all(slt::mul(y, proj_for(y, prng)));
        },
        s, 1e-3);
    EXPECT_LT(worst, 1e-7) << "seed " << s;
  }
}

TEST(OpGrad, ConvOneByOne) {
  for (uint64_t s = 1; s <= 10; ++s) {
    double worst = check_fn(
        [s](ParamStore<double>& ps) {
          auto x = param(ps, "x", {1, 3, 3, 4}, s, -1.0, 1.0);
          auto w = param(ps, "w", {1, 1, 4, 2}, s + 1, -0.7, 0.7);
          Rng prng(s + 2);
          auto y = slt::conv2d(x, w, 1);
          return slt::sum_all(slt::mul(y, proj_for(y, prng)));
        },
        s, 1e-3);
    EXPECT_LT(worst, 1e-7) << "seed " << s;
  }
}

TEST(OpGrad, FanOutThroughTwoPaths) {
  for (uint64_t s = 1; s <= 10; ++s) {
    double worst = check_fn(
        [s](ParamStore<double>& ps) {
          auto a = param(ps, "a", {3, 3}, s, 0.3, 1.0);
          auto p1 = slt::sum_all(slt::mul(a, a));
          auto p2 = slt::sum_all(slt::log_t(a));
          return slt::add(p1, p2);
        },
        s);
    EXPECT_LT(worst, 1e-7) << "seed " << s;
  }
}

TEST(OpGrad, ConstantLossHasZeroGradients) {
  ParamStore<double> ps;
  auto a = ps.create("a", {3}, {1.0, 2.0, 3.0});
  (void)a;
  auto loss = [&]() { return Tensor<double>::scalar(4.0); };
  auto report = slt::grad_check<double>(loss, ps, 1e-6);
  EXPECT_EQ(report.worst, 0.0);
}

TEST(OpGrad, DetachBlocksGradientVsFiniteDifference) {
  ParamStore<double> ps;
  Rng rng(5);
  ps.create("a", {4}, draws(rng, 4, 0.5, 1.5));
  auto loss = [&]() {
    auto a = ps.get("a");
    return slt::sum_all(slt::mul(slt::detach(a), a));
  };
  auto report = slt::grad_check<double>(loss, ps, 1e-6);
  // analytic gives a (detached factor frozen), FD gives 2a: the large
  // disagreement is exactly the evidence that detach cut the path.
  EXPECT_GT(report.worst, 0.1);
}
