#include <cmath>

#include "doctest.h"
#include "srdd/autodiff.hpp"
#include "srdd/tensor.hpp"
#include "test_util.hpp"

using namespace srdd;
using namespace srdd::testutil;

namespace {

constexpr double kFdTol = 1e-3;

// Keeps values away from the kinks of relu/l1 so finite differences stay
// meaningful.
Tensor random_offset(Rng& rng, std::vector<int> shape) {
  Tensor t(std::move(shape));
  for (size_t i = 0; i < t.size(); ++i) {
    double v = rng.uniform(0.1, 1.0);
    t[i] = static_cast<float>(rng.uniform() < 0.5 ? -v : v);
  }
  return t;
}

// Values with pairwise gaps well above the finite-difference step, so
// max-pool argmax choices cannot flip during probing.
Tensor separated_values(Rng& rng, std::vector<int> shape) {
  Tensor t(std::move(shape));
  std::vector<int> order = rng.permutation(static_cast<int>(t.size()));
  for (size_t i = 0; i < t.size(); ++i) {
    t[i] = -1.0f + 2.0f * static_cast<float>(order[i]) / static_cast<float>(t.size());
  }
  return t;
}

}  // namespace

TEST_SUITE_BEGIN("autodiff");

TEST_CASE("linear case: loss = sum(w*x) gives grad w = x exactly") {
  Rng rng(20);
  Tensor w = random_tensor(rng, {3, 2, 2});
  Tensor x = random_tensor(rng, {3, 2, 2});
  ParamStore ps;
  Parameter& pw = ps.add("w", w);
  Graph g;
  Value loss = sum_all(g, mul(g, g.param(pw), g.constant(x)));
  GradientStore grads;
  g.backward(loss, grads);
  CHECK(grads.grad(pw).equals(x));
}

TEST_CASE("relu gradient mask") {
  ParamStore ps;
  Parameter& p = ps.add("x", Tensor({2, 1, 1}, {-1.0f, 2.0f}));
  Graph g;
  Value loss = sum_all(g, relu(g, g.param(p)));
  GradientStore grads;
  g.backward(loss, grads);
  CHECK(grads.grad(p)[0] == 0.0f);
  CHECK(grads.grad(p)[1] == 1.0f);
}

TEST_CASE("disconnected parameter receives a zero gradient entry") {
  Rng rng(21);
  ParamStore ps;
  Parameter& used = ps.add("used", random_tensor(rng, {2, 2, 2}));
  Parameter& unused = ps.add("unused", random_tensor(rng, {3}));
  Graph g;
  Value loss = sum_all(g, g.param(used));
  g.param(unused);  // bound but not connected to the loss
  GradientStore grads;
  g.backward(loss, grads);
  CHECK(grads.count() == 2);
  CHECK(grads.has(unused));
  for (size_t i = 0; i < 3; ++i) CHECK(grads.grad(unused)[i] == 0.0f);
}

TEST_CASE("backward rejects a non-scalar loss") {
  Rng rng(22);
  ParamStore ps;
  Parameter& p = ps.add("x", random_tensor(rng, {2, 2, 2}));
  Graph g;
  Value v = relu(g, g.param(p));
  GradientStore grads;
  CHECK(throws_with([&] { g.backward(v, grads); }, "scalar"));
}

TEST_CASE("finite differences: conv2d variants") {
  Rng rng(23);
  struct Cfg {
    int c_in, c_out, k, stride, pad, groups;
  };
  for (const Cfg& c : {Cfg{2, 3, 3, 1, 1, 1}, Cfg{4, 4, 2, 2, 0, 2}, Cfg{4, 4, 3, 1, 1, 4}}) {
    Tensor x = random_tensor(rng, {c.c_in, 5, 6});
    Tensor w = random_tensor(rng, {c.c_out, c.c_in / c.groups, c.k, c.k});
    Tensor b = random_tensor(rng, {c.c_out});
    auto build = [&](Graph& g, const std::vector<Value>& vs) {
      return conv2d(g, vs[0], vs[1], vs[2], c.stride, c.pad, c.groups);
    };
    auto rep = fd_check(build, {x, w, b});
    CHECK(rep.max_rel_error < kFdTol);
  }
}

TEST_CASE("finite differences: activations and softmax") {
  Rng rng(24);
  Tensor x = random_offset(rng, {3, 4, 4});
  CHECK(fd_check([](Graph& g, const std::vector<Value>& vs) { return relu(g, vs[0]); }, {x})
            .max_rel_error < kFdTol);
  CHECK(fd_check([](Graph& g, const std::vector<Value>& vs) { return tanh_act(g, vs[0]); }, {x})
            .max_rel_error < kFdTol);
  CHECK(fd_check(
            [](Graph& g, const std::vector<Value>& vs) { return softmax_channels(g, vs[0]); },
            {x})
            .max_rel_error < kFdTol);
}

TEST_CASE("finite differences: batch_norm train and eval") {
  Rng rng(25);
  Tensor x = random_tensor(rng, {3, 2, 3, 3}, -1.5f, 1.5f);
  Tensor gamma = random_tensor(rng, {2}, 0.5f, 1.5f);
  Tensor beta = random_tensor(rng, {2});
  for (bool train : {true, false}) {
    auto build = [&](Graph& g, const std::vector<Value>& vs) {
      // fresh running stats per evaluation so the train-mode update does not
      // leak across finite-difference probes
      Tensor rm({2});
      Tensor rv = Tensor::full({2}, 1.0f);
      rm[0] = 0.3f;
      rv[1] = 2.0f;
      return batch_norm(g, vs[0], vs[1], vs[2], rm, rv, 0.1f, 1e-5f, train);
    };
    auto rep = fd_check(build, {x, gamma, beta});
    CHECK(rep.max_rel_error < kFdTol);
  }
}

TEST_CASE("finite differences: shape and index ops") {
  Rng rng(26);
  Tensor x = random_tensor(rng, {8, 3, 4});

  CHECK(fd_check([](Graph& g, const std::vector<Value>& vs) { return pixel_shuffle(g, vs[0], 2); },
                 {x})
            .max_rel_error < kFdTol);
  CHECK(fd_check(
            [](Graph& g, const std::vector<Value>& vs) { return upsample_nearest(g, vs[0], 2); },
            {x})
            .max_rel_error < kFdTol);
  {
    Tensor xp = separated_values(rng, {2, 4, 4});
    CHECK(fd_check([](Graph& g, const std::vector<Value>& vs) { return maxpool2x2(g, vs[0]); },
                   {xp})
              .max_rel_error < kFdTol);
  }
  CHECK(fd_check(
            [](Graph& g, const std::vector<Value>& vs) { return crop2d(g, vs[0], 1, 1, 2, 2); },
            {x})
            .max_rel_error < kFdTol);
  CHECK(fd_check(
            [](Graph& g, const std::vector<Value>& vs) { return pad2d(g, vs[0], 1, 1, 2, 1); },
            {x})
            .max_rel_error < kFdTol);
  {
    Tensor frame = random_tensor(rng, {2, 5, 5});
    Tensor patch = random_tensor(rng, {2, 3, 3});
    CHECK(fd_check([](Graph& g, const std::vector<Value>& vs) {
                     return replace_region(g, vs[0], vs[1], 1, 1);
                   },
                   {frame, patch})
              .max_rel_error < kFdTol);
  }
  {
    std::vector<int> perm = {3, 0, 2, 1, 7, 5, 4, 6};
    CHECK(fd_check([&perm](Graph& g, const std::vector<Value>& vs) {
                     return permute_channels(g, vs[0], perm);
                   },
                   {x})
              .max_rel_error < kFdTol);
  }
  {
    Tensor code = random_tensor(rng, {5, 1, 1});
    CHECK(fd_check(
              [](Graph& g, const std::vector<Value>& vs) { return repeat_spatial(g, vs[0], 3, 4); },
              {code})
              .max_rel_error < kFdTol);
  }
  {
    Tensor one = random_tensor(rng, {1, 3, 2, 2});
    CHECK(fd_check(
              [](Graph& g, const std::vector<Value>& vs) { return broadcast_batch(g, vs[0], 4); },
              {one})
              .max_rel_error < kFdTol);
  }
  {
    Tensor a = random_tensor(rng, {3, 2, 2});
    Tensor b = random_tensor(rng, {2, 2, 2});
    CHECK(fd_check([](Graph& g, const std::vector<Value>& vs) {
                     return concat_channels(g, {vs[0], vs[1]});
                   },
                   {a, b})
              .max_rel_error < kFdTol);
  }
  CHECK(fd_check([](Graph& g, const std::vector<Value>& vs) { return sum_channels(g, vs[0]); },
                 {x})
            .max_rel_error < kFdTol);
  CHECK(fd_check([](Graph& g, const std::vector<Value>& vs) {
                   return reshape(g, vs[0], {4, 6, 1});
                 },
                 {Tensor(x)})
            .max_rel_error < kFdTol);
  {
    Tensor a = random_tensor(rng, {2, 3, 3});
    Tensor b = random_tensor(rng, {2, 3, 3});
    CHECK(fd_check([](Graph& g, const std::vector<Value>& vs) { return add(g, vs[0], vs[1]); },
                   {a, b})
              .max_rel_error < kFdTol);
    CHECK(fd_check([](Graph& g, const std::vector<Value>& vs) { return mul(g, vs[0], vs[1]); },
                   {a, b})
              .max_rel_error < kFdTol);
    CHECK(fd_check([](Graph& g, const std::vector<Value>& vs) { return scale(g, vs[0], -1.7f); },
                   {a})
              .max_rel_error < kFdTol);
  }
}

TEST_CASE("finite differences: weighted_atom_sum") {
  Rng rng(27);
  Tensor coeff = random_tensor(rng, {6, 3, 2}, 0.0f, 1.0f);
  Tensor atoms = random_tensor(rng, {6, 4, 4});
  auto build = [](Graph& g, const std::vector<Value>& vs) {
    return weighted_atom_sum(g, vs[0], vs[1], 4);
  };
  CHECK(fd_check(build, {coeff, atoms}).max_rel_error < kFdTol);
}

TEST_CASE("finite differences: l1 loss and its sign gradient") {
  Rng rng(28);
  Tensor pred = random_offset(rng, {2, 3, 3});
  Tensor gt = random_tensor(rng, {2, 3, 3}, 2.0f, 3.0f);  // keeps pred - gt away from zero
  auto build = [](Graph& g, const std::vector<Value>& vs) {
    return l1_loss(g, vs[0], vs[1]);
  };
  auto ref = [](const std::vector<Tensor>& xs) {
    double acc = 0.0;
    for (size_t i = 0; i < xs[0].size(); ++i) {
      acc += std::abs(static_cast<double>(xs[0][i]) - xs[1][i]);
    }
    return acc / static_cast<double>(xs[0].size());
  };
  CHECK(fd_check_scalar(build, ref, {pred, gt}).max_rel_error < kFdTol);

  ParamStore ps;
  Parameter& p = ps.add("pred", pred);
  Graph g;
  Value loss = l1_loss(g, g.param(p), g.constant(gt));
  GradientStore grads;
  g.backward(loss, grads);
  const float k = 1.0f / static_cast<float>(pred.size());
  for (size_t i = 0; i < pred.size(); ++i) {
    const float expect = pred[i] > gt[i] ? k : (pred[i] < gt[i] ? -k : 0.0f);
    CHECK(grads.grad(p)[i] == expect);
  }
}

TEST_CASE("composed conv-relu-conv graph matches finite differences") {
  Rng rng(29);
  Tensor x = random_tensor(rng, {2, 6, 6});
  Tensor w1 = random_tensor(rng, {4, 2, 3, 3}, -0.5f, 0.5f);
  Tensor b1 = random_tensor(rng, {4}, 0.25f, 0.75f);  // bias keeps relu inputs off the kink
  Tensor w2 = random_tensor(rng, {1, 4, 3, 3}, -0.5f, 0.5f);
  auto build = [](Graph& g, const std::vector<Value>& vs) {
    Value h1 = relu(g, conv2d(g, vs[0], vs[1], vs[2], 1, 1, 1));
    return conv2d(g, h1, vs[3], Value{}, 1, 1, 1);
  };
  CHECK(fd_check(build, {x, w1, b1, w2}).max_rel_error < kFdTol);
}

TEST_CASE("adam first step approximates lr * sign(grad)") {
  ParamStore ps;
  Parameter& p = ps.add("w", Tensor({1}, {0.5f}));
  AdamState st;
  Tensor grad({1}, {0.3f});
  adam_step(p, grad, st, 1e-2, 1);
  // With bias correction, step one moves by lr * g / (|g| + eps).
  const double expect = 0.5 - 1e-2 * 0.3 / (0.3 + 1e-8);
  CHECK(std::abs(p.value[0] - expect) < 1e-6);

  // hand-evaluated second step of the recurrence
  adam_step(p, grad, st, 1e-2, 2);
  double m = 0.0, v = 0.0;
  double w = 0.5;
  for (int t = 1; t <= 2; ++t) {
    m = 0.9 * m + 0.1 * 0.3;
    v = 0.999 * v + 0.001 * 0.09;
    const double mhat = m / (1.0 - std::pow(0.9, t));
    const double vhat = v / (1.0 - std::pow(0.999, t));
    w -= 1e-2 * mhat / (std::sqrt(vhat) + 1e-8);
  }
  CHECK(std::abs(p.value[0] - w) < 1e-6);
}

TEST_CASE("adam zero gradient leaves parameters unchanged") {
  ParamStore ps;
  Parameter& p = ps.add("w", Tensor({3}, {1.0f, -2.0f, 0.25f}));
  Tensor before = p.value;
  AdamState st;
  adam_step(p, Tensor({3}), st, 1e-2, 1);
  CHECK(p.value.equals(before));
}

TEST_CASE("adam runs are bitwise deterministic") {
  auto run = [] {
    Rng rng(31);
    ParamStore ps;
    Parameter& p = ps.add("w", random_tensor(rng, {4, 4}));
    AdamState st;
    for (int t = 1; t <= 10; ++t) {
      Tensor g = random_tensor(rng, {4, 4});
      adam_step(p, g, st, 3e-3, t);
    }
    return p.value;
  };
  CHECK(run().equals(run()));
}

TEST_SUITE_END();
