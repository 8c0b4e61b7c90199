#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>

#include "bnn/network.hpp"
#include "helpers.hpp"

using namespace bnn;
using bnn::testing::central_diff;
using bnn::testing::rel_err;

namespace {

// Enumeration oracle: count conv parameters one by one.
std::size_t conv_param_enumeration(int in_ch, int out_ch, int kernel) {
  std::size_t n = 0;
  for (int oc = 0; oc < out_ch; ++oc) {
    for (int ic = 0; ic < in_ch; ++ic)
      for (int ky = 0; ky < kernel; ++ky)
        for (int kx = 0; kx < kernel; ++kx) ++n;
    ++n;  // bias
  }
  return n;
}

NetworkSpec tiny_linear_spec(int in, int out) {
  NetworkSpec spec;
  spec.input_h = 1;
  spec.input_w = in;
  spec.layers = {Flatten{}, Linear{in, out}};
  return spec;
}

}  // namespace

TEST_CASE("param_count matches the expanded LeNet total") {
  CHECK(param_count(build_lenet_expanded()) == 232444);
}

TEST_CASE("param_count on simple layers") {
  CHECK(param_count(tiny_linear_spec(2, 2)) == 6);

  NetworkSpec conv_spec;
  conv_spec.input_h = 8;
  conv_spec.input_w = 8;
  conv_spec.layers = {Conv2d{1, 6, 5, 0}, Flatten{}, Linear{6 * 4 * 4, 2}};
  const std::size_t conv_params = conv_param_enumeration(1, 6, 5);
  CHECK(conv_params == 156);
  CHECK(param_count(conv_spec) == conv_params + (6 * 4 * 4 * 2 + 2));
}

TEST_CASE("shape-inconsistent specs fail with a composition error") {
  NetworkSpec bad;
  bad.input_h = 8;
  bad.input_w = 8;
  bad.layers = {Conv2d{3, 6, 5, 0}, Flatten{}, Linear{10, 2}};  // wrong in_channels
  CHECK_THROWS_AS(param_count(bad), ShapeError);

  NetworkSpec bad2;
  bad2.input_h = 4;
  bad2.input_w = 4;
  bad2.layers = {Flatten{}, Linear{17, 2}};  // 16 features flattened
  CHECK_THROWS_AS(param_count(bad2), ShapeError);

  NetworkSpec no_head;
  no_head.input_h = 4;
  no_head.input_w = 4;
  no_head.layers = {Relu{}};
  CHECK_THROWS_AS(param_count(no_head), ShapeError);
}

TEST_CASE("forward of the zero network is zero") {
  auto spec = build_lenet_expanded();
  auto plan = make_plan(spec);
  ParamVector params = zeros_like(plan);
  Tensor batch({1, 1, 150, 150});
  Tensor logits = forward(plan, params, batch);
  REQUIRE(logits.shape == std::vector<std::size_t>{1, 2});
  CHECK(logits.data[0] == 0.0);
  CHECK(logits.data[1] == 0.0);
}

TEST_CASE("expanded LeNet has the published channel progression") {
  auto spec = build_lenet_expanded();
  std::vector<int> channels;
  for (const Layer& l : spec.layers)
    if (const auto* c = std::get_if<Conv2d>(&l)) channels.push_back(c->out_channels);
  CHECK(channels == std::vector<int>{6, 16, 26, 32});
}

TEST_CASE("single linear layer forward equals a hand matrix multiply") {
  auto spec = tiny_linear_spec(3, 2);
  auto plan = make_plan(spec);
  ParamVector params = zeros_like(plan);
  // weight rows: [1 2 3], [-1 0.5 4]; biases: 0.25, -2
  const std::vector<double> w = {1, 2, 3, -1, 0.5, 4};
  const std::vector<double> b = {0.25, -2};
  std::copy(w.begin(), w.end(), params.values.begin());
  std::copy(b.begin(), b.end(), params.values.begin() + 6);

  Tensor batch({1, 1, 1, 3}, {0.5, -1.0, 2.0});
  Tensor logits = forward(plan, params, batch);

  // oracle: explicit dot products
  const double y0 = 1 * 0.5 + 2 * -1.0 + 3 * 2.0 + 0.25;
  const double y1 = -1 * 0.5 + 0.5 * -1.0 + 4 * 2.0 - 2.0;
  CHECK(logits.data[0] == Catch::Approx(y0).epsilon(1e-14));
  CHECK(logits.data[1] == Catch::Approx(y1).epsilon(1e-14));
}

TEST_CASE("dropout with p=0 active equals dropout inactive") {
  NetworkSpec spec;
  spec.input_h = 2;
  spec.input_w = 2;
  spec.layers = {Flatten{}, Linear{4, 3}, Relu{}, Dropout{0.0}, Linear{3, 2}};
  auto plan = make_plan(spec);
  Rng init_rng(7);
  ParamVector params = init_params(plan, init_rng);
  Tensor batch({2, 1, 2, 2}, {0.1, -0.4, 0.9, 1.2, -0.3, 0.8, 0.0, 0.5});

  Tensor inactive = forward(plan, params, batch);
  Rng mask_rng(123);
  Tensor active = forward(plan, params, batch, &mask_rng);
  CHECK(inactive.data == active.data);
}

TEST_CASE("all-zero logits give per-item loss ln 2") {
  auto spec = tiny_linear_spec(4, 2);
  auto plan = make_plan(spec);
  ParamVector params = zeros_like(plan);
  Tensor batch({3, 1, 1, 4}, std::vector<double>(12, 1.0));
  std::vector<int> labels = {0, 1, 0};

  auto sum = loss_grad(plan, params, batch, labels, Reduction::Sum);
  CHECK(sum.loss == Catch::Approx(3.0 * std::log(2.0)).epsilon(1e-12));
  auto mean = loss_grad(plan, params, batch, labels, Reduction::Mean);
  CHECK(mean.loss == Catch::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("one-parameter logistic model has the analytic gradient") {
  // Logits (0, z) with z = w*x + b; class-1 probability sigmoid(z).
  auto spec = tiny_linear_spec(1, 2);
  auto plan = make_plan(spec);
  ParamVector params = zeros_like(plan);
  params.values[1] = 0.7;   // class-1 weight
  params.values[3] = -0.2;  // class-1 bias

  const double x = 1.3;
  const int y = 1;
  Tensor batch({1, 1, 1, 1}, {x});
  std::vector<int> labels = {y};
  auto got = loss_grad(plan, params, batch, labels, Reduction::Sum);

  const double z = 0.7 * x - 0.2;
  const double sig = 1.0 / (1.0 + std::exp(-z));
  // d(-log p_y)/dz = sigma(z) - y, times input for the weight coordinate
  CHECK(got.grad.values[1] == Catch::Approx((sig - 1.0) * x).epsilon(1e-12));
  CHECK(got.grad.values[3] == Catch::Approx(sig - 1.0).epsilon(1e-12));
  // class-0 row sees the mirrored gradient
  CHECK(got.grad.values[0] == Catch::Approx((1.0 - sig) * x).epsilon(1e-12));
}

TEST_CASE("gradient matches central finite differences on a random conv net") {
  NetworkSpec spec;
  spec.input_h = 9;
  spec.input_w = 9;
  spec.layers = {Conv2d{1, 3, 3, 1}, Relu{}, MaxPool2d{2},
                 Conv2d{3, 4, 3, 0}, Relu{},
                 Flatten{}, Linear{4 * 2 * 2, 8}, Relu{}, Linear{8, 2}};
  auto plan = make_plan(spec);
  Rng rng(42);
  ParamVector params = init_params(plan, rng);
  Tensor batch({4, 1, 9, 9});
  for (double& v : batch.data) v = rng.normal();
  std::vector<int> labels = {0, 1, 1, 0};

  auto analytic = loss_grad(plan, params, batch, labels, Reduction::Mean);
  auto loss_of = [&](const ParamVector& p) {
    detail::ForwardTrace unused;
    Tensor lg = forward(plan, p, batch);
    return softmax_xent(lg, labels, Reduction::Mean);
  };

  std::vector<std::size_t> coords(plan.param_count);
  std::iota(coords.begin(), coords.end(), 0);
  Rng pick(99);
  pick.shuffle(coords.begin(), coords.end());
  std::size_t checked = 0;
  for (std::size_t c : coords) {
    if (checked >= 100) break;
    const double fd = central_diff(loss_of, params, c, 1e-6);
    if (std::abs(fd) < 1e-8 && std::abs(analytic.grad.values[c]) < 1e-8) continue;
    CHECK(rel_err(analytic.grad.values[c], fd) <= 1e-5);
    ++checked;
  }
  CHECK(checked >= 100);
}

TEST_CASE("gradient check covers dropout with a fixed mask source") {
  NetworkSpec spec;
  spec.input_h = 3;
  spec.input_w = 3;
  spec.layers = {Flatten{}, Linear{9, 6}, Relu{}, Dropout{0.4}, Linear{6, 2}};
  auto plan = make_plan(spec);
  Rng rng(11);
  ParamVector params = init_params(plan, rng);
  Tensor batch({2, 1, 3, 3});
  for (double& v : batch.data) v = rng.normal();
  std::vector<int> labels = {1, 0};

  const std::uint64_t mask_seed = 2024;
  Rng g_rng(mask_seed);
  auto analytic = loss_grad(plan, params, batch, labels, Reduction::Sum, &g_rng);
  auto loss_of = [&](const ParamVector& p) {
    Rng fd_rng(mask_seed);  // identical mask realization every evaluation
    detail::ForwardTrace trace;
    Tensor lg = forward(plan, p, batch, &fd_rng, &trace);
    return softmax_xent(lg, labels, Reduction::Sum);
  };
  for (std::size_t c = 0; c < plan.param_count; ++c) {
    const double fd = central_diff(loss_of, params, c, 1e-6);
    if (std::abs(fd) < 1e-8 && std::abs(analytic.grad.values[c]) < 1e-8) continue;
    CHECK(rel_err(analytic.grad.values[c], fd) <= 1e-5);
  }
}

TEST_CASE("forward is linear in the final-layer weights") {
  NetworkSpec spec;
  spec.input_h = 4;
  spec.input_w = 4;
  spec.layers = {Conv2d{1, 2, 3, 1}, Relu{}, Flatten{}, Linear{2 * 4 * 4, 2}};
  auto plan = make_plan(spec);
  Rng rng(5);
  ParamVector params = init_params(plan, rng);
  // zero the head bias so doubling weights doubles logits exactly
  const LayerPlan& head = plan.layers[plan.last_linear];
  for (std::size_t j = 0; j < head.bias_count; ++j) params.values[head.bias_offset + j] = 0.0;

  Tensor batch({1, 1, 4, 4});
  for (double& v : batch.data) v = rng.uniform();
  Tensor once = forward(plan, params, batch);

  ParamVector doubled = params;
  for (std::size_t j = 0; j < head.weight_count; ++j)
    doubled.values[head.weight_offset + j] *= 2.0;
  Tensor twice = forward(plan, doubled, batch);

  for (std::size_t i = 0; i < once.numel(); ++i)
    CHECK(twice.data[i] == Catch::Approx(2.0 * once.data[i]).epsilon(1e-12));
}

TEST_CASE("stochastic dropout forward is unbiased for a linear head") {
  // Dropout feeding a linear layer: the mask expectation passes through.
  NetworkSpec spec;
  spec.input_h = 2;
  spec.input_w = 2;
  spec.layers = {Flatten{}, Linear{4, 8}, Relu{}, Dropout{0.5}, Linear{8, 2}};
  auto plan = make_plan(spec);
  Rng rng(3);
  ParamVector params = init_params(plan, rng);
  Tensor batch({1, 1, 2, 2}, {0.7, -0.2, 1.1, 0.4});

  Tensor expected = forward(plan, params, batch);

  const int n = 20000;
  Rng mask_rng(77);
  std::vector<double> sum(2, 0.0), sumsq(2, 0.0);
  for (int i = 0; i < n; ++i) {
    Tensor draw = forward(plan, params, batch, &mask_rng);
    for (std::size_t k = 0; k < 2; ++k) {
      sum[k] += draw.data[k];
      sumsq[k] += draw.data[k] * draw.data[k];
    }
  }
  for (std::size_t k = 0; k < 2; ++k) {
    const double mc_mean = sum[k] / n;
    const double mc_var = sumsq[k] / n - mc_mean * mc_mean;
    const double se = std::sqrt(mc_var / n);
    CHECK(std::abs(mc_mean - expected.data[k]) <= 3.0 * se + 1e-12);
  }
}

TEST_CASE("identical seeds give bit-identical forward and gradient") {
  NetworkSpec spec;
  spec.input_h = 5;
  spec.input_w = 5;
  spec.layers = {Conv2d{1, 2, 3, 0}, Relu{}, Flatten{}, Linear{2 * 3 * 3, 4}, Relu{},
                 Dropout{0.3}, Linear{4, 2}};
  auto plan = make_plan(spec);
  Rng init1(8), init2(8);
  ParamVector p1 = init_params(plan, init1);
  ParamVector p2 = init_params(plan, init2);
  REQUIRE(p1.values == p2.values);

  Tensor batch({2, 1, 5, 5});
  Rng data_rng(21);
  for (double& v : batch.data) v = data_rng.normal();
  std::vector<int> labels = {0, 1};

  Rng m1(55), m2(55);
  auto g1 = loss_grad(plan, p1, batch, labels, Reduction::Sum, &m1);
  auto g2 = loss_grad(plan, p2, batch, labels, Reduction::Sum, &m2);
  CHECK(g1.loss == g2.loss);
  CHECK(g1.grad.values == g2.grad.values);
}

TEST_CASE("non-finite activations are reported") {
  auto spec = tiny_linear_spec(2, 2);
  auto plan = make_plan(spec);
  ParamVector params = zeros_like(plan);
  params.values[0] = std::numeric_limits<double>::infinity();
  Tensor batch({1, 1, 1, 2}, {1.0, 1.0});
  CHECK_THROWS_AS(forward(plan, params, batch), NumericError);
}

TEST_CASE("batch shape mismatches are rejected") {
  auto spec = tiny_linear_spec(4, 2);
  auto plan = make_plan(spec);
  ParamVector params = zeros_like(plan);
  Tensor batch({1, 1, 2, 2});  // right numel, wrong H x W
  CHECK_THROWS_AS(forward(plan, params, batch), ShapeError);
}
