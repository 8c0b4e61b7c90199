#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <memory>
#include <numbers>

#include "bnn/posterior.hpp"
#include "helpers.hpp"

using namespace bnn;
using bnn::testing::central_diff;
using bnn::testing::rel_err;

namespace {

std::shared_ptr<ImageDataset> toy_data(std::size_t n, std::size_t side, std::uint64_t seed) {
  auto ds = std::make_shared<ImageDataset>();
  ds->height = ds->width = side;
  ds->num_classes = 2;
  ds->pixels.resize(n * side * side);
  ds->labels.resize(n);
  Rng rng(seed);
  for (double& v : ds->pixels) v = rng.normal();
  for (std::size_t i = 0; i < n; ++i) ds->labels[i] = static_cast<std::uint8_t>(i % 2);
  return ds;
}

NetworkSpec toy_spec(std::size_t side) {
  NetworkSpec spec;
  spec.input_h = spec.input_w = side;
  spec.layers = {Conv2d{1, 2, 3, 1}, Relu{}, MaxPool2d{2}, Flatten{},
                 Linear{static_cast<int>(2 * (side / 2) * (side / 2)), 6}, Relu{}, Linear{6, 2}};
  return spec;
}

}  // namespace

TEST_CASE("log prior at the mode") {
  const std::size_t d = 37;
  std::vector<double> zero(d, 0.0);
  CHECK(log_prior(zero, GaussianPrior{1.0}) ==
        Catch::Approx(-0.5 * d * std::log(2.0 * std::numbers::pi)).epsilon(1e-13));
  CHECK(log_prior(zero, LaplacePrior{1.0}) ==
        Catch::Approx(-static_cast<double>(d) * std::log(2.0)).epsilon(1e-13));
}

TEST_CASE("log prior single-coordinate density evaluation") {
  std::vector<double> theta = {0.1};
  // oracle: direct evaluation of the normal density
  const double sigma = 0.1;
  const double direct =
      std::log(1.0 / (sigma * std::sqrt(2.0 * std::numbers::pi)) *
               std::exp(-theta[0] * theta[0] / (2.0 * sigma * sigma)));
  CHECK(log_prior(theta, GaussianPrior{sigma}) == Catch::Approx(direct).epsilon(1e-12));
  CHECK(log_prior(theta, GaussianPrior{sigma}) ==
        Catch::Approx(-std::log(0.1 * std::sqrt(2.0 * std::numbers::pi)) - 0.5).epsilon(1e-12));
}

TEST_CASE("log prior is maximized at zero") {
  Rng rng(3);
  for (auto prior : {Prior{GaussianPrior{0.5}}, Prior{LaplacePrior{2.0}}}) {
    std::vector<double> zero(8, 0.0);
    const double at_zero = log_prior(zero, prior);
    for (int t = 0; t < 20; ++t) {
      std::vector<double> theta(8);
      for (double& v : theta) v = rng.normal();
      CHECK(log_prior(theta, prior) <= at_zero);
    }
  }
}

TEST_CASE("potential energy of the zero network") {
  auto spec = toy_spec(6);
  auto plan = make_plan(spec);
  auto data = toy_data(10, 6, 1);
  PosteriorTarget target(plan, GaussianPrior{1.0}, data);
  ParamVector zero = zeros_like(plan);

  const double d = static_cast<double>(plan.param_count);
  const double expect = 10.0 * std::log(2.0) + 0.5 * d * std::log(2.0 * std::numbers::pi);
  CHECK(target.potential_energy(zero) == Catch::Approx(expect).epsilon(1e-12));
}

TEST_CASE("potential energy decomposes into likelihood and prior terms") {
  auto spec = toy_spec(6);
  auto plan = make_plan(spec);
  auto data = toy_data(7, 6, 2);
  PosteriorTarget target(plan, GaussianPrior{0.3}, data);
  Rng rng(5);
  ParamVector theta = init_params(plan, rng);

  const double nll = dataset_nll(plan, theta, *data);
  const double lp = log_prior(theta, GaussianPrior{0.3});
  CHECK(target.potential_energy(theta) == Catch::Approx(nll - lp).epsilon(1e-13));
}

TEST_CASE("adding one datum shifts U by exactly its negative log-likelihood") {
  auto spec = toy_spec(6);
  auto plan = make_plan(spec);
  auto data = toy_data(9, 6, 8);
  auto smaller = std::make_shared<ImageDataset>(*data);
  // drop the last item
  smaller->labels.pop_back();
  smaller->pixels.resize(smaller->labels.size() * smaller->pixels_per_image());

  Rng rng(4);
  ParamVector theta = init_params(plan, rng);
  PosteriorTarget big(plan, LaplacePrior{1.5}, data);
  PosteriorTarget small(plan, LaplacePrior{1.5}, smaller);

  const std::size_t last[] = {data->size() - 1};
  const double last_nll = dataset_nll(plan, theta, *data, last);
  CHECK(big.potential_energy(theta) - small.potential_energy(theta) ==
        Catch::Approx(last_nll).epsilon(1e-12));
}

TEST_CASE("gradient of U matches central finite differences") {
  auto spec = toy_spec(4);
  auto plan = make_plan(spec);
  auto data = toy_data(6, 4, 3);

  for (auto prior : {Prior{GaussianPrior{0.7}}, Prior{LaplacePrior{1.2}}}) {
    PosteriorTarget target(plan, prior, data);
    Rng rng(6);
    ParamVector theta = init_params(plan, rng);
    auto res = target.potential_energy_grad(theta);
    CHECK(res.value == Catch::Approx(target.potential_energy(theta)).epsilon(1e-13));

    auto u_of = [&](const ParamVector& p) { return target.potential_energy(p); };
    std::vector<std::size_t> coords(plan.param_count);
    std::iota(coords.begin(), coords.end(), 0);
    Rng pick(9);
    pick.shuffle(coords.begin(), coords.end());
    std::size_t checked = 0;
    for (std::size_t c : coords) {
      if (checked >= 40) break;
      const double fd = central_diff(u_of, theta, c, 1e-6);
      if (std::abs(fd) < 1e-8 && std::abs(res.grad[c]) < 1e-8) continue;
      CHECK(rel_err(res.grad[c], fd) <= 1e-5);
      ++checked;
    }
    CHECK(checked >= 30);
  }
}

TEST_CASE("tempering scales the potential and its gradient") {
  auto spec = toy_spec(4);
  auto plan = make_plan(spec);
  auto data = toy_data(5, 4, 11);
  Rng rng(12);
  ParamVector theta = init_params(plan, rng);

  PosteriorTarget plain(plan, GaussianPrior{1.0}, data, Temperature{1.0});
  PosteriorTarget half(plan, GaussianPrior{1.0}, data, Temperature{0.5});
  PosteriorTarget cold(plan, GaussianPrior{1.0}, data, Temperature{0.01});

  const double u = plain.potential_energy(theta);
  CHECK(plain.tempered_potential(theta) == Catch::Approx(u).epsilon(1e-15));
  CHECK(half.tempered_potential(theta) == Catch::Approx(2.0 * u).epsilon(1e-13));
  CHECK(cold.tempered_potential(theta) == Catch::Approx(100.0 * u).epsilon(1e-13));

  // gradient scales identically, so the minimizer is temperature-invariant
  auto g1 = plain.tempered_potential_grad(theta);
  auto g2 = half.tempered_potential_grad(theta);
  for (std::size_t j = 0; j < g1.grad.size(); ++j)
    CHECK(g2.grad[j] == Catch::Approx(2.0 * g1.grad[j]).margin(1e-12));
}

TEST_CASE("invalid targets are rejected") {
  auto spec = toy_spec(4);
  auto plan = make_plan(spec);
  auto data = toy_data(4, 4, 1);
  CHECK_THROWS(PosteriorTarget(plan, GaussianPrior{-1.0}, data));
  CHECK_THROWS(PosteriorTarget(plan, GaussianPrior{1.0}, data, Temperature{0.0}));
  auto empty = std::make_shared<ImageDataset>();
  CHECK_THROWS(PosteriorTarget(plan, GaussianPrior{1.0}, empty));
}
