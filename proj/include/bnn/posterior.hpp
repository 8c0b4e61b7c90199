#pragma once

#include <cmath>
#include <memory>
#include <numbers>
#include <variant>
#include <vector>

#include "bnn/common.hpp"
#include "bnn/dataset.hpp"
#include "bnn/network.hpp"

namespace bnn {

// ---------------------------------------------------------------------------
// Priors (i.i.d. over every parameter, normalizing constants included)
// ---------------------------------------------------------------------------

struct GaussianPrior {
  double stddev = 1.0;
};

struct LaplacePrior {
  double scale = 1.0;
};

using Prior = std::variant<GaussianPrior, LaplacePrior>;

inline void validate(const Prior& prior) {
  if (const auto* g = std::get_if<GaussianPrior>(&prior))
    require(g->stddev > 0.0, "Gaussian prior needs stddev > 0");
  else if (const auto* l = std::get_if<LaplacePrior>(&prior))
    require(l->scale > 0.0, "Laplace prior needs scale > 0");
}

inline double log_prior(std::span<const double> params, const Prior& prior) {
  if (const auto* g = std::get_if<GaussianPrior>(&prior)) {
    const double inv2v = 1.0 / (2.0 * g->stddev * g->stddev);
    double ss = 0.0;
    for (double t : params) ss += t * t;
    const double d = static_cast<double>(params.size());
    return -d * std::log(g->stddev * std::sqrt(2.0 * std::numbers::pi)) - ss * inv2v;
  }
  const auto& l = std::get<LaplacePrior>(prior);
  double s1 = 0.0;
  for (double t : params) s1 += std::abs(t);
  const double d = static_cast<double>(params.size());
  return -d * std::log(2.0 * l.scale) - s1 / l.scale;
}

inline double log_prior(const ParamVector& params, const Prior& prior) {
  return log_prior(params.view(), prior);
}

/// grad[j] += coeff * d(log prior)/d(theta_j)
inline void accumulate_log_prior_grad(std::span<const double> params, const Prior& prior,
                                      std::span<double> grad, double coeff = 1.0) {
  if (const auto* g = std::get_if<GaussianPrior>(&prior)) {
    const double invv = 1.0 / (g->stddev * g->stddev);
    for (std::size_t j = 0; j < params.size(); ++j) grad[j] += coeff * (-params[j] * invv);
    return;
  }
  const auto& l = std::get<LaplacePrior>(prior);
  const double invb = 1.0 / l.scale;
  for (std::size_t j = 0; j < params.size(); ++j) {
    const double s = params[j] > 0.0 ? 1.0 : (params[j] < 0.0 ? -1.0 : 0.0);
    grad[j] += coeff * (-s * invb);
  }
}

// ---------------------------------------------------------------------------
// Dataset likelihood (full-set or index-subset, chunked evaluation)
// ---------------------------------------------------------------------------

namespace detail {

inline std::size_t trace_doubles_per_image(const Plan& plan) {
  std::size_t n = plan.spec.input_channels * plan.spec.input_h * plan.spec.input_w;
  for (const LayerPlan& lp : plan.layers) n += 2 * lp.out.numel();
  return n;
}

/// Batch size that keeps the reverse-pass trace near ~32 MB.
inline std::size_t likelihood_chunk(const Plan& plan) {
  const std::size_t per_image = trace_doubles_per_image(plan) * sizeof(double);
  const std::size_t budget = 32ull << 20;
  return std::max<std::size_t>(1, std::min<std::size_t>(256, budget / std::max<std::size_t>(per_image, 1)));
}

inline std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  return idx;
}

}  // namespace detail

/// Negative log-likelihood summed over the given items.
inline double dataset_nll(const Plan& plan, const ParamVector& params, const ImageDataset& ds,
                          std::span<const std::size_t> indices, Rng* dropout_rng = nullptr) {
  const std::size_t chunk = detail::likelihood_chunk(plan);
  double total = 0.0;
  for (std::size_t at = 0; at < indices.size(); at += chunk) {
    const std::size_t n = std::min(chunk, indices.size() - at);
    const auto part = indices.subspan(at, n);
    Tensor batch = ds.batch(part);
    std::vector<int> labels = ds.label_batch(part);
    Tensor logits = forward(plan, params, batch, dropout_rng);
    total += softmax_xent(logits, labels, Reduction::Sum);
  }
  return total;
}

inline double dataset_nll(const Plan& plan, const ParamVector& params, const ImageDataset& ds) {
  const auto idx = detail::all_indices(ds.size());
  return dataset_nll(plan, params, ds, idx);
}

/// Negative log-likelihood and its parameter gradient, summed over items.
inline LossGradResult dataset_nll_grad(const Plan& plan, const ParamVector& params,
                                       const ImageDataset& ds,
                                       std::span<const std::size_t> indices,
                                       Rng* dropout_rng = nullptr) {
  const std::size_t chunk = detail::likelihood_chunk(plan);
  LossGradResult total;
  total.grad = zeros_like(plan);
  for (std::size_t at = 0; at < indices.size(); at += chunk) {
    const std::size_t n = std::min(chunk, indices.size() - at);
    const auto part = indices.subspan(at, n);
    Tensor batch = ds.batch(part);
    std::vector<int> labels = ds.label_batch(part);
    auto res = loss_grad(plan, params, batch, labels, Reduction::Sum, dropout_rng);
    total.loss += res.loss;
    for (std::size_t j = 0; j < plan.param_count; ++j)
      total.grad.values[j] += res.grad.values[j];
  }
  return total;
}

inline LossGradResult dataset_nll_grad(const Plan& plan, const ParamVector& params,
                                       const ImageDataset& ds, Rng* dropout_rng = nullptr) {
  const auto idx = detail::all_indices(ds.size());
  return dataset_nll_grad(plan, params, ds, idx, dropout_rng);
}

// ---------------------------------------------------------------------------
// Posterior target
// ---------------------------------------------------------------------------

struct Temperature {
  double value = 1.0;
};

struct PotentialResult {
  double value = 0.0;
  std::vector<double> grad;
};

/// The shared target density: U(theta) = -log p(D|theta) - log p(theta),
/// optionally tempered by 1/T (the joint form: likelihood and prior both
/// scaled). All inference methods evaluate the posterior through this type.
class PosteriorTarget {
 public:
  PosteriorTarget(Plan plan, Prior prior, std::shared_ptr<const ImageDataset> train,
                  Temperature temperature = {1.0})
      : plan_(std::move(plan)),
        prior_(prior),
        train_(std::move(train)),
        temperature_(temperature) {
    validate(prior_);
    require(train_ != nullptr && train_->size() > 0, "posterior target needs a non-empty dataset");
    require(temperature_.value > 0.0, "temperature must be positive");
  }

  const Plan& plan() const { return plan_; }
  const Prior& prior() const { return prior_; }
  const ImageDataset& train() const { return *train_; }
  double temperature() const { return temperature_.value; }
  std::size_t dim() const { return plan_.param_count; }

  /// Same target over a replacement dataset (used by per-proposal
  /// augmentation); plan, prior and temperature carry over.
  PosteriorTarget with_dataset(std::shared_ptr<const ImageDataset> ds) const {
    return PosteriorTarget(plan_, prior_, std::move(ds), temperature_);
  }

  /// Untempered potential energy U(theta).
  double potential_energy(const ParamVector& params) const {
    const double nll = dataset_nll(plan_, params, *train_);
    const double value = nll - log_prior(params, prior_);
    check_finite(value, "potential energy");
    return value;
  }

  PotentialResult potential_energy_grad(const ParamVector& params) const {
    auto nll = dataset_nll_grad(plan_, params, *train_);
    PotentialResult out;
    out.value = nll.loss - log_prior(params, prior_);
    check_finite(out.value, "potential energy");
    out.grad = std::move(nll.grad.values);
    accumulate_log_prior_grad(params.view(), prior_, out.grad, -1.0);
    return out;
  }

  /// U(theta) / T; T = 1 recovers the untempered posterior.
  double tempered_potential(const ParamVector& params) const {
    return potential_energy(params) / temperature_.value;
  }

  PotentialResult tempered_potential_grad(const ParamVector& params) const {
    PotentialResult out = potential_energy_grad(params);
    const double inv_t = 1.0 / temperature_.value;
    out.value *= inv_t;
    for (double& g : out.grad) g *= inv_t;
    return out;
  }

  // HMC target interface: the sampled density is the tempered posterior.
  double potential(const std::vector<double>& x) const {
    return tempered_potential(ParamVector{x});
  }
  PotentialResult potential_with_grad(const std::vector<double>& x) const {
    return tempered_potential_grad(ParamVector{x});
  }

 private:
  Plan plan_;
  Prior prior_;
  std::shared_ptr<const ImageDataset> train_;
  Temperature temperature_;
};

}  // namespace bnn
