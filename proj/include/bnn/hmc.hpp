#pragma once

#include <array>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "bnn/common.hpp"
#include "bnn/posterior.hpp"
#include "bnn/rng.hpp"

namespace bnn {

/// Anything HMC can sample from: a potential U and its gradient.
template <class T>
concept HmcTarget = requires(const T& t, const std::vector<double>& x) {
  { t.dim() } -> std::convertible_to<std::size_t>;
  { t.potential(x) } -> std::convertible_to<double>;
  { t.potential_with_grad(x) } -> std::convertible_to<PotentialResult>;
};

/// Quadratic kinetic energy with identity mass: K(m) = m'm / 2.
inline double kinetic_energy(std::span<const double> momentum) {
  double s = 0.0;
  for (double m : momentum) s += m * m;
  return 0.5 * s;
}

struct HmcConfig {
  double step_size = 1e-4;
  std::size_t leapfrog_steps = 50;
  std::size_t total_steps = 200000;
  std::size_t burn_in = 0;
  std::size_t thin_factor = 1000;
  std::uint64_t seed = 0;
  double divergence_threshold = 1000.0;  // reject when |dH| exceeds this
  std::size_t trace_stride = 1;          // auxiliary trace cadence

  void validate() const {
    require(step_size > 0.0, "step size must be positive");
    require(leapfrog_steps >= 1, "need at least one leapfrog step");
    require(thin_factor >= 1, "thin factor must be >= 1");
    require(total_steps >= 1, "need at least one step");
    require(burn_in < total_steps, "burn-in must be smaller than total steps");
    require(trace_stride >= 1, "trace stride must be >= 1");
  }
};

// ---------------------------------------------------------------------------
// Leapfrog integration
// ---------------------------------------------------------------------------

struct LeapfrogResult {
  std::vector<double> position;
  std::vector<double> momentum;
  bool diverged = false;
  std::size_t divergence_step = 0;  // leapfrog step index where state left R^d
};

/// Velocity-Verlet scheme: half momentum kick, full position drift, half
/// kick, iterated `steps` times. Volume preserving and time reversible;
/// running the result backwards with negated momentum recovers the start.
/// A non-finite state or gradient stops the trajectory and flags divergence.
template <class GradFn>
LeapfrogResult leapfrog(std::vector<double> position, std::vector<double> momentum,
                        double step_size, std::size_t steps, GradFn&& grad_of) {
  LeapfrogResult out;
  const std::size_t d = position.size();
  const double half = 0.5 * step_size;

  auto finite = [](const std::vector<double>& v) {
    for (double x : v)
      if (!std::isfinite(x)) return false;
    return true;
  };

  try {
    std::vector<double> grad = grad_of(position);
    for (std::size_t s = 0; s < steps; ++s) {
      for (std::size_t j = 0; j < d; ++j) momentum[j] -= half * grad[j];
      for (std::size_t j = 0; j < d; ++j) position[j] += step_size * momentum[j];
      if (!finite(position)) {
        out.diverged = true;
        out.divergence_step = s;
        return out;
      }
      grad = grad_of(position);
      if (!finite(grad)) {
        out.diverged = true;
        out.divergence_step = s;
        return out;
      }
      for (std::size_t j = 0; j < d; ++j) momentum[j] -= half * grad[j];
    }
  } catch (const NumericError&) {
    out.diverged = true;
    out.divergence_step = steps;
    return out;
  }

  out.position = std::move(position);
  out.momentum = std::move(momentum);
  return out;
}

// ---------------------------------------------------------------------------
// Single transition
// ---------------------------------------------------------------------------

/// Sampler state with the cached potential and gradient at the current point.
struct HmcState {
  std::vector<double> position;
  double potential = 0.0;
  std::vector<double> grad;
};

template <HmcTarget T>
HmcState make_hmc_state(const T& target, std::vector<double> position) {
  PotentialResult at = target.potential_with_grad(position);
  return HmcState{std::move(position), at.value, std::move(at.grad)};
}

struct HmcStepInfo {
  bool accepted = false;
  bool diverged = false;
  double delta_h = 0.0;
};

/// One HMC transition: fresh Gaussian momentum, a leapfrog trajectory, then
/// the Metropolis-Hastings test on the Hamiltonian difference. Divergent
/// trajectories count as rejections.
template <HmcTarget T>
HmcStepInfo hmc_step(HmcState& state, const T& target, const HmcConfig& config, Rng& rng) {
  const std::size_t d = state.position.size();
  std::vector<double> momentum(d);
  for (double& m : momentum) m = rng.normal();
  const double h0 = state.potential + kinetic_energy(momentum);

  // Trajectory with the gradient at the start cached in `state`.
  const double eps = config.step_size;
  const double half = 0.5 * eps;
  std::vector<double> pos = state.position;
  std::vector<double> mom = momentum;
  std::vector<double> grad = state.grad;
  double potential_end = 0.0;

  HmcStepInfo info;
  bool diverged = false;
  try {
    for (std::size_t s = 0; s < config.leapfrog_steps; ++s) {
      for (std::size_t j = 0; j < d; ++j) mom[j] -= half * grad[j];
      for (std::size_t j = 0; j < d; ++j) pos[j] += eps * mom[j];
      if (!all_finite(pos)) {
        diverged = true;
        break;
      }
      PotentialResult at = target.potential_with_grad(pos);
      grad = std::move(at.grad);
      potential_end = at.value;
      if (!std::isfinite(at.value) || !all_finite(grad)) {
        diverged = true;
        break;
      }
      for (std::size_t j = 0; j < d; ++j) mom[j] -= half * grad[j];
    }
  } catch (const NumericError&) {
    diverged = true;
  }

  if (!diverged) {
    const double h1 = potential_end + kinetic_energy(mom);
    info.delta_h = h1 - h0;
    if (!std::isfinite(info.delta_h) || std::abs(info.delta_h) > config.divergence_threshold)
      diverged = true;
  }

  if (diverged) {
    info.diverged = true;
    info.accepted = false;
    info.delta_h = std::numeric_limits<double>::infinity();
    rng.uniform();  // keep the stream aligned with the accept path
    return info;
  }

  const double u = rng.uniform();
  if (std::log(u) < -info.delta_h) {
    state.position = std::move(pos);
    state.potential = potential_end;
    state.grad = std::move(grad);
    info.accepted = true;
  }
  return info;
}

// ---------------------------------------------------------------------------
// Chains
// ---------------------------------------------------------------------------

/// Per-step scalar trace and the retained (post burn-in, thinned) samples.
struct Chain {
  HmcConfig config;
  std::uint64_t seed = 0;
  std::vector<std::vector<double>> samples;
  std::size_t accept_count = 0;
  std::size_t divergence_count = 0;
  std::size_t total_steps = 0;
  std::vector<double> potential_trace;  // U at every step
  std::vector<double> nll_trace;        // auxiliary trace (training NLL)
  std::vector<double> val_acc_trace;    // auxiliary trace (validation accuracy)

  double acceptance_rate() const {
    return total_steps == 0 ? 0.0
                            : static_cast<double>(accept_count) / static_cast<double>(total_steps);
  }
};

/// Optional per-step instrumentation: returns {train NLL, validation
/// accuracy} for the current position. Evaluated every `trace_stride` steps;
/// values are carried forward in between so the trace arrays stay per-step.
using ChainTraceFn = std::function<std::array<double, 2>(const std::vector<double>&)>;

/// Optional dataset-refresh hook invoked before every transition (data
/// augmentation). It must return a target that is exchangeable with the
/// original up to the augmentation noise; the cached state is re-evaluated
/// under the refreshed target so each MH test sees one consistent density.
template <HmcTarget T>
using TargetRefreshFn = std::function<T(const T&, Rng&)>;

template <HmcTarget T>
Chain run_chain(const T& target, const HmcConfig& config, std::vector<double> init, Rng& rng,
                const ChainTraceFn& trace_fn = {},
                const std::function<T(const T&, Rng&)>& refresh_fn = {}) {
  config.validate();
  require(init.size() == target.dim(), "init vector does not match target dimension");

  Chain chain;
  chain.config = config;
  chain.seed = config.seed;
  chain.total_steps = config.total_steps;
  const std::size_t retained = (config.total_steps - config.burn_in) / config.thin_factor;
  chain.samples.reserve(retained);
  chain.potential_trace.reserve(config.total_steps);

  T current_target = target;
  HmcState state = make_hmc_state(current_target, std::move(init));

  std::array<double, 2> aux{0.0, 0.0};
  for (std::size_t step = 1; step <= config.total_steps; ++step) {
    if (refresh_fn) {
      current_target = refresh_fn(current_target, rng);
      state = make_hmc_state(current_target, std::move(state.position));
    }
    HmcStepInfo info = hmc_step(state, current_target, config, rng);
    chain.accept_count += info.accepted ? 1 : 0;
    chain.divergence_count += info.diverged ? 1 : 0;

    chain.potential_trace.push_back(state.potential);
    if (trace_fn) {
      if ((step - 1) % config.trace_stride == 0) aux = trace_fn(state.position);
      chain.nll_trace.push_back(aux[0]);
      chain.val_acc_trace.push_back(aux[1]);
    }

    if (step > config.burn_in && (step - config.burn_in) % config.thin_factor == 0)
      chain.samples.push_back(state.position);
  }
  return chain;
}

// ---------------------------------------------------------------------------
// Gelman-Rubin diagnostic
// ---------------------------------------------------------------------------

/// Split-free potential scale reduction over two or more equal-length scalar
/// traces:
///
///   R = sqrt( ((n-1)/n * W + B/n) / W )
///
/// with W the mean within-chain variance and B = n * variance of the chain
/// means. Degenerate chains (W = 0) give 1 when the means agree and +inf
/// when they do not.
inline double gelman_rubin(const std::vector<std::vector<double>>& chains) {
  require(chains.size() >= 2, "Gelman-Rubin needs at least two chains");
  const std::size_t n = chains[0].size();
  require(n >= 2, "Gelman-Rubin needs chains of length >= 2");
  for (const auto& c : chains)
    require(c.size() == n, "Gelman-Rubin chains must have equal length");

  std::vector<double> means(chains.size());
  std::vector<double> vars(chains.size());
  for (std::size_t c = 0; c < chains.size(); ++c) {
    means[c] = mean_of(chains[c]);
    vars[c] = sample_variance(chains[c]);
  }
  const double w = mean_of(vars);
  const double b = static_cast<double>(n) * sample_variance(means);

  if (w == 0.0) {
    for (std::size_t c = 1; c < means.size(); ++c)
      if (means[c] != means[0]) return std::numeric_limits<double>::infinity();
    return 1.0;
  }
  const double nn = static_cast<double>(n);
  return std::sqrt(((nn - 1.0) / nn * w + b / nn) / w);
}

/// R-hat for each requested coordinate of the retained samples of >= 2 chains.
inline std::vector<double> gelman_rubin_per_param(
    const std::vector<const Chain*>& chains, std::span<const std::size_t> coords) {
  require(chains.size() >= 2, "need at least two chains");
  std::vector<double> out;
  out.reserve(coords.size());
  std::vector<std::vector<double>> traces(chains.size());
  for (std::size_t coord : coords) {
    for (std::size_t c = 0; c < chains.size(); ++c) {
      traces[c].clear();
      traces[c].reserve(chains[c]->samples.size());
      for (const auto& s : chains[c]->samples) traces[c].push_back(s[coord]);
    }
    out.push_back(gelman_rubin(traces));
  }
  return out;
}

/// Lag-1 autocorrelation of a scalar trace (thinning effectiveness checks).
inline double lag1_autocorr(std::span<const double> xs) {
  const std::size_t n = xs.size();
  if (n < 2) return 0.0;
  const double m = mean_of(xs);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    den += sq(xs[i] - m);
    if (i + 1 < n) num += (xs[i] - m) * (xs[i + 1] - m);
  }
  return den == 0.0 ? 0.0 : num / den;
}

}  // namespace bnn
