"""Likelihood-free inference over the prompt subspace.

Only discrete labels are observable here, so posterior mass is located by
comparing simulated labels against the observed ones with a plain error-rate
distance. Two methods:

* ``rejection_abc``: accept prior draws whose simulated labels land strictly
  inside the tolerance.
* ``abc_smc``: a sequential schedule. Iteration one is rejection sampling
  from the prior at a data-derived tolerance; each later iteration resamples
  a previous particle by weight, perturbs it with a diagonal Gaussian kernel,
  and keeps the proposal once its distance is within the current tolerance,
  which shrinks by 1/N per iteration until it hits zero. Weights are either
  importance ratios of prior to mixture proposal density (computed in log
  space) or forced uniform, the variant that sidesteps weight degeneracy.

Acceptance comparisons: rejection sampling (and iteration one) accepts on
distance < epsilon; SMC iterations accept on distance <= epsilon.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blackbox import LabeledSet
from .cmaes import _append_trace
from .errors import BudgetExhaustedError, DegenerateWeightsError, StagnationError
from .estimators import ABC_SMC, REJECTION_ABC, PosteriorEnsemble
from .prompt_space import PriorSpec, prior_log_density, sample_prior

WEIGHT_IMPORTANCE = "importance"
WEIGHT_UNIFORM = "uniform"


@dataclass(frozen=True)
class SmcConfig:
    particle_count: int = 100
    max_iterations: int = 10
    weight_scheme: str = WEIGHT_IMPORTANCE
    max_attempts_per_particle: int = 10_000
    variance_floor: float = 1e-8

    def __post_init__(self):
        if self.particle_count < 1 or self.max_iterations < 1:
            raise ValueError("particle_count and max_iterations must be positive")
        if self.max_attempts_per_particle < 1:
            raise ValueError("max_attempts_per_particle must be positive")
        if not self.variance_floor > 0:
            raise ValueError("variance_floor must be positive")
        if self.weight_scheme not in (WEIGHT_IMPORTANCE, WEIGHT_UNIFORM):
            raise ValueError(f"unknown weight scheme {self.weight_scheme!r}")


def distance_error_rate(predicted: np.ndarray, actual: np.ndarray) -> float:
    """Fraction of positions where the label lists disagree."""
    predicted = np.asarray(predicted)
    actual = np.asarray(actual)
    if predicted.shape != actual.shape or predicted.ndim != 1:
        raise ValueError("label lists must be 1-D with equal length")
    if len(predicted) == 0:
        raise ValueError("label lists must be nonempty")
    return float(np.mean(predicted != actual))


def initial_tolerance(sim, prior: PriorSpec, dataset: LabeledSet,
                      rng: np.random.Generator) -> float:
    """Error rate of a single arbitrary prior draw against the dataset labels."""
    z = sample_prior(prior, 1, rng)[0]
    return distance_error_rate(sim.query_labels(z, dataset.X), dataset.y)


def decay_tolerance(epsilon: float, n: int) -> float:
    """One schedule step: epsilon - 1/n, floored at zero."""
    if n < 1:
        raise ValueError("dataset size must be positive")
    return max(epsilon - 1.0 / n, 0.0)


def rejection_abc(sim, prior: PriorSpec, dataset: LabeledSet, epsilon: float,
                  count: int, max_draws: int, seed: int) -> PosteriorEnsemble:
    """Accept ``count`` prior draws with distance strictly below ``epsilon``."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must be in [0, 1]")
    if count < 1 or max_draws < 1:
        raise ValueError("count and max_draws must be positive")
    rng = np.random.default_rng(seed)
    accepted: list[np.ndarray] = []
    draws = 0
    while len(accepted) < count:
        if draws >= max_draws:
            raise BudgetExhaustedError(
                f"rejection sampling used all {max_draws} draws with "
                f"{len(accepted)}/{count} acceptances at epsilon {epsilon}",
                used=draws, limit=max_draws, accepted=len(accepted))
        z = sample_prior(prior, 1, rng)[0]
        draws += 1
        if distance_error_rate(sim.query_labels(z, dataset.X), dataset.y) < epsilon:
            accepted.append(z)
    return PosteriorEnsemble(
        np.array(accepted), np.full(count, 1.0 / count), REJECTION_ABC,
        diagnostics={"acceptance_rate": count / draws, "epsilon": float(epsilon),
                     "draws": float(draws)})


def _logsumexp(values: np.ndarray) -> float:
    top = values.max()
    if not np.isfinite(top):
        return float(top)
    return float(top + np.log(np.exp(values - top).sum()))


def _diag_gaussian_logpdf(x: np.ndarray, mean: np.ndarray,
                          variance: np.ndarray) -> float:
    resid = x - mean
    return float(-0.5 * np.sum(resid ** 2 / variance + np.log(2.0 * np.pi * variance)))


def update_weights(new_particles: np.ndarray, prev_particles: np.ndarray,
                   prev_weights: np.ndarray, kernel_variance: np.ndarray,
                   prior: PriorSpec) -> np.ndarray:
    """Importance weights: prior density over the resample-and-perturb mixture.

    Everything happens in log space; the naive product form underflows well
    before d = 20.
    """
    new_particles = np.atleast_2d(new_particles)
    prev_particles = np.atleast_2d(prev_particles)
    prev_weights = np.asarray(prev_weights, dtype=float)
    kernel_variance = np.asarray(kernel_variance, dtype=float)
    with np.errstate(divide="ignore"):
        log_prev_w = np.log(prev_weights)
    log_w = np.empty(len(new_particles))
    for s, z in enumerate(new_particles):
        log_mix = np.array([
            log_prev_w[j] + _diag_gaussian_logpdf(z, prev_particles[j], kernel_variance)
            for j in range(len(prev_particles))])
        log_w[s] = prior_log_density(prior, z) - _logsumexp(log_mix)
    top = log_w.max()
    if not np.isfinite(top):
        raise DegenerateWeightsError("all importance weights vanished or diverged")
    weights = np.exp(log_w - top)
    total = weights.sum()
    if not np.isfinite(total) or total <= 0:
        raise DegenerateWeightsError("importance weights cannot be normalized")
    return weights / total


def update_kernel_variance(particles: np.ndarray, weights: np.ndarray,
                           variance_floor: float) -> np.ndarray:
    """Per-coordinate weighted empirical variance, floored elementwise."""
    particles = np.atleast_2d(particles)
    weights = np.asarray(weights, dtype=float)
    mean = weights @ particles
    variance = weights @ (particles - mean) ** 2
    return np.maximum(variance, variance_floor)


def effective_sample_size(weights: np.ndarray) -> float:
    """Degeneracy diagnostic 1 / sum(w^2); equals the count iff weights are uniform."""
    weights = np.asarray(weights, dtype=float)
    if abs(weights.sum() - 1.0) > 1e-6:
        raise ValueError(f"weights sum to {weights.sum()}, expected 1")
    return float(1.0 / np.sum(weights ** 2))


def _slot_stream(seed: int, iteration: int, slot: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(iteration, slot)))


def abc_smc(sim, prior: PriorSpec, dataset: LabeledSet, config: SmcConfig,
            seed: int, trace_path: str | None = None) -> PosteriorEnsemble:
    """Sequential ABC with a 1/N tolerance decay. Uses only label queries."""
    n_data = len(dataset)
    size = config.particle_count
    budget_before = sim.budget.used
    trace_rows = []

    def simulate_distance(z, rng):
        labels = sim.query_labels(z, dataset.X, rng=rng)
        return distance_error_rate(labels, dataset.y)

    epsilon = initial_tolerance(sim, prior, dataset, _slot_stream(seed, 0, 0))
    epsilons = [epsilon]

    particles = np.empty((size, prior.dim))
    total_attempts = 0
    for s in range(size):
        stream = _slot_stream(seed, 1, s)
        for attempt in range(1, config.max_attempts_per_particle + 1):
            z = sample_prior(prior, 1, stream)[0]
            if simulate_distance(z, stream) < epsilon:
                particles[s] = z
                total_attempts += attempt
                break
        else:
            raise StagnationError(
                f"particle {s} found no prior draw with distance < {epsilon} in "
                f"{config.max_attempts_per_particle} attempts",
                iteration=1, epsilon=epsilon,
                attempts=config.max_attempts_per_particle)
    weights = np.full(size, 1.0 / size)
    kernel_variance = update_kernel_variance(particles, weights, config.variance_floor)
    trace_rows.append((1, epsilon, effective_sample_size(weights), total_attempts,
                       sim.budget.used - budget_before))

    iterations_run = 1
    for t in range(2, config.max_iterations + 1):
        next_epsilon = decay_tolerance(epsilon, n_data)
        if next_epsilon == 0.0:
            break
        epsilon = next_epsilon
        epsilons.append(epsilon)
        calls_before = sim.budget.used

        new_particles = np.empty_like(particles)
        iter_attempts = 0
        for s in range(size):
            stream = _slot_stream(seed, t, s)
            for attempt in range(1, config.max_attempts_per_particle + 1):
                pick = stream.choice(size, p=weights)
                z = particles[pick] + np.sqrt(kernel_variance) * stream.standard_normal(
                    prior.dim)
                if simulate_distance(z, stream) <= epsilon:
                    new_particles[s] = z
                    iter_attempts += attempt
                    break
            else:
                raise StagnationError(
                    f"particle {s} exceeded {config.max_attempts_per_particle} "
                    f"perturbation attempts at epsilon {epsilon} (iteration {t})",
                    iteration=t, epsilon=epsilon,
                    attempts=config.max_attempts_per_particle)

        if config.weight_scheme == WEIGHT_IMPORTANCE:
            new_weights = update_weights(new_particles, particles, weights,
                                         kernel_variance, prior)
        else:
            new_weights = np.full(size, 1.0 / size)
        particles, weights = new_particles, new_weights
        kernel_variance = update_kernel_variance(particles, weights,
                                                 config.variance_floor)
        total_attempts += iter_attempts
        iterations_run = t
        trace_rows.append((t, epsilon, effective_sample_size(weights), iter_attempts,
                           sim.budget.used - calls_before))

    if trace_path is not None:
        _append_trace(trace_path, ["iteration", "epsilon", "ess", "total_attempts",
                                   "simulator_calls"], trace_rows)

    return PosteriorEnsemble(
        particles, weights, ABC_SMC,
        diagnostics={"final_epsilon": float(epsilon),
                     "initial_epsilon": float(epsilons[0]),
                     "ess": effective_sample_size(weights),
                     "iterations": float(iterations_run),
                     "total_attempts": float(total_attempts),
                     "simulator_calls": float(sim.budget.used - budget_before)})
