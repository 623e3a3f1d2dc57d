"""Inference when class probabilities are observable.

Three producers of posterior sample sets over the subspace vector z:

* ``point_estimate``: minimize the cross-entropy loss with CMA-ES; a
  one-sample "posterior" (the usual tuned-prompt baseline).
* ``ensemble_tune``: independent CMA-ES runs from randomized initial mean
  and step size, pooled with uniform weights.
* ``gfvi_tune``: variational inference without gradients. A diagonal
  Gaussian q(z; mu, alpha) is fit by running CMA-ES over the stacked
  parameter vector (mu, log alpha), scoring each candidate by a Monte-Carlo
  estimate of the evidence lower bound.

All entry points take an integer seed and derive named substreams from it,
so parallel candidate evaluation cannot change results.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import cmaes
from .blackbox import LabeledSet
from .prompt_space import PriorSpec, sample_prior

PROB_FLOOR = 1e-12

POINT_ESTIMATE = "point_estimate"
ENSEMBLES = "ensembles"
VARIATIONAL_INFERENCE = "variational_inference"
REJECTION_ABC = "rejection_abc"
ABC_SMC = "abc_smc"
PROVENANCES = (POINT_ESTIMATE, ENSEMBLES, VARIATIONAL_INFERENCE,
               REJECTION_ABC, ABC_SMC)


@dataclass(frozen=True)
class EsConfig:
    """CMA-ES budget shared by the tuning methods (population 20 x 300 generations)."""

    population_size: int = 20
    max_generations: int = 300
    sigma0: float | None = None  # None: use the prior standard deviation

    def __post_init__(self):
        if self.population_size < 2:
            raise ValueError("population_size must be at least 2")
        if self.max_generations < 1:
            raise ValueError("max_generations must be at least 1")
        if self.sigma0 is not None and not self.sigma0 > 0:
            raise ValueError("sigma0 must be positive")


@dataclass
class PosteriorEnsemble:
    """Weighted sample set {(z_s, w_s)}: the universal output of every method."""

    samples: np.ndarray            # (size, subspace_dim)
    weights: np.ndarray            # (size,), nonnegative, sums to 1
    provenance: str
    diagnostics: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float)
        if len(self.samples) < 1 or len(self.samples) != len(self.weights):
            raise ValueError("need equally many samples and weights, at least one")
        if (self.weights < 0).any():
            raise ValueError("weights must be nonnegative")
        if abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError(f"weights sum to {self.weights.sum()}, expected 1")

    @property
    def size(self) -> int:
        return len(self.samples)


def save_ensemble(ensemble: PosteriorEnsemble, path) -> None:
    """Newline-delimited JSON, one record {index, weight, z} per sample."""
    with open(path, "w", encoding="utf-8") as fh:
        for i, (w, z) in enumerate(zip(ensemble.weights, ensemble.samples)):
            fh.write(json.dumps({"index": i, "weight": float(w),
                                 "z": [float(v) for v in z]}) + "\n")


def load_ensemble(path, provenance: str = "loaded") -> PosteriorEnsemble:
    samples, weights = [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            samples.append(record["z"])
            weights.append(record["weight"])
    return PosteriorEnsemble(np.asarray(samples), np.asarray(weights), provenance)


def negative_log_likelihood(sim, z: np.ndarray, dataset: LabeledSet) -> float:
    """Cross-entropy of the dataset under the simulator at z.

    Probabilities are floored at 1e-12 before the log so a confidently wrong
    simulator yields a large finite loss instead of -inf.
    """
    if len(dataset) == 0:
        return 0.0
    probs = sim.query_logits(z, dataset.X)
    picked = probs[np.arange(len(dataset)), dataset.y]
    return float(-np.log(np.maximum(picked, PROB_FLOOR)).sum())


def _resolved_sigma0(es: EsConfig, prior: PriorSpec) -> float:
    return es.sigma0 if es.sigma0 is not None else prior.sigma


def _single_cma_fit(sim, dataset: LabeledSet, prior: PriorSpec, es: EsConfig,
                    seed: int, trace_path: str | None = None) -> cmaes.MinimizeResult:
    """One CMA-ES run over z with mean and step size randomized from ``seed``."""
    init_rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,)))
    mean0 = sample_prior(prior, 1, init_rng)[0]
    sigma0 = _resolved_sigma0(es, prior) * init_rng.uniform(0.5, 1.5)
    cma_seed = int(init_rng.integers(2 ** 63))
    return cmaes.minimize(lambda z: negative_log_likelihood(sim, z, dataset),
                          mean0, sigma0, es.population_size, es.max_generations,
                          seed=cma_seed, trace_path=trace_path)


def point_estimate(sim, dataset: LabeledSet, prior: PriorSpec, es: EsConfig,
                   seed: int, trace_path: str | None = None) -> PosteriorEnsemble:
    """Single tuned prompt: the degenerate one-sample ensemble with weight 1."""
    result = _single_cma_fit(sim, dataset, prior, es, seed, trace_path)
    return PosteriorEnsemble(result.best_x[None, :], np.array([1.0]), POINT_ESTIMATE,
                             diagnostics={"final_nll": result.best_loss})


def ensemble_tune(sim, dataset: LabeledSet, prior: PriorSpec, es: EsConfig,
                  seeds: list[int], trace_path: str | None = None) -> PosteriorEnsemble:
    """Independent CMA-ES runs, one per seed, pooled with uniform weights."""
    if len(seeds) < 1:
        raise ValueError("need at least one seed")
    results = [_single_cma_fit(sim, dataset, prior, es, s, trace_path) for s in seeds]
    samples = np.array([r.best_x for r in results])
    size = len(seeds)
    losses = [r.best_loss for r in results]
    return PosteriorEnsemble(samples, np.full(size, 1.0 / size), ENSEMBLES,
                             diagnostics={"best_final_nll": float(min(losses)),
                                          "mean_final_nll": float(np.mean(losses))})


def derive_seeds(master_seed: int, count: int) -> list[int]:
    """Stable per-member seeds for an ensemble run."""
    rng = np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(1,)))
    return [int(s) for s in rng.integers(2 ** 63, size=count)]


@dataclass(frozen=True)
class VariationalParams:
    """Diagonal Gaussian q(z) = N(mu, diag(alpha)), parameterized by log variances."""

    mu: np.ndarray
    log_alpha: np.ndarray

    def __post_init__(self):
        if self.mu.shape != self.log_alpha.shape or self.mu.ndim != 1:
            raise ValueError("mu and log_alpha must be 1-D with equal length")
        if not np.isfinite(np.exp(self.log_alpha)).all():
            raise ValueError("variances overflow")

    @property
    def alpha(self) -> np.ndarray:
        return np.exp(self.log_alpha)

    @property
    def dim(self) -> int:
        return len(self.mu)


def kl_diag_gaussian_to_prior(params: VariationalParams, prior: PriorSpec) -> float:
    """Closed-form KL( N(mu, diag(alpha)) || N(0, sigma^2 I) )."""
    if params.dim != prior.dim:
        raise ValueError(f"params dim {params.dim} != prior dim {prior.dim}")
    var = prior.sigma ** 2
    alpha = params.alpha
    terms = alpha / var + params.mu ** 2 / var - 1.0 + np.log(var / alpha)
    return float(0.5 * terms.sum())


def elbo_estimate(params: VariationalParams, sim, dataset: LabeledSet,
                  prior: PriorSpec, mc_samples: int,
                  rng: np.random.Generator) -> float:
    """Monte-Carlo evidence lower bound.

    Averages the dataset log likelihood over ``mc_samples`` draws from q and
    subtracts the exact KL to the prior.
    """
    if mc_samples < 1:
        raise ValueError("mc_samples must be positive")
    draws = params.mu + np.sqrt(params.alpha) * rng.standard_normal(
        (mc_samples, params.dim))
    total = 0.0
    for z in draws:
        total += -negative_log_likelihood(sim, z, dataset)
    return total / mc_samples - kl_diag_gaussian_to_prior(params, prior)


def _decode_search_vector(u: np.ndarray, prior: PriorSpec) -> VariationalParams:
    """Search coordinates are prior-normalized: u = 0 decodes to q = prior.

    The first block scales to the mean in units of the prior sigma; the
    second block offsets log alpha from the prior's log variance, so every
    candidate decodes to strictly positive variances.
    """
    d = prior.dim
    mu = prior.sigma * u[:d]
    log_alpha = 2.0 * np.log(prior.sigma) + u[d:]
    return VariationalParams(mu, log_alpha)


def gfvi_tune(sim, dataset: LabeledSet, prior: PriorSpec, es: EsConfig,
              mc_samples: int = 10, sample_count: int = 100, seed: int = 0,
              search_step: float = 0.3,
              trace_path: str | None = None) -> PosteriorEnsemble:
    """Gradient-free variational inference.

    CMA-ES proposes stacked (mu, log alpha) vectors; each candidate is scored
    by -ELBO with a Monte-Carlo likelihood term. Candidate k of generation g
    draws from the substream (g * population + k), so evaluation order never
    affects results. Returns ``sample_count`` draws from the best variational
    distribution ever seen, uniformly weighted.
    """
    if sample_count < 1:
        raise ValueError("sample_count must be positive")
    d = prior.dim
    state = cmaes.es_init(np.zeros(2 * d), search_step, es.population_size,
                          seed=int(np.random.default_rng(
                              np.random.SeedSequence(seed, spawn_key=(0,))
                          ).integers(2 ** 63)))

    best_elbo = -np.inf
    best_params: VariationalParams | None = None
    trace_rows = []
    for gen in range(es.max_generations):
        candidates = cmaes.ask(state)
        for k, cand in enumerate(candidates):
            stream = np.random.default_rng(
                np.random.SeedSequence(seed, spawn_key=(1, gen * es.population_size + k)))
            params = _decode_search_vector(cand.x, prior)
            elbo = elbo_estimate(params, sim, dataset, prior, mc_samples, stream)
            cand.loss = -elbo
            if elbo > best_elbo:
                best_elbo = elbo
                best_params = params
        cmaes.tell(state, candidates)
        trace_rows.append((gen + 1, best_elbo))

    if trace_path is not None:
        cmaes._append_trace(trace_path, ["generation", "best_elbo"], trace_rows)

    assert best_params is not None
    final_rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2,)))
    draws = best_params.mu + np.sqrt(best_params.alpha) * final_rng.standard_normal(
        (sample_count, d))
    return PosteriorEnsemble(
        draws, np.full(sample_count, 1.0 / sample_count), VARIATIONAL_INFERENCE,
        diagnostics={"best_elbo": float(best_elbo),
                     "final_kl": kl_diag_gaussian_to_prior(best_params, prior)})
