"""Covariance Matrix Adaptation Evolution Strategy with an ask/tell interface.

Standard (mu/mu_w, lambda) strategy: rank-one plus rank-mu covariance updates
and cumulative step-size adaptation, with the usual default strategy
constants as functions of the dimension and population size. Recombination
uses the top half of the population with log-linear weights.

The state is single-owner: one coordinator calls ``ask`` and ``tell``.
Candidate evaluation in between is the caller's job, so inference code can
batch simulator queries however it likes; ``minimize`` is the convenience
loop for plain objectives.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from .errors import EvaluationError, NumericalBreakdownError

EIGENVALUE_FLOOR = 1e-20


@dataclass
class Candidate:
    """One proposed solution; the caller fills ``loss`` before tell."""

    x: np.ndarray
    loss: float | None = None


@dataclass
class SearchState:
    mean: np.ndarray        # distribution mean m_t
    step_size: float        # sigma_t
    cov: np.ndarray         # C_t, symmetric positive definite
    path_sigma: np.ndarray  # step-size evolution path
    path_cov: np.ndarray    # covariance evolution path
    generation: int
    population_size: int
    parents: int            # mu, number of recombination weights
    weights: np.ndarray     # (parents,), positive, sum to 1
    mu_eff: float
    c_sigma: float
    d_sigma: float
    c_cov_path: float       # c_c
    c_rank_one: float       # c_1
    c_rank_mu: float        # c_mu
    chi_n: float            # E||N(0, I_n)||
    rng: np.random.Generator

    @property
    def dim(self) -> int:
        return len(self.mean)


def es_init(mean0: np.ndarray, sigma0: float, population_size: int,
            seed: int) -> SearchState:
    """Fresh state: identity covariance, zero paths, Hansen-default constants."""
    mean0 = np.asarray(mean0, dtype=float)
    n = len(mean0)
    if not sigma0 > 0:
        raise ValueError("sigma0 must be positive")
    if population_size < 2:
        raise ValueError("population_size must be at least 2")

    lam = population_size
    mu = lam // 2
    raw = np.log((lam + 1) / 2.0) - np.log(np.arange(1, mu + 1))
    weights = raw / raw.sum()
    mu_eff = 1.0 / float(weights @ weights)

    c_sigma = (mu_eff + 2.0) / (n + mu_eff + 5.0)
    d_sigma = 1.0 + 2.0 * max(0.0, np.sqrt((mu_eff - 1.0) / (n + 1.0)) - 1.0) + c_sigma
    c_cov_path = (4.0 + mu_eff / n) / (n + 4.0 + 2.0 * mu_eff / n)
    c_rank_one = 2.0 / ((n + 1.3) ** 2 + mu_eff)
    c_rank_mu = min(1.0 - c_rank_one,
                    2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((n + 2.0) ** 2 + mu_eff))
    chi_n = np.sqrt(n) * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n ** 2))

    return SearchState(
        mean=mean0.copy(), step_size=float(sigma0), cov=np.eye(n),
        path_sigma=np.zeros(n), path_cov=np.zeros(n), generation=0,
        population_size=lam, parents=mu, weights=weights, mu_eff=mu_eff,
        c_sigma=c_sigma, d_sigma=d_sigma, c_cov_path=c_cov_path,
        c_rank_one=c_rank_one, c_rank_mu=c_rank_mu, chi_n=chi_n,
        rng=np.random.default_rng(seed))


def _decompose(cov: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition with the eigenvalue floor applied."""
    try:
        vals, vecs = np.linalg.eigh(cov)
    except np.linalg.LinAlgError as exc:
        raise NumericalBreakdownError(f"covariance decomposition failed: {exc}") from exc
    if not np.isfinite(vals).all():
        raise NumericalBreakdownError("covariance eigenvalues are non-finite")
    return np.maximum(vals, EIGENVALUE_FLOOR), vecs


def ask(state: SearchState) -> list[Candidate]:
    """Sample population_size candidates from N(mean, step_size^2 * cov)."""
    vals, vecs = _decompose(state.cov)
    sqrt_cov = vecs * np.sqrt(vals)
    noise = state.rng.standard_normal((state.population_size, state.dim))
    xs = state.mean + state.step_size * (noise @ sqrt_cov.T)
    return [Candidate(x=xs[i].copy()) for i in range(state.population_size)]


def tell(state: SearchState, candidates: list[Candidate]) -> SearchState:
    """Rank candidates by loss and apply the standard distribution updates."""
    if len(candidates) != state.population_size:
        raise EvaluationError(
            f"expected {state.population_size} candidates, got {len(candidates)}")
    for cand in candidates:
        if cand.loss is None or not np.isfinite(cand.loss):
            raise EvaluationError(f"candidate {cand.x} has invalid loss {cand.loss!r}")

    # Content-based tie-break keeps the update invariant to input order.
    ranked = sorted(candidates, key=lambda c: (c.loss, tuple(c.x)))
    selected = np.array([c.x for c in ranked[:state.parents]])

    n = state.dim
    old_mean = state.mean
    steps = (selected - old_mean) / state.step_size       # y_i
    step_w = state.weights @ steps                        # y_w

    state.mean = old_mean + state.step_size * step_w

    vals, vecs = _decompose(state.cov)
    inv_sqrt = (vecs / np.sqrt(vals)) @ vecs.T            # C^(-1/2)
    state.path_sigma = ((1.0 - state.c_sigma) * state.path_sigma
                        + np.sqrt(state.c_sigma * (2.0 - state.c_sigma) * state.mu_eff)
                        * (inv_sqrt @ step_w))

    norm_ps = float(np.linalg.norm(state.path_sigma))
    state.step_size *= float(np.exp(min(
        1.0, (state.c_sigma / state.d_sigma) * (norm_ps / state.chi_n - 1.0))))

    decay = 1.0 - (1.0 - state.c_sigma) ** (2 * (state.generation + 1))
    h_sig = 1.0 if norm_ps / np.sqrt(decay) < (1.4 + 2.0 / (n + 1.0)) * state.chi_n else 0.0
    state.path_cov = ((1.0 - state.c_cov_path) * state.path_cov
                      + h_sig * np.sqrt(state.c_cov_path * (2.0 - state.c_cov_path)
                                        * state.mu_eff) * step_w)

    rank_mu = (steps * state.weights[:, None]).T @ steps
    correction = (1.0 - h_sig) * state.c_cov_path * (2.0 - state.c_cov_path)
    cov = ((1.0 - state.c_rank_one - state.c_rank_mu) * state.cov
           + state.c_rank_one * (np.outer(state.path_cov, state.path_cov)
                                 + correction * state.cov)
           + state.c_rank_mu * rank_mu)
    cov = (cov + cov.T) / 2.0
    if np.linalg.eigvalsh(cov).min() < EIGENVALUE_FLOOR:
        vals, vecs = _decompose(cov)
        cov = (vecs * vals) @ vecs.T
        cov = (cov + cov.T) / 2.0
    state.cov = cov

    state.generation += 1
    return state


def _append_trace(path, header, rows) -> None:
    """Append trace rows, writing the header only when the file starts empty."""
    fresh = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if fresh:
            writer.writerow(header)
        writer.writerows(rows)


@dataclass
class MinimizeResult:
    best_x: np.ndarray
    best_loss: float
    history: list[float]   # best-so-far loss per generation, nonincreasing
    generations: int
    evaluations: int


def minimize(objective, mean0: np.ndarray, sigma0: float, population_size: int,
             max_generations: int, seed: int, target_loss: float | None = None,
             trace_path: str | None = None) -> MinimizeResult:
    """Ask/evaluate/tell loop over a plain vector-to-scalar objective."""
    if max_generations < 1:
        raise ValueError("max_generations must be at least 1")
    state = es_init(mean0, sigma0, population_size, seed)
    best_x = np.asarray(mean0, dtype=float).copy()
    best_loss = np.inf
    history: list[float] = []
    evaluations = 0
    trace_rows = []

    for _ in range(max_generations):
        candidates = ask(state)
        for cand in candidates:
            value = float(objective(cand.x))
            evaluations += 1
            if not np.isfinite(value):
                raise EvaluationError(
                    f"objective returned {value!r} at candidate {cand.x}")
            cand.loss = value
            if value < best_loss:
                best_loss = value
                best_x = cand.x.copy()
        tell(state, candidates)
        history.append(best_loss)
        trace_rows.append((state.generation, best_loss, state.step_size))
        if target_loss is not None and best_loss <= target_loss:
            break

    if trace_path is not None:
        _append_trace(trace_path, ["generation", "best_loss", "step_size"],
                      trace_rows)

    return MinimizeResult(best_x, float(best_loss), history,
                          generations=state.generation, evaluations=evaluations)
