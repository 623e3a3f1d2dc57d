"""Subspace parameterization of prompts and the Gaussian prior over it.

A full prompt vector lives in R^prompt_dim but is only ever produced from a
low-dimensional vector z through a fixed random linear map,

    prompt = matrix @ z + anchor,

so every inference method works in R^subspace_dim. The projection matrix is
regenerated from its seed on demand and never serialized.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ProjectionSpec:
    """Fixed linear map from the search subspace to full prompt space."""

    subspace_dim: int
    prompt_dim: int
    matrix: np.ndarray   # (prompt_dim, subspace_dim)
    anchor: np.ndarray   # (prompt_dim,)
    seed: int

    def __post_init__(self):
        if self.matrix.shape != (self.prompt_dim, self.subspace_dim):
            raise ValueError(
                f"projection matrix shape {self.matrix.shape} does not match "
                f"({self.prompt_dim}, {self.subspace_dim})")
        if self.anchor.shape != (self.prompt_dim,):
            raise ValueError(f"anchor shape {self.anchor.shape} != ({self.prompt_dim},)")
        if not np.isfinite(self.matrix).all() or not np.isfinite(self.anchor).all():
            raise ValueError("projection contains non-finite entries")


def make_projection(subspace_dim: int, prompt_dim: int, seed: int,
                    anchor: np.ndarray | None = None,
                    entry_std: float | None = None) -> ProjectionSpec:
    """Generate the projection deterministically from ``seed``.

    Entries are i.i.d. normal with variance 1/subspace_dim (``entry_std``
    overrides), so the image of a unit vector has roughly unit norm. The
    anchor defaults to zero.
    """
    if subspace_dim < 1 or prompt_dim < 1 or subspace_dim > prompt_dim:
        raise ValueError(
            f"need 1 <= subspace_dim <= prompt_dim, got ({subspace_dim}, {prompt_dim})")
    std = entry_std if entry_std is not None else 1.0 / np.sqrt(subspace_dim)
    rng = np.random.default_rng(seed)
    matrix = rng.normal(0.0, std, size=(prompt_dim, subspace_dim))
    if anchor is None:
        anchor = np.zeros(prompt_dim)
    else:
        anchor = np.asarray(anchor, dtype=float)
    return ProjectionSpec(subspace_dim, prompt_dim, matrix, anchor, int(seed))


def project(spec: ProjectionSpec, z: np.ndarray) -> np.ndarray:
    """Map a subspace vector to the full prompt: matrix @ z + anchor."""
    z = np.asarray(z, dtype=float)
    if z.shape != (spec.subspace_dim,):
        raise ValueError(f"z has shape {z.shape}, expected ({spec.subspace_dim},)")
    return spec.matrix @ z + spec.anchor


def projection_to_dict(spec: ProjectionSpec) -> dict:
    """Serializable form: the matrix is regenerated from the seed, never stored."""
    return {
        "subspace_dim": spec.subspace_dim,
        "prompt_dim": spec.prompt_dim,
        "seed": spec.seed,
        "anchor": spec.anchor.tolist(),
    }


def projection_from_dict(payload: dict) -> ProjectionSpec:
    return make_projection(
        payload["subspace_dim"], payload["prompt_dim"], payload["seed"],
        anchor=np.asarray(payload["anchor"], dtype=float))


def save_projection(spec: ProjectionSpec, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(projection_to_dict(spec), fh)


def load_projection(path) -> ProjectionSpec:
    with open(path, encoding="utf-8") as fh:
        return projection_from_dict(json.load(fh))


@dataclass(frozen=True)
class PriorSpec:
    """Zero-mean isotropic Gaussian prior over the subspace.

    ``sigma`` is the standard deviation: the covariance is sigma^2 * I.
    """

    dim: int
    sigma: float

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("prior dimension must be positive")
        if not self.sigma > 0:
            raise ValueError("prior sigma must be positive")


def sample_prior(prior: PriorSpec, count: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``count`` i.i.d. prior vectors, shape (count, dim)."""
    if count < 0:
        raise ValueError("count must be nonnegative")
    return rng.normal(0.0, prior.sigma, size=(count, prior.dim))


def prior_log_density(prior: PriorSpec, z: np.ndarray) -> float:
    """Exact log density of N(0, sigma^2 I) at z."""
    z = np.asarray(z, dtype=float)
    if z.shape != (prior.dim,):
        raise ValueError(f"z has shape {z.shape}, expected ({prior.dim},)")
    d = prior.dim
    return float(-0.5 * d * np.log(2.0 * np.pi) - d * np.log(prior.sigma)
                 - 0.5 * float(z @ z) / prior.sigma ** 2)
