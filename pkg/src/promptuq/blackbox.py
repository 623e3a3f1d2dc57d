"""The black-box classifier stand-in and its query interface.

The simulator is the only thing inference code is allowed to touch: it maps a
subspace vector z plus a batch of feature vectors to class probabilities
(logits mode) or discrete labels (labels mode), enforces the access policy,
and charges every (z, input) pair against an evaluation budget.

The built-in classifier is a frozen two-layer tanh network. The full prompt
enters through a linear pooling down to a few dimensions, concatenated with
the input features; the pooling is scaled so the pooled values are O(1) when
z is drawn from the task prior, which keeps the loss landscape smooth.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import AccessDeniedError, BudgetExhaustedError
from .prompt_space import PriorSpec, ProjectionSpec, make_projection, project, sample_prior

MODE_LOGITS = "logits"
MODE_LABELS = "labels"
DECODE_ARGMAX = "argmax"
DECODE_SAMPLE = "sample"


@dataclass
class EvalBudget:
    """Monotone counter of simulator forward passes, one per (z, input) pair."""

    used: int = 0
    limit: int | None = None
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def charge(self, count: int) -> None:
        with self._lock:
            if self.limit is not None and self.used + count > self.limit:
                raise BudgetExhaustedError(
                    f"evaluation budget exhausted: {self.used} used + {count} requested "
                    f"> limit {self.limit}", used=self.used, limit=self.limit)
            self.used += count


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    expd = np.exp(shifted)
    return expd / expd.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class FrozenClassifier:
    """Fixed-weight two-layer network: logits = w2 @ tanh(w1 @ [x; pool @ prompt] + b1) + b2."""

    w1: np.ndarray    # (hidden, feature_dim + pooled_dim)
    b1: np.ndarray    # (hidden,)
    w2: np.ndarray    # (classes, hidden)
    b2: np.ndarray    # (classes,)
    pool: np.ndarray  # (pooled_dim, prompt_dim)
    classes: int
    seed: int

    def __post_init__(self):
        for name in ("w1", "b1", "w2", "b2", "pool"):
            if not np.isfinite(getattr(self, name)).all():
                raise ValueError(f"classifier weight {name} contains non-finite entries")

    @property
    def feature_dim(self) -> int:
        return self.w1.shape[1] - self.pool.shape[0]

    @property
    def prompt_dim(self) -> int:
        return self.pool.shape[1]

    @classmethod
    def create(cls, feature_dim: int, prompt_dim: int, classes: int, hidden: int,
               seed: int, pooled_dim: int | None = None,
               prompt_scale: float = 1.0,
               prompt_gain: float = 3.0) -> "FrozenClassifier":
        """Draw weights deterministically from ``seed``.

        ``prompt_scale`` is the expected standard deviation of full-prompt
        entries under the task prior; the pooling map is shrunk by it so the
        pooled prompt is O(1) regardless of the prior scale. ``prompt_gain``
        amplifies the pooled block's first-layer weights so a random prompt
        relabels data near chance level rather than leaving the labeling
        input-dominated.
        """
        if classes < 2:
            raise ValueError("need at least two classes")
        if min(feature_dim, prompt_dim, hidden) < 1:
            raise ValueError("dimensions must be positive")
        if pooled_dim is None:
            pooled_dim = min(prompt_dim, 8)
        rng = np.random.default_rng(seed)
        w1 = rng.normal(0.0, 1.5 / np.sqrt(feature_dim + pooled_dim),
                        size=(hidden, feature_dim + pooled_dim))
        w1[:, feature_dim:] *= prompt_gain
        b1 = rng.normal(0.0, 0.2, size=hidden)
        w2 = rng.normal(0.0, 2.0 / np.sqrt(hidden), size=(classes, hidden))
        b2 = rng.normal(0.0, 0.1, size=classes)
        pool = rng.normal(0.0, 1.0 / (np.sqrt(prompt_dim) * prompt_scale),
                          size=(pooled_dim, prompt_dim))
        return cls(w1, b1, w2, b2, pool, classes, int(seed))

    def logits(self, prompt: np.ndarray, inputs: np.ndarray) -> np.ndarray:
        pooled = self.pool @ prompt
        batch = np.hstack([inputs, np.broadcast_to(pooled, (len(inputs), len(pooled)))])
        hidden = np.tanh(batch @ self.w1.T + self.b1)
        return hidden @ self.w2.T + self.b2


def sample_labels_from_seed(probs: np.ndarray, seed: int) -> np.ndarray:
    """Categorical draws, one row each, from a stream derived only from ``seed``.

    Pinning the stream to an explicit integer seed keeps in-process and
    remote (protocol-served) sampling bit-identical: both sides draw from
    default_rng(seed).
    """
    rng = np.random.default_rng(np.uint64(seed))
    u = rng.random(len(probs))
    cdf = np.cumsum(probs, axis=1)
    cdf[:, -1] = 1.0
    return np.asarray((u[:, None] > cdf).sum(axis=1), dtype=np.int64)


def draw_decode_seed(rng: np.random.Generator) -> int:
    """The u64 seed a caller attaches to one sample-decoded query."""
    return int(rng.integers(0, 2 ** 64, dtype=np.uint64))


class SyntheticSimulator:
    """Query handle binding a frozen classifier to a projection.

    Immutable except for the budget counter, so concurrent readers are safe.
    ``logit_hook`` is a test-only escape hatch applied to raw logits before
    decoding; production code never sets it.
    """

    def __init__(self, classifier: FrozenClassifier, projection: ProjectionSpec,
                 allow_logits: bool = True, budget: EvalBudget | None = None,
                 logit_hook=None):
        if projection.prompt_dim != classifier.prompt_dim:
            raise ValueError(
                f"projection prompt_dim {projection.prompt_dim} != classifier "
                f"prompt_dim {classifier.prompt_dim}")
        self.classifier = classifier
        self.projection = projection
        self.allow_logits = allow_logits
        self.budget = budget if budget is not None else EvalBudget()
        self.logit_hook = logit_hook

    @property
    def classes(self) -> int:
        return self.classifier.classes

    @property
    def feature_dim(self) -> int:
        return self.classifier.feature_dim

    @property
    def subspace_dim(self) -> int:
        return self.projection.subspace_dim

    @property
    def prompt_dim(self) -> int:
        return self.projection.prompt_dim

    def _raw_logits(self, z: np.ndarray, inputs: np.ndarray) -> np.ndarray:
        inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
        if inputs.shape[1] != self.feature_dim:
            raise ValueError(
                f"inputs have {inputs.shape[1]} features, expected {self.feature_dim}")
        self.budget.charge(len(inputs))
        logits = self.classifier.logits(project(self.projection, z), inputs)
        if self.logit_hook is not None:
            logits = self.logit_hook(logits)
        return logits

    def query_logits(self, z: np.ndarray, inputs: np.ndarray) -> np.ndarray:
        """Class probability vector per input, shape (n, classes)."""
        if not self.allow_logits:
            raise AccessDeniedError("simulator is labels-only; probabilities are hidden")
        return softmax(self._raw_logits(z, inputs))

    def query_labels(self, z: np.ndarray, inputs: np.ndarray,
                     decode: str = DECODE_ARGMAX,
                     rng: np.random.Generator | None = None) -> np.ndarray:
        """Discrete label per input. Argmax decode breaks ties toward the lowest index."""
        if decode == DECODE_ARGMAX:
            return np.argmax(self._raw_logits(z, inputs), axis=1)
        if decode == DECODE_SAMPLE:
            if rng is None:
                raise ValueError("sample decode requires an rng")
            return self.sampled_labels(z, inputs, draw_decode_seed(rng))
        raise ValueError(f"unknown decode {decode!r}")

    def sampled_labels(self, z: np.ndarray, inputs: np.ndarray, seed: int) -> np.ndarray:
        """Sample decode driven by an explicit u64 seed; the protocol server path."""
        return sample_labels_from_seed(softmax(self._raw_logits(z, inputs)), seed)


@dataclass(frozen=True)
class LabeledSet:
    """A batch of feature vectors with integer class labels."""

    X: np.ndarray  # (n, feature_dim)
    y: np.ndarray  # (n,)

    def __len__(self) -> int:
        return len(self.X)


@dataclass(frozen=True)
class TaskConfig:
    subspace_dim: int
    prompt_dim: int
    feature_dim: int
    classes: int
    hidden: int
    n_train: int
    n_test: int
    n_ood: int
    ood_shift: float
    seed: int
    prior_sigma: float = 50.0
    label_noise: float = 0.0
    pooled_dim: int | None = None

    def __post_init__(self):
        if min(self.n_train, self.n_test, self.n_ood) < 1:
            raise ValueError("dataset sizes must be positive")
        if self.classes < 2:
            raise ValueError("need at least two classes")
        if self.subspace_dim < 1 or self.subspace_dim > self.prompt_dim:
            raise ValueError("need 1 <= subspace_dim <= prompt_dim")
        if min(self.feature_dim, self.hidden) < 1:
            raise ValueError("feature_dim and hidden must be positive")
        if not 0.0 <= self.label_noise < 1.0:
            raise ValueError("label_noise must be in [0, 1)")
        if not self.prior_sigma > 0:
            raise ValueError("prior_sigma must be positive")


@dataclass(frozen=True)
class SyntheticTask:
    """A fully materialized benchmark task: simulator weights, data splits, truth."""

    config: TaskConfig
    classifier: FrozenClassifier
    projection: ProjectionSpec
    prior: PriorSpec
    train: LabeledSet
    test: LabeledSet
    near_ood: np.ndarray
    far_ood: np.ndarray
    z_star: np.ndarray

    def simulator(self, allow_logits: bool = True, budget_limit: int | None = None,
                  logit_hook=None) -> SyntheticSimulator:
        """A fresh query handle with its own budget counter."""
        return SyntheticSimulator(self.classifier, self.projection,
                                  allow_logits=allow_logits,
                                  budget=EvalBudget(limit=budget_limit),
                                  logit_hook=logit_hook)


def _flip_labels(labels: np.ndarray, fraction: float, classes: int,
                 rng: np.random.Generator) -> np.ndarray:
    if fraction <= 0.0:
        return labels
    flipped = labels.copy()
    n_flip = int(round(fraction * len(labels)))
    idx = rng.choice(len(labels), size=n_flip, replace=False)
    flipped[idx] = (flipped[idx] + rng.integers(1, classes, size=n_flip)) % classes
    return flipped


def make_synthetic_task(cfg: TaskConfig) -> SyntheticTask:
    """Build a task deterministically from its config.

    Ground truth z_star is a prior draw; every input is labeled by argmax
    decoding the simulator at z_star, then optionally corrupted by label
    noise. Near-OOD inputs are in-distribution draws shifted by ``ood_shift``
    along a fixed random direction; far-OOD inputs come from
    N(mu, 2 I) with ||mu|| = 2 * ood_shift along an independent direction.
    """
    streams = [np.random.default_rng(s)
               for s in np.random.SeedSequence(cfg.seed).spawn(6)]
    rng_proj, rng_net, rng_zstar, rng_inputs, rng_ood, rng_noise = streams

    projection = make_projection(cfg.subspace_dim, cfg.prompt_dim,
                                 seed=int(rng_proj.integers(2 ** 63)))
    classifier = FrozenClassifier.create(
        cfg.feature_dim, cfg.prompt_dim, cfg.classes, cfg.hidden,
        seed=int(rng_net.integers(2 ** 63)), pooled_dim=cfg.pooled_dim,
        prompt_scale=cfg.prior_sigma)
    prior = PriorSpec(cfg.subspace_dim, cfg.prior_sigma)

    labeler = SyntheticSimulator(classifier, projection)
    X_train = rng_inputs.normal(size=(cfg.n_train, cfg.feature_dim))
    X_test = rng_inputs.normal(size=(cfg.n_test, cfg.feature_dim))

    # Redraw z_star until every class holds at least half its proportional
    # share of train labels (few-shot sets are built per class); keep the most
    # balanced draw if no candidate reaches the threshold.
    floor = max(1, cfg.n_train // (2 * cfg.classes))
    best_min = -1
    for _ in range(200):
        candidate = sample_prior(prior, 1, rng_zstar)[0]
        counts = np.bincount(labeler.query_labels(candidate, X_train),
                             minlength=cfg.classes)
        if counts.min() > best_min:
            best_min = int(counts.min())
            z_star = candidate
        if best_min >= floor:
            break

    y_train = labeler.query_labels(z_star, X_train)
    y_test = labeler.query_labels(z_star, X_test)
    y_train = _flip_labels(y_train, cfg.label_noise, cfg.classes, rng_noise)
    y_test = _flip_labels(y_test, cfg.label_noise, cfg.classes, rng_noise)

    direction = rng_ood.normal(size=cfg.feature_dim)
    direction /= np.linalg.norm(direction)
    near = rng_ood.normal(size=(cfg.n_ood, cfg.feature_dim)) + cfg.ood_shift * direction
    far_direction = rng_ood.normal(size=cfg.feature_dim)
    far_direction /= np.linalg.norm(far_direction)
    far_mu = 2.0 * cfg.ood_shift * far_direction
    far = far_mu + np.sqrt(2.0) * rng_ood.normal(size=(cfg.n_ood, cfg.feature_dim))

    return SyntheticTask(cfg, classifier, projection, prior,
                         LabeledSet(X_train, y_train), LabeledSet(X_test, y_test),
                         near, far, z_star)


def task_config_from_dict(payload: dict) -> TaskConfig:
    extra = set(payload) - set(TaskConfig.__dataclass_fields__)
    if extra:
        raise ValueError(f"unknown task config keys: {sorted(extra)}")
    return TaskConfig(**payload)


def task_config_to_dict(cfg: TaskConfig) -> dict:
    return {
        "subspace_dim": cfg.subspace_dim, "prompt_dim": cfg.prompt_dim,
        "feature_dim": cfg.feature_dim, "classes": cfg.classes,
        "hidden": cfg.hidden, "n_train": cfg.n_train, "n_test": cfg.n_test,
        "n_ood": cfg.n_ood, "ood_shift": cfg.ood_shift, "seed": cfg.seed,
        "prior_sigma": cfg.prior_sigma, "label_noise": cfg.label_noise,
        "pooled_dim": cfg.pooled_dim,
    }
