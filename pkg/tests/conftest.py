import numpy as np
import pytest

from promptuq.blackbox import (FrozenClassifier, LabeledSet, SyntheticSimulator,
                               TaskConfig, make_synthetic_task)
from promptuq.prompt_space import PriorSpec, make_projection

# The d=8 binary task used across the inference tests; seed chosen so a prior
# draw mislabels roughly at chance.
CRITERION_TASK = TaskConfig(subspace_dim=8, prompt_dim=64, feature_dim=16,
                            classes=2, hidden=32, n_train=32, n_test=64,
                            n_ood=64, ood_shift=2.0, seed=7)


@pytest.fixture(scope="session")
def criterion_task():
    return make_synthetic_task(CRITERION_TASK)


def build_uniform_simulator(subspace_dim=4, feature_dim=4, classes=2, seed=1,
                            allow_logits=True):
    """Simulator whose final layer is zeroed: every query returns 1/C."""
    prompt_dim = 4 * subspace_dim
    base = FrozenClassifier.create(feature_dim, prompt_dim, classes, hidden=8,
                                   seed=seed)
    net = FrozenClassifier(base.w1, base.b1, np.zeros_like(base.w2),
                           np.zeros_like(base.b2), base.pool, classes, seed)
    projection = make_projection(subspace_dim, prompt_dim, seed=seed)
    return SyntheticSimulator(net, projection, allow_logits=allow_logits)


def build_fixed_probs_simulator(log_probs, feature_dim=3, seed=0):
    """Simulator returning the same distribution for every (z, input)."""
    classes = len(log_probs)
    prompt_dim = 8
    base = FrozenClassifier.create(feature_dim, prompt_dim, classes, hidden=4,
                                   seed=seed)
    net = FrozenClassifier(np.zeros_like(base.w1), np.zeros_like(base.b1),
                           np.zeros_like(base.w2), np.asarray(log_probs, dtype=float),
                           base.pool, classes, seed)
    projection = make_projection(2, prompt_dim, seed=seed)
    return SyntheticSimulator(net, projection)


@pytest.fixture
def uniform_sim():
    return build_uniform_simulator()


@pytest.fixture
def uniform_dataset():
    rng = np.random.default_rng(0)
    return LabeledSet(rng.normal(size=(4, 4)), np.zeros(4, dtype=np.int64))


@pytest.fixture
def wide_prior():
    return PriorSpec(4, 50.0)
