import csv
import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import CRITERION_TASK, build_uniform_simulator
from promptuq.abc_smc import (SmcConfig, abc_smc, decay_tolerance,
                              distance_error_rate, effective_sample_size,
                              initial_tolerance, rejection_abc,
                              update_kernel_variance, update_weights)
from promptuq.blackbox import LabeledSet, make_synthetic_task
from promptuq.errors import (BudgetExhaustedError, DegenerateWeightsError,
                             StagnationError)
from promptuq.prompt_space import PriorSpec, prior_log_density


def test_distance_basic_values():
    assert distance_error_rate([0, 1, 2], [0, 1, 2]) == 0.0
    assert distance_error_rate([0, 0], [1, 1]) == 1.0
    assert distance_error_rate([0, 1, 0, 1], [0, 1, 1, 0]) == 0.5


def test_distance_rejects_bad_inputs():
    with pytest.raises(ValueError):
        distance_error_rate([0, 1], [0])
    with pytest.raises(ValueError):
        distance_error_rate([], [])


def test_initial_tolerance_range_and_boundary(criterion_task):
    sim = criterion_task.simulator(allow_logits=False)
    for seed in range(20):
        value = initial_tolerance(sim, criterion_task.prior, criterion_task.train,
                                  np.random.default_rng(seed))
        assert 0.0 <= value <= 1.0

    # a simulator that reproduces the labels for every draw yields 0
    uniform = build_uniform_simulator()
    dataset = LabeledSet(np.zeros((6, 4)), np.zeros(6, dtype=np.int64))
    assert initial_tolerance(uniform, PriorSpec(4, 50.0), dataset,
                             np.random.default_rng(0)) == 0.0


def test_initial_tolerance_near_chance_mean():
    # binary task: random prompts mislabel near chance level
    cfg = dataclasses.replace(CRITERION_TASK, seed=0)
    task = make_synthetic_task(cfg)
    sim = task.simulator(allow_logits=False)
    values = [initial_tolerance(sim, task.prior, task.train,
                                np.random.default_rng(s)) for s in range(200)]
    assert 0.35 <= np.mean(values) <= 0.65


def test_decay_tolerance_values():
    assert decay_tolerance(0.5, 32) == pytest.approx(0.46875, abs=0)
    eps = 0.5
    for _ in range(3):
        eps = decay_tolerance(eps, 32)
    assert eps == pytest.approx(0.40625, abs=0)
    assert decay_tolerance(1 / 32, 32) == 0.0
    assert decay_tolerance(0.0, 32) == 0.0


def test_rejection_abc_vacuous_threshold(criterion_task):
    sim = criterion_task.simulator(allow_logits=False)
    result = rejection_abc(sim, criterion_task.prior, criterion_task.train,
                           epsilon=1.0, count=10, max_draws=1000, seed=0)
    assert result.size == 10
    assert result.diagnostics["draws"] == 10  # every draw accepted
    assert np.allclose(result.weights, 0.1)
    assert result.provenance == "rejection_abc"


def test_rejection_abc_particles_recheck(criterion_task):
    sim = criterion_task.simulator(allow_logits=False)
    epsilon = 0.45
    result = rejection_abc(sim, criterion_task.prior, criterion_task.train,
                           epsilon=epsilon, count=15, max_draws=20_000, seed=1)
    for z in result.samples:
        dist = distance_error_rate(sim.query_labels(z, criterion_task.train.X),
                                   criterion_task.train.y)
        assert dist < epsilon


def test_rejection_abc_acceptance_strictly_below_epsilon():
    # every prior draw scores distance exactly 0.5 here, so epsilon = 0.5
    # accepts nothing (strict comparison) while anything above passes
    sim = build_uniform_simulator()
    labels = np.array([0, 0, 0, 1, 1, 1], dtype=np.int64)
    dataset = LabeledSet(np.zeros((6, 4)), labels)
    prior = PriorSpec(4, 50.0)
    with pytest.raises(BudgetExhaustedError) as excinfo:
        rejection_abc(sim, prior, dataset, epsilon=0.5, count=3, max_draws=50, seed=2)
    assert excinfo.value.accepted == 0
    result = rejection_abc(sim, prior, dataset, epsilon=0.51, count=3,
                           max_draws=50, seed=2)
    assert result.size == 3


def test_rejection_abc_rate_monotone_in_epsilon(criterion_task):
    sim = criterion_task.simulator(allow_logits=False)
    rates = {0.5: [], 0.25: []}
    for seed in range(10):
        for eps in rates:
            result = rejection_abc(sim, criterion_task.prior, criterion_task.train,
                                   epsilon=eps, count=5, max_draws=100_000,
                                   seed=seed)
            rates[eps].append(result.diagnostics["acceptance_rate"])
    assert np.mean(rates[0.5]) > np.mean(rates[0.25])


def test_rejection_abc_budget_error_carries_partial_count(criterion_task):
    sim = criterion_task.simulator(allow_logits=False)
    with pytest.raises(BudgetExhaustedError) as excinfo:
        rejection_abc(sim, criterion_task.prior, criterion_task.train,
                      epsilon=0.05, count=50, max_draws=30, seed=3)
    assert excinfo.value.limit == 30
    assert 0 <= excinfo.value.accepted < 50


def test_update_weights_single_particle_is_one():
    prior = PriorSpec(2, 5.0)
    weights = update_weights(np.array([[100.0, -50.0]]), np.array([[0.0, 0.0]]),
                             np.array([1.0]), np.array([0.1, 0.1]), prior)
    assert np.array_equal(weights, np.array([1.0]))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_update_weights_normalized(seed):
    rng = np.random.default_rng(seed)
    prior = PriorSpec(3, float(rng.uniform(1, 60)))
    prev = rng.normal(size=(6, 3)) * prior.sigma
    new = rng.normal(size=(6, 3)) * prior.sigma
    prev_w = rng.dirichlet(np.ones(6))
    var = rng.uniform(0.1, 5.0, size=3)
    weights = update_weights(new, prev, prev_w, var, prior)
    assert (weights >= 0).all()
    assert weights.sum() == pytest.approx(1.0, abs=1e-9)


def test_update_weights_matches_brute_force_mixture():
    # linear-space oracle: no log tricks
    def brute(new, prev, prev_w, var, prior):
        out = []
        for z in new:
            prior_pdf = np.exp(prior_log_density(prior, z))
            mix = 0.0
            for w, zp in zip(prev_w, prev):
                pdf = np.prod(np.exp(-0.5 * (z - zp) ** 2 / var)
                              / np.sqrt(2 * np.pi * var))
                mix += w * pdf
            out.append(prior_pdf / mix)
        out = np.array(out)
        return out / out.sum()

    for seed in range(100):
        rng = np.random.default_rng(seed)
        prior = PriorSpec(3, float(rng.uniform(1, 10)))
        prev = rng.normal(size=(5, 3)) * prior.sigma
        new = prev[rng.integers(5, size=5)] + rng.normal(size=(5, 3))
        prev_w = rng.dirichlet(np.ones(5))
        var = rng.uniform(0.2, 3.0, size=3)
        ours = update_weights(new, prev, prev_w, var, prior)
        proof = brute(new, prev, prev_w, var, prior)
        assert np.allclose(ours, proof, rtol=1e-8, atol=0)


def test_update_weights_degenerate_error():
    prior = PriorSpec(2, 1.0)
    with pytest.raises(DegenerateWeightsError):
        update_weights(np.zeros((3, 2)), np.zeros((3, 2)), np.zeros(3),
                       np.ones(2), prior)


def test_kernel_variance_identical_particles_floored():
    particles = np.tile([1.5, -2.0, 0.0], (7, 1))
    weights = np.full(7, 1 / 7)
    variance = update_kernel_variance(particles, weights, 1e-8)
    assert np.array_equal(variance, np.full(3, 1e-8))


def test_kernel_variance_analytic_case():
    variance = update_kernel_variance(np.array([[-1.0], [1.0]]),
                                      np.array([0.5, 0.5]), 1e-8)
    assert variance[0] == pytest.approx(1.0, abs=1e-15)


def test_kernel_variance_matches_brute_force():
    for seed in range(50):
        rng = np.random.default_rng(seed)
        particles = rng.normal(size=(8, 4)) * 10
        weights = rng.dirichlet(np.ones(8))
        ours = update_kernel_variance(particles, weights, 1e-12)
        mean = sum(w * z for w, z in zip(weights, particles))
        proof = sum(w * (z - mean) ** 2 for w, z in zip(weights, particles))
        assert np.allclose(ours, np.maximum(proof, 1e-12), atol=1e-10)


def test_effective_sample_size_values():
    assert effective_sample_size(np.full(100, 0.01)) == pytest.approx(100.0)
    one_hot = np.zeros(10)
    one_hot[3] = 1.0
    assert effective_sample_size(one_hot) == pytest.approx(1.0)
    assert effective_sample_size(np.array([0.5, 0.5, 0.0, 0.0])) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        effective_sample_size(np.array([0.5, 0.2]))


@settings(max_examples=60)
@given(st.integers(2, 40), st.integers(0, 2 ** 32 - 1))
def test_ess_bounds_and_uniform_equality(size, seed):
    weights = np.random.default_rng(seed).dirichlet(np.ones(size))
    ess = effective_sample_size(weights)
    assert 1.0 <= ess <= size + 1e-9
    uniform_ess = effective_sample_size(np.full(size, 1 / size))
    assert uniform_ess == pytest.approx(size, rel=1e-12)


SMC_CFG = SmcConfig(particle_count=40, max_iterations=6,
                    weight_scheme="importance")


def test_abc_smc_tolerance_trace_and_recheck(criterion_task, tmp_path):
    sim = criterion_task.simulator(allow_logits=False)
    trace = tmp_path / "trace.csv"
    result = abc_smc(sim, criterion_task.prior, criterion_task.train, SMC_CFG,
                     seed=4, trace_path=str(trace))

    with open(trace, newline="") as fh:
        rows = list(csv.DictReader(fh))
    eps = [float(r["epsilon"]) for r in rows]
    n = len(criterion_task.train)
    for t, value in enumerate(eps):
        assert value == eps[0] - t / n  # exact: dyadic arithmetic at N=32
    # importance weights reduce to uniform at iteration one
    assert float(rows[0]["ess"]) == pytest.approx(SMC_CFG.particle_count, rel=1e-12)

    final_eps = result.diagnostics["final_epsilon"]
    assert final_eps == eps[-1]
    for z in result.samples:
        dist = distance_error_rate(sim.query_labels(z, criterion_task.train.X),
                                   criterion_task.train.y)
        assert dist <= final_eps


def test_abc_smc_uniform_scheme_keeps_uniform_weights(criterion_task, tmp_path):
    sim = criterion_task.simulator(allow_logits=False)
    cfg = SmcConfig(particle_count=30, max_iterations=5, weight_scheme="uniform")
    trace = tmp_path / "trace.csv"
    result = abc_smc(sim, criterion_task.prior, criterion_task.train, cfg,
                     seed=5, trace_path=str(trace))
    assert np.allclose(result.weights, 1 / 30)
    with open(trace, newline="") as fh:
        for row in csv.DictReader(fh):
            assert float(row["ess"]) == pytest.approx(30.0, rel=1e-12)


def test_abc_smc_never_needs_probabilities(criterion_task):
    # the labels-only simulator raises on any probability query
    sim = criterion_task.simulator(allow_logits=False)
    result = abc_smc(sim, criterion_task.prior, criterion_task.train, SMC_CFG, seed=6)
    assert result.size == SMC_CFG.particle_count


def test_abc_smc_deterministic(criterion_task):
    runs = []
    for _ in range(2):
        sim = criterion_task.simulator(allow_logits=False)
        runs.append(abc_smc(sim, criterion_task.prior, criterion_task.train,
                            SMC_CFG, seed=7))
    assert np.array_equal(runs[0].samples, runs[1].samples)
    assert np.array_equal(runs[0].weights, runs[1].weights)
    assert runs[0].diagnostics == runs[1].diagnostics


def test_abc_smc_iteration_one_is_strict():
    # every draw has distance exactly equal to the initial tolerance, so the
    # strict comparison can never accept and the run stagnates
    sim = build_uniform_simulator()
    labels = np.array([0, 0, 0, 1, 1, 1], dtype=np.int64)
    dataset = LabeledSet(np.zeros((6, 4)), labels)
    cfg = SmcConfig(particle_count=5, max_iterations=3,
                    max_attempts_per_particle=25)
    with pytest.raises(StagnationError) as excinfo:
        abc_smc(sim, PriorSpec(4, 50.0), dataset, cfg, seed=8)
    assert excinfo.value.iteration == 1
    assert excinfo.value.epsilon == 0.5
    assert excinfo.value.attempts == 25


def test_abc_smc_stagnation_reports_context(criterion_task):
    sim = criterion_task.simulator(allow_logits=False)
    cfg = SmcConfig(particle_count=20, max_iterations=12,
                    max_attempts_per_particle=2)
    with pytest.raises(StagnationError) as excinfo:
        abc_smc(sim, criterion_task.prior, criterion_task.train, cfg, seed=9)
    assert excinfo.value.attempts == 2
    assert 0.0 <= excinfo.value.epsilon <= 1.0
    assert excinfo.value.iteration >= 1


def test_abc_smc_default_particle_count_is_100():
    assert SmcConfig().particle_count == 100
