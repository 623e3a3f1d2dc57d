"""Experiment orchestration: config validation, method dispatch, reporting.

Every run is a pure function of (config, seed): the task is rebuilt from its
config, methods consume named substreams of the experiment seed, and all
artifacts (summary JSON, posterior NDJSON, curve CSVs) are written with
deterministic formatting so reruns are byte-identical.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import estimators, predictive, uqeval
from .abc_smc import (WEIGHT_IMPORTANCE, WEIGHT_UNIFORM, SmcConfig, abc_smc,
                      initial_tolerance, rejection_abc)
from .blackbox import (LabeledSet, SyntheticTask, TaskConfig, make_synthetic_task,
                       task_config_from_dict, task_config_to_dict)
from .errors import ConfigError
from .prompt_space import PriorSpec
from .protocol import ExternalSimulator

METHOD_POINT = "point_cmaes"
METHOD_ENSEMBLES = "ensembles"
METHOD_GFVI = "gfvi"
METHOD_REJECTION = "rejection_abc"
METHOD_SMC = "abc_smc"
METHODS = (METHOD_POINT, METHOD_ENSEMBLES, METHOD_GFVI, METHOD_REJECTION, METHOD_SMC)
LIKELIHOOD_METHODS = (METHOD_POINT, METHOD_ENSEMBLES, METHOD_GFVI)
LABELS_METHODS = (METHOD_REJECTION, METHOD_SMC)

EVAL_CALIBRATION = "calibration"
EVAL_SELECTIVE = "selective"
EVAL_NEAR_OOD = "near_ood"
EVAL_FAR_OOD = "far_ood"
EVALUATIONS = (EVAL_CALIBRATION, EVAL_SELECTIVE, EVAL_NEAR_OOD, EVAL_FAR_OOD)

DEFAULT_SAMPLE_COUNT = {
    METHOD_POINT: 1,
    METHOD_ENSEMBLES: 10,
    METHOD_GFVI: 100,
    METHOD_REJECTION: 100,
    METHOD_SMC: 100,
}

_PARAM_KEYS = {
    METHOD_POINT: {"population_size", "max_generations", "sigma0"},
    METHOD_ENSEMBLES: {"population_size", "max_generations", "sigma0", "sample_count"},
    METHOD_GFVI: {"population_size", "max_generations", "sample_count",
                  "mc_samples", "search_step"},
    METHOD_REJECTION: {"sample_count", "epsilon", "max_draws"},
    METHOD_SMC: {"sample_count", "smc_iterations", "weight_scheme",
                 "max_attempts", "variance_floor"},
}


@dataclass(frozen=True)
class ExternalTaskSpec:
    """Where to reach a conforming simulator process and what data to use."""

    argv: tuple[str, ...] | None
    host: str | None
    port: int | None
    prior_dim: int
    prior_sigma: float
    datasets: dict[str, str]  # split name -> ndjson path


@dataclass
class ExperimentConfig:
    task: TaskConfig | ExternalTaskSpec
    method: str
    seed: int
    evaluation: tuple[str, ...] = EVALUATIONS
    predictive_mode: str | None = None
    sample_count: int | None = None
    population_size: int = 20
    max_generations: int = 300
    sigma0: float | None = None
    mc_samples: int = 10
    search_step: float = 0.3
    smc_iterations: int = 10
    weight_scheme: str = WEIGHT_IMPORTANCE
    max_attempts: int = 10_000
    variance_floor: float = 1e-8
    epsilon: float | None = None
    max_draws: int = 100_000

    def resolved_sample_count(self) -> int:
        return (self.sample_count if self.sample_count is not None
                else DEFAULT_SAMPLE_COUNT[self.method])


def _require(payload: dict, key: str, path: str):
    if key not in payload:
        raise ConfigError(f"{path}{key}", "missing required field")
    return payload[key]


def external_task_from_dict(payload: dict) -> ExternalTaskSpec:
    endpoint = _require(payload, "endpoint", "task.")
    argv = endpoint.get("argv")
    host = endpoint.get("host")
    port = endpoint.get("port")
    if argv is None and (host is None or port is None):
        raise ConfigError("task.endpoint", "need either argv or host+port")
    prior = _require(payload, "prior", "task.")
    datasets = _require(payload, "datasets", "task.")
    if "train" not in datasets:
        raise ConfigError("task.datasets.train", "missing required field")
    return ExternalTaskSpec(
        argv=tuple(argv) if argv is not None else None,
        host=host, port=port,
        prior_dim=int(_require(prior, "dim", "task.prior.")),
        prior_sigma=float(_require(prior, "sigma", "task.prior.")),
        datasets=dict(datasets))


def experiment_config_from_dict(payload: dict) -> ExperimentConfig:
    method = _require(payload, "method", "")
    if method not in METHODS:
        raise ConfigError("method", f"unknown method {method!r}; choose from {METHODS}")
    if "seed" not in payload:
        raise ConfigError("seed", "a seed is mandatory")
    seed = int(payload["seed"])

    task_payload = _require(payload, "task", "")
    if "endpoint" in task_payload:
        task = external_task_from_dict(task_payload)
    else:
        try:
            task = task_config_from_dict(task_payload)
        except (TypeError, ValueError) as exc:
            raise ConfigError("task", str(exc)) from exc

    evaluation = tuple(payload.get("evaluation", EVALUATIONS))
    for name in evaluation:
        if name not in EVALUATIONS:
            raise ConfigError("evaluation", f"unknown evaluation {name!r}")

    predictive_mode = payload.get("predictive_mode")
    if predictive_mode not in (None, "logits", "labels"):
        raise ConfigError("predictive_mode", f"must be 'logits' or 'labels'")
    if predictive_mode == "logits" and method in LABELS_METHODS:
        raise ConfigError(
            "predictive_mode",
            f"{method} is likelihood-free: its predictive distribution uses the "
            f"labels path, probabilities are not observed")

    params = dict(payload.get("params", {}))
    allowed = _PARAM_KEYS[method]
    for key in params:
        if key not in allowed:
            raise ConfigError(f"params.{key}", f"not a parameter of {method}")

    config = ExperimentConfig(task=task, method=method, seed=seed,
                              evaluation=evaluation, predictive_mode=predictive_mode,
                              **params)
    if config.weight_scheme not in (WEIGHT_IMPORTANCE, WEIGHT_UNIFORM):
        raise ConfigError("params.weight_scheme",
                          f"must be '{WEIGHT_IMPORTANCE}' or '{WEIGHT_UNIFORM}'")
    if config.sample_count is not None and config.sample_count < 1:
        raise ConfigError("params.sample_count", "must be positive")
    return config


def load_labeled_ndjson(path) -> LabeledSet:
    """Records {"x": [...], "y": int}; y may be omitted for unlabeled OOD rows."""
    xs, ys = [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            xs.append(record["x"])
            ys.append(record.get("y", -1))
    return LabeledSet(np.asarray(xs, dtype=float), np.asarray(ys, dtype=np.int64))


@dataclass
class RunContext:
    sim: object
    prior: PriorSpec
    train: LabeledSet
    test: LabeledSet | None
    near_ood: np.ndarray | None
    far_ood: np.ndarray | None
    close: object = None


def _open_context(config: ExperimentConfig) -> RunContext:
    task = config.task
    if isinstance(task, TaskConfig):
        built: SyntheticTask = make_synthetic_task(task)
        allow_logits = config.method in LIKELIHOOD_METHODS
        sim = built.simulator(allow_logits=allow_logits)
        return RunContext(sim=sim, prior=built.prior, train=built.train,
                          test=built.test, near_ood=built.near_ood,
                          far_ood=built.far_ood)
    if task.argv is not None:
        sim = ExternalSimulator.spawn(list(task.argv))
    else:
        sim = ExternalSimulator.connect(task.host, task.port)
    splits = {name: load_labeled_ndjson(path) for name, path in task.datasets.items()}
    return RunContext(
        sim=sim, prior=PriorSpec(task.prior_dim, task.prior_sigma),
        train=splits["train"], test=splits.get("test"),
        near_ood=splits["near_ood"].X if "near_ood" in splits else None,
        far_ood=splits["far_ood"].X if "far_ood" in splits else None,
        close=sim.close)


def _run_method(config: ExperimentConfig, ctx: RunContext,
                trace_path: str | None) -> estimators.PosteriorEnsemble:
    es = estimators.EsConfig(population_size=config.population_size,
                             max_generations=config.max_generations,
                             sigma0=config.sigma0)
    count = config.resolved_sample_count()
    if config.method == METHOD_POINT:
        return estimators.point_estimate(ctx.sim, ctx.train, ctx.prior, es,
                                         seed=config.seed, trace_path=trace_path)
    if config.method == METHOD_ENSEMBLES:
        seeds = estimators.derive_seeds(config.seed, count)
        return estimators.ensemble_tune(ctx.sim, ctx.train, ctx.prior, es,
                                        seeds=seeds, trace_path=trace_path)
    if config.method == METHOD_GFVI:
        return estimators.gfvi_tune(ctx.sim, ctx.train, ctx.prior, es,
                                    mc_samples=config.mc_samples,
                                    sample_count=count, seed=config.seed,
                                    search_step=config.search_step,
                                    trace_path=trace_path)
    if config.method == METHOD_REJECTION:
        epsilon = config.epsilon
        if epsilon is None:
            epsilon = initial_tolerance(
                ctx.sim, ctx.prior, ctx.train,
                np.random.default_rng(np.random.SeedSequence(config.seed,
                                                             spawn_key=(0, 0))))
        return rejection_abc(ctx.sim, ctx.prior, ctx.train, epsilon,
                                 count=count, max_draws=config.max_draws,
                                 seed=config.seed)
    if config.method == METHOD_SMC:
        cfg = SmcConfig(particle_count=count,
                            max_iterations=config.smc_iterations,
                            weight_scheme=config.weight_scheme,
                            max_attempts_per_particle=config.max_attempts,
                            variance_floor=config.variance_floor)
        return abc_smc(ctx.sim, ctx.prior, ctx.train, cfg, seed=config.seed,
                           trace_path=trace_path)
    raise ConfigError("method", f"unknown method {config.method!r}")


def _predictive(config: ExperimentConfig, ctx: RunContext,
                ensemble: estimators.PosteriorEnsemble,
                inputs: np.ndarray) -> predictive.PredictiveTable:
    mode = config.predictive_mode
    if mode is None:
        mode = "logits" if config.method in LIKELIHOOD_METHODS else "labels"
    if mode == "logits":
        return predictive.predictive_from_logits(ensemble, ctx.sim, inputs)
    return predictive.predictive_from_labels(ensemble, ctx.sim, inputs)


@dataclass
class ExperimentReport:
    summary: dict
    out_dir: str
    files: dict[str, str] = field(default_factory=dict)


def run_experiment(config: ExperimentConfig, out_dir: str,
                   trace: bool = False) -> ExperimentReport:
    os.makedirs(out_dir, exist_ok=True)
    trace_path = os.path.join(out_dir, "trace.csv") if trace else None
    if trace_path is not None and os.path.exists(trace_path):
        os.remove(trace_path)  # traces append; reruns must not accumulate

    ctx = _open_context(config)
    files: dict[str, str] = {}
    try:
        ensemble = _run_method(config, ctx, trace_path)

        posterior_path = os.path.join(out_dir, "posterior.ndjson")
        estimators.save_ensemble(ensemble, posterior_path)
        files["posterior"] = posterior_path

        summary: dict = {
            "method": config.method,
            "seed": config.seed,
            "posterior": {
                "size": ensemble.size,
                "provenance": ensemble.provenance,
                "diagnostics": {k: float(v) for k, v in
                                sorted(ensemble.diagnostics.items())},
            },
        }
        if isinstance(config.task, TaskConfig):
            summary["task"] = task_config_to_dict(config.task)

        test_table = None
        if config.evaluation:
            if ctx.test is None:
                raise ConfigError("evaluation", "no test split available")
            test_table = _predictive(config, ctx, ensemble, ctx.test.X)

        if EVAL_CALIBRATION in config.evaluation or EVAL_SELECTIVE in config.evaluation:
            base = uqeval.selective_classification_eval(
                test_table.probs, ctx.test.y, uqeval.SCORE_ENTROPY)
            summary["accuracy"] = base.accuracy
            if EVAL_CALIBRATION in config.evaluation:
                summary["ece"] = base.ece
            if EVAL_SELECTIVE in config.evaluation:
                block = {"lower_bound": base.lower_bound}
                for score in uqeval.SCORES:
                    report = uqeval.selective_classification_eval(
                        test_table.probs, ctx.test.y, score)
                    block[f"aurrrc_{score}"] = report.aurrrc
                    curve_path = os.path.join(out_dir, f"curve_selective_{score}.csv")
                    uqeval.save_curve_csv(report.curve, curve_path)
                    files[f"curve_selective_{score}"] = curve_path
                summary["selective"] = block

        for name, inputs in ((EVAL_NEAR_OOD, ctx.near_ood),
                             (EVAL_FAR_OOD, ctx.far_ood)):
            if name not in config.evaluation:
                continue
            if inputs is None:
                raise ConfigError("evaluation", f"no {name} split available")
            ood_table = _predictive(config, ctx, ensemble, inputs)
            block = {}
            for score in uqeval.SCORES:
                report = uqeval.ood_detection_eval(test_table.probs, ood_table.probs,
                                                   score)
                block[f"aurrrc_{score}"] = report.aurrrc
                block["lower_bound"] = report.lower_bound
                curve_path = os.path.join(out_dir, f"curve_{name}_{score}.csv")
                uqeval.save_curve_csv(report.curve, curve_path)
                files[f"curve_{name}_{score}"] = curve_path
            summary[name] = block

        summary["simulator_calls"] = ctx.sim.budget.used
        summary_path = os.path.join(out_dir, "summary.json")
        uqeval.save_summary_json(summary, summary_path)
        files["summary"] = summary_path
        if trace_path is not None:
            files["trace"] = trace_path
        return ExperimentReport(summary=summary, out_dir=out_dir, files=files)
    finally:
        if ctx.close is not None:
            ctx.close()


def compare_methods(configs: list[ExperimentConfig], out_dir: str,
                    trace: bool = False) -> list[dict]:
    """Run several methods on one task and tabulate the headline metrics."""
    if not configs:
        raise ConfigError("configs", "need at least one experiment")
    first = configs[0]
    for i, cfg in enumerate(configs[1:], start=1):
        if cfg.task != first.task:
            raise ConfigError(f"configs[{i}].task", "all experiments must share the task")
        if cfg.seed != first.seed:
            raise ConfigError(f"configs[{i}].seed", "all experiments must share the seed")

    rows = []
    for index, cfg in enumerate(configs):
        run_dir = os.path.join(out_dir, f"{index:02d}_{cfg.method}")
        report = run_experiment(cfg, run_dir, trace=trace).summary
        row = {"method": cfg.method,
               "accuracy": report.get("accuracy"),
               "ece": report.get("ece")}
        for block in (EVAL_SELECTIVE, EVAL_NEAR_OOD, EVAL_FAR_OOD):
            data = report.get(block, {})
            for score in uqeval.SCORES:
                row[f"{block}_aurrrc_{score}"] = data.get(f"aurrrc_{score}")
            row[f"{block}_lower_bound"] = data.get("lower_bound")
        rows.append(row)

    os.makedirs(out_dir, exist_ok=True)
    table_path = os.path.join(out_dir, "compare.json")
    with open(table_path, "w", encoding="utf-8") as fh:
        json.dump(rows, fh, indent=2, sort_keys=True)
        fh.write("\n")
    def cell(value):
        if value is None:
            return ""
        return repr(value) if isinstance(value, float) else str(value)

    csv_path = os.path.join(out_dir, "compare.csv")
    headers = list(rows[0].keys())
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(",".join(headers) + "\n")
        for row in rows:
            fh.write(",".join(cell(row[h]) for h in headers) + "\n")
    return rows
