"""Desk-scale benchmark harness: tunes built-in synthetic objectives through
a full client/server loop (in-process by default) and reports best-so-far
curves as JSON plus a plain-text table.
"""

from __future__ import annotations

import json
import math
import statistics
from dataclasses import dataclass
from typing import Callable

from .algorithms.pareto import pareto_frontier
from .client import ClientSession, HttpTransport, InProcessTransport
from .datastore import Datastore
from .model import Goal, MetricSpec, ObservationNoise, StudySpec
from .search_space import ChildSpec, ParameterSpec
from .service import ServerConfig, Service


@dataclass
class BenchObjective:
    name: str
    make_space: Callable[[int], list[ParameterSpec]]
    evaluate: Callable[[dict], dict[str, float]]
    metrics: Callable[[], list[MetricSpec]]
    fixed_dim: int | None = None
    optimum: float | None = None


def _sphere_space(dim: int) -> list[ParameterSpec]:
    return [ParameterSpec.double(f"x{i}", -1.0, 1.0) for i in range(dim)]


def _sphere(params: dict) -> dict[str, float]:
    return {"objective": sum(v * v for v in params.values())}


def _rosenbrock_space(dim: int) -> list[ParameterSpec]:
    return [ParameterSpec.double(f"x{i}", -2.0, 2.0) for i in range(dim)]


def _rosenbrock(params: dict) -> dict[str, float]:
    xs = [params[k] for k in sorted(params)]
    total = sum(100.0 * (xs[i + 1] - xs[i] ** 2) ** 2 + (1.0 - xs[i]) ** 2
                for i in range(len(xs) - 1))
    return {"objective": total}


def _branin_space(dim: int) -> list[ParameterSpec]:
    return [ParameterSpec.double("x0", -5.0, 10.0),
            ParameterSpec.double("x1", 0.0, 15.0)]


def _branin(params: dict) -> dict[str, float]:
    x, y = params["x0"], params["x1"]
    a, b, c = 1.0, 5.1 / (4 * math.pi ** 2), 5.0 / math.pi
    r, s, t = 6.0, 10.0, 1.0 / (8 * math.pi)
    value = a * (y - b * x * x + c * x - r) ** 2 + s * (1 - t) * math.cos(x) + s
    return {"objective": value}


def _conditional_space(dim: int) -> list[ParameterSpec]:
    lr = ParameterSpec.double("linear_lr", 1e-4, 1e-1, scale="LOG")
    layers = ParameterSpec.integer("num_layers", 1, 5)
    dropout = ParameterSpec.double("dropout", 0.0, 0.5)
    model = ParameterSpec.categorical(
        "model", ["linear", "dnn"],
        children=[ChildSpec(["linear"], lr),
                  ChildSpec(["dnn"], layers),
                  ChildSpec(["dnn"], dropout)])
    return [model]


def _conditional_toy(params: dict) -> dict[str, float]:
    # evaluable only from exactly the active parameters; anything else is a bug
    if params["model"] == "linear":
        assert set(params) == {"model", "linear_lr"}, sorted(params)
        value = (math.log10(params["linear_lr"]) + 2.5) ** 2
    else:
        assert set(params) == {"model", "num_layers", "dropout"}, sorted(params)
        value = 0.2 + 0.1 * (params["num_layers"] - 3) ** 2 + params["dropout"]
    return {"objective": value}


def _two_objective_space(dim: int) -> list[ParameterSpec]:
    return [ParameterSpec.double("x", 0.0, 1.0), ParameterSpec.double("y", 0.0, 1.0)]


def _two_objective_toy(params: dict) -> dict[str, float]:
    return {"coverage": params["x"], "economy": 1.0 - params["x"] ** 2}


def _single_min_metric() -> list[MetricSpec]:
    return [MetricSpec("objective", Goal.MINIMIZE)]


OBJECTIVES: dict[str, BenchObjective] = {
    "sphere": BenchObjective("sphere", _sphere_space, _sphere,
                             _single_min_metric, optimum=0.0),
    "rosenbrock": BenchObjective("rosenbrock", _rosenbrock_space, _rosenbrock,
                                 _single_min_metric, optimum=0.0),
    "branin": BenchObjective("branin", _branin_space, _branin,
                             _single_min_metric, fixed_dim=2,
                             optimum=0.39788735772973816),
    "conditional-toy": BenchObjective("conditional-toy", _conditional_space,
                                      _conditional_toy, _single_min_metric,
                                      fixed_dim=1, optimum=0.2),
    "two-objective-toy": BenchObjective(
        "two-objective-toy", _two_objective_space, _two_objective_toy,
        lambda: [MetricSpec("coverage", Goal.MAXIMIZE),
                 MetricSpec("economy", Goal.MAXIMIZE)],
        fixed_dim=2),
}


@dataclass
class BenchConfig:
    objective: str
    algorithm: str
    budget: int = 50
    dim: int = 4
    seeds: int = 10
    count: int = 1
    out: str | None = None
    remote_address: str | None = None  # None -> in-process server

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"unknown objective {self.objective!r}; "
                             f"choose from {sorted(OBJECTIVES)}")
        if self.budget < 1 or self.seeds < 1 or self.dim < 1 or self.count < 1:
            raise ValueError("budget, seeds, dim, and count must be >= 1")


def build_study_spec(config: BenchConfig, seed: int) -> StudySpec:
    objective = OBJECTIVES[config.objective]
    dim = objective.fixed_dim or config.dim
    spec = StudySpec(search_space=objective.make_space(dim),
                     metrics=objective.metrics(),
                     algorithm=config.algorithm,
                     observation_noise=ObservationNoise.LOW)
    spec.metadata.put("policy", "seed", str(seed))
    return spec


def _run_seed(config: BenchConfig, seed: int) -> dict:
    objective = OBJECTIVES[config.objective]
    spec = build_study_spec(config, seed)
    goals = {m.name: m.goal for m in spec.metrics}
    primary = spec.metrics[0].name

    if config.remote_address:
        transport = HttpTransport(config.remote_address)
        service = None
    else:
        service = Service(Datastore(), ServerConfig(workers=2,
                                                    poll_hint_secs=0.001)).start()
        transport = InProcessTransport(service)

    study_name = f"bench-{config.objective}-{config.algorithm}-{seed}"
    session = ClientSession.load_or_create_study(
        transport, study_name, spec, client_id=f"bench-seed-{seed}")

    best_curve: list[float] = []
    best = None
    evaluated = 0
    while evaluated < config.budget:
        want = min(config.count, config.budget - evaluated)
        trials = session.get_suggestions(count=want)
        for trial in trials:
            metrics = objective.evaluate(trial.parameters.values)
            session.complete_trial(trial.id, metrics=metrics)
            evaluated += 1
            value = metrics[primary]
            if best is None:
                best = value
            elif goals[primary] is Goal.MAXIMIZE:
                best = max(best, value)
            else:
                best = min(best, value)
            best_curve.append(best)
            if evaluated >= config.budget:
                break

    record = {"seed": seed, "best_curve": best_curve, "final_best": best}
    if len(spec.metrics) > 1:
        completed = [t for t in session.list_trials(states={"COMPLETED"})
                     if not t.infeasible]
        record["pareto_frontier_size"] = len(pareto_frontier(completed, spec.metrics))
    if service is not None:
        service.stop()
    return record


def bench_run(config: BenchConfig) -> dict:
    """Runs every seed, aggregates best-so-far quantiles per trial index."""
    runs = [_run_seed(config, seed) for seed in range(config.seeds)]
    curves = [r["best_curve"] for r in runs]
    horizon = min(len(c) for c in curves)
    summary_curve = []
    for i in range(horizon):
        column = sorted(c[i] for c in curves)
        summary_curve.append({
            "trial": i + 1,
            "median": statistics.median(column),
            "q25": column[max(0, int(0.25 * (len(column) - 1)))],
            "q75": column[int(0.75 * (len(column) - 1))],
        })
    finals = sorted(r["final_best"] for r in runs)
    report = {
        "config": {
            "objective": config.objective, "algorithm": config.algorithm,
            "budget": config.budget, "dim": config.dim, "seeds": config.seeds,
        },
        "runs": runs,
        "summary": {
            "median_final_best": statistics.median(finals),
            "best_final_best": finals[0],
            "worst_final_best": finals[-1],
            "curve": summary_curve,
        },
    }
    if config.out:
        with open(config.out, "w", encoding="utf-8") as f:
            json.dump(report, f, indent=2)
    return report


def render_report(report: dict, every: int = 10) -> str:
    """Plain-text table of the aggregated best-so-far curve."""
    cfg = report["config"]
    lines = [f"{cfg['objective']} / {cfg['algorithm']} "
             f"(budget {cfg['budget']}, {cfg['seeds']} seeds)",
             f"{'trial':>6} {'q25':>12} {'median':>12} {'q75':>12}"]
    curve = report["summary"]["curve"]
    for i, row in enumerate(curve):
        if (i + 1) % every == 0 or i == len(curve) - 1 or i == 0:
            lines.append(f"{row['trial']:>6} {row['q25']:>12.5g} "
                         f"{row['median']:>12.5g} {row['q75']:>12.5g}")
    lines.append(f"median final best: {report['summary']['median_final_best']:.6g}")
    return "\n".join(lines)
