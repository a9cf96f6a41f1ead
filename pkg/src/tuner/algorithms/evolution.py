"""Regularized evolution: a capacity-bounded population where the oldest
member is evicted, tournament selection, and single-parameter mutations.

The designer's whole state (population, RNG, dedupe history) serializes to
one metadata string, so it can live across per-operation policy instances.
Multi-objective studies rank tournament entrants by Pareto front, then by
youth; infeasible trials always rank last.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import HarmlessDecodeError
from ..model import Goal, StudySpec, Trial
from ..search_space import (ParameterAssignment, ParameterKind,
                            repair_assignment, sample_random, scale_to_unit,
                            unscale_from_unit)
from .random_grid import assignment_key, dedupe_filter_keys

POPULATION_CAPACITY = 25
TOURNAMENT_SIZE = 5
MUTATION_SIGMA = 0.1


@dataclass
class PopulationMember:
    assignment: ParameterAssignment
    objectives: dict[str, float]
    birth: int
    infeasible: bool = False

    def to_json(self) -> dict:
        return {"assignment": self.assignment.to_json(),
                "objectives": dict(self.objectives),
                "birth": self.birth,
                "infeasible": self.infeasible}

    @classmethod
    def from_json(cls, obj: dict) -> "PopulationMember":
        return cls(assignment=ParameterAssignment.from_json(obj["assignment"]),
                   objectives=dict(obj["objectives"]),
                   birth=int(obj["birth"]),
                   infeasible=bool(obj["infeasible"]))


@dataclass
class EvolutionState:
    population: list[PopulationMember] = field(default_factory=list)
    rng_state: dict | None = None
    generation_counter: int = 0
    seen: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"population": [m.to_json() for m in self.population],
                "rng_state": self.rng_state,
                "generation_counter": self.generation_counter,
                "seen": list(self.seen)}

    @classmethod
    def from_json(cls, obj: dict) -> "EvolutionState":
        return cls(population=[PopulationMember.from_json(m) for m in obj["population"]],
                   rng_state=obj["rng_state"],
                   generation_counter=int(obj["generation_counter"]),
                   seen=list(obj.get("seen", [])))


def _adjusted(member: PopulationMember, metrics) -> list[float]:
    # sign-flip so every objective is maximized
    out = []
    for m in metrics:
        v = member.objectives.get(m.name, float("-inf"))
        out.append(v if m.goal is Goal.MAXIMIZE else -v)
    return out


def pareto_ranks(members: Sequence[PopulationMember], metrics) -> list[float]:
    """Front index per member by repeated non-dominated peeling; infeasible
    members rank after every feasible front."""
    feasible = [i for i, m in enumerate(members) if not m.infeasible]
    vals = {i: _adjusted(members[i], metrics) for i in feasible}
    ranks: list[float] = [float("inf")] * len(members)
    remaining = set(feasible)
    front = 0
    while remaining:
        layer = []
        for i in remaining:
            dominated = any(
                all(a >= b for a, b in zip(vals[j], vals[i]))
                and any(a > b for a, b in zip(vals[j], vals[i]))
                for j in remaining if j != i)
            if not dominated:
                layer.append(i)
        for i in layer:
            ranks[i] = front
            remaining.discard(i)
        front += 1
    worst = front
    for i, m in enumerate(members):
        if m.infeasible:
            ranks[i] = worst
    return ranks


def _mutate(study_spec: StudySpec, parent: ParameterAssignment,
            rng: np.random.Generator) -> ParameterAssignment:
    """Perturb one uniformly chosen active parameter; numeric kinds take a
    Gaussian step in unit space, discrete/categorical resample among the
    other values. Children are re-settled when the parent value changes."""
    values = dict(parent.values)
    names = sorted(values)
    name = names[int(rng.integers(len(names)))]
    spec = _find_spec(study_spec, name)
    if spec.kind in (ParameterKind.DOUBLE, ParameterKind.INTEGER):
        u = scale_to_unit(spec, values[name]) + rng.normal(0.0, MUTATION_SIGMA)
        values[name] = unscale_from_unit(spec, min(max(u, 0.0), 1.0))
    else:
        others = [v for v in spec.feasible_values if v != values[name]]
        if others:
            values[name] = others[int(rng.integers(len(others)))]
    return repair_assignment(study_spec.search_space, values, rng)


def _find_spec(study_spec: StudySpec, name: str):
    stack = list(study_spec.search_space)
    while stack:
        spec = stack.pop()
        if spec.name == name:
            return spec
        stack.extend(c.spec for c in spec.children)
    raise KeyError(name)


def regevo_update_and_suggest(study_spec: StudySpec, state: EvolutionState,
                              delta: Sequence[Trial], count: int,
                              capacity: int = POPULATION_CAPACITY,
                              tournament: int = TOURNAMENT_SIZE
                              ) -> tuple[EvolutionState, list[ParameterAssignment]]:
    """Functional core: fold newly completed trials into the population
    (evicting the oldest beyond capacity), then emit ``count`` mutations of
    tournament winners. Empty population falls back to random samples."""
    rng = np.random.default_rng(0)
    if state.rng_state is not None:
        rng.bit_generator.state = state.rng_state

    for trial in delta:
        objectives = {}
        if trial.final_measurement is not None:
            objectives = {k: float(v) for k, v in trial.final_measurement.metrics.items()}
        state.population.append(PopulationMember(
            assignment=ParameterAssignment(dict(trial.parameters.values)),
            objectives=objectives, birth=state.generation_counter,
            infeasible=trial.infeasible))
        state.generation_counter += 1
        state.seen.append(assignment_key(trial.parameters))
    while len(state.population) > capacity:
        oldest = min(range(len(state.population)),
                     key=lambda i: state.population[i].birth)
        state.population.pop(oldest)

    metrics = study_spec.metrics
    suggestions: list[ParameterAssignment] = []
    for _ in range(count):
        if not state.population:
            candidate = sample_random(study_spec.search_space, rng)
        else:
            size = min(tournament, len(state.population))
            picks = rng.choice(len(state.population), size=size, replace=False)
            entrants = [state.population[int(i)] for i in picks]
            ranks = pareto_ranks(entrants, metrics)
            winner = min(range(len(entrants)),
                         key=lambda i: (ranks[i], -entrants[i].birth))
            candidate = _mutate(study_spec, entrants[winner].assignment, rng)
        accepted = dedupe_filter_keys(
            study_spec.search_space, [candidate], set(state.seen),
            study_spec.observation_noise, rng)[0]
        suggestions.append(accepted)
        state.seen.append(assignment_key(accepted))
    state.rng_state = rng.bit_generator.state
    return state, suggestions


class RegEvoDesigner:
    """Serializable-designer wrapper over the functional core."""

    def __init__(self, study_spec: StudySpec, state: EvolutionState):
        self.study_spec = study_spec
        self.state = state

    @classmethod
    def fresh(cls, study_spec: StudySpec, seed: int) -> "RegEvoDesigner":
        state = EvolutionState(
            rng_state=np.random.default_rng(seed).bit_generator.state)
        return cls(study_spec, state)

    @classmethod
    def recover(cls, study_spec: StudySpec, fragment: dict[str, str]) -> "RegEvoDesigner":
        try:
            state = EvolutionState.from_json(json.loads(fragment["state"]))
        except (KeyError, ValueError, TypeError) as e:
            raise HarmlessDecodeError(f"cannot decode evolution state: {e}") from e
        return cls(study_spec, state)

    def update(self, delta: Sequence[Trial]) -> None:
        self.state, _ = regevo_update_and_suggest(self.study_spec, self.state,
                                                  delta, count=0)

    def suggest(self, count: int) -> list[ParameterAssignment]:
        self.state, suggestions = regevo_update_and_suggest(
            self.study_spec, self.state, [], count=count)
        return suggestions

    def dump(self) -> dict[str, str]:
        return {"state": json.dumps(self.state.to_json(), sort_keys=True)}
