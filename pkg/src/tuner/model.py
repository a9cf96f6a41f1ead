"""Domain types shared by every module: studies, trials, measurements,
metadata, and the trial state machine.

All types are plain value objects with canonical JSON codecs; the same
encoding is used on the wire and in the persistence files. Mutation happens
only inside datastore transactions, so instances are safe to copy between
threads.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from .errors import IllegalTransition, IncompleteFinalMeasurement, InvalidSpec
from .search_space import ParameterAssignment, ParameterSpec, validate_space


class Goal(str, Enum):
    MAXIMIZE = "MAXIMIZE"
    MINIMIZE = "MINIMIZE"


class ObservationNoise(str, Enum):
    LOW = "LOW"
    HIGH = "HIGH"


class AutomatedStopping(str, Enum):
    NONE = "NONE"
    MEDIAN = "MEDIAN"
    DECAY_CURVE = "DECAY_CURVE"


class StudyState(str, Enum):
    ACTIVE = "ACTIVE"
    INACTIVE = "INACTIVE"
    COMPLETED = "COMPLETED"


class TrialState(str, Enum):
    ACTIVE = "ACTIVE"
    STOPPING = "STOPPING"
    COMPLETED = "COMPLETED"


#: Allowed trial state-machine edges. Completion is terminal; there is no
#: back-edge out of STOPPING other than completing.
TRIAL_EDGES = {
    (TrialState.ACTIVE, TrialState.STOPPING),
    (TrialState.ACTIVE, TrialState.COMPLETED),
    (TrialState.STOPPING, TrialState.COMPLETED),
}


class MetadataStore:
    """Namespaced key-value strings. Values are opaque to the system and
    interpreted only by the policy (or user) that wrote them."""

    def __init__(self, entries: dict | None = None):
        # namespace -> key -> value
        self._entries: dict[str, dict[str, str]] = {}
        if entries:
            for ns, kv in entries.items():
                for k, v in kv.items():
                    self.put(ns, k, v)

    def put(self, namespace: str, key: str, value: str) -> "MetadataStore":
        if not isinstance(value, str):
            raise TypeError(f"metadata values are strings, got {type(value).__name__}")
        self._entries.setdefault(str(namespace), {})[str(key)] = value
        return self

    def get(self, namespace: str, key: str, default: Optional[str] = None) -> Optional[str]:
        return self._entries.get(namespace, {}).get(key, default)

    def namespace(self, namespace: str) -> dict[str, str]:
        return dict(self._entries.get(namespace, {}))

    def delete(self, namespace: str, key: str) -> None:
        self._entries.get(namespace, {}).pop(key, None)

    def items(self):
        for ns, kv in self._entries.items():
            for k, v in kv.items():
                yield ns, k, v

    def __len__(self):
        return sum(len(kv) for kv in self._entries.values())

    def __eq__(self, other):
        if isinstance(other, MetadataStore):
            return self.to_json() == other.to_json()
        return NotImplemented

    def copy(self) -> "MetadataStore":
        return MetadataStore(self.to_json())

    def to_json(self) -> dict:
        return {ns: dict(kv) for ns, kv in self._entries.items() if kv}

    @classmethod
    def from_json(cls, obj: dict) -> "MetadataStore":
        return cls(obj or {})


def metadata_upsert(store: MetadataStore, namespace: str, key: str,
                    value: str) -> MetadataStore:
    """Write-or-overwrite one entry; entries in other namespaces unchanged."""
    return store.put(namespace, key, value)


@dataclass
class MetricSpec:
    name: str
    goal: Goal
    min_value: float | None = None
    max_value: float | None = None

    def __post_init__(self):
        self.goal = Goal(self.goal)
        if not self.name:
            raise InvalidSpec("metric name must be non-empty")
        # canonical float bounds, whatever number type the wire delivered
        if self.min_value is not None:
            self.min_value = float(self.min_value)
        if self.max_value is not None:
            self.max_value = float(self.max_value)
        if (self.min_value is not None and self.max_value is not None
                and self.min_value > self.max_value):
            raise InvalidSpec(f"metric {self.name}: min_value > max_value")

    def to_json(self) -> dict:
        obj: dict = {"name": self.name, "goal": self.goal.value}
        if self.min_value is not None:
            obj["min_value"] = self.min_value
        if self.max_value is not None:
            obj["max_value"] = self.max_value
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "MetricSpec":
        return cls(name=obj["name"], goal=Goal(obj["goal"]),
                   min_value=obj.get("min_value"), max_value=obj.get("max_value"))


@dataclass
class StudySpec:
    search_space: list[ParameterSpec]
    metrics: list[MetricSpec]
    algorithm: str
    observation_noise: ObservationNoise = ObservationNoise.LOW
    automated_stopping: AutomatedStopping = AutomatedStopping.NONE
    metadata: MetadataStore = field(default_factory=MetadataStore)

    def __post_init__(self):
        self.observation_noise = ObservationNoise(self.observation_noise)
        self.automated_stopping = AutomatedStopping(self.automated_stopping)
        if not self.metrics:
            raise InvalidSpec("a study needs at least one metric")
        names = [m.name for m in self.metrics]
        if len(set(names)) != len(names):
            raise InvalidSpec("metric names must be unique")
        validate_space(self.search_space)

    def metric_names(self) -> list[str]:
        return [m.name for m in self.metrics]

    def objective_metric(self) -> MetricSpec:
        """First configured metric; the one stopping rules reason about."""
        return self.metrics[0]

    def to_json(self) -> dict:
        return {
            "search_space": [p.to_json() for p in self.search_space],
            "metrics": [m.to_json() for m in self.metrics],
            "algorithm": self.algorithm,
            "observation_noise": self.observation_noise.value,
            "automated_stopping": self.automated_stopping.value,
            "metadata": self.metadata.to_json(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "StudySpec":
        return cls(
            search_space=[ParameterSpec.from_json(p) for p in obj["search_space"]],
            metrics=[MetricSpec.from_json(m) for m in obj["metrics"]],
            algorithm=obj["algorithm"],
            observation_noise=ObservationNoise(obj.get("observation_noise", "LOW")),
            automated_stopping=AutomatedStopping(obj.get("automated_stopping", "NONE")),
            metadata=MetadataStore.from_json(obj.get("metadata", {})),
        )


@dataclass
class Measurement:
    step: int
    metrics: dict[str, float]
    elapsed_secs: float | None = None

    def __post_init__(self):
        if self.step < 0:
            raise InvalidSpec("measurement step must be >= 0")
        if self.elapsed_secs is not None and self.elapsed_secs < 0:
            raise InvalidSpec("elapsed_secs must be >= 0")

    def to_json(self) -> dict:
        obj: dict = {"step": self.step, "metrics": dict(self.metrics)}
        if self.elapsed_secs is not None:
            obj["elapsed_secs"] = self.elapsed_secs
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "Measurement":
        return cls(step=int(obj["step"]), metrics=dict(obj["metrics"]),
                   elapsed_secs=obj.get("elapsed_secs"))


@dataclass
class Trial:
    id: int
    state: TrialState = TrialState.ACTIVE
    client_id: str | None = None
    parameters: ParameterAssignment = field(default_factory=ParameterAssignment)
    intermediate_measurements: list[Measurement] = field(default_factory=list)
    final_measurement: Measurement | None = None
    infeasible: bool = False
    infeasibility_reason: str | None = None
    metadata: MetadataStore = field(default_factory=MetadataStore)

    def __post_init__(self):
        self.state = TrialState(self.state)

    def to_json(self) -> dict:
        obj: dict = {
            "id": self.id,
            "state": self.state.value,
            "parameters": self.parameters.to_json(),
            "intermediate_measurements": [m.to_json() for m in self.intermediate_measurements],
            "infeasible": self.infeasible,
            "metadata": self.metadata.to_json(),
        }
        if self.client_id is not None:
            obj["client_id"] = self.client_id
        if self.final_measurement is not None:
            obj["final_measurement"] = self.final_measurement.to_json()
        if self.infeasibility_reason is not None:
            obj["infeasibility_reason"] = self.infeasibility_reason
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "Trial":
        return cls(
            id=int(obj["id"]),
            state=TrialState(obj["state"]),
            client_id=obj.get("client_id"),
            parameters=ParameterAssignment.from_json(obj.get("parameters", {})),
            intermediate_measurements=[Measurement.from_json(m)
                                       for m in obj.get("intermediate_measurements", [])],
            final_measurement=(Measurement.from_json(obj["final_measurement"])
                               if obj.get("final_measurement") is not None else None),
            infeasible=bool(obj.get("infeasible", False)),
            infeasibility_reason=obj.get("infeasibility_reason"),
            metadata=MetadataStore.from_json(obj.get("metadata", {})),
        )


@dataclass
class Study:
    name: str
    description: str = ""
    state: StudyState = StudyState.ACTIVE
    spec: StudySpec | None = None
    trials: list[Trial] = field(default_factory=list)

    def __post_init__(self):
        self.state = StudyState(self.state)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "description": self.description,
            "state": self.state.value,
            "spec": self.spec.to_json(),
            "trials": [t.to_json() for t in self.trials],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Study":
        return cls(
            name=obj["name"],
            description=obj.get("description", ""),
            state=StudyState(obj["state"]),
            spec=StudySpec.from_json(obj["spec"]),
            trials=[Trial.from_json(t) for t in obj.get("trials", [])],
        )


def transition_trial(trial: Trial, target: TrialState,
                     required_metrics: list[str] | None = None) -> Trial:
    """Returns a copy of ``trial`` moved along an allowed state-machine edge.

    Completing a non-infeasible trial requires a final measurement; when the
    caller knows the study's metrics it passes them so completeness is
    checked here rather than later.
    """
    target = TrialState(target)
    if (trial.state, target) not in TRIAL_EDGES:
        raise IllegalTransition(
            f"trial {trial.id}: no edge {trial.state.value} -> {target.value}")
    if target is TrialState.COMPLETED and not trial.infeasible:
        if trial.final_measurement is None:
            raise IncompleteFinalMeasurement(
                f"trial {trial.id}: completing without a final measurement")
        if required_metrics is not None:
            missing = [m for m in required_metrics
                       if m not in trial.final_measurement.metrics]
            if missing:
                raise IncompleteFinalMeasurement(
                    f"trial {trial.id}: final measurement missing metrics {missing}")
    out = copy.deepcopy(trial)
    out.state = target
    return out
