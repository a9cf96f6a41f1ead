"""Developer-facing policy API.

A ``Policy`` is instantiated per operation, handed a ``PolicySupporter`` to
read trials/configs and write metadata, and returns suggestion or
early-stopping decisions. Stateful algorithms implement
``SerializableDesigner`` and are wrapped by ``SerializableDesignerPolicy``,
which persists designer state in study metadata (namespace
``designer:<algorithm>``, keys ``state`` and ``last_seen_id``) so each
operation only has to feed the designer trials it has not seen yet.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Protocol, Type

from .datastore import Datastore
from .errors import HarmlessDecodeError
from .model import MetadataStore, StudySpec, Trial, TrialState
from .search_space import ParameterAssignment


@dataclass
class SuggestRequest:
    study_name: str
    study_config: StudySpec
    count: int
    client_id: str

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("count must be >= 1")


@dataclass
class SuggestDecisions:
    """Assignments to materialize as trials, plus metadata writes that must
    land in the same transaction as the new trials."""

    suggestions: list[ParameterAssignment]
    study_metadata: list[tuple[str, str, str]] = field(default_factory=list)
    # aligned with suggestions; entries seed each new trial's metadata
    suggestion_metadata: list[MetadataStore] | None = None


@dataclass
class EarlyStopRequest:
    study_name: str
    study_config: StudySpec
    trial_id: int


@dataclass
class EarlyStopDecision:
    should_stop: bool
    reason: str = ""


class PolicySupporter:
    """Mini-client a policy uses to read committed state and write metadata."""

    def __init__(self, store: Datastore):
        self._store = store

    def get_study_config(self, study_name: str) -> StudySpec:
        return self._store.get_study(study_name).spec

    def get_trials(self, study_name: str, states=None, min_trial_id=None,
                   client_id=None) -> list[Trial]:
        return self._store.get_trials(study_name, states=states,
                                      min_trial_id=min_trial_id,
                                      client_id=client_id)

    def get_trial(self, study_name: str, trial_id: int) -> Trial:
        return self._store.get_trial(study_name, trial_id)

    def update_metadata(self, study_name: str,
                        study_entries: Iterable[tuple[str, str, str]] = (),
                        trial_entries: dict[int, Iterable[tuple[str, str, str]]] | None = None):
        """Applies study-level and trial-level metadata writes atomically."""

        def fn(txn):
            txn.put_study_metadata(study_name, study_entries)
            for trial_id, entries in (trial_entries or {}).items():
                trial = txn.trial(study_name, trial_id)
                for ns, key, value in entries:
                    trial.metadata.put(ns, key, value)
                txn.update_trial(study_name, trial)

        self._store.transact(fn)


class Policy:
    """One instance serves exactly one suggest or early-stop operation."""

    def __init__(self, supporter: PolicySupporter):
        self.supporter = supporter

    def suggest(self, request: SuggestRequest) -> SuggestDecisions:
        raise NotImplementedError

    def early_stop(self, request: EarlyStopRequest) -> EarlyStopDecision:
        return EarlyStopDecision(False, "policy has no early-stopping rule")


class SerializableDesigner(Protocol):
    """Stateful algorithm whose full state round-trips through metadata."""

    def suggest(self, count: int) -> list[ParameterAssignment]: ...

    def update(self, delta: list[Trial]) -> None: ...

    def dump(self) -> dict[str, str]: ...


DESIGNER_NAMESPACE = "designer:{algorithm}"
SEED_NAMESPACE = "policy"
SEED_KEY = "seed"


def study_seed(spec: StudySpec, study_name: str) -> int:
    """Base RNG seed: explicit metadata override or a stable hash of the
    study name, so reruns of the same study reproduce."""
    raw = spec.metadata.get(SEED_NAMESPACE, SEED_KEY)
    if raw is not None:
        try:
            return int(raw)
        except ValueError:
            pass
    return zlib.crc32(study_name.encode("utf-8")) & 0x7FFFFFFF


class SerializableDesignerPolicy(Policy):
    """Wraps a designer: recover state from metadata (or rebuild and replay
    everything on HarmlessDecodeError), feed only unseen completed trials,
    suggest, and hand back the new dump to be committed atomically with the
    suggestions."""

    def __init__(self, supporter: PolicySupporter, algorithm: str,
                 designer_cls: Type, seed: int | None = None):
        super().__init__(supporter)
        self.algorithm = algorithm
        self.designer_cls = designer_cls
        self.seed = seed

    def _namespace(self) -> str:
        return DESIGNER_NAMESPACE.format(algorithm=self.algorithm)

    def suggest(self, request: SuggestRequest) -> SuggestDecisions:
        spec = request.study_config
        ns = self._namespace()
        fragment = spec.metadata.namespace(ns)
        designer = None
        last_seen = 0
        if "state" in fragment:
            try:
                designer = self.designer_cls.recover(spec, fragment)
                last_seen = int(fragment["last_seen_id"])
            except (HarmlessDecodeError, KeyError, ValueError):
                designer = None  # rebuild below and replay all completed trials
        if designer is None:
            seed = self.seed if self.seed is not None else study_seed(spec, request.study_name)
            designer = self.designer_cls.fresh(spec, seed)
            last_seen = 0
        delta = self.supporter.get_trials(
            request.study_name, states={TrialState.COMPLETED},
            min_trial_id=last_seen + 1)
        designer.update(delta)
        new_last_seen = max((t.id for t in delta), default=last_seen)
        suggestions = designer.suggest(request.count)
        writes = [(ns, key, value) for key, value in designer.dump().items()]
        writes.append((ns, "last_seen_id", str(new_last_seen)))
        return SuggestDecisions(suggestions=suggestions, study_metadata=writes)


#: algorithm wire string -> factory(supporter, study_name, study_spec) -> Policy
_POLICY_REGISTRY: dict[str, Callable[[PolicySupporter, str, StudySpec], Policy]] = {}


def register_policy(name: str, factory) -> None:
    _POLICY_REGISTRY[name] = factory


def policy_for(algorithm: str, supporter: PolicySupporter, study_name: str,
               study_spec: StudySpec) -> Policy:
    try:
        factory = _POLICY_REGISTRY[algorithm]
    except KeyError:
        raise KeyError(f"no policy registered for algorithm {algorithm!r}")
    return factory(supporter, study_name, study_spec)


def registered_policies() -> list[str]:
    return sorted(_POLICY_REGISTRY)


def guard_early_stop(supporter: PolicySupporter, request: EarlyStopRequest,
                     decide) -> EarlyStopDecision:
    """Shared wrapper: decisions for non-ACTIVE trials are a quiet 'no'
    (clients may race with completion), and rules that cannot run for lack
    of measurements decline rather than fail."""
    trial = supporter.get_trial(request.study_name, request.trial_id)
    if trial.state is TrialState.COMPLETED:
        return EarlyStopDecision(False, "trial already completed")
    if trial.state is TrialState.STOPPING:
        return EarlyStopDecision(True, "stop already requested")
    if not trial.intermediate_measurements:
        return EarlyStopDecision(False, "trial has reported no measurements")
    return decide(trial)
