"""Crash-recoverable storage of studies, trials, and operations.

All mutation goes through ``transact``: a transaction function reads
committed state, validates, and emits events; on success the events are
appended to the write-ahead log as a single line and only then applied
in memory, so a commit is all-or-nothing. Reads return deep copies of
the latest committed state.

On-disk layout (persistent backend):
    <root>/snapshot.json   {"seq": n, "state": {...}, "crc32": hex}
    <root>/wal.jsonl       one line per commit:
                           {"seq": n, "tx": {"events": [...]}, "crc32": hex}

Restore = snapshot + replay of WAL lines with seq beyond the snapshot.
A final WAL line without a trailing newline is a torn write from a crash
and is dropped; any complete line that fails its checksum is corruption.
"""

from __future__ import annotations

import copy
import json
import os
import threading
import zlib
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable

from .errors import (AlreadyDone, AlreadyExists, CorruptStore, InvalidParameters,
                     MissingMetrics, NonMonotoneStep, NotFound, StoreClosed,
                     StudyNotActive, TrialNotActive)
from .model import (Measurement, MetadataStore, Study, StudySpec, StudyState,
                    Trial, TrialState, transition_trial)
from .search_space import ParameterAssignment, validate_assignment


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _crc(payload: dict) -> str:
    return format(zlib.crc32(canonical_json(payload).encode("utf-8")), "08x")


class OperationKind(str, Enum):
    SUGGEST = "SUGGEST"
    EARLY_STOP = "EARLY_STOP"


@dataclass
class Operation:
    """Persisted handle for one long-running suggest/early-stop computation.

    ``client_id`` holds the requesting client for SUGGEST and the target
    trial id (as a string) for EARLY_STOP; ``request_payload`` is the
    suggestion count or the trial id respectively.
    """

    name: str
    kind: OperationKind
    done: bool
    study_name: str
    client_id: str
    request_payload: int
    result: list[int] | bool | None = None
    error: str | None = None

    def __post_init__(self):
        self.kind = OperationKind(self.kind)

    def to_json(self) -> dict:
        obj: dict = {
            "name": self.name,
            "kind": self.kind.value,
            "done": self.done,
            "study_name": self.study_name,
            "client_id": self.client_id,
            "request_payload": self.request_payload,
        }
        if self.result is not None:
            obj["result"] = self.result
        if self.error is not None:
            obj["error"] = self.error
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "Operation":
        return cls(
            name=obj["name"],
            kind=OperationKind(obj["kind"]),
            done=bool(obj["done"]),
            study_name=obj["study_name"],
            client_id=obj["client_id"],
            request_payload=obj["request_payload"],
            result=obj.get("result"),
            error=obj.get("error"),
        )


class _State:
    """Mutable in-memory image; touched only while the store lock is held."""

    def __init__(self):
        self.studies: dict[str, Study] = {}
        self.operations: dict[str, Operation] = {}

    def to_json(self) -> dict:
        return {
            "studies": [self.studies[k].to_json() for k in sorted(self.studies)],
            "operations": [self.operations[k].to_json() for k in sorted(self.operations)],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "_State":
        state = cls()
        for sj in obj.get("studies", []):
            study = Study.from_json(sj)
            state.studies[study.name] = study
        for oj in obj.get("operations", []):
            op = Operation.from_json(oj)
            state.operations[op.name] = op
        return state


def _apply_event(state: _State, ev: dict) -> None:
    kind = ev["type"]
    if kind == "study_created":
        state.studies[ev["name"]] = Study(
            name=ev["name"], description=ev["description"],
            state=StudyState.ACTIVE, spec=StudySpec.from_json(ev["spec"]), trials=[])
    elif kind == "study_state":
        state.studies[ev["study"]].state = StudyState(ev["state"])
    elif kind == "study_metadata":
        md = state.studies[ev["study"]].spec.metadata
        for ns, key, value in ev["entries"]:
            md.put(ns, key, value)
    elif kind == "study_deleted":
        state.studies.pop(ev["study"], None)
        prefix = f"operations/{ev['study']}/"
        for name in [n for n in state.operations if n.startswith(prefix)]:
            del state.operations[name]
    elif kind == "trial_created":
        state.studies[ev["study"]].trials.append(Trial.from_json(ev["trial"]))
    elif kind == "trial_updated":
        trial = Trial.from_json(ev["trial"])
        trials = state.studies[ev["study"]].trials
        trials[trial.id - 1] = trial  # ids are dense 1..N
    elif kind == "op_created" or kind == "op_updated":
        op = Operation.from_json(ev["op"])
        state.operations[op.name] = op
    else:
        raise CorruptStore(f"unknown event type {kind!r}")


class Transaction:
    """Validating event emitter handed to ``transact`` functions.

    Reads see committed state only; writes become visible atomically when
    the transaction function returns.
    """

    def __init__(self, state: _State):
        self._state = state
        self.events: list[dict] = []
        self._pending_trials: dict[str, int] = {}  # study -> trials created here
        self._pending_ops: dict[str, int] = {}

    # -- reads (committed state; deep copies) -------------------------------

    def _study(self, name: str) -> Study:
        study = self._state.studies.get(name)
        if study is None:
            raise NotFound(f"study {name!r} not found")
        return study

    def study(self, name: str) -> Study:
        return copy.deepcopy(self._study(name))

    def study_exists(self, name: str) -> bool:
        return name in self._state.studies

    def trial(self, study_name: str, trial_id: int) -> Trial:
        study = self._study(study_name)
        if not 1 <= trial_id <= len(study.trials):
            raise NotFound(f"trial {trial_id} not found in study {study_name!r}")
        return copy.deepcopy(study.trials[trial_id - 1])

    def trials(self, study_name: str, states=None, min_trial_id=None,
               client_id=None) -> list[Trial]:
        study = self._study(study_name)
        return [copy.deepcopy(t) for t in study.trials
                if _trial_matches(t, states, min_trial_id, client_id)]

    def operation(self, name: str) -> Operation:
        op = self._state.operations.get(name)
        if op is None:
            raise NotFound(f"operation {name!r} not found")
        return copy.deepcopy(op)

    def operations(self, study_name=None, kind=None, done=None,
                   client_id=None) -> list[Operation]:
        out = []
        for name in sorted(self._state.operations):
            op = self._state.operations[name]
            if study_name is not None and op.study_name != study_name:
                continue
            if kind is not None and op.kind != OperationKind(kind):
                continue
            if done is not None and op.done != done:
                continue
            if client_id is not None and op.client_id != client_id:
                continue
            out.append(copy.deepcopy(op))
        return out

    # -- writes --------------------------------------------------------------

    def create_study(self, spec: StudySpec, name: str, description: str = "") -> Study:
        if name in self._state.studies or any(
                ev["type"] == "study_created" and ev["name"] == name
                for ev in self.events):
            raise AlreadyExists(f"study {name!r} already exists")
        spec_json = spec.to_json()
        self.events.append({"type": "study_created", "name": name,
                            "description": description, "spec": spec_json})
        return Study(name=name, description=description, state=StudyState.ACTIVE,
                     spec=StudySpec.from_json(spec_json), trials=[])

    def set_study_state(self, study_name: str, state: StudyState) -> None:
        self._study(study_name)
        self.events.append({"type": "study_state", "study": study_name,
                            "state": StudyState(state).value})

    def put_study_metadata(self, study_name: str,
                           entries: Iterable[tuple[str, str, str]]) -> None:
        entries = [[ns, k, v] for ns, k, v in entries]
        if not entries:
            return
        self._study(study_name)
        self.events.append({"type": "study_metadata", "study": study_name,
                            "entries": entries})

    def delete_study(self, study_name: str) -> None:
        self._study(study_name)
        self.events.append({"type": "study_deleted", "study": study_name})

    def create_trial(self, study_name: str, parameters: ParameterAssignment,
                     client_id: str | None = None,
                     metadata: MetadataStore | None = None) -> Trial:
        study = self._study(study_name)
        if study.state is not StudyState.ACTIVE:
            raise StudyNotActive(f"study {study_name!r} is {study.state.value}")
        violations = validate_assignment(study.spec.search_space, parameters)
        if violations:
            raise InvalidParameters(
                f"invalid parameters for study {study_name!r}: "
                + "; ".join(f"{v.kind}({v.parameter})" for v in violations),
                violations)
        next_id = len(study.trials) + self._pending_trials.get(study_name, 0) + 1
        self._pending_trials[study_name] = self._pending_trials.get(study_name, 0) + 1
        trial = Trial(id=next_id, state=TrialState.ACTIVE, client_id=client_id,
                      parameters=ParameterAssignment(dict(parameters.values)),
                      metadata=metadata or MetadataStore())
        self.events.append({"type": "trial_created", "study": study_name,
                            "trial": trial.to_json()})
        return copy.deepcopy(trial)

    def update_trial(self, study_name: str, trial: Trial) -> None:
        study = self._study(study_name)
        if not 1 <= trial.id <= len(study.trials):
            raise NotFound(f"trial {trial.id} not found in study {study_name!r}")
        self.events.append({"type": "trial_updated", "study": study_name,
                            "trial": trial.to_json()})

    def create_operation(self, study_name: str, kind: OperationKind,
                         client_id: str, request_payload: int,
                         done: bool = False, result=None,
                         error: str | None = None) -> Operation:
        self._study(study_name)
        existing = sum(1 for n in self._state.operations
                       if n.startswith(f"operations/{study_name}/"))
        number = existing + self._pending_ops.get(study_name, 0) + 1
        self._pending_ops[study_name] = self._pending_ops.get(study_name, 0) + 1
        op = Operation(name=f"operations/{study_name}/{number}",
                       kind=OperationKind(kind), done=done, study_name=study_name,
                       client_id=client_id, request_payload=request_payload,
                       result=result, error=error)
        self.events.append({"type": "op_created", "op": op.to_json()})
        return copy.deepcopy(op)

    def complete_operation(self, op_name: str, result=None,
                           error: str | None = None) -> Operation:
        op = self.operation(op_name)
        if op.done:
            raise AlreadyDone(f"operation {op_name!r} already completed")
        if (result is None) == (error is None):
            raise ValueError("exactly one of result/error must be given")
        op.done = True
        op.result = result
        op.error = error
        self.events.append({"type": "op_updated", "op": op.to_json()})
        return op


def _trial_matches(trial: Trial, states, min_trial_id, client_id) -> bool:
    if states is not None and trial.state not in {TrialState(s) for s in states}:
        return False
    if min_trial_id is not None and trial.id < min_trial_id:
        return False
    if client_id is not None and trial.client_id != client_id:
        return False
    return True


class Datastore:
    """In-memory backend; the persistent subclass adds the WAL and snapshot."""

    def __init__(self):
        self._lock = threading.RLock()
        self._state = _State()
        self._seq = 0
        self._frozen = False

    def freeze(self) -> None:
        """Rejects all further commits; models abrupt process death for the
        fault-injection harness (reads stay available)."""
        with self._lock:
            self._frozen = True

    # -- transactions --------------------------------------------------------

    def transact(self, fn: Callable[[Transaction], object]):
        with self._lock:
            if self._frozen:
                raise StoreClosed("datastore is frozen")
            txn = Transaction(self._state)
            result = fn(txn)
            if txn.events:
                self._seq += 1
                self._commit_hook(self._seq, txn.events)
                for ev in txn.events:
                    _apply_event(self._state, ev)
            return result

    def _commit_hook(self, seq: int, events: list[dict]) -> None:
        pass  # in-memory backend has no log

    # -- spec-surface convenience wrappers ------------------------------------

    def create_study(self, spec: StudySpec, name: str, description: str = "") -> Study:
        return self.transact(lambda t: t.create_study(spec, name, description))

    def create_trial(self, study_name: str, parameters: ParameterAssignment,
                     client_id: str | None = None) -> Trial:
        return self.transact(lambda t: t.create_trial(study_name, parameters, client_id))

    def create_operation(self, study_name: str, kind: OperationKind,
                         client_id: str, request_payload: int) -> Operation:
        return self.transact(
            lambda t: t.create_operation(study_name, kind, client_id, request_payload))

    def complete_operation(self, op_name: str, result=None,
                           error: str | None = None) -> Operation:
        return self.transact(lambda t: t.complete_operation(op_name, result, error))

    def add_measurement(self, study_name: str, trial_id: int,
                        measurement: Measurement) -> Trial:
        def fn(txn: Transaction) -> Trial:
            trial = txn.trial(study_name, trial_id)
            if trial.state not in (TrialState.ACTIVE, TrialState.STOPPING):
                raise TrialNotActive(
                    f"trial {trial_id} is {trial.state.value}; cannot add measurements")
            if trial.intermediate_measurements:
                last = trial.intermediate_measurements[-1].step
                if measurement.step <= last:
                    raise NonMonotoneStep(
                        f"step {measurement.step} not after step {last}")
            trial.intermediate_measurements.append(measurement)
            txn.update_trial(study_name, trial)
            return trial

        return self.transact(fn)

    def complete_trial(self, study_name: str, trial_id: int,
                       final_measurement: Measurement | None = None,
                       infeasibility_reason: str | None = None) -> Trial:
        if (final_measurement is None) == (infeasibility_reason is None):
            raise ValueError("exactly one of final_measurement/infeasibility_reason")

        def fn(txn: Transaction) -> Trial:
            trial = txn.trial(study_name, trial_id)
            study = txn.study(study_name)
            if trial.state is TrialState.COMPLETED:
                # idempotent when the payload is byte-identical to the outcome
                same = (
                    (infeasibility_reason is not None and trial.infeasible
                     and trial.infeasibility_reason == infeasibility_reason)
                    or (final_measurement is not None and not trial.infeasible
                        and trial.final_measurement is not None
                        and trial.final_measurement.to_json() == final_measurement.to_json())
                )
                if same:
                    return trial
                raise TrialNotActive(
                    f"trial {trial_id} already completed with a different payload")
            if infeasibility_reason is not None:
                trial.infeasible = True
                trial.infeasibility_reason = infeasibility_reason
            else:
                missing = [m for m in study.spec.metric_names()
                           if m not in final_measurement.metrics]
                if missing:
                    raise MissingMetrics(
                        f"final measurement missing metrics {missing}")
                trial.final_measurement = final_measurement
            done = transition_trial(trial, TrialState.COMPLETED,
                                    required_metrics=study.spec.metric_names())
            txn.update_trial(study_name, done)
            return done

        return self.transact(fn)

    # -- reads ----------------------------------------------------------------

    def get_study(self, name: str) -> Study:
        with self._lock:
            study = self._state.studies.get(name)
            if study is None:
                raise NotFound(f"study {name!r} not found")
            return copy.deepcopy(study)

    def list_studies(self) -> list[Study]:
        with self._lock:
            return [copy.deepcopy(self._state.studies[k])
                    for k in sorted(self._state.studies)]

    def get_trial(self, study_name: str, trial_id: int) -> Trial:
        with self._lock:
            return Transaction(self._state).trial(study_name, trial_id)

    def get_trials(self, study_name: str, states=None, min_trial_id=None,
                   client_id=None) -> list[Trial]:
        with self._lock:
            return Transaction(self._state).trials(
                study_name, states=states, min_trial_id=min_trial_id,
                client_id=client_id)

    def get_operation(self, name: str) -> Operation:
        with self._lock:
            return Transaction(self._state).operation(name)

    def list_operations(self, study_name=None, kind=None, done=None,
                        client_id=None) -> list[Operation]:
        with self._lock:
            return Transaction(self._state).operations(
                study_name=study_name, kind=kind, done=done, client_id=client_id)

    def state_json(self) -> dict:
        with self._lock:
            return self._state.to_json()


SNAPSHOT_FILE = "snapshot.json"
WAL_FILE = "wal.jsonl"


class PersistentDatastore(Datastore):
    """WAL-backed store rooted at a directory; restores itself on open."""

    def __init__(self, root: str, fsync: bool = False):
        super().__init__()
        self.root = str(root)
        self._fsync = fsync
        os.makedirs(self.root, exist_ok=True)
        self._load()
        self._wal = open(os.path.join(self.root, WAL_FILE), "a", encoding="utf-8")

    @classmethod
    def restore_from_disk(cls, root: str, fsync: bool = False) -> "PersistentDatastore":
        return cls(root, fsync=fsync)

    def close(self) -> None:
        with self._lock:
            if not self._wal.closed:
                self._wal.close()

    def freeze(self) -> None:
        super().freeze()
        self.close()

    def _commit_hook(self, seq: int, events: list[dict]) -> None:
        payload = {"seq": seq, "tx": {"events": events}}
        line = canonical_json({**payload, "crc32": _crc(payload)})
        try:
            self._wal.write(line + "\n")
            self._wal.flush()
        except ValueError as e:  # file closed by freeze(): the process "died"
            raise StoreClosed(str(e)) from e
        if self._fsync:
            os.fsync(self._wal.fileno())

    def snapshot_to_disk(self, path: str | None = None) -> str:
        """Writes a full snapshot and truncates the WAL; returns the path."""
        root = path or self.root
        os.makedirs(root, exist_ok=True)
        snap_path = os.path.join(root, SNAPSHOT_FILE)
        with self._lock:
            payload = {"seq": self._seq, "state": self._state.to_json()}
            blob = canonical_json({**payload, "crc32": _crc(payload)})
            tmp = snap_path + ".tmp"
            with open(tmp, "w", encoding="utf-8") as f:
                f.write(blob)
                f.flush()
                os.fsync(f.fileno())
            os.replace(tmp, snap_path)
            if root == self.root:
                self._wal.close()
                self._wal = open(os.path.join(self.root, WAL_FILE), "w", encoding="utf-8")
        return snap_path

    def _load(self) -> None:
        snap_path = os.path.join(self.root, SNAPSHOT_FILE)
        if os.path.exists(snap_path):
            with open(snap_path, "r", encoding="utf-8") as f:
                blob = f.read()
            try:
                obj = json.loads(blob)
            except json.JSONDecodeError as e:
                raise CorruptStore(f"snapshot is not valid JSON: {e}") from e
            crc = obj.pop("crc32", None)
            if crc != _crc(obj):
                raise CorruptStore("snapshot checksum mismatch")
            self._state = _State.from_json(obj["state"])
            self._seq = int(obj["seq"])
        wal_path = os.path.join(self.root, WAL_FILE)
        if os.path.exists(wal_path):
            with open(wal_path, "rb") as f:
                raw = f.read()
            for payload in _parse_wal(raw):
                seq = int(payload["seq"])
                if seq <= self._seq:
                    continue  # stale lines from before the snapshot
                if seq != self._seq + 1:
                    raise CorruptStore(
                        f"WAL gap: expected seq {self._seq + 1}, found {seq}")
                for ev in payload["tx"]["events"]:
                    _apply_event(self._state, ev)
                self._seq = seq


def _parse_wal(raw: bytes) -> Iterable[dict]:
    """Yields verified WAL records. A torn (unterminated) final line is
    dropped; any terminated line that fails parsing or CRC is corruption."""
    if not raw:
        return
    # Splitting on newline leaves b"" last iff the file ends cleanly; an
    # unterminated tail is a crash mid-append and never committed.
    lines = raw.split(b"\n")
    for line in lines[:-1]:
        yield _parse_wal_line(line)


def _parse_wal_line(line: bytes) -> dict:
    try:
        obj = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptStore(f"WAL line is not valid JSON: {e}") from e
    crc = obj.pop("crc32", None)
    if crc != _crc(obj):
        raise CorruptStore("WAL line checksum mismatch")
    return obj
