"""API server core: the suggest/early-stop operation lifecycle, client_id
assignment semantics, policy worker pool, and crash recovery.

Handlers are plain methods over JSON-shaped dicts; ``dispatch`` routes the
wire protocol (the HTTP layer and the in-process client transport both call
it), so every transport exercises identical request/response encodings.

Suggest semantics per (study, client_id): an existing ACTIVE assignment is
handed back as an already-done operation; an undone operation is returned
as-is (idempotent re-request); otherwise a new operation is persisted and
queued. Suggestions are materialized as trials inside the transaction that
marks the operation done, so "done" and "trials exist" are atomic.
"""

from __future__ import annotations

import logging
import queue
import re
import threading
import urllib.parse
from dataclasses import dataclass, field

from . import algorithms  # noqa: F401  (registers the built-in policies)
from .datastore import Datastore, Operation, OperationKind, canonical_json
from .errors import (AlreadyExists, InvalidSpec, NotFound, SpecMismatch,
                     StoreClosed, StudyNotActive, TunerError)
from .model import (Measurement, StudySpec, StudyState, TrialState,
                    transition_trial)
from .policies import (EarlyStopRequest, PolicySupporter, SuggestRequest,
                       policy_for, registered_policies)
from .stopping import stopping_policy_for

log = logging.getLogger(__name__)

STUDY_NAME_RE = re.compile(r"^[A-Za-z0-9._\-]+$")
POLL_HINT_HEADER = "X-Poll-Hint-Secs"


@dataclass
class ServerConfig:
    listen: str = "localhost:6006"
    store_root: str | None = None  # None -> in-memory
    workers: int = 4
    poll_hint_secs: float = 0.02
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.workers < 1:
            raise ValueError("worker pool must be >= 1")


class Service:
    """One server instance over a datastore. ``start`` spawns the worker
    pool and re-enqueues undone operations; ``kill`` simulates a crash
    (the store freezes so in-flight commits are lost, like a dead process);
    ``stop`` drains workers gracefully for clean shutdown."""

    def __init__(self, store: Datastore, config: ServerConfig | None = None):
        self.store = store
        self.config = config or ServerConfig()
        self.supporter = PolicySupporter(store)
        self._queue: queue.Queue[str] = queue.Queue()
        self._killed = threading.Event()
        self._threads: list[threading.Thread] = []
        self._suggest_locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    # -- lifecycle -----------------------------------------------------------

    def start(self) -> "Service":
        self.recover_on_startup()
        for i in range(self.config.workers):
            t = threading.Thread(target=self._worker_loop,
                                 name=f"policy-worker-{i}", daemon=True)
            t.start()
            self._threads.append(t)
        return self

    def recover_on_startup(self) -> None:
        for op in self.store.list_operations(done=False):
            self._queue.put(op.name)

    def kill(self) -> None:
        self._killed.set()
        self.store.freeze()

    def stop(self) -> None:
        self._killed.set()
        for t in self._threads:
            t.join(timeout=5.0)

    @property
    def alive(self) -> bool:
        return not self._killed.is_set()

    def _check_alive(self) -> None:
        if self._killed.is_set():
            raise StoreClosed("server is down")

    def _suggest_lock(self, study_name: str) -> threading.Lock:
        with self._locks_guard:
            return self._suggest_locks.setdefault(study_name, threading.Lock())

    # -- handlers (JSON-shaped) ------------------------------------------------

    def handle_create_study(self, body: dict) -> dict:
        self._check_alive()
        name = body.get("name", "")
        if not STUDY_NAME_RE.match(name):
            raise TunerError(f"study name {name!r} must match {STUDY_NAME_RE.pattern}")
        spec = StudySpec.from_json(body["spec"])
        if spec.algorithm not in registered_policies():
            raise InvalidSpec(
                f"algorithm {spec.algorithm!r} is not a registered policy; "
                f"choose from {registered_policies()}")
        description = body.get("description", "")
        load_existing = bool(body.get("load_existing", False))

        def fn(txn):
            if txn.study_exists(name):
                if not load_existing:
                    raise AlreadyExists(f"study {name!r} already exists")
                existing = txn.study(name)
                if canonical_json(existing.spec.to_json()) != canonical_json(spec.to_json()):
                    raise SpecMismatch(
                        f"study {name!r} exists with a different spec")
                return existing
            return txn.create_study(spec, name, description)

        return self.store.transact(fn).to_json()

    def handle_get_study(self, name: str) -> dict:
        self._check_alive()
        return self.store.get_study(name).to_json()

    def handle_list_studies(self) -> dict:
        self._check_alive()
        return {"studies": [s.to_json() for s in self.store.list_studies()]}

    def handle_delete_study(self, name: str) -> dict:
        self._check_alive()
        self.store.transact(lambda txn: txn.delete_study(name))
        return {}

    def handle_suggest_trials(self, study_name: str, body: dict) -> dict:
        self._check_alive()
        client_id = str(body.get("client_id", ""))
        count = int(body.get("count", 1))
        if not client_id:
            raise TunerError("client_id must be non-empty")
        if count < 1:
            raise TunerError("count must be >= 1")

        def fn(txn):
            study = txn.study(study_name)
            if study.state is not StudyState.ACTIVE:
                raise StudyNotActive(f"study {study_name!r} is {study.state.value}")
            assigned = txn.trials(study_name, states={TrialState.ACTIVE},
                                  client_id=client_id)
            if assigned:
                # hand the crashed-and-rejoined client its standing work; an
                # existing done operation for exactly these trials is reused
                # so replaying the request is a true no-op
                ids = [t.id for t in assigned]
                for op in reversed(txn.operations(
                        study_name, kind=OperationKind.SUGGEST, done=True,
                        client_id=client_id)):
                    if op.result == ids:
                        return op, False
                return txn.create_operation(
                    study_name, OperationKind.SUGGEST, client_id, count,
                    done=True, result=ids), False
            undone = txn.operations(study_name, kind=OperationKind.SUGGEST,
                                    done=False, client_id=client_id)
            if undone:
                return undone[0], False
            return txn.create_operation(study_name, OperationKind.SUGGEST,
                                        client_id, count), True

        op, created = self.store.transact(fn)
        if created:
            self._queue.put(op.name)
        return op.to_json()

    def handle_get_operation(self, op_name: str) -> dict:
        self._check_alive()
        return self.store.get_operation(op_name).to_json()

    def handle_add_measurement(self, study_name: str, trial_id: int,
                               body: dict) -> dict:
        self._check_alive()
        measurement = Measurement.from_json(body)
        return self.store.add_measurement(study_name, trial_id, measurement).to_json()

    def handle_complete_trial(self, study_name: str, trial_id: int,
                              body: dict) -> dict:
        self._check_alive()
        final = body.get("final_measurement")
        reason = body.get("infeasibility_reason")
        if (final is None) == (reason is None):
            raise TunerError(
                "exactly one of final_measurement/infeasibility_reason required")
        trial = self.store.complete_trial(
            study_name, trial_id,
            final_measurement=Measurement.from_json(final) if final else None,
            infeasibility_reason=reason)
        return trial.to_json()

    def handle_check_early_stopping(self, study_name: str, trial_id: int) -> dict:
        self._check_alive()

        def fn(txn):
            study = txn.study(study_name)
            trial = txn.trial(study_name, trial_id)
            mode = study.spec.automated_stopping.value
            if mode == "NONE":
                return txn.create_operation(
                    study_name, OperationKind.EARLY_STOP, str(trial_id),
                    trial_id, done=True, result=False), False
            if trial.state is TrialState.COMPLETED:
                return txn.create_operation(
                    study_name, OperationKind.EARLY_STOP, str(trial_id),
                    trial_id, done=True, result=False), False
            if trial.state is TrialState.STOPPING:
                return txn.create_operation(
                    study_name, OperationKind.EARLY_STOP, str(trial_id),
                    trial_id, done=True, result=True), False
            return txn.create_operation(study_name, OperationKind.EARLY_STOP,
                                        str(trial_id), trial_id), True

        op, created = self.store.transact(fn)
        if created:
            self._queue.put(op.name)
        return op.to_json()

    def handle_list_trials(self, study_name: str, states=None,
                           min_trial_id=None, client_id=None) -> dict:
        self._check_alive()
        trials = self.store.get_trials(study_name, states=states,
                                       min_trial_id=min_trial_id,
                                       client_id=client_id)
        return {"trials": [t.to_json() for t in trials]}

    def handle_get_trial(self, study_name: str, trial_id: int) -> dict:
        self._check_alive()
        return self.store.get_trial(study_name, trial_id).to_json()

    # -- policy workers ---------------------------------------------------------

    def _worker_loop(self) -> None:
        while not self._killed.is_set():
            try:
                op_name = self._queue.get(timeout=0.05)
            except queue.Empty:
                continue
            try:
                self._execute_operation(op_name)
            except StoreClosed:
                return  # crash simulation: abandon silently, recovery re-runs
            except Exception:
                log.exception("worker failed on operation %s", op_name)

    def _execute_operation(self, op_name: str) -> None:
        try:
            op = self.store.get_operation(op_name)
        except NotFound:
            return
        if op.done:
            return
        if op.kind is OperationKind.SUGGEST:
            with self._suggest_lock(op.study_name):
                self._run_suggest(op)
        else:
            self._run_early_stop(op)

    def _run_suggest(self, op: Operation) -> None:
        op = self.store.get_operation(op.name)
        if op.done:
            return
        try:
            study = self.store.get_study(op.study_name)
            policy = policy_for(study.spec.algorithm, self.supporter,
                                op.study_name, study.spec)
            request = SuggestRequest(study_name=op.study_name,
                                     study_config=study.spec,
                                     count=op.request_payload,
                                     client_id=op.client_id)
            decisions = policy.suggest(request)
        except StoreClosed:
            raise
        except Exception as e:  # policy failure becomes the operation error
            self._fail_operation(op.name, e)
            return

        def fn(txn):
            current = txn.operation(op.name)
            if current.done:
                return
            ids = []
            for i, assignment in enumerate(decisions.suggestions):
                metadata = None
                if decisions.suggestion_metadata:
                    metadata = decisions.suggestion_metadata[i]
                trial = txn.create_trial(op.study_name, assignment,
                                         client_id=op.client_id,
                                         metadata=metadata)
                ids.append(trial.id)
            txn.put_study_metadata(op.study_name, decisions.study_metadata)
            txn.complete_operation(op.name, result=ids)

        try:
            self.store.transact(fn)
        except StoreClosed:
            raise
        except Exception as e:
            self._fail_operation(op.name, e)

    def _run_early_stop(self, op: Operation) -> None:
        try:
            study = self.store.get_study(op.study_name)
            policy = stopping_policy_for(study.spec.automated_stopping,
                                         self.supporter)
            request = EarlyStopRequest(study_name=op.study_name,
                                       study_config=study.spec,
                                       trial_id=op.request_payload)
            decision = policy.early_stop(request)
        except StoreClosed:
            raise
        except Exception as e:
            self._fail_operation(op.name, e)
            return

        def fn(txn):
            current = txn.operation(op.name)
            if current.done:
                return
            if decision.should_stop:
                trial = txn.trial(op.study_name, op.request_payload)
                if trial.state is TrialState.ACTIVE:
                    txn.update_trial(op.study_name,
                                     transition_trial(trial, TrialState.STOPPING))
            txn.complete_operation(op.name, result=bool(decision.should_stop))

        try:
            self.store.transact(fn)
        except StoreClosed:
            raise
        except Exception as e:
            self._fail_operation(op.name, e)

    def _fail_operation(self, op_name: str, exc: Exception) -> None:
        message = f"{type(exc).__name__}: {exc}"
        log.warning("operation %s failed: %s", op_name, message)
        try:
            self.store.complete_operation(op_name, error=message)
        except StoreClosed:
            raise
        except Exception:
            log.exception("could not record failure of %s", op_name)


# -- wire-protocol router -------------------------------------------------------

_TRIAL_VERB_RE = re.compile(
    r"^/v1/studies/(?P<study>[^/:]+)/trials/(?P<id>\d+):(?P<verb>\w+)$")


def dispatch(service: Service, method: str, path: str,
             body: dict | None) -> tuple[int, dict, dict[str, str]]:
    """Routes one request; returns (status, json body, headers)."""
    headers = {POLL_HINT_HEADER: format(service.config.poll_hint_secs, "g")}
    parsed = urllib.parse.urlparse(path)
    route = urllib.parse.unquote(parsed.path)
    query = urllib.parse.parse_qs(parsed.query)
    try:
        return 200, _route(service, method.upper(), route, query, body or {}), headers
    except TunerError as e:
        return e.http_status, {"error": {"code": e.code, "message": str(e)}}, headers
    except Exception as e:  # defensive: unexpected bugs become 500s, not hangs
        log.exception("unhandled error for %s %s", method, path)
        return 500, {"error": {"code": "Internal", "message": str(e)}}, headers


def _route(service: Service, method: str, route: str, query: dict,
           body: dict) -> dict:
    if route == "/v1/studies":
        if method == "POST":
            return service.handle_create_study(body)
        if method == "GET":
            return service.handle_list_studies()
    if route.startswith("/v1/operations/") and method == "GET":
        return service.handle_get_operation(route[len("/v1/"):])

    m = _TRIAL_VERB_RE.match(route)
    if m and method == "POST":
        study, trial_id, verb = m["study"], int(m["id"]), m["verb"]
        if verb == "addMeasurement":
            return service.handle_add_measurement(study, trial_id, body)
        if verb == "complete":
            return service.handle_complete_trial(study, trial_id, body)
        if verb == "checkEarlyStopping":
            return service.handle_check_early_stopping(study, trial_id)
        raise NotFound(f"unknown trial verb {verb!r}")

    m = re.match(r"^/v1/studies/(?P<study>[^/:]+):suggest$", route)
    if m and method == "POST":
        return service.handle_suggest_trials(m["study"], body)

    m = re.match(r"^/v1/studies/(?P<study>[^/:]+)/trials$", route)
    if m and method == "GET":
        states = None
        if query.get("states") and query["states"][0]:
            states = {s for s in query["states"][0].split(",") if s}
        min_trial_id = (int(query["min_trial_id"][0])
                        if query.get("min_trial_id") and query["min_trial_id"][0] else None)
        client_id = (query["client_id"][0]
                     if query.get("client_id") and query["client_id"][0] else None)
        return service.handle_list_trials(m["study"], states=states,
                                          min_trial_id=min_trial_id,
                                          client_id=client_id)

    m = re.match(r"^/v1/studies/(?P<study>[^/:]+)/trials/(?P<id>\d+)$", route)
    if m and method == "GET":
        return service.handle_get_trial(m["study"], int(m["id"]))

    m = re.match(r"^/v1/studies/(?P<study>[^/:]+)$", route)
    if m:
        if method == "GET":
            return service.handle_get_study(m["study"])
        if method == "DELETE":
            return service.handle_delete_study(m["study"])

    raise NotFound(f"no route for {method} {route}")
