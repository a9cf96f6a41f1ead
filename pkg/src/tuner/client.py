"""Client library: sessions that request suggestions, report measurements,
complete trials, and ask for early-stopping verdicts.

A session talks through a transport. ``HttpTransport`` speaks the wire
protocol over TCP; ``InProcessTransport`` routes the same JSON requests
straight into a service object (local mode), including through a
``ServerHandle`` that a fault-injection harness can kill and restart.
Transient failures (connection refused, server down) are retried with
exponential backoff.
"""

from __future__ import annotations

import json
import time
import urllib.error
import urllib.parse
import urllib.request
from dataclasses import dataclass

from .errors import ConnectionFailed, OperationFailed, error_for_code
from .model import Measurement, Study, StudySpec, Trial
from .service import POLL_HINT_HEADER, Service, dispatch

MAX_POLL_INTERVAL = 30.0


class HttpTransport:
    def __init__(self, address: str, timeout: float = 10.0):
        self.address = address.rstrip("/")
        self.timeout = timeout

    def request(self, method: str, path: str, body: dict | None = None
                ) -> tuple[int, dict, dict]:
        data = json.dumps(body).encode("utf-8") if body is not None else None
        req = urllib.request.Request(
            self.address + path, data=data, method=method,
            headers={"Content-Type": "application/json"} if data else {})
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                payload = json.loads(resp.read().decode("utf-8"))
                return resp.status, payload, dict(resp.headers)
        except urllib.error.HTTPError as e:
            try:
                payload = json.loads(e.read().decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError):
                payload = {"error": {"code": "Internal", "message": str(e)}}
            return e.code, payload, dict(e.headers or {})
        except (urllib.error.URLError, ConnectionError, TimeoutError, OSError) as e:
            raise ConnectionFailed(f"cannot reach {self.address}: {e}") from e


class ServerHandle:
    """Mutable pointer at the currently-live in-process service, so a
    harness can kill one instance and swap in its restarted successor."""

    def __init__(self, service: Service):
        self.service = service

    def replace(self, service: Service) -> None:
        self.service = service


class InProcessTransport:
    def __init__(self, target: Service | ServerHandle):
        self._target = target

    @property
    def service(self) -> Service:
        if isinstance(self._target, ServerHandle):
            return self._target.service
        return self._target

    def request(self, method: str, path: str, body: dict | None = None
                ) -> tuple[int, dict, dict]:
        service = self.service
        if not service.alive:
            raise ConnectionFailed("server is down")
        status, payload, headers = dispatch(service, method, path, body)
        if status == 503:
            raise ConnectionFailed("server is down")
        return status, payload, headers


@dataclass
class RetryPolicy:
    max_attempts: int = 60
    base_delay: float = 0.02
    max_delay: float = 1.0

    def delay(self, attempt: int) -> float:
        return min(self.base_delay * (2.0 ** attempt), self.max_delay)


class ClientSession:
    """One study-bound client with a stable client_id."""

    def __init__(self, transport, study_name: str, client_id: str,
                 poll_interval: float = 0.05,
                 retry: RetryPolicy | None = None):
        if not client_id:
            raise ValueError("client_id must be non-empty")
        self.transport = transport
        self.study_name = study_name
        self.client_id = client_id
        self.poll_interval = poll_interval
        self.retry = retry or RetryPolicy()

    # -- plumbing -------------------------------------------------------------

    def _request(self, method: str, path: str, body: dict | None = None
                 ) -> tuple[dict, dict]:
        last_exc: Exception | None = None
        for attempt in range(self.retry.max_attempts):
            try:
                status, payload, headers = self.transport.request(method, path, body)
            except ConnectionFailed as e:
                last_exc = e
                time.sleep(self.retry.delay(attempt))
                continue
            if status == 503:  # server shutting down/restarting; retryable
                last_exc = ConnectionFailed(payload.get("error", {}).get("message", "503"))
                time.sleep(self.retry.delay(attempt))
                continue
            if status >= 400:
                err = payload.get("error", {})
                raise error_for_code(err.get("code", "TunerError"),
                                     err.get("message", f"HTTP {status}"))
            hint = headers.get(POLL_HINT_HEADER)
            if hint:
                try:
                    self.poll_interval = float(hint)
                except ValueError:
                    pass
            return payload, headers
        raise ConnectionFailed(
            f"gave up after {self.retry.max_attempts} attempts: {last_exc}")

    def _poll_operation(self, op: dict) -> dict:
        interval = max(self.poll_interval, 1e-4)
        while not op.get("done", False):
            time.sleep(interval)
            interval = min(interval * 1.5, MAX_POLL_INTERVAL)
            op, _ = self._request("GET", f"/v1/{op['name']}")
        if op.get("error") is not None:
            raise OperationFailed(op["error"])
        return op

    # -- session API ------------------------------------------------------------

    @classmethod
    def load_or_create_study(cls, transport, study_name: str, spec: StudySpec,
                             client_id: str, description: str = "",
                             retry: RetryPolicy | None = None) -> "ClientSession":
        session = cls(transport, study_name, client_id, retry=retry)
        session._request("POST", "/v1/studies", {
            "name": study_name,
            "description": description,
            "spec": spec.to_json(),
            "load_existing": True,
        })
        return session

    def get_suggestions(self, count: int = 1) -> list[Trial]:
        op, _ = self._request(
            "POST", f"/v1/studies/{self.study_name}:suggest",
            {"client_id": self.client_id, "count": count})
        op = self._poll_operation(op)
        ids = set(op.get("result") or [])
        payload, _ = self._request(
            "GET", f"/v1/studies/{self.study_name}/trials?"
                   + urllib.parse.urlencode({"client_id": self.client_id}))
        trials = [Trial.from_json(t) for t in payload["trials"] if t["id"] in ids]
        return sorted(trials, key=lambda t: t.id)

    def add_measurement(self, trial_id: int, step: int, metrics: dict[str, float],
                        elapsed_secs: float | None = None) -> Trial:
        body = Measurement(step=step, metrics=metrics,
                           elapsed_secs=elapsed_secs).to_json()
        payload, _ = self._request(
            "POST", f"/v1/studies/{self.study_name}/trials/{trial_id}:addMeasurement",
            body)
        return Trial.from_json(payload)

    def complete_trial(self, trial_id: int, metrics: dict[str, float] | None = None,
                       step: int = 0,
                       infeasibility_reason: str | None = None) -> Trial:
        if (metrics is None) == (infeasibility_reason is None):
            raise ValueError("exactly one of metrics/infeasibility_reason")
        if metrics is not None:
            body = {"final_measurement": Measurement(step=step, metrics=metrics).to_json()}
        else:
            body = {"infeasibility_reason": infeasibility_reason}
        payload, _ = self._request(
            "POST", f"/v1/studies/{self.study_name}/trials/{trial_id}:complete", body)
        return Trial.from_json(payload)

    def should_trial_stop(self, trial_id: int) -> bool:
        op, _ = self._request(
            "POST",
            f"/v1/studies/{self.study_name}/trials/{trial_id}:checkEarlyStopping")
        op = self._poll_operation(op)
        return bool(op.get("result", False))

    def get_study(self) -> Study:
        payload, _ = self._request("GET", f"/v1/studies/{self.study_name}")
        return Study.from_json(payload)

    def get_trial(self, trial_id: int) -> Trial:
        payload, _ = self._request(
            "GET", f"/v1/studies/{self.study_name}/trials/{trial_id}")
        return Trial.from_json(payload)

    def list_trials(self, states=None) -> list[Trial]:
        query = ""
        if states:
            query = "?" + urllib.parse.urlencode({"states": ",".join(sorted(states))})
        payload, _ = self._request(
            "GET", f"/v1/studies/{self.study_name}/trials{query}")
        return [Trial.from_json(t) for t in payload["trials"]]
