"""Wire-level tests over a real TCP listener: the HTTP adapter must behave
exactly like the in-process dispatch, including error envelopes and the
poll-hint header."""

import json
import urllib.error
import urllib.request

import pytest

from tuner.client import ClientSession, HttpTransport
from tuner.datastore import Datastore
from tuner.model import Goal, MetricSpec, StudySpec, TrialState
from tuner.rest import RestServer, parse_listen
from tuner.search_space import ParameterSpec
from tuner.service import POLL_HINT_HEADER, ServerConfig, Service


def make_spec():
    return StudySpec(
        search_space=[ParameterSpec.double("x", 0.0, 1.0)],
        metrics=[MetricSpec("objective", Goal.MAXIMIZE)],
        algorithm="RANDOM_SEARCH")


@pytest.fixture
def server():
    service = Service(Datastore(), ServerConfig(workers=2,
                                                poll_hint_secs=0.001)).start()
    rest = RestServer(service, "localhost", 0).start()
    yield rest
    rest.shutdown()
    service.stop()


def http_json(method, url, body=None):
    data = json.dumps(body).encode() if body is not None else None
    req = urllib.request.Request(url, data=data, method=method,
                                 headers={"Content-Type": "application/json"})
    with urllib.request.urlopen(req, timeout=5) as resp:
        return resp.status, json.loads(resp.read().decode()), dict(resp.headers)


class TestHttpWire:
    def test_create_get_list_delete(self, server):
        base = server.address
        status, study, headers = http_json("POST", f"{base}/v1/studies", {
            "name": "s", "spec": make_spec().to_json()})
        assert status == 200
        assert study["state"] == "ACTIVE"
        assert POLL_HINT_HEADER in headers
        status, got, _ = http_json("GET", f"{base}/v1/studies/s")
        assert got["name"] == "s"
        status, listing, _ = http_json("GET", f"{base}/v1/studies")
        assert [s["name"] for s in listing["studies"]] == ["s"]
        status, _, _ = http_json("DELETE", f"{base}/v1/studies/s")
        assert status == 200
        with pytest.raises(urllib.error.HTTPError) as exc:
            http_json("GET", f"{base}/v1/studies/s")
        assert exc.value.code == 404

    def test_error_envelope_shape(self, server):
        with pytest.raises(urllib.error.HTTPError) as exc:
            http_json("GET", f"{server.address}/v1/studies/absent")
        body = json.loads(exc.value.read().decode())
        assert body["error"]["code"] == "NotFound"
        assert "absent" in body["error"]["message"]

    def test_malformed_body_is_400(self, server):
        req = urllib.request.Request(
            f"{server.address}/v1/studies", data=b"{nope",
            method="POST", headers={"Content-Type": "application/json"})
        with pytest.raises(urllib.error.HTTPError) as exc:
            urllib.request.urlopen(req, timeout=5)
        assert exc.value.code == 400

    def test_full_loop_over_http(self, server):
        transport = HttpTransport(server.address)
        session = ClientSession.load_or_create_study(
            transport, "s", make_spec(), "w0")
        for _ in range(3):
            trial = session.get_suggestions()[0]
            session.add_measurement(trial.id, step=1,
                                    metrics={"objective": 0.5})
            session.complete_trial(trial.id, metrics={"objective": 0.5})
        study = session.get_study()
        assert len(study.trials) == 3
        assert all(t.state is TrialState.COMPLETED for t in study.trials)

    def test_operation_resource_name_is_url(self, server):
        base = server.address
        http_json("POST", f"{base}/v1/studies", {"name": "s",
                                                 "spec": make_spec().to_json()})
        _, op, _ = http_json("POST", f"{base}/v1/studies/s:suggest",
                             {"client_id": "w", "count": 1})
        assert op["name"].startswith("operations/s/")
        status, got, _ = http_json("GET", f"{base}/v1/{op['name']}")
        assert status == 200 and got["name"] == op["name"]

    def test_restart_on_same_port_keeps_state(self, tmp_path):
        from tuner.datastore import PersistentDatastore
        config = ServerConfig(workers=1, poll_hint_secs=0.001)
        store = PersistentDatastore(tmp_path / "db")
        service = Service(store, config).start()
        rest = RestServer(service, "localhost", 0).start()
        port = rest.port
        transport = HttpTransport(rest.address)
        session = ClientSession.load_or_create_study(
            transport, "s", make_spec(), "w")
        trial = session.get_suggestions()[0]
        rest.shutdown()
        service.kill()

        restored = PersistentDatastore.restore_from_disk(tmp_path / "db")
        service2 = Service(restored, config).start()
        rest2 = RestServer(service2, "localhost", port).start()
        try:
            again = session.get_suggestions()[0]
            assert again.id == trial.id  # same assignment after the restart
        finally:
            rest2.shutdown()
            service2.stop()


def test_parse_listen():
    assert parse_listen("localhost:6006") == ("localhost", 6006)
    assert parse_listen(":8080") == ("localhost", 8080)
    assert parse_listen("0.0.0.0:9000") == ("0.0.0.0", 9000)
