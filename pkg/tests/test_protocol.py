import io
import json
import sys
import threading

import numpy as np
import pytest

from conftest import CRITERION_TASK
from promptuq.blackbox import task_config_to_dict
from promptuq.errors import AccessDeniedError, ProtocolError
from promptuq.protocol import ExternalSimulator, serve, serve_tcp


@pytest.fixture(scope="module")
def task_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("task") / "task.json"
    path.write_text(json.dumps(task_config_to_dict(CRITERION_TASK)))
    return str(path)


@pytest.fixture(scope="module")
def served(task_file):
    client = ExternalSimulator.spawn(
        [sys.executable, "-m", "promptuq", "serve", "--task", task_file])
    yield client
    client.close()


def test_handshake_fields(served, criterion_task):
    assert served.classes == criterion_task.config.classes
    assert served.feature_dim == criterion_task.config.feature_dim
    assert served.prompt_dim == criterion_task.config.prompt_dim
    assert set(served.modes) == {"logits", "labels"}


def test_round_trip_logits_identical(served, criterion_task):
    local = criterion_task.simulator()
    rng = np.random.default_rng(0)
    for _ in range(30):
        z = rng.normal(size=8) * 50
        x = rng.normal(size=(rng.integers(1, 6), 16))
        remote = served.query_logits(z, x)
        assert np.abs(remote - local.query_logits(z, x)).max() < 1e-9


def test_round_trip_labels_identical(served, criterion_task):
    local = criterion_task.simulator()
    rng = np.random.default_rng(1)
    for _ in range(30):
        z = rng.normal(size=8) * 50
        x = rng.normal(size=(4, 16))
        assert np.array_equal(served.query_labels(z, x), local.query_labels(z, x))


def test_round_trip_sample_decode_identical(served, criterion_task):
    # sampling is driven by a request seed, so identical caller rng states
    # produce identical labels in and out of process
    local = criterion_task.simulator()
    z = np.zeros(8)
    x = np.random.default_rng(2).normal(size=(8, 16))
    remote = served.query_labels(z, x, decode="sample",
                                 rng=np.random.default_rng(77))
    direct = local.query_labels(z, x, decode="sample",
                                rng=np.random.default_rng(77))
    assert np.array_equal(remote, direct)


def test_client_budget_counts_pairs(served):
    before = served.budget.used
    served.query_logits(np.zeros(8), np.zeros((5, 16)))
    assert served.budget.used == before + 5


def test_labels_only_server_hides_probabilities(task_file):
    client = ExternalSimulator.spawn(
        [sys.executable, "-m", "promptuq", "serve", "--task", task_file,
         "--labels-only"])
    try:
        assert client.modes == ("labels",)
        with pytest.raises(AccessDeniedError):
            client.query_logits(np.zeros(8), np.zeros((1, 16)))
        assert len(client.query_labels(np.zeros(8), np.zeros((2, 16)))) == 2
    finally:
        client.close()


def test_tcp_transport_round_trip(criterion_task):
    sim = criterion_task.simulator()
    address = {}
    ready = threading.Event()

    def announce(addr):
        address["value"] = addr
        ready.set()

    thread = threading.Thread(
        target=serve_tcp,
        args=(criterion_task.simulator(), "127.0.0.1", 0),
        kwargs={"ready_callback": announce}, daemon=True)
    thread.start()
    assert ready.wait(timeout=10)
    host, port = address["value"]

    with ExternalSimulator.connect(host, port) as client:
        rng = np.random.default_rng(3)
        z = rng.normal(size=8) * 50
        x = rng.normal(size=(3, 16))
        assert np.abs(client.query_logits(z, x) - sim.query_logits(z, x)).max() < 1e-9


class ScriptedTransport:
    def __init__(self, lines):
        self.lines = [line.encode() for line in lines]
        self.sent = []

    def readline(self):
        return self.lines.pop(0)

    def writeline(self, data):
        self.sent.append(json.loads(data))

    def close(self):
        pass


HANDSHAKE = json.dumps({"protocol": 1, "classes": 2, "feature_dim": 3,
                        "prompt_dim": 8, "modes": ["logits", "labels"]})


def test_client_rejects_mismatched_response_id():
    transport = ScriptedTransport([
        HANDSHAKE,
        json.dumps({"id": 99, "outputs": [[0.5, 0.5]]}),
    ])
    client = ExternalSimulator(transport)
    with pytest.raises(ProtocolError, match="does not match"):
        client.query_logits(np.zeros(2), np.zeros((1, 3)))


def test_client_rejects_out_of_range_label():
    transport = ScriptedTransport([
        HANDSHAKE,
        json.dumps({"id": 0, "labels": [2]}),
    ])
    client = ExternalSimulator(transport)
    with pytest.raises(ProtocolError, match="labels outside"):
        client.query_labels(np.zeros(2), np.zeros((1, 3)))


def test_client_rejects_unparseable_line():
    transport = ScriptedTransport([HANDSHAKE, "not json"])
    client = ExternalSimulator(transport)
    with pytest.raises(ProtocolError, match="unparseable"):
        client.query_labels(np.zeros(2), np.zeros((1, 3)))


def test_client_rejects_unknown_protocol_version():
    transport = ScriptedTransport([json.dumps({"protocol": 2})])
    with pytest.raises(ProtocolError, match="unsupported handshake"):
        ExternalSimulator(transport)


def test_client_rejects_unnormalized_logit_rows():
    transport = ScriptedTransport([
        HANDSHAKE,
        json.dumps({"id": 0, "outputs": [[0.9, 0.9]]}),
    ])
    client = ExternalSimulator(transport)
    with pytest.raises(ProtocolError, match="probability"):
        client.query_logits(np.zeros(2), np.zeros((1, 3)))


def _serve_lines(sim, request_lines):
    out = io.StringIO()
    serve(sim, iter(request_lines), out)
    lines = out.getvalue().strip().splitlines()
    return json.loads(lines[0]), [json.loads(line) for line in lines[1:]]


def test_server_error_responses(criterion_task):
    sim = criterion_task.simulator(allow_logits=False)
    handshake, responses = _serve_lines(sim, [
        "garbage\n",
        json.dumps({"id": 1, "mode": "logits", "z": [0.0] * 8,
                    "inputs": [[0.0] * 16]}) + "\n",
        json.dumps({"id": 2, "mode": "labels", "z": [0.0] * 3,
                    "inputs": [[0.0] * 16]}) + "\n",
        json.dumps({"id": 3, "mode": "labels", "z": [0.0] * 8,
                    "inputs": [[0.0] * 16]}) + "\n",
    ])
    assert handshake["modes"] == ["labels"]
    assert responses[0]["kind"] == "bad-request"
    assert responses[1]["kind"] == "access-denied"
    assert responses[2]["kind"] == "bad-request"  # z has the wrong length
    assert responses[3]["labels"] == [int(v) for v in sim.query_labels(
        np.zeros(8), np.zeros((1, 16)))]
