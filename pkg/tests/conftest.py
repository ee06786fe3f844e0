from __future__ import annotations

import socket

import pytest

from imsg_insight.store import load
from imsg_insight.synth import write_fixture_store

LOCAL_HOSTS = {"127.0.0.1", "::1", "localhost"}
ACCEPTANCE_LINES: list[str] = []


class NetworkBlocked(RuntimeError):
    pass


@pytest.fixture(autouse=True)
def no_network(monkeypatch):
    """Fail any test that tries to reach a non-loopback address."""
    attempts: list[object] = []
    real_connect = socket.socket.connect

    def guarded(self, address):
        if self.family in (socket.AF_INET, socket.AF_INET6) and address[0] not in LOCAL_HOSTS:
            attempts.append(address)
            raise NetworkBlocked(f"test tried to connect to {address!r}")
        return real_connect(self, address)

    monkeypatch.setattr(socket.socket, "connect", guarded)
    yield attempts
    assert not attempts, f"non-local connection attempted: {attempts}"


@pytest.fixture(scope="session")
def fixture_db(tmp_path_factory):
    return write_fixture_store(tmp_path_factory.mktemp("store") / "chat.db")


@pytest.fixture(scope="session")
def fixture_ingest(fixture_db):
    return load(fixture_db)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
