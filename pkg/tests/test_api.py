"""HTTP control API: read models, auth, error mapping, SSE stream."""

import json

import pytest
from fastapi.testclient import TestClient

from tokengate.api import build_app
from tokengate.netsim import Simulation

TOKEN = "test-operator-token"
AUTH = {"Authorization": f"Bearer {TOKEN}"}


@pytest.fixture
def sim():
    simulation = Simulation(seed=21)
    for gid in ("G1", "G2"):
        simulation.provision_gateway(gid)
        simulation.connect_gateway(gid)
    simulation.advance(3)
    simulation.create_token(42)
    simulation.provision_token(42, "green")
    for gid in ("G1", "G2"):
        simulation.plug(42, gid)
        simulation.press(gid)
        simulation.advance(4)
        simulation.unplug(gid)
    yield simulation
    simulation.close()


@pytest.fixture
def client(sim):
    return TestClient(build_app(sim.server, TOKEN))


class TestReads:
    def test_gateways(self, client):
        docs = {g["gatewayId"]: g for g in client.get("/v1/gateways").json()}
        assert set(docs) == {"G1", "G2"}
        assert docs["G1"]["status"] == "online"
        assert set(docs["G1"]) == {
            "gatewayId", "mgmtAddress", "macsecAddress", "status", "lastHeartbeat",
        }

    def test_channels_without_key_material(self, sim, client):
        (doc,) = client.get("/v1/channels").json()
        assert doc == {
            "secID": "green", "keyVersion": 1, "tokens": [42],
            "members": ["G1", "G2"],
        }
        key = sim.server.registry.channels["green"].channel_key
        assert key.hex() not in json.dumps(doc)

    def test_tokens_without_secrets(self, sim, client):
        (doc,) = client.get("/v1/tokens").json()
        assert doc == {"serial": 42, "boundChannel": "green", "status": "active"}

    def test_events_cursor(self, client):
        events = client.get("/v1/events").json()
        assert [e["action"] for e in events if e["outcome"] == "ok"] == ["join", "join"]
        later = client.get("/v1/events", params={"after": events[0]["eventId"]}).json()
        assert all(e["eventId"] > events[0]["eventId"] for e in later)

    def test_reads_need_no_credential(self, client):
        for path in ("/v1/gateways", "/v1/channels", "/v1/tokens", "/v1/events"):
            assert client.get(path).status_code == 200


class TestAuth:
    def test_mutations_require_bearer(self, client):
        paths = [
            "/v1/channels/green/remove/G1",
            "/v1/gateways/G1/decommission",
            "/v1/tokens/42/decommission",
            "/v1/events/1/revert",
        ]
        for path in paths:
            assert client.post(path).status_code == 401
        assert (
            client.post(paths[0], headers={"Authorization": "Bearer wrong"}).status_code
            == 401
        )


class TestMutations:
    def test_remove_gateway(self, sim, client):
        resp = client.post("/v1/channels/green/remove/G2", headers=AUTH)
        assert resp.status_code == 200 and resp.json() == {"ok": True}
        assert sorted(sim.server.registry.channels["green"].gateways) == ["G1"]

    def test_unknown_resources_404(self, client):
        cases = {
            "/v1/channels/nope/remove/G1": "UNKNOWN_CHANNEL",
            "/v1/gateways/nope/decommission": "UNKNOWN_GATEWAY",
            "/v1/tokens/999/decommission": "UNKNOWN_TOKEN",
            "/v1/events/999/revert": "UNKNOWN_EVENT",
        }
        for path, code in cases.items():
            resp = client.post(path, headers=AUTH)
            assert resp.status_code == 404
            assert resp.json()["detail"]["code"] == code

    def test_domain_conflict_409(self, sim, client):
        client.post("/v1/channels/green/remove/G2", headers=AUTH)
        resp = client.post("/v1/channels/green/remove/G2", headers=AUTH)
        assert resp.status_code == 409
        assert resp.json()["detail"]["code"] == "NOT_A_MEMBER"

    def test_decommission_token_with_teardown(self, sim, client):
        resp = client.post(
            "/v1/tokens/42/decommission", params={"teardown": "true"}, headers=AUTH
        )
        assert resp.status_code == 200
        assert "green" not in sim.server.registry.channels

    def test_revert_join(self, sim, client):
        join_id = next(
            e["eventId"]
            for e in client.get("/v1/events").json()
            if e["action"] == "join" and e["gatewayId"] == "G2"
        )
        resp = client.post(f"/v1/events/{join_id}/revert", headers=AUTH)
        assert resp.status_code == 200
        assert sorted(sim.server.registry.channels["green"].gateways) == ["G1"]
        last = client.get("/v1/events").json()[-1]
        assert last["action"] == "revert"
        assert last["reverts"] == join_id
        assert last["effect"] == "leave"

    def test_api_matches_direct_driven_log(self, client, sim, tmp_path):
        """API mutation is a thin adapter: same events as the direct call."""
        from tokengate.netsim import Simulation as Sim

        direct = Sim(seed=21)
        for gid in ("G1", "G2"):
            direct.provision_gateway(gid)
            direct.connect_gateway(gid)
        direct.advance(3)
        direct.create_token(42)
        direct.provision_token(42, "green")
        for gid in ("G1", "G2"):
            direct.plug(42, gid)
            direct.press(gid)
            direct.advance(4)
            direct.unplug(gid)
        direct.server.op_remove_gateway("G2", "green")
        client.post("/v1/channels/green/remove/G2", headers=AUTH)
        api_log = [e.to_json() for e in sim.server.registry.events]
        direct_log = [e.to_json() for e in direct.server.registry.events]
        assert api_log == direct_log
        direct.close()


class TestStream:
    """The stream generator is exercised directly: the in-process test client
    cannot cancel an endless event-stream response without hanging."""

    @staticmethod
    def open_stream(sim, after=0):
        from tokengate.api import event_stream

        return event_stream(sim.server, after)

    @staticmethod
    def parse_chunk(chunk):
        current_id, doc = None, None
        for line in chunk.splitlines():
            if line.startswith("id: "):
                current_id = int(line[4:])
            elif line.startswith("data: "):
                doc = json.loads(line[6:])
        if doc is not None:
            assert doc["eventId"] == current_id
        return doc

    def test_stream_replays_from_cursor(self, sim):
        existing = [e.to_json() for e in sim.server.registry.events]
        gen = self.open_stream(sim)
        replayed = [self.parse_chunk(next(gen)) for _ in existing]
        gen.close()
        assert replayed == existing

    def test_stream_after_skips_older(self, sim):
        cursor = sim.server.registry.events[-2].event_id
        gen = self.open_stream(sim, after=cursor)
        first = self.parse_chunk(next(gen))
        gen.close()
        assert first["eventId"] > cursor

    def test_stream_pushes_live_events(self, sim):
        existing = len(sim.server.registry.events)
        gen = self.open_stream(sim, after=0)
        for _ in range(existing):
            next(gen)
        sim.server.op_remove_gateway("G2", "green")
        live = self.parse_chunk(next(gen))
        gen.close()
        assert live["action"] == "leave"
        assert live["actor"] == "operator"

    def test_stream_keepalive_when_idle(self, sim):
        existing = len(sim.server.registry.events)
        gen = self.open_stream(sim, after=0)
        for _ in range(existing):
            next(gen)
        chunk = next(gen)  # nothing queued: a comment heartbeat after ~1 s
        gen.close()
        assert chunk.startswith(":")

    def test_stream_unsubscribes_on_close(self, sim):
        gen = self.open_stream(sim)
        next(gen)
        assert len(sim.server._subscribers) == 1
        gen.close()
        assert sim.server._subscribers == []
