"""TCP loopback mode: the same state machines over real sockets, with
persistence across a server restart."""

import time
from random import Random

import pytest

from tokengate.socket_mode import SocketGateway, SocketServer, load_state_file
from tokengate.token_sim import TokenDevice

MASTER = bytes(range(32))


class _IsolatedPort:
    isolated = True


def wait_for(predicate, timeout=5.0):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if predicate():
            return True
        time.sleep(0.02)
    return False


@pytest.fixture
def paths(tmp_path):
    return {
        "state": str(tmp_path / "server.json"),
        "hsm": str(tmp_path / "hsm.json"),
        "events": str(tmp_path / "events.jsonl"),
    }


def start_server(paths):
    srv = SocketServer(
        paths["state"], paths["hsm"], ("127.0.0.1", 0),
        events_path=paths["events"], master_key=MASTER,
    )
    srv.start()
    srv_addr = srv._sock.getsockname()
    return srv, srv_addr


def provision(srv, gateway_id="G1", serial=42, sec_id="green"):
    from tokengate import mgmt

    priv, pub = mgmt.generate_static_keypair()
    with srv.lock:
        srv.core.registry.provision_gateway(
            _IsolatedPort(), gateway_id, pub, "127.0.0.1", bytes([2, 0, 0, 0, 0, 1])
        )
        token = TokenDevice.create(serial, Random(9))
        srv.core.registry.provision_token(_IsolatedPort(), token, sec_id)
    state = {
        "gatewayId": gateway_id,
        "privKey": priv.hex(),
        "serverPub": srv.core.static_pub.hex(),
        "macsecAddress": "020000000001",
    }
    return state, token


def test_join_heartbeat_persist_restart(paths):
    srv, addr = start_server(paths)
    gw_state, token = provision(srv)
    gw = SocketGateway(gw_state, addr)
    gw.start()
    assert gw.wait_session()

    gw.plug_and_press(token, 1)
    gw.agent.unplug_token()
    assert wait_for(lambda: gw.agent.mode == "member")
    assert gw.agent.channel.sec_id == "green"
    with srv.lock:
        assert srv.core.registry.channels["green"].gateways == {"G1"}
        assert srv.core.registry.gateways["G1"].status.value == "online"

    gw.stop()
    srv.stop()  # saves state + HSM

    # the event log survived with the join recorded
    lines = open(paths["events"]).read().splitlines()
    assert any('"action": "join"' in l for l in lines)

    # a restarted server restores the registry and accepts the next press
    srv2, addr2 = start_server(paths)
    with srv2.lock:
        assert srv2.core.registry.channels["green"].gateways == {"G1"}
        assert srv2.core.registry.tokens[42].last_counters == (1, 0)
    gw2 = SocketGateway(gw_state, addr2)
    gw2.start()
    assert gw2.wait_session()
    gw2.plug_and_press(token, 1)  # toggle: leave
    gw2.agent.unplug_token()
    assert wait_for(lambda: not srv2.core.registry.channels["green"].gateways)
    with srv2.lock:
        assert srv2.core.registry.channels["green"].key_version == 2
    gw2.stop()
    srv2.stop()


def test_replayed_frames_over_tcp_ignored(paths):
    import socket as socketlib

    from tokengate import mgmt

    srv, addr = start_server(paths)
    gw_state, token = provision(srv)
    gw = SocketGateway(gw_state, addr)
    gw.start()
    assert gw.wait_session()
    gw.plug_and_press(token, 1)
    gw.agent.unplug_token()
    assert wait_for(lambda: gw.agent.mode == "member")
    with srv.lock:
        events_before = len(srv.core.registry.events)

    # a second raw connection spraying garbage and stale handshakes
    rogue = socketlib.create_connection(addr, timeout=2)
    rogue.sendall(mgmt.frame_with_length(b"\x00" * 64))
    rogue.sendall(mgmt.frame_with_length(b"TG\x01\x00" + b"\x00" * 40))
    time.sleep(0.5)
    rogue.close()

    with srv.lock:
        ok_after = [
            e for e in srv.core.registry.events[events_before:] if e.outcome == "ok"
        ]
        assert [e.action for e in ok_after] in ([], ["online"])
        assert srv.core.registry.channels["green"].gateways == {"G1"}
    gw.stop()
    srv.stop()


def test_state_file_contains_no_cleartext_keys(paths):
    srv, addr = start_server(paths)
    gw_state, token = provision(srv)
    gw = SocketGateway(gw_state, addr)
    gw.start()
    assert gw.wait_session()
    gw.plug_and_press(token, 1)
    gw.agent.unplug_token()
    assert wait_for(lambda: gw.agent.mode == "member")
    with srv.lock:
        channel_key = srv.core.registry.channels["green"].channel_key
    gw.stop()
    srv.stop()

    state_doc = load_state_file(paths["state"])
    raw = open(paths["state"], "rb").read() + open(paths["hsm"], "rb").read()
    assert channel_key.hex().encode() not in raw
    assert token.secret.hex().encode() not in raw
    assert state_doc["registry"]["channels"][0]["wrappedKey"]
