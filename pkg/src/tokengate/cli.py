"""Command-line interface.

  tokengate sim run scenario.jsonl [--seed N] [--log out.jsonl]
  tokengate server --state s.json --hsm h.json --listen 127.0.0.1:7600 --api 127.0.0.1:7601
  tokengate gateway --id G1 --server 127.0.0.1:7600 --state g1.json
  tokengate provision gateway|token ... --isolated
  tokengate state dump --state s.json
  tokengate report events.jsonl --out report/

Exit codes: 0 success, 1 failed assertion or domain error (machine-readable
JSON on stderr), 2 usage error.
"""

from __future__ import annotations

import json
import signal
import sys
import threading
import time
from random import Random

import click

from . import mgmt
from .errors import TokenGateError
from .registry import Registry
from .scenario import ScenarioAssertion, ScenarioError, run_scenario_file
from .server import EventLog
from .socket_mode import (
    SocketGateway,
    SocketServer,
    load_state_file,
    save_state_file,
)
from .token_sim import HsmStore, TokenDevice


def _fail(exc: Exception, code: str = "ERROR") -> None:
    if isinstance(exc, TokenGateError):
        code = exc.code
    click.echo(json.dumps({"error": code, "detail": str(exc)}), err=True)
    sys.exit(1)


def _parse_addr(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    return host or "127.0.0.1", int(port)


@click.group()
def main():
    """Token-driven configuration of encryption gateways."""


@main.group()
def sim():
    """Deterministic simulator."""


@sim.command("run")
@click.argument("scenario", type=click.Path(exists=True, dir_okay=False))
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--log", "log_path", type=click.Path(dir_okay=False),
              help="write the event log as JSON-lines")
@click.option("--capture", "capture_path", type=click.Path(dir_okay=False),
              help="write every link transmission as JSON-lines of hex frames")
def sim_run(scenario, seed, log_path, capture_path):
    """Run a scenario file; its assert commands make this a test vehicle."""
    event_log = EventLog(log_path) if log_path else None
    try:
        simulation = run_scenario_file(
            scenario, seed=seed, event_log=event_log, capture_path=capture_path
        )
    except ScenarioAssertion as exc:
        _fail(exc, code="ASSERTION_FAILED")
    except ScenarioError as exc:
        _fail(exc, code="SCENARIO_ERROR")
    except TokenGateError as exc:
        _fail(exc)
    else:
        simulation.close()
        click.echo(f"ok: {len(simulation.server.registry.events)} events")


class _IsolatedPort:
    isolated = True


class _InsecurePort:
    isolated = False


def _open_state(state_path, hsm_path):
    state = load_state_file(state_path)
    try:
        hsm = HsmStore.load(hsm_path)
    except Exception:
        hsm = HsmStore()
    if "identity" not in state:
        priv, pub = mgmt.generate_static_keypair()
        state["identity"] = {"privKey": priv.hex(), "pubKey": pub.hex(),
                             "mgmtAddress": "127.0.0.1:7600"}
    if "registry" in state:
        registry = Registry.restore(state["registry"], hsm)
    else:
        registry = Registry(hsm)
    return state, hsm, registry


def _save_state(state_path, hsm_path, state, hsm, registry):
    state["registry"] = registry.snapshot()
    save_state_file(state_path, state)
    hsm.save(hsm_path)


@main.group()
def provision():
    """Provisioning over the dedicated isolated port."""


@provision.command("gateway")
@click.option("--id", "gateway_id", required=True)
@click.option("--state", "state_path", required=True, type=click.Path(dir_okay=False))
@click.option("--hsm", "hsm_path", required=True, type=click.Path(dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False),
              help="gateway credential file to write")
@click.option("--isolated", is_flag=True,
              help="assert the exchange happens on the isolated port")
def provision_gateway(gateway_id, state_path, hsm_path, out_path, isolated):
    state, hsm, registry = _open_state(state_path, hsm_path)
    port = _IsolatedPort() if isolated else _InsecurePort()
    priv, pub = mgmt.generate_static_keypair()
    index = len(registry.gateways) + 1
    macsec_address = bytes([0x02, 0, 0, 0, index >> 8, index & 0xFF])
    try:
        registry.provision_gateway(
            port, gateway_id, pub, f"gw-{index}", macsec_address
        )
    except TokenGateError as exc:
        _fail(exc)
    save_state_file(out_path, {
        "gatewayId": gateway_id,
        "privKey": priv.hex(),
        "serverPub": state["identity"]["pubKey"],
        "serverMgmtAddress": state["identity"]["mgmtAddress"],
        "macsecAddress": macsec_address.hex(),
    })
    _save_state(state_path, hsm_path, state, hsm, registry)
    click.echo(f"provisioned gateway {gateway_id}")


@provision.command("token")
@click.option("--serial", required=True, type=int)
@click.option("--channel", "sec_id", required=True)
@click.option("--state", "state_path", required=True, type=click.Path(dir_okay=False))
@click.option("--hsm", "hsm_path", required=True, type=click.Path(dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False),
              help="programmed token device file to write")
@click.option("--isolated", is_flag=True)
def provision_token(serial, sec_id, state_path, hsm_path, out_path, isolated):
    state, hsm, registry = _open_state(state_path, hsm_path)
    port = _IsolatedPort() if isolated else _InsecurePort()
    token = TokenDevice.create(serial, Random())
    try:
        registry.provision_token(port, token, sec_id)
    except TokenGateError as exc:
        _fail(exc)
    save_state_file(out_path, {
        "serial": token.serial,
        "publicId": token.public_id.hex(),
        "secret": token.secret.hex(),
        "privateId": token.private_id.hex(),
        "useCounter": token.use_counter,
    })
    _save_state(state_path, hsm_path, state, hsm, registry)
    click.echo(f"provisioned token {serial} bound to {sec_id}")


@main.command()
@click.option("--state", "state_path", required=True, type=click.Path(dir_okay=False))
@click.option("--hsm", "hsm_path", required=True, type=click.Path(dir_okay=False))
@click.option("--listen", default="127.0.0.1:7600", show_default=True)
@click.option("--api", "api_addr", default=None,
              help="serve the operator HTTP API on this address")
@click.option("--events", "events_path", type=click.Path(dir_okay=False))
@click.option("--operator-token", default="operator-secret", show_default=True)
def server(state_path, hsm_path, listen, api_addr, events_path, operator_token):
    """Run the management server in socket mode."""
    srv = SocketServer(state_path, hsm_path, _parse_addr(listen),
                       events_path=events_path)
    srv.start()
    api_thread = None
    if api_addr:
        import uvicorn

        from .api import build_app
        host, port = _parse_addr(api_addr)
        app = build_app(srv.core, operator_token)
        config = uvicorn.Config(app, host=host, port=port, log_level="warning")
        uv = uvicorn.Server(config)
        api_thread = threading.Thread(target=uv.run, daemon=True)
        api_thread.start()
    click.echo(f"server listening on {listen}" + (f", API on {api_addr}" if api_addr else ""))
    stop = threading.Event()
    signal.signal(signal.SIGINT, lambda *_: stop.set())
    signal.signal(signal.SIGTERM, lambda *_: stop.set())
    try:
        while not stop.is_set():
            time.sleep(0.2)
    finally:
        srv.stop()
        click.echo("server state saved")


@main.command()
@click.option("--id", "gateway_id", required=True)
@click.option("--server", "server_addr", required=True)
@click.option("--state", "state_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--token", "token_path", type=click.Path(exists=True, dir_okay=False),
              help="plug this programmed token on startup")
@click.option("--press", "presses", default=0, type=int,
              help="button presses after the session comes up")
def gateway(gateway_id, server_addr, state_path, token_path, presses):
    """Run a gateway agent in socket mode."""
    state = load_state_file(state_path)
    if state.get("gatewayId") != gateway_id:
        _fail(ValueError(f"state file is for {state.get('gatewayId')}"), "BAD_STATE")
    gw = SocketGateway(state, _parse_addr(server_addr))
    gw.start()
    if not gw.wait_session():
        _fail(ConnectionError("no session with server"), "NO_SESSION")
    click.echo(f"{gateway_id}: session established")
    if token_path and presses:
        doc = load_state_file(token_path)
        token = TokenDevice(
            serial=doc["serial"],
            public_id=bytes.fromhex(doc["publicId"]),
            secret=bytes.fromhex(doc["secret"]),
            private_id=bytes.fromhex(doc["privateId"]),
            use_counter=doc["useCounter"],
        )
        for _ in range(presses):
            gw.plug_and_press(token, 1)
            gw.agent.unplug_token()
            time.sleep(0.3)
        doc["useCounter"] = token.use_counter
        save_state_file(token_path, doc)
    stop = threading.Event()
    signal.signal(signal.SIGINT, lambda *_: stop.set())
    signal.signal(signal.SIGTERM, lambda *_: stop.set())
    try:
        while not stop.is_set():
            time.sleep(0.2)
    finally:
        gw.stop()


@main.group()
def state():
    """Inspect persisted server state."""


@state.command("dump")
@click.option("--state", "state_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
def state_dump(state_path):
    doc = load_state_file(state_path)
    reg = doc.get("registry", {})
    out = {
        "gateways": [
            f"{g['gatewayId']} {g['status']} mgmt={g['mgmtAddress']} "
            f"ms={g['macsecAddress']} hb={g['lastHeartbeat']}"
            for g in reg.get("gateways", [])
        ],
        "channels": [
            f"{c['secID']} v{c['keyVersion']} tokens={c['tokens']} members={c['gateways']}"
            for c in reg.get("channels", [])
        ],
        "tokens": [
            f"{t['serial']} {t['status']} channel={t['boundChannel']}"
            for t in reg.get("tokens", [])
        ],
        "events": len(reg.get("events", [])),
    }
    click.echo(json.dumps(out, indent=1))


@main.command("report")
@click.argument("events_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", default="report", show_default=True,
              type=click.Path(file_okay=False))
def report_cmd(events_file, out_dir):
    """Render CSV and figures from an event log."""
    from .report import generate_report
    for path in generate_report(events_file, out_dir):
        click.echo(path)


if __name__ == "__main__":
    main()
