"""Scriptable scenario runner: JSON-lines of commands driving a Simulation.

Each line is one object with an ``op`` field.  ``assert`` commands turn a
scenario file into a test vehicle; a failed assertion raises
:class:`ScenarioAssertion`.  With ``expect_error`` set on a command, the
named error code must be raised for the scenario to continue.

Supported ops:
  provision_gateway {id, isolated?}      connect {id}
  create_token {serial}                  provision_token {serial, channel, isolated?}
  plug {serial, gateway}                 unplug {gateway}
  press {gateway}                        advance {ticks}
  endpoint_send {from, to, payload_hex}  silence {id} / unsilence {id}
  steal {serial}                         use_stolen {serial, gateway}
  inject {link, hex, dst?}               replay {index}
  operator {action, ...}                 assert {check, ...}
"""

from __future__ import annotations

import json
from typing import Iterable

from .errors import TokenGateError
from .netsim import Simulation
from .registry import GatewayStatus, TokenStatus
from .server import EventLog


class ScenarioAssertion(AssertionError):
    pass


class ScenarioError(Exception):
    pass


def run_scenario(
    lines: Iterable[str],
    seed: int = 0,
    event_log: EventLog | None = None,
    capture_path: str | None = None,
) -> Simulation:
    sim = Simulation(seed=seed, event_log=event_log, capture_path=capture_path)
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            cmd = json.loads(line)
        except ValueError as exc:
            raise ScenarioError(f"line {lineno}: invalid JSON: {exc}") from exc
        try:
            _apply(sim, cmd)
        except ScenarioAssertion as exc:
            raise ScenarioAssertion(f"line {lineno}: {exc}") from None
        except TokenGateError as exc:
            expected = cmd.get("expect_error")
            if expected is None:
                raise ScenarioError(f"line {lineno}: unexpected {exc.code}") from exc
            if exc.code != expected:
                raise ScenarioAssertion(
                    f"line {lineno}: expected {expected}, got {exc.code}"
                ) from None
        else:
            if "expect_error" in cmd:
                raise ScenarioAssertion(
                    f"line {lineno}: expected error {cmd['expect_error']}, none raised"
                )
    return sim


def run_scenario_file(path: str, **kwargs) -> Simulation:
    with open(path, encoding="utf-8") as fh:
        return run_scenario(fh, **kwargs)


def _apply(sim: Simulation, cmd: dict) -> None:
    op = cmd["op"]
    if op == "provision_gateway":
        sim.provision_gateway(cmd["id"], isolated=cmd.get("isolated", True))
    elif op == "connect":
        sim.connect_gateway(cmd["id"])
    elif op == "create_token":
        sim.create_token(cmd["serial"])
    elif op == "provision_token":
        sim.provision_token(
            cmd["serial"], cmd["channel"], isolated=cmd.get("isolated", True)
        )
    elif op == "plug":
        sim.plug(cmd["serial"], cmd["gateway"])
    elif op == "unplug":
        sim.unplug(cmd["gateway"])
    elif op == "press":
        sim.press(cmd["gateway"])
    elif op == "advance":
        sim.advance(cmd["ticks"])
    elif op == "endpoint_send":
        sim.endpoint_send(cmd["from"], cmd["to"], bytes.fromhex(cmd["payload_hex"]))
    elif op == "silence":
        sim.gateway_nodes[cmd["id"]].silenced = True
    elif op == "unsilence":
        sim.gateway_nodes[cmd["id"]].silenced = False
    elif op == "steal":
        sim.adversary.steal_token(cmd["serial"])
    elif op == "use_stolen":
        sim.adversary.use_token(cmd["serial"], cmd["gateway"])
    elif op == "inject":
        sim.adversary.inject(cmd["link"], cmd.get("dst", "server"),
                             bytes.fromhex(cmd["hex"]))
    elif op == "replay":
        sim.adversary.replay(cmd["index"])
    elif op == "operator":
        _operator(sim, cmd)
    elif op == "assert":
        _check(sim, cmd)
    else:
        raise ScenarioError(f"unknown op {op!r}")


def _operator(sim: Simulation, cmd: dict) -> None:
    action = cmd["action"]
    if action == "remove_gateway":
        sim.server.op_remove_gateway(cmd["gateway"], cmd["channel"])
    elif action == "decommission_gateway":
        sim.server.op_decommission_gateway(cmd["gateway"])
    elif action == "decommission_token":
        sim.server.op_decommission_token(cmd["serial"], cmd.get("teardown", False))
    elif action == "revert":
        sim.server.op_revert_event(cmd["event"])
    else:
        raise ScenarioError(f"unknown operator action {action!r}")


def _check(sim: Simulation, cmd: dict) -> None:
    check = cmd["check"]
    reg = sim.server.registry
    if check == "channel_members":
        channel = reg.channels.get(cmd["channel"])
        members = sorted(channel.gateways) if channel else []
        if members != sorted(cmd["members"]):
            raise ScenarioAssertion(
                f"channel {cmd['channel']} members {members}, wanted {cmd['members']}"
            )
    elif check == "channel_absent":
        if cmd["channel"] in reg.channels:
            raise ScenarioAssertion(f"channel {cmd['channel']} still exists")
    elif check == "key_version":
        channel = reg.channels[cmd["channel"]]
        if channel.key_version != cmd["value"]:
            raise ScenarioAssertion(
                f"keyVersion {channel.key_version}, wanted {cmd['value']}"
            )
    elif check == "gateway_mode":
        mode = sim.gateway_nodes[cmd["gateway"]].agent.mode
        if mode != cmd["mode"]:
            raise ScenarioAssertion(f"{cmd['gateway']} mode {mode}, wanted {cmd['mode']}")
    elif check == "gateway_status":
        status = reg.gateways[cmd["gateway"]].status
        if status is not GatewayStatus(cmd["status"]):
            raise ScenarioAssertion(
                f"{cmd['gateway']} status {status.value}, wanted {cmd['status']}"
            )
    elif check == "token_status":
        status = reg.tokens[cmd["serial"]].status
        if status is not TokenStatus(cmd["status"]):
            raise ScenarioAssertion(
                f"token {cmd['serial']} status {status.value}, wanted {cmd['status']}"
            )
    elif check == "endpoint_received":
        payloads = [
            f.payload.hex() for f in sim.endpoints[cmd["gateway"]].frames_for_me()
        ]
        if cmd["payload_hex"] not in payloads:
            raise ScenarioAssertion(
                f"endpoint of {cmd['gateway']} never saw {cmd['payload_hex']}"
            )
    elif check == "event_count":
        if len(reg.events) != cmd["value"]:
            raise ScenarioAssertion(
                f"event count {len(reg.events)}, wanted {cmd['value']}"
            )
    elif check == "last_event":
        if not reg.events:
            raise ScenarioAssertion("no events recorded")
        last = reg.events[-1].to_json()
        for key, value in cmd.get("fields", {}).items():
            if last.get(key) != value:
                raise ScenarioAssertion(
                    f"last event {key}={last.get(key)!r}, wanted {value!r}"
                )
    else:
        raise ScenarioError(f"unknown check {check!r}")
