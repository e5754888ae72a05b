"""Management-server core: sessions, message handling, liveness, persistence.

Transport-agnostic: both the in-process simulator and the TCP socket mode
feed received bytes in through :meth:`on_conn_bytes` with an opaque
connection id and a ``send(bytes)`` callback.  Registry mutations all happen
on the caller's (single-writer) thread.
"""

from __future__ import annotations

import json
import os
from random import Random
from typing import Callable

from . import mgmt
from .errors import (
    AuthFail,
    DecommissionedPeer,
    TokenGateError,
)
from .registry import (
    ConfigEvent,
    GatewayStatus,
    Outbound,
    Registry,
)
from .token_sim import HsmStore


class EventLog:
    """Append-only JSON-lines event log, one ConfigEvent per line."""

    def __init__(self, path: str | None = None, fsync: bool = False):
        self.path = path
        self.fsync = fsync
        self.lines: list[str] = []
        self._fh = open(path, "a", encoding="utf-8") if path else None

    def append(self, event: ConfigEvent) -> None:
        line = json.dumps(event.to_json(), sort_keys=True)
        self.lines.append(line)
        if self._fh is not None:
            self._fh.write(line + "\n")
            self._fh.flush()
            if self.fsync:
                os.fsync(self._fh.fileno())

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


class ManagementServer:
    """Owns the registry, the HSM, and every gateway session."""

    def __init__(
        self,
        hsm: HsmStore,
        static_priv: bytes,
        static_pub: bytes,
        mgmt_address: str = "10.0.0.1",
        rng: Random | None = None,
        clock: Callable[[], int] | None = None,
        event_log: EventLog | None = None,
        rotate_on_shrink: bool = True,
        registry: Registry | None = None,
    ):
        self.hsm = hsm
        self.static_priv = static_priv
        self.static_pub = static_pub
        self.mgmt_address = mgmt_address
        self.clock = clock or (lambda: 0)
        self.event_log = event_log or EventLog()
        self._subscribers: list[Callable[[dict], None]] = []
        if registry is not None:
            self.registry = registry
            self.registry.event_sink = self._on_event
        else:
            self.registry = Registry(
                hsm,
                rng=rng,
                clock=self.clock,
                rotate_on_shrink=rotate_on_shrink,
                event_sink=self._on_event,
            )
        # conn_id -> (send callback, gateway_id or None until authenticated)
        self._conns: dict[object, tuple[Callable[[bytes], None], str | None]] = {}
        self._sessions: dict[str, mgmt.SessionState] = {}
        self._conn_of_gateway: dict[str, object] = {}
        self._handshake_floor: dict[str, int] = {}
        self._pending_out: dict[str, list[Outbound]] = {}

    # --- event fan-out ---

    def _on_event(self, event: ConfigEvent) -> None:
        self.event_log.append(event)
        doc = event.to_json()
        for sub in list(self._subscribers):
            sub(doc)

    def subscribe(self, callback: Callable[[dict], None]) -> Callable[[], None]:
        self._subscribers.append(callback)

        def unsubscribe():
            if callback in self._subscribers:
                self._subscribers.remove(callback)

        return unsubscribe

    # --- connection handling ---

    def on_connect(self, conn_id, send: Callable[[bytes], None]) -> None:
        self._conns[conn_id] = (send, None)

    def on_disconnect(self, conn_id) -> None:
        send_gid = self._conns.pop(conn_id, None)
        if send_gid and send_gid[1]:
            gateway_id = send_gid[1]
            if self._conn_of_gateway.get(gateway_id) == conn_id:
                del self._conn_of_gateway[gateway_id]
                self._sessions.pop(gateway_id, None)

    def _lookup_static_pub(self, gateway_id: str) -> bytes:
        record = self.registry.gateways.get(gateway_id)
        if record is None:
            raise AuthFail(f"unknown gateway {gateway_id}")
        if record.status is GatewayStatus.DECOMMISSIONED:
            raise DecommissionedPeer(f"{gateway_id} is decommissioned")
        return record.pub_key

    def on_conn_bytes(self, conn_id, raw: bytes) -> None:
        """Process one frame from a connection; replies go out via its send."""
        if conn_id not in self._conns:
            return
        send, gateway_id = self._conns[conn_id]
        if raw[:2] == mgmt.HS_MAGIC:
            self._handle_handshake(conn_id, send, raw)
            return
        if gateway_id is None or gateway_id not in self._sessions:
            return  # plaintext injection before authentication: ignored
        session = self._sessions[gateway_id]
        try:
            msg = mgmt.decode_message(session, raw)
        except TokenGateError:
            return  # corrupted / replayed frame: dropped silently
        self._handle_message(gateway_id, session, send, msg)

    def _handle_handshake(self, conn_id, send, raw: bytes) -> None:
        try:
            gateway_id, timestamp, msg2, session = mgmt.respond_handshake(
                raw, self.static_priv, self._lookup_static_pub, now=self.clock()
            )
        except TokenGateError:
            return  # unauthenticated peer gets no response
        if timestamp <= self._handshake_floor.get(gateway_id, 0):
            return  # replayed initiation
        self._handshake_floor[gateway_id] = timestamp
        old_conn = self._conn_of_gateway.get(gateway_id)
        if old_conn is not None and old_conn != conn_id:
            self._conns.pop(old_conn, None)
        self._conns[conn_id] = (send, gateway_id)
        self._conn_of_gateway[gateway_id] = conn_id
        self._sessions[gateway_id] = session
        send(msg2)
        self.registry.mark_heartbeat(gateway_id, self.clock())
        for out in self._pending_out.pop(gateway_id, []):
            self._deliver(out)

    def _handle_message(
        self,
        gateway_id: str,
        session: mgmt.SessionState,
        send,
        msg: mgmt.ManagementMessage,
    ) -> None:
        kind = msg.kind
        if kind is mgmt.MessageKind.HEARTBEAT:
            self.registry.mark_heartbeat(gateway_id, self.clock())
            return
        if kind is mgmt.MessageKind.TOKEN_EVENT:
            try:
                decision = self.registry.handle_token_event(
                    gateway_id, msg.body["serial"], msg.body["otp"]
                )
            except TokenGateError as exc:
                send(
                    mgmt.encode_message(
                        session,
                        mgmt.ManagementMessage(
                            mgmt.MessageKind.ERROR, {"code": exc.code}
                        ),
                    )
                )
                return
            send(
                mgmt.encode_message(
                    session,
                    mgmt.ManagementMessage(
                        mgmt.MessageKind.ACK,
                        {"action": decision.action, "secID": decision.sec_id},
                    ),
                )
            )
            self.deliver_all(decision.outbound)
            return
        if kind is mgmt.MessageKind.ERROR:
            return  # gateway-side anomaly report; already in its counters
        # gateways may not send config messages
        send(
            mgmt.encode_message(
                session,
                mgmt.ManagementMessage(
                    mgmt.MessageKind.ERROR, {"code": "UNEXPECTED_KIND"}
                ),
            )
        )

    # --- outbound configuration delivery ---

    def _deliver(self, out: Outbound) -> None:
        session = self._sessions.get(out.gateway_id)
        conn_id = self._conn_of_gateway.get(out.gateway_id)
        if session is None or conn_id is None or conn_id not in self._conns:
            self._pending_out.setdefault(out.gateway_id, []).append(out)
            return
        send, _ = self._conns[conn_id]
        send(
            mgmt.encode_message(
                session,
                mgmt.ManagementMessage(mgmt.MessageKind.from_name(out.kind), out.body),
            )
        )

    def deliver_all(self, outbound: list[Outbound]) -> None:
        for out in outbound:
            self._deliver(out)

    # --- operator entry points (CLI / HTTP both land here) ---

    def op_remove_gateway(self, gateway_id: str, sec_id: str) -> None:
        self.deliver_all(self.registry.remove_gateway_from_channel(gateway_id, sec_id))

    def op_decommission_gateway(self, gateway_id: str) -> None:
        outbound = self.registry.decommission_gateway(gateway_id)
        # refuse future sessions immediately
        self._sessions.pop(gateway_id, None)
        conn = self._conn_of_gateway.pop(gateway_id, None)
        if conn is not None:
            self._conns.pop(conn, None)
        self._pending_out.pop(gateway_id, None)
        self.deliver_all(outbound)

    def op_decommission_token(self, serial: int, teardown: bool = False) -> None:
        self.deliver_all(self.registry.decommission_token(serial, teardown))

    def op_revert_event(self, event_id: int) -> None:
        self.deliver_all(self.registry.revert_event(event_id))

    # --- timers ---

    def on_tick(self, now: int) -> None:
        self.registry.liveness_check(now, mgmt.OFFLINE_THRESHOLD)
