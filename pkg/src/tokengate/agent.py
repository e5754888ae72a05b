"""Gateway-side state machine.

One sequential agent per gateway: it owns the management session with the
server, the data-plane channel state, the hosted token slot and the status
LED.  Inputs (management bytes, token presses, frames, timer ticks) are
processed one at a time; outputs go through the three injected send
callbacks (management link, factory network, attached endpoint).
"""

from __future__ import annotations

import json
from typing import Callable

from . import dataplane, mgmt
from .dataplane import ChannelState, Frame, ProtectedFrame
from .errors import (
    ChannelConflict,
    NoSession,
    NoToken,
    TokenGateError,
)
from .token_sim import TokenDevice

RED_BLINK_TICKS = 5  # bounded error-LED interval


class GatewayAgent:
    def __init__(
        self,
        gateway_id: str,
        static_priv: bytes,
        server_static_pub: bytes,
        macsec_address: bytes,
        send_mgmt: Callable[[bytes], None],
        send_net: Callable[[bytes], None],
        send_endpoint: Callable[[bytes], None],
        clock: Callable[[], int] = lambda: 0,
    ):
        self.gateway_id = gateway_id
        self.static_priv = static_priv
        self.server_static_pub = server_static_pub
        self.macsec_address = macsec_address
        self.send_mgmt = send_mgmt
        self.send_net = send_net
        self.send_endpoint = send_endpoint
        self.clock = clock

        self.session: mgmt.SessionState | None = None
        self._pending: mgmt.HandshakeInitiation | None = None
        self._handshake_counter = 0
        self.token: TokenDevice | None = None
        self.channel: ChannelState | None = None
        self._red_until = -1
        self._last_heartbeat_sent = -1
        self.anomalies = 0
        self.drop_counts: dict[str, int] = {}

    # --- derived status ---

    @property
    def mode(self) -> str:
        return "member" if self.channel is not None else "pass-through"

    @property
    def led(self) -> str:
        if self._red_until >= self.clock():
            return "red-error"
        return f"green-solid({self.channel.sec_id})" if self.channel else "off"

    def status_line(self) -> str:
        sec_id = self.channel.sec_id if self.channel else "-"
        key_version = self.channel.key_version if self.channel else 0
        return (
            f"{self.gateway_id} {self.mode} {sec_id} {key_version} "
            f"{self.led} {self._last_heartbeat_sent}"
        )

    def state_snapshot(self) -> str:
        """JSON view of agent state; must hold no key bytes after teardown."""
        doc = {
            "gatewayId": self.gateway_id,
            "mode": self.mode,
            "led": self.led,
            "anomalies": self.anomalies,
        }
        if self.channel is not None:
            doc["channel"] = {
                "secID": self.channel.sec_id,
                "keyVersion": self.channel.key_version,
                "channelKey": self.channel.channel_key.hex(),
                "members": {
                    gid: addr.hex() for gid, addr in self.channel.members.items()
                },
            }
        return json.dumps(doc, sort_keys=True)

    # --- management session ---

    def connect(self) -> None:
        """Start a handshake with the server over the management link."""
        self._handshake_counter += 1
        self._pending = mgmt.initiate_handshake(
            self.gateway_id,
            self.static_priv,
            self.server_static_pub,
            timestamp=self._handshake_counter,
        )
        self.send_mgmt(self._pending.msg1)

    def on_mgmt_bytes(self, raw: bytes) -> None:
        """Dispatch one frame received on the management link."""
        if raw[:2] == mgmt.HS_MAGIC:
            if self._pending is None:
                self._count_drop("UNEXPECTED_HANDSHAKE")
                return
            try:
                self.session = mgmt.finalize_handshake(
                    self._pending,
                    raw,
                    self.static_priv,
                    self.server_static_pub,
                    now=self.clock(),
                )
            except TokenGateError as exc:
                self._count_drop(exc.code)
                return
            self._pending = None
            return
        if self.session is None:
            self._count_drop("NO_SESSION")
            return
        try:
            msg = mgmt.decode_message(self.session, raw)
        except TokenGateError as exc:
            # injected/replayed/corrupted traffic: drop, never apply
            self._count_drop(exc.code)
            return
        self._dispatch(msg)

    def _count_drop(self, code: str) -> None:
        self.drop_counts[code] = self.drop_counts.get(code, 0) + 1

    def _dispatch(self, msg: mgmt.ManagementMessage) -> None:
        if msg.kind is mgmt.MessageKind.CHANNEL_CONFIG:
            self.apply_channel_config(msg.body)
        elif msg.kind is mgmt.MessageKind.CHANNEL_UPDATE:
            self.apply_channel_update(msg.body)
        elif msg.kind is mgmt.MessageKind.CHANNEL_TEARDOWN:
            self.apply_teardown(msg.body)
        elif msg.kind is mgmt.MessageKind.ERROR:
            self._red_until = self.clock() + RED_BLINK_TICKS
        elif msg.kind is mgmt.MessageKind.ACK:
            pass  # server drives any config change
        else:
            self._count_drop("UNEXPECTED_KIND")

    def _send(self, kind: mgmt.MessageKind, body: dict) -> None:
        assert self.session is not None
        self.send_mgmt(mgmt.encode_message(self.session, mgmt.ManagementMessage(kind, body)))

    # --- token hosting ---

    def plug_token(self, token: TokenDevice) -> None:
        token.plug(self.gateway_id)
        self.token = token

    def unplug_token(self) -> TokenDevice | None:
        token, self.token = self.token, None
        if token is not None:
            token.unplug()
        return token

    def on_button_press(self) -> None:
        """Read one OTP from the hosted token and send a TokenEvent."""
        if self.token is None:
            raise NoToken("no token plugged into this gateway")
        if self.session is None:
            # offline presses are rejected, not queued: counters would go stale
            self._red_until = self.clock() + RED_BLINK_TICKS
            raise NoSession("management session not established")
        otp = self.token.press()
        self._send(
            mgmt.MessageKind.TOKEN_EVENT,
            {"serial": self.token.serial, "otp": otp},
        )

    # --- configuration from the server ---

    def apply_channel_config(self, body: dict) -> None:
        sec_id = body["secID"]
        if self.channel is not None and self.channel.sec_id != sec_id:
            self._report_error(ChannelConflict(
                f"already member of {self.channel.sec_id}"
            ))
            return
        members = {gid: bytes.fromhex(a) for gid, a in body["members"].items()}
        if (
            self.channel is not None
            and self.channel.key_version == body["keyVersion"]
            and self.channel.members == members
        ):
            return  # identical config: idempotent
        self.channel = ChannelState(
            sec_id=sec_id,
            channel_key=bytes.fromhex(body["channelKey"]),
            key_version=body["keyVersion"],
            macsec_address=self.macsec_address,
            members=members,
        )

    def apply_channel_update(self, body: dict) -> None:
        if self.channel is None or self.channel.sec_id != body["secID"]:
            self.anomalies += 1
            return
        self.channel.members = {
            gid: bytes.fromhex(a) for gid, a in body["members"].items()
        }
        if body["keyVersion"] != self.channel.key_version:
            if "channelKey" in body:
                self.channel.rekey(bytes.fromhex(body["channelKey"]), body["keyVersion"])
            else:
                self.anomalies += 1

    def apply_teardown(self, body: dict) -> None:
        if self.channel is None:
            self.anomalies += 1
            return
        # zeroize: drop every reference to key material
        self.channel.channel_key = b""
        self.channel.old_key = None
        self.channel = None

    def _report_error(self, exc: TokenGateError) -> None:
        self.anomalies += 1
        if self.session is not None:
            self._send(mgmt.MessageKind.ERROR, {"code": exc.code, "detail": str(exc)})

    # --- data plane ---

    def on_endpoint_frame(self, raw: bytes) -> None:
        """Frame arriving from the protected machine side."""
        if self.channel is None:
            self.send_net(raw)  # pass-through
            return
        inner = Frame.parse(raw)
        for addr in self.channel.peer_addresses():
            pf = dataplane.protect(self.channel, inner, addr)
            self.send_net(pf.serialize())

    def on_network_frame(self, raw: bytes) -> None:
        """Frame arriving from the factory network side."""
        if not dataplane.is_protected(raw):
            self.send_endpoint(raw)  # pass-through
            return
        pf = ProtectedFrame.parse(raw)
        if self.channel is None:
            self.send_endpoint(raw)  # pass-through, byte-identical
            return
        if pf.outer_dst != self.macsec_address:
            return  # protected traffic for somebody else on the segment
        if pf.sec_id_hash != self.channel.hash:
            self._count_drop("WRONG_CHANNEL")
            return
        try:
            inner = dataplane.deprotect(self.channel, pf)
        except TokenGateError as exc:
            self._count_drop(exc.code)
            return
        self.send_endpoint(inner.serialize())

    # --- timers ---

    def on_tick(self, now: int) -> None:
        if self.session is None:
            return
        if now - self._last_heartbeat_sent >= mgmt.HEARTBEAT_INTERVAL:
            self._last_heartbeat_sent = now
            self._send(mgmt.MessageKind.HEARTBEAT, {"t": now})
