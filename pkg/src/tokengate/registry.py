"""Authoritative management-server state: gateways, tokens, channels, events.

The registry is a single-writer state machine.  Mutating operations validate
their inputs, update the records, append a :class:`ConfigEvent`, and return
the list of :class:`Outbound` messages the transport layer must deliver to
gateways (channel configs, updates, teardowns).  The registry itself never
talks to the network and never holds an OTP secret; OTP checks go through
the HSM by handle.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from random import Random
from typing import Callable, Iterable

from .errors import (
    CorruptSnapshot,
    DuplicateId,
    DuplicateSerial,
    NotAMember,
    NotIsolated,
    NotRevertible,
    RejectBadOtp,
    RejectChannelConflict,
    RejectDecommissionedToken,
    RejectReplay,
    RejectUnknownGateway,
    RejectUnknownToken,
    TokenDecommissioned,
    TokenGateError,
    UnknownChannel,
    UnknownEvent,
    UnknownGateway,
    UnknownToken,
)
from .token_sim import HsmStore, TokenDevice

CHANNEL_KEY_BYTES = 32


class GatewayStatus(str, Enum):
    PROVISIONED = "provisioned"
    ONLINE = "online"
    OFFLINE = "offline"
    DECOMMISSIONED = "decommissioned"


class TokenStatus(str, Enum):
    ACTIVE = "active"
    DECOMMISSIONED = "decommissioned"


@dataclass
class GatewayRecord:
    gateway_id: str
    pub_key: bytes
    mgmt_address: str
    macsec_address: bytes  # 6-byte data-plane address
    status: GatewayStatus = GatewayStatus.PROVISIONED
    last_heartbeat: int = -1


@dataclass
class TokenRecord:
    serial: int
    otp_secret_handle: str
    last_counters: tuple[int, int] = (0, -1)
    bound_channel: str | None = None
    status: TokenStatus = TokenStatus.ACTIVE


@dataclass
class SecureChannel:
    sec_id: str
    channel_key: bytes
    key_version: int = 1
    tokens: set[int] = field(default_factory=set)
    gateways: set[str] = field(default_factory=set)


@dataclass
class ConfigEvent:
    event_id: int
    ts: int
    actor: str  # "token:<serial>" or "operator" or "system"
    gateway_id: str | None
    action: str  # join|leave|decommission-gw|decommission-token|revert|alarm|online
    sec_id: str | None
    outcome: str  # "ok" or an error code
    reverts: int | None = None
    effect: str | None = None  # for reverts: the membership op actually applied

    def to_json(self) -> dict:
        doc = {
            "eventId": self.event_id,
            "ts": self.ts,
            "actor": self.actor,
            "gatewayId": self.gateway_id,
            "action": self.action,
            "secID": self.sec_id,
            "outcome": self.outcome,
        }
        if self.reverts is not None:
            doc["reverts"] = self.reverts
        if self.effect is not None:
            doc["effect"] = self.effect
        return doc


@dataclass
class Outbound:
    """A management message the server must deliver to one gateway."""

    gateway_id: str
    kind: str  # ChannelConfig | ChannelUpdate | ChannelTeardown
    body: dict


@dataclass
class ChannelDecision:
    action: str  # "join" | "leave"
    sec_id: str
    gateway_id: str
    event_id: int
    outbound: list[Outbound]


class Registry:
    """Server-side records and decision logic for the whole fleet."""

    SNAPSHOT_VERSION = 1

    def __init__(
        self,
        hsm: HsmStore,
        rng: Random | None = None,
        clock: Callable[[], int] | None = None,
        rotate_on_shrink: bool = True,
        event_sink: Callable[[ConfigEvent], None] | None = None,
    ):
        self.hsm = hsm
        self.rng = rng or Random()
        self.clock = clock or (lambda: 0)
        self.rotate_on_shrink = rotate_on_shrink
        self.event_sink = event_sink
        self.gateways: dict[str, GatewayRecord] = {}
        self.tokens: dict[int, TokenRecord] = {}
        self.channels: dict[str, SecureChannel] = {}
        self.events: list[ConfigEvent] = []
        self._next_event_id = 1

    # --- event log ---

    def _log(
        self,
        actor: str,
        gateway_id: str | None,
        action: str,
        sec_id: str | None,
        outcome: str = "ok",
        reverts: int | None = None,
        effect: str | None = None,
    ) -> ConfigEvent:
        ev = ConfigEvent(
            event_id=self._next_event_id,
            ts=self.clock(),
            actor=actor,
            gateway_id=gateway_id,
            action=action,
            sec_id=sec_id,
            outcome=outcome,
            reverts=reverts,
            effect=effect,
        )
        self._next_event_id += 1
        self.events.append(ev)
        if self.event_sink is not None:
            self.event_sink(ev)
        return ev

    # --- provisioning (isolated link only) ---

    @staticmethod
    def _require_isolated(link) -> None:
        if not getattr(link, "isolated", False):
            raise NotIsolated("provisioning requires the isolated port")

    def provision_gateway(
        self,
        link,
        gateway_id: str,
        pub_key: bytes,
        mgmt_address: str,
        macsec_address: bytes,
    ) -> GatewayRecord:
        self._require_isolated(link)
        if gateway_id in self.gateways:
            raise DuplicateId(f"gateway {gateway_id} already provisioned")
        if any(g.pub_key == pub_key for g in self.gateways.values()):
            raise DuplicateId("public key already registered")
        if any(g.macsec_address == macsec_address for g in self.gateways.values()):
            raise DuplicateId("data-plane address already registered")
        record = GatewayRecord(
            gateway_id=gateway_id,
            pub_key=bytes(pub_key),
            mgmt_address=mgmt_address,
            macsec_address=bytes(macsec_address),
        )
        self.gateways[gateway_id] = record
        return record

    def provision_token(self, link, token: TokenDevice, sec_id: str) -> TokenRecord:
        """Register a physically connected token and bind it to a channel."""
        self._require_isolated(link)
        if token.serial in self.tokens:
            existing = self.tokens[token.serial]
            if existing.status is TokenStatus.DECOMMISSIONED:
                raise TokenDecommissioned(f"serial {token.serial} was decommissioned")
            raise DuplicateSerial(f"serial {token.serial} already registered")
        handle = self.hsm.store(token.public_id, token.secret)
        record = TokenRecord(
            serial=token.serial,
            otp_secret_handle=handle,
            last_counters=(token.use_counter, token.session_counter - 1),
            bound_channel=sec_id,
        )
        self.tokens[token.serial] = record
        channel = self.channels.get(sec_id)
        if channel is None:
            channel = SecureChannel(sec_id=sec_id, channel_key=self._fresh_key())
            self.channels[sec_id] = channel
        channel.tokens.add(token.serial)
        return record

    def _fresh_key(self) -> bytes:
        return self.rng.randbytes(CHANNEL_KEY_BYTES)

    # --- channel membership helpers ---

    def _members_body(self, channel: SecureChannel, with_key: bool) -> dict:
        body = {
            "secID": channel.sec_id,
            "keyVersion": channel.key_version,
            "members": {
                gid: self.gateways[gid].macsec_address.hex()
                for gid in sorted(channel.gateways)
            },
        }
        if with_key:
            body["channelKey"] = channel.channel_key.hex()
        return body

    def _join(self, channel: SecureChannel, gateway_id: str) -> list[Outbound]:
        channel.gateways.add(gateway_id)
        out = [
            Outbound(gateway_id, "ChannelConfig", self._members_body(channel, True))
        ]
        for gid in sorted(channel.gateways - {gateway_id}):
            out.append(
                Outbound(gid, "ChannelUpdate", self._members_body(channel, False))
            )
        return out

    def _leave(
        self, channel: SecureChannel, gateway_id: str, notify_leaver: bool = True
    ) -> list[Outbound]:
        channel.gateways.discard(gateway_id)
        out = []
        if notify_leaver:
            out.append(
                Outbound(gateway_id, "ChannelTeardown", {"secID": channel.sec_id})
            )
        if self.rotate_on_shrink:
            channel.channel_key = self._fresh_key()
            channel.key_version += 1
        for gid in sorted(channel.gateways):
            out.append(
                Outbound(
                    gid,
                    "ChannelUpdate",
                    self._members_body(channel, self.rotate_on_shrink),
                )
            )
        return out

    def _member_channel(self, gateway_id: str) -> SecureChannel | None:
        for channel in self.channels.values():
            if gateway_id in channel.gateways:
                return channel
        return None

    # --- token-driven configuration ---

    def handle_token_event(
        self, gateway_id: str, serial: int, otp_text: str
    ) -> ChannelDecision:
        """Validate a (serial, OTP) pair and toggle channel membership."""
        actor = f"token:{serial}"
        try:
            record = self.tokens.get(serial)
            if record is None:
                raise RejectUnknownToken(f"serial {serial} unknown")
            if record.status is TokenStatus.DECOMMISSIONED:
                raise RejectDecommissionedToken(f"serial {serial} decommissioned")
            try:
                plain = self.hsm.verify(record.otp_secret_handle, otp_text)
            except TokenGateError as exc:
                raise RejectBadOtp(f"OTP rejected: {exc.code}") from exc
            counters = (plain.use_counter, plain.session_counter)
            if counters <= record.last_counters:
                raise RejectReplay(f"counters {counters} not increasing")
            gateway = self.gateways.get(gateway_id)
            if gateway is None or gateway.status is GatewayStatus.DECOMMISSIONED:
                raise RejectUnknownGateway(f"gateway {gateway_id} not usable")
            channel = self.channels.get(record.bound_channel or "")
            if channel is None:
                raise RejectUnknownToken(
                    f"token {serial} has no active channel binding"
                )
            current = self._member_channel(gateway_id)
            if current is not None and current.sec_id != channel.sec_id:
                raise RejectChannelConflict(
                    f"{gateway_id} already member of {current.sec_id}"
                )
            # all checks passed: commit the counters, then toggle
            record.last_counters = counters
        except TokenGateError as exc:
            self._log(actor, gateway_id, "token-event", None, outcome=exc.code)
            raise
        if gateway_id not in channel.gateways:
            action = "join"
            outbound = self._join(channel, gateway_id)
        else:
            action = "leave"
            outbound = self._leave(channel, gateway_id)
        ev = self._log(actor, gateway_id, action, channel.sec_id)
        return ChannelDecision(action, channel.sec_id, gateway_id, ev.event_id, outbound)

    # --- operator commands ---

    def remove_gateway_from_channel(
        self, gateway_id: str, sec_id: str, actor: str = "operator"
    ) -> list[Outbound]:
        channel = self.channels.get(sec_id)
        if channel is None:
            raise UnknownChannel(f"no channel {sec_id}")
        if gateway_id not in channel.gateways:
            raise NotAMember(f"{gateway_id} is not a member of {sec_id}")
        outbound = self._leave(channel, gateway_id)
        self._log(actor, gateway_id, "leave", sec_id)
        return outbound

    def decommission_gateway(self, gateway_id: str) -> list[Outbound]:
        gateway = self.gateways.get(gateway_id)
        if gateway is None:
            raise UnknownGateway(f"no gateway {gateway_id}")
        outbound: list[Outbound] = []
        if gateway.status is not GatewayStatus.DECOMMISSIONED:
            channel = self._member_channel(gateway_id)
            if channel is not None:
                # no teardown message: decommissioning needs no cooperation
                outbound = self._leave(channel, gateway_id, notify_leaver=False)
            gateway.status = GatewayStatus.DECOMMISSIONED
            self._log(
                "operator",
                gateway_id,
                "decommission-gw",
                channel.sec_id if channel else None,
            )
        return outbound

    def decommission_token(
        self, serial: int, tear_down_channel: bool = False
    ) -> list[Outbound]:
        record = self.tokens.get(serial)
        if record is None:
            raise UnknownToken(f"no token {serial}")
        outbound: list[Outbound] = []
        sec_id = record.bound_channel
        if record.status is not TokenStatus.DECOMMISSIONED:
            record.status = TokenStatus.DECOMMISSIONED
            record.bound_channel = None
            channel = self.channels.get(sec_id or "")
            if channel is not None:
                channel.tokens.discard(serial)
                if tear_down_channel:
                    for gid in sorted(channel.gateways):
                        outbound.append(
                            Outbound(gid, "ChannelTeardown", {"secID": channel.sec_id})
                        )
                    channel.gateways.clear()
                    del self.channels[channel.sec_id]
            self._log("operator", None, "decommission-token", sec_id)
        return outbound

    def revert_event(self, event_id: int) -> list[Outbound]:
        target = next((e for e in self.events if e.event_id == event_id), None)
        if target is None:
            raise UnknownEvent(f"no event {event_id}")
        action = target.effect or target.action
        if action not in ("join", "leave") or target.outcome != "ok":
            raise NotRevertible(f"event {event_id} is not a membership change")
        gateway_id = target.gateway_id
        sec_id = target.sec_id
        channel = self.channels.get(sec_id or "")
        gateway = self.gateways.get(gateway_id or "")
        if channel is None or gateway is None:
            raise NotRevertible("channel or gateway no longer exists")
        if gateway.status is GatewayStatus.DECOMMISSIONED:
            raise NotRevertible(f"{gateway_id} is decommissioned")
        if action == "join":
            if gateway_id not in channel.gateways:
                raise NotRevertible(f"{gateway_id} is no longer a member of {sec_id}")
            effect = "leave"
            outbound = self._leave(channel, gateway_id)
        else:
            if gateway_id in channel.gateways:
                raise NotRevertible(f"{gateway_id} is already a member of {sec_id}")
            current = self._member_channel(gateway_id)
            if current is not None:
                raise NotRevertible(f"{gateway_id} is a member of {current.sec_id}")
            effect = "join"
            outbound = self._join(channel, gateway_id)
        self._log(
            "operator", gateway_id, "revert", sec_id, reverts=event_id, effect=effect
        )
        return outbound

    # --- liveness bookkeeping (driven by the management layer) ---

    def mark_heartbeat(self, gateway_id: str, now: int) -> None:
        gateway = self.gateways.get(gateway_id)
        if gateway is None or gateway.status is GatewayStatus.DECOMMISSIONED:
            return
        if gateway.status is GatewayStatus.OFFLINE:
            gateway.status = GatewayStatus.ONLINE
            self._log("system", gateway_id, "online", None)
        elif gateway.status is GatewayStatus.PROVISIONED:
            gateway.status = GatewayStatus.ONLINE
        gateway.last_heartbeat = now

    def liveness_check(self, now: int, threshold: int) -> list[str]:
        """Mark gateways silent for >= threshold ticks offline; returns them."""
        newly_offline = []
        for gateway in self.gateways.values():
            if gateway.status is not GatewayStatus.ONLINE:
                continue
            if gateway.last_heartbeat >= 0 and now - gateway.last_heartbeat >= threshold:
                gateway.status = GatewayStatus.OFFLINE
                self._log("system", gateway.gateway_id, "alarm", None)
                newly_offline.append(gateway.gateway_id)
        return newly_offline

    # --- persistence ---

    def snapshot(self) -> dict:
        """Lossless JSON state document.  Channel keys are wrapped under the
        HSM master key so the document contains no cleartext key material."""
        return {
            "version": self.SNAPSHOT_VERSION,
            "nextEventId": self._next_event_id,
            "gateways": [
                {
                    "gatewayId": g.gateway_id,
                    "pubKey": g.pub_key.hex(),
                    "mgmtAddress": g.mgmt_address,
                    "macsecAddress": g.macsec_address.hex(),
                    "status": g.status.value,
                    "lastHeartbeat": g.last_heartbeat,
                }
                for g in self.gateways.values()
            ],
            "tokens": [
                {
                    "serial": t.serial,
                    "otpSecretHandle": t.otp_secret_handle,
                    "lastCounters": list(t.last_counters),
                    "boundChannel": t.bound_channel,
                    "status": t.status.value,
                }
                for t in self.tokens.values()
            ],
            "channels": [
                {
                    "secID": c.sec_id,
                    "wrappedKey": self.hsm.wrap(c.channel_key),
                    "keyVersion": c.key_version,
                    "tokens": sorted(c.tokens),
                    "gateways": sorted(c.gateways),
                }
                for c in self.channels.values()
            ],
            "events": [e.to_json() for e in self.events],
        }

    @classmethod
    def restore(
        cls,
        doc: dict,
        hsm: HsmStore,
        rng: Random | None = None,
        clock: Callable[[], int] | None = None,
        rotate_on_shrink: bool = True,
        event_sink: Callable[[ConfigEvent], None] | None = None,
    ) -> "Registry":
        reg = cls(hsm, rng=rng, clock=clock, rotate_on_shrink=rotate_on_shrink,
                  event_sink=event_sink)
        try:
            if doc["version"] != cls.SNAPSHOT_VERSION:
                raise CorruptSnapshot(f"unsupported snapshot version {doc['version']}")
            reg._next_event_id = doc["nextEventId"]
            for g in doc["gateways"]:
                reg.gateways[g["gatewayId"]] = GatewayRecord(
                    gateway_id=g["gatewayId"],
                    pub_key=bytes.fromhex(g["pubKey"]),
                    mgmt_address=g["mgmtAddress"],
                    macsec_address=bytes.fromhex(g["macsecAddress"]),
                    status=GatewayStatus(g["status"]),
                    last_heartbeat=g["lastHeartbeat"],
                )
            for t in doc["tokens"]:
                reg.tokens[t["serial"]] = TokenRecord(
                    serial=t["serial"],
                    otp_secret_handle=t["otpSecretHandle"],
                    last_counters=tuple(t["lastCounters"]),
                    bound_channel=t["boundChannel"],
                    status=TokenStatus(t["status"]),
                )
            for c in doc["channels"]:
                reg.channels[c["secID"]] = SecureChannel(
                    sec_id=c["secID"],
                    channel_key=hsm.unwrap(c["wrappedKey"]),
                    key_version=c["keyVersion"],
                    tokens=set(c["tokens"]),
                    gateways=set(c["gateways"]),
                )
            for e in doc["events"]:
                reg.events.append(
                    ConfigEvent(
                        event_id=e["eventId"],
                        ts=e["ts"],
                        actor=e["actor"],
                        gateway_id=e["gatewayId"],
                        action=e["action"],
                        sec_id=e["secID"],
                        outcome=e["outcome"],
                        reverts=e.get("reverts"),
                        effect=e.get("effect"),
                    )
                )
        except CorruptSnapshot:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise CorruptSnapshot(f"malformed snapshot: {exc}") from exc
        return reg

    def snapshot_json(self) -> str:
        return json.dumps(self.snapshot(), sort_keys=True)

    @classmethod
    def restore_json(cls, text: str, hsm: HsmStore, **kwargs) -> "Registry":
        try:
            doc = json.loads(text)
        except ValueError as exc:
            raise CorruptSnapshot(f"snapshot is not valid JSON: {exc}") from exc
        return cls.restore(doc, hsm, **kwargs)

    # --- log-determinism check helper ---

    def replay_membership(self, events: Iterable[ConfigEvent]) -> dict[str, set[str]]:
        """Recompute channel membership purely from the event log."""
        members: dict[str, set[str]] = {}
        for ev in events:
            if ev.outcome != "ok":
                continue
            action = ev.effect or ev.action
            if action == "join":
                members.setdefault(ev.sec_id, set()).add(ev.gateway_id)
            elif action == "leave":
                members.setdefault(ev.sec_id, set()).discard(ev.gateway_id)
            elif action == "decommission-gw":
                for group in members.values():
                    group.discard(ev.gateway_id)
            elif action == "decommission-token" and ev.sec_id is not None:
                if ev.sec_id not in self.channels:
                    members.pop(ev.sec_id, None)
        return members
