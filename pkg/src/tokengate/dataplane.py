"""MACsec-like protection of Ethernet-style frames among channel members.

A member gateway wraps each endpoint frame in a :class:`ProtectedFrame`:
a fixed-size tag header (channel hash, key version, sender index, frame
counter) followed by the ChaCha20-Poly1305 ciphertext of the whole inner
frame, with the header as associated data.  The AEAD nonce is the 96-bit
concatenation senderIndex || frameCounter, so counter freshness implies
nonce freshness.  Non-members forward frames untouched (pass-through).
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305

from .errors import (
    BadFormat,
    BadLength,
    BadTag,
    CounterExhausted,
    FrameReplay,
    NoChannel,
    NotMember,
    UnknownKeyVersion,
)

PROTECTED_ETHERTYPE = 0x88E5
MAX_PAYLOAD = 1500
MAX_FRAME_COUNTER = 2**64 - 1

# outer dst(6) src(6) ethertype(2) | secIDhash(4) keyVersion(4) senderIndex(4) frameCounter(8)
_OUTER = struct.Struct(">6s6sH")
_TAG_HEADER = struct.Struct(">IIIQ")


def sec_id_hash(sec_id: str) -> int:
    """32-bit channel label hash carried in the tag header."""
    return struct.unpack(">I", hashlib.sha256(sec_id.encode()).digest()[:4])[0]


def sender_index(macsec_address: bytes) -> int:
    """Per-member sender index; the low four address bytes (addresses are
    unique fleet-wide and allocated with distinct low bytes)."""
    return struct.unpack(">I", macsec_address[2:6])[0]


@dataclass(frozen=True)
class Frame:
    dst: bytes
    src: bytes
    ether_type: int
    payload: bytes

    def __post_init__(self):
        if len(self.dst) != 6 or len(self.src) != 6:
            raise BadLength("addresses must be 6 bytes")
        if len(self.payload) > MAX_PAYLOAD:
            raise BadLength("payload exceeds 1500 bytes")

    def serialize(self) -> bytes:
        return _OUTER.pack(self.dst, self.src, self.ether_type) + self.payload

    @classmethod
    def parse(cls, raw: bytes) -> "Frame":
        if len(raw) < _OUTER.size:
            raise BadFormat("short frame")
        dst, src, ether_type = _OUTER.unpack(raw[: _OUTER.size])
        return cls(dst=dst, src=src, ether_type=ether_type, payload=raw[_OUTER.size:])


@dataclass(frozen=True)
class ProtectedFrame:
    outer_dst: bytes
    outer_src: bytes
    sec_id_hash: int
    key_version: int
    sender_index: int
    frame_counter: int
    ciphertext: bytes  # AEAD ciphertext of the serialized inner frame, tag included

    def serialize(self) -> bytes:
        return (
            _OUTER.pack(self.outer_dst, self.outer_src, PROTECTED_ETHERTYPE)
            + _TAG_HEADER.pack(
                self.sec_id_hash,
                self.key_version,
                self.sender_index,
                self.frame_counter,
            )
            + self.ciphertext
        )

    @classmethod
    def parse(cls, raw: bytes) -> "ProtectedFrame":
        if len(raw) < _OUTER.size + _TAG_HEADER.size:
            raise BadFormat("short protected frame")
        dst, src, ether_type = _OUTER.unpack(raw[: _OUTER.size])
        if ether_type != PROTECTED_ETHERTYPE:
            raise BadFormat("not a protected frame")
        sid, kv, sender, counter = _TAG_HEADER.unpack(
            raw[_OUTER.size : _OUTER.size + _TAG_HEADER.size]
        )
        return cls(
            outer_dst=dst,
            outer_src=src,
            sec_id_hash=sid,
            key_version=kv,
            sender_index=sender,
            frame_counter=counter,
            ciphertext=raw[_OUTER.size + _TAG_HEADER.size :],
        )


def is_protected(raw: bytes) -> bool:
    if len(raw) < _OUTER.size:
        return False
    return _OUTER.unpack(raw[: _OUTER.size])[2] == PROTECTED_ETHERTYPE


@dataclass
class ChannelState:
    """One gateway's view of the secure channel it belongs to."""

    sec_id: str
    channel_key: bytes
    key_version: int
    macsec_address: bytes
    members: dict[str, bytes]  # gatewayId -> macsec address (peers and self)
    frame_counter: int = 0
    # per-sender highest accepted counter, reset on re-key
    replay_floor: dict[int, int] = field(default_factory=dict)
    # previous key kept valid for a single in-flight frame after re-key
    old_key: bytes | None = None
    old_key_version: int | None = None

    @property
    def hash(self) -> int:
        return sec_id_hash(self.sec_id)

    @property
    def sender(self) -> int:
        return sender_index(self.macsec_address)

    def peer_addresses(self) -> list[bytes]:
        return [
            addr
            for addr in sorted(self.members.values())
            if addr != self.macsec_address
        ]

    def rekey(self, channel_key: bytes, key_version: int) -> None:
        self.old_key = self.channel_key
        self.old_key_version = self.key_version
        self.channel_key = channel_key
        self.key_version = key_version
        self.frame_counter = 0
        self.replay_floor.clear()

    def drop_old_key(self) -> None:
        self.old_key = None
        self.old_key_version = None


def _nonce(sender: int, counter: int) -> bytes:
    return struct.pack(">IQ", sender, counter)


def protect(state: ChannelState | None, inner: Frame, dst_address: bytes) -> ProtectedFrame:
    """AEAD-encrypt an inner frame toward one member address."""
    if state is None:
        raise NoChannel("gateway is in pass-through mode")
    if state.frame_counter >= MAX_FRAME_COUNTER:
        raise CounterExhausted("frame counter exhausted; re-key required")
    state.frame_counter += 1
    counter = state.frame_counter
    header = _TAG_HEADER.pack(state.hash, state.key_version, state.sender, counter)
    ciphertext = ChaCha20Poly1305(state.channel_key).encrypt(
        _nonce(state.sender, counter), inner.serialize(), header
    )
    return ProtectedFrame(
        outer_dst=dst_address,
        outer_src=state.macsec_address,
        sec_id_hash=state.hash,
        key_version=state.key_version,
        sender_index=state.sender,
        frame_counter=counter,
        ciphertext=ciphertext,
    )


def deprotect(state: ChannelState | None, pf: ProtectedFrame) -> Frame:
    """Verify, replay-check and decrypt a protected frame."""
    if state is None:
        raise NotMember("gateway is in pass-through mode")
    if pf.sec_id_hash != state.hash:
        raise NotMember("protected frame for a different channel")
    if pf.key_version == state.key_version:
        key = state.channel_key
        current = True
    elif state.old_key is not None and pf.key_version == state.old_key_version:
        key = state.old_key
        current = False
    else:
        raise UnknownKeyVersion(f"no key for version {pf.key_version}")
    header = _TAG_HEADER.pack(
        pf.sec_id_hash, pf.key_version, pf.sender_index, pf.frame_counter
    )
    try:
        plaintext = ChaCha20Poly1305(key).decrypt(
            _nonce(pf.sender_index, pf.frame_counter), pf.ciphertext, header
        )
    except InvalidTag as exc:
        raise BadTag("protected frame failed authentication") from exc
    if current:
        floor = state.replay_floor.get(pf.sender_index, 0)
        if pf.frame_counter <= floor:
            raise FrameReplay(f"counter {pf.frame_counter} already seen")
        state.replay_floor[pf.sender_index] = pf.frame_counter
        # one frame was accepted since the re-key: retire the old key
        state.drop_old_key()
    else:
        # the single-frame grace window for the previous key
        state.drop_old_key()
    return Frame.parse(plaintext)
