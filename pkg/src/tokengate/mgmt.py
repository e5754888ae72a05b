"""Authenticated management channel between server and gateways.

A two-message handshake built from X25519, HKDF-SHA256 and ChaCha20-Poly1305
authenticates both peers from the static keys exchanged at provisioning and
mixes in fresh ephemerals, so recorded handshakes cannot be replayed into a
usable session.  Transport frames are length-prefixed, AEAD-protected, and
carry a strictly increasing sequence number as associated data.

Wire format (after the 4-byte big-endian length prefix):
  transport: magic "TG" | version 0x01 | kind byte | seq u64 BE | ciphertext+tag
  handshake: magic "TH" | version 0x01 | msg byte (1|2) | body
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from enum import IntEnum

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .errors import AuthFail, IntegrityFail, ReplayedFrame, SessionClosed

MAGIC = b"TG"
HS_MAGIC = b"TH"
VERSION = 1

# heartbeat interval and offline threshold, in virtual-clock ticks
TICKS_PER_SECOND = 10
HEARTBEAT_INTERVAL = 1 * TICKS_PER_SECOND  # one simulated second
OFFLINE_THRESHOLD = 3 * HEARTBEAT_INTERVAL

_PROTOCOL_NAME = b"tokengate-mgmt-x25519-chacha20poly1305-v1"


class MessageKind(IntEnum):
    TOKEN_EVENT = 1
    CHANNEL_CONFIG = 2
    CHANNEL_UPDATE = 3
    CHANNEL_TEARDOWN = 4
    HEARTBEAT = 5
    ACK = 6
    ERROR = 7

    @classmethod
    def from_name(cls, name: str) -> "MessageKind":
        return _KIND_BY_NAME[name]


_KIND_NAMES = {
    MessageKind.TOKEN_EVENT: "TokenEvent",
    MessageKind.CHANNEL_CONFIG: "ChannelConfig",
    MessageKind.CHANNEL_UPDATE: "ChannelUpdate",
    MessageKind.CHANNEL_TEARDOWN: "ChannelTeardown",
    MessageKind.HEARTBEAT: "Heartbeat",
    MessageKind.ACK: "Ack",
    MessageKind.ERROR: "Error",
}
_KIND_BY_NAME = {name: kind for kind, name in _KIND_NAMES.items()}


@dataclass
class ManagementMessage:
    kind: MessageKind
    body: dict
    seq: int = -1  # assigned on send

    @property
    def kind_name(self) -> str:
        return _KIND_NAMES[self.kind]


@dataclass
class SessionState:
    """One direction-keyed, sequence-checked session with a peer."""

    peer_id: str
    session_id: str
    send_key: bytes
    recv_key: bytes
    established: int
    send_seq: int = 0
    recv_seq: int = 0
    closed: bool = False

    def close(self) -> None:
        self.closed = True


def generate_static_keypair(seed: bytes | None = None) -> tuple[bytes, bytes]:
    """Return (private_bytes, public_bytes).  A 32-byte seed makes it
    deterministic for the simulator."""
    if seed is not None:
        priv = X25519PrivateKey.from_private_bytes(seed)
    else:
        priv = X25519PrivateKey.generate()
    return _priv_bytes(priv), _pub_bytes(priv.public_key())


def _priv_bytes(priv: X25519PrivateKey) -> bytes:
    return priv.private_bytes(
        serialization.Encoding.Raw,
        serialization.PrivateFormat.Raw,
        serialization.NoEncryption(),
    )


def _pub_bytes(pub: X25519PublicKey) -> bytes:
    return pub.public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw)


def _dh(priv: bytes, pub: bytes) -> bytes:
    return X25519PrivateKey.from_private_bytes(priv).exchange(
        X25519PublicKey.from_public_bytes(pub)
    )


def _hkdf(ikm: bytes, salt: bytes, info: bytes, length: int) -> bytes:
    return HKDF(
        algorithm=hashes.SHA256(), length=length, salt=salt, info=info
    ).derive(ikm)


def _transcript(*parts: bytes) -> bytes:
    h = hashlib.sha256(_PROTOCOL_NAME)
    for part in parts:
        h.update(part)
    return h.digest()


@dataclass
class HandshakeInitiation:
    """Initiator-side pending state between message 1 and message 2."""

    gateway_id: str
    eph_priv: bytes
    msg1: bytes
    ck: bytes


def initiate_handshake(
    gateway_id: str,
    static_priv: bytes,
    server_static_pub: bytes,
    timestamp: int = 0,
    eph_seed: bytes | None = None,
) -> HandshakeInitiation:
    """Build handshake message 1 (gateway -> server).

    ``timestamp`` must be monotonic per gateway across reconnects; the server
    rejects initiations whose timestamp does not advance, which stops a
    recorded message 1 from displacing a live session.
    """
    if eph_seed is not None:
        eph = X25519PrivateKey.from_private_bytes(eph_seed)
    else:
        eph = X25519PrivateKey.generate()
    eph_priv, eph_pub = _priv_bytes(eph), _pub_bytes(eph.public_key())
    gid = gateway_id.encode()
    dh_es = _dh(eph_priv, server_static_pub)
    dh_ss = _dh(static_priv, server_static_pub)
    ck = _hkdf(dh_es + dh_ss, salt=_PROTOCOL_NAME, info=b"ck1", length=32)
    ad = _transcript(gid, eph_pub)
    proof = ChaCha20Poly1305(ck).encrypt(
        b"\x00" * 12, struct.pack(">Q", timestamp), ad
    )
    body = struct.pack(">B", len(gid)) + gid + eph_pub + proof
    msg1 = HS_MAGIC + bytes([VERSION, 1]) + body
    return HandshakeInitiation(gateway_id, eph_priv, msg1, ck)


def respond_handshake(
    msg1: bytes,
    server_static_priv: bytes,
    lookup_static_pub,
    now: int = 0,
    eph_seed: bytes | None = None,
) -> tuple[str, int, bytes, SessionState]:
    """Server side: verify message 1, emit message 2, derive the session.

    ``lookup_static_pub(gateway_id)`` must return the registered static
    public key or raise AUTH_FAIL / DECOMMISSIONED_PEER itself.
    Returns (gateway_id, timestamp, msg2, session); the caller must check the
    timestamp against the last accepted one for that gateway.
    """
    if len(msg1) < 4 or msg1[:2] != HS_MAGIC or msg1[2] != VERSION or msg1[3] != 1:
        raise AuthFail("malformed handshake initiation")
    idx = 4
    gid_len = msg1[idx]
    idx += 1
    gid = msg1[idx : idx + gid_len]
    idx += gid_len
    eph_i_pub = msg1[idx : idx + 32]
    proof = msg1[idx + 32 :]
    if len(eph_i_pub) != 32 or len(proof) != 24:
        raise AuthFail("malformed handshake initiation")
    try:
        gateway_id = gid.decode()
    except UnicodeDecodeError as exc:
        raise AuthFail("malformed handshake initiation") from exc
    gw_static_pub = lookup_static_pub(gateway_id)
    dh_es = _dh(server_static_priv, eph_i_pub)
    dh_ss = _dh(server_static_priv, gw_static_pub)
    ck = _hkdf(dh_es + dh_ss, salt=_PROTOCOL_NAME, info=b"ck1", length=32)
    ad = _transcript(gid, eph_i_pub)
    try:
        ts_bytes = ChaCha20Poly1305(ck).decrypt(b"\x00" * 12, proof, ad)
    except InvalidTag as exc:
        raise AuthFail("handshake proof does not verify") from exc
    (timestamp,) = struct.unpack(">Q", ts_bytes)

    if eph_seed is not None:
        eph = X25519PrivateKey.from_private_bytes(eph_seed)
    else:
        eph = X25519PrivateKey.generate()
    eph_r_priv, eph_r_pub = _priv_bytes(eph), _pub_bytes(eph.public_key())
    dh_ee = _dh(eph_r_priv, eph_i_pub)
    dh_se = _dh(eph_r_priv, gw_static_pub)
    ck2 = _hkdf(dh_ee + dh_se, salt=ck, info=b"ck2", length=32)
    ad2 = _transcript(gid, eph_i_pub, eph_r_pub)
    confirm = ChaCha20Poly1305(ck2).encrypt(b"\x00" * 12, b"", ad2)
    msg2 = HS_MAGIC + bytes([VERSION, 2]) + eph_r_pub + confirm
    session = _derive_session(gateway_id, ck2, ad2, initiator=False, now=now)
    return gateway_id, timestamp, msg2, session


def finalize_handshake(
    pending: HandshakeInitiation,
    msg2: bytes,
    static_priv: bytes,
    server_static_pub: bytes,
    now: int = 0,
) -> SessionState:
    """Initiator side: verify message 2 and derive the session."""
    if len(msg2) != 4 + 32 + 16 or msg2[:2] != HS_MAGIC or msg2[3] != 2:
        raise AuthFail("malformed handshake response")
    eph_r_pub = msg2[4:36]
    confirm = msg2[36:]
    dh_ee = _dh(pending.eph_priv, eph_r_pub)
    dh_se = _dh(static_priv, eph_r_pub)
    ck2 = _hkdf(dh_ee + dh_se, salt=pending.ck, info=b"ck2", length=32)
    gid = pending.gateway_id.encode()
    eph_i_pub = _pub_bytes(
        X25519PrivateKey.from_private_bytes(pending.eph_priv).public_key()
    )
    ad2 = _transcript(gid, eph_i_pub, eph_r_pub)
    try:
        ChaCha20Poly1305(ck2).decrypt(b"\x00" * 12, confirm, ad2)
    except InvalidTag as exc:
        raise AuthFail("handshake confirmation does not verify") from exc
    return _derive_session(pending.gateway_id, ck2, ad2, initiator=True, now=now)


def _derive_session(
    peer_id: str, ck2: bytes, transcript: bytes, initiator: bool, now: int
) -> SessionState:
    keys = _hkdf(ck2, salt=transcript, info=b"session-keys", length=64)
    i2r, r2i = keys[:32], keys[32:]
    return SessionState(
        peer_id=peer_id,
        session_id=transcript[:8].hex(),
        send_key=i2r if initiator else r2i,
        recv_key=r2i if initiator else i2r,
        established=now,
    )


# --- transport framing ---


def encode_message(session: SessionState, msg: ManagementMessage) -> bytes:
    """Encrypt and frame one message; consumes the next send sequence number."""
    if session.closed:
        raise SessionClosed(f"session with {session.peer_id} is closed")
    seq = session.send_seq
    session.send_seq += 1
    header = MAGIC + bytes([VERSION, msg.kind]) + struct.pack(">Q", seq)
    plaintext = json.dumps(msg.body, sort_keys=True).encode()
    nonce = struct.pack(">4xQ", seq)
    ciphertext = ChaCha20Poly1305(session.send_key).encrypt(nonce, plaintext, header)
    msg.seq = seq
    return header + ciphertext


def decode_message(session: SessionState, frame: bytes) -> ManagementMessage:
    """Verify, sequence-check and decrypt one received frame."""
    if session.closed:
        raise SessionClosed(f"session with {session.peer_id} is closed")
    if len(frame) < 12 or frame[:2] != MAGIC or frame[2] != VERSION:
        raise IntegrityFail("malformed frame header")
    try:
        kind = MessageKind(frame[3])
    except ValueError as exc:
        raise IntegrityFail(f"unknown message kind {frame[3]}") from exc
    seq = struct.unpack(">Q", frame[4:12])[0]
    if seq != session.recv_seq:
        raise ReplayedFrame(f"sequence {seq}, expected {session.recv_seq}")
    header, ciphertext = frame[:12], frame[12:]
    nonce = struct.pack(">4xQ", seq)
    try:
        plaintext = ChaCha20Poly1305(session.recv_key).decrypt(
            nonce, ciphertext, header
        )
    except InvalidTag as exc:
        raise IntegrityFail("AEAD tag verification failed") from exc
    session.recv_seq += 1
    return ManagementMessage(kind=kind, body=json.loads(plaintext), seq=seq)


def frame_with_length(payload: bytes) -> bytes:
    return struct.pack(">I", len(payload)) + payload


def split_frames(buffer: bytearray) -> list[bytes]:
    """Consume complete length-prefixed frames from a byte buffer."""
    frames = []
    while len(buffer) >= 4:
        (length,) = struct.unpack(">I", buffer[:4])
        if len(buffer) < 4 + length:
            break
        frames.append(bytes(buffer[4 : 4 + length]))
        del buffer[: 4 + length]
    return frames
