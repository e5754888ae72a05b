"""Simulated hardware tokens and the HSM that is the only holder of OTP secrets.

A :class:`TokenDevice` models the physical key: it can be plugged into a
gateway, pressed, and unplugged.  The :class:`HsmStore` verifies OTPs against
stored secrets but never returns a secret through any operation; its on-disk
form is encrypted under a master key.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from random import Random

from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from . import otp as otplib
from .errors import (
    AlreadyPlugged,
    BadFormat,
    CorruptSnapshot,
    NotPlugged,
    PublicIdMismatch,
    UnknownHandle,
)

HSM_MASTER_KEY_ENV = "TOKENGATE_HSM_KEY"


@dataclass
class TokenDevice:
    """One physical security token, identified by its decimal serial."""

    serial: int
    public_id: bytes
    secret: bytes
    private_id: bytes = b"\x00" * 6
    use_counter: int = 0
    session_counter: int = 0
    timestamp: int = 0
    plugged: str | None = None

    @classmethod
    def create(cls, serial: int, rng: Random) -> "TokenDevice":
        return cls(
            serial=serial,
            public_id=rng.randbytes(6),
            secret=rng.randbytes(16),
            private_id=rng.randbytes(6),
        )

    def plug(self, gateway_id: str) -> None:
        if self.plugged is not None:
            raise AlreadyPlugged(f"token {self.serial} already in {self.plugged}")
        self.use_counter += 1
        self.session_counter = 0
        self.timestamp = 0
        self.plugged = gateway_id

    def unplug(self) -> None:
        self.plugged = None

    def press(self) -> str:
        """Emit one OTP; the hosting gateway observes (serial, otp)."""
        if self.plugged is None:
            raise NotPlugged(f"token {self.serial} is not plugged in")
        plain = otplib.OtpPlain(
            private_id=self.private_id,
            use_counter=self.use_counter,
            timestamp=self.timestamp & 0xFFFFFF,
            session_counter=self.session_counter,
            random=(self.use_counter * 257 + self.session_counter) & 0xFFFF,
        )
        text = otplib.otp_generate(self.secret, self.public_id, plain)
        self.session_counter += 1
        self.timestamp += 3  # session tick advances a little per press
        return text


def _master_key(explicit: bytes | None = None) -> bytes:
    if explicit is not None:
        return explicit
    hexkey = os.environ.get(HSM_MASTER_KEY_ENV)
    if not hexkey:
        raise BadFormat(f"{HSM_MASTER_KEY_ENV} not set and no master key given")
    key = bytes.fromhex(hexkey)
    if len(key) != 32:
        raise BadFormat("HSM master key must be 32 hex-encoded bytes")
    return key


class HsmStore:
    """Verify-but-never-reveal store for OTP secrets.

    Entries are addressed by opaque handles.  ``save``/``load`` round-trip
    the store through an encrypted file; the serialized form contains no
    secret bytes in the clear.
    """

    FORMAT_VERSION = 1

    def __init__(self, master_key: bytes | None = None, rng: Random | None = None):
        self._master_key = _master_key(master_key)
        self._rng = rng or Random()
        self._entries: dict[str, tuple[bytes, bytes]] = {}
        self._counter = 0

    def store(self, public_id: bytes, secret: bytes) -> str:
        self._counter += 1
        handle = f"hsm-{self._counter:04d}-{self._rng.randbytes(4).hex()}"
        self._entries[handle] = (bytes(public_id), bytes(secret))
        return handle

    def verify(self, handle: str, otp: str) -> otplib.OtpPlain:
        """Check an OTP against the stored secret; never exposes the secret."""
        if handle not in self._entries:
            raise UnknownHandle(f"no entry for {handle}")
        public_id, secret = self._entries[handle]
        decoded_id, plain = otplib.otp_verify(secret, otp)
        if decoded_id != public_id:
            raise PublicIdMismatch("OTP prefix does not match the stored public id")
        return plain

    def public_id(self, handle: str) -> bytes:
        if handle not in self._entries:
            raise UnknownHandle(f"no entry for {handle}")
        return self._entries[handle][0]

    def wrap(self, data: bytes) -> str:
        """Encrypt opaque bytes under the master key (hex container)."""
        nonce = self._rng.randbytes(12)
        ct = AESGCM(self._master_key).encrypt(nonce, data, b"tokengate-wrap")
        return (nonce + ct).hex()

    def unwrap(self, blob: str) -> bytes:
        raw = bytes.fromhex(blob)
        try:
            return AESGCM(self._master_key).decrypt(
                raw[:12], raw[12:], b"tokengate-wrap"
            )
        except Exception as exc:
            raise CorruptSnapshot("cannot unwrap ciphertext") from exc

    def save(self, path: str) -> None:
        doc = {
            "version": self.FORMAT_VERSION,
            "counter": self._counter,
            "entries": {
                handle: self.wrap(public_id + secret)
                for handle, (public_id, secret) in self._entries.items()
            },
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, sort_keys=True)

    @classmethod
    def load(
        cls, path: str, master_key: bytes | None = None, rng: Random | None = None
    ) -> "HsmStore":
        hsm = cls(master_key=master_key, rng=rng)
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
            if doc["version"] != cls.FORMAT_VERSION:
                raise CorruptSnapshot(f"unsupported HSM store version {doc['version']}")
            hsm._counter = doc["counter"]
            for handle, blob in doc["entries"].items():
                raw = hsm.unwrap(blob)
                hsm._entries[handle] = (raw[:6], raw[6:])
        except (OSError, ValueError, KeyError) as exc:
            raise CorruptSnapshot(f"unreadable HSM store: {exc}") from exc
        return hsm
