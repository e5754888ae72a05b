"""Yubico-OTP-compatible codec: ModHex, CRC16, block packing, AES-128 OTPs.

An OTP is a 44-character ModHex string: a 12-character public-id prefix
followed by 32 characters encoding one AES-128-encrypted 16-byte block.
The block carries the token's private id, counters and a CRC16 checksum.
All functions here are pure and safe for concurrent use.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .errors import BadCrc, BadFormat, BadLength, InvalidChar, OddLength

MODHEX_ALPHABET = "cbdefghijklnrtuv"
_MODHEX_REV = {c: i for i, c in enumerate(MODHEX_ALPHABET)}

OTP_LENGTH = 44
PUBLIC_ID_LENGTH = 6
BLOCK_LENGTH = 16
CRC_RESIDUAL = 0xF0B8

# privateId(6) useCounter(u16) timestampLo(u16) timestampHi(u8)
# sessionCounter(u8) random(u16) crc(u16), all little-endian
_BLOCK_STRUCT = struct.Struct("<6sHHBBHH")


def modhex_encode(data: bytes) -> str:
    """Encode bytes as ModHex text (two characters per byte)."""
    return "".join(
        MODHEX_ALPHABET[b >> 4] + MODHEX_ALPHABET[b & 0x0F] for b in data
    )


def modhex_decode(text: str) -> bytes:
    """Decode ModHex text; exact inverse of :func:`modhex_encode`."""
    if len(text) % 2 != 0:
        raise OddLength(f"modhex text has odd length {len(text)}")
    out = bytearray()
    for i in range(0, len(text), 2):
        hi, lo = text[i], text[i + 1]
        if hi not in _MODHEX_REV or lo not in _MODHEX_REV:
            raise InvalidChar(f"non-modhex character in {text[i:i + 2]!r}")
        out.append((_MODHEX_REV[hi] << 4) | _MODHEX_REV[lo])
    return bytes(out)


def crc16(data: bytes) -> int:
    """Bit-serial CRC, reflected polynomial 0x8408, init 0xFFFF, no final XOR."""
    crc = 0xFFFF
    for byte in data:
        crc ^= byte
        for _ in range(8):
            crc = (crc >> 1) ^ 0x8408 if crc & 1 else crc >> 1
    return crc


@dataclass(frozen=True)
class OtpPlain:
    """Decrypted contents of one OTP block.

    ``use_counter`` increments once per plug-in session and persists across
    power loss; ``session_counter`` increments per emission and resets on
    plug-in.  ``crc`` is the ones-complement of the running CRC over the
    first 14 bytes, which makes the CRC over the full 16-byte block come
    out to the fixed residual 0xF0B8.
    """

    private_id: bytes
    use_counter: int
    timestamp: int
    session_counter: int
    random: int
    crc: int = -1  # -1: compute on pack

    def __post_init__(self):
        if len(self.private_id) != 6:
            raise BadLength("private_id must be 6 bytes")
        if not 0 <= self.use_counter <= 0xFFFF:
            raise BadFormat("use_counter out of range")
        if not 0 <= self.timestamp <= 0xFFFFFF:
            raise BadFormat("timestamp out of range")
        if not 0 <= self.session_counter <= 0xFF:
            raise BadFormat("session_counter out of range")
        if not 0 <= self.random <= 0xFFFF:
            raise BadFormat("random out of range")


def otp_pack(plain: OtpPlain) -> bytes:
    """Serialize to the 16-byte block, computing the CRC field if unset."""
    head = _BLOCK_STRUCT.pack(
        plain.private_id,
        plain.use_counter,
        plain.timestamp & 0xFFFF,
        plain.timestamp >> 16,
        plain.session_counter,
        plain.random,
        0,
    )[:14]
    crc = plain.crc if plain.crc >= 0 else crc16(head) ^ 0xFFFF
    return head + struct.pack("<H", crc)


def otp_unpack(block: bytes) -> OtpPlain:
    """Parse a 16-byte block back into its fields (no CRC check here)."""
    if len(block) != BLOCK_LENGTH:
        raise BadLength(f"OTP block must be 16 bytes, got {len(block)}")
    private_id, use, ts_lo, ts_hi, session, random, crc = _BLOCK_STRUCT.unpack(block)
    return OtpPlain(
        private_id=private_id,
        use_counter=use,
        timestamp=(ts_hi << 16) | ts_lo,
        session_counter=session,
        random=random,
        crc=crc,
    )


def _aes128_encrypt_block(key: bytes, block: bytes) -> bytes:
    return Cipher(algorithms.AES(key), modes.ECB()).encryptor().update(block)


def _aes128_decrypt_block(key: bytes, block: bytes) -> bytes:
    return Cipher(algorithms.AES(key), modes.ECB()).decryptor().update(block)


def otp_generate(secret: bytes, public_id: bytes, plain: OtpPlain) -> str:
    """Produce the 44-character OTP string for one token emission."""
    if len(secret) != 16:
        raise BadLength("AES key must be 16 bytes")
    if len(public_id) != PUBLIC_ID_LENGTH:
        raise BadLength("public id must be 6 bytes")
    block = _aes128_encrypt_block(secret, otp_pack(plain))
    return modhex_encode(public_id) + modhex_encode(block)


def otp_verify(secret: bytes, otp: str) -> tuple[bytes, OtpPlain]:
    """Decode, decrypt and CRC-check an OTP string.

    Returns ``(public_id, plain)``.  Raises BAD_FORMAT for length/alphabet
    problems and BAD_CRC when the residual check fails (wrong key or
    corrupted text).
    """
    if len(otp) != OTP_LENGTH:
        raise BadFormat(f"OTP must be {OTP_LENGTH} characters, got {len(otp)}")
    try:
        public_id = modhex_decode(otp[: 2 * PUBLIC_ID_LENGTH])
        body = modhex_decode(otp[2 * PUBLIC_ID_LENGTH:])
    except (InvalidChar, OddLength) as exc:
        raise BadFormat(str(exc)) from exc
    block = _aes128_decrypt_block(secret, body)
    if crc16(block) != CRC_RESIDUAL:
        raise BadCrc("CRC residual mismatch")
    return public_id, otp_unpack(block)
