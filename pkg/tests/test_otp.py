"""OTP codec tests: ModHex, CRC, packing, generate/verify."""

import pytest
from hypothesis import given, strategies as st

from tokengate import otp
from tokengate.errors import BadCrc, BadFormat, BadLength, InvalidChar, OddLength


# Independent bit-serial CRC oracle, written as plain polynomial long
# division over the reflected message so it shares no code with the
# implementation under test.
def crc_oracle(data: bytes) -> int:
    register = 0xFFFF
    for byte in data:
        for bit in range(8):
            incoming = (byte >> bit) & 1
            feedback = (register ^ incoming) & 1
            register >>= 1
            if feedback:
                register ^= 0x8408
    return register


class TestModHex:
    def test_empty(self):
        assert otp.modhex_encode(b"") == ""

    def test_zero_byte(self):
        assert otp.modhex_encode(b"\x00") == "cc"

    def test_known_pair(self):
        assert otp.modhex_encode(bytes([0x2D, 0x34])) == "dtef"

    def test_decode_known(self):
        assert otp.modhex_decode("cc") == b"\x00"
        assert otp.modhex_decode("dtef") == bytes([0x2D, 0x34])

    def test_invalid_char(self):
        with pytest.raises(InvalidChar):
            otp.modhex_decode("cz")

    def test_odd_length(self):
        with pytest.raises(OddLength):
            otp.modhex_decode("ccc")

    @given(st.binary(max_size=64))
    def test_round_trip(self, data):
        assert otp.modhex_decode(otp.modhex_encode(data)) == data


class TestCrc16:
    def test_empty_is_initial_value(self):
        assert otp.crc16(b"") == 0xFFFF

    def test_frozen_oracle_value(self):
        # value computed by crc_oracle, frozen
        assert crc_oracle(bytes([0x55] * 14)) == 0xE0A8
        assert otp.crc16(bytes([0x55] * 14)) == 0xE0A8

    @given(st.binary(min_size=14, max_size=14))
    def test_matches_oracle(self, data):
        assert otp.crc16(data) == crc_oracle(data)

    @given(st.binary(min_size=14, max_size=14))
    def test_residual_property(self, data):
        # complement of the running CRC appended little-endian yields the
        # fixed residual over the 16 bytes
        crc = otp.crc16(data) ^ 0xFFFF
        block = data + bytes([crc & 0xFF, crc >> 8])
        assert otp.crc16(block) == otp.CRC_RESIDUAL


PLAINS = st.builds(
    otp.OtpPlain,
    private_id=st.binary(min_size=6, max_size=6),
    use_counter=st.integers(0, 0xFFFF),
    timestamp=st.integers(0, 0xFFFFFF),
    session_counter=st.integers(0, 0xFF),
    random=st.integers(0, 0xFFFF),
)


class TestPackUnpack:
    @given(PLAINS)
    def test_round_trip(self, plain):
        block = otp.otp_pack(plain)
        assert len(block) == 16
        back = otp.otp_unpack(block)
        assert back.private_id == plain.private_id
        assert back.use_counter == plain.use_counter
        assert back.timestamp == plain.timestamp
        assert back.session_counter == plain.session_counter
        assert back.random == plain.random
        # pack of the unpacked value reproduces the block exactly
        assert otp.otp_pack(back) == block

    @given(PLAINS)
    def test_residual_holds_for_every_pack(self, plain):
        assert otp.crc16(otp.otp_pack(plain)) == otp.CRC_RESIDUAL

    def test_all_zero_fields_crc(self):
        plain = otp.OtpPlain(b"\x00" * 6, 0, 0, 0, 0)
        block = otp.otp_pack(plain)
        # stored field is the complement of the running CRC of the first
        # 14 bytes; the full block then hits the fixed residual
        expected = crc_oracle(bytes(14)) ^ 0xFFFF
        assert int.from_bytes(block[14:], "little") == expected
        assert otp.crc16(block) == otp.CRC_RESIDUAL

    def test_bad_length(self):
        with pytest.raises(BadLength):
            otp.otp_unpack(b"\x00" * 15)


class TestGenerateVerify:
    KEY = bytes.fromhex("000102030405060708090a0b0c0d0e0f")
    PID = bytes.fromhex("aabbccddeeff")

    def _plain(self, use=1, session=0):
        return otp.OtpPlain(b"\x01" * 6, use, 7, session, 0x1234)

    def test_aes_test_vector(self):
        # standard AES-128 all-zero test vector
        assert otp._aes128_encrypt_block(bytes(16), bytes(16)) == bytes.fromhex(
            "66e94bd4ef8a2c3b884cfa59ca342b2e"
        )

    def test_round_trip(self):
        text = otp.otp_generate(self.KEY, self.PID, self._plain())
        assert len(text) == 44
        assert all(c in otp.MODHEX_ALPHABET for c in text)
        pid, plain = otp.otp_verify(self.KEY, text)
        assert pid == self.PID
        assert plain.use_counter == 1

    def test_yubico_public_test_vector(self):
        # published device test vector: known key, fields and OTP body
        key = bytes.fromhex("c4422890653076cde73d449b191b416a")
        plain = otp.OtpPlain(
            private_id=bytes.fromhex("33c69e7f249e"),
            use_counter=0x0001,
            timestamp=0x2413A7,
            session_counter=0x00,
            random=0xC63C,
        )
        text = otp.otp_generate(key, self.PID, plain)
        assert text[12:] == "iucvrkjiegbhidrcicvlgrcgkgurhjnj"

    def test_distinct_counters_distinct_otps(self):
        a = otp.otp_generate(self.KEY, self.PID, self._plain(session=0))
        b = otp.otp_generate(self.KEY, self.PID, self._plain(session=1))
        assert a != b

    def test_wrong_key_rejected(self):
        text = otp.otp_generate(self.KEY, self.PID, self._plain())
        with pytest.raises(BadCrc):
            otp.otp_verify(b"\xff" * 16, text)

    def test_bad_format(self):
        with pytest.raises(BadFormat):
            otp.otp_verify(self.KEY, "c" * 43)
        with pytest.raises(BadFormat):
            otp.otp_verify(self.KEY, "z" * 44)

    @given(PLAINS)
    def test_injective_on_plain(self, plain):
        text = otp.otp_generate(self.KEY, self.PID, plain)
        _, back = otp.otp_verify(self.KEY, text)
        assert otp.otp_pack(back) == otp.otp_pack(plain)
