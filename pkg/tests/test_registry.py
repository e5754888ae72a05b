"""Registry decision logic: provisioning, toggles, lifecycle, revert, snapshot."""

from random import Random

import pytest

from tokengate.errors import (
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
    UnknownChannel,
    UnknownEvent,
    UnknownGateway,
    UnknownToken,
)
from tokengate.registry import GatewayStatus, Registry, TokenStatus
from tokengate.token_sim import HsmStore, TokenDevice

MASTER = b"\x07" * 32


class Isolated:
    isolated = True


class Insecure:
    isolated = False


@pytest.fixture
def rng():
    return Random(99)


@pytest.fixture
def reg(rng):
    hsm = HsmStore(master_key=MASTER, rng=rng)
    return Registry(hsm, rng=rng)


def add_gateway(reg, gid, n):
    return reg.provision_gateway(
        Isolated(), gid, bytes([n]) * 32, f"10.0.0.{n}", bytes([2, 0, 0, 0, 0, n])
    )


def add_token(reg, rng, serial, sec_id):
    token = TokenDevice.create(serial, rng)
    reg.provision_token(Isolated(), token, sec_id)
    return token


def press_on(reg, token, gid):
    """Simulate plug+press+unplug and feed the event to the registry."""
    token.plug(gid)
    text = token.press()
    token.unplug()
    return reg.handle_token_event(gid, token.serial, text)


class TestProvisioning:
    def test_gateway_record_fields(self, reg):
        record = add_gateway(reg, "G1", 1)
        assert record.pub_key == b"\x01" * 32
        assert record.mgmt_address == "10.0.0.1"
        assert record.macsec_address == bytes([2, 0, 0, 0, 0, 1])
        assert record.status is GatewayStatus.PROVISIONED

    def test_not_isolated(self, reg):
        with pytest.raises(NotIsolated):
            reg.provision_gateway(Insecure(), "G1", b"\x01" * 32, "a", b"\x02" * 6)

    def test_duplicate_gateway(self, reg):
        add_gateway(reg, "G1", 1)
        with pytest.raises(DuplicateId):
            add_gateway(reg, "G1", 2)

    def test_duplicate_macsec_address(self, reg):
        add_gateway(reg, "G1", 1)
        with pytest.raises(DuplicateId):
            reg.provision_gateway(
                Isolated(), "G2", b"\x09" * 32, "10.0.0.9", bytes([2, 0, 0, 0, 0, 1])
            )

    def test_new_channel_created_with_token(self, reg, rng):
        add_token(reg, rng, 42, "green")
        channel = reg.channels["green"]
        assert channel.tokens == {42}
        assert channel.gateways == set()
        assert channel.key_version == 1
        assert len(channel.channel_key) == 32

    def test_second_token_same_channel(self, reg, rng):
        add_token(reg, rng, 42, "green")
        add_token(reg, rng, 43, "green")
        assert reg.channels["green"].tokens == {42, 43}

    def test_token_not_isolated(self, reg, rng):
        token = TokenDevice.create(42, rng)
        with pytest.raises(NotIsolated):
            reg.provision_token(Insecure(), token, "green")

    def test_duplicate_serial(self, reg, rng):
        add_token(reg, rng, 42, "green")
        with pytest.raises(DuplicateSerial):
            add_token(reg, rng, 42, "blue")

    def test_decommissioned_serial_not_reusable(self, reg, rng):
        add_token(reg, rng, 42, "green")
        reg.decommission_token(42)
        with pytest.raises(TokenDecommissioned):
            add_token(reg, rng, 42, "green")


class TestTokenEvents:
    def test_join_then_leave_toggle(self, reg, rng):
        add_gateway(reg, "G1", 1)
        token = add_token(reg, rng, 42, "green")
        decision = press_on(reg, token, "G1")
        assert decision.action == "join"
        assert reg.channels["green"].gateways == {"G1"}
        decision = press_on(reg, token, "G1")
        assert decision.action == "leave"
        assert reg.channels["green"].gateways == set()

    def test_join_outbound_carries_config(self, reg, rng):
        add_gateway(reg, "G1", 1)
        add_gateway(reg, "G2", 2)
        token = add_token(reg, rng, 42, "green")
        press_on(reg, token, "G1")
        decision = press_on(reg, token, "G2")
        kinds = {(o.gateway_id, o.kind) for o in decision.outbound}
        assert ("G2", "ChannelConfig") in kinds
        assert ("G1", "ChannelUpdate") in kinds
        config = next(o for o in decision.outbound if o.kind == "ChannelConfig")
        assert config.body["secID"] == "green"
        assert set(config.body["members"]) == {"G1", "G2"}
        assert "channelKey" in config.body
        update = next(o for o in decision.outbound if o.kind == "ChannelUpdate")
        assert "channelKey" not in update.body  # unchanged key is not resent

    def test_leave_rotates_key(self, reg, rng):
        add_gateway(reg, "G1", 1)
        add_gateway(reg, "G2", 2)
        token = add_token(reg, rng, 42, "green")
        press_on(reg, token, "G1")
        press_on(reg, token, "G2")
        channel = reg.channels["green"]
        key_before, version_before = channel.channel_key, channel.key_version
        decision = press_on(reg, token, "G1")
        assert decision.action == "leave"
        assert channel.channel_key != key_before
        assert channel.key_version == version_before + 1
        update = next(o for o in decision.outbound if o.kind == "ChannelUpdate")
        assert update.gateway_id == "G2"
        assert update.body["channelKey"] == channel.channel_key.hex()

    def test_replay_rejected(self, reg, rng):
        add_gateway(reg, "G1", 1)
        token = add_token(reg, rng, 42, "green")
        token.plug("G1")
        text = token.press()
        token.unplug()
        reg.handle_token_event("G1", 42, text)
        with pytest.raises(RejectReplay):
            reg.handle_token_event("G1", 42, text)

    def test_replay_rejected_on_other_gateway(self, reg, rng):
        add_gateway(reg, "G1", 1)
        add_gateway(reg, "G2", 2)
        token = add_token(reg, rng, 42, "green")
        token.plug("G1")
        text = token.press()
        token.unplug()
        reg.handle_token_event("G1", 42, text)
        with pytest.raises(RejectReplay):
            reg.handle_token_event("G2", 42, text)

    def test_unknown_token(self, reg):
        add_gateway(reg, "G1", 1)
        with pytest.raises(RejectUnknownToken):
            reg.handle_token_event("G1", 7, "c" * 44)

    def test_bad_otp(self, reg, rng):
        add_gateway(reg, "G1", 1)
        add_token(reg, rng, 42, "green")
        with pytest.raises(RejectBadOtp):
            reg.handle_token_event("G1", 42, "c" * 44)

    def test_unknown_gateway(self, reg, rng):
        token = add_token(reg, rng, 42, "green")
        token.plug("GX")
        with pytest.raises(RejectUnknownGateway):
            reg.handle_token_event("GX", 42, token.press())

    def test_channel_conflict(self, reg, rng):
        add_gateway(reg, "G1", 1)
        green = add_token(reg, rng, 42, "green")
        blue = add_token(reg, rng, 43, "blue")
        press_on(reg, blue, "G1")
        with pytest.raises(RejectChannelConflict):
            press_on(reg, green, "G1")

    def test_decommissioned_token_rejected(self, reg, rng):
        add_gateway(reg, "G1", 1)
        token = add_token(reg, rng, 42, "green")
        reg.decommission_token(42)
        with pytest.raises(RejectDecommissionedToken):
            press_on(reg, token, "G1")

    def test_rejections_logged(self, reg, rng):
        add_gateway(reg, "G1", 1)
        with pytest.raises(RejectUnknownToken):
            reg.handle_token_event("G1", 7, "c" * 44)
        assert reg.events[-1].outcome == "REJECT_UNKNOWN_TOKEN"


class TestOperatorCommands:
    def test_remove_gateway(self, reg, rng):
        add_gateway(reg, "G1", 1)
        add_gateway(reg, "G2", 2)
        token = add_token(reg, rng, 42, "green")
        press_on(reg, token, "G1")
        press_on(reg, token, "G2")
        version = reg.channels["green"].key_version
        outbound = reg.remove_gateway_from_channel("G2", "green")
        assert reg.channels["green"].gateways == {"G1"}
        assert reg.channels["green"].key_version == version + 1
        kinds = {(o.gateway_id, o.kind) for o in outbound}
        assert ("G2", "ChannelTeardown") in kinds
        assert ("G1", "ChannelUpdate") in kinds
        assert reg.events[-1].actor == "operator"

    def test_remove_non_member(self, reg, rng):
        add_gateway(reg, "G1", 1)
        add_token(reg, rng, 42, "green")
        with pytest.raises(NotAMember):
            reg.remove_gateway_from_channel("G1", "green")

    def test_remove_unknown_channel(self, reg):
        add_gateway(reg, "G1", 1)
        with pytest.raises(UnknownChannel):
            reg.remove_gateway_from_channel("G1", "nope")

    def test_decommission_gateway(self, reg, rng):
        add_gateway(reg, "G1", 1)
        add_gateway(reg, "G2", 2)
        token = add_token(reg, rng, 42, "green")
        press_on(reg, token, "G1")
        press_on(reg, token, "G2")
        outbound = reg.decommission_gateway("G1")
        assert reg.gateways["G1"].status is GatewayStatus.DECOMMISSIONED
        assert reg.channels["green"].gateways == {"G2"}
        # no cooperation required: nothing is sent to the decommissioned box
        assert all(o.gateway_id != "G1" for o in outbound)

    def test_decommission_idempotent(self, reg):
        add_gateway(reg, "G1", 1)
        reg.decommission_gateway("G1")
        events = len(reg.events)
        reg.decommission_gateway("G1")
        assert reg.gateways["G1"].status is GatewayStatus.DECOMMISSIONED
        assert len(reg.events) == events

    def test_decommission_unknown(self, reg):
        with pytest.raises(UnknownGateway):
            reg.decommission_gateway("GX")

    def test_decommissioned_gateway_events_rejected(self, reg, rng):
        add_gateway(reg, "G1", 1)
        token = add_token(reg, rng, 42, "green")
        reg.decommission_gateway("G1")
        with pytest.raises(RejectUnknownGateway):
            press_on(reg, token, "G1")

    def test_decommission_token_with_teardown(self, reg, rng):
        add_gateway(reg, "G1", 1)
        add_gateway(reg, "G2", 2)
        token = add_token(reg, rng, 42, "green")
        press_on(reg, token, "G1")
        press_on(reg, token, "G2")
        outbound = reg.decommission_token(42, tear_down_channel=True)
        assert {(o.gateway_id, o.kind) for o in outbound} == {
            ("G1", "ChannelTeardown"),
            ("G2", "ChannelTeardown"),
        }
        assert "green" not in reg.channels
        assert reg.tokens[42].status is TokenStatus.DECOMMISSIONED

    def test_secid_reusable_after_teardown(self, reg, rng):
        add_token(reg, rng, 42, "green")
        old_key = reg.channels["green"].channel_key
        reg.decommission_token(42, tear_down_channel=True)
        add_token(reg, rng, 99, "green")
        assert reg.channels["green"].tokens == {99}
        assert reg.channels["green"].channel_key != old_key

    def test_decommission_unknown_token(self, reg):
        with pytest.raises(UnknownToken):
            reg.decommission_token(7)


class TestRevert:
    def test_revert_join(self, reg, rng):
        add_gateway(reg, "G1", 1)
        token = add_token(reg, rng, 42, "green")
        decision = press_on(reg, token, "G1")
        version = reg.channels["green"].key_version
        reg.revert_event(decision.event_id)
        assert reg.channels["green"].gateways == set()
        assert reg.channels["green"].key_version == version + 1

    def test_revert_of_revert_restores(self, reg, rng):
        add_gateway(reg, "G1", 1)
        token = add_token(reg, rng, 42, "green")
        decision = press_on(reg, token, "G1")
        reg.revert_event(decision.event_id)
        revert_id = reg.events[-1].event_id
        reg.revert_event(revert_id)
        assert reg.channels["green"].gateways == {"G1"}

    def test_revert_leave(self, reg, rng):
        add_gateway(reg, "G1", 1)
        token = add_token(reg, rng, 42, "green")
        press_on(reg, token, "G1")
        decision = press_on(reg, token, "G1")
        assert decision.action == "leave"
        reg.revert_event(decision.event_id)
        assert reg.channels["green"].gateways == {"G1"}

    def test_revert_unknown(self, reg):
        with pytest.raises(UnknownEvent):
            reg.revert_event(123)

    def test_revert_after_decommission(self, reg, rng):
        add_gateway(reg, "G1", 1)
        token = add_token(reg, rng, 42, "green")
        decision = press_on(reg, token, "G1")
        reg.decommission_gateway("G1")
        with pytest.raises(NotRevertible):
            reg.revert_event(decision.event_id)

    def test_revert_stale_join(self, reg, rng):
        add_gateway(reg, "G1", 1)
        token = add_token(reg, rng, 42, "green")
        decision = press_on(reg, token, "G1")
        press_on(reg, token, "G1")  # already left again
        with pytest.raises(NotRevertible):
            reg.revert_event(decision.event_id)


class TestInvariants:
    def test_one_channel_per_gateway(self, reg, rng):
        add_gateway(reg, "G1", 1)
        green = add_token(reg, rng, 42, "green")
        blue = add_token(reg, rng, 43, "blue")
        press_on(reg, green, "G1")
        with pytest.raises(RejectChannelConflict):
            press_on(reg, blue, "G1")
        memberships = [
            c.sec_id for c in reg.channels.values() if "G1" in c.gateways
        ]
        assert memberships == ["green"]

    def test_log_determinism(self, reg, rng):
        add_gateway(reg, "G1", 1)
        add_gateway(reg, "G2", 2)
        token = add_token(reg, rng, 42, "green")
        press_on(reg, token, "G1")
        press_on(reg, token, "G2")
        press_on(reg, token, "G1")
        replayed = reg.replay_membership(reg.events)
        actual = {sid: set(c.gateways) for sid, c in reg.channels.items()}
        assert {k: v for k, v in replayed.items() if v} == {
            k: v for k, v in actual.items() if v
        }

    def test_key_version_increases_on_every_shrink(self, reg, rng):
        add_gateway(reg, "G1", 1)
        add_gateway(reg, "G2", 2)
        token = add_token(reg, rng, 42, "green")
        versions = [reg.channels["green"].key_version]
        press_on(reg, token, "G1")
        versions.append(reg.channels["green"].key_version)
        press_on(reg, token, "G2")
        versions.append(reg.channels["green"].key_version)
        press_on(reg, token, "G2")  # leave
        versions.append(reg.channels["green"].key_version)
        assert versions == [1, 1, 1, 2]  # joins distribute, leave rotates


class TestSnapshot:
    def test_round_trip(self, reg, rng):
        add_gateway(reg, "G1", 1)
        token = add_token(reg, rng, 42, "green")
        press_on(reg, token, "G1")
        text = reg.snapshot_json()
        back = Registry.restore_json(text, reg.hsm, rng=rng)
        assert back.channels["green"].channel_key == reg.channels["green"].channel_key
        assert back.channels["green"].gateways == {"G1"}
        assert back.tokens[42].last_counters == reg.tokens[42].last_counters
        assert [e.to_json() for e in back.events] == [e.to_json() for e in reg.events]

    def test_snapshot_contains_no_key_material(self, reg, rng):
        add_gateway(reg, "G1", 1)
        token = add_token(reg, rng, 42, "green")
        press_on(reg, token, "G1")
        text = reg.snapshot_json()
        assert reg.channels["green"].channel_key.hex() not in text
        assert token.secret.hex() not in text

    def test_truncated_snapshot(self, reg):
        text = reg.snapshot_json()
        with pytest.raises(CorruptSnapshot):
            Registry.restore_json(text[: len(text) // 2], reg.hsm)
