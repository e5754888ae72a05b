"""Deterministic virtual network: links, clock, fleet wiring, adversary.

Single-threaded discrete-event loop.  All randomness flows from one seeded
RNG, so a scenario with a fixed seed replays to byte-identical event logs.
Management traffic runs over per-gateway insecure links to the server;
data-plane traffic runs over one shared insecure factory bus.  Provisioning
uses a dedicated isolated link the adversary cannot observe or inject on.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from random import Random
from typing import Callable

from . import mgmt
from .agent import GatewayAgent
from .dataplane import Frame
from .errors import (
    DuplicateSerial,
    IsolatedLink,
    TokenNotPresent,
    UnknownGateway,
)
from .server import EventLog, ManagementServer
from .token_sim import HsmStore, TokenDevice


@dataclass
class Link:
    link_id: str
    kind: str  # "isolated" | "insecure"
    latency: int = 1

    @property
    def isolated(self) -> bool:
        return self.kind == "isolated"


@dataclass(order=True)
class _Transmission:
    deliver_at: int
    link_id: str
    seq: int
    src: str = field(compare=False)
    dst: str = field(compare=False)  # node id, or "*" for all others on the link
    data: bytes = field(compare=False)


class Endpoint:
    """A protected machine behind one gateway; records what it receives."""

    def __init__(self, address: bytes):
        self.address = address
        self.received_raw: list[bytes] = []

    def receive(self, raw: bytes) -> None:
        self.received_raw.append(raw)

    def frames_for_me(self) -> list[Frame]:
        out = []
        for raw in self.received_raw:
            try:
                frame = Frame.parse(raw)
            except Exception:
                continue
            if frame.dst == self.address:
                out.append(frame)
        return out


class Adversary:
    """Observes and injects on insecure links; can steal and use tokens.

    Cannot mint tokens, read node memory, or remove gateways.  Frame
    dropping exists only behind ``allow_drop`` for robustness testing.
    """

    def __init__(self, sim: "Simulation", allow_drop: bool = False):
        self.sim = sim
        self.allow_drop = allow_drop
        self.captured: list[dict] = []  # {"t","link","src","dst","data"}
        self.stolen: dict[int, TokenDevice] = {}

    def observe(self, t: int, link: Link, src: str, dst: str, data: bytes) -> None:
        if link.isolated:
            return
        self.captured.append(
            {"t": t, "link": link.link_id, "src": src, "dst": dst, "data": data}
        )

    def capture_on(self, link_id: str) -> list[bytes]:
        link = self.sim.links[link_id]
        if link.isolated:
            raise IsolatedLink(f"{link_id} is not observable")
        return [c["data"] for c in self.captured if c["link"] == link_id]

    def inject(self, link_id: str, dst: str, data: bytes) -> None:
        link = self.sim.links[link_id]
        if link.isolated:
            raise IsolatedLink(f"cannot inject on {link_id}")
        self.sim.enqueue(link, "adversary", dst, data)

    def replay(self, index: int) -> None:
        cap = self.captured[index]
        self.inject(cap["link"], cap["dst"], cap["data"])

    def steal_token(self, serial: int) -> TokenDevice:
        token = self.sim.tokens.get(serial)
        if token is None or token.plugged is not None or serial in self.stolen:
            raise TokenNotPresent(f"token {serial} cannot be taken")
        del self.sim.tokens[serial]
        self.stolen[serial] = token
        return token

    def use_token(self, serial: int, gateway_id: str) -> None:
        """Plug a stolen token into a legitimate gateway and press it."""
        if serial not in self.stolen:
            raise TokenNotPresent(f"token {serial} not held")
        token = self.stolen[serial]
        node = self.sim.gateway_nodes.get(gateway_id)
        if node is None:
            raise UnknownGateway(f"no gateway {gateway_id}")
        node.agent.plug_token(token)
        try:
            node.agent.on_button_press()
        finally:
            node.agent.unplug_token()


class GatewayNode:
    def __init__(self, sim: "Simulation", gateway_id: str, agent: GatewayAgent,
                 endpoint: Endpoint, mgmt_link: Link, bus: Link):
        self.sim = sim
        self.gateway_id = gateway_id
        self.agent = agent
        self.endpoint = endpoint
        self.mgmt_link = mgmt_link
        self.bus = bus
        self.silenced = False

    def receive(self, link_id: str, src: str, data: bytes) -> None:
        if link_id == self.mgmt_link.link_id:
            self.agent.on_mgmt_bytes(data)
        elif link_id == self.bus.link_id:
            self.agent.on_network_frame(data)

    def tick(self, now: int) -> None:
        if not self.silenced:
            self.agent.on_tick(now)


class ServerNode:
    def __init__(self, sim: "Simulation", core: ManagementServer):
        self.sim = sim
        self.core = core

    def receive(self, link_id: str, src: str, data: bytes) -> None:
        self.core.on_conn_bytes(link_id, data)

    def tick(self, now: int) -> None:
        self.core.on_tick(now)


class Simulation:
    """The whole desk-scale deployment plus its virtual network."""

    SERVER_ID = "server"

    def __init__(
        self,
        seed: int = 0,
        latency: int = 1,
        rotate_on_shrink: bool = True,
        event_log: EventLog | None = None,
        capture_path: str | None = None,
        hsm_master_key: bytes | None = None,
    ):
        self.now = 0
        self.rng = Random(seed)
        self.latency = latency
        self.links: dict[str, Link] = {}
        self._queue: list[_Transmission] = []
        self._seq = 0
        self.capture: list[dict] = []  # every transmission on every link
        self._capture_fh = open(capture_path, "w") if capture_path else None

        master = hsm_master_key or self.rng.randbytes(32)
        self.hsm = HsmStore(master_key=master, rng=self.rng)
        priv, pub = mgmt.generate_static_keypair(self._key_seed())
        self.server = ManagementServer(
            self.hsm,
            priv,
            pub,
            rng=self.rng,
            clock=lambda: self.now,
            event_log=event_log,
            rotate_on_shrink=rotate_on_shrink,
        )
        self.server_node = ServerNode(self, self.server)
        self.nodes: dict[str, object] = {self.SERVER_ID: self.server_node}
        self.gateway_nodes: dict[str, GatewayNode] = {}
        self.endpoints: dict[str, Endpoint] = {}
        self.tokens: dict[int, TokenDevice] = {}  # tokens in legitimate hands
        self.adversary = Adversary(self)
        self._gateway_count = 0

        self.isolated_link = self._add_link("provisioning-port", "isolated")
        self.bus = self._add_link("factory-bus", "insecure")

    # --- plumbing ---

    def _key_seed(self) -> bytes:
        # X25519 accepts any 32 bytes; clamping happens internally
        return self.rng.randbytes(32)

    def _add_link(self, link_id: str, kind: str) -> Link:
        link = Link(link_id=link_id, kind=kind, latency=self.latency)
        self.links[link_id] = link
        return link

    def enqueue(self, link: Link, src: str, dst: str, data: bytes) -> None:
        self._seq += 1
        heapq.heappush(
            self._queue,
            _Transmission(self.now + link.latency, link.link_id, self._seq, src, dst, data),
        )
        record = {"t": self.now, "link": link.link_id, "src": src, "dst": dst,
                  "hex": data.hex()}
        self.capture.append(record)
        if self._capture_fh is not None:
            self._capture_fh.write(json.dumps(record, sort_keys=True) + "\n")
        self.adversary.observe(self.now, link, src, dst, data)

    def close(self) -> None:
        if self._capture_fh is not None:
            self._capture_fh.close()
            self._capture_fh = None
        self.server.event_log.close()

    # --- clock ---

    def advance(self, ticks: int) -> None:
        for _ in range(ticks):
            self.now += 1
            self._deliver_due()
            for node_id in sorted(self.nodes):
                self.nodes[node_id].tick(self.now)
            self._deliver_due()  # zero-latency consequences of this tick

    def _deliver_due(self) -> None:
        # heap order is (deliver_at, link_id, seq): due time, then link, then FIFO
        while self._queue and self._queue[0].deliver_at <= self.now:
            self._dispatch(heapq.heappop(self._queue))

    def _dispatch(self, tx: _Transmission) -> None:
        if tx.dst == "*":
            targets = [
                nid for nid in sorted(self.nodes)
                if nid != tx.src and self._on_link(nid, tx.link_id)
            ]
        else:
            targets = [tx.dst] if tx.dst in self.nodes else []
        for nid in targets:
            self.nodes[nid].receive(tx.link_id, tx.src, tx.data)

    def _on_link(self, node_id: str, link_id: str) -> bool:
        if link_id == self.bus.link_id:
            return node_id in self.gateway_nodes
        node = self.gateway_nodes.get(node_id)
        if node is not None:
            return node.mgmt_link.link_id == link_id
        return node_id == self.SERVER_ID and link_id.startswith("mgmt-")

    # --- fleet construction ---

    def provision_gateway(self, gateway_id: str, isolated: bool = True) -> GatewayNode:
        """Factory provisioning over the dedicated port, then deployment."""
        link = self.isolated_link if isolated else self.bus
        self._gateway_count += 1
        n = self._gateway_count
        priv, pub = mgmt.generate_static_keypair(self._key_seed())
        macsec_address = bytes([0x02, 0x00, 0x00, 0x00, 0x00, n])
        mgmt_address = f"10.0.0.{100 + n}"
        self.server.registry.provision_gateway(
            link, gateway_id, pub, mgmt_address, macsec_address
        )
        mgmt_link = self._add_link(f"mgmt-{gateway_id}", "insecure")
        endpoint = Endpoint(bytes([0x0A, 0, 0, 0, 0, n]))
        agent = GatewayAgent(
            gateway_id=gateway_id,
            static_priv=priv,
            server_static_pub=self.server.static_pub,
            macsec_address=macsec_address,
            send_mgmt=lambda data, l=mgmt_link, g=gateway_id: self.enqueue(
                l, g, self.SERVER_ID, data
            ),
            send_net=lambda data, g=gateway_id: self.enqueue(self.bus, g, "*", data),
            send_endpoint=endpoint.receive,
            clock=lambda: self.now,
        )
        node = GatewayNode(self, gateway_id, agent, endpoint, mgmt_link, self.bus)
        self.nodes[gateway_id] = node
        self.gateway_nodes[gateway_id] = node
        self.endpoints[gateway_id] = endpoint
        self.server.on_connect(
            mgmt_link.link_id,
            lambda data, l=mgmt_link, g=gateway_id: self.enqueue(
                l, self.SERVER_ID, g, data
            ),
        )
        # server side of Table 1 row 1 holds the gateway tuple; the gateway
        # side holds pubKey_MS + IP Address_MS + its own private key
        return node

    def connect_gateway(self, gateway_id: str) -> None:
        self.gateway_nodes[gateway_id].agent.connect()

    def create_token(self, serial: int) -> TokenDevice:
        if serial in self.tokens or serial in self.adversary.stolen:
            raise DuplicateSerial(f"serial {serial} exists")
        token = TokenDevice.create(serial, self.rng)
        self.tokens[serial] = token
        return token

    def provision_token(self, serial: int, sec_id: str, isolated: bool = True):
        link = self.isolated_link if isolated else self.bus
        return self.server.registry.provision_token(link, self.tokens[serial], sec_id)

    # --- physical actions ---

    def plug(self, serial: int, gateway_id: str) -> None:
        self.gateway_nodes[gateway_id].agent.plug_token(self.tokens[serial])

    def unplug(self, gateway_id: str) -> None:
        node = self.gateway_nodes[gateway_id]
        node.agent.unplug_token()

    def press(self, gateway_id: str) -> None:
        self.gateway_nodes[gateway_id].agent.on_button_press()

    def endpoint_send(self, from_gateway: str, to_gateway: str,
                      payload: bytes, ether_type: int = 0x0800) -> None:
        """Inject a frame from the machine behind ``from_gateway``."""
        frame = Frame(
            dst=self.endpoints[to_gateway].address,
            src=self.endpoints[from_gateway].address,
            ether_type=ether_type,
            payload=payload,
        )
        self.gateway_nodes[from_gateway].agent.on_endpoint_frame(frame.serialize())
