"""TCP loopback transport: the same server/agent state machines over sockets.

Frames are 4-byte big-endian length-prefixed.  The server funnels all
received frames through one lock (single-writer registry contract); each
connection gets a reader thread.  Real time is mapped onto the virtual
clock at TICKS_PER_SECOND, so heartbeat/liveness logic is unchanged.
State and HSM files persist across restarts.
"""

from __future__ import annotations

import json
import socket
import threading
import time

from . import mgmt
from .agent import GatewayAgent
from .errors import CorruptSnapshot
from .registry import Registry
from .server import EventLog, ManagementServer
from .token_sim import HsmStore, TokenDevice


def _now_factory():
    start = time.monotonic()
    return lambda: int((time.monotonic() - start) * mgmt.TICKS_PER_SECOND)


def load_state_file(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        return {}
    except ValueError as exc:
        raise CorruptSnapshot(f"unreadable state file {path}: {exc}") from exc


def save_state_file(path: str, doc: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)


class SocketServer:
    """Management server listening on a TCP loopback address."""

    def __init__(
        self,
        state_path: str,
        hsm_path: str,
        listen: tuple[str, int],
        events_path: str | None = None,
        master_key: bytes | None = None,
    ):
        self.state_path = state_path
        self.listen_addr = listen
        self.clock = _now_factory()
        try:
            self.hsm = HsmStore.load(hsm_path, master_key=master_key)
        except CorruptSnapshot:
            self.hsm = HsmStore(master_key=master_key)
        self.hsm_path = hsm_path

        state = load_state_file(state_path)
        identity = state.get("identity")
        if identity is None:
            priv, pub = mgmt.generate_static_keypair()
            identity = {"privKey": priv.hex(), "pubKey": pub.hex(),
                        "mgmtAddress": f"{listen[0]}:{listen[1]}"}
        event_log = EventLog(events_path, fsync=True) if events_path else EventLog()
        registry = None
        if "registry" in state:
            registry = Registry.restore(state["registry"], self.hsm, clock=self.clock)
        self.core = ManagementServer(
            self.hsm,
            bytes.fromhex(identity["privKey"]),
            bytes.fromhex(identity["pubKey"]),
            mgmt_address=identity["mgmtAddress"],
            clock=self.clock,
            event_log=event_log,
            registry=registry,
        )
        self.identity = identity
        self.lock = threading.Lock()
        self._sock: socket.socket | None = None
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []

    def save(self) -> None:
        with self.lock:
            save_state_file(
                self.state_path,
                {"identity": self.identity, "registry": self.core.registry.snapshot()},
            )
            self.hsm.save(self.hsm_path)

    def start(self) -> None:
        self._sock = socket.create_server(self.listen_addr)
        self._sock.settimeout(0.2)
        t = threading.Thread(target=self._accept_loop, daemon=True)
        t.start()
        self._threads.append(t)
        t2 = threading.Thread(target=self._tick_loop, daemon=True)
        t2.start()
        self._threads.append(t2)

    def stop(self) -> None:
        self._stop.set()
        for t in self._threads:
            t.join(timeout=2)
        if self._sock is not None:
            self._sock.close()
        self.save()

    def _tick_loop(self) -> None:
        while not self._stop.is_set():
            with self.lock:
                self.core.on_tick(self.clock())
            time.sleep(1.0 / mgmt.TICKS_PER_SECOND)

    def _accept_loop(self) -> None:
        conn_counter = 0
        while not self._stop.is_set():
            try:
                conn, _ = self._sock.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            conn_counter += 1
            t = threading.Thread(
                target=self._conn_loop, args=(conn, conn_counter), daemon=True
            )
            t.start()
            self._threads.append(t)

    def _conn_loop(self, conn: socket.socket, conn_id: int) -> None:
        conn.settimeout(0.2)
        send_lock = threading.Lock()

        def send(data: bytes) -> None:
            with send_lock:
                try:
                    conn.sendall(mgmt.frame_with_length(data))
                except OSError:
                    pass

        with self.lock:
            self.core.on_connect(conn_id, send)
        buffer = bytearray()
        try:
            while not self._stop.is_set():
                try:
                    chunk = conn.recv(65536)
                except socket.timeout:
                    continue
                except OSError:
                    break
                if not chunk:
                    break
                buffer.extend(chunk)
                for frame in mgmt.split_frames(buffer):
                    with self.lock:
                        self.core.on_conn_bytes(conn_id, frame)
        finally:
            with self.lock:
                self.core.on_disconnect(conn_id)
            conn.close()


class SocketGateway:
    """Gateway agent dialing the server over TCP."""

    def __init__(self, state: dict, server_addr: tuple[str, int]):
        self.clock = _now_factory()
        self.server_addr = server_addr
        self._sock: socket.socket | None = None
        self._send_lock = threading.Lock()
        self.agent = GatewayAgent(
            gateway_id=state["gatewayId"],
            static_priv=bytes.fromhex(state["privKey"]),
            server_static_pub=bytes.fromhex(state["serverPub"]),
            macsec_address=bytes.fromhex(state["macsecAddress"]),
            send_mgmt=self._send,
            send_net=lambda data: None,  # no shared data-plane segment over TCP
            send_endpoint=lambda data: None,
            clock=self.clock,
        )
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []

    def _send(self, data: bytes) -> None:
        if self._sock is None:
            return
        with self._send_lock:
            try:
                self._sock.sendall(mgmt.frame_with_length(data))
            except OSError:
                pass

    def start(self) -> None:
        self._sock = socket.create_connection(self.server_addr, timeout=5)
        self._sock.settimeout(0.2)
        self.agent.connect()
        t = threading.Thread(target=self._recv_loop, daemon=True)
        t.start()
        self._threads.append(t)
        t2 = threading.Thread(target=self._tick_loop, daemon=True)
        t2.start()
        self._threads.append(t2)

    def stop(self) -> None:
        self._stop.set()
        for t in self._threads:
            t.join(timeout=2)
        if self._sock is not None:
            self._sock.close()

    def wait_session(self, timeout: float = 5.0) -> bool:
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            if self.agent.session is not None:
                return True
            time.sleep(0.02)
        return False

    def plug_and_press(self, token: TokenDevice, presses: int = 1) -> None:
        self.agent.plug_token(token)
        for _ in range(presses):
            self.agent.on_button_press()

    def _tick_loop(self) -> None:
        while not self._stop.is_set():
            self.agent.on_tick(self.clock())
            time.sleep(1.0 / mgmt.TICKS_PER_SECOND)

    def _recv_loop(self) -> None:
        buffer = bytearray()
        while not self._stop.is_set():
            try:
                chunk = self._sock.recv(65536)
            except socket.timeout:
                continue
            except OSError:
                break
            if not chunk:
                break
            buffer.extend(chunk)
            for frame in mgmt.split_frames(buffer):
                self.agent.on_mgmt_bytes(frame)
