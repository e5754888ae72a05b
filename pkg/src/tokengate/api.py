"""HTTP/JSON control API for operators and the web console.

Read models never serialize key or secret material: channel views carry
``keyVersion`` but no key bytes, token views carry serial/binding/status
but no secrets.  All mutating routes are thin adapters over exactly one
registry operation and require the static bearer operator credential.

GET  /v1/gateways /v1/channels /v1/tokens /v1/events?after=<id>
GET  /v1/stream?after=<id>          (server-sent events, one JSON event each)
POST /v1/channels/{secID}/remove/{gatewayId}
POST /v1/gateways/{id}/decommission
POST /v1/tokens/{serial}/decommission?teardown=<bool>
POST /v1/events/{id}/revert
"""

from __future__ import annotations

import json
import queue
import threading

from fastapi import Depends, FastAPI, HTTPException, Request
from fastapi.responses import StreamingResponse

from .errors import (
    TokenGateError,
    UnknownChannel,
    UnknownEvent,
    UnknownGateway,
    UnknownToken,
)
from .server import ManagementServer

_NOT_FOUND = (UnknownChannel, UnknownEvent, UnknownGateway, UnknownToken)

KEEPALIVE_SECONDS = 1.0


def event_stream(server: ManagementServer, after: int = 0):
    """Yield server-sent-event chunks: backlog past the cursor, then live
    events as they are logged, with comment keepalives while idle."""
    sub: queue.Queue = queue.Queue()
    unsubscribe = server.subscribe(sub.put)

    def chunk(doc: dict) -> str:
        return f"id: {doc['eventId']}\ndata: {json.dumps(doc, sort_keys=True)}\n\n"

    try:
        # replay from the cursor so reconnects lose nothing
        for e in list(server.registry.events):
            if e.event_id > after:
                yield chunk(e.to_json())
        while True:
            try:
                doc = sub.get(timeout=KEEPALIVE_SECONDS)
            except queue.Empty:
                yield ": keepalive\n\n"
                continue
            yield chunk(doc)
    finally:
        unsubscribe()


def build_app(server: ManagementServer, operator_token: str) -> FastAPI:
    app = FastAPI(title="tokengate control API", version="1")
    write_lock = threading.Lock()

    def require_operator(request: Request) -> None:
        header = request.headers.get("authorization", "")
        if header != f"Bearer {operator_token}":
            raise HTTPException(status_code=401, detail="operator credential required")

    def mutate(fn, *args, **kwargs):
        with write_lock:
            try:
                fn(*args, **kwargs)
            except _NOT_FOUND as exc:
                raise HTTPException(
                    status_code=404, detail={"code": exc.code, "message": str(exc)}
                ) from exc
            except TokenGateError as exc:
                raise HTTPException(
                    status_code=409, detail={"code": exc.code, "message": str(exc)}
                ) from exc
        return {"ok": True}

    reg = server.registry

    @app.get("/v1/gateways")
    def list_gateways():
        return [
            {
                "gatewayId": g.gateway_id,
                "mgmtAddress": g.mgmt_address,
                "macsecAddress": g.macsec_address.hex(),
                "status": g.status.value,
                "lastHeartbeat": g.last_heartbeat,
            }
            for g in reg.gateways.values()
        ]

    @app.get("/v1/channels")
    def list_channels():
        return [
            {
                "secID": c.sec_id,
                "keyVersion": c.key_version,
                "tokens": sorted(c.tokens),
                "members": sorted(c.gateways),
            }
            for c in reg.channels.values()
        ]

    @app.get("/v1/tokens")
    def list_tokens():
        return [
            {
                "serial": t.serial,
                "boundChannel": t.bound_channel,
                "status": t.status.value,
            }
            for t in reg.tokens.values()
        ]

    @app.get("/v1/events")
    def list_events(after: int = 0):
        return [e.to_json() for e in reg.events if e.event_id > after]

    @app.get("/v1/stream")
    def stream(after: int = 0):
        return StreamingResponse(
            event_stream(server, after), media_type="text/event-stream"
        )

    @app.post("/v1/channels/{sec_id}/remove/{gateway_id}")
    def remove_gateway(sec_id: str, gateway_id: str, _=Depends(require_operator)):
        return mutate(server.op_remove_gateway, gateway_id, sec_id)

    @app.post("/v1/gateways/{gateway_id}/decommission")
    def decommission_gateway(gateway_id: str, _=Depends(require_operator)):
        return mutate(server.op_decommission_gateway, gateway_id)

    @app.post("/v1/tokens/{serial}/decommission")
    def decommission_token(
        serial: int, teardown: bool = False, _=Depends(require_operator)
    ):
        return mutate(server.op_decommission_token, serial, teardown)

    @app.post("/v1/events/{event_id}/revert")
    def revert_event(event_id: int, _=Depends(require_operator)):
        return mutate(server.op_revert_event, event_id)

    return app
