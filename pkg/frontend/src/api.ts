/** Thin client for the /v1 HTTP API.  Reads need no credential; mutations
 * send the operator bearer token and surface the server's error codes
 * verbatim so the UI can render them inline. */

import type { ChannelView, EventView, GatewayView, TokenView } from "./types";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private operatorToken: string | null = null,
    private readonly fetchFn: FetchLike = (...args) => fetch(...args),
  ) {}

  setOperatorToken(token: string | null): void {
    this.operatorToken = token;
  }

  get hasCredential(): boolean {
    return this.operatorToken !== null && this.operatorToken !== "";
  }

  private async get<T>(path: string): Promise<T> {
    const resp = await this.fetchFn(`${this.baseUrl}${path}`);
    if (!resp.ok) {
      throw new ApiError(resp.status, "HTTP_ERROR", `GET ${path}: ${resp.status}`);
    }
    return (await resp.json()) as T;
  }

  private async post(path: string): Promise<void> {
    const headers: Record<string, string> = {};
    if (this.operatorToken) {
      headers["Authorization"] = `Bearer ${this.operatorToken}`;
    }
    const resp = await this.fetchFn(`${this.baseUrl}${path}`, {
      method: "POST",
      headers,
    });
    if (resp.ok) {
      return;
    }
    if (resp.status === 401) {
      throw new ApiError(401, "UNAUTHORIZED", "operator credential required");
    }
    let code = "HTTP_ERROR";
    let message = `POST ${path}: ${resp.status}`;
    try {
      const body = (await resp.json()) as {
        detail?: { code?: string; message?: string };
      };
      if (body.detail?.code) {
        code = body.detail.code;
        message = body.detail.message ?? message;
      }
    } catch {
      // non-JSON error body: keep the generic message
    }
    throw new ApiError(resp.status, code, message);
  }

  getGateways(): Promise<GatewayView[]> {
    return this.get("/v1/gateways");
  }

  getChannels(): Promise<ChannelView[]> {
    return this.get("/v1/channels");
  }

  getTokens(): Promise<TokenView[]> {
    return this.get("/v1/tokens");
  }

  getEvents(after = 0): Promise<EventView[]> {
    return this.get(`/v1/events?after=${after}`);
  }

  streamUrl(after: number): string {
    return `${this.baseUrl}/v1/stream?after=${after}`;
  }

  removeGateway(secID: string, gatewayId: string): Promise<void> {
    return this.post(
      `/v1/channels/${encodeURIComponent(secID)}/remove/${encodeURIComponent(gatewayId)}`,
    );
  }

  decommissionGateway(gatewayId: string): Promise<void> {
    return this.post(`/v1/gateways/${encodeURIComponent(gatewayId)}/decommission`);
  }

  decommissionToken(serial: number, teardown: boolean): Promise<void> {
    return this.post(`/v1/tokens/${serial}/decommission?teardown=${teardown}`);
  }

  revertEvent(eventId: number): Promise<void> {
    return this.post(`/v1/events/${eventId}/revert`);
  }
}
