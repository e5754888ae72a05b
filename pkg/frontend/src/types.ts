/** View types mirroring the /v1 read endpoints, field for field. */

export interface GatewayView {
  gatewayId: string;
  mgmtAddress: string;
  macsecAddress: string;
  status: "provisioned" | "online" | "offline" | "decommissioned" | string;
  lastHeartbeat: number;
}

export interface ChannelView {
  secID: string;
  keyVersion: number;
  tokens: number[];
  members: string[];
}

export interface TokenView {
  serial: number;
  boundChannel: string | null;
  status: "active" | "decommissioned" | string;
}

export interface EventView {
  eventId: number;
  ts: number;
  actor: string;
  gatewayId: string | null;
  action: string;
  secID: string | null;
  outcome: string;
  reverts?: number;
  effect?: string;
}
