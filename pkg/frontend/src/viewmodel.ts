/** Pure fleet view model: built from GET payloads, advanced by stream events.
 *
 * The console computes no security state of its own — every field comes from
 * an API response or an event the server logged.  Key versions are not
 * derivable from events, so the model flags channels whose key may have
 * rotated (`needsRefresh`) and the caller refetches `/v1/channels`.
 */

import type { ChannelView, EventView, GatewayView, TokenView } from "./types";

export type ConnectionState = "connecting" | "live" | "stale";

export interface FleetViewModel {
  gateways: GatewayView[];
  channels: ChannelView[];
  tokens: TokenView[];
  feed: EventView[];
  lastEventId: number;
  connection: ConnectionState;
  /** channels whose keyVersion (or existence) must be refetched */
  needsRefresh: boolean;
}

export function initialModel(
  gateways: GatewayView[],
  channels: ChannelView[],
  tokens: TokenView[],
  events: EventView[],
): FleetViewModel {
  return {
    gateways,
    channels,
    tokens,
    feed: [...events],
    lastEventId: events.reduce((m, e) => Math.max(m, e.eventId), 0),
    connection: "connecting",
    needsRefresh: false,
  };
}

export function setConnection(
  model: FleetViewModel,
  connection: ConnectionState,
): FleetViewModel {
  return { ...model, connection };
}

/** Replace the channel list after a refetch (key rotation, teardown). */
export function refreshChannels(
  model: FleetViewModel,
  channels: ChannelView[],
): FleetViewModel {
  return { ...model, channels, needsRefresh: false };
}

function withMembers(
  channels: ChannelView[],
  secID: string,
  update: (members: string[]) => string[],
): ChannelView[] {
  return channels.map((c) =>
    c.secID === secID ? { ...c, members: update(c.members) } : c,
  );
}

function withGatewayStatus(
  gateways: GatewayView[],
  gatewayId: string,
  status: string,
): GatewayView[] {
  return gateways.map((g) =>
    g.gatewayId === gatewayId ? { ...g, status } : g,
  );
}

/** Fold one confirmed server event into the model.  Replay-safe: events at
 * or below the cursor are ignored, so a reconnect's backlog cannot
 * double-apply. */
export function applyEvent(model: FleetViewModel, ev: EventView): FleetViewModel {
  if (ev.eventId <= model.lastEventId) {
    return model;
  }
  const next: FleetViewModel = {
    ...model,
    feed: [...model.feed, ev],
    lastEventId: ev.eventId,
  };
  if (ev.outcome !== "ok") {
    return next; // rejections are feed-only; they change no state
  }
  const action = ev.effect ?? ev.action;
  switch (action) {
    case "join":
      if (ev.secID && ev.gatewayId) {
        const gid = ev.gatewayId;
        next.channels = withMembers(next.channels, ev.secID, (m) =>
          m.includes(gid) ? m : [...m, gid].sort(),
        );
      }
      break;
    case "leave":
      if (ev.secID && ev.gatewayId) {
        next.channels = withMembers(next.channels, ev.secID, (m) =>
          m.filter((g) => g !== ev.gatewayId),
        );
        next.needsRefresh = true; // leaving rotates the channel key
      }
      break;
    case "decommission-gw":
      if (ev.gatewayId) {
        next.gateways = withGatewayStatus(next.gateways, ev.gatewayId, "decommissioned");
        const gid = ev.gatewayId;
        next.channels = next.channels.map((c) => ({
          ...c,
          members: c.members.filter((g) => g !== gid),
        }));
        next.needsRefresh = true;
      }
      break;
    case "decommission-token": {
      const serial = serialOf(ev.actor) ?? serialFromSec(next.tokens, ev.secID);
      next.tokens = next.tokens.map((t) =>
        t.serial === serial || (serial === null && t.boundChannel === ev.secID)
          ? { ...t, status: "decommissioned", boundChannel: null }
          : t,
      );
      next.needsRefresh = true; // teardown may have deleted the channel
      break;
    }
    case "alarm":
      if (ev.gatewayId) {
        next.gateways = withGatewayStatus(next.gateways, ev.gatewayId, "offline");
      }
      break;
    case "online":
      if (ev.gatewayId) {
        next.gateways = withGatewayStatus(next.gateways, ev.gatewayId, "online");
      }
      break;
    default:
      break; // unknown actions stay feed-only
  }
  return next;
}

function serialOf(actor: string): number | null {
  const match = /^token:(\d+)$/.exec(actor);
  return match ? Number(match[1]) : null;
}

function serialFromSec(tokens: TokenView[], secID: string | null): number | null {
  const hit = tokens.find((t) => t.boundChannel === secID);
  return hit ? hit.serial : null;
}
