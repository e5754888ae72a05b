/** HTML rendering for the fleet dashboard.  Pure string builders so the
 * render path is testable without a DOM; `main.ts` owns all wiring. */

import type { FleetViewModel } from "./viewmodel";
import type { EventView } from "./types";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

function led(status: string, member: boolean): string {
  if (status === "offline" || status === "decommissioned") return "🔴";
  return member ? "🟢" : "⚪";
}

export function renderConnectionBanner(model: FleetViewModel): string {
  if (model.connection === "live") {
    return `<div class="banner live">live</div>`;
  }
  if (model.connection === "stale") {
    return `<div class="banner stale">connection lost — showing last known state, reconnecting…</div>`;
  }
  return `<div class="banner connecting">connecting…</div>`;
}

export function renderGateways(model: FleetViewModel): string {
  const memberOf = new Map<string, string>();
  for (const c of model.channels) {
    for (const g of c.members) memberOf.set(g, c.secID);
  }
  const rows = model.gateways
    .map((g) => {
      const sec = memberOf.get(g.gatewayId);
      const mode = sec ? `member of ${escapeHtml(sec)}` : "pass-through";
      return (
        `<tr data-gateway="${escapeHtml(g.gatewayId)}">` +
        `<td>${led(g.status, sec !== undefined)} ${escapeHtml(g.gatewayId)}</td>` +
        `<td>${escapeHtml(g.status)}</td><td>${mode}</td>` +
        `<td>${escapeHtml(g.mgmtAddress)}</td><td>${g.lastHeartbeat}</td>` +
        `<td><button class="needs-cred" data-action="decommission-gateway" data-id="${escapeHtml(g.gatewayId)}">decommission</button></td>` +
        `</tr>`
      );
    })
    .join("");
  return `<table class="gateways"><thead><tr><th>gateway</th><th>status</th><th>mode</th><th>mgmt</th><th>heartbeat</th><th></th></tr></thead><tbody>${rows}</tbody></table>`;
}

export function renderChannels(model: FleetViewModel): string {
  return model.channels
    .map((c) => {
      const chips = c.members
        .map(
          (g) =>
            `<span class="chip" data-member="${escapeHtml(g)}">${escapeHtml(g)}` +
            `<button class="needs-cred" data-action="remove-member" data-sec="${escapeHtml(c.secID)}" data-id="${escapeHtml(g)}">×</button></span>`,
        )
        .join("");
      return (
        `<div class="card channel" data-sec="${escapeHtml(c.secID)}">` +
        `<h3>${escapeHtml(c.secID)} <small>keyVersion ${c.keyVersion}</small></h3>` +
        `<div class="members">${chips || "<em>no members</em>"}</div>` +
        `<div class="bound-tokens">tokens: ${c.tokens.join(", ") || "—"}</div>` +
        `</div>`
      );
    })
    .join("");
}

export function renderTokens(model: FleetViewModel): string {
  const rows = model.tokens
    .map(
      (t) =>
        `<tr data-serial="${t.serial}"><td>${t.serial}</td>` +
        `<td>${escapeHtml(t.boundChannel ?? "—")}</td><td>${escapeHtml(t.status)}</td>` +
        `<td><button class="needs-cred" data-action="decommission-token" data-id="${t.serial}">decommission</button>` +
        `<label><input type="checkbox" data-teardown="${t.serial}"> tear down channel</label></td></tr>`,
    )
    .join("");
  return `<table class="tokens"><thead><tr><th>serial</th><th>channel</th><th>status</th><th></th></tr></thead><tbody>${rows}</tbody></table>`;
}

function describe(ev: EventView): string {
  const who = escapeHtml(ev.actor);
  const where = ev.gatewayId ? ` ${escapeHtml(ev.gatewayId)}` : "";
  const sec = ev.secID ? ` [${escapeHtml(ev.secID)}]` : "";
  const revert = ev.reverts !== undefined ? ` (reverts #${ev.reverts})` : "";
  return `${who}: ${escapeHtml(ev.action)}${where}${sec}${revert}`;
}

export function renderFeed(model: FleetViewModel): string {
  const items = [...model.feed]
    .reverse()
    .map((ev) => {
      const cls = ev.outcome === "ok" ? "ok" : "rejected";
      const revertable =
        ev.outcome === "ok" && ["join", "leave", "revert"].includes(ev.action)
          ? `<button class="needs-cred" data-action="revert" data-id="${ev.eventId}">revert</button>`
          : "";
      return (
        `<li class="${cls}" data-event="${ev.eventId}">` +
        `<span class="ts">t=${ev.ts}</span> #${ev.eventId} ${describe(ev)}` +
        `<span class="outcome">${escapeHtml(ev.outcome)}</span>${revertable}</li>`
      );
    })
    .join("");
  return `<ol class="feed">${items}</ol>`;
}

export function renderFleet(model: FleetViewModel, errorText: string | null = null): string {
  const error = errorText
    ? `<div class="banner error">${escapeHtml(errorText)}</div>`
    : "";
  return (
    renderConnectionBanner(model) +
    error +
    `<section><h2>Channels</h2>${renderChannels(model)}</section>` +
    `<section><h2>Gateways</h2>${renderGateways(model)}</section>` +
    `<section><h2>Tokens</h2>${renderTokens(model)}</section>` +
    `<section><h2>Events</h2>${renderFeed(model)}</section>`
  );
}
