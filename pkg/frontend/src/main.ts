/** Browser bootstrap: one stream subscription, re-render on confirmed
 * events only (no optimistic updates), confirmation step on every mutation.
 */

import { ApiClient, ApiError } from "./api";
import { createSseParser } from "./sse";
import type { EventView } from "./types";
import {
  applyEvent,
  FleetViewModel,
  initialModel,
  refreshChannels,
  setConnection,
} from "./viewmodel";
import { renderFleet } from "./ui";

const RECONNECT_MS = 2000;

export class Console {
  private model: FleetViewModel | null = null;
  private errorText: string | null = null;
  private source: EventSource | null = null;

  constructor(
    private readonly api: ApiClient,
    private readonly root: HTMLElement,
  ) {}

  async start(): Promise<void> {
    const [gateways, channels, tokens, events] = await Promise.all([
      this.api.getGateways(),
      this.api.getChannels(),
      this.api.getTokens(),
      this.api.getEvents(),
    ]);
    this.model = initialModel(gateways, channels, tokens, events);
    this.subscribe();
    this.render();
  }

  private subscribe(): void {
    if (this.model === null) return;
    this.source?.close();
    // the cursor makes a reconnect replay anything missed while down
    const source = new EventSource(this.api.streamUrl(this.model.lastEventId));
    this.source = source;
    source.onopen = () => this.update((m) => setConnection(m, "live"));
    source.onerror = () => {
      this.update((m) => setConnection(m, "stale"));
      source.close();
      setTimeout(() => this.subscribe(), RECONNECT_MS);
    };
    source.onmessage = (msg) => {
      const ev = JSON.parse(msg.data) as EventView;
      this.update((m) => applyEvent(m, ev));
      void this.refreshIfNeeded();
    };
  }

  private async refreshIfNeeded(): Promise<void> {
    if (this.model?.needsRefresh) {
      const channels = await this.api.getChannels();
      this.update((m) => refreshChannels(m, channels));
    }
  }

  private update(fn: (m: FleetViewModel) => FleetViewModel): void {
    if (this.model === null) return;
    this.model = fn(this.model);
    this.render();
  }

  private render(): void {
    if (this.model === null) return;
    this.root.innerHTML = renderFleet(this.model, this.errorText);
    if (!this.api.hasCredential) {
      for (const el of this.root.querySelectorAll<HTMLButtonElement>(".needs-cred")) {
        el.disabled = true;
        el.title = "operator credential required";
      }
    }
    this.root.querySelectorAll<HTMLButtonElement>("button[data-action]").forEach(
      (btn) => btn.addEventListener("click", () => void this.onAction(btn)),
    );
  }

  private async onAction(btn: HTMLButtonElement): Promise<void> {
    const action = btn.dataset.action!;
    const id = btn.dataset.id!;
    const prompts: Record<string, string> = {
      "decommission-gateway": `Decommission gateway ${id}? This is permanent.`,
      "decommission-token": `Decommission token ${id}? This is permanent.`,
      "remove-member": `Remove ${id} from channel ${btn.dataset.sec}?`,
      revert: `Revert event #${id}?`,
    };
    if (!window.confirm(prompts[action] ?? `Run ${action}?`)) return;
    this.errorText = null;
    try {
      if (action === "decommission-gateway") {
        await this.api.decommissionGateway(id);
      } else if (action === "decommission-token") {
        const teardown = this.root.querySelector<HTMLInputElement>(
          `input[data-teardown="${id}"]`,
        )?.checked;
        await this.api.decommissionToken(Number(id), teardown ?? false);
      } else if (action === "remove-member") {
        await this.api.removeGateway(btn.dataset.sec!, id);
      } else if (action === "revert") {
        await this.api.revertEvent(Number(id));
      }
      // no optimistic update: the view changes when the event arrives
    } catch (err) {
      this.errorText =
        err instanceof ApiError ? `${err.code}: ${err.message}` : String(err);
      this.render();
    }
  }
}

declare global {
  interface Window {
    tokengateConsole?: Console;
  }
}

export function boot(): void {
  const params = new URLSearchParams(window.location.search);
  const api = new ApiClient(
    params.get("api") ?? "",
    params.get("operatorToken"),
  );
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app element");
  const console_ = new Console(api, root);
  window.tokengateConsole = console_;
  void console_.start();
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  boot();
}
