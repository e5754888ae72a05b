"""Offline reporting: turn an event log into a CSV table and figures.

Reads the append-only JSON-lines event log and writes, into an output
directory: ``events.csv`` (one row per event), ``timeline.png`` (events
over virtual time by action), and ``membership.png`` (member count per
channel over time, recomputed by replaying the log).
"""

from __future__ import annotations

import csv
import json
import os
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

CSV_FIELDS = [
    "eventId", "ts", "actor", "gatewayId", "action", "secID",
    "outcome", "reverts", "effect",
]


def load_events(path: str) -> list[dict]:
    events = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                events.append(json.loads(line))
    return events


def write_csv(events: list[dict], path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        writer.writeheader()
        for ev in events:
            writer.writerow({k: ev.get(k, "") for k in CSV_FIELDS})


def membership_series(events: list[dict]) -> dict[str, list[tuple[int, int]]]:
    """Per-channel (time, member count) steps replayed from the log."""
    members: dict[str, set] = defaultdict(set)
    series: dict[str, list[tuple[int, int]]] = defaultdict(list)
    for ev in events:
        if ev.get("outcome") != "ok":
            continue
        action = ev.get("effect") or ev["action"]
        sec_id = ev.get("secID")
        if action == "join" and sec_id:
            members[sec_id].add(ev["gatewayId"])
        elif action == "leave" and sec_id:
            members[sec_id].discard(ev["gatewayId"])
        elif action == "decommission-gw":
            for group in members.values():
                group.discard(ev["gatewayId"])
        else:
            continue
        for sid, group in members.items():
            series[sid].append((ev["ts"], len(group)))
    return dict(series)


def plot_timeline(events: list[dict], path: str) -> None:
    actions = sorted({ev["action"] for ev in events})
    fig, ax = plt.subplots(figsize=(8, 0.6 * max(4, len(actions))))
    for i, action in enumerate(actions):
        ts = [ev["ts"] for ev in events if ev["action"] == action]
        ok = [ev["outcome"] == "ok" for ev in events if ev["action"] == action]
        colors = ["tab:green" if o else "tab:red" for o in ok]
        ax.scatter(ts, [i] * len(ts), c=colors, s=30)
    ax.set_yticks(range(len(actions)), actions)
    ax.set_xlabel("virtual time (ticks)")
    ax.set_title("configuration events (green = accepted, red = rejected)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_membership(events: list[dict], path: str) -> None:
    series = membership_series(events)
    fig, ax = plt.subplots(figsize=(8, 4))
    for sec_id, points in sorted(series.items()):
        ts = [0] + [p[0] for p in points]
        counts = [0] + [p[1] for p in points]
        ax.step(ts, counts, where="post", label=sec_id)
    ax.set_xlabel("virtual time (ticks)")
    ax.set_ylabel("member gateways")
    ax.set_title("secure-channel membership over time")
    if series:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def generate_report(events_path: str, out_dir: str) -> list[str]:
    """Write CSV + figures; returns the list of files produced."""
    os.makedirs(out_dir, exist_ok=True)
    events = load_events(events_path)
    outputs = []
    csv_path = os.path.join(out_dir, "events.csv")
    write_csv(events, csv_path)
    outputs.append(csv_path)
    timeline = os.path.join(out_dir, "timeline.png")
    plot_timeline(events, timeline)
    outputs.append(timeline)
    membership = os.path.join(out_dir, "membership.png")
    plot_membership(events, membership)
    outputs.append(membership)
    return outputs
