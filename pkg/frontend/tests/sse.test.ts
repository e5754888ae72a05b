import { describe, expect, it } from "vitest";
import { readFileSync } from "node:fs";
import { join } from "node:path";

import { createSseParser } from "../src/sse";

const streamText = readFileSync(join(__dirname, "fixtures", "stream.txt"), "utf8");

describe("SSE parser", () => {
  it("parses the recorded server stream", () => {
    const parser = createSseParser();
    const messages = parser.push(streamText);
    expect(messages.length).toBe(2);
    expect(messages[0]!.id).toBe(1);
    const doc = JSON.parse(messages[0]!.data);
    expect(doc.action).toBe("join");
    expect(doc.actor).toBe("token:42");
  });

  it("handles chunks split at arbitrary boundaries", () => {
    const parser = createSseParser();
    const collected = [];
    for (let i = 0; i < streamText.length; i += 7) {
      collected.push(...parser.push(streamText.slice(i, i + 7)));
    }
    expect(collected.length).toBe(2);
    expect(collected.map((m) => m.id)).toEqual([1, 2]);
  });

  it("ignores keepalive comments", () => {
    const parser = createSseParser();
    expect(parser.push(": keepalive\n\n")).toEqual([]);
    expect(parser.push(": keepalive\n\nid: 5\ndata: {}\n\n")).toEqual([
      { id: 5, data: "{}" },
    ]);
  });

  it("holds incomplete messages until terminated", () => {
    const parser = createSseParser();
    expect(parser.push("id: 3\ndata: {\"a\"")).toEqual([]);
    expect(parser.push(": 1}\n\n")).toEqual([{ id: 3, data: '{"a": 1}' }]);
  });
});
