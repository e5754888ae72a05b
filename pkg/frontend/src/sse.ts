/** Incremental parser for the /v1/stream server-sent-event format.
 *
 * Handles chunks split at arbitrary byte boundaries, `id:`/`data:` field
 * lines, and comment keepalives.  Pure: no network here.
 */

export interface StreamMessage {
  id: number | null;
  data: string;
}

export interface SseParser {
  push(chunk: string): StreamMessage[];
}

export function createSseParser(): SseParser {
  let buffer = "";
  return {
    push(chunk: string): StreamMessage[] {
      buffer += chunk;
      const messages: StreamMessage[] = [];
      let boundary: number;
      // a blank line terminates one message
      while ((boundary = buffer.indexOf("\n\n")) >= 0) {
        const block = buffer.slice(0, boundary);
        buffer = buffer.slice(boundary + 2);
        let id: number | null = null;
        const data: string[] = [];
        for (const line of block.split("\n")) {
          if (line.startsWith(":")) {
            continue; // comment / keepalive
          } else if (line.startsWith("id:")) {
            id = Number(line.slice(3).trim());
          } else if (line.startsWith("data:")) {
            data.push(line.slice(5).trimStart());
          }
        }
        if (data.length > 0) {
          messages.push({ id, data: data.join("\n") });
        }
      }
      return messages;
    },
  };
}
