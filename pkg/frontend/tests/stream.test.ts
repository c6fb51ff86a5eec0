import { describe, expect, it } from "vitest";

import { StateStream, type SocketLike } from "../src/net.js";
import { makeFrame } from "./fixtures.js";

class FakeSocket implements SocketLike {
  static last: FakeSocket;
  onmessage: ((ev: { data: unknown }) => void) | null = null;
  onclose: ((ev: unknown) => void) | null = null;
  onerror: ((ev: unknown) => void) | null = null;
  closed = false;
  constructor(readonly url: string) {
    FakeSocket.last = this;
  }
  close(): void {
    this.closed = true;
  }
  push(msg: unknown): void {
    this.onmessage?.({ data: typeof msg === "string" ? msg : JSON.stringify(msg) });
  }
}

function open(): { stream: StateStream; sock: FakeSocket } {
  const stream = new StateStream("ws://test/stream", FakeSocket);
  return { stream, sock: FakeSocket.last };
}

describe("StateStream", () => {
  it("keeps only the newest frame and counts drops", () => {
    const { stream, sock } = open();
    for (const t of [1, 2, 3]) {
      sock.push({ type: "state", frame: makeFrame({ time: t }) });
    }
    const f = stream.takeFrame();
    expect(f?.time).toBe(3);
    expect(stream.dropped).toBe(2);
    // already consumed: nothing new to render
    expect(stream.takeFrame()).toBeNull();
  });

  it("delivers events without dropping", () => {
    const { stream, sock } = open();
    const seen: number[] = [];
    stream.onEvent = (m) => seen.push(m.event.seq);
    sock.push({ type: "event", event: { seq: 1, type: "reset", seed: 0 } });
    sock.push({ type: "event", event: { seq: 2, type: "reset", seed: 1 } });
    expect(seen).toEqual([1, 2]);
  });

  it("counts malformed messages and keeps the last good frame", () => {
    const { stream, sock } = open();
    const raws: unknown[] = [];
    stream.onMalformed = (r) => raws.push(r);
    sock.push({ type: "state", frame: makeFrame({ time: 7 }) });
    sock.push("{not json");
    sock.push({ type: "banana" });
    expect(stream.malformed).toBe(2);
    expect(raws).toHaveLength(2);
    expect(stream.latest?.time).toBe(7);
  });

  it("close shuts the transport", () => {
    const { stream, sock } = open();
    stream.close();
    expect(sock.closed).toBe(true);
    expect(stream.closed).toBe(true);
  });
});
