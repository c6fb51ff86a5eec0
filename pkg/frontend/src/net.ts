/** HTTP client and drop-to-latest WebSocket stream. No simulation happens in
 * the browser: every pixel on screen comes from frames the service sent. */

import type { PrimitiveCall, Scene, StateFrame, StreamMessage } from "./types.js";

export interface ApiResult<T> {
  ok: boolean;
  status: number;
  body: T | { error: string };
}

async function asResult<T>(res: Response): Promise<ApiResult<T>> {
  let body: any = null;
  try {
    body = await res.json();
  } catch {
    body = { error: "non-JSON response" };
  }
  return { ok: res.ok, status: res.status, body };
}

export class ApiClient {
  constructor(
    readonly base: string,
    private readonly fetchFn: typeof fetch = fetch,
  ) {}

  private post<T>(path: string, body?: unknown): Promise<ApiResult<T>> {
    return this.fetchFn(this.base + path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body ?? {}),
    }).then((r) => asResult<T>(r));
  }

  scene(): Promise<Scene> {
    return this.fetchFn(this.base + "/scene").then((r) => r.json());
  }

  state(): Promise<StateFrame> {
    return this.fetchFn(this.base + "/state").then((r) => r.json());
  }

  primitive(call: PrimitiveCall) {
    return this.post<{ accepted: PrimitiveCall }>("/primitive", call);
  }

  reset(seed: number) {
    return this.post<{ seed: number }>("/reset", { seed });
  }

  setLabel(label: "successful" | "recovery") {
    return this.post<{ label: string }>("/trial/label", { label });
  }

  saveTrial() {
    return this.post<{ trial: number; path: string }>("/trial/save");
  }

  discardTrial() {
    return this.post<{ discarded: number }>("/trial/discard");
  }
}

/** Minimal WebSocket surface so tests can inject a fake transport (and node
 * tests can inject the `ws` package's constructor). */
export interface SocketLike {
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: ((ev: unknown) => void) | null;
  onerror: ((ev: unknown) => void) | null;
  close(): void;
}

export type SocketCtor = new (url: string) => SocketLike;

/** Subscribes to /stream and keeps only the newest state frame. Events are
 * queued (they are sparse and each one matters); frames are drop-to-latest
 * (only the newest snapshot is worth rendering). */
export class StateStream {
  latest: StateFrame | null = null;
  dropped = 0;
  malformed = 0;
  closed = false;
  onFrame: ((f: StateFrame) => void) | null = null;
  onEvent: ((e: StreamMessage & { type: "event" }) => void) | null = null;
  onMalformed: ((raw: unknown) => void) | null = null;
  private sock: SocketLike;
  private pendingRender = false;

  constructor(url: string, Ctor: SocketCtor) {
    this.sock = new Ctor(url);
    this.sock.onmessage = (ev) => this.handleRaw(ev.data);
    this.sock.onclose = () => {
      this.closed = true;
    };
    this.sock.onerror = () => {
      this.closed = true;
    };
  }

  /** Parse one wire message; exposed for tests with a fake socket. */
  handleRaw(data: unknown): void {
    let msg: StreamMessage;
    try {
      msg = JSON.parse(String(data));
    } catch {
      this.malformed += 1;
      this.onMalformed?.(data);
      return;
    }
    if (msg && msg.type === "state" && msg.frame) {
      if (this.pendingRender) this.dropped += 1;
      this.latest = msg.frame;
      this.pendingRender = true;
      this.onFrame?.(msg.frame);
    } else if (msg && msg.type === "event" && msg.event) {
      this.onEvent?.(msg as StreamMessage & { type: "event" });
    } else {
      this.malformed += 1;
      this.onMalformed?.(data);
    }
  }

  /** Returns the newest unrendered frame, or null when already consumed. */
  takeFrame(): StateFrame | null {
    if (!this.pendingRender) return null;
    this.pendingRender = false;
    return this.latest;
  }

  close(): void {
    this.sock.close();
    this.closed = true;
  }
}
