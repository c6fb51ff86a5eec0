/** UI state machine: latest frame, executing lockout, step log, label, the
 * rejected-keypress pulse, and the malformed-frame banner. Pure TypeScript so
 * the whole thing is unit-testable without a DOM. */

import type { LifecycleEvent, StateFrame, StreamMessage } from "./types.js";
import { isStateFrame, PRIMITIVES } from "./types.js";

export const PULSE_MS = 300;

export interface LogLine {
  seq: number;
  text: string;
}

export class ViewModel {
  frame: StateFrame | null = null;
  executing = false;
  label: "successful" | "recovery" = "successful";
  log: LogLine[] = [];
  banner: string | null = null;
  pulseUntil = 0; // epoch ms; > now means the rejected-input pulse is visible
  private lastSeq = 0;

  /** Accept a frame from the stream; malformed frames raise the banner and
   * keep the previous good frame on screen. */
  acceptFrame(raw: unknown): boolean {
    if (!isStateFrame(raw)) {
      this.banner = "malformed state frame from service";
      return false;
    }
    this.frame = raw;
    this.executing = raw.mode === "executing";
    this.label = raw.recording.label;
    this.banner = null;
    return true;
  }

  acceptEvent(msg: StreamMessage & { type: "event" }): void {
    const e = msg.event;
    if (e.seq <= this.lastSeq) return; // at-most-once per event
    this.lastSeq = e.seq;
    this.log.push({ seq: e.seq, text: describeEvent(e) });
    if (this.log.length > 200) this.log.shift();
  }

  /** A keypress arrived while a primitive is executing: ignore it, pulse. */
  rejectInput(now: number): void {
    this.pulseUntil = now + PULSE_MS;
  }

  pulsing(now: number): boolean {
    return now < this.pulseUntil;
  }
}

export function describeEvent(e: LifecycleEvent): string {
  switch (e.type) {
    case "primitive_started":
      return `${PRIMITIVES[e.call!.id]} started`;
    case "primitive_finished": {
      const name = PRIMITIVES[e.call!.id];
      const tail = e.status === "success" ? "ok" : `failed (${e.reason})`;
      const ins = e.inserted ? " — inserted!" : "";
      return `${name} ${tail}, ${e.steps_used} steps${ins}`;
    }
    case "reset":
      return `reset (seed ${e.seed})`;
    case "trial_saved":
      return `trial ${e.trial} saved: ${e.path}`;
    case "trial_discarded":
      return `discarded ${e.steps} steps`;
  }
}
