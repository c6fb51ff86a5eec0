/** Keyboard controller: 1-4 post a primitive with auto-filled parameters,
 * R resets, S saves, D discards, L toggles the trial label. Posts are
 * debounced to at-most-once per in-flight request, and anything pressed
 * while the service is executing is ignored with a visual pulse. */

import type { ApiClient } from "./net.js";
import { primitiveCall } from "./params.js";
import type { PrimitiveId, Scene } from "./types.js";
import { ViewModel } from "./viewmodel.js";

export class KeyController {
  /** True while a request is in flight; further keys are dropped. */
  busy = false;

  constructor(
    private readonly api: ApiClient,
    private readonly vm: ViewModel,
    private readonly scene: Scene,
    private readonly now: () => number = () => Date.now(),
  ) {}

  /** Handle one key; resolves when any resulting request settles. */
  async handle(key: string): Promise<void> {
    const k = key.toLowerCase();
    if (!"1234rsdl".includes(k) || k.length !== 1) return;
    if (this.busy) return; // debounce: at most one request in flight
    if (this.vm.executing && k !== "l") {
      this.vm.rejectInput(this.now()); // lockout with visible feedback
      return;
    }
    this.busy = true;
    try {
      await this.dispatch(k);
    } finally {
      this.busy = false;
    }
  }

  private async dispatch(k: string): Promise<void> {
    const frame = this.vm.frame;
    if ("1234".includes(k)) {
      if (!frame) return;
      const id = (Number(k) - 1) as PrimitiveId;
      const res = await this.api.primitive(primitiveCall(frame, this.scene, id));
      if (res.status === 409) this.vm.rejectInput(this.now());
      else this.vm.executing = true; // optimistic until the next frame lands
      return;
    }
    if (k === "r") {
      const res = await this.api.reset(frame ? frame.seed + 1 : 0);
      if (res.status === 409) this.vm.rejectInput(this.now());
      return;
    }
    if (k === "s") {
      const res = await this.api.saveTrial();
      if (!res.ok) this.vm.rejectInput(this.now());
      return;
    }
    if (k === "d") {
      await this.api.discardTrial();
      return;
    }
    // l: toggle label
    const next = this.vm.label === "successful" ? "recovery" : "successful";
    const res = await this.api.setLabel(next);
    if (res.ok) this.vm.label = next;
  }
}
