import { describe, expect, it } from "vitest";

import { PULSE_MS, ViewModel, describeEvent } from "../src/viewmodel.js";
import { makeFrame } from "./fixtures.js";

describe("ViewModel", () => {
  it("tracks executing mode and label from frames", () => {
    const vm = new ViewModel();
    expect(vm.acceptFrame(makeFrame({ mode: "executing" }))).toBe(true);
    expect(vm.executing).toBe(true);
    vm.acceptFrame(
      makeFrame({ recording: { label: "recovery", steps: 2 } }),
    );
    expect(vm.executing).toBe(false);
    expect(vm.label).toBe("recovery");
  });

  it("malformed frames raise the banner and retain the previous frame", () => {
    const vm = new ViewModel();
    vm.acceptFrame(makeFrame({ time: 9 }));
    expect(vm.acceptFrame({ schema: "wrong" })).toBe(false);
    expect(vm.banner).toMatch(/malformed/);
    expect(vm.frame?.time).toBe(9);
    // a good frame clears the banner
    vm.acceptFrame(makeFrame({ time: 10 }));
    expect(vm.banner).toBeNull();
  });

  it("logs each event at most once by sequence number", () => {
    const vm = new ViewModel();
    const ev = { seq: 3, type: "reset" as const, seed: 1 };
    vm.acceptEvent({ type: "event", event: ev });
    vm.acceptEvent({ type: "event", event: ev });
    expect(vm.log).toHaveLength(1);
    expect(vm.log[0].text).toBe("reset (seed 1)");
  });

  it("pulse expires after PULSE_MS", () => {
    const vm = new ViewModel();
    vm.rejectInput(1000);
    expect(vm.pulsing(1000 + PULSE_MS - 1)).toBe(true);
    expect(vm.pulsing(1000 + PULSE_MS)).toBe(false);
  });
});

describe("describeEvent", () => {
  it("names primitives and outcomes", () => {
    expect(
      describeEvent({
        seq: 1,
        type: "primitive_finished",
        call: { id: 0, param: [0, 0, 0, 0] },
        status: "failure",
        reason: "slip",
        steps_used: 42,
        inserted: false,
      }),
    ).toBe("Grasp failed (slip), 42 steps");
    expect(
      describeEvent({
        seq: 2,
        type: "primitive_finished",
        call: { id: 3, param: [0, 0, 0, 0] },
        status: "success",
        steps_used: 10,
        inserted: true,
      }),
    ).toBe("Insert ok, 10 steps — inserted!");
    expect(
      describeEvent({ seq: 3, type: "trial_saved", trial: 4, path: "t.jsonl" }),
    ).toBe("trial 4 saved: t.jsonl");
  });
});
