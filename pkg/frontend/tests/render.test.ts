import { describe, expect, it } from "vitest";

import { render, type Ctx2D } from "../src/render.js";
import { makeFrame, makeScene } from "./fixtures.js";

/** Records every draw call; enough surface for the renderer. */
function mockCtx(): Ctx2D & { ops: string[]; texts: string[] } {
  const ops: string[] = [];
  const texts: string[] = [];
  const rec = (name: string) => (..._args: unknown[]) => void ops.push(name);
  return {
    ops,
    texts,
    canvas: { width: 720, height: 560 },
    fillStyle: "",
    strokeStyle: "",
    lineWidth: 1,
    font: "",
    setLineDash: rec("setLineDash"),
    fillRect: rec("fillRect"),
    strokeRect: rec("strokeRect"),
    beginPath: rec("beginPath"),
    moveTo: rec("moveTo"),
    lineTo: rec("lineTo"),
    arc: rec("arc"),
    closePath: rec("closePath"),
    fill: rec("fill"),
    stroke: rec("stroke"),
    fillText(text: string) {
      ops.push("fillText");
      texts.push(text);
    },
  };
}

describe("render", () => {
  it("draws the board, holes, objects, and status line", () => {
    const ctx = mockCtx();
    render(ctx, makeScene(), makeFrame());
    expect(ctx.ops[0]).toBe("fillRect"); // background clear first
    expect(ctx.ops.filter((o) => o === "fill").length).toBeGreaterThanOrEqual(3);
    expect(ctx.ops).toContain("arc"); // circle object + end effector
    expect(ctx.texts[0]).toContain("mode=idle");
    expect(ctx.texts[0]).toContain("target=hexagon");
  });

  it("renders any valid frame variant without throwing", () => {
    const ctx = mockCtx();
    const frame = makeFrame({
      mode: "executing",
      attached: "hexagon",
      gripper: "closed",
      inserted: true,
    });
    frame.objects.hexagon.upright = false;
    expect(() => render(ctx, makeScene(), frame, true)).not.toThrow();
    expect(ctx.texts[0]).toContain("inserted=true");
  });
});
