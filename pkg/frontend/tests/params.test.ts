import { describe, expect, it } from "vitest";

import { APPROACH_HOVER, PRE_GRASP_HEIGHT, autoParam, boardTop } from "../src/params.js";
import { makeFrame, makeScene } from "./fixtures.js";

const scene = makeScene();

describe("autoParam", () => {
  it("grasp hovers above the pose estimate", () => {
    const f = makeFrame();
    const est = f.objects.hexagon.estimate;
    expect(autoParam(f, scene, 0)).toEqual([
      est[0],
      est[1],
      est[2] + 0.05 + PRE_GRASP_HEIGHT,
      est[3],
    ]);
  });

  it("place hovers above the fixture", () => {
    const p = autoParam(makeFrame(), scene, 1);
    expect(p[0]).toBeCloseTo(-0.1, 12);
    expect(p[1]).toBeCloseTo(0.2, 12);
    expect(p[2]).toBeCloseTo(0.05 + PRE_GRASP_HEIGHT + APPROACH_HOVER, 12);
  });

  it("move compensates the grasp offset when attached", () => {
    const f = makeFrame({ attached: "hexagon", gripper: "closed" });
    const est = f.objects.hexagon.estimate;
    const hole = f.holes.hole_hexagon;
    const rel = [est[0] - f.ee[0], est[1] - f.ee[1]];
    const p = autoParam(f, scene, 2);
    expect(p[0]).toBeCloseTo(hole[0] - rel[0], 12);
    expect(p[1]).toBeCloseTo(hole[1] - rel[1], 12);
    expect(p[2]).toBeCloseTo(boardTop(scene) + APPROACH_HOVER + 0.05, 12);
    // hexagon has 6-fold symmetry: target the canonical hole yaw
    expect(p[3]).toBeCloseTo(hole[3] - (est[3] - f.ee[3]), 12);
  });

  it("move ignores the offset when nothing is attached", () => {
    const p = autoParam(makeFrame(), scene, 2);
    expect(p[0]).toBeCloseTo(0.1, 12);
    expect(p[1]).toBeCloseTo(-0.14, 12);
  });

  it("continuous-symmetry targets keep the estimated yaw", () => {
    const f = makeFrame({ target: "circle", attached: "circle" });
    const est = f.objects.circle.estimate;
    const p = autoParam(f, scene, 2);
    expect(p[3]).toBeCloseTo(est[3] - (est[3] - f.ee[3]), 12);
  });

  it("insert targets the hole pose verbatim", () => {
    expect(autoParam(makeFrame(), scene, 3)).toEqual([0.1, -0.14, 0.04, 0.2]);
  });

  it("rejects unknown targets", () => {
    const f = makeFrame({ target: "widget" });
    expect(() => autoParam(f, scene, 0)).toThrow(/unknown object/);
  });
});
