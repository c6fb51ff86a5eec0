/** Shared test fixtures: a minimal scene and state frames shaped like the
 * service's wire format. */

import type { Pose4, Scene, StateFrame } from "../src/types.js";

const HEX = Array.from({ length: 6 }, (_, i) => {
  const a = (Math.PI / 3) * i;
  return [0.03 * Math.cos(a), 0.03 * Math.sin(a)];
});

export function makeScene(): Scene {
  return {
    objects: [
      {
        name: "hexagon",
        section: { kind: "polygon", vertices: HEX },
        height: 0.05,
        symmetry: 6,
        upright: true,
      },
      {
        name: "circle",
        section: { kind: "circle", radius: 0.025 },
        height: 0.05,
        symmetry: 0,
        upright: true,
      },
    ],
    holes: [
      {
        name: "hole_hexagon",
        section: { kind: "polygon", vertices: HEX },
        pose: { rotation: [1, 0, 0, 0], translation: [0.1, -0.14, 0.04] },
        depth: 0.02,
      },
      {
        name: "hole_circle",
        section: { kind: "circle", radius: 0.025 },
        pose: { rotation: [1, 0, 0, 0], translation: [0.1, 0.14, 0.04] },
        depth: 0.02,
      },
    ],
    board_section: {
      kind: "polygon",
      vertices: [
        [-0.15, -0.22],
        [0.15, -0.22],
        [0.15, 0.22],
        [-0.15, 0.22],
      ],
    },
    board_pose: { rotation: [1, 0, 0, 0], translation: [0.19, 0, 0.04] },
    fixture_pose: { rotation: [1, 0, 0, 0], translation: [-0.1, 0.2, 0] },
    table_height: 0,
    bounds_lo: [-0.35, -0.25, 0, -Math.PI],
    bounds_hi: [0.35, 0.25, 0.25, Math.PI],
  };
}

export function makeFrame(over: Partial<StateFrame> = {}): StateFrame {
  const est: Pose4 = [-0.12, 0.05, 0.025, 0.4];
  return {
    schema: "arch-state-1",
    mode: "idle",
    seed: 0,
    time: 0,
    step_count: 0,
    ee: [0, 0, 0.2, 0],
    gripper: "open",
    attached: null,
    ft: [0, 0, 0, 0, 0, 0],
    objects: {
      hexagon: { q: [-0.121, 0.051, 0.025, 0.41], upright: true, estimate: est },
      circle: {
        q: [-0.05, -0.1, 0.025, 0],
        upright: true,
        estimate: [-0.049, -0.101, 0.025, 0.01],
      },
    },
    holes: {
      hole_hexagon: [0.1, -0.14, 0.04, 0.2],
      hole_circle: [0.1, 0.14, 0.04, 0],
    },
    fixture: [-0.1, 0.2, 0, 0],
    target: "hexagon",
    recording: { label: "successful", steps: 0 },
    inserted: false,
    ...over,
  };
}
