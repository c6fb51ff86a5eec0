/** Auto-filled primitive parameters derived from the latest pose estimates,
 * mirroring the service-side pass-through convention. The operator picks a
 * primitive; the parameter comes from perception, never hand-typed. */

import type { Pose4, PrimitiveCall, PrimitiveId, Scene, StateFrame } from "./types.js";

export const PRE_GRASP_HEIGHT = 0.05;
export const APPROACH_HOVER = 0.01;

export function objectSpec(scene: Scene, name: string) {
  const spec = scene.objects.find((o) => o.name === name);
  if (!spec) throw new Error(`unknown object ${name}`);
  return spec;
}

export function boardTop(scene: Scene): number {
  return scene.board_pose.translation[2];
}

/** Parameter for primitive `id` against the frame's target object. */
export function autoParam(
  frame: StateFrame,
  scene: Scene,
  id: PrimitiveId,
): [number, number, number, number] {
  const target = frame.target;
  const spec = objectSpec(scene, target);
  const est = frame.objects[target].estimate;
  const hole = frame.holes[`hole_${target}`];
  if (!hole) throw new Error(`no hole for ${target}`);

  if (id === 0) {
    // Grasp: hover above the estimated object pose
    return [est[0], est[1], est[2] + spec.height + PRE_GRASP_HEIGHT, est[3]];
  }
  if (id === 1) {
    // Place: hover above the reorientation fixture
    const fx = frame.fixture;
    return [
      fx[0],
      fx[1],
      fx[2] + spec.height + PRE_GRASP_HEIGHT + APPROACH_HOVER,
      fx[3],
    ];
  }
  if (id === 2) {
    // Move: center the attached object over the hole, compensating the
    // grasp offset; symmetric objects target the canonical hole yaw
    const rel: Pose4 = frame.attached
      ? [est[0] - frame.ee[0], est[1] - frame.ee[1], est[2] - frame.ee[2], est[3] - frame.ee[3]]
      : [0, 0, 0, 0];
    const branch = spec.symmetry > 0 ? hole[3] : est[3];
    return [
      hole[0] - rel[0],
      hole[1] - rel[1],
      boardTop(scene) + APPROACH_HOVER + spec.height,
      branch - rel[3],
    ];
  }
  // Insert: the hole pose itself
  return [hole[0], hole[1], hole[2], hole[3]];
}

export function primitiveCall(
  frame: StateFrame,
  scene: Scene,
  id: PrimitiveId,
): PrimitiveCall {
  return { id, param: autoParam(frame, scene, id) };
}
