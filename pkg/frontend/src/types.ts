/** Wire types mirroring the service's published JSON schemas. */

export type Pose4 = [number, number, number, number]; // x, y, z, yaw

export interface ObjectState {
  q: Pose4;
  upright: boolean;
  estimate: Pose4;
}

export interface StateFrame {
  schema: string;
  mode: "idle" | "awaiting_selection" | "executing";
  seed: number;
  time: number;
  step_count: number;
  ee: Pose4;
  gripper: "open" | "closed";
  attached: string | null;
  ft: number[];
  objects: Record<string, ObjectState>;
  holes: Record<string, Pose4>;
  fixture: Pose4;
  target: string;
  recording: { label: "successful" | "recovery"; steps: number };
  inserted: boolean;
}

export interface Section {
  kind: "polygon" | "circle";
  vertices?: number[][];
  radius?: number;
}

export interface SceneObject {
  name: string;
  section: Section;
  height: number;
  symmetry: number;
  upright: boolean;
}

export interface SceneHole {
  name: string;
  section: Section;
  pose: { rotation: number[]; translation: number[] };
  depth: number;
}

export interface Scene {
  objects: SceneObject[];
  holes: SceneHole[];
  board_section: Section;
  board_pose: { rotation: number[]; translation: number[] };
  fixture_pose: { rotation: number[]; translation: number[] };
  table_height: number;
  bounds_lo: number[];
  bounds_hi: number[];
}

export const PRIMITIVES = ["Grasp", "Place", "Move", "Insert"] as const;
export type PrimitiveId = 0 | 1 | 2 | 3;

export interface PrimitiveCall {
  id: PrimitiveId;
  param: [number, number, number, number];
}

export interface LifecycleEvent {
  seq: number;
  type:
    | "primitive_started"
    | "primitive_finished"
    | "reset"
    | "trial_saved"
    | "trial_discarded";
  call?: PrimitiveCall;
  status?: "success" | "failure";
  reason?: string | null;
  steps_used?: number;
  inserted?: boolean;
  trial?: number;
  seed?: number;
  path?: string;
  steps?: number;
}

export type StreamMessage =
  | { type: "state"; frame: StateFrame }
  | { type: "event"; event: LifecycleEvent };

/** Minimal structural check; a failed frame must never crash the renderer. */
export function isStateFrame(x: unknown): x is StateFrame {
  const f = x as StateFrame;
  return (
    !!f &&
    f.schema === "arch-state-1" &&
    typeof f.mode === "string" &&
    Array.isArray(f.ee) &&
    f.ee.length === 4 &&
    typeof f.objects === "object" &&
    typeof f.holes === "object"
  );
}
