/** Canvas renderer: orthographic top view (x-y) and side view (x-z) of the
 * workspace, drawn purely from the latest service frame. Takes any object
 * implementing the small 2D-context surface below, so tests can pass a mock
 * and assert on the recorded draw calls. */

import { boardTop, objectSpec } from "./params.js";
import type { Scene, Section, StateFrame } from "./types.js";

export interface Ctx2D {
  canvas: { width: number; height: number };
  fillStyle: string | CanvasGradient | CanvasPattern;
  strokeStyle: string | CanvasGradient | CanvasPattern;
  lineWidth: number;
  font: string;
  setLineDash(segments: number[]): void;
  fillRect(x: number, y: number, w: number, h: number): void;
  strokeRect(x: number, y: number, w: number, h: number): void;
  beginPath(): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  arc(x: number, y: number, r: number, a0: number, a1: number): void;
  closePath(): void;
  fill(): void;
  stroke(): void;
  fillText(text: string, x: number, y: number): void;
}

const COLORS: Record<string, string> = {
  hexagon: "#4e8ef7",
  circle: "#f7a14e",
  oval: "#5fbf6e",
  rectangle: "#c75fd4",
};

interface Mapper {
  x(wx: number): number;
  y(wy: number): number;
  s(len: number): number;
}

function topMapper(ctx: Ctx2D, scene: Scene, h: number): Mapper {
  const [lx, ly] = scene.bounds_lo;
  const [hx, hy] = scene.bounds_hi;
  const w = ctx.canvas.width;
  const scale = Math.min(w / (hx - lx), h / (hy - ly)) * 0.92;
  const cx = w / 2, cy = h / 2;
  return {
    x: (wx) => cx + (wx - (lx + hx) / 2) * scale,
    y: (wy) => cy - (wy - (ly + hy) / 2) * scale,
    s: (len) => len * scale,
  };
}

function sideMapper(ctx: Ctx2D, scene: Scene, y0: number, h: number): Mapper {
  const [lx] = scene.bounds_lo;
  const [hx, , hz] = scene.bounds_hi;
  const w = ctx.canvas.width;
  const scale = Math.min(w / (hx - lx), h / hz) * 0.92;
  return {
    x: (wx) => w / 2 + (wx - (lx + hx) / 2) * scale,
    y: (wz) => y0 + h - 8 - wz * scale,
    s: (len) => len * scale,
  };
}

function tracePolygon(
  ctx: Ctx2D, m: Mapper, section: Section,
  px: number, py: number, yaw: number,
): void {
  ctx.beginPath();
  if (section.kind === "circle") {
    ctx.arc(m.x(px), m.y(py), m.s(section.radius ?? 0.02), 0, 2 * Math.PI);
  } else {
    const c = Math.cos(yaw), s = Math.sin(yaw);
    (section.vertices ?? []).forEach(([vx, vy], i) => {
      const wx = px + c * vx - s * vy;
      const wy = py + s * vx + c * vy;
      if (i === 0) ctx.moveTo(m.x(wx), m.y(wy));
      else ctx.lineTo(m.x(wx), m.y(wy));
    });
    ctx.closePath();
  }
}

/** Draw the full scene; safe to call with any valid frame at any rate. */
export function render(ctx: Ctx2D, scene: Scene, frame: StateFrame,
                       pulsing = false): void {
  const W = ctx.canvas.width, H = ctx.canvas.height;
  const topH = Math.floor(H * 0.62);
  ctx.fillStyle = "#14161c";
  ctx.fillRect(0, 0, W, H);

  const top = topMapper(ctx, scene, topH);

  // board
  const [bx, by] = scene.board_pose.translation;
  ctx.strokeStyle = "#3a3f4c";
  ctx.lineWidth = 1;
  ctx.setLineDash([]);
  tracePolygon(ctx, top, scene.board_section, bx, by, 0);
  ctx.fillStyle = "#1d2129";
  ctx.fill();
  ctx.stroke();

  // holes
  for (const hole of scene.holes) {
    const q = frame.holes[hole.name];
    if (!q) continue;
    ctx.strokeStyle = "#6d7380";
    tracePolygon(ctx, top, hole.section, q[0], q[1], q[3]);
    ctx.stroke();
  }

  // fixture
  const fx = frame.fixture;
  ctx.strokeStyle = "#8a6d3b";
  ctx.strokeRect(top.x(fx[0]) - top.s(0.03), top.y(fx[1]) - top.s(0.03),
                 top.s(0.06), top.s(0.06));

  // objects: true pose filled, estimate as a dashed outline
  for (const [name, st] of Object.entries(frame.objects)) {
    const spec = objectSpec(scene, name);
    const color = COLORS[name] ?? "#cccccc";
    ctx.setLineDash([]);
    tracePolygon(ctx, top, spec.section, st.q[0], st.q[1], st.q[3]);
    ctx.fillStyle = st.upright ? color : "#884444";
    ctx.fill();
    if (frame.attached === name) {
      ctx.strokeStyle = "#ffffff";
      ctx.lineWidth = 2;
      ctx.stroke();
      ctx.lineWidth = 1;
    }
    ctx.setLineDash([4, 3]);
    ctx.strokeStyle = color;
    tracePolygon(ctx, top, spec.section, st.estimate[0], st.estimate[1],
                 st.estimate[3]);
    ctx.stroke();
    ctx.setLineDash([]);
  }

  // end effector
  const ee = frame.ee;
  ctx.strokeStyle = frame.gripper === "closed" ? "#ffd24e" : "#9aa3b2";
  ctx.beginPath();
  ctx.arc(top.x(ee[0]), top.y(ee[1]), 6, 0, 2 * Math.PI);
  ctx.stroke();

  // side view
  const side = sideMapper(ctx, scene, topH, H - topH);
  ctx.strokeStyle = "#3a3f4c";
  ctx.beginPath();
  ctx.moveTo(0, side.y(scene.table_height));
  ctx.lineTo(W, side.y(scene.table_height));
  ctx.stroke();
  ctx.beginPath();
  ctx.moveTo(side.x(bx - 0.15), side.y(boardTop(scene)));
  ctx.lineTo(side.x(bx + 0.15), side.y(boardTop(scene)));
  ctx.stroke();
  for (const [name, st] of Object.entries(frame.objects)) {
    const spec = objectSpec(scene, name);
    const w = side.s(0.03), h = side.s(spec.height);
    ctx.fillStyle = COLORS[name] ?? "#cccccc";
    ctx.fillRect(side.x(st.q[0]) - w / 2, side.y(st.q[2]) - h, w, h);
  }
  ctx.strokeStyle = frame.gripper === "closed" ? "#ffd24e" : "#9aa3b2";
  ctx.beginPath();
  ctx.moveTo(side.x(ee[0]), side.y(ee[2]) - 10);
  ctx.lineTo(side.x(ee[0]), side.y(ee[2]));
  ctx.stroke();

  // status line
  ctx.fillStyle = pulsing ? "#ff5f5f" : "#c8cdd8";
  ctx.font = "12px monospace";
  const rec = frame.recording;
  ctx.fillText(
    `mode=${frame.mode}  target=${frame.target}  label=${rec.label}  ` +
      `steps=${rec.steps}  inserted=${frame.inserted}`,
    8, H - 8,
  );
}
